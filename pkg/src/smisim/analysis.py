"""Estimators for frequency-noise traces: PSD with 1/f fit, Allan deviation,
and a Gaussian-mixture decomposition of the histogram.

All estimators are deterministic functions of their input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, special, stats

from smisim.trace import FrequencyTrace


class TooShort(ValueError):
    pass


class BandEmpty(ValueError):
    pass


class TauOutOfRange(ValueError):
    pass


class Degenerate(ValueError):
    pass


# -- power spectral density --------------------------------------------------


@dataclass
class PsdEstimate:
    """One-sided PSD, optionally averaged into log-spaced bins.

    ``dof`` holds the chi-square degrees of freedom of each value (``None``
    for exact, noise-free spectra); ``raw_*`` keep the unsmoothed estimate.
    """

    freqs: np.ndarray
    values: np.ndarray
    dof: np.ndarray | None = None
    counts: np.ndarray | None = None
    df: float = 0.0
    raw_freqs: np.ndarray | None = field(default=None, repr=False)
    raw_values: np.ndarray | None = field(default=None, repr=False)
    method: str = "exact"
    bins_per_decade: int | None = None
    a_p: float | None = None
    a_p_err: float | None = None

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("freqs must be strictly increasing")
        if np.any(self.values < 0):
            raise ValueError("PSD values must be >= 0")

    def integral(self) -> float:
        """Total power, i.e. the variance of the mean-subtracted trace."""
        if self.raw_values is not None:
            return float(np.sum(self.raw_values) * self.df)
        return float(np.trapezoid(self.values, self.freqs))


def _log_bin(freqs, values, dof, bins_per_decade):
    lo, hi = math.log10(freqs[0]), math.log10(freqs[-1])
    n_bins = max(1, int(math.ceil((hi - lo) * bins_per_decade)))
    edges = np.linspace(lo, hi + 1e-12, n_bins + 1)
    idx = np.clip(np.digitize(np.log10(freqs), edges) - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    keep = counts > 0
    sums = np.bincount(idx, weights=values, minlength=n_bins)
    logf = np.bincount(idx, weights=np.log(freqs), minlength=n_bins)
    dsum = np.bincount(idx, weights=dof, minlength=n_bins)
    c = counts[keep]
    return np.exp(logf[keep] / c), sums[keep] / c, dsum[keep], c


def psd(
    trace: FrequencyTrace,
    bins_per_decade: int | None = 10,
    method: str = "periodogram",
    nperseg: int | None = None,
) -> PsdEstimate:
    """Mean-subtracted one-sided PSD with a log-spaced moving average.

    ``method="periodogram"`` uses a single full-length periodogram (the
    integral over all bins equals the trace variance exactly);
    ``method="welch"`` averages Hann-windowed segments instead.
    """
    x = np.asarray(trace.values, dtype=float)
    n = x.size
    if n < 64:
        raise TooShort(f"need at least 64 samples, got {n}")
    x = x - x.mean()
    if method == "periodogram":
        spec = np.fft.rfft(x)
        p = 2.0 * np.abs(spec) ** 2 * trace.dt / n
        if n % 2 == 0:
            p[-1] /= 2.0
        f = np.fft.rfftfreq(n, trace.dt)
        f, p = f[1:], p[1:]
        dof = np.full(f.size, 2.0)
        df = 1.0 / (n * trace.dt)
    elif method == "welch":
        nperseg = nperseg or min(n, 4096)
        f, p = signal.welch(x, fs=1.0 / trace.dt, nperseg=nperseg, detrend="constant")
        f, p = f[1:], p[1:]
        n_seg = max(1, (n - nperseg // 2) // (nperseg // 2))
        dof = np.full(f.size, 2.0 * n_seg)
        df = f[1] - f[0] if f.size > 1 else 1.0 / (n * trace.dt)
    else:
        raise ValueError(f"unknown method {method!r}")
    if bins_per_decade:
        fb, pb, db, counts = _log_bin(f, p, dof, bins_per_decade)
    else:
        fb, pb, db, counts = f, p, dof, np.ones(f.size, dtype=int)
    return PsdEstimate(fb, pb, db, counts, df, f, p, method, bins_per_decade)


@dataclass
class FlickerFit:
    a_p: float
    a_p_err: float
    slope: float  # free-slope fit, for diagnostics
    slope_err: float
    residual_rms: float  # of log residuals about the fixed-slope model
    excess_freqs: np.ndarray  # bins more than 3 sigma above the 1/f model
    n_bins: int


def _log_stats(dof):
    """Bias and variance of ln(chi2_nu / nu); zero bias for exact values."""
    if dof is None:
        return 0.0, None
    half = np.asarray(dof, dtype=float) / 2.0
    return special.digamma(half) - np.log(half), special.polygamma(1, half)


def fit_flicker(
    est: PsdEstimate,
    band: tuple[float, float] | None = None,
    exclude: tuple[float, float] | None = None,
) -> FlickerFit:
    """Least squares of ``log S`` against ``log f`` with the slope fixed to -1.

    Each bin's log value is corrected for the chi-square bias of a log-averaged
    periodogram and weighted by the inverse of its variance.
    """
    f, s = est.freqs, est.values
    mask = np.ones(f.size, dtype=bool)
    if band is not None:
        mask &= (f >= band[0]) & (f <= band[1])
    if exclude is not None:
        mask &= ~((f >= exclude[0]) & (f <= exclude[1]))
    mask &= s > 0
    if not mask.any():
        raise BandEmpty(f"no PSD bins in band {band}")
    dof = None if est.dof is None else est.dof[mask]
    bias, var = _log_stats(dof)
    lf, ls = np.log(f[mask]), np.log(s[mask]) - bias
    w = np.ones(lf.size) if var is None else 1.0 / var
    y = ls + lf
    log_a = np.sum(w * y) / np.sum(w)
    a_p = float(math.exp(log_a))
    a_err = a_p * math.sqrt(1.0 / np.sum(w)) if var is not None else 0.0
    resid = y - log_a
    if lf.size >= 2 and np.ptp(lf) > 0:
        coef, cov = np.polyfit(lf, ls, 1, w=np.sqrt(w), cov="unscaled")
        slope, slope_err = float(coef[0]), float(math.sqrt(cov[0, 0]))
    else:
        slope, slope_err = float("nan"), float("nan")
    sd = np.sqrt(var) if var is not None else np.full(lf.size, np.inf)
    excess = f[mask][resid / sd > 3.0]
    return FlickerFit(a_p, a_err, slope, slope_err, float(np.sqrt(np.mean(resid**2))), excess, int(mask.sum()))


def line_significance(est: PsdEstimate, f_line: float, n_neighbors: int = 50, guard: int = 2) -> float:
    """How many standard deviations the raw PSD bin at ``f_line`` sits above
    the mean of its neighbours (``guard`` bins on each side skipped)."""
    f, p = est.raw_freqs, est.raw_values
    if f is None:
        raise ValueError("estimate has no raw spectrum")
    k = int(np.argmin(np.abs(f - f_line)))
    lo = np.arange(max(0, k - guard - n_neighbors), max(0, k - guard))
    hi = np.arange(min(f.size, k + guard + 1), min(f.size, k + guard + 1 + n_neighbors))
    nb = p[np.r_[lo, hi]]
    if nb.size < 5:
        raise TooShort("not enough neighbouring bins")
    return float((p[k] - nb.mean()) / nb.std(ddof=1))


# -- Allan deviation ---------------------------------------------------------


@dataclass
class AllanEstimate:
    taus: np.ndarray
    sigma: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    edf: np.ndarray
    overlapping: bool = True


def default_taus(trace: FrequencyTrace, points_per_decade: int = 10) -> np.ndarray:
    m_max = max(1, len(trace) // 5)
    m = np.unique(np.round(np.logspace(0, math.log10(m_max), int(math.log10(m_max) * points_per_decade) + 1)))
    return m.astype(int) * trace.dt


def _edf(n_phase: int, m: np.ndarray, overlapping: bool) -> np.ndarray:
    if not overlapping:
        return np.maximum(1.0, (n_phase - 1) // m - 1.0)
    # white-FM approximation for the overlapping estimator
    edf = (3.0 * (n_phase - 1) / (2.0 * m) - 2.0 * (n_phase - 2) / n_phase) * 4.0 * m**2 / (4.0 * m**2 + 5.0)
    return np.maximum(edf, 1.0)


def allan(trace: FrequencyTrace, tau_grid=None, overlapping: bool = True, confidence: float = 0.683) -> AllanEstimate:
    """Allan deviation ``sigma(tau)`` of a frequency trace.

    ``sigma^2 = 1/2 <(ybar_{k+1} - ybar_k)^2>`` over (overlapping) windows of
    length ``tau``. Confidence intervals use a chi-square approximation.
    """
    y = np.asarray(trace.values, dtype=float)
    n = y.size
    taus = default_taus(trace) if tau_grid is None else np.atleast_1d(np.asarray(tau_grid, dtype=float))
    m = np.round(taus / trace.dt)
    if np.any(m < 1) or np.any(np.abs(m * trace.dt - taus) > 1e-9 * taus):
        raise TauOutOfRange("tau values must be positive integer multiples of dt")
    if np.any(taus > trace.duration / 5 * (1 + 1e-12)):
        raise TauOutOfRange(f"tau must not exceed duration/5 = {trace.duration / 5}")
    m = m.astype(int)
    phase = np.concatenate([[0.0], np.cumsum(y)]) * trace.dt
    sig = np.empty(m.size)
    for i, mi in enumerate(m):
        d = phase[2 * mi :] - 2 * phase[mi:-mi] + phase[: -2 * mi]
        if not overlapping:
            d = d[::mi]
        sig[i] = math.sqrt(np.mean(d**2) / 2.0) / (mi * trace.dt)
    edf = _edf(n + 1, m.astype(float), overlapping)
    a = (1 - confidence) / 2
    lo = sig * np.sqrt(edf / stats.chi2.ppf(1 - a, edf))
    hi = sig * np.sqrt(edf / stats.chi2.ppf(a, edf))
    return AllanEstimate(taus, sig, lo, hi, edf, overlapping)


def allan_from_psd(freqs, psd_values, taus) -> np.ndarray:
    """Allan deviation implied by a one-sided frequency PSD.

    ``sigma^2(tau) = 2 int S(f) sin^4(pi f tau) / (pi f tau)^2 df``, integrated
    with the trapezoidal rule on the given (ideally log-spaced, dense) grid.
    """
    f = np.asarray(freqs, dtype=float)
    s = np.asarray(psd_values, dtype=float)
    out = []
    for tau in np.atleast_1d(taus):
        u = np.pi * f * tau
        out.append(math.sqrt(2.0 * np.trapezoid(s * np.sin(u) ** 4 / u**2, f)))
    return np.array(out)


def allan_peak(est: AllanEstimate, half_width: int = 3) -> float:
    """Location of the Allan-deviation maximum, refined by a parabola in log-log."""
    k = int(np.argmax(est.sigma))
    lo, hi = max(0, k - half_width), min(est.taus.size, k + half_width + 1)
    if hi - lo < 3:
        return float(est.taus[k])
    lt, ls = np.log(est.taus[lo:hi]), np.log(est.sigma[lo:hi])
    a, b, _ = np.polyfit(lt, ls, 2)
    if a >= 0:
        return float(est.taus[k])
    return float(math.exp(np.clip(-b / (2 * a), lt[0], lt[-1])))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# -- Gaussian mixture --------------------------------------------------------


@dataclass
class GaussianMixture:
    """Fitted mixture, components sorted by mean.

    ``weak`` marks components with negligible weight, ``unresolved`` those
    closer to a heavier component than that component's width; either means
    ``k`` exceeds the number of modes the data supports.
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    loglik_history: list = field(default_factory=list, repr=False)
    n_iter: int = 0
    converged: bool = False
    weak: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    unresolved: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def flagged(self) -> np.ndarray:
        return self.weak | self.unresolved

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(self.weights * stats.norm.pdf(x, self.means, self.stds), axis=-1)


def _em(xc, c, means, stds, weights, floor, max_iter, rtol):
    total = c.sum()
    history = []
    for it in range(1, max_iter + 1):
        logp = np.log(weights) + stats.norm.logpdf(xc[:, None], means, stds)
        norm = special.logsumexp(logp, axis=1)
        history.append(float(np.sum(c * norm)))
        if len(history) > 1 and abs(history[-1] - history[-2]) <= rtol * abs(history[-2]):
            return means, stds, weights, history, it, True
        resp = np.exp(logp - norm[:, None]) * c[:, None]
        nk = resp.sum(axis=0)
        if np.any(nk <= 0):
            raise Degenerate("a mixture component lost all support")
        weights = nk / total
        means = (resp * xc[:, None]).sum(axis=0) / nk
        stds = np.sqrt((resp * (xc[:, None] - means) ** 2).sum(axis=0) / nk)
        if np.any(stds < floor):
            raise Degenerate(f"component collapsed: std {stds.min():.3g} < floor {floor:.3g}")
    return means, stds, weights, history, max_iter, False


def fit_mixture(
    trace,
    k: int,
    bins: int = 512,
    max_iter: int = 500,
    rtol: float = 1e-8,
    weak_weight: float = 1e-3,
) -> GaussianMixture:
    """Expectation-maximisation for a k-component 1D Gaussian mixture.

    Works on the sample histogram (bin centres weighted by counts). Two
    deterministic starts are run, the k-quantiles of the data and the
    k-quantiles of the occupied histogram support, and the fit with the
    higher final log-likelihood is kept. Each run stops when the relative
    log-likelihood change drops below ``rtol`` or after ``max_iter`` iterations.

    Raises
    ------
    Degenerate
        If a component's standard deviation falls below 1e-6 of the data range.
    """
    x = np.asarray(getattr(trace, "values", trace), dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    if x.size < 100 * k:
        raise TooShort(f"need at least {100 * k} samples for k={k}")
    span = float(np.ptp(x))
    if span == 0:
        raise Degenerate("data has zero range")
    floor = 1e-6 * span
    counts, edges = np.histogram(x, bins=bins)
    centres = 0.5 * (edges[1:] + edges[:-1])
    keep = counts > 0
    c, xc = counts[keep].astype(float), centres[keep]

    q = (np.arange(k) + 0.5) / k
    starts = [np.quantile(x, q)]
    if k > 1:
        starts.append(np.quantile(xc, q))
    best = None
    for m0 in starts:
        fit = _em(xc, c, m0, np.full(k, x.std() / k), np.full(k, 1.0 / k), floor, max_iter, rtol)
        if best is None or fit[3][-1] > best[3][-1]:
            best = fit
    means, stds, weights, history, n_iter, converged = best
    order = np.argsort(means)
    means, stds, weights = means[order], stds[order], weights[order]
    unresolved = np.zeros(k, dtype=bool)
    for i in range(k):
        for j in range(k):
            if i != j and weights[j] >= weights[i] and abs(means[i] - means[j]) < stds[j]:
                unresolved[i] = True
    return GaussianMixture(weights, means, stds, history, n_iter, converged, weights < weak_weight, unresolved)


# -- summary -----------------------------------------------------------------


def summarize(
    trace: FrequencyTrace,
    band: tuple[float, float] | None = None,
    exclude: tuple[float, float] | None = None,
    k: int = 3,
    bins_per_decade: int = 10,
) -> dict:
    """PSD fit, Allan deviation and mixture of one trace as a plain dict.

    ``band`` defaults to the lowest three decades of the spectrum above the
    first bin. A mixture that degenerates is reported, not raised.
    """
    est = psd(trace, bins_per_decade)
    if band is None:
        band = (float(est.freqs[0]), float(min(est.freqs[-1], est.freqs[0] * 1e3)))
    fit = fit_flicker(est, band, exclude)
    est.a_p, est.a_p_err = fit.a_p, fit.a_p_err
    adev = allan(trace)
    out = {
        "n_samples": len(trace),
        "dt_s": trace.dt,
        "variance_hz2": float(np.var(trace.values)),
        "band_hz": [float(band[0]), float(band[1])],
        "exclude_hz": None if exclude is None else [float(exclude[0]), float(exclude[1])],
        "a_p_hz2": fit.a_p,
        "a_p_err_hz2": fit.a_p_err,
        "psd_slope": fit.slope,
        "excess_freqs_hz": [float(f) for f in fit.excess_freqs],
        "sigma_flat_hz": math.sqrt(2 * math.log(2) * fit.a_p),
        "allan_tau_s": adev.taus.tolist(),
        "allan_sigma_hz": adev.sigma.tolist(),
        "allan_peak_tau_s": allan_peak(adev),
    }
    try:
        mix = fit_mixture(trace, k)
        out["mixture"] = [
            {"weight": float(w), "mean_hz": float(m), "std_hz": float(s), "flagged": bool(f)}
            for w, m, s, f in zip(mix.weights, mix.means, mix.stds, mix.flagged)
        ]
    except (Degenerate, TooShort) as exc:
        out["mixture"] = {"error": str(exc)}
    return out
