"""Calibration sequence for the interferometric readout, run against an
:class:`~smisim.engine.Interferometer`.

Steps: balance the IQ mixer (minimise the carrier leak), locate and fit the
resonance with single-sideband spectroscopy, tune ``(a2, alpha2)`` to the
amplitude-noise null, re-balance, and optionally report the phase-noise
rejecting point, either by switching ``delta`` or by tuning a separate
constructive point at the same ``delta``.

Timestamps come from a simulated clock that advances ``settle_s`` per
instrument reading, so reports are reproducible.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from smisim.engine import Interferometer
from smisim.phasor import (
    CarrierSettings,
    DutResponse,
    ModulationSettings,
    NoSolution,
    _wrap_2pi,
    apply_common_noise,
    probe_term,
    reference_term,
    solve_operating_point,
    ssb_settings,
)
from smisim.resonator import ResonatorParams


class ProtocolError(RuntimeError):
    """Base class; ``step`` names the calibration step that failed."""

    step: str | None = None


class NotConverged(ProtocolError):
    pass


class NotFound(ProtocolError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    a1: float = 10e-3
    alpha1: float = math.radians(330.0)
    fs: float = 10e6
    delta: float = 0.0
    window: tuple[float, float] = (6.15e9, 6.17e9)  # probe-frequency search range (Hz)
    n_coarse: int = 801
    n_fine: int = 401
    dip_snr: float = 5.0
    operating_offset: float = 0.0  # probe detuning from the fitted resonance, in linewidths
    balance_target: float = 1e-4  # residual carrier / sideband amplitude
    balance_max_evals: int = 100
    balance_step: float = 10e-3  # V
    null_tol: float = 1e-4  # null amplitude / a1
    null_max_evals: int = 2000
    null_verify: int = 16
    oracle_rtol: float = 0.01
    switch: bool = False  # report the switched (delta + pi/2) point
    constructive: bool = False  # tune a separate constructive point at the same delta
    phase_step: float = 0.1  # rad, delta step used to read phase sensitivity
    settle_s: float = 0.05

    def __post_init__(self):
        if not self.a1 > 0:
            raise ValueError("a1 must be > 0")
        if not self.window[0] < self.window[1]:
            raise ValueError("window must be increasing")
        if self.n_coarse < 16 or self.n_fine < 16:
            raise ValueError("sweeps need at least 16 points")


@dataclass
class LogEntry:
    t_s: float
    step: str
    message: str
    evaluations: int


class _Log:
    def __init__(self, engine: Interferometer, settle_s: float):
        self.engine, self.settle_s, self.entries = engine, settle_s, []

    def __call__(self, step: str, message: str):
        n = self.engine.evaluations
        self.entries.append(LogEntry(round(n * self.settle_s, 9), step, message, n))


# -- step 3: mixer balance ---------------------------------------------------


@dataclass
class BalanceResult:
    dc_i: float
    dc_q: float
    residual: float  # V
    suppression: float  # sideband amplitude / residual carrier
    evaluations: int
    history: list = field(default_factory=list, repr=False)


def balance_mixer(
    engine: Interferometer,
    mod: ModulationSettings,
    target: float = 1e-4,
    max_evals: int = 100,
    step: float = 10e-3,
) -> BalanceResult:
    """Null the carrier leak by coordinate descent on the DC offsets.

    The leaked power is quadratic in each offset, so every coordinate update
    fits a parabola through three readings and jumps to its vertex.

    Raises
    ------
    NotConverged
        If the residual is still above ``target`` times the sideband amplitude
        after ``max_evals`` readings.
    """
    a_sb = max(mod.a1, mod.a2)
    start = engine.evaluations
    dc = [mod.dc_i, mod.dc_q]

    def power(d):
        if engine.evaluations - start >= max_evals:
            raise NotConverged(f"mixer not balanced after {max_evals} evaluations")
        return engine.carrier_residual(dataclasses.replace(mod, dc_i=d[0], dc_q=d[1])) ** 2

    p0 = power(dc)
    history = [math.sqrt(p0)]
    h = step
    while history[-1] > target * a_sb:
        for axis in (0, 1):
            lo, hi = list(dc), list(dc)
            lo[axis] -= h
            hi[axis] += h
            p_lo, p_hi = power(lo), power(hi)
            curv = p_lo + p_hi - 2 * p0
            if curv > 0:
                shift = h * (p_lo - p_hi) / (2 * curv)
                shift = float(np.clip(shift, -4 * h, 4 * h))
            else:
                shift = -h if p_lo < p_hi else h
            trial = list(dc)
            trial[axis] += shift
            p_t = power(trial)
            if p_t < p0:
                dc, p0 = trial, p_t
            history.append(math.sqrt(p0))
        h = max(h / 4, 1e-9)
    residual = history[-1]
    return BalanceResult(dc[0], dc[1], residual, a_sb / residual, engine.evaluations - start, history)


# -- step 4a: resonance --------------------------------------------------------


@dataclass
class ResonanceFit:
    params: ResonatorParams
    gain: complex  # readout gain times background phase at the window centre
    f_centre: float
    residual_rms: float  # relative to the background level
    snr: float  # dip depth / noise
    evaluations: int


def _notch_model(theta, f, f_centre, scale):
    u, log_ql, log_qc, phi0, tau_s, log_a, arg = theta
    fr = f_centre + u * scale
    ql, qc = math.exp(log_ql), math.exp(log_qc)
    bg = math.exp(log_a) * np.exp(1j * (arg - 2 * np.pi * (f - f_centre) * tau_s / scale))
    return bg * (1 - (ql / qc) * np.exp(1j * phi0) / (1 + 2j * ql * (f - fr) / fr))


def _noise_sigma(m: np.ndarray) -> float:
    """Per-quadrature white-noise level from second differences (var = 6 sigma^2)."""
    d2 = m[2:] - 2 * m[1:-1] + m[:-2]
    mad = np.median(np.abs(np.concatenate([d2.real, d2.imag])))
    return float(1.4826 * mad / math.sqrt(6))


def _locate_dip(f, m, snr):
    amp = np.abs(m)
    edge = max(3, f.size // 20)
    base = float(np.median(np.r_[amp[:edge], amp[-edge:]]))
    k = int(np.argmin(amp))
    depth = base - amp[k]
    sigma = _noise_sigma(m)
    if depth <= max(snr * sigma, 1e-9 * base):
        raise NotFound(f"no dip above {snr} x noise floor in [{f[0]:.6g}, {f[-1]:.6g}] Hz")
    if k < 2 or k > f.size - 3:
        raise NotFound("deepest point at the edge of the sweep window")
    half = (base**2 + amp[k] ** 2) / 2
    below = np.nonzero(amp**2 <= half)[0]
    left, right = below.min(), below.max()
    fwhm = max(f[min(right + 1, f.size - 1)] - f[max(left - 1, 0)], 2 * (f[1] - f[0]))
    return f[k], fwhm, base, depth, sigma


def find_resonance(
    engine: Interferometer,
    mod: ModulationSettings,
    carrier: CarrierSettings,
    window: tuple[float, float],
    n_coarse: int = 801,
    n_fine: int = 401,
    snr: float = 5.0,
) -> ResonanceFit:
    """Single-sideband sweep of the probe across ``window`` and a notch fit.

    The reference sideband is cancelled, the carrier stepped so the probe
    (lower) sideband covers ``window``, and the complex response normalised by
    the known probe coefficient. A fine sweep of +-4 coarse widths around the
    dip is fitted for ``fr, Ql, Qc, phi0, tau_d`` and a complex background.

    Raises
    ------
    NotFound
        If no interior dip exceeds ``snr`` times the noise floor.
    """
    start = engine.evaluations
    a2, alpha2 = ssb_settings(mod.a1, mod.alpha1, "probe")
    ssb = dataclasses.replace(mod, a2=a2, alpha2=alpha2)
    coef = complex(probe_term(ssb.a1, ssb.a2, ssb.alpha1, ssb.alpha2, carrier.delta, 1.0))

    def measure(f_probe):
        tr = engine.sweep(ssb, carrier, f_probe + ssb.f_s)
        return tr.iq / coef

    f = np.linspace(window[0], window[1], n_coarse)
    f_dip, fwhm, base, depth, sigma = _locate_dip(f, measure(f), snr)
    f = np.linspace(f_dip - 4 * fwhm, f_dip + 4 * fwhm, n_fine)
    m = measure(f)
    f_dip, fwhm, base, depth, sigma = _locate_dip(f, m, snr)

    scale = fwhm
    edge = max(3, f.size // 10)
    outer = np.r_[0:edge, f.size - edge : f.size]
    ph = np.unwrap(np.angle(m))
    slope = np.polyfit(f[outer] - f_dip, ph[outer], 1)[0] if f.size > 2 * edge else 0.0
    tau0 = -slope / (2 * np.pi) * scale
    ql0 = f_dip / fwhm
    ratio = min(max(1 - np.abs(m).min() / base, 0.05), 0.95)
    arg0 = float(np.angle(np.mean(m[outer] * np.exp(2j * np.pi * (f[outer] - f_dip) * tau0 / scale))))
    theta0 = np.array([0.0, math.log(ql0), math.log(ql0 / ratio), 0.0, tau0, math.log(base), arg0])

    def resid(theta):
        r = (_notch_model(theta, f, f_dip, scale) - m) / base
        return np.concatenate([r.real, r.imag])

    sol = optimize.least_squares(resid, theta0, x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=5000)
    u, log_ql, log_qc, phi0, tau_s, log_a, arg = sol.x
    fr, ql, qc = f_dip + u * scale, math.exp(log_ql), math.exp(log_qc)
    inv_qi = 1 / ql - math.cos(phi0) / qc
    qi = 1 / inv_qi if inv_qi > 0 else math.inf
    params = ResonatorParams(
        fr=fr, Qc=qc, Qi=qi, Ql=ql, phi0=float(math.remainder(phi0, 2 * math.pi)), tau_d=tau_s / scale, bg_amp=math.exp(log_a)
    )
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    return ResonanceFit(params, complex(math.cos(arg), math.sin(arg)), f_dip, rms, depth / max(sigma, 1e-300), engine.evaluations - start)


# -- step 4b: null -------------------------------------------------------------


@dataclass
class NullResult:
    a2: float
    alpha2: float
    amplitude: float  # mean-of-readings null amplitude (V)
    noise_floor: float  # standard error of that amplitude (V)
    evaluations: int
    restarts: int
    best_history: list = field(default_factory=list, repr=False)
    oracle: tuple[float, float] | None = None
    oracle_deviation: tuple[float, float] | None = None  # relative a2, alpha2 (rad / 2pi)


def analytic_null(
    engine: Interferometer, mod: ModulationSettings, carrier: CarrierSettings, mode: str = "destructive"
) -> tuple[float, float]:
    """Predict the ``(a2, alpha2)`` of an operating point from two single-sideband readings.

    Probe-only and reference-only readings give the device response of each
    sideband up to the same readout gain, which cancels in their ratio; the
    closed-form operating-point solver at the fixed ``delta`` does the rest.
    """
    out = []
    for keep in ("probe", "reference"):
        a2, alpha2 = ssb_settings(mod.a1, mod.alpha1, keep)
        m = dataclasses.replace(mod, a2=a2, alpha2=alpha2)
        s = engine.measure(m, carrier)
        if keep == "probe":
            out.append(s / complex(probe_term(m.a1, m.a2, m.alpha1, m.alpha2, carrier.delta, 1.0)))
        else:
            out.append(s / complex(reference_term(m.a1, m.a2, m.alpha1, m.alpha2, carrier.delta)))
    rho = out[0] / out[1]
    op = solve_operating_point(mod.a1, mod.alpha1, DutResponse.from_complex(rho), mode, delta=carrier.delta)
    return op.a2, op.alpha2


def _reader(engine: Interferometer, carrier: CarrierSettings, mode: str, theta: float):
    """Complex objective reading for ``mode``; its modulus vanishes at the operating point.

    Destructive: the output itself. Constructive: the symmetric difference
    ``(s(delta + theta) - s(delta - theta)) / (2 sin theta)``, which equals
    ``i (ref - prb)`` exactly and so vanishes where the two terms coincide.
    """
    if mode == "destructive":
        return 1, lambda m: complex(engine.measure(m, carrier))
    if mode != "constructive":
        raise ValueError(f"unknown mode {mode!r}")
    up = dataclasses.replace(carrier, delta=carrier.delta + theta)
    dn = dataclasses.replace(carrier, delta=carrier.delta - theta)
    k = 2 * math.sin(theta)
    return 2, lambda m: complex(engine.measure(m, up) - engine.measure(m, dn)) / k


def find_null(
    engine: Interferometer,
    mod: ModulationSettings,
    carrier: CarrierSettings,
    tol: float = 1e-4,
    max_evals: int = 2000,
    n_verify: int = 16,
    grid: tuple[int, int] = (13, 24),
    a2_max: float | None = None,
    oracle: bool = True,
    mode: str = "destructive",
    theta: float = 0.1,
) -> NullResult:
    """Tune ``(a2, alpha2)`` to the operating point of ``mode`` at fixed ``delta``.

    The destructive point minimises the output amplitude. The constructive
    point minimises the phase sensitivity, read as the output difference
    under a ``+-theta`` step of ``delta``.

    A coarse grid locates the basin; a bounded Nelder-Mead simplex refines it
    and is restarted once from a perturbed copy of its result. The point is
    accepted when the mean of ``n_verify`` objective readings is below
    ``tol * a1`` or, with readout noise, below ten times its standard error.

    Raises
    ------
    NotConverged
        If the null is not reached within ``max_evals`` readings.
    """
    start = engine.evaluations
    a1 = mod.a1
    a2_max = 4 * a1 if a2_max is None else a2_max
    best = [math.inf, None]
    history = []

    cost, read = _reader(engine, carrier, mode, theta)
    budget = max_evals - cost * n_verify

    def amp(p):
        if engine.evaluations - start + cost > budget:
            raise NotConverged(f"{mode} point not reached within {max_evals} evaluations")
        a2 = min(max(p[0], 0.0), a2_max / a1) * a1
        v = abs(read(dataclasses.replace(mod, a2=a2, alpha2=_wrap_2pi(p[1]))))
        if v < best[0]:
            best[0], best[1] = v, (p[0], p[1])
        history.append(best[0])
        return v

    restarts = 0
    try:
        grid_pts = [(u, al) for u in np.linspace(0, a2_max / a1, grid[0]) for al in np.linspace(0, 2 * math.pi, grid[1], endpoint=False)]
        for p in grid_pts:
            amp(p)
        x0 = np.array(best[1])
        # repeat the best grid point to size the readout floor; the simplex stops there
        g = dataclasses.replace(mod, a2=x0[0] * a1, alpha2=_wrap_2pi(x0[1]))
        rep = np.array([read(g) for _ in range(4)])
        floor = float(np.sqrt(np.var(rep.real, ddof=1) + np.var(rep.imag, ddof=1)))
        fatol = max(1e-6 * tol * a1, floor)
        du, dal = a2_max / a1 / (grid[0] - 1), 2 * math.pi / grid[1]
        for attempt in range(2):
            simplex = np.array([x0, x0 + [du, 0.0], x0 + [0.0, dal]])
            optimize.minimize(
                amp,
                x0,
                method="Nelder-Mead",
                bounds=[(0.0, a2_max / a1), (None, None)],
                options={"initial_simplex": simplex, "xatol": 1e-10, "fatol": fatol, "maxfev": budget},
            )
            x0 = np.array(best[1])
            if attempt == 0:
                restarts += 1
                du, dal = du / 100, dal / 100
    except NotConverged:
        if best[1] is None:
            raise

    u, al = best[1]
    point = dataclasses.replace(mod, a2=u * a1, alpha2=_wrap_2pi(al))
    readings = np.array([read(point) for _ in range(n_verify)])
    amplitude = float(abs(readings.mean()))
    sem = float(np.sqrt(np.var(readings.real) + np.var(readings.imag)) / math.sqrt(n_verify))
    if amplitude > max(tol * a1, 10 * sem):
        raise NotConverged(f"{mode} residual {amplitude:.3g} V above tolerance {tol * a1:.3g} V")
    res = NullResult(point.a2, point.alpha2, amplitude, sem, engine.evaluations - start, restarts, history)
    if oracle:
        try:
            oa2, oal = analytic_null(engine, mod, carrier, mode)
        except NoSolution:
            return res
        res.oracle = (oa2, oal)
        dal = abs(math.remainder(point.alpha2 - oal, 2 * math.pi)) / (2 * math.pi)
        res.oracle_deviation = (abs(point.a2 - oa2) / oa2, dal)
        res.evaluations = engine.evaluations - start
    return res


# -- switch --------------------------------------------------------------------


def switch_to_phase_rejection(mod: ModulationSettings, carrier: CarrierSettings) -> tuple[ModulationSettings, CarrierSettings]:
    """Move from the amplitude-rejecting to the phase-rejecting point.

    Shifting ``delta`` by pi/2 turns the relative phase of the two sideband
    terms by pi. Applying it twice negates the output; four times restores it.
    """
    return mod, dataclasses.replace(carrier, delta=carrier.delta + math.pi / 2)


@dataclass
class RejectionCheck:
    amplitude_ds: float  # output change for a 1% common amplitude step (V)
    phase_ds: float  # output change for a 0.01 rad common phase step (V)
    ssb_amplitude_ds: float
    ssb_phase_ds: float

    @property
    def amplitude_rejection(self) -> float:
        return self.ssb_amplitude_ds / max(self.amplitude_ds, 1e-300)

    @property
    def phase_rejection(self) -> float:
        return self.ssb_phase_ds / max(self.phase_ds, 1e-300)


def rejection_check(engine: Interferometer, mod: ModulationSettings, carrier: CarrierSettings, eps: float = 0.01, theta: float = 0.01) -> RejectionCheck:
    """Noise-free output changes under common-mode steps, here and in SSB."""

    def ds(m, c, e, t):
        m2, c2 = apply_common_noise(m, c, e, t)
        return float(abs(engine.response(m2, c2) - engine.response(m, c)))

    a2, alpha2 = ssb_settings(mod.a1, mod.alpha1, "probe")
    ssb = dataclasses.replace(mod, a2=a2, alpha2=alpha2)
    return RejectionCheck(ds(mod, carrier, eps, 0), ds(mod, carrier, 0, theta), ds(ssb, carrier, eps, 0), ds(ssb, carrier, 0, theta))


# -- full guide ----------------------------------------------------------------


@dataclass
class CalibrationReport:
    success: bool
    dc_offsets: tuple[float, float]
    carrier_suppression: float
    resonator: ResonatorParams | None
    resonance_residual: float | None
    operating_points: dict  # mode -> {"a2", "alpha2", "delta", "f0"}
    null_amplitude: float | None
    null_noise_floor: float | None
    oracle_deviation: tuple[float, float] | None
    rejection: dict
    balance_passes: list
    log: list
    evaluations: int
    failed_step: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["log"] = [dataclasses.asdict(e) for e in self.log]
        return d


def run_guide(engine: Interferometer, config: ProtocolConfig = ProtocolConfig()) -> CalibrationReport:
    """Run the full calibration sequence from a fresh engine state.

    Errors propagate with ``.step`` naming the failed step.
    """
    engine.reset()
    log = _Log(engine, config.settle_s)
    log("setup", "sidebands at +-%.6g Hz, a1=%.6g V, alpha1=%.6g rad" % (config.fs, config.a1, config.alpha1))
    mod = ModulationSettings(config.a1, config.a1, config.alpha1, _wrap_2pi(config.alpha1 + math.pi), 2 * math.pi * config.fs)
    f_mid = 0.5 * (config.window[0] + config.window[1]) + config.fs
    carrier = CarrierSettings(2 * math.pi * f_mid, config.delta)
    step = "balance"
    passes = []
    try:
        bal = balance_mixer(engine, mod, config.balance_target, config.balance_max_evals, config.balance_step)
        passes.append(dataclasses.asdict(bal) | {"history": None})
        mod = dataclasses.replace(mod, dc_i=bal.dc_i, dc_q=bal.dc_q)
        log(step, f"carrier suppressed {bal.suppression:.3g}x in {bal.evaluations} readings")

        step = "resonance"
        fit = find_resonance(engine, mod, carrier, config.window, config.n_coarse, config.n_fine, config.dip_snr)
        p = fit.params
        log(step, f"fr={p.fr:.9g} Hz Ql={p.Ql:.5g} Qc={p.Qc:.5g} residual={fit.residual_rms:.3g}")

        step = "null"
        f0 = p.fr + config.fs + config.operating_offset * p.linewidth
        carrier = CarrierSettings(2 * math.pi * f0, config.delta)
        null = find_null(engine, mod, carrier, config.null_tol, config.null_max_evals, config.null_verify)
        mod = dataclasses.replace(mod, a2=null.a2, alpha2=null.alpha2)
        log(step, f"a2={null.a2:.6g} V alpha2={null.alpha2:.6g} rad |s|={null.amplitude:.3g} V")
        if null.oracle_deviation is not None and max(null.oracle_deviation) > config.oracle_rtol:
            log(step, f"warning: null deviates from analytic prediction by {null.oracle_deviation}")

        step = "rebalance"
        bal2 = balance_mixer(engine, mod, config.balance_target, config.balance_max_evals, config.balance_step)
        passes.append(dataclasses.asdict(bal2) | {"history": None})
        mod = dataclasses.replace(mod, dc_i=bal2.dc_i, dc_q=bal2.dc_q)
        log(step, f"carrier suppressed {bal2.suppression:.3g}x in {bal2.evaluations} readings")

        points = {"destructive": {"a2": mod.a2, "alpha2": mod.alpha2, "delta": carrier.delta, "f0": f0}}
        chk = rejection_check(engine, mod, carrier)
        rejection = {"destructive": dataclasses.asdict(chk) | {"amplitude_rejection": chk.amplitude_rejection}}
        if config.switch:
            step = "switch"
            _, c2 = switch_to_phase_rejection(mod, carrier)
            points["switched"] = {"a2": mod.a2, "alpha2": mod.alpha2, "delta": c2.delta, "f0": f0}
            chk2 = rejection_check(engine, mod, c2)
            rejection["switched"] = dataclasses.asdict(chk2) | {"phase_rejection": chk2.phase_rejection}
            log(step, f"delta -> {c2.delta:.6g} rad; phase rejection {chk2.phase_rejection:.3g}x")
        if config.constructive:
            step = "constructive"
            con = find_null(
                engine, mod, carrier, config.null_tol, config.null_max_evals, config.null_verify, mode="constructive", theta=config.phase_step
            )
            m3 = dataclasses.replace(mod, a2=con.a2, alpha2=con.alpha2)
            points["constructive"] = {"a2": con.a2, "alpha2": con.alpha2, "delta": carrier.delta, "f0": f0}
            chk3 = rejection_check(engine, m3, carrier)
            rejection["constructive"] = dataclasses.asdict(chk3) | {"phase_rejection": chk3.phase_rejection}
            log(step, f"a2={con.a2:.6g} V alpha2={con.alpha2:.6g} rad; phase rejection {chk3.phase_rejection:.3g}x")
    except ProtocolError as exc:
        exc.step = step
        log(step, f"failed: {exc}")
        raise
    ok = null.amplitude <= max(config.null_tol * config.a1, 10 * null.noise_floor) and bal2.residual <= config.balance_target * config.a1 * 1.000001
    log("done", "success" if ok else "thresholds not met")
    return CalibrationReport(
        success=bool(ok),
        dc_offsets=(mod.dc_i, mod.dc_q),
        carrier_suppression=bal2.suppression,
        resonator=p,
        resonance_residual=fit.residual_rms,
        operating_points=points,
        null_amplitude=null.amplitude,
        null_noise_floor=null.noise_floor,
        oracle_deviation=null.oracle_deviation,
        rejection=rejection,
        balance_passes=passes,
        log=log.entries,
        evaluations=engine.evaluations,
    )
