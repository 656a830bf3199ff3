"""Hanger (notch) resonator response and the calibrations built on it.

The probe sideband at ``f0 - fs`` sits on the resonance, the reference
sideband at ``f0 + fs`` is ``2 fs`` away. Both see the same notch model

    S(f) = bg e^{-2 pi i f tau} [1 - (Ql/Qc) e^{i phi0} / (1 + 2 i Ql (f - fr - dr)/fr)]

where ``dr`` is the instantaneous resonance shift and ``Ql`` is reduced when
the internal quality factor is scaled by ``qi_factor``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from smisim.constants import HBAR, Z0
from smisim.phasor import (
    CarrierSettings,
    DemodOutput,
    DutResponse,
    ModulationSettings,
    sideband_output,
    solve_operating_point,
    ssb_settings,
    wrap_pi,
)


class InsufficientSpan(ValueError):
    """Calibration trace does not cover the resonance well enough."""


@dataclass(frozen=True)
class ResonatorParams:
    """Notch-resonator parameters.

    ``Ql`` may be given explicitly (a measured value, not necessarily equal to
    the composition of ``Qc`` and ``Qi``) or left as ``None`` to derive it from
    ``1/Ql = 1/Qc + 1/Qi``.
    """

    fr: float
    Qc: float
    Qi: float
    Ql: float | None = None
    Zr: float = 50.0
    phi0: float = 0.0
    tau_d: float = 0.0
    bg_amp: float = 1.0
    Z0: float = Z0

    def __post_init__(self):
        if not self.fr > 0:
            raise ValueError("fr must be > 0")
        if not (self.Qc > 0 and self.Qi > 0):
            raise ValueError("Qc and Qi must be > 0")
        if self.Ql is None:
            object.__setattr__(self, "Ql", 1.0 / (1.0 / self.Qc + 1.0 / self.Qi))
        elif not self.Ql > 0:
            raise ValueError("Ql must be > 0")

    def loaded_q(self, qi_factor=1.0):
        """Loaded Q when the internal Q is scaled by ``qi_factor``.

        The extra internal loss is added to the stored ``Ql``, so for a
        consistent parameter set ``1/Ql = 1/Qc + 1/(qi_factor Qi)`` exactly.
        """
        return 1.0 / (1.0 / self.Ql + 1.0 / (qi_factor * self.Qi) - 1.0 / self.Qi)

    @property
    def omega_r(self) -> float:
        return 2 * math.pi * self.fr

    @property
    def gamma_r(self) -> float:
        """Loaded linewidth ``omega_r / Ql`` in rad/s."""
        return self.omega_r / self.Ql

    @property
    def linewidth(self) -> float:
        """Loaded linewidth ``fr / Ql`` in Hz."""
        return self.fr / self.Ql

    @property
    def overcoupled(self) -> bool:
        return self.Qc < self.Qi

    def q_mismatch(self) -> float:
        """Relative deviation of ``1/Ql`` from ``1/Qc + 1/Qi``."""
        return abs(self.Ql * (1.0 / self.Qc + 1.0 / self.Qi) - 1.0)


# NbN hanger resonator used for the noise measurements
DEVICE = ResonatorParams(fr=6.16e9, Qc=9.8e3, Qi=5e4, Ql=8.0e3, Zr=316.0)


@dataclass(frozen=True)
class ResonatorState:
    delta_r: float = 0.0
    qi_factor: float = 1.0

    def __post_init__(self):
        if not np.all(np.asarray(self.qi_factor) > 0):
            raise ValueError("qi_factor must be > 0")


def notch(params: ResonatorParams, f, delta_r=0.0, qi_factor=1.0):
    """Resonant factor of the response, without background. Broadcasts."""
    f = np.asarray(f, dtype=float)
    ql = params.loaded_q(np.asarray(qi_factor, dtype=float))
    x = (f - params.fr - np.asarray(delta_r, dtype=float)) / params.fr
    return 1.0 - (ql / params.Qc) * np.exp(1j * params.phi0) / (1.0 + 2j * ql * x)


def background(params: ResonatorParams, f):
    return params.bg_amp * np.exp(-2j * np.pi * np.asarray(f, dtype=float) * params.tau_d)


def reflection(params: ResonatorParams, state: ResonatorState, f):
    """Complex response ``S(f)``; scalar in, complex out, arrays broadcast."""
    if np.any(np.asarray(f) <= 0):
        raise ValueError("f must be > 0")
    s = background(params, f) * notch(params, f, state.delta_r, state.qi_factor)
    return complex(s) if np.ndim(s) == 0 else s


def dut_response(params: ResonatorParams, state: ResonatorState, f_probe: float) -> DutResponse:
    """Probe-sideband response relative to the off-resonance background."""
    if not f_probe > 0:
        raise ValueError("f_probe must be > 0")
    return DutResponse.from_complex(complex(notch(params, f_probe, state.delta_r, state.qi_factor)))


def sideband_responses(params: ResonatorParams, f0, fs: float, delta_r=0.0, qi_factor=1.0):
    """Complex responses ``(S(f0 - fs), S(f0 + fs))`` of probe and reference."""
    f0 = np.asarray(f0, dtype=float)
    probe = background(params, f0 - fs) * notch(params, f0 - fs, delta_r, qi_factor)
    ref = background(params, f0 + fs) * notch(params, f0 + fs, delta_r, qi_factor)
    return probe, ref


def effective_dut(params: ResonatorParams, state: ResonatorState, f0: float, fs: float):
    """Fold both sideband responses into one ``DutResponse`` and a complex gain.

    The output equals ``gain * s`` where ``s`` is the ideal four-term output
    evaluated with the returned response, so operating-point solvers can be
    applied directly to a device whose reference sideband is not exactly 1.
    """
    probe, ref = sideband_responses(params, f0, fs, state.delta_r, state.qi_factor)
    gain = complex(np.conj(ref))
    return DutResponse.from_complex(complex(probe) / gain), gain


def smi_output(params, mod: ModulationSettings, carrier: CarrierSettings, f0=None, delta_r=0.0, qi_factor=1.0):
    """Complex lock-in output for the resonator; broadcasts over f0/delta_r/qi_factor."""
    f0 = carrier.f0 if f0 is None else f0
    probe, ref = sideband_responses(params, f0, mod.f_s, delta_r, qi_factor)
    return sideband_output(mod.a1, mod.a2, mod.alpha1, mod.alpha2, carrier.delta, probe, ref)


def mean_photon_number(params: ResonatorParams, p_in):
    """Average intra-resonator photon number for on-resonance input power ``p_in`` (W)."""
    if np.any(np.asarray(p_in) < 0):
        raise ValueError("p_in must be >= 0")
    return 2.0 / (HBAR * params.omega_r**2) * params.Ql**2 / params.Qc * params.Z0 / params.Zr * p_in


def input_power_for_photons(params: ResonatorParams, n_photons):
    """Inverse of :func:`mean_photon_number`."""
    return n_photons / mean_photon_number(params, 1.0)


@dataclass
class SpectroscopyTrace:
    f0: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def iq(self) -> np.ndarray:
        return self.x + 1j * self.y

    @property
    def points(self) -> list[DemodOutput]:
        return [DemodOutput(float(a), float(b)) for a, b in zip(self.x, self.y)]

    def __len__(self):
        return len(self.f0)


def spectroscopy_trace(
    params: ResonatorParams, state: ResonatorState, mod: ModulationSettings, carrier: CarrierSettings, f0_sweep
) -> SpectroscopyTrace:
    """Lock-in output while the carrier is swept (both sidebands move)."""
    f0 = np.asarray(f0_sweep, dtype=float)
    if f0.size == 0:
        raise ValueError("sweep must be non-empty")
    s = smi_output(params, mod, carrier, f0, state.delta_r, state.qi_factor)
    s = np.broadcast_to(s, f0.shape)
    return SpectroscopyTrace(f0, s.real.copy(), s.imag.copy())


def fit_circle(x, y):
    """Algebraic least-squares circle fit. Returns ``(xc, yc, r, rms_residual)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    # centre the data first; the normal equations are badly scaled otherwise
    mx, my = x.mean(), y.mean()
    u, v = x - mx, y - my
    A = np.column_stack([u, v, np.ones_like(u)])
    b = u**2 + v**2
    (c0, c1, c2), *_ = np.linalg.lstsq(A, b, rcond=None)
    xc, yc = c0 / 2, c1 / 2
    r = math.sqrt(c2 + xc**2 + yc**2)
    resid = np.hypot(u - xc, v - yc) - r
    return xc + mx, yc + my, r, float(np.sqrt(np.mean(resid**2)))


@dataclass
class PhaseCalibration:
    """Map from demodulated phase about the resonance-circle centre to detuning.

    ``slope``/``intercept`` give the linear small-signal map fitted over
    ``|phase| <= linear_range``; :meth:`to_detuning` interpolates the full
    measured table instead, which stays accurate further from resonance.
    """

    centre: complex
    phase_ref: float
    slope: float  # Hz / rad
    intercept: float  # Hz
    residual_rms: float  # Hz
    phase_table: np.ndarray = field(repr=False)
    detuning_table: np.ndarray = field(repr=False)

    def phase(self, x, y):
        s = np.asarray(x) + 1j * np.asarray(y)
        return wrap_pi(np.angle(s - self.centre) - self.phase_ref)

    def to_detuning(self, x, y, method: str = "interp"):
        p = self.phase(x, y)
        if method == "linear":
            return self.slope * p + self.intercept
        if method != "interp":
            raise ValueError(f"unknown method {method!r}")
        out = np.interp(p, self.phase_table, self.detuning_table)
        lo, hi = self.phase_table[0], self.phase_table[-1]
        out = np.where(p < lo, self.detuning_table[0] + self.slope * (p - lo), out)
        return np.where(p > hi, self.detuning_table[-1] + self.slope * (p - hi), out)


def calibrate_phase_to_frequency(
    trace: SpectroscopyTrace,
    f_operating: float | None = None,
    linear_range: float = 0.4,
    min_phase_span: float = 0.5,
) -> PhaseCalibration:
    """Build a phase-to-detuning map from a carrier sweep across the resonance.

    Shifting the resonance by ``dr`` at a fixed carrier ``f_operating`` looks
    like lowering the carrier by ``dr``, so the sweep point at ``f0`` stands
    for detuning ``f_operating - f0``. Phases are measured about the centre of
    the circle traced by the sweep. The trace must be free of electrical delay
    (remove it beforehand), since delay moves the circle with ``f0``.

    Raises
    ------
    InsufficientSpan
        If the sweep has no frequency span, does not contain ``f_operating`` or
        turns by less than ``min_phase_span`` radians about the circle centre.
    """
    order = np.argsort(trace.f0)
    f0 = trace.f0[order]
    s = trace.iq[order]
    if f0.size < 5 or np.ptp(f0) == 0:
        raise InsufficientSpan("sweep has no frequency span")
    f_op = float(np.median(f0)) if f_operating is None else float(f_operating)
    if not f0[0] <= f_op <= f0[-1]:
        raise InsufficientSpan(f"operating carrier {f_op} outside sweep [{f0[0]}, {f0[-1]}]")
    xc, yc, _, _ = fit_circle(s.real, s.imag)
    centre = complex(xc, yc)
    psi = np.unwrap(np.angle(s - centre))
    if np.ptp(psi) < min_phase_span:
        raise InsufficientSpan(f"phase turns by {np.ptp(psi):.3g} rad < {min_phase_span} rad; resonance not crossed")
    psi_op = float(np.interp(f_op, f0, psi))
    rel = psi - psi_op
    detuning = f_op - f0
    # phase decreases with f0 on a notch circle; keep the table increasing in phase
    idx = np.argsort(rel)
    rel, detuning = rel[idx], detuning[idx]
    core = np.abs(rel) <= linear_range
    if core.sum() < 3:
        core = np.ones_like(rel, dtype=bool)
    slope, intercept = np.polyfit(rel[core], detuning[core], 1)
    resid = detuning[core] - (slope * rel[core] + intercept)
    return PhaseCalibration(
        centre=centre,
        phase_ref=float(wrap_pi(psi_op)),
        slope=float(slope),
        intercept=float(intercept),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        phase_table=rel,
        detuning_table=detuning,
    )


def iq_jacobian(
    params: ResonatorParams,
    mod: ModulationSettings,
    carrier: CarrierSettings,
    at: ResonatorState = ResonatorState(),
    h_delta: float | None = None,
    h_q: float = 1e-4,
) -> np.ndarray:
    """Central-difference ``d(x, y)/d(delta_r, qi_factor)`` as a 2x2 array.

    Column 0 is per Hz of resonance shift, column 1 per unit of ``qi_factor``.
    """
    h_delta = 1e-3 * params.linewidth if h_delta is None else h_delta

    def out(dr, q):
        return complex(smi_output(params, mod, carrier, None, dr, q))

    d_dr = (out(at.delta_r + h_delta, at.qi_factor) - out(at.delta_r - h_delta, at.qi_factor)) / (2 * h_delta)
    d_q = (out(at.delta_r, at.qi_factor + h_q) - out(at.delta_r, at.qi_factor - h_q)) / (2 * h_q)
    return np.array([[d_dr.real, d_q.real], [d_dr.imag, d_q.imag]])


def column_cosine(jac: np.ndarray) -> float:
    """|cos| of the angle between the two Jacobian columns."""
    c0, c1 = jac[:, 0], jac[:, 1]
    return float(abs(c0 @ c1) / (np.linalg.norm(c0) * np.linalg.norm(c1)))


def smi_settings(
    params: ResonatorParams,
    a1: float,
    alpha1: float,
    mode: str = "destructive",
    fs: float = 10e6,
    f0: float | None = None,
    delta: float = 0.0,
) -> tuple[ModulationSettings, CarrierSettings]:
    """Modulation and carrier settings for a readout configuration.

    ``mode`` is ``"ssb"`` (reference sideband cancelled), ``"destructive"`` or
    ``"constructive"``. The carrier defaults to ``fr + fs`` (probe sideband on
    resonance) and ``delta`` is held fixed, as with real hardware; (a2, alpha2)
    are solved in closed form from the effective two-sideband response.
    """
    f0 = params.fr + fs if f0 is None else f0
    carrier = CarrierSettings(omega0=2 * math.pi * f0, delta=delta)
    if mode == "ssb":
        a2, alpha2 = ssb_settings(a1, alpha1, "probe")
    else:
        dut, _ = effective_dut(params, ResonatorState(), f0, fs)
        op = solve_operating_point(a1, alpha1, dut, mode, delta=delta)
        a2, alpha2 = op.a2, op.alpha2
    return ModulationSettings(a1, a2, alpha1, alpha2, 2 * math.pi * fs), carrier
