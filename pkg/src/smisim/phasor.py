"""Closed-form phasor model of the interferometer output.

After down-conversion, and neglecting the terms at twice the carrier
frequency, the lock-in sees at the modulation frequency

    s = a1 e^{i(a1p+d)} + xi a1 e^{i(a1p+phi-d)} + a2 e^{i(a2p+d)} - xi a2 e^{i(a2p+phi-d)}

with (a1p, a2p) the modulation phases, d the carrier phase difference between
the two mixers and (xi, phi) the response of the device to the probe
sideband. Grouped by sideband the same output reads

    s = b1 e^{i beta1} + b2 e^{i beta2}
    b1 e^{i beta1} = (a1 e^{i a1p} + a2 e^{i a2p}) e^{i d}             (reference)
    b2 e^{i beta2} = xi e^{i phi} (a1 e^{i a1p} - a2 e^{i a2p}) e^{-i d} (probe)

Sign convention: a common RF phase theta on the signal path is represented as
a shift of the carrier phase difference d -> d + theta, so it rotates the
reference term by +theta and the probe term by -theta. All functions work in
volts and radians, double precision, and are pure.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np
from scipy import optimize

TWO_PI = 2.0 * math.pi

Mode = Literal["constructive", "destructive"]
Perturbation = Literal["amplitude", "phase"]

# perturbation sizes used throughout the noise-rejection maps
AMPLITUDE_STEP = 0.01
PHASE_STEP = 0.01


class NoSolution(ValueError):
    """No modulation setting satisfies the requested interference condition."""


def _wrap_2pi(angle: float) -> float:
    out = math.fmod(angle, TWO_PI)
    if out < 0.0:
        out += TWO_PI
    # fmod of values just below 0 can round up to exactly 2 pi
    return 0.0 if out >= TWO_PI else out


def wrap_pi(angle):
    """Wrap an angle (scalar or array) into [-pi, pi)."""
    return (np.asarray(angle) + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class ModulationSettings:
    """I/Q modulation applied to the up-conversion mixer.

    Amplitudes in volts, phases in radians (stored wrapped into [0, 2 pi)),
    ``omega_s`` in rad/s. ``dc_i``/``dc_q`` are the DC offsets used to
    balance the carrier leakage of the IQ mixer.
    """

    a1: float
    a2: float
    alpha1: float
    alpha2: float
    omega_s: float = TWO_PI * 10e6
    dc_i: float = 0.0
    dc_q: float = 0.0

    def __post_init__(self):
        if not (self.a1 >= 0.0 and self.a2 >= 0.0):
            raise ValueError(f"amplitudes must be >= 0, got a1={self.a1}, a2={self.a2}")
        if not self.omega_s > 0.0:
            raise ValueError(f"omega_s must be > 0, got {self.omega_s}")
        object.__setattr__(self, "alpha1", _wrap_2pi(float(self.alpha1)))
        object.__setattr__(self, "alpha2", _wrap_2pi(float(self.alpha2)))

    @property
    def f_s(self) -> float:
        return self.omega_s / TWO_PI


@dataclass(frozen=True)
class CarrierSettings:
    """Carrier frequency, mixer phase difference and residual leakage."""

    omega0: float = TWO_PI * 6.16e9
    delta: float = 0.0
    leakage: float = 0.0

    def __post_init__(self):
        if not self.omega0 > 0.0:
            raise ValueError(f"omega0 must be > 0, got {self.omega0}")
        if not self.leakage >= 0.0:
            raise ValueError(f"leakage must be >= 0, got {self.leakage}")

    @property
    def f0(self) -> float:
        return self.omega0 / TWO_PI


@dataclass(frozen=True)
class DutResponse:
    """Amplitude factor ``xi`` and phase shift ``phi`` seen by the probe sideband."""

    xi: float
    phi: float = 0.0

    def __post_init__(self):
        if not self.xi >= 0.0:
            raise ValueError(f"xi must be >= 0, got {self.xi}")

    @property
    def rho(self) -> complex:
        return self.xi * complex(math.cos(self.phi), math.sin(self.phi))

    @classmethod
    def from_complex(cls, rho: complex) -> DutResponse:
        return cls(xi=abs(rho), phi=math.atan2(rho.imag, rho.real))


@dataclass(frozen=True)
class InterferencePoint:
    b1: float
    beta1: float
    b2: float
    beta2: float

    @property
    def reference(self) -> complex:
        return self.b1 * complex(math.cos(self.beta1), math.sin(self.beta1))

    @property
    def probe(self) -> complex:
        return self.b2 * complex(math.cos(self.beta2), math.sin(self.beta2))

    @property
    def phasor(self) -> complex:
        return self.reference + self.probe


@dataclass(frozen=True)
class DemodOutput:
    x: float
    y: float

    @property
    def complex(self) -> complex:
        return complex(self.x, self.y)

    @property
    def amplitude(self) -> float:
        return math.hypot(self.x, self.y)

    @classmethod
    def from_complex(cls, s: complex) -> DemodOutput:
        return cls(float(s.real), float(s.imag))


# -- array kernels -----------------------------------------------------------
# These broadcast over numpy arrays; the dataclass API below wraps them.


def reference_term(a1, a2, alpha1, alpha2, delta):
    """Complex reference term ``b1 e^{i beta1}``."""
    return (a1 * np.exp(1j * alpha1) + a2 * np.exp(1j * alpha2)) * np.exp(1j * delta)


def probe_term(a1, a2, alpha1, alpha2, delta, rho):
    """Complex probe term ``b2 e^{i beta2}`` for complex response ``rho``."""
    return rho * (a1 * np.exp(1j * alpha1) - a2 * np.exp(1j * alpha2)) * np.exp(-1j * delta)


def output_phasor(a1, a2, alpha1, alpha2, delta, xi, phi):
    """Four-term output sum, evaluated term by term."""
    return (
        a1 * np.exp(1j * (alpha1 + delta))
        + xi * a1 * np.exp(1j * (alpha1 + phi - delta))
        + a2 * np.exp(1j * (alpha2 + delta))
        - xi * a2 * np.exp(1j * (alpha2 + phi - delta))
    )


def interference_phasors(a1, a2, alpha1, alpha2, delta, xi, phi):
    """Return ``(b1, beta1, b2, beta2)`` arrays."""
    ref = a1 * np.exp(1j * alpha1) + a2 * np.exp(1j * alpha2)
    diff = a1 * np.exp(1j * alpha1) - a2 * np.exp(1j * alpha2)
    b1 = np.abs(ref)
    b2 = xi * np.abs(diff)
    beta1 = np.angle(ref) + delta
    beta2 = np.angle(diff) + phi - delta
    return b1, beta1, b2, beta2


def sideband_output(a1, a2, alpha1, alpha2, delta, probe_response, reference_response=1.0):
    """Output when both sidebands see a complex response.

    The probe sideband multiplies the probe term by ``probe_response``; the
    reference sideband is conjugated by the down-conversion, so its response
    enters as ``conj(reference_response)``. With ``reference_response=1`` this
    is exactly the four-term output with ``rho = probe_response``.
    """
    return np.conj(reference_response) * reference_term(a1, a2, alpha1, alpha2, delta) + probe_term(
        a1, a2, alpha1, alpha2, delta, probe_response
    )


# -- dataclass API -----------------------------------------------------------


def eval_output(mod: ModulationSettings, carrier: CarrierSettings, dut: DutResponse) -> DemodOutput:
    s = output_phasor(mod.a1, mod.a2, mod.alpha1, mod.alpha2, carrier.delta, dut.xi, dut.phi)
    return DemodOutput.from_complex(complex(s))


def interference_terms(
    mod: ModulationSettings, carrier: CarrierSettings, dut: DutResponse
) -> InterferencePoint:
    b1, beta1, b2, beta2 = interference_phasors(
        mod.a1, mod.a2, mod.alpha1, mod.alpha2, carrier.delta, dut.xi, dut.phi
    )
    return InterferencePoint(float(b1), float(beta1), float(b2), float(beta2))


class BalanceSolution(NamedTuple):
    cos_dalpha: float
    branches: tuple[float, float]  # (+dalpha, -dalpha), dalpha = alpha1 - alpha2


def solve_balance(a1: float, a2: float, xi: float) -> BalanceSolution:
    """Phase difference ``alpha1 - alpha2`` for which ``b1 == b2``.

    Raises
    ------
    NoSolution
        If the required cosine lies outside [-1, 1].
    """
    if not (a1 > 0 and a2 > 0):
        raise ValueError("a1 and a2 must be > 0")
    if xi < 0:
        raise ValueError("xi must be >= 0")
    c = (xi**2 - 1.0) * (a1**2 + a2**2) / ((1.0 + xi**2) * 2.0 * a1 * a2)
    if abs(c) > 1.0:
        raise NoSolution(
            f"balance needs cos(alpha1-alpha2)={c:.4g}, outside [-1, 1] for a1={a1}, a2={a2}, xi={xi}"
        )
    dalpha = math.acos(c)
    return BalanceSolution(c, (dalpha, -dalpha))


class OperatingPoint(NamedTuple):
    a2: float
    alpha2: float
    delta: float

    def settings(
        self, a1: float, alpha1: float, omega_s: float = TWO_PI * 10e6, omega0: float = TWO_PI * 6.16e9
    ) -> tuple[ModulationSettings, CarrierSettings]:
        return (
            ModulationSettings(a1, self.a2, alpha1, self.alpha2, omega_s),
            CarrierSettings(omega0, self.delta),
        )


def _target_phase(mode: Mode) -> float:
    if mode == "constructive":
        return 0.0
    if mode == "destructive":
        return math.pi
    raise ValueError(f"unknown mode {mode!r}")


def _operating_residual(a1, alpha1, a2, alpha2, delta, dut, target):
    b1, beta1, b2, beta2 = interference_phasors(a1, a2, alpha1, alpha2, delta, dut.xi, dut.phi)
    return abs(b1 - b2) / b1, abs(float(wrap_pi(beta1 - beta2 - target)))


def settings_for_output(
    a1: float, alpha1: float, carrier: CarrierSettings, dut: DutResponse, target: complex
) -> tuple[float, float]:
    """Return ``(a2, alpha2)`` that put the output at ``target`` (volts, complex).

    The output is affine in ``z = a2 e^{i alpha2}`` at fixed (a1, alpha1,
    delta), so the inverse is closed form.
    """
    ed = complex(math.cos(carrier.delta), math.sin(carrier.delta))
    rho = dut.rho
    c1 = a1 * complex(math.cos(alpha1), math.sin(alpha1))
    offset = c1 * (ed + rho / ed)
    gain = ed - rho / ed
    if abs(gain) < 1e-15:
        raise NoSolution("output does not depend on a2, alpha2 at this delta")
    z = (target - offset) / gain
    return abs(z), _wrap_2pi(math.atan2(z.imag, z.real))


def solve_operating_point(
    a1: float,
    alpha1: float,
    dut: DutResponse,
    mode: Mode = "destructive",
    *,
    a2: float | None = None,
    delta: float | None = None,
    polish: bool = True,
    tol: float = 1e-12,
) -> OperatingPoint:
    """Find ``(a2, alpha2, delta)`` giving balanced constructive/destructive interference.

    With ``delta=None`` (default), ``a2`` is fixed (defaults to ``a1``), the
    phase difference comes from :func:`solve_balance` and ``delta`` is chosen to
    align the two terms; of the two balance branches the one with ``alpha2`` in
    [0, pi) is returned. With ``delta`` given (a carrier phase that cannot be
    tuned) the unique ``(a2, alpha2)`` is solved in closed form instead.
    """
    if not a1 > 0:
        raise ValueError("a1 must be > 0")
    if not dut.xi > 0:
        raise ValueError("dut.xi must be > 0")
    target = _target_phase(mode)

    if delta is not None:
        rho_eff = dut.rho * complex(math.cos(-2 * delta), math.sin(-2 * delta))
        sign = 1.0 if mode == "destructive" else -1.0
        den = 1.0 - sign * rho_eff
        if abs(den) < 1e-15:
            raise NoSolution(f"no {mode} point at delta={delta}")
        z = -a1 * complex(math.cos(alpha1), math.sin(alpha1)) * (1.0 + sign * rho_eff) / den
        return OperatingPoint(abs(z), _wrap_2pi(math.atan2(z.imag, z.real)), float(delta))

    a2 = a1 if a2 is None else a2
    balance = solve_balance(a1, a2, dut.xi)
    candidates = [_wrap_2pi(alpha1 - d) for d in balance.branches]
    preferred = [c for c in candidates if c < math.pi]
    alpha2 = preferred[0] if preferred else candidates[0]

    ref = a1 * complex(math.cos(alpha1), math.sin(alpha1)) + a2 * complex(math.cos(alpha2), math.sin(alpha2))
    diff = a1 * complex(math.cos(alpha1), math.sin(alpha1)) - a2 * complex(math.cos(alpha2), math.sin(alpha2))
    # beta1 - beta2 = arg(ref) - arg(diff) - phi + 2 delta
    raw = (target - math.atan2(ref.imag, ref.real) + math.atan2(diff.imag, diff.real) + dut.phi) / 2.0
    delta_out = float(wrap_pi(2.0 * raw) / 2.0)

    if polish:
        amp_res, phase_res = _operating_residual(a1, alpha1, a2, alpha2, delta_out, dut, target)
        if max(amp_res, phase_res) > tol:
            alpha2, delta_out = _polish(a1, alpha1, a2, alpha2, delta_out, dut, target, tol)
    return OperatingPoint(a2, alpha2, delta_out)


def _polish(a1, alpha1, a2, alpha2, delta, dut, target, tol):
    def cost(p):
        r_amp, r_phase = _operating_residual(a1, alpha1, a2, p[0], p[1], dut, target)
        return r_amp**2 + r_phase**2

    res = optimize.minimize(
        cost, [alpha2, delta], method="Nelder-Mead", options={"xatol": tol, "fatol": tol**2, "maxiter": 2000}
    )
    return _wrap_2pi(float(res.x[0])), float(res.x[1])


def ssb_settings(a1: float, alpha1: float, keep: Literal["probe", "reference"] = "probe") -> tuple[float, float]:
    """``(a2, alpha2)`` that cancel one sideband, leaving single-sideband detection.

    ``keep="probe"`` removes the reference sideband (b1 = 0), ``"reference"``
    removes the probe sideband (b2 = 0).
    """
    if keep == "probe":
        return a1, _wrap_2pi(alpha1 + math.pi)
    if keep == "reference":
        return a1, _wrap_2pi(alpha1)
    raise ValueError(f"keep must be 'probe' or 'reference', got {keep!r}")


def apply_common_noise(
    mod: ModulationSettings, carrier: CarrierSettings, eps_amp: float, theta_phase: float
) -> tuple[ModulationSettings, CarrierSettings]:
    """Scale both modulation amplitudes by ``1 + eps_amp`` and shift ``delta`` by ``theta_phase``."""
    if not eps_amp > -1.0:
        raise ValueError("eps_amp must be > -1")
    scale = 1.0 + eps_amp
    return (
        dataclasses.replace(mod, a1=mod.a1 * scale, a2=mod.a2 * scale),
        dataclasses.replace(carrier, delta=carrier.delta + theta_phase),
    )


def delta_s(
    mod: ModulationSettings,
    carrier: CarrierSettings,
    dut: DutResponse,
    eps_amp: float = 0.0,
    theta_phase: float = 0.0,
) -> float:
    """Magnitude of the output change under a common-mode perturbation."""
    nominal = eval_output(mod, carrier, dut).complex
    perturbed = eval_output(*apply_common_noise(mod, carrier, eps_amp, theta_phase), dut).complex
    return abs(perturbed - nominal)


def _perturbation(kind: Perturbation, magnitude: float | None) -> tuple[float, float]:
    if kind == "amplitude":
        return (AMPLITUDE_STEP if magnitude is None else magnitude), 0.0
    if kind == "phase":
        return 0.0, (PHASE_STEP if magnitude is None else magnitude)
    raise ValueError(f"perturbation must be 'amplitude' or 'phase', got {kind!r}")


def _delta_s_kernel(a1, a2, alpha1, alpha2, delta, rho, eps, theta):
    ref = reference_term(a1, a2, alpha1, alpha2, delta)
    prb = probe_term(a1, a2, alpha1, alpha2, delta, rho)
    nominal = ref + prb
    perturbed = (1.0 + eps) * (ref * np.exp(1j * theta) + prb * np.exp(-1j * theta))
    return nominal, np.abs(perturbed - nominal)


@dataclass
class SensitivityMap:
    a2: np.ndarray
    alpha2: np.ndarray
    x: np.ndarray  # nominal working point, shape (len(a2), len(alpha2))
    y: np.ndarray
    delta_s: np.ndarray
    perturbation: str
    magnitude: float


def sensitivity_map(
    a1: float,
    alpha1: float,
    carrier: CarrierSettings,
    dut: DutResponse,
    a2_grid,
    alpha2_grid,
    perturbation: Perturbation = "amplitude",
    magnitude: float | None = None,
) -> SensitivityMap:
    """Common-mode sensitivity over a grid of (a2, alpha2) at fixed (a1, alpha1)."""
    a2_grid = np.asarray(a2_grid, dtype=float)
    alpha2_grid = np.asarray(alpha2_grid, dtype=float)
    if a2_grid.size == 0 or alpha2_grid.size == 0:
        raise ValueError("grids must be non-empty")
    eps, theta = _perturbation(perturbation, magnitude)
    A2, AL2 = np.meshgrid(a2_grid, alpha2_grid, indexing="ij")
    nominal, ds = _delta_s_kernel(a1, A2, alpha1, AL2, carrier.delta, dut.rho, eps, theta)
    return SensitivityMap(a2_grid, alpha2_grid, nominal.real, nominal.imag, ds, perturbation, eps or theta)


@dataclass
class Linecut:
    offset: np.ndarray  # signed distance from the cut centre in the IQ plane (V)
    x: np.ndarray
    y: np.ndarray
    a2: np.ndarray
    alpha2: np.ndarray
    delta_s: np.ndarray


def linecut(
    a1: float,
    alpha1: float,
    carrier: CarrierSettings,
    dut: DutResponse,
    through: complex,
    offsets,
    direction: complex = 1.0,
    perturbation: Perturbation = "amplitude",
    magnitude: float | None = None,
) -> Linecut:
    """Sensitivity along a straight line of working points in the IQ plane.

    Each point ``through + offset * direction/|direction|`` is realized by
    solving for (a2, alpha2) in closed form.
    """
    offsets = np.asarray(offsets, dtype=float)
    unit = complex(direction) / abs(direction)
    targets = through + offsets * unit
    settings = [settings_for_output(a1, alpha1, carrier, dut, complex(t)) for t in targets]
    a2 = np.array([s[0] for s in settings])
    alpha2 = np.array([s[1] for s in settings])
    eps, theta = _perturbation(perturbation, magnitude)
    nominal, ds = _delta_s_kernel(a1, a2, alpha1, alpha2, carrier.delta, dut.rho, eps, theta)
    return Linecut(offsets, nominal.real, nominal.imag, a2, alpha2, ds)


class VeeFit(NamedTuple):
    slope_left: float
    slope_right: float
    r2_left: float
    r2_right: float

    @property
    def asymmetry(self) -> float:
        return abs(self.slope_left - self.slope_right) / max(self.slope_left, self.slope_right)


def vee_fit(offset, ds) -> VeeFit:
    """Fit ``ds = slope * |offset| + c`` separately on each side of zero."""
    offset = np.asarray(offset, dtype=float)
    ds = np.asarray(ds, dtype=float)

    def branch(mask):
        d = np.abs(offset[mask])
        v = ds[mask]
        slope, icpt = np.polyfit(d, v, 1)
        ss_res = np.sum((v - (slope * d + icpt)) ** 2)
        ss_tot = np.sum((v - v.mean()) ** 2)
        return float(slope), float(1.0 - ss_res / ss_tot) if ss_tot > 0 else 1.0

    sl, rl = branch(offset < 0)
    sr, rr = branch(offset > 0)
    return VeeFit(sl, sr, rl, rr)
