"""Seeded generators for resonator frequency noise and common-mode disturbances.

Frequency noise from two-level systems is modelled phenomenologically as a
sum of random telegraph signals (single dominant fluctuators), a 1/f
background and white measurement noise. All PSDs are one-sided.

Every generator draws from ``numpy.random.PCG64`` seeded through
``SeedSequence(seed, spawn_key=key)``. Component keys are fixed
(flicker ``(0,)``, white ``(1,)``, i-th telegraph ``(2, i)``), so adding a
component never changes the draws of the existing ones.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from smisim.constants import PRNG_ID
from smisim.trace import FrequencyTrace

FLICKER_KEY = (0,)
WHITE_KEY = (1,)
RTS_KEY = 2
COMMON_MODE_KEY = (3,)


def make_rng(seed: int, key: tuple[int, ...] = ()) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


@dataclass(frozen=True)
class RtsParams:
    """Two-state fluctuator: jump ``delta_f`` (Hz), rates 0->1 and 1->0 (1/s)."""

    delta_f: float
    rate_up: float
    rate_down: float

    def __post_init__(self):
        if not (self.rate_up > 0 and self.rate_down > 0):
            raise ValueError("switching rates must be > 0")
        if not math.isfinite(self.delta_f):
            raise ValueError("delta_f must be finite")

    @property
    def corner_frequency(self) -> float:
        return (self.rate_up + self.rate_down) / (2 * math.pi)

    @property
    def p_up(self) -> float:
        """Stationary probability of the shifted state."""
        return self.rate_up / (self.rate_up + self.rate_down)

    @classmethod
    def from_corner(cls, delta_f: float, f_corner: float, p_up: float = 0.5) -> RtsParams:
        total = 2 * math.pi * f_corner
        return cls(delta_f, total * p_up, total * (1 - p_up))


@dataclass(frozen=True)
class FlickerParams:
    """``S(f) = a_p / f`` between ``f_min`` and ``f_max`` (Hz^2/Hz)."""

    a_p: float
    f_min: float = 1e-4
    f_max: float | None = None

    def __post_init__(self):
        if not self.a_p >= 0:
            raise ValueError("a_p must be >= 0")
        if not self.f_min > 0:
            raise ValueError("f_min must be > 0")
        if self.f_max is not None and not self.f_max > self.f_min:
            raise ValueError("f_max must exceed f_min")


@dataclass(frozen=True)
class WhiteParams:
    psd_level: float = 0.0  # Hz^2/Hz

    def __post_init__(self):
        if not self.psd_level >= 0:
            raise ValueError("psd_level must be >= 0")


@dataclass(frozen=True)
class NoiseSpec:
    rts_list: tuple[RtsParams, ...] = ()
    flicker: FlickerParams = FlickerParams(0.0)
    white: WhiteParams = WhiteParams(0.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rts_list", tuple(self.rts_list))

    def compressed(self, factor: float) -> NoiseSpec:
        """Same process on a time axis shrunk by ``factor``.

        Rates and band edges scale up by ``factor``; the 1/f amplitude is
        scale free and the white level scales down, so every dimensionless
        statistic (in units of samples) is unchanged.
        """
        if not factor > 0:
            raise ValueError("compression factor must be > 0")
        rts = tuple(RtsParams(r.delta_f, r.rate_up * factor, r.rate_down * factor) for r in self.rts_list)
        fl = self.flicker
        flicker = FlickerParams(fl.a_p, fl.f_min * factor, None if fl.f_max is None else fl.f_max * factor)
        return dataclasses.replace(
            self, rts_list=rts, flicker=flicker, white=WhiteParams(self.white.psd_level / factor)
        )


def _check(n_samples: int, dt: float):
    if not n_samples > 0:
        raise ValueError("n_samples must be > 0")
    if not dt > 0:
        raise ValueError("dt must be > 0")


def _meta(kind: str, seed: int, key, **extra) -> dict:
    return {"generator": kind, "seed": int(seed), "key": list(key), "prng": PRNG_ID, **extra}


def gen_rts(p: RtsParams, n_samples: int, dt: float, seed: int, key=(RTS_KEY, 0)) -> FrequencyTrace:
    """Random telegraph signal with exact exponential dwell times, sampled every ``dt``."""
    _check(n_samples, dt)
    rng = make_rng(seed, key)
    t_end = n_samples * dt
    up = bool(rng.random() < p.p_up)
    # mean dwell times of the current and the other state, alternating
    scales = (1.0 / p.rate_down, 1.0 / p.rate_up) if up else (1.0 / p.rate_up, 1.0 / p.rate_down)
    cycle = scales[0] + scales[1]
    switches = []
    t_last = 0.0
    batch = int(min(max(64, 2.2 * t_end / cycle * 2 + 64), 4_000_000)) // 2 * 2
    while t_last <= t_end:
        dwell = rng.exponential(1.0, batch)
        dwell[0::2] *= scales[0]
        dwell[1::2] *= scales[1]
        times = t_last + np.cumsum(dwell)
        switches.append(times)
        t_last = times[-1]
    switch_times = np.concatenate(switches)
    t = np.arange(n_samples) * dt
    flips = np.searchsorted(switch_times, t, side="right")
    state = (flips % 2).astype(bool) ^ up
    values = np.where(state, p.delta_f, 0.0)
    return FrequencyTrace(0.0, dt, values, _meta("rts", seed, key, params=dataclasses.asdict(p)))


def flicker_shape(p: FlickerParams, freqs: np.ndarray) -> np.ndarray:
    """Target one-sided PSD used for spectral shaping (zero at DC)."""
    f = np.asarray(freqs, dtype=float)
    s = np.where(f > 0, p.a_p / np.maximum(f, p.f_min), 0.0)
    if p.f_max is not None:
        s = np.where(f > p.f_max, 0.0, s)
    return s


def gen_flicker(p: FlickerParams, n_samples: int, dt: float, seed: int, key=FLICKER_KEY) -> FrequencyTrace:
    """Gaussian 1/f noise by shaping the spectrum of white noise with one FFT.

    A unit-variance white sequence has one-sided PSD ``2 dt``, so its spectrum
    is multiplied by ``sqrt(S(f) / (2 dt))``. Below ``f_min`` the PSD is held at
    ``a_p / f_min``; above ``f_max`` (if given) it is zero.
    """
    _check(n_samples, dt)
    meta = _meta("flicker", seed, key, params=dataclasses.asdict(p))
    if p.a_p == 0:
        return FrequencyTrace(0.0, dt, np.zeros(n_samples), meta)
    rng = make_rng(seed, key)
    w = rng.standard_normal(n_samples)
    spec = np.fft.rfft(w)
    freqs = np.fft.rfftfreq(n_samples, dt)
    spec *= np.sqrt(flicker_shape(p, freqs) / (2.0 * dt))
    return FrequencyTrace(0.0, dt, np.fft.irfft(spec, n_samples), meta)


def gen_white(p: WhiteParams, n_samples: int, dt: float, seed: int, key=WHITE_KEY) -> FrequencyTrace:
    """I.i.d. Gaussian samples with variance ``psd_level / (2 dt)``."""
    _check(n_samples, dt)
    meta = _meta("white", seed, key, params=dataclasses.asdict(p))
    if p.psd_level == 0:
        return FrequencyTrace(0.0, dt, np.zeros(n_samples), meta)
    rng = make_rng(seed, key)
    sigma = math.sqrt(p.psd_level / (2.0 * dt))
    return FrequencyTrace(0.0, dt, sigma * rng.standard_normal(n_samples), meta)


def compose(spec: NoiseSpec, n_samples: int, dt: float) -> FrequencyTrace:
    """Sum of all components of ``spec``, added in a fixed order."""
    _check(n_samples, dt)
    total = gen_flicker(spec.flicker, n_samples, dt, spec.seed).values.copy()
    total += gen_white(spec.white, n_samples, dt, spec.seed).values
    for i, rts in enumerate(spec.rts_list):
        total += gen_rts(rts, n_samples, dt, spec.seed, key=(RTS_KEY, i)).values
    meta = {"generator": "compose", "seed": int(spec.seed), "prng": PRNG_ID, "n_rts": len(spec.rts_list)}
    return FrequencyTrace(0.0, dt, total, meta)


class CommonModeStream(NamedTuple):
    eps_amp: np.ndarray
    theta_phase: np.ndarray


@dataclass(frozen=True)
class CommonModeSpec:
    """Common-mode disturbance on the shared signal path.

    ``magnitude`` is the fractional amplitude (``kind="amplitude"``) or the
    phase in rad (``kind="phase"``). For ``model="random-walk"`` it is the
    diffusion per sqrt(second).
    """

    kind: Literal["amplitude", "phase"] = "amplitude"
    model: Literal["sine", "random-walk", "step"] = "sine"
    magnitude: float = 0.0
    frequency: float = 0.1  # Hz, sine only
    step_time: float = 0.0  # s, step only

    def __post_init__(self):
        if self.kind not in ("amplitude", "phase"):
            raise ValueError(f"kind must be 'amplitude' or 'phase', got {self.kind!r}")
        if self.model not in ("sine", "random-walk", "step"):
            raise ValueError(f"unknown model {self.model!r}")
        if not self.magnitude >= 0:
            raise ValueError("magnitude must be >= 0")


def common_mode_stream(
    kind: str,
    model: str,
    magnitude: float,
    n_samples: int,
    dt: float,
    seed: int = 0,
    *,
    frequency: float = 0.1,
    step_time: float = 0.0,
) -> CommonModeStream:
    """Per-sample ``(eps_amp, theta_phase)`` to feed :func:`smisim.phasor.apply_common_noise`."""
    spec = CommonModeSpec(kind, model, magnitude, frequency, step_time)
    return stream_from_spec(spec, n_samples, dt, seed)


def stream_from_spec(spec: CommonModeSpec, n_samples: int, dt: float, seed: int = 0) -> CommonModeStream:
    _check(n_samples, dt)
    t = np.arange(n_samples) * dt
    if spec.magnitude == 0:
        v = np.zeros(n_samples)
    elif spec.model == "sine":
        v = spec.magnitude * np.sin(2 * np.pi * spec.frequency * t)
    elif spec.model == "step":
        v = np.where(t >= spec.step_time, spec.magnitude, 0.0)
    else:
        steps = make_rng(seed, COMMON_MODE_KEY).standard_normal(n_samples) * spec.magnitude * math.sqrt(dt)
        steps[0] = 0.0
        v = np.cumsum(steps)
    zeros = np.zeros(n_samples)
    return CommonModeStream(v, zeros) if spec.kind == "amplitude" else CommonModeStream(zeros, v)
