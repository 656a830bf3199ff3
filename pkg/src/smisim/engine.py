"""Time-stepped baseband simulation of the interferometric readout.

The RF carrier is never sampled: each internal step evaluates the
demodulated two-sideband output for the instantaneous resonator state and
common-mode disturbance, and a lock-in low-pass filter integrates it. The
filtered stream is decimated to the output sampling rate.

Bandwidths, in the usual hierarchy: the sampling rate ``f_sample`` sets the
output grid, the lock-in time constant ``tau_lockin`` the measurement
bandwidth, and both sit far below the sideband spacing.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, special

from smisim import __version__
from smisim.constants import PRNG_ID
from smisim.noise import CommonModeSpec, NoiseSpec, make_rng, stream_from_spec
from smisim.noise import compose as compose_noise
from smisim.phasor import CarrierSettings, ModulationSettings, probe_term, reference_term
from smisim.resonator import ResonatorParams, SpectroscopyTrace, background, notch
from smisim.trace import FrequencyTrace

READOUT_KEY = (4,)
MEASURE_KEY = (5,)
CHUNK = 1 << 18


class ConfigError(ValueError):
    pass


# -- lock-in filter ----------------------------------------------------------


@dataclass(frozen=True)
class BandsConfig:
    """Sampling and lock-in settings.

    Each of the ``filter_order`` identical stages has time constant
    ``tau_lockin``, so a first-order filter steps as ``1 - exp(-t/tau)``.
    """

    f_sample: float = 100.0
    tau_lockin: float = 10e-3
    filter_order: int = 4
    oversample: int = 20  # internal steps per tau_lockin, at least

    def __post_init__(self):
        if not (self.f_sample > 0 and math.isfinite(self.f_sample)):
            raise ConfigError("f_sample must be > 0")
        if not (self.tau_lockin > 0 and math.isfinite(self.tau_lockin)):
            raise ConfigError("tau_lockin must be > 0")
        if not (isinstance(self.filter_order, (int, np.integer)) and 1 <= self.filter_order <= 8):
            raise ConfigError("filter_order must be an integer in [1, 8]")
        if self.oversample < 10:
            raise ConfigError("oversample must be >= 10 (internal step <= tau/10)")
        if self.f_sample * self.tau_lockin > 1.0:
            warnings.warn(
                f"f_sample={self.f_sample} Hz exceeds 1/tau_lockin; output samples are correlated",
                stacklevel=2,
            )

    @property
    def decimation(self) -> int:
        return max(1, math.ceil(self.oversample / (self.f_sample * self.tau_lockin)))

    @property
    def dt_internal(self) -> float:
        return 1.0 / (self.f_sample * self.decimation)

    @property
    def mbw_note(self) -> float:
        """Equivalent noise bandwidth of the filter (Hz)."""
        n = self.filter_order
        return float(special.gamma(n - 0.5) / (4 * math.sqrt(math.pi) * self.tau_lockin * special.gamma(n)))

    @property
    def f_3db(self) -> float:
        return math.sqrt(2 ** (1 / self.filter_order) - 1) / (2 * math.pi * self.tau_lockin)

    def alias_rejection_db(self) -> float:
        """Filter attenuation at the output Nyquist frequency (dB, positive)."""
        h = lockin_transfer(self.f_sample / 2, self.tau_lockin, self.filter_order, self.dt_internal)
        return float(-20 * math.log10(abs(h)))

    def compressed(self, factor: float) -> BandsConfig:
        return dataclasses.replace(self, f_sample=self.f_sample * factor, tau_lockin=self.tau_lockin / factor)


def _stage_coeffs(tau: float, dt: float):
    a = math.exp(-dt / tau)
    return np.array([0.0, 1.0 - a]), np.array([1.0, -a])


def lockin_transfer(f, tau: float, order: int, dt: float):
    """Complex transfer function of the discrete filter at frequency ``f``."""
    b, a = _stage_coeffs(tau, dt)
    _, h = signal.freqz(b, a, worN=np.atleast_1d(np.asarray(f, dtype=float)), fs=1.0 / dt)
    h = h**order
    return h[0] if np.ndim(f) == 0 else h


class LockinFilter:
    """Stateful cascade of zero-order-hold one-pole stages.

    Per stage ``y[n] = a y[n-1] + (1 - a) x[n-1]`` with ``a = exp(-dt/tau)``;
    DC gain is exactly one. State starts at zero.
    """

    def __init__(self, tau: float, order: int, dt: float):
        if not tau > 0:
            raise ValueError("tau must be > 0")
        if not dt > 0:
            raise ValueError("dt must be > 0")
        self.b, self.a = _stage_coeffs(tau, dt)
        self.order = int(order)
        self.zi = [np.zeros(1, dtype=complex) for _ in range(self.order)]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        y = np.asarray(x, dtype=complex)
        for k in range(self.order):
            y, self.zi[k] = signal.lfilter(self.b, self.a, y, zi=self.zi[k])
        return y


def lockin_filter(samples, tau: float, order: int, dt: float) -> np.ndarray:
    """Filter a complete stream from rest; real input gives real output."""
    x = np.asarray(samples)
    y = LockinFilter(tau, order, dt)(x)
    return y.real if not np.iscomplexobj(x) else y


# -- mixer leakage -----------------------------------------------------------


@dataclass(frozen=True)
class MixerModel:
    """Hidden DC offsets and leakage gain of a simulated IQ mixer.

    The residual carrier is ``hypot(k |dc - dc*|, floor * a_sideband)``: linear
    in the offset error away from the optimum and ``floor`` (relative to the
    sideband amplitude) at it.
    """

    dc_i_true: float = 0.0
    dc_q_true: float = 0.0
    k: float = 1.0
    floor: float = 1e-5

    @classmethod
    def random(cls, seed: int, span: float = 50e-3, **kw) -> MixerModel:
        r = make_rng(seed, (6,)).uniform(-span, span, 2)
        return cls(float(r[0]), float(r[1]), **kw)


def carrier_leakage_signal(dc_i, dc_q, model: MixerModel, a_sideband: float = 1.0):
    """Residual carrier amplitude at the mixer output; broadcasts."""
    err = np.hypot(np.asarray(dc_i) - model.dc_i_true, np.asarray(dc_q) - model.dc_q_true)
    return np.hypot(model.k * err, model.floor * a_sideband)


# -- time-domain run ---------------------------------------------------------


@dataclass
class RunResult:
    x: FrequencyTrace
    y: FrequencyTrace
    truth: FrequencyTrace  # injected detuning at the output sample times
    truth_filtered: FrequencyTrace  # the same passed through the lock-in filter
    manifest: dict = field(default_factory=dict)

    @property
    def iq(self) -> np.ndarray:
        return self.x.values + 1j * self.y.values


def digest(obj) -> str:
    """SHA-256 of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(o):
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _check_rates(noise: NoiseSpec, common: CommonModeSpec | None, bands: BandsConfig, duration: float):
    if not (duration > 0 and math.isfinite(duration)):
        raise ConfigError("duration must be > 0")
    if duration < 1.0 / bands.f_sample:
        raise ConfigError("duration shorter than one output sample")
    nyq = 0.5 / bands.dt_internal
    for i, r in enumerate(noise.rts_list):
        if r.corner_frequency > nyq:
            raise ConfigError(f"telegraph component {i}: corner {r.corner_frequency:.3g} Hz above internal Nyquist")
    if common is not None and common.model == "sine" and common.frequency >= nyq:
        raise ConfigError("common-mode frequency above internal Nyquist")


def run(
    mod: ModulationSettings,
    carrier: CarrierSettings,
    resonator: ResonatorParams,
    noise: NoiseSpec,
    common: CommonModeSpec | None,
    bands: BandsConfig,
    duration: float,
    *,
    readout_psd: float = 0.0,
    gain: complex = 1.0,
    qi_factor: float = 1.0,
) -> RunResult:
    """Simulate ``duration`` seconds of lock-in output.

    ``noise`` drives the resonance shift, ``common`` the shared amplitude and
    phase of both sidebands, and ``readout_psd`` (V^2/Hz per quadrature) adds
    white amplifier noise before the filter. All randomness derives from
    ``noise.seed``.
    """
    _check_rates(noise, common, bands, duration)
    dt = bands.dt_internal
    dec = bands.decimation
    n_out = int(round(duration * bands.f_sample))
    n_int = n_out * dec

    detuning = compose_noise(noise, n_int, dt).values
    if common is not None:
        eps, theta = stream_from_spec(common, n_int, dt, noise.seed)
    else:
        eps = theta = None
    readout = None
    if readout_psd > 0:
        sigma = math.sqrt(readout_psd / (2 * dt))
        readout = sigma * make_rng(noise.seed, READOUT_KEY).standard_normal((n_int, 2))

    f_probe = carrier.f0 - mod.f_s
    f_ref = carrier.f0 + mod.f_s
    ref = complex(reference_term(mod.a1, mod.a2, mod.alpha1, mod.alpha2, carrier.delta))
    prb = complex(probe_term(mod.a1, mod.a2, mod.alpha1, mod.alpha2, carrier.delta, 1.0))
    bg_p = complex(background(resonator, f_probe))
    bg_r = complex(background(resonator, f_ref))

    filt = LockinFilter(bands.tau_lockin, bands.filter_order, dt)
    tfilt = LockinFilter(bands.tau_lockin, bands.filter_order, dt)
    out = np.empty(n_out, dtype=complex)
    tout = np.empty(n_out)
    for start in range(0, n_int, CHUNK * dec):
        sl = slice(start, min(n_int, start + CHUNK * dec))
        dr = detuning[sl]
        s_p = bg_p * notch(resonator, f_probe, dr, qi_factor)
        s_r = bg_r * notch(resonator, f_ref, dr, qi_factor)
        rt, pt = np.conj(s_r) * ref, s_p * prb
        if eps is not None:
            rot = np.exp(1j * theta[sl])
            rt, pt = rt * rot, pt * np.conj(rot)
            s = (1.0 + eps[sl]) * (rt + pt)
        else:
            s = rt + pt
        s = gain * s
        if readout is not None:
            s = s + readout[sl, 0] + 1j * readout[sl, 1]
        y = filt(s)
        ty = tfilt(dr).real
        k0 = start // dec
        out[k0 : k0 + y[::dec].size] = y[::dec]
        tout[k0 : k0 + ty[::dec].size] = ty[::dec]

    dto = 1.0 / bands.f_sample
    manifest = {
        "version": __version__,
        "prng": PRNG_ID,
        "seed": int(noise.seed),
        "dt_internal_s": dt,
        "decimation": dec,
        "mbw_hz": bands.mbw_note,
        "alias_rejection_db": bands.alias_rejection_db(),
    }
    manifest["digest"] = digest(
        {
            "mod": mod,
            "carrier": carrier,
            "resonator": resonator,
            "noise": noise,
            "common": common,
            "bands": bands,
            "duration": duration,
            "readout_psd": readout_psd,
            "gain": [complex(gain).real, complex(gain).imag],
            "qi_factor": qi_factor,
        }
    )
    meta = {"seed": int(noise.seed), "digest": manifest["digest"]}
    return RunResult(
        FrequencyTrace(0.0, dto, out.real, dict(meta, column="x_v")),
        FrequencyTrace(0.0, dto, out.imag, dict(meta, column="y_v")),
        FrequencyTrace(0.0, dto, detuning[::dec].copy(), dict(meta, column="truth_delta_f_hz")),
        FrequencyTrace(0.0, dto, tout, dict(meta, column="truth_filtered_hz")),
        manifest,
    )


# -- instrument handle for the calibration protocol -------------------------


class Interferometer:
    """Quasi-static instrument: settings in, one noisy lock-in reading out.

    Wraps a resonator (or ``None`` for a bare feedline), a hidden mixer and
    additive readout noise of ``readout_noise`` V rms per quadrature. Every
    reading is counted; :meth:`reset` restores the counter and the noise
    stream so repeated protocol runs are identical.
    """

    def __init__(
        self,
        resonator: ResonatorParams | None,
        mixer: MixerModel = MixerModel(),
        readout_noise: float = 0.0,
        gain: complex = 1.0,
        seed: int = 0,
        delta_r: float = 0.0,
    ):
        if readout_noise < 0:
            raise ValueError("readout_noise must be >= 0")
        self.resonator = resonator
        self.mixer = mixer
        self.readout_noise = float(readout_noise)
        self.gain = complex(gain)
        self.seed = int(seed)
        self.delta_r = float(delta_r)
        self.reset()

    def reset(self):
        self.evaluations = 0
        self._rng = make_rng(self.seed, MEASURE_KEY)

    def _noise(self, shape):
        if self.readout_noise == 0:
            return np.zeros(shape, dtype=complex)
        z = self._rng.standard_normal(shape + (2,))
        return self.readout_noise * (z[..., 0] + 1j * z[..., 1])

    def response(self, mod: ModulationSettings, carrier: CarrierSettings, f0=None) -> np.ndarray:
        """Noise-free output; broadcasts over ``f0``."""
        f0 = carrier.f0 if f0 is None else np.asarray(f0, dtype=float)
        ref = reference_term(mod.a1, mod.a2, mod.alpha1, mod.alpha2, carrier.delta)
        prb = probe_term(mod.a1, mod.a2, mod.alpha1, mod.alpha2, carrier.delta, 1.0)
        if self.resonator is None:
            s_p = s_r = np.ones(np.shape(f0))
        else:
            r = self.resonator
            s_p = background(r, f0 - mod.f_s) * notch(r, f0 - mod.f_s, self.delta_r)
            s_r = background(r, f0 + mod.f_s) * notch(r, f0 + mod.f_s, self.delta_r)
        return self.gain * (np.conj(s_r) * ref + s_p * prb)

    def measure(self, mod: ModulationSettings, carrier: CarrierSettings) -> complex:
        self.evaluations += 1
        return complex(self.response(mod, carrier) + self._noise(()))

    def sweep(self, mod: ModulationSettings, carrier: CarrierSettings, f0) -> SpectroscopyTrace:
        f0 = np.asarray(f0, dtype=float)
        self.evaluations += f0.size
        s = np.broadcast_to(self.response(mod, carrier, f0), f0.shape) + self._noise(f0.shape)
        return SpectroscopyTrace(f0, s.real.copy(), s.imag.copy())

    def carrier_residual(self, mod: ModulationSettings) -> float:
        """Residual carrier amplitude, as seen by a spectrum analyser."""
        self.evaluations += 1
        return float(carrier_leakage_signal(mod.dc_i, mod.dc_q, self.mixer, max(mod.a1, mod.a2)))
