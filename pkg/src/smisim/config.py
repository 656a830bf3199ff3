"""Experiment configuration: schema, parsing and the resolved form.

The file grammar is INI (``configparser``, no interpolation): ``[section]``
headers followed by ``key = value`` lines, ``#`` or ``;`` comments. Every
section and key is optional and falls back to the default below; anything
not in the schema is an error. JSON with the same two-level nesting is
accepted as well (chosen by a ``.json`` suffix).

Booleans accept ``true/false/yes/no/on/off/1/0``. ``noise.rts`` lists
telegraph components as ``delta_f:corner[:p_up]`` separated by commas
(e.g. ``3000:0.02, 1500:0.3:0.2``); in JSON it may also be a list of
``[delta_f, corner, p_up]`` triples. ``nan`` for a frequency means "derive
it from the resonator".
"""

from __future__ import annotations

import configparser
import copy
import io
import json
import math
from pathlib import Path

from .engine import BandsConfig, ConfigError, MixerModel, digest
from .noise import CommonModeSpec, FlickerParams, NoiseSpec, RtsParams, WhiteParams
from .protocol import ProtocolConfig
from .resonator import ResonatorParams

NAN = float("nan")

# section -> key -> default; the default's type is the key's type
SCHEMA: dict[str, dict[str, object]] = {
    "run": {"seed": 0, "compress": 1.0, "format": "csv"},
    "modulation": {
        "a1_v": 10e-3,
        "alpha1_deg": 330.0,
        "mode": "destructive",  # ssb | destructive | constructive | manual
        "a2_v": 10e-3,  # manual mode only
        "alpha2_deg": 150.0,  # manual mode only
        "fs_hz": 10e6,
        "dc_i_v": 0.0,
        "dc_q_v": 0.0,
    },
    "carrier": {"f0_hz": NAN, "offset_linewidths": 0.0, "delta_rad": 0.0},
    "resonator": {
        "fr_hz": 6.16e9,
        "qc": 9.8e3,
        "qi": 5e4,
        "ql": 8.0e3,  # 0 derives it from qc and qi
        "zr_ohm": 316.0,
        "phi0_rad": 0.0,
        "tau_d_s": 0.0,
        "bg_amp": 1.0,
    },
    "readout": {"gain_abs": 1.0, "gain_phase_rad": 0.0, "psd_v2_hz": 0.0, "reading_noise_v": 0.0},
    "noise": {"rts": "", "flicker_ap_hz2": 0.0, "flicker_fmin_hz": 1e-4, "flicker_fmax_hz": 0.0, "white_hz2_hz": 0.0},
    "common": {"kind": "amplitude", "model": "sine", "magnitude": 0.0, "frequency_hz": 0.1, "step_time_s": 0.0},
    "bands": {"f_sample_hz": 100.0, "tau_lockin_s": 10e-3, "filter_order": 4, "oversample": 20},
    "sweep": {"center_hz": NAN, "span_linewidths": 8.0, "points": 801},
    "map": {
        "perturbation": "amplitude",
        "magnitude": 0.01,
        "a2_max_v": 40e-3,
        "a2_points": 121,
        "alpha2_points": 144,
        "linecut": True,
        "linecut_span_v": 2e-3,
        "linecut_points": 81,
    },
    "monitor": {
        "duration_s": 600.0,
        "bins_per_decade": 10,
        "mixture_k": 3,
        "histogram_bins": 200,
        "band_lo_hz": 0.0,
        "band_hi_hz": 0.0,
        "exclude_lo_hz": 0.0,
        "exclude_hi_hz": 0.0,
        "calibration_points": 401,
    },
    "protocol": {
        "window_lo_hz": 6.15e9,
        "window_hi_hz": 6.17e9,
        "n_coarse": 801,
        "n_fine": 401,
        "dip_snr": 5.0,
        "balance_target": 1e-4,
        "balance_max_evals": 100,
        "null_tol": 1e-4,
        "null_max_evals": 2000,
        "switch": False,
        "constructive": False,
        "phase_step_rad": 0.1,
        "mixer_dc_i_v": 0.0,
        "mixer_dc_q_v": 0.0,
        "mixer_k": 1.0,
    },
    "analyze": {"input": "", "column": ""},
}

CHOICES = {
    ("run", "format"): ("csv", "json"),
    ("modulation", "mode"): ("ssb", "destructive", "constructive", "manual"),
    ("common", "kind"): ("amplitude", "phase"),
    ("common", "model"): ("sine", "random-walk", "step"),
    ("map", "perturbation"): ("amplitude", "phase"),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def defaults() -> dict:
    return copy.deepcopy(SCHEMA)


def _coerce(section: str, key: str, value):
    default = SCHEMA[section][key]
    where = f"[{section}] {key}"
    if section == "noise" and key == "rts" and isinstance(value, list):
        value = ", ".join(":".join(repr(float(v)) for v in item) for item in value)
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                out = value
            elif str(value).strip().lower() in _TRUE:
                out = True
            elif str(value).strip().lower() in _FALSE:
                out = False
            else:
                raise ValueError(value)
        elif isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            out = int(value) if not isinstance(value, str) else int(value.strip())
        elif isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError(value)
            out = float(value)
        else:
            if not isinstance(value, str):
                raise ValueError(value)
            out = value.strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot read {value!r} as {type(default).__name__}") from None
    allowed = CHOICES.get((section, key))
    if allowed is not None and out not in allowed:
        raise ConfigError(f"{where}: {out!r} is not one of {', '.join(allowed)}")
    return out


def merge(base: dict, overrides: dict) -> dict:
    """Apply ``{section: {key: value}}`` onto ``base`` with schema checks."""
    out = copy.deepcopy(base)
    for section, items in overrides.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(items, dict):
            raise ConfigError(f"[{section}] must be a table of keys")
        for key, value in items.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            out[section][key] = _coerce(section, key, value)
    return out


def parse_text(text: str, fmt: str = "ini") -> dict:
    """Parse config text into ``{section: {key: raw value}}``."""
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object of sections")
        return data
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case so typos are caught rather than folded
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config syntax: {exc}") from None
    if cp.defaults():
        raise ConfigError("keys outside a section are not allowed")
    return {s: dict(cp.items(s)) for s in cp.sections()}


def load(path: str | Path | None) -> dict:
    """Read and validate a config file; ``None`` gives the defaults."""
    if path is None:
        return defaults()
    path = Path(path)
    text = path.read_text()  # OSError propagates to the caller
    return merge(defaults(), parse_text(text, "json" if path.suffix.lower() == ".json" else "ini"))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_ini(cfg: dict) -> str:
    """Resolved config in the input grammar; reading it back gives ``cfg``."""
    buf = io.StringIO()
    for section in SCHEMA:
        buf.write(f"[{section}]\n")
        for key in SCHEMA[section]:
            buf.write(f"{key} = {_fmt(cfg[section][key])}\n")
        buf.write("\n")
    return buf.getvalue()


def config_digest(cfg: dict) -> str:
    # nan is not valid JSON; encode floats by repr so the digest sees them exactly
    return digest({s: {k: _fmt(v) for k, v in cfg[s].items()} for s in SCHEMA})


# -- builders ------------------------------------------------------------------


def parse_rts(text: str) -> tuple[RtsParams, ...]:
    out = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        parts = item.split(":")
        if len(parts) not in (2, 3):
            raise ConfigError(f"[noise] rts: expected delta_f:corner[:p_up], got {item!r}")
        try:
            nums = [float(p) for p in parts]
            out.append(RtsParams.from_corner(*nums))
        except ValueError as exc:
            raise ConfigError(f"[noise] rts: {item!r}: {exc}") from None
    return tuple(out)


def _build(section: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def resonator(cfg: dict) -> ResonatorParams:
    r = cfg["resonator"]
    return _build(
        "resonator",
        ResonatorParams,
        fr=r["fr_hz"],
        Qc=r["qc"],
        Qi=r["qi"],
        Ql=r["ql"] or None,
        Zr=r["zr_ohm"],
        phi0=r["phi0_rad"],
        tau_d=r["tau_d_s"],
        bg_amp=r["bg_amp"],
    )


def noise(cfg: dict) -> NoiseSpec:
    n = cfg["noise"]
    fl = _build("noise", FlickerParams, n["flicker_ap_hz2"], n["flicker_fmin_hz"], n["flicker_fmax_hz"] or None)
    wh = _build("noise", WhiteParams, n["white_hz2_hz"])
    return NoiseSpec(parse_rts(n["rts"]), fl, wh, cfg["run"]["seed"])


def common(cfg: dict) -> CommonModeSpec | None:
    c = cfg["common"]
    if c["magnitude"] == 0:
        return None
    return _build("common", CommonModeSpec, c["kind"], c["model"], c["magnitude"], c["frequency_hz"], c["step_time_s"])


def bands(cfg: dict) -> BandsConfig:
    b = cfg["bands"]
    return _build("bands", BandsConfig, b["f_sample_hz"], b["tau_lockin_s"], b["filter_order"], b["oversample"])


def gain(cfg: dict) -> complex:
    r = cfg["readout"]
    return r["gain_abs"] * complex(math.cos(r["gain_phase_rad"]), math.sin(r["gain_phase_rad"]))


def mixer(cfg: dict) -> MixerModel:
    p = cfg["protocol"]
    return _build("protocol", MixerModel, p["mixer_dc_i_v"], p["mixer_dc_q_v"], p["mixer_k"])


def protocol(cfg: dict) -> ProtocolConfig:
    p, m = cfg["protocol"], cfg["modulation"]
    return _build(
        "protocol",
        ProtocolConfig,
        a1=m["a1_v"],
        alpha1=math.radians(m["alpha1_deg"]),
        fs=m["fs_hz"],
        delta=cfg["carrier"]["delta_rad"],
        window=(p["window_lo_hz"], p["window_hi_hz"]),
        n_coarse=p["n_coarse"],
        n_fine=p["n_fine"],
        dip_snr=p["dip_snr"],
        operating_offset=cfg["carrier"]["offset_linewidths"],
        balance_target=p["balance_target"],
        balance_max_evals=p["balance_max_evals"],
        null_tol=p["null_tol"],
        null_max_evals=p["null_max_evals"],
        switch=p["switch"],
        constructive=p["constructive"],
        phase_step=p["phase_step_rad"],
    )


def validate(cfg: dict) -> None:
    """Build every component once so a bad value fails before any work."""
    resonator(cfg)
    noise(cfg)
    common(cfg)
    bands(cfg)
    mixer(cfg)
    protocol(cfg)
    if not cfg["run"]["compress"] > 0:
        raise ConfigError("[run] compress must be > 0")
    if not cfg["modulation"]["a1_v"] > 0:
        raise ConfigError("[modulation] a1_v must be > 0")
    if not cfg["monitor"]["duration_s"] > 0:
        raise ConfigError("[monitor] duration_s must be > 0")
    for sec, key in (("sweep", "points"), ("map", "a2_points"), ("map", "alpha2_points"), ("map", "linecut_points")):
        if cfg[sec][key] < 2:
            raise ConfigError(f"[{sec}] {key} must be >= 2")
