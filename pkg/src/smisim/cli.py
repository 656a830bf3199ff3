"""Command-line front end.

Every subcommand writes into ``--out`` the resolved config
(``config.resolved.ini``), a ``manifest.json`` with digest, seed, version,
PRNG and the SHA-256 of each artifact, plus its own data files. Re-running
with ``--config <out>/config.resolved.ini`` reproduces the artifacts byte
for byte.

Exit codes: 0 success, 2 config error, 3 runtime or convergence error,
4 IO error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from . import analysis, config
from .constants import PRNG_ID
from .engine import ConfigError, Interferometer, run
from .noise import make_rng
from .phasor import NoSolution, linecut, sensitivity_map, solve_operating_point
from .protocol import ProtocolError, run_guide
from .resonator import (
    InsufficientSpan,
    ResonatorState,
    SpectroscopyTrace,
    calibrate_phase_to_frequency,
    effective_dut,
    smi_settings,
    spectroscopy_trace,
)
from .trace import FrequencyTrace, read_columns

SWEEP_NOISE_KEY = (7,)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4


class _Writer:
    """Collects artifacts in one directory and hashes them for the manifest."""

    def __init__(self, out: Path, fmt: str):
        self.out = out
        self.fmt = fmt
        self.hashes: dict[str, str] = {}
        out.mkdir(parents=True, exist_ok=True)

    def _put(self, name: str, text: str):
        data = text.encode()
        (self.out / name).write_bytes(data)
        self.hashes[name] = hashlib.sha256(data).hexdigest()

    def table(self, stem: str, header: list[str], columns):
        cols = [np.asarray(c).tolist() for c in columns]
        if self.fmt == "json":
            self.json(stem, dict(zip(header, cols)))
            return
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        self._put(stem + ".csv", buf.getvalue())

    def json(self, stem: str, obj):
        self._put(stem + ".json", json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")

    def text(self, name: str, text: str):
        self._put(name, text)


def _plain(o):
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serialisable: {type(o).__name__}")


# -- shared set-up -------------------------------------------------------------


def operating_settings(cfg: dict):
    """Resonator, modulation and carrier for the configured operating point."""
    params = config.resonator(cfg)
    m, c = cfg["modulation"], cfg["carrier"]
    f0 = c["f0_hz"]
    if math.isnan(f0):
        f0 = params.fr + m["fs_hz"] + c["offset_linewidths"] * params.linewidth
    alpha1 = math.radians(m["alpha1_deg"])
    if m["mode"] == "manual":
        mod, car = smi_settings(params, m["a1_v"], alpha1, "ssb", m["fs_hz"], f0, c["delta_rad"])
        mod = dataclasses.replace(mod, a2=m["a2_v"], alpha2=math.radians(m["alpha2_deg"]) % (2 * math.pi))
    else:
        mod, car = smi_settings(params, m["a1_v"], alpha1, m["mode"], m["fs_hz"], f0, c["delta_rad"])
    mod = dataclasses.replace(mod, dc_i=m["dc_i_v"], dc_q=m["dc_q_v"])
    return params, mod, car


def _static_trace(cfg, params, mod, car, f0_grid):
    tr = spectroscopy_trace(params, ResonatorState(), mod, car, f0_grid)
    s = config.gain(cfg) * tr.iq
    return s


# -- subcommands ---------------------------------------------------------------


def cmd_sweep(cfg: dict, w: _Writer) -> dict:
    params, mod, car = operating_settings(cfg)
    sw = cfg["sweep"]
    centre = car.f0 if math.isnan(sw["center_hz"]) else sw["center_hz"]
    half = 0.5 * sw["span_linewidths"] * params.linewidth
    f0 = np.linspace(centre - half, centre + half, sw["points"])
    s = _static_trace(cfg, params, mod, car, f0)
    sigma = cfg["readout"]["reading_noise_v"]
    if sigma > 0:
        n = make_rng(cfg["run"]["seed"], SWEEP_NOISE_KEY).standard_normal((f0.size, 2)) * sigma
        s = s + n[:, 0] + 1j * n[:, 1]
    w.table("sweep", ["f0_hz", "x_v", "y_v"], [f0, s.real, s.imag])
    return {"points": int(f0.size), "a2_v": mod.a2, "alpha2_rad": mod.alpha2, "operating_f0_hz": car.f0}


def cmd_map(cfg: dict, w: _Writer) -> dict:
    params, mod, car = operating_settings(cfg)
    mp = cfg["map"]
    dut, g_eff = effective_dut(params, ResonatorState(), car.f0, mod.f_s)
    G = g_eff * config.gain(cfg)
    a2 = np.linspace(0.0, mp["a2_max_v"], mp["a2_points"])
    al = np.linspace(0.0, 2 * math.pi, mp["alpha2_points"], endpoint=False)
    smap = sensitivity_map(mod.a1, mod.alpha1, car, dut, a2, al, mp["perturbation"], mp["magnitude"])
    A2, AL = np.meshgrid(a2, al, indexing="ij")
    nominal = G * (smap.x + 1j * smap.y)
    w.table(
        "map",
        ["a2_v", "alpha2_rad", "x_v", "y_v", "delta_s_v"],
        [A2.ravel(), AL.ravel(), nominal.real.ravel(), nominal.imag.ravel(), abs(G) * smap.delta_s.ravel()],
    )
    # the rejecting point: destructive for amplitude, constructive for phase
    mode = "destructive" if mp["perturbation"] == "amplitude" else "constructive"
    op = solve_operating_point(mod.a1, mod.alpha1, dut, mode, delta=car.delta)
    at = sensitivity_map(mod.a1, mod.alpha1, car, dut, [op.a2], [op.alpha2], mp["perturbation"], mp["magnitude"])
    through = complex(at.x[0, 0], at.y[0, 0])
    point = G * through
    info = {"rejecting_point": {"mode": mode, "a2_v": op.a2, "alpha2_rad": op.alpha2, "x_v": point.real, "y_v": point.imag}}
    if mp["linecut"]:
        offs = np.linspace(-mp["linecut_span_v"], mp["linecut_span_v"], mp["linecut_points"])
        unit = np.conj(G) / abs(G)
        for name, d in (("linecut_x", unit), ("linecut_y", 1j * unit)):
            cut = linecut(mod.a1, mod.alpha1, car, dut, through, offs / abs(G), d, mp["perturbation"], mp["magnitude"])
            w.table(name, ["offset_v", "delta_s_v"], [offs, abs(G) * cut.delta_s])
    w.json("points", info)
    return info


def _analysis_artifacts(trace: FrequencyTrace, cfg: dict, w: _Writer, extra: dict) -> dict:
    mon = cfg["monitor"]
    band = (mon["band_lo_hz"], mon["band_hi_hz"]) if mon["band_hi_hz"] > 0 else None
    exclude = (mon["exclude_lo_hz"], mon["exclude_hi_hz"]) if mon["exclude_hi_hz"] > 0 else None
    summary = analysis.summarize(trace, band, exclude, mon["mixture_k"], mon["bins_per_decade"])

    est = analysis.psd(trace, mon["bins_per_decade"])
    w.table("psd", ["f_hz", "psd_hz2_per_hz", "dof", "fit_hz2_per_hz"], [est.freqs, est.values, est.dof, summary["a_p_hz2"] / est.freqs])

    adev = analysis.allan(trace)
    w.table("allan", ["tau_s", "sigma_hz", "ci_low_hz", "ci_high_hz"], [adev.taus, adev.sigma, adev.ci_low, adev.ci_high])

    counts, edges = np.histogram(trace.values, bins=mon["histogram_bins"])
    centres = 0.5 * (edges[1:] + edges[:-1])
    density = counts / (counts.sum() * np.diff(edges))
    model = np.zeros_like(centres)
    if isinstance(summary["mixture"], list):
        for c in summary["mixture"]:
            model += c["weight"] * stats.norm.pdf(centres, c["mean_hz"], c["std_hz"])
    w.table("histogram", ["delta_f_hz", "density_per_hz", "mixture_per_hz"], [centres, density, model])

    summary.update(extra)
    w.json("summary", summary)
    return summary


def cmd_monitor(cfg: dict, w: _Writer) -> dict:
    params, mod, car = operating_settings(cfg)
    c = cfg["run"]["compress"]
    noise, common, bands = config.noise(cfg), config.common(cfg), config.bands(cfg)
    # a run compressed by c covers duration/c seconds with every rate scaled up by c;
    # the samples are those of the physical run, so only the time axis is relabelled
    if c != 1.0:
        noise, bands = noise.compressed(c), bands.compressed(c)
        if common is not None:
            common = dataclasses.replace(
                common,
                magnitude=common.magnitude * (math.sqrt(c) if common.model == "random-walk" else 1.0),
                frequency=common.frequency * c,
                step_time=common.step_time / c,
            )
    res = run(
        mod, car, params, noise, common, bands, cfg["monitor"]["duration_s"] / c,
        readout_psd=cfg["readout"]["psd_v2_hz"] / c, gain=config.gain(cfg),
    )
    dt = 1.0 / cfg["bands"]["f_sample_hz"]
    t = np.arange(len(res.x)) * dt

    sweep = car.f0 + np.linspace(-1.0, 1.0, cfg["monitor"]["calibration_points"]) * params.linewidth
    iq = _static_trace(cfg, params, mod, car, sweep)
    cal = calibrate_phase_to_frequency(SpectroscopyTrace(sweep, iq.real, iq.imag), car.f0)
    rec = cal.to_detuning(res.x.values, res.y.values)
    err = rec - res.truth_filtered.values
    w.table("trace", ["t_s", "x_v", "y_v", "delta_f_hz", "truth_hz"], [t, res.x.values, res.y.values, rec, res.truth_filtered.values])

    trace = FrequencyTrace(0.0, dt, rec, {"column": "delta_f_hz"})
    extra = {
        "recovery_rms_hz": float(np.sqrt(np.mean(err**2))),
        "calibration_slope_hz_per_rad": cal.slope,
        "engine": {k: v for k, v in res.manifest.items()},
    }
    if common is not None and cfg["common"]["model"] == "sine":
        est = analysis.psd(trace, cfg["monitor"]["bins_per_decade"])
        extra["common_line_hz"] = cfg["common"]["frequency_hz"]
        extra["common_line_z"] = analysis.line_significance(est, cfg["common"]["frequency_hz"])
    return _analysis_artifacts(trace, cfg, w, extra)


def cmd_calibrate(cfg: dict, w: _Writer) -> dict:
    params = config.resonator(cfg)
    eng = Interferometer(
        params,
        mixer=config.mixer(cfg),
        readout_noise=cfg["readout"]["reading_noise_v"],
        gain=config.gain(cfg),
        seed=cfg["run"]["seed"],
    )
    report = run_guide(eng, config.protocol(cfg))
    w.json("report", report.to_dict())
    w.table("log", ["t_s", "step", "evaluations", "message"], [
        [e.t_s for e in report.log], [e.step for e in report.log], [e.evaluations for e in report.log], [e.message for e in report.log],
    ])
    return {"success": report.success, "evaluations": report.evaluations, "fr_hz": report.resonator.fr}


def cmd_analyze(cfg: dict, w: _Writer) -> dict:
    a = cfg["analyze"]
    if not a["input"]:
        raise ConfigError("analyze needs an input trace ([analyze] input or a positional path)")
    cols = read_columns(a["input"])
    names = list(cols)
    name = a["column"] or ("delta_f_hz" if "delta_f_hz" in cols else names[min(1, len(names) - 1)])
    if name not in cols:
        raise ConfigError(f"column {name!r} not in {a['input']} (have {', '.join(names)})")
    t = cols[names[0]]
    if t.size < 2 or not np.allclose(np.diff(t), np.diff(t)[0], rtol=1e-6, atol=0):
        raise ValueError(f"{a['input']}: time column is not uniformly sampled")
    dt = float(t[1] - t[0]) * cfg["run"]["compress"]
    trace = FrequencyTrace(0.0, dt, cols[name], {"column": name})
    data = Path(a["input"]).read_bytes()
    return _analysis_artifacts(trace, cfg, w, {"input_sha256": hashlib.sha256(data).hexdigest(), "column": name})


COMMANDS = {
    "sweep": (cmd_sweep, "carrier sweep across the resonance (spectroscopy trace)"),
    "map": (cmd_map, "common-mode sensitivity over (a2, alpha2), with IQ line cuts"),
    "monitor": (cmd_monitor, "time-domain run, frequency recovery and noise analysis"),
    "calibrate": (cmd_calibrate, "automated calibration sequence on a simulated instrument"),
    "analyze": (cmd_analyze, "noise analysis of an existing trace CSV"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smisim", description="Sideband microwave interferometer simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", type=Path, help="INI or JSON config file")
        s.add_argument("--seed", type=int, help="override [run] seed")
        s.add_argument("--out", type=Path, help="output directory (default: out/<command>)")
        s.add_argument("--compress", type=float, help="time-compression factor, override [run] compress")
        s.add_argument("--format", choices=("csv", "json"), help="table format, override [run] format")
        if name == "analyze":
            s.add_argument("input", nargs="?", help="trace CSV with a leading time column")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config.load(args.config)
        overrides = {"run": {}}
        if args.seed is not None:
            overrides["run"]["seed"] = args.seed
        if args.compress is not None:
            overrides["run"]["compress"] = args.compress
        if args.format is not None:
            overrides["run"]["format"] = args.format
        if getattr(args, "input", None):
            overrides["analyze"] = {"input": args.input}
        cfg = config.merge(cfg, overrides)
        config.validate(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO

    out = args.out or Path("out") / args.command
    fn = COMMANDS[args.command][0]
    try:
        w = _Writer(out, cfg["run"]["format"])
        w.text("config.resolved.ini", config.to_ini(cfg))
        result = fn(cfg, w)
        manifest = {
            "command": args.command,
            "version": __version__,
            "prng": PRNG_ID,
            "seed": cfg["run"]["seed"],
            "compress": cfg["run"]["compress"],
            "config_digest": config.config_digest(cfg),
            "outputs": dict(sorted(w.hashes.items())),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ProtocolError as exc:
        print(f"runtime error in step {exc.step!r}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (NoSolution, InsufficientSpan, analysis.TooShort, analysis.BandEmpty, analysis.Degenerate, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    brief = {k: v for k, v in result.items() if not isinstance(v, (list, dict))}
    print(f"{args.command}: wrote {len(w.hashes) + 1} files to {out}" + (f"  {json.dumps(brief, default=_plain, sort_keys=True)}" if brief else ""))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
