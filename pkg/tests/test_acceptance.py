"""Acceptance criteria 1-8, each at its stated tolerance.

Every test records one ``ACCEPTANCE n: PASS|FAIL ...`` line; the lines are
printed in the terminal summary (see ``conftest.py``) and with ``-s``.
"""

import json
import math
import time

import numpy as np
import pytest
import scipy.constants

from conftest import VERDICTS
from smisim.analysis import allan, allan_peak, fit_flicker, line_significance, loglog_slope, psd
from smisim.cli import main
from smisim.engine import BandsConfig, run
from smisim.noise import CommonModeSpec, FlickerParams, NoiseSpec, RtsParams, WhiteParams, gen_flicker, gen_rts, gen_white
from smisim.phasor import (
    CarrierSettings,
    DutResponse,
    ModulationSettings,
    apply_common_noise,
    delta_s,
    eval_output,
    interference_phasors,
    linecut,
    output_phasor,
    solve_balance,
    solve_operating_point,
    ssb_settings,
    vee_fit,
)
from smisim.resonator import (
    DEVICE as RES,
    ResonatorState,
    calibrate_phase_to_frequency,
    column_cosine,
    effective_dut,
    input_power_for_photons,
    iq_jacobian,
    smi_output,
    smi_settings,
    spectroscopy_trace,
)
from smisim.trace import FrequencyTrace

A1, ALPHA1, FS = 10e-3, math.radians(330.0), 10e6


def verdict(n: int, ok: bool, detail: str):
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def test_1_phasor_identity():
    rng = np.random.default_rng(20240601)
    n = 100_000
    a1, a2 = rng.uniform(0.01, 2.0, (2, n))
    al1, al2, d, phi = rng.uniform(-math.pi, math.pi, (4, n))
    xi = rng.uniform(0.0, 1.5, n)
    t0 = time.perf_counter()
    s = output_phasor(a1, a2, al1, al2, d, xi, phi)
    b1, be1, b2, be2 = interference_phasors(a1, a2, al1, al2, d, xi, phi)
    two = b1 * np.exp(1j * be1) + b2 * np.exp(1j * be2)
    elapsed = time.perf_counter() - t0
    rel = np.abs(s - two) / np.abs(s)
    # the dataclass entry point wraps the phases first, so it agrees to rounding only
    k = rng.choice(n, 200, replace=False)
    same = all(
        abs(
            eval_output(ModulationSettings(a1[i], a2[i], al1[i], al2[i]), CarrierSettings(delta=d[i]), DutResponse(xi[i], phi[i])).complex
            - s[i]
        )
        < 1e-12 * abs(s[i])
        for i in k
    )
    verdict(1, rel.max() < 1e-12 and elapsed < 1.0 and same, f"max rel err {rel.max():.2e} over {n} draws in {elapsed:.3f} s")


def test_2_reference_balance():
    a1 = a2 = 1.0
    al1, al2, xi, phi, d = 0.3, 2.68, 0.4, 0.3, 0.0
    b1, _, b2, _ = interference_phasors(a1, a2, al1, al2, d, xi, phi)
    # oracle: the two amplitudes written out from the law of cosines
    b1_o = math.sqrt(a1**2 + a2**2 + 2 * a1 * a2 * math.cos(al1 - al2))
    b2_o = xi * math.sqrt(a1**2 + a2**2 - 2 * a1 * a2 * math.cos(al1 - al2))
    dal = abs(solve_balance(a1, a2, xi).branches[0])
    ok = (
        abs(b1 - b1_o) < 1e-12
        and abs(b2 - b2_o) < 1e-12
        and round(float(b1), 3) == 0.743
        and round(float(b2), 3) == 0.743
        and abs(b1 - b2) / b1 < 0.01
        and abs(dal - 2.38) <= 0.01
    )
    verdict(2, ok, f"b1={float(b1):.4f} b2={float(b2):.4f} mismatch {abs(b1 - b2) / b1:.2e}; |alpha1-alpha2|={dal:.4f} rad")


def _ds(mod, car, eps, theta):
    m2, c2 = apply_common_noise(mod, car, eps, theta)
    return abs(complex(smi_output(RES, m2, c2)) - complex(smi_output(RES, mod, car)))


def test_3_rejection_points():
    dmod, dcar = smi_settings(RES, A1, ALPHA1, "destructive", FS)
    smod, scar = smi_settings(RES, A1, ALPHA1, "ssb", FS)
    null = abs(complex(smi_output(RES, dmod, dcar)))
    amp_ratio = _ds(dmod, dcar, 0.01, 0) / _ds(smod, scar, 0.01, 0)

    dut, _ = effective_dut(RES, ResonatorState(), dcar.f0, FS)
    offs = np.linspace(-2e-3, 2e-3, 81)
    r2 = min(
        min(vee_fit(offs, c.delta_s)[2:])
        for c in (linecut(A1, ALPHA1, dcar, dut, 0.0, offs, u) for u in (1.0, 1j))
    )

    # constructive point with the two sideband terms balanced (a2 = a1, delta tuned)
    fdut = DutResponse(0.4, 0.3)
    op = solve_operating_point(1.0, 0.3, fdut, "constructive")
    cmod, ccar = op.settings(1.0, 0.3)
    a2s, al2s = ssb_settings(1.0, 0.3)
    ssb = ModulationSettings(1.0, a2s, 0.3, al2s)
    ph_balanced = delta_s(ssb, ccar, fdut, 0, 0.01) / delta_s(cmod, ccar, fdut, 0, 0.01)
    # constructive point on the resonator at fixed carrier phase
    kmod, kcar = smi_settings(RES, A1, ALPHA1, "constructive", FS)
    ph_resonator = _ds(smod, scar, 0, 0.01) / _ds(kmod, kcar, 0, 0.01)
    ssb_ratio = _ds(smod, scar, 0.01, 0) / _ds(smod, scar, 0, 0.01)

    ok = null < 1e-9 * A1 and amp_ratio < 1e-3 and r2 > 0.99 and ph_balanced >= 100 and ph_resonator >= 100 and abs(ssb_ratio - 1) <= 0.01
    verdict(
        3,
        ok,
        f"|s|/a1={null / A1:.1e}, amplitude dS ratio {amp_ratio:.1e}, linecut R2 {r2:.6f}, "
        f"phase rejection {ph_balanced:.1f}x (balanced) {ph_resonator:.1f}x (resonator), SSB amp/phase {ssb_ratio:.5f}",
    )


def test_4_resonator_consistency():
    ql = 1.0 / (1.0 / 9.8e3 + 1.0 / 5e4)
    wr = 2 * math.pi * RES.fr
    # oracle: the photon-number relation inverted by hand with scipy's hbar
    p_oracle = 8 * scipy.constants.hbar * wr**2 * RES.Qc * RES.Zr / (2 * RES.Ql**2 * RES.Z0)
    p = input_power_for_photons(RES, 8.0)
    ok = abs(ql - 8.0e3) / 8.0e3 < 0.03 and abs(p - p_oracle) / p_oracle < 0.01 and round(p_oracle * 1e16) == 6
    verdict(4, ok, f"Ql={ql:.0f} ({(ql - 8e3) / 8e3:+.1%}), P_in={p:.3e} W vs {p_oracle:.3e} W")


def test_5_calibration_closed_loop():
    mod, car = smi_settings(RES, A1, ALPHA1, "destructive", FS)
    f_op = car.f0
    sweep = f_op + np.linspace(-1, 1, 401) * RES.linewidth
    cal = calibrate_phase_to_frequency(spectroscopy_trace(RES, ResonatorState(), mod, car, sweep), f_op)
    s = complex(smi_output(RES, mod, car, None, 24e3))
    static = float(cal.to_detuning(s.real, s.imag))

    # the same shift seen through the time-domain engine: a slow telegraph toggling 0 <-> 24 kHz
    tel = NoiseSpec(rts_list=(RtsParams.from_corner(24e3, 0.05),), seed=3)
    res = run(mod, car, RES, tel, None, BandsConfig(), 200.0)
    rec = cal.to_detuning(res.x.values, res.y.values)
    up = res.truth.values > 12e3
    settled = np.convolve(up, np.ones(9), "same") == 9  # away from switching edges
    low = ~up & (np.convolve(~up, np.ones(9), "same") == 9)
    step = rec[settled].mean() - rec[low].mean()

    cosine = column_cosine(iq_jacobian(RES, mod, car))
    ok = abs(static - 24e3) / 24e3 < 0.05 and abs(step - 24e3) / 24e3 < 0.05 and cosine < 0.04
    verdict(5, ok, f"recovered {static / 1e3:.3f} kHz static, {step / 1e3:.3f} kHz in time domain; |cos| of Jacobian columns {cosine:.4f}")


def test_6_noise_statistics():
    c = 100.0  # time compression
    details, ok = [], True

    t0 = time.perf_counter()
    spec = NoiseSpec(flicker=FlickerParams(4.0e6), seed=1).compressed(c)
    raw = gen_flicker(spec.flicker, 39600, 1.0 / c, spec.seed)  # 11 h at 1 s, compressed
    tr = FrequencyTrace(0.0, raw.dt * c, raw.values)
    a_p = fit_flicker(psd(tr), (2e-4, 0.2)).a_p
    ad = allan(tr)
    plateau = float(np.median(ad.sigma[(ad.taus >= 2) & (ad.taus <= 2000)]))
    target = math.sqrt(2 * math.log(2) * 4.0e6)
    ok &= abs(a_p - 4e6) / 4e6 < 0.15 and abs(plateau - target) / target < 0.15 and time.perf_counter() - t0 < 60
    details.append(f"a_p {a_p:.3e} Hz2, plateau {plateau:.0f} Hz vs {target:.0f} Hz")

    t0 = time.perf_counter()
    spec = NoiseSpec(rts_list=(RtsParams.from_corner(3e3, 0.02),), seed=1).compressed(c)
    raw = gen_rts(spec.rts_list[0], 396000, 0.1 / c, spec.seed)
    peak = allan_peak(allan(FrequencyTrace(0.0, raw.dt * c, raw.values)))
    ok &= 4.0 <= peak <= 16.0 and time.perf_counter() - t0 < 60
    details.append(f"telegraph Allan peak {peak:.1f} s")

    t0 = time.perf_counter()
    raw = gen_white(WhiteParams(100.0 / c), 200000, 0.01 / c, 1)
    tr = FrequencyTrace(0.0, raw.dt * c, raw.values)
    aw = allan(tr)
    m = aw.taus <= tr.duration / 100
    slope = loglog_slope(aw.taus[m], aw.sigma[m])
    ok &= abs(slope + 0.5) <= 0.05 and time.perf_counter() - t0 < 60
    details.append(f"white slope {slope:.3f}")
    verdict(6, ok, "; ".join(details))


def test_7_end_to_end_rejection():
    f_op = RES.fr + FS + 0.25 * RES.linewidth
    spec = NoiseSpec(
        rts_list=(RtsParams.from_corner(3e3, 0.02), RtsParams.from_corner(1.5e3, 0.3)),
        flicker=FlickerParams(4e6),
        white=WhiteParams(10.0),
        seed=1,
    )
    common = CommonModeSpec("amplitude", "sine", 0.01, 0.1)
    z = {}
    for mode in ("destructive", "ssb"):
        mod, car = smi_settings(RES, A1, ALPHA1, mode, FS, f0=f_op)
        sweep = f_op + np.linspace(-1, 1, 401) * RES.linewidth
        cal = calibrate_phase_to_frequency(spectroscopy_trace(RES, ResonatorState(), mod, car, sweep), f_op)
        res = run(mod, car, RES, spec, common, BandsConfig(), 2000.0)
        rec = cal.to_detuning(res.x.values, res.y.values)
        z[mode] = line_significance(psd(FrequencyTrace(0.0, res.x.dt, rec)), 0.1)
    ok = z["destructive"] < 3 and z["ssb"] > 10
    verdict(7, ok, f"0.1 Hz line at {z['destructive']:.2f} sigma (destructive), {z['ssb']:.1f} sigma (SSB)")


MONITOR = "[noise]\nrts = 3000:0.02\nflicker_ap_hz2 = 4e6\nwhite_hz2_hz = 10\n[common]\nmagnitude = 0.01\n[monitor]\nduration_s = 60\n"


@pytest.mark.parametrize("_", [None])
def test_8_cli_determinism(tmp_path, _):
    cfg = tmp_path / "c.ini"
    cfg.write_text(MONITOR + "[protocol]\nmixer_dc_i_v = 0.01\n[readout]\nreading_noise_v = 1e-6\n")
    failures = []
    for cmd in ("sweep", "map", "monitor", "calibrate"):
        for tag in ("a", "b"):
            assert main([cmd, "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / cmd / tag)]) == 0
        # and once more from the resolved config in the output directory
        assert main([cmd, "--config", str(tmp_path / cmd / "a" / "config.resolved.ini"), "--out", str(tmp_path / cmd / "c")]) == 0
        files = sorted(p.name for p in (tmp_path / cmd / "a").iterdir())
        for tag in ("b", "c"):
            for f in files:
                if (tmp_path / cmd / "a" / f).read_bytes() != (tmp_path / cmd / tag / f).read_bytes():
                    failures.append(f"{cmd}/{tag}/{f}")
    trace = tmp_path / "monitor" / "a" / "trace.csv"
    for tag in ("a", "b"):
        assert main(["analyze", str(trace), "--out", str(tmp_path / "analyze" / tag)]) == 0
    for f in sorted(p.name for p in (tmp_path / "analyze" / "a").iterdir()):
        if (tmp_path / "analyze" / "a" / f).read_bytes() != (tmp_path / "analyze" / "b" / f).read_bytes():
            failures.append(f"analyze/{f}")
    digests = {json.loads((tmp_path / c / "a" / "manifest.json").read_text())["config_digest"] for c in ("sweep", "map")}
    verdict(8, not failures and len(digests) == 1, f"5 subcommands rerun byte-identical; mismatches: {failures or 'none'}")
