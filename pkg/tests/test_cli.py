import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smisim import config
from smisim.cli import main
from smisim.engine import ConfigError
from smisim.phasor import vee_fit
from smisim.resonator import DEVICE, fit_circle
from smisim.trace import read_columns

MONITOR_INI = """
[noise]
rts = 3000:0.02, 1500:0.3
flicker_ap_hz2 = 4e6
white_hz2_hz = 10
[common]
magnitude = 0.01
[carrier]
offset_linewidths = 0.25
[monitor]
duration_s = 120
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = config.defaults()
        again = config.merge(config.defaults(), config.parse_text(config.to_ini(cfg)))
        assert config.to_ini(again) == config.to_ini(cfg)
        assert config.config_digest(again) == config.config_digest(cfg)

    @pytest.mark.parametrize(
        "text",
        ["[bogus]\nx = 1\n", "[run]\nsede = 1\n", "[run]\nseed = 1.5\n", "[run]\nformat = xml\n", "[protocol]\nswitch = maybe\n", "[run]\nSeed = 1\n"],
    )
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            config.merge(config.defaults(), config.parse_text(text))

    def test_json_matches_ini(self):
        ini = config.merge(config.defaults(), config.parse_text("[noise]\nrts = 3000:0.02, 1500:0.3:0.2\n[run]\nseed = 5\n"))
        js = config.merge(
            config.defaults(), config.parse_text(json.dumps({"noise": {"rts": [[3000, 0.02], [1500, 0.3, 0.2]]}, "run": {"seed": 5}}), "json")
        )
        assert config.noise(ini) == config.noise(js)

    def test_rts_parse(self):
        rts = config.parse_rts("3000:0.02, 1500:0.3:0.2")
        assert rts[0].corner_frequency == pytest.approx(0.02)
        assert rts[1].p_up == pytest.approx(0.2)
        with pytest.raises(ConfigError):
            config.parse_rts("3000")

    def test_invalid_values_caught_by_validate(self):
        cfg = config.merge(config.defaults(), {"resonator": {"qc": -1.0}})
        with pytest.raises(ConfigError, match="resonator"):
            config.validate(cfg)

    @settings(max_examples=50, deadline=None)
    @given(
        st.floats(1e-4, 1.0, allow_nan=False),
        st.floats(-720, 720, allow_nan=False),
        st.integers(0, 2**32),
        st.booleans(),
    )
    def test_resolved_form_is_exact(self, a1, alpha, seed, switch):
        cfg = config.merge(
            config.defaults(),
            {"modulation": {"a1_v": a1, "alpha1_deg": alpha}, "run": {"seed": seed}, "protocol": {"switch": switch}},
        )
        again = config.merge(config.defaults(), config.parse_text(config.to_ini(cfg)))
        assert again["modulation"]["a1_v"] == a1
        assert again["modulation"]["alpha1_deg"] == alpha
        assert again["run"]["seed"] == seed
        assert again["protocol"]["switch"] is switch


class TestExitCodes:
    def test_unknown_key(self, tmp_path):
        assert run_cli("sweep", "--config", write(tmp_path, "[sweep]\npoint = 3\n"), "--out", tmp_path / "o") == 2

    def test_bad_value(self, tmp_path):
        assert run_cli("sweep", "--config", write(tmp_path, "[bands]\nfilter_order = 12\n"), "--out", tmp_path / "o") == 2

    def test_missing_config(self, tmp_path):
        assert run_cli("sweep", "--config", tmp_path / "absent.ini", "--out", tmp_path / "o") == 4

    def test_out_is_a_file(self, tmp_path):
        f = write(tmp_path, "", "blocker")
        assert run_cli("sweep", "--out", f / "sub") == 4

    def test_convergence_failure(self, tmp_path, capsys):
        cfg = write(tmp_path, "[protocol]\nwindow_lo_hz = 6.3e9\nwindow_hi_hz = 6.31e9\n")
        assert run_cli("calibrate", "--config", cfg, "--out", tmp_path / "o") == 3
        assert "resonance" in capsys.readouterr().err

    def test_analyze_without_input(self, tmp_path):
        assert run_cli("analyze", "--out", tmp_path / "o") == 2


class TestSweep:
    def test_format(self, tmp_path):
        assert run_cli("sweep", "--out", tmp_path) == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "f0_hz,x_v,y_v"
        assert len(lines) == 1 + config.SCHEMA["sweep"]["points"]
        assert all("," in ln and ";" not in ln for ln in lines[1:])

    def test_ssb_is_a_circle(self, tmp_path):
        cfg = write(tmp_path, "[modulation]\nmode = ssb\n")
        assert run_cli("sweep", "--config", cfg, "--out", tmp_path / "o") == 0
        d = read_columns(tmp_path / "o" / "sweep.csv")
        _, _, r, rms = fit_circle(d["x_v"], d["y_v"])
        assert rms / r < 1e-6

    def test_destructive_through_origin(self, tmp_path):
        assert run_cli("sweep", "--out", tmp_path) == 0
        d = read_columns(tmp_path / "sweep.csv")
        i = np.argmin(np.abs(d["f0_hz"] - (DEVICE.fr + 10e6)))
        amp = np.hypot(d["x_v"], d["y_v"])
        assert amp[i] < 1e-12
        assert np.argmin(amp) == i


class TestMap:
    def grid(self, path):
        d = read_columns(path)
        n1 = np.unique(d["a2_v"]).size
        return d, d["delta_s_v"].reshape(n1, -1)

    def local_minima(self, ds):
        p = np.pad(ds, ((1, 1), (0, 0)), constant_values=np.inf)
        c = p[1:-1]
        return (c < p[:-2]) & (c < p[2:]) & (c < np.roll(c, 1, 1)) & (c < np.roll(c, -1, 1))

    @pytest.mark.parametrize("kind", ["amplitude", "phase"])
    def test_unique_zero_at_rejecting_point(self, tmp_path, kind):
        cfg = write(tmp_path, f"[map]\nperturbation = {kind}\n")
        assert run_cli("map", "--config", cfg, "--out", tmp_path / "o") == 0
        d, ds = self.grid(tmp_path / "o" / "map.csv")
        assert self.local_minima(ds).sum() == 1
        pt = json.loads((tmp_path / "o" / "points.json").read_text())["rejecting_point"]
        assert pt["mode"] == ("destructive" if kind == "amplitude" else "constructive")
        k = np.argmin(d["delta_s_v"])
        assert abs(d["a2_v"][k] - pt["a2_v"]) <= 40e-3 / 120 + 1e-12
        assert abs(math.remainder(d["alpha2_rad"][k] - pt["alpha2_rad"], 2 * math.pi)) <= 2 * math.pi / 144 + 1e-12

    def test_linecuts_are_vees(self, tmp_path):
        assert run_cli("map", "--out", tmp_path) == 0
        for name in ("linecut_x", "linecut_y"):
            d = read_columns(tmp_path / f"{name}.csv")
            assert list(d) == ["offset_v", "delta_s_v"]
            v = vee_fit(d["offset_v"], d["delta_s_v"])
            assert min(v.r2_left, v.r2_right) > 0.99
            assert d["delta_s_v"][d["offset_v"].size // 2] < 1e-15


class TestMonitor:
    def test_artifacts_and_determinism(self, tmp_path):
        cfg = write(tmp_path, MONITOR_INI)
        assert run_cli("monitor", "--config", cfg, "--out", tmp_path / "a") == 0
        names = {"trace.csv", "histogram.csv", "psd.csv", "allan.csv", "summary.json", "manifest.json", "config.resolved.ini"}
        assert {p.name for p in (tmp_path / "a").iterdir()} == names
        # rerun from the resolved config in the output directory
        assert run_cli("monitor", "--config", tmp_path / "a" / "config.resolved.ini", "--out", tmp_path / "b") == 0
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n
        man = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert {"config_digest", "seed", "version", "prng"} <= set(man)

    def test_seed_changes_trace(self, tmp_path):
        cfg = write(tmp_path, MONITOR_INI)
        assert run_cli("monitor", "--config", cfg, "--out", tmp_path / "a", "--seed", 1) == 0
        assert run_cli("monitor", "--config", cfg, "--out", tmp_path / "b", "--seed", 2) == 0
        assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "b" / "trace.csv").read_bytes()

    def test_compression_relabels_time(self, tmp_path):
        cfg = write(tmp_path, MONITOR_INI)
        assert run_cli("monitor", "--config", cfg, "--out", tmp_path / "a") == 0
        assert run_cli("monitor", "--config", cfg, "--out", tmp_path / "b", "--compress", 25) == 0
        a, b = read_columns(tmp_path / "a" / "trace.csv"), read_columns(tmp_path / "b" / "trace.csv")
        np.testing.assert_array_equal(a["t_s"], b["t_s"])
        assert b["t_s"][-1] == pytest.approx(120 - 0.01)
        for k in ("x_v", "y_v", "delta_f_hz", "truth_hz"):
            np.testing.assert_allclose(b[k], a[k], rtol=0, atol=1e-12 * np.abs(a[k]).max())
        sa = json.loads((tmp_path / "a" / "summary.json").read_text())
        sb = json.loads((tmp_path / "b" / "summary.json").read_text())
        assert sb["a_p_hz2"] == pytest.approx(sa["a_p_hz2"], rel=1e-9)
        assert sb["engine"]["dt_internal_s"] == pytest.approx(sa["engine"]["dt_internal_s"] / 25)

    def test_json_format(self, tmp_path):
        cfg = write(tmp_path, MONITOR_INI)
        assert run_cli("monitor", "--config", cfg, "--out", tmp_path, "--format", "json") == 0
        psd = json.loads((tmp_path / "psd.json").read_text())
        assert set(psd) == {"f_hz", "psd_hz2_per_hz", "dof", "fit_hz2_per_hz"}


class TestAnalyze:
    def test_reproduces_monitor_analysis(self, tmp_path):
        cfg = write(tmp_path, MONITOR_INI)
        assert run_cli("monitor", "--config", cfg, "--out", tmp_path / "m") == 0
        assert run_cli("analyze", tmp_path / "m" / "trace.csv", "--config", cfg, "--out", tmp_path / "a") == 0
        for n in ("psd.csv", "allan.csv", "histogram.csv"):
            assert (tmp_path / "m" / n).read_bytes() == (tmp_path / "a" / n).read_bytes(), n

    def test_compress_scales_time_axis(self, tmp_path):
        t = np.arange(4096) * 0.1
        x = np.random.default_rng(0).standard_normal(t.size)
        p = tmp_path / "t.csv"
        p.write_text("t_s,v\n" + "".join(f"{a!r},{b!r}\n" for a, b in zip(t.tolist(), x.tolist())))
        assert run_cli("analyze", p, "--out", tmp_path / "a", "--compress", 10) == 0
        s = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert s["dt_s"] == pytest.approx(1.0)


class TestCalibrate:
    def test_report(self, tmp_path):
        cfg = write(tmp_path, "[protocol]\nmixer_dc_i_v = 0.02\nmixer_dc_q_v = -0.031\nswitch = true\nconstructive = true\n[readout]\ngain_abs = 0.5\n")
        assert run_cli("calibrate", "--config", cfg, "--out", tmp_path / "a") == 0
        rep = json.loads((tmp_path / "a" / "report.json").read_text())
        assert rep["success"]
        assert rep["dc_offsets"][0] == pytest.approx(0.02, abs=1e-5)
        assert abs(rep["resonator"]["fr"] - DEVICE.fr) < DEVICE.linewidth / 1000
        assert set(rep["operating_points"]) == {"destructive", "switched", "constructive"}
        assert run_cli("calibrate", "--config", cfg, "--out", tmp_path / "b") == 0
        assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
        log = (tmp_path / "a" / "log.csv").read_text().splitlines()
        assert log[0] == "t_s,step,evaluations,message"
