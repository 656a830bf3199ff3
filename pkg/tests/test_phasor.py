import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smisim.phasor import (
    CarrierSettings,
    DutResponse,
    ModulationSettings,
    NoSolution,
    apply_common_noise,
    delta_s,
    eval_output,
    interference_terms,
    linecut,
    sensitivity_map,
    settings_for_output,
    solve_balance,
    solve_operating_point,
    ssb_settings,
    vee_fit,
    wrap_pi,
)

# reference parameter set
REF = dict(a1=1.0, a2=1.0, alpha1=0.3, alpha2=2.68, xi=0.4, phi=0.3)

amps = st.floats(0.01, 10.0)
phases = st.floats(-10.0, 10.0)


def reference_settings(delta=0.0):
    mod = ModulationSettings(REF["a1"], REF["a2"], REF["alpha1"], REF["alpha2"])
    return mod, CarrierSettings(delta=delta), DutResponse(REF["xi"], REF["phi"])


class TestTypes:
    def test_phase_wrapping(self):
        mod = ModulationSettings(1.0, 1.0, -0.5, 7.0)
        assert 0 <= mod.alpha1 < 2 * math.pi
        npt.assert_allclose(mod.alpha1, 2 * math.pi - 0.5)
        npt.assert_allclose(mod.alpha2, 7.0 - 2 * math.pi)

    @given(phases)
    def test_wrapped_range(self, a):
        mod = ModulationSettings(1.0, 1.0, a, -a)
        assert 0.0 <= mod.alpha1 < 2 * math.pi
        assert 0.0 <= mod.alpha2 < 2 * math.pi

    @pytest.mark.parametrize(
        "kwargs", [dict(a1=-1, a2=1, alpha1=0, alpha2=0), dict(a1=1, a2=1, alpha1=0, alpha2=0, omega_s=0)]
    )
    def test_invalid_modulation(self, kwargs):
        with pytest.raises(ValueError):
            ModulationSettings(**kwargs)

    def test_invalid_dut_and_carrier(self):
        with pytest.raises(ValueError):
            DutResponse(-0.1)
        with pytest.raises(ValueError):
            CarrierSettings(omega0=-1.0)
        with pytest.raises(ValueError):
            CarrierSettings(leakage=-1.0)


class TestEvalOutput:
    def test_transparent_single_tone(self):
        out = eval_output(ModulationSettings(1.0, 0.0, 0.0, 0.0), CarrierSettings(), DutResponse(1.0, 0.0))
        assert out.x == pytest.approx(2.0)
        assert out.y == pytest.approx(0.0, abs=1e-15)

    def test_absorbed_probe_leaves_reference(self):
        mod = ModulationSettings(0.7, 0.4, 1.1, 2.3)
        car = CarrierSettings(delta=0.25)
        out = eval_output(mod, car, DutResponse(0.0, 1.0)).complex
        expected = 0.7 * np.exp(1j * (1.1 + 0.25)) + 0.4 * np.exp(1j * (2.3 + 0.25))
        assert out == pytest.approx(expected, abs=1e-15)

    def test_no_second_tone(self):
        mod = ModulationSettings(0.8, 0.0, 0.4, 0.0)
        car = CarrierSettings(delta=-0.3)
        out = eval_output(mod, car, DutResponse(0.5, 0.9)).complex
        expected = 0.8 * np.exp(1j * (0.4 - 0.3)) + 0.5 * 0.8 * np.exp(1j * (0.4 + 0.9 + 0.3))
        assert out == pytest.approx(expected, abs=1e-15)

    def test_reference_decomposition(self):
        mod, car, dut = reference_settings()
        s = eval_output(mod, car, dut).complex
        pt = interference_terms(mod, car, dut)
        assert abs(s - pt.phasor) / abs(s) < 1e-12

    @settings(max_examples=200)
    @given(amps, amps, phases, phases, phases, st.floats(0, 1.5), phases)
    def test_decomposition_identity(self, a1, a2, al1, al2, d, xi, phi):
        mod = ModulationSettings(a1, a2, al1, al2)
        car = CarrierSettings(delta=d)
        dut = DutResponse(xi, phi)
        s = eval_output(mod, car, dut).complex
        pt = interference_terms(mod, car, dut)
        scale = (a1 + a2) * (1 + xi)
        assert abs(s - pt.phasor) <= 1e-12 * max(abs(s), 1e-3 * scale)


class TestInterferenceTerms:
    def test_reference_values(self):
        mod, car, dut = reference_settings()
        pt = interference_terms(mod, car, dut)
        # oracle: the closed-form amplitude formulas, evaluated directly
        c = math.cos(0.3 - 2.68)
        b1_oracle = math.sqrt(1 + 1 + 2 * c)
        b2_oracle = 0.4 * math.sqrt(1 + 1 - 2 * c)
        assert pt.b1 == pytest.approx(b1_oracle, rel=1e-12)
        assert pt.b2 == pytest.approx(b2_oracle, rel=1e-12)
        assert pt.b1 == pytest.approx(0.743320, abs=1e-6)
        assert pt.b2 == pytest.approx(0.742695, abs=1e-6)
        assert abs(pt.b1 - pt.b2) / pt.b1 < 0.01

    def test_in_phase_cancels_probe(self):
        pt = interference_terms(ModulationSettings(0.5, 0.5, 1.0, 1.0), CarrierSettings(), DutResponse(0.7, 0.2))
        assert pt.b1 == pytest.approx(1.0)
        assert pt.b2 == pytest.approx(0.0, abs=1e-15)

    def test_anti_phase_cancels_reference(self):
        pt = interference_terms(
            ModulationSettings(0.5, 0.5, 1.0, 1.0 + math.pi), CarrierSettings(), DutResponse(1.0, 0.2)
        )
        assert pt.b1 == pytest.approx(0.0, abs=1e-15)
        assert pt.b2 == pytest.approx(1.0)

    @given(amps, amps, phases, phases, phases, st.floats(0, 1.5), phases)
    def test_amplitude_formulas(self, a1, a2, al1, al2, d, xi, phi):
        pt = interference_terms(ModulationSettings(a1, a2, al1, al2), CarrierSettings(delta=d), DutResponse(xi, phi))
        c = math.cos(al1 - al2)
        scale = (a1 + a2) ** 2
        assert pt.b1**2 == pytest.approx(a1**2 + a2**2 + 2 * a1 * a2 * c, abs=1e-12 * scale)
        assert pt.b2**2 == pytest.approx(xi**2 * (a1**2 + a2**2 - 2 * a1 * a2 * c), abs=1e-12 * scale)


class TestSolveBalance:
    def test_reference_branch(self):
        sol = solve_balance(1.0, 1.0, 0.4)
        assert sol.cos_dalpha == pytest.approx(-0.84 * 2 / (1.16 * 2))
        assert sol.cos_dalpha == pytest.approx(-0.7241, abs=1e-4)
        assert sol.branches[0] == pytest.approx(2.3806, abs=1e-4)
        assert sol.branches[1] == -sol.branches[0]
        # reference alpha1 - alpha2 = 0.3 - 2.68
        assert abs(0.3 - 2.68) == pytest.approx(abs(sol.branches[1]), abs=0.01)

    def test_symmetric(self):
        sol = solve_balance(0.3, 0.3, 1.0)
        assert sol.cos_dalpha == pytest.approx(0.0)
        assert sol.branches[0] == pytest.approx(math.pi / 2)

    def test_no_solution(self):
        with pytest.raises(NoSolution):
            solve_balance(1.0, 0.01, 0.5)

    @given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.01, 1.0))
    def test_balance_verified(self, a1, a2, xi):
        try:
            sol = solve_balance(a1, a2, xi)
        except NoSolution:
            return
        for d in sol.branches:
            pt = interference_terms(ModulationSettings(a1, a2, d, 0.0), CarrierSettings(), DutResponse(xi))
            assert abs(pt.b1 - pt.b2) / pt.b1 < 1e-12 * max(1.0, (a1 + a2) ** 2 / pt.b1**2)


class TestOperatingPoint:
    @pytest.mark.parametrize("mode", ["constructive", "destructive"])
    @pytest.mark.parametrize("fixed_delta", [None, 0.37])
    def test_conditions(self, mode, fixed_delta):
        dut = DutResponse(0.4, 0.3)
        op = solve_operating_point(1.0, 0.3, dut, mode, delta=fixed_delta)
        mod, car = op.settings(1.0, 0.3)
        pt = interference_terms(mod, car, dut)
        assert abs(pt.b1 - pt.b2) / pt.b1 < 1e-9
        target = 0.0 if mode == "constructive" else math.pi
        assert abs(wrap_pi(pt.beta1 - pt.beta2 - target)) < 1e-9
        if mode == "destructive":
            assert eval_output(mod, car, dut).amplitude < 1e-9

    def test_reference_point(self):
        dut = DutResponse(0.4, 0.3)
        con = solve_operating_point(1.0, 0.3, dut, "constructive")
        des = solve_operating_point(1.0, 0.3, dut, "destructive")
        assert con.a2 == 1.0
        assert con.alpha2 == pytest.approx(2.68, abs=0.01)
        # reference values: delta = -0.64 (constructive), 0.94 (destructive)
        assert con.delta == pytest.approx(-0.64, abs=0.01)
        assert des.delta == pytest.approx(0.94, abs=0.01)
        assert des.delta - con.delta == pytest.approx(math.pi / 2)

    def test_constructive_phase_immunity(self):
        dut = DutResponse(0.4, 0.3)
        op = solve_operating_point(1.0, 0.3, dut, "constructive")
        mod, car = op.settings(1.0, 0.3)
        h = 1e-5

        def amp(theta):
            return eval_output(*apply_common_noise(mod, car, 0.0, theta), dut).amplitude

        deriv = (amp(h) - amp(-h)) / (2 * h)
        assert abs(deriv) < 1e-6 * amp(0.0)

    @settings(max_examples=100)
    @given(st.floats(0.05, 5), phases, st.floats(0.05, 0.99), phases, st.floats(-0.5, 0.5))
    def test_destructive_null_survives_scaling(self, a1, al1, xi, phi, eps):
        dut = DutResponse(xi, phi)
        mod, car = solve_operating_point(a1, al1, dut, "destructive").settings(a1, al1)
        assert eval_output(mod, car, dut).amplitude < 1e-9 * a1
        assert eval_output(*apply_common_noise(mod, car, eps, 0.0), dut).amplitude < 1e-9 * a1

    def test_invalid(self):
        with pytest.raises(ValueError):
            solve_operating_point(1.0, 0.0, DutResponse(0.0), "destructive")
        with pytest.raises(ValueError):
            solve_operating_point(1.0, 0.0, DutResponse(0.5), "sideways")
        with pytest.raises(NoSolution):
            solve_operating_point(1.0, 0.0, DutResponse(0.5), a2=0.01)


class TestCommonNoise:
    def test_identity(self):
        mod, car, _ = reference_settings(0.2)
        assert apply_common_noise(mod, car, 0.0, 0.0) == (mod, car)

    def test_scaling_and_shift(self):
        mod, car, _ = reference_settings(0.2)
        m2, c2 = apply_common_noise(mod, car, 0.1, 0.05)
        assert m2.a1 == pytest.approx(1.1) and m2.a2 == pytest.approx(1.1)
        assert c2.delta == pytest.approx(0.25)
        with pytest.raises(ValueError):
            apply_common_noise(mod, car, -1.0, 0.0)

    def test_destructive_amplitude_exact(self):
        dut = DutResponse(0.4, 0.3)
        mod, car = solve_operating_point(1.0, 0.3, dut, "destructive").settings(1.0, 0.3)
        assert delta_s(mod, car, dut, eps_amp=0.01) < 1e-15

    def test_constructive_phase_second_order(self):
        dut = DutResponse(0.4, 0.3)
        mod, car = solve_operating_point(1.0, 0.3, dut, "constructive").settings(1.0, 0.3)
        s = eval_output(mod, car, dut).amplitude
        assert delta_s(mod, car, dut, theta_phase=0.01) < 1e-4 * s


class TestSensitivity:
    def setup_method(self):
        self.dut = DutResponse(0.6, 0.45)
        self.car = CarrierSettings(delta=0.2)
        self.a1, self.al1 = 10e-3, math.radians(330)

    def test_ssb_amplitude_equals_phase(self):
        a2, al2 = ssb_settings(self.a1, self.al1)
        mod = ModulationSettings(self.a1, a2, self.al1, al2)
        amp = delta_s(mod, self.car, self.dut, eps_amp=0.01)
        ph = delta_s(mod, self.car, self.dut, theta_phase=0.01)
        assert amp / ph == pytest.approx(1.0, abs=0.01)
        assert interference_terms(mod, self.car, self.dut).b1 < 1e-15

    def test_map_zero_at_destructive(self):
        op = solve_operating_point(self.a1, self.al1, self.dut, "destructive", delta=self.car.delta)
        a2 = np.sort(np.r_[np.linspace(0, 80e-3, 37), op.a2])
        al2 = np.sort(np.r_[np.linspace(0, 2 * math.pi, 73, endpoint=False), op.alpha2])
        amap = sensitivity_map(self.a1, self.al1, self.car, self.dut, a2, al2, "amplitude")
        i = int(np.flatnonzero(a2 == op.a2)[0])
        j = int(np.flatnonzero(al2 == op.alpha2)[0])
        assert amap.delta_s[i, j] < 1e-15
        assert amap.delta_s[i, j] == amap.delta_s.min()
        # amplitude sensitivity is 1% of the output magnitude everywhere
        npt.assert_allclose(amap.delta_s, 0.01 * np.hypot(amap.x, amap.y), rtol=1e-9, atol=1e-18)

    def test_phase_map_zero_at_constructive(self):
        op = solve_operating_point(self.a1, self.al1, self.dut, "constructive", delta=self.car.delta)
        pmap = sensitivity_map(self.a1, self.al1, self.car, self.dut, [op.a2], [op.alpha2], "phase")
        s = math.hypot(pmap.x[0, 0], pmap.y[0, 0])
        assert pmap.delta_s[0, 0] < 1e-4 * s

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            sensitivity_map(1, 0, self.car, self.dut, [], [0.0])

    @pytest.mark.parametrize("kind,mode", [("amplitude", "destructive"), ("phase", "constructive")])
    def test_linecut_linear(self, kind, mode):
        op = solve_operating_point(self.a1, self.al1, self.dut, mode, delta=self.car.delta)
        mod, car = op.settings(self.a1, self.al1)
        centre = eval_output(mod, car, self.dut).complex
        a2s, als = ssb_settings(self.a1, self.al1)
        ssb = abs(eval_output(ModulationSettings(self.a1, a2s, self.al1, als), car, self.dut).complex)
        offs = np.linspace(-0.2 * ssb, 0.2 * ssb, 41)
        cut = linecut(self.a1, self.al1, car, self.dut, centre, offs, 1.0, kind)
        fit = vee_fit(cut.offset, cut.delta_s)
        assert min(fit.r2_left, fit.r2_right) > 0.999
        assert fit.asymmetry < 0.05
        # at the rejection point itself: at least 100x below the SSB sensitivity (0.01 * ssb)
        assert cut.delta_s[20] < 1e-2 * 0.01 * ssb

    def test_settings_for_output_roundtrip(self):
        target = complex(3e-3, -1e-3)
        a2, al2 = settings_for_output(self.a1, self.al1, self.car, self.dut, target)
        out = eval_output(ModulationSettings(self.a1, a2, self.al1, al2), self.car, self.dut).complex
        assert abs(out - target) < 1e-15
