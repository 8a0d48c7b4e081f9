import json

import numpy as np
import pytest

from psiwork import bichar as bc
from psiwork import symbol as sy
from psiwork import symexpr as se

IMS = sy.fixture_im_parts(2)
XI0 = (0.0, 1.0)


def slice_at(c, a=-1.0, b=3.0):
    return bc.normal_form_slice(a, b, (c,), XI0)


class TestIntegrate:
    def test_xi1_straight_line(self):
        p = se.parse_expression("xi1", 2)
        g = bc.integrate_bicharacteristic(p, ((0.0, 0.4), (0.0, 1.0)), (0.0, 2.0))
        for t in np.linspace(0, 2, 9):
            x, xi = g.state(t)
            assert x[0] == pytest.approx(t, abs=1e-10)
            assert x[1] == pytest.approx(0.4, abs=1e-10)
            assert xi[0] == pytest.approx(0.0, abs=1e-10)
            assert xi[1] == pytest.approx(1.0, abs=1e-10)

    def test_lewy_model_straight_line(self):
        # real part of the Lewy-type model is xi1: x' stays 0, xi frozen at e_n
        p = se.parse_expression("xi1", 3)
        g = bc.integrate_bicharacteristic(
            p, ((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)), (0.0, 1.0)
        )
        x, xi = g.state(0.7)
        assert np.allclose(x, [0.7, 0.0, 0.0], atol=1e-10)
        assert np.allclose(xi, [0.0, 0.0, 1.0], atol=1e-10)

    def test_generic_flow_against_reference(self):
        # xi1 + x2 xi2: x2 = x2(0) e^t, xi2 = xi2(0) e^-t, xi1 frozen
        p = se.parse_expression("xi1 + x2*xi2", 2)
        g = bc.integrate_bicharacteristic(p, ((0.0, 1.0), (-0.5, 0.5)), (0.0, 1.0))
        for t, z in zip(g.ts, g.states):
            exact = np.array(
                [t, np.exp(t), -0.5 * np.exp(-t) * np.exp(t), 0.5 * np.exp(-t)]
            )
            exact[2] = -np.exp(t) * 0.5 * np.exp(-t)  # xi1 = -x2 xi2 on char set
            assert np.max(np.abs(z - exact)) < 1e-8

    def test_re_p_invariant_along_samples(self):
        p = se.parse_expression("xi1 + x2*xi2", 2)
        g = bc.integrate_bicharacteristic(p, ((0.0, 1.0), (-0.5, 0.5)), (0.0, 1.0))
        for z in g.states:
            assert abs(z[2] + z[1] * z[3]) < 1e-7

    def test_noncharacteristic_start_rejected(self):
        p = se.parse_expression("xi1", 2)
        with pytest.raises(bc.BicharError):
            bc.integrate_bicharacteristic(p, ((0.0, 0.0), (1.0, 1.0)), (0.0, 1.0))

    def test_chart_box_exit(self):
        p = se.parse_expression("xi1", 2)
        with pytest.raises(bc.BicharError):
            bc.integrate_bicharacteristic(
                p, ((0.0, 0.0), (0.0, 1.0)), (0.0, 10.0), box=2.0
            )


class TestDetect:
    def test_p1_minus_to_plus(self):
        got = bc.detect_sign_change(IMS["p1"], slice_at(0.0))
        assert got is not None
        s_minus, s_plus = got
        assert s_minus < 0
        assert s_plus > 2

    def test_zero_none(self):
        assert bc.detect_sign_change(se.ZERO, slice_at(0.0)) is None

    def test_positive_constant_none(self):
        assert bc.detect_sign_change(se.ONE, slice_at(0.0)) is None

    def test_linear_crossing(self):
        # earliest witness pair: the very start of gamma, then the +tol crossing
        got = bc.detect_sign_change(se.parse_expression("x1", 2), slice_at(0.0))
        assert got is not None
        assert got[0] == pytest.approx(-1.0)
        assert abs(got[1]) < 1e-6


class TestStrong:
    def test_p1_interval(self):
        s = bc.strong_sign_change(IMS["p1"], slice_at(0.0))
        assert s is not None
        assert s.a == pytest.approx(0.0, abs=0.02)
        assert s.b == pytest.approx(2.0, abs=0.02)
        assert s.max_interior == 0.0
        assert s.converged

    def test_linear_crossing_degenerate(self):
        s = bc.strong_sign_change(se.parse_expression("x1", 2), slice_at(0.0))
        assert s.degenerate
        assert s.a == pytest.approx(0.0, abs=1e-6)
        assert s.b == pytest.approx(0.0, abs=1e-6)

    def test_p2_offset_above(self):
        s = bc.strong_sign_change(IMS["p2"], slice_at(0.01, -0.5, 3.5))
        assert s.a == pytest.approx(0.0, abs=0.05)
        assert s.b == pytest.approx(2.0, abs=0.05)

    def test_no_sign_change_none(self):
        assert bc.strong_sign_change(se.ONE, slice_at(0.0)) is None
        assert bc.strong_sign_change(se.ZERO, slice_at(0.0)) is None

    def test_witness_grid(self):
        s = bc.strong_sign_change(IMS["p2"], slice_at(0.25, -0.5, 3.5))
        for w in s.witnesses:
            if not w["found"]:
                continue
            assert s.a - w["eps"] <= w["s_minus"] <= s.a
            assert s.b <= w["s_plus"] <= s.b + w["eps"]


class TestEstimateL:
    def test_p2_value_and_sides(self):
        g = bc.normal_form_slice(-0.5, 3.5, (0.0,), XI0)
        rep = bc.estimate_L(IMS["p2"], g)
        assert rep.L_estimate == pytest.approx(2.0, abs=0.1)
        assert rep.converged
        up = bc.estimate_L(IMS["p2"], g, bc.OffsetSampler(directions=((1.0,),)))
        dn = bc.estimate_L(IMS["p2"], g, bc.OffsetSampler(directions=((-1.0,),)))
        assert up.interval[0] == pytest.approx(0.0, abs=0.05)
        assert up.interval[1] == pytest.approx(2.0, abs=0.05)
        assert dn.interval[0] == pytest.approx(1.0, abs=0.05)
        assert dn.interval[1] == pytest.approx(3.0, abs=0.05)

    def test_p1_degenerate(self):
        rep = bc.estimate_L(IMS["p1"], slice_at(0.0))
        assert rep.L_estimate < 0.05
        assert rep.degenerate

    def test_linear_crossing_L_zero(self):
        rep = bc.estimate_L(se.parse_expression("x1", 2), slice_at(0.0))
        assert rep.L_estimate == pytest.approx(0.0, abs=1e-6)
        assert rep.degenerate

    def test_no_sequence_reported_none(self):
        rep = bc.estimate_L(se.ONE, slice_at(0.0))
        assert rep.L_estimate is None
        assert not rep.converged

    def test_bounded_by_gamma_length(self):
        g = bc.normal_form_slice(-0.5, 3.5, (0.0,), XI0)
        rep = bc.estimate_L(IMS["p2"], g)
        assert rep.L_estimate <= g.length + rep.tol
        a, b = g.interval
        assert a - 1e-9 <= rep.interval[0] <= rep.interval[1] <= b + 1e-9

    def test_lower_semicontinuity(self):
        # gamma_j at offsets c_j -> 0 converge to the base slice
        g = bc.normal_form_slice(-0.5, 3.5, (0.0,), XI0)
        base = bc.estimate_L(IMS["p2"], g).L_estimate
        offs = []
        for c in (0.2, 0.1, 0.05):
            gj = bc.normal_form_slice(-0.5, 3.5, (c,), XI0)
            offs.append(bc.estimate_L(IMS["p2"], gj).L_estimate)
        assert base <= min(offs) + 0.1 * min(1.0, g.length)

    def test_requires_normal_form_slice(self):
        p = se.parse_expression("xi1 + x2*xi2", 2)
        g = bc.integrate_bicharacteristic(p, ((0.0, 1.0), (-0.5, 0.5)), (0.0, 1.0))
        with pytest.raises(bc.BicharError):
            bc.estimate_L(IMS["p2"], g)


class TestMinimalInterval:
    def test_p2_two_sides(self):
        g = bc.normal_form_slice(-0.5, 3.5, (0.0,), XI0)
        up = bc.find_minimal_interval(
            IMS["p2"], g, bc.OffsetSampler(directions=((1.0,),))
        )
        dn = bc.find_minimal_interval(
            IMS["p2"], g, bc.OffsetSampler(directions=((-1.0,),))
        )
        assert up.interval == pytest.approx((0.0, 2.0), abs=0.05)
        assert dn.interval == pytest.approx((1.0, 3.0), abs=0.05)
        assert up.interior_flat and dn.interior_flat
        assert up.flat_residual < 1e-6
        # |interval| matches L_estimate within tolerance
        assert up.interval[1] - up.interval[0] == pytest.approx(
            up.L_estimate, abs=up.tol
        )

    def test_p1_degenerate_points(self):
        up = bc.find_minimal_interval(
            IMS["p1"], slice_at(0.0), bc.OffsetSampler(directions=((1.0,),))
        )
        dn = bc.find_minimal_interval(
            IMS["p1"], slice_at(0.0), bc.OffsetSampler(directions=((-1.0,),))
        )
        assert up.interval[0] == up.interval[1] == pytest.approx(0.0, abs=0.02)
        assert dn.interval[0] == dn.interval[1] == pytest.approx(2.0, abs=0.02)

    def test_planted_full_length(self):
        # transverse factor x2 with flat sign changes planted just inside the
        # endpoints: the limiting interval is essentially all of gamma
        src = "x2*(-flatExp(0.02 - x1) + flatExp(x1 - 0.98))"
        im = se.parse_expression(src, 2)
        g = bc.normal_form_slice(0.0, 1.0, (0.0,), XI0)
        rep = bc.find_minimal_interval(im, g)
        assert rep.interval[0] == pytest.approx(0.0, abs=0.05)
        assert rep.interval[1] == pytest.approx(1.0, abs=0.05)

    def test_no_sequence_raises(self):
        with pytest.raises(bc.BicharError):
            bc.find_minimal_interval(se.ONE, slice_at(0.0))


class TestRho:
    def test_p2_base_slice_not_rho_minimal(self):
        g = bc.normal_form_slice(-0.5, 3.5, (0.0,), XI0)
        r = bc.rho_minimality(IMS["p2"], g, (0.0, 2.0))
        assert r.rho >= 0.5
        assert r.rho <= r.cap
        assert r.rho > 0.9 * r.cap  # essentially no kappa certifies

    def test_p2_offset_slice_zero_minimal(self):
        g = bc.normal_form_slice(-0.5, 3.5, (-0.25,), XI0)
        r = bc.rho_minimality(IMS["p2"], g, (1.0, 3.0))
        assert r.rho < 0.05

    def test_zero_field(self):
        r = bc.rho_minimality(se.ZERO, slice_at(0.0), (0.0, 2.0))
        assert r.rho == 0.0

    def test_vanishing_on_tube_when_nearly_minimal(self):
        # strong sign change on the slice, L close to |gamma|: the inner tube
        # must be free of any nonzero value of Im p
        g = bc.normal_form_slice(-0.1, 2.1, (0.3,), XI0)
        s = bc.strong_sign_change(IMS["p2"], g)
        assert s is not None
        r = bc.rho_minimality(IMS["p2"], g, (s.a, s.b), radii=(0.1, 0.05))
        assert r.rho < 0.2


class TestApproximatingSequence:
    def test_p2_sequence(self):
        g = bc.normal_form_slice(-0.5, 3.5, (0.0,), XI0)
        entries, exhausted = bc.approximating_sequence(
            IMS["p2"], g, (0.0, 2.0), 4
        )
        assert not exhausted
        assert len(entries) == 4
        rhos = [e["rho"] for e in entries]
        hds = [e["hausdorff"] for e in entries]
        assert all(r < 0.05 for r in rhos)
        assert all(h2 < h1 for h1, h2 in zip(hds, hds[1:]))

    def test_count_zero(self):
        g = bc.normal_form_slice(-0.5, 3.5, (0.0,), XI0)
        assert bc.approximating_sequence(IMS["p2"], g, (0.0, 2.0), 0) == ([], False)

    def test_exhaustion_reported(self):
        g = bc.normal_form_slice(-0.5, 3.5, (0.0,), XI0)
        entries, exhausted = bc.approximating_sequence(se.ZERO, g, (0.0, 2.0), 3)
        assert exhausted
        assert entries == []


class TestOneDim:
    def test_flow_of_hamilton_field(self):
        p = se.parse_expression("xi1 + x2*xi2", 2)
        g = bc.integrate_bicharacteristic(p, ((0.0, 1.0), (-0.5, 0.5)), (0.0, 1.0))
        res = bc.check_one_dim_bichar(p, g)
        assert res.ok
        assert np.max(np.abs(res.c - 1.0)) < 1e-4

    def test_planted_constant_xi1_slope(self):
        # Im p = kappa xi1 with constant kappa: c(t) = 1/(1 + i kappa)
        kappa = 0.7
        p = se.parse_expression(f"xi1 + i*{kappa}*xi1", 2)
        g = bc.normal_form_slice(0.0, 1.0, (0.3,), XI0)
        res = bc.check_one_dim_bichar(p, g)
        assert res.ok
        assert np.max(np.abs(res.c - 1.0 / (1.0 + 1j * kappa))) < 1e-10

    def test_off_characteristic_false(self):
        ts = np.linspace(0, 1, 11)
        states = np.column_stack(
            [ts, np.zeros(11), np.ones(11), np.ones(11)]
        )
        g = bc.Bicharacteristic(ts, states, 2)
        res = bc.check_one_dim_bichar(se.parse_expression("xi1", 2), g)
        assert not res.ok
        assert "vanish" in res.reason


class TestCrossSection:
    def test_p1_signs(self):
        x1s, x2s, s = bc.cross_section_grid(
            IMS["p1"], (-1.0, 3.0), (-1.0, 1.0), nx=41, ny=21
        )
        def at(x1, x2):
            return s[np.argmin(np.abs(x1s - x1)), np.argmin(np.abs(x2s - x2))]
        assert at(1.0, 0.5) == 1
        assert at(1.0, -0.5) == -1
        assert at(-0.5, 0.0) == -1
        assert at(2.5, 0.0) == 1

    def test_p2_signs(self):
        x1s, x2s, s = bc.cross_section_grid(
            IMS["p2"], (-1.0, 4.0), (-1.0, 1.0), nx=51, ny=21
        )
        def at(x1, x2):
            return s[np.argmin(np.abs(x1s - x1)), np.argmin(np.abs(x2s - x2))]
        assert at(0.5, 0.4) == 0     # zero band [0,2] above
        assert at(2.5, 0.4) == 1
        assert at(-0.5, 0.4) == -1
        assert at(1.5, -0.4) == 0    # zero band [1,3] below
        assert at(0.5, -0.4) == -1
        assert at(3.5, -0.4) == 1
        assert at(1.0, 0.0) == 0     # identically zero on the slice


class TestSerialization:
    def test_bichar_json_roundtrip(self):
        g = slice_at(0.25)
        g2 = bc.Bicharacteristic.from_json(g.to_json())
        assert np.allclose(g.ts, g2.ts)
        assert np.allclose(g.states, g2.states)
        assert g2.w == g.w

    def test_csv_export(self, tmp_path):
        g = slice_at(0.0)
        path = tmp_path / "curve.csv"
        g.to_csv(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert data.shape == (len(g.ts), 5)

    def test_report_json(self):
        rep = bc.estimate_L(IMS["p1"], slice_at(0.0))
        parsed = json.loads(rep.to_json())
        assert parsed["degenerate"] is True
        assert parsed["one_sided_estimate"] is True

    def test_rho_json(self):
        r = bc.rho_minimality(se.ZERO, slice_at(0.0), (0.0, 2.0))
        assert json.loads(r.to_json())["rho"] == 0.0
