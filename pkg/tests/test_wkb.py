import numpy as np
import pytest
from scipy.integrate import solve_ivp

from psiwork import symbol as sy
from psiwork import symexpr as se
from psiwork import wkb


def phase_model_t(M=2, span=(-0.3, 0.3), rtol=1e-11):
    # f = t*xi: the curve stays put (y = 0) and Im w0 = t^2/2
    f = se.parse_expression("x1*xi2", 2)
    return f, wkb.solve_phase_system(
        f, ([0.0], [1.0]), M=M, t_span=span, n=2, rtol=rtol
    )


class TestPhaseSystem:
    def test_flat_f_freezes_everything(self):
        f0 = se.parse_expression("0", 2)
        ph = wkb.solve_phase_system(f0, ([0.2], [1.0]), M=3, t_span=(-1, 1), n=2)
        for t in (-0.9, 0.0, 0.7):
            y, eta, w0, c = ph.unpack(ph.state(t))
            assert y[0] == pytest.approx(0.2, abs=1e-12)
            assert eta[0] == pytest.approx(1.0, abs=1e-12)
            assert abs(w0) < 1e-12
            assert c[(2,)] == pytest.approx(0.5j, abs=1e-12)
            assert abs(c[(3,)]) < 1e-12

    def test_linear_f_matches_closed_form_hessian(self):
        # f = x*xi gives H' = 2iH, H(0) = i, so H(t) = i e^{2it}
        f = se.parse_expression("x2*xi2", 2)
        ph = wkb.solve_phase_system(
            f, ([0.1], [1.0]), M=2, t_span=(-0.25, 0.25), n=2,
            rtol=1e-12, atol=1e-14, max_step=0.02,
        )
        for t in np.linspace(-0.25, 0.25, 11):
            H = ph.hessian(float(t))[0, 0]
            assert abs(H - 1j * np.exp(2j * t)) < 1e-8

    def test_linear_f_matches_reference_integrator(self):
        # independent transcription of the y/eta/w0 equations with the
        # closed-form Hessian, integrated by a different method
        f = se.parse_expression("x2*xi2", 2)
        ph = wkb.solve_phase_system(
            f, ([0.1], [1.0]), M=2, t_span=(-0.25, 0.25), n=2,
            rtol=1e-12, atol=1e-13,
        )

        def rhs(t, v):
            y, eta, rw, iw = v
            H = 1j * np.exp(2j * t)
            ydot = (-eta - H.real * y) / H.imag
            etadot = H.real * ydot - H.imag * y
            w0dot = ydot * eta + 1j * y * eta
            return [ydot, etadot, w0dot.real, w0dot.imag]

        ref = solve_ivp(
            rhs, (0.0, 0.25), [0.1, 1.0, 0.0, 0.0],
            method="DOP853", rtol=1e-12, atol=1e-14,
        )
        y, eta, w0, _ = ph.unpack(ph.state(0.25))
        assert abs(y[0] - ref.y[0, -1]) < 1e-8
        assert abs(eta[0] - ref.y[1, -1]) < 1e-8
        assert abs(w0 - (ref.y[2, -1] + 1j * ref.y[3, -1])) < 1e-8

    def test_p2_tube_w0_flat(self):
        # along a curve inside the vanishing tube Im w0 stays exactly flat
        f = sy.fixture_im_parts(2)["p2"]
        ph = wkb.solve_phase_system(
            f, ([0.1], [1.0]), M=3, t_span=(-0.4, 2.4), n=2,
            rtol=1e-10, atol=1e-13,
        )
        core = [abs(ph.w0(t).imag) for t in np.linspace(0.05, 1.95, 9)]
        assert max(core) < 1e-12
        assert ph.w0(-0.4).imag > 0
        assert ph.w0(2.4).imag > 0
        margins = [ph.min_margin(t) for t in np.linspace(-0.4, 2.4, 21)]
        assert min(margins) > 0.45

    def test_positivity_loss_aborts_with_location(self):
        f = se.parse_expression("(x2 + 0.4*x1 + 0.3*x2^2)*xi2 + 0.2*x2*xi2^2", 2)
        with pytest.raises(wkb.WKBError, match="positive definiteness.*t="):
            wkb.solve_phase_system(f, ([0.1], [1.0]), M=2, t_span=(-1.5, 1.5), n=2)

    def test_three_dimensional_case_runs(self):
        f = se.parse_expression("(x2 + 0.5*x3)*xi3", 3)
        ph = wkb.solve_phase_system(
            f, ([0.0, 0.1], [0.0, 1.0]), M=2, t_span=(-0.2, 0.2), n=3
        )
        H = ph.hessian(0.15)
        assert np.max(np.abs(H - H.T)) < 1e-12
        assert ph.min_margin(0.15) > 0
        val = ph.w_value(0.15, np.array([0.05, 0.12]))
        assert np.isfinite(val.real) and np.isfinite(val.imag)

    def test_xi1_dependence_rejected(self):
        f = se.parse_expression("x2*xi1", 2)
        with pytest.raises(wkb.WKBError, match="independent"):
            wkb.solve_phase_system(f, ([0.0], [1.0]), M=2, t_span=(-1, 1), n=2)

    def test_complex_f_rejected(self):
        f = se.parse_expression("i*x2*xi2", 2)
        with pytest.raises(wkb.WKBError, match="real"):
            wkb.solve_phase_system(f, ([0.0], [1.0]), M=2, t_span=(-1, 1), n=2)

    def test_order_too_small_rejected(self):
        f = se.parse_expression("0", 2)
        with pytest.raises(wkb.WKBError, match="at least 2"):
            wkb.solve_phase_system(f, ([0.0], [1.0]), M=1, t_span=(-1, 1), n=2)

    def test_json_round_trip(self):
        _, ph = phase_model_t()
        back = wkb.PhaseExpansion.from_json(ph.to_json())
        assert np.max(np.abs(back.state(0.17) - ph.state(0.17))) < 1e-14
        assert back.w0(0.1) == pytest.approx(ph.w0(0.1))


class TestNormalizeW0:
    def test_single_crossing_point_mode(self):
        # f = t along the curve: Im w0 = t^2/2, unique interior minimum at 0
        _, ph = phase_model_t(span=(-0.3, 0.3))
        nor = wkb.normalize_w0(ph, mode="point")
        assert abs(nor.w0(0.0)) < 1e-10
        assert nor.w0(-0.3).imag > 0
        assert nor.w0(0.3).imag > 0
        assert min(nor.w0(t).imag for t in np.linspace(-0.3, 0.3, 41)) > -1e-12

    def test_p2_interval_mode_flat_core(self):
        f = sy.fixture_im_parts(2)["p2"]
        ph = wkb.solve_phase_system(
            f, ([0.1], [1.0]), M=3, t_span=(-0.4, 2.4), n=2,
            rtol=1e-10, atol=1e-13,
        )
        nor = wkb.normalize_w0(ph, mode="interval")
        for t in np.linspace(0.05, 1.95, 9):
            assert abs(nor.w0(float(t))) < 1e-12
        assert nor.w0(-0.4).imag > 0
        assert nor.w0(2.4).imag > 0

    def test_no_sign_change_rejected(self):
        f = se.parse_expression("(1 + x1^2)*xi2", 2)
        ph = wkb.solve_phase_system(f, ([0.0], [1.0]), M=2, t_span=(-0.3, 0.3), n=2)
        with pytest.raises(wkb.WKBError, match="never changed sign"):
            wkb.normalize_w0(ph)

    def test_bad_mode_rejected(self):
        _, ph = phase_model_t()
        with pytest.raises(wkb.WKBError, match="mode"):
            wkb.normalize_w0(ph, mode="weird")


class TestTransport:
    def test_zero_symbol_gives_constant_coefficients(self):
        f0 = se.parse_expression("0", 2)
        ph = wkb.solve_phase_system(f0, ([0.0], [1.0]), M=3, t_span=(-1, 1), n=2)
        amp = wkb.solve_transport(f0, ph, beta0=(1,))
        for t in (-1.0, 0.3, 1.0):
            c = amp.phi0_coeffs(t)
            assert c[(1,)] == pytest.approx(1.0, abs=1e-12)
            assert abs(c[(0,)]) < 1e-12 and abs(c[(2,)]) < 1e-12

    def test_prescription_at_t0(self):
        f, ph = phase_model_t()
        amp = wkb.solve_transport(f, ph, beta0=(0,))
        c = amp.phi0_coeffs(ph.t0)
        assert c[(0,)] == pytest.approx(1.0, abs=1e-12)
        assert abs(c[(1,)]) < 1e-12

    def test_planted_diagonal_matrix_closed_form(self):
        f0 = se.parse_expression("0", 2)
        ph = wkb.solve_phase_system(f0, ([0.0], [1.0]), M=3, t_span=(-1, 1), n=2)
        lam = np.array([0.3, -0.5, 1.1])
        amp = wkb.solve_transport(
            f0, ph, beta0=(0,), a_matrix=lambda t: 1j * np.diag(lam), rtol=1e-12
        )
        for t in (-0.7, 0.8):
            c = amp.phi0_coeffs(t)
            assert abs(c[(0,)] - np.exp(lam[0] * t)) < 1e-9
            assert abs(c[(1,)]) < 1e-12

    def test_matrix_matches_hand_derivation_t_xi(self):
        # f = t*xi: L phi = D_t phi - i t D_1 phi, so
        # a = i * [[0, ydot + i t], [0, 0]]
        f, ph = phase_model_t()
        for t in (-0.2, 0.1):
            H = ph.hessian(t)[0, 0]
            ydot = (0.0 - H.real * t) / H.imag
            hand = 1j * np.array([[0, ydot + 1j * t], [0, 0]])
            assert np.max(np.abs(hand - wkb.transport_matrix(f, ph, t))) < 1e-12

    def test_matrix_matches_hand_derivation_x_xi(self):
        # f = x*xi: L phi = D_t phi - i (y+z) D_1 phi - phi, generator
        # [[i, ydot + i y], [0, 2i]]
        f = se.parse_expression("x2*xi2", 2)
        ph = wkb.solve_phase_system(
            f, ([0.1], [1.0]), M=2, t_span=(-0.25, 0.25), n=2, rtol=1e-11
        )
        for t in (-0.15, 0.2):
            y, eta, _, _ = ph.unpack(ph.state(t))
            H = ph.hessian(t)[0, 0]
            ydot = (-eta[0] - H.real * y[0]) / H.imag
            gen = np.array([[1j, ydot + 1j * y[0]], [0.0, 2j]])
            assert np.max(np.abs(1j * gen - wkb.transport_matrix(f, ph, t))) < 1e-12

    def test_higher_amplitudes_gated(self):
        f, ph = phase_model_t()
        with pytest.raises(wkb.WKBError, match="phi_0"):
            wkb.solve_transport(f, ph, m_amp=1)

    def test_bad_beta0_rejected(self):
        f, ph = phase_model_t()
        with pytest.raises(wkb.WKBError, match="beta0"):
            wkb.solve_transport(f, ph, beta0=(5,))

    def test_json_round_trip(self):
        f, ph = phase_model_t()
        amp = wkb.solve_transport(f, ph, beta0=(0,))
        back = wkb.AmplitudeSet.from_json(amp.to_json())
        ca = amp.phi0_coeffs(0.21)
        cb = back.phi0_coeffs(0.21)
        assert max(abs(ca[a] - cb[a]) for a in amp.alphas) < 1e-14


class TestEiconalResidual:
    def test_zero_symbol_zero_residual(self):
        f0 = se.parse_expression("0", 2)
        ph = wkb.solve_phase_system(f0, ([0.0], [1.0]), M=2, t_span=(-1, 1), n=2)
        out = wkb.eiconal_residual(ph, f0, [0.1])
        assert out["residuals"][0.1] == 0.0

    @pytest.mark.parametrize("M,lo,hi", [(2, 2.7, 3.3), (3, 3.7, 4.3)])
    def test_slope_tracks_expansion_order(self, M, lo, hi):
        f = se.parse_expression("(x2 + 0.4*x1 + 0.3*x2^2)*xi2 + 0.2*x2*xi2^2", 2)
        ph = wkb.solve_phase_system(
            f, ([0.1], [1.0]), M=M, t_span=(-0.2, 0.2), n=2,
            rtol=1e-11, atol=1e-13,
        )
        out = wkb.eiconal_residual(ph, f, [0.1, 0.05, 0.025])
        assert lo <= out["slope"] <= hi


class TestAssemble:
    def test_flat_phase_stub(self):
        grid = wkb.GridSpec(box=((-1.0, 1.0), (-1.0, 1.0)), dims=(21, 21))
        stub = lambda pts: pts[..., 0] + 0j
        v = wkb.assemble_v(stub, None, tau=1.0, N=0, grid=grid, cutoff=False)
        x1 = grid.mesh()[..., 0]
        assert np.max(np.abs(v - np.exp(1j * x1))) == 0.0

    def test_nyquist_guard(self):
        grid = wkb.GridSpec(box=((-1.0, 1.0), (-1.0, 1.0)), dims=(21, 21))
        stub = lambda pts: pts[..., 0] + 0j
        with pytest.raises(wkb.WKBError, match="coarse"):
            wkb.assemble_v(stub, None, tau=40.0, N=0, grid=grid, cutoff=False)

    def test_on_curve_magnitude_and_decay(self):
        f, ph = phase_model_t()
        amp = wkb.solve_transport(
            f, ph, beta0=(0,), support_box=((-0.3, 0.3), (-0.8, 0.8))
        )
        grid = wkb.GridSpec(box=((-0.3, 0.3), (-1.0, 1.0)), dims=(49, 161))
        tau, N = 30.0, 1
        v = wkb.assemble_v(ph, amp, tau, N, grid)
        taxis, xaxis = grid.axes()
        mid = np.abs(taxis) <= 0.1  # inside the cutoff plateau
        pred = tau ** (N + 2) * np.array(
            [
                abs(
                    amp.phi0_value(t, [0.0], y=ph.y(t))
                    * np.exp(1j * tau * ph.w0(t))
                )
                for t in taxis
            ]
        )
        on_curve = np.abs(v[:, 80])
        assert np.max(np.abs(on_curve[mid] / pred[mid] - 1)) < 1e-10
        W = np.array([ph.w_value(t, xaxis[:, None]) for t in taxis])
        sup_phi = max(
            np.max(np.abs(amp.phi0_value(t, xaxis[:, None], y=ph.y(t))))
            for t in taxis
        )
        bound = tau ** (N + 2) * sup_phi * np.exp(-tau * W.imag)
        assert np.all(np.abs(v) <= bound * (1 + 1e-9) + 1e-12)


class TestModel:
    def test_phase_values_at_origin(self):
        phase = wkb.ModelPhase(3)
        assert phase.value(np.zeros(3)) == 0
        g = phase.grad_re(np.zeros(3))
        assert np.allclose(g, [0.0, 0.0, 1.0])

    def test_pstar_w_vanishes_symbolically(self):
        for n in (2, 3):
            res = wkb.model_pstar_residual(n)
            rng = np.random.default_rng(3)
            for _ in range(20):
                x = rng.uniform(-1, 1, n)
                assert abs(se.evaluate(res, x, np.zeros(n))) < 1e-12

    def test_im_w_quarter_bound(self):
        sol = wkb.model_solution(tau=40.0, n=2, radius=0.5, N=1)
        pts = sol.grid.mesh()
        w = sol.phase.value(pts)
        assert np.min(w.imag - np.sum(pts**2, -1) / 4) >= 0

    def test_radius_too_large_rejected(self):
        with pytest.raises(wkb.WKBError, match="shrink"):
            wkb.model_solution(tau=40.0, n=2, radius=2.0)

    def test_ck_constant_data(self):
        phi = wkb.solve_ck_amplitude({(0,): 1.0}, 6, 2)
        assert phi == {(0, 0): 1.0}

    def test_ck_linear_data_closed_form(self):
        # f = x_n gives phi = x_n + i x_1^2 / 2, exactly
        phi = wkb.solve_ck_amplitude({(1,): 1.0}, 6, 2)
        assert phi == {(0, 1): 1.0, (2, 0): 0.5j}
        assert wkb.ck_residual(phi, 2) == 0.0

    def test_ck_prescribed_slice(self):
        init = {(0, 2): 1.0, (1, 1): -2.0}
        phi = wkb.solve_ck_amplitude(init, 5, 3)
        for key, val in init.items():
            assert phi[(0,) + key] == val
        assert wkb.ck_residual(phi, 3) < 1e-12

    def test_ck_residual_truncation_order(self):
        # generic analytic data: the PDE holds below the x1 truncation degree
        init = {(0,): 1.0, (1,): 0.5, (2,): -0.25, (3,): 2.0}
        phi = wkb.solve_ck_amplitude(init, 8, 2)
        assert wkb.ck_residual(phi, 2) < 1e-12

    def test_center_amplitude(self):
        sol = wkb.model_solution(tau=40.0, n=2, radius=0.5, N=1, points_per_axis=41)
        center = sol.values[20, 20]
        assert abs(center) == pytest.approx(40.0**3)

    def test_binary_round_trip(self, tmp_path):
        sol = wkb.model_solution(tau=40.0, n=2, radius=0.5, N=1, points_per_axis=21)
        path = str(tmp_path / "grid.bin")
        sol.save(path)
        grid, values = wkb.read_grid(path)
        assert grid.box == sol.grid.box
        assert grid.dims == sol.grid.dims
        assert np.array_equal(values, sol.values)
