import json

import numpy as np
import pytest

from psiwork import factor as fa
from psiwork import jet as jt
from psiwork import symbol as sy
from psiwork import symexpr as se

BASE2 = ((0.0, 0.0), (0.0, 1.0))
BASE3 = ((0.0, 0.0, 0.0), (0.0, 0.0, -1.0))
K = 6


def p_model(n=2):
    return se.parse_expression("xi1 + i*x1*xi2", n)


def jet_err(a, b):
    return np.max(np.abs(a.coeffs - b.coeffs))


class TestMalgrangeDivide:
    def test_q_xi1_f_zero(self):
        p = jt.jet_of(se.parse_expression("xi1", 2), BASE2, K)
        q = jt.jet_of(se.parse_expression("xi1", 2), BASE2, K)
        e, r = fa.malgrange_divide_term(q, p)
        assert abs(e.value - 1.0) == 0
        assert np.max(np.abs(e.coeffs[1:])) == 0
        assert np.max(np.abs(r.coeffs)) == 0

    def test_q_xi2_xi1_free(self):
        p = jt.jet_of(se.parse_expression("xi1", 2), BASE2, K)
        q = jt.jet_of(se.parse_expression("xi2", 2), BASE2, K)
        e, r = fa.malgrange_divide_term(q, p)
        assert np.max(np.abs(e.coeffs)) == 0
        assert jet_err(r, jt.jet_of(se.parse_expression("xi2", 2), BASE2, K - 1)) == 0

    def test_q_xi1_squared_symbolic_oracle(self):
        # (xi1 + if)(xi1 - if) = xi1^2 + f^2, hence e = xi1 - if, r = -f^2
        p = jt.jet_of(p_model(), BASE2, K)
        q = jt.jet_of(se.parse_expression("xi1^2", 2), BASE2, K)
        e, r = fa.malgrange_divide_term(q, p)
        assert jet_err(
            e, jt.jet_of(se.parse_expression("xi1 - i*x1*xi2", 2), BASE2, K - 1)
        ) < 1e-12
        assert jet_err(
            r, jt.jet_of(se.parse_expression("-(x1*xi2)^2", 2), BASE2, K - 1)
        ) < 1e-12

    def test_remainder_xi1_slots_exactly_zero(self):
        p = jt.jet_of(p_model(), BASE2, K)
        q = jt.jet_of(se.parse_expression("xi1^2 + x2*xi1*xi2", 2), BASE2, K)
        _, r = fa.malgrange_divide_term(q, p)
        assert fa._xi1_slot_error(r) == 0.0

    def test_non_unit_factor_rejected(self):
        p = jt.jet_of(se.parse_expression("2*xi1", 2), BASE2, K)
        q = jt.jet_of(se.parse_expression("xi1", 2), BASE2, K)
        with pytest.raises(fa.FactorError):
            fa.malgrange_divide_term(q, p)

    def test_division_identity(self):
        p = jt.jet_of(p_model(), BASE2, K)
        q = jt.jet_of(se.parse_expression("xi1*xi2 + x1^2*xi1", 2), BASE2, K)
        e, r = fa.malgrange_divide_term(q, p)
        back = jt.jet_add(jt.jet_mul(p.truncate(K - 1), e), r)
        assert jet_err(back, q.truncate(K - 1)) < 1e-12


class TestNormalize:
    def test_zero_lower_term_unchanged(self):
        P = sy.ClassicalSymbol.from_exprs(1, [p_model(), se.ZERO], 2)
        N = fa.normalize_lower_order(P, BASE2)
        assert N.terms[1].expr == se.ZERO

    def test_planted_xi1_multiple(self):
        # p0 = xi1 b(x): the one-step division gives quotient b at the base
        # and a xi1-free remainder
        b = se.parse_expression("2 + x1", 2)
        P = sy.ClassicalSymbol.from_exprs(
            1, [p_model(), se.parse_expression("xi1", 2) * b], 2
        )
        N = fa.normalize_lower_order(P, BASE2)
        nj = jt.jet_of(N.terms[1].expr, BASE2, K - 1)
        assert fa._xi1_slot_error(nj) == 0.0
        # oracle: direct hand division of the lower term
        a, r = fa.malgrange_divide_term(
            jt.jet_of(P.terms[1].expr, BASE2, K),
            jt.jet_of(p_model(), BASE2, K),
        )
        assert a.value == pytest.approx(2.0)
        assert jet_err(nj, r) < 1e-12

    def test_idempotence(self):
        P = sy.ClassicalSymbol.from_exprs(
            1, [p_model(), se.parse_expression("xi1*x2 + x1", 2)], 2
        )
        N = fa.normalize_lower_order(P, BASE2)
        N2 = fa.normalize_lower_order(N, BASE2)
        a = jt.jet_of(N.terms[1].expr, BASE2, 4)
        b = jt.jet_of(N2.terms[1].expr, BASE2, 4)
        assert jet_err(a, b) < 1e-10

    def test_principal_form_violation(self):
        P = sy.ClassicalSymbol.from_exprs(
            1, [se.parse_expression("xi1 + xi1*x1", 2), se.ZERO], 2
        )
        with pytest.raises(fa.FactorError):
            fa.normalize_lower_order(P, BASE2)


def planted_factorization():
    n = 2
    P = sy.ClassicalSymbol.from_exprs(
        1, [p_model(), se.parse_expression("x2", n)], n
    )
    e0 = se.parse_expression("2 + x1 - i*x2 + x1*xi2", n)
    em1 = se.parse_expression("x2 + i*x1", n)
    E0 = sy.ClassicalSymbol.from_exprs(0, [e0, em1], n)
    r1 = se.parse_expression("x2*xi2 + i*x1^2", n)
    r0 = se.parse_expression("3 - x1*x2", n)
    comp = sy.compose_symbols(P, E0, 2)
    Q = sy.ClassicalSymbol.from_exprs(
        1, [comp.terms[0].expr + r1, comp.terms[1].expr + r0], n
    )
    return P, E0, (r1, r0), Q


class TestFactorSymbol:
    def test_q_equals_p(self):
        P = sy.ClassicalSymbol.from_exprs(
            1, [p_model(), se.parse_expression("x2", 2)], 2
        )
        res = fa.factor_symbol(P, P, BASE2, depth=2)
        e = dict(res.e_jets)
        assert abs(e[0].value - 1.0) < 1e-10
        assert np.max(np.abs(e[0].coeffs[1:])) < 1e-10
        assert np.max(np.abs(e[-1].coeffs)) < 1e-10
        assert all(np.max(np.abs(j.coeffs)) < 1e-10 for _, j in res.r_jets)

    def test_q_xi1_free_goes_to_remainder(self):
        P = sy.ClassicalSymbol.from_exprs(1, [p_model(), se.ZERO], 2)
        Q = sy.ClassicalSymbol.parse(1, ["x2*xi2", "3 + x1"], 2)
        res = fa.factor_symbol(Q, P, BASE2, depth=2)
        assert all(np.max(np.abs(j.coeffs)) < 1e-12 for _, j in res.e_jets)
        r = dict(res.r_jets)
        assert jet_err(r[1], jt.jet_of(Q.terms[0].expr, BASE2, r[1].order)) < 1e-12
        assert jet_err(r[0], jt.jet_of(Q.terms[1].expr, BASE2, r[0].order)) < 1e-12

    def test_planted_recovery(self):
        P, E0, (r1, r0), Q = planted_factorization()
        res = fa.factor_symbol(Q, P, BASE2, depth=2, order=K)
        e = dict(res.e_jets)
        r = dict(res.r_jets)
        assert jet_err(e[0], jt.jet_of(E0.terms[0].expr, BASE2, e[0].order)) < 1e-8
        assert jet_err(e[-1], jt.jet_of(E0.terms[1].expr, BASE2, e[-1].order)) < 1e-8
        assert jet_err(r[1], jt.jet_of(r1, BASE2, r[1].order)) < 1e-8
        assert jet_err(r[0], jt.jet_of(r0, BASE2, r[0].order)) < 1e-8

    def test_round_trip_recomposition(self):
        # independent oracle: symbolic composition of the reconstructed
        # Taylor factors reproduces Q's jets
        P, _, _, Q = planted_factorization()
        res = fa.factor_symbol(Q, P, BASE2, depth=2, order=K)
        comp = sy.compose_symbols(P, res.E, 2)
        for d in (1, 0):
            lhs = jt.jet_of(comp.term(d).expr + res.R.term(d).expr, BASE2, 3)
            rhs = jt.jet_of(Q.term(d).expr, BASE2, 3)
            assert jet_err(lhs, rhs) < 1e-8

    def test_r_xi1_independence_exact(self):
        P, _, _, Q = planted_factorization()
        res = fa.factor_symbol(Q, P, BASE2, depth=2, order=K)
        for _, j in res.r_jets:
            assert fa._xi1_slot_error(j) == 0.0

    def test_first_nonvanishing_none_when_exact(self):
        P, E0, _, _ = planted_factorization()
        comp = sy.compose_symbols(P, E0, 2)
        Q = sy.ClassicalSymbol.from_exprs(
            1, [comp.terms[0].expr, comp.terms[1].expr], 2
        )
        res = fa.factor_symbol(Q, P, BASE2, depth=2, order=K)
        assert res.first_nonvanishing_index() is None

    def test_first_nonvanishing_planted(self):
        P = sy.ClassicalSymbol.from_exprs(1, [p_model(), se.ZERO], 2)
        Q = sy.ClassicalSymbol.parse(1, ["0", "x2"], 2)
        res = fa.factor_symbol(Q, P, BASE2, depth=2, order=K)
        idx, value = res.first_nonvanishing_index()
        assert (idx.j, idx.k, idx.alpha, idx.beta) == (1, 0, (1,), (0,))
        assert value == pytest.approx(1.0)

    def test_unnormalized_lower_terms_rejected(self):
        P = sy.ClassicalSymbol.from_exprs(
            1, [p_model(), se.parse_expression("xi1*x2", 2)], 2
        )
        with pytest.raises(fa.FactorError):
            fa.factor_symbol(P, P, BASE2, depth=2)

    def test_json_serialization(self):
        P, _, _, Q = planted_factorization()
        res = fa.factor_symbol(Q, P, BASE2, depth=2, order=K)
        d = json.loads(res.to_json())
        assert d["depth"] == 2
        assert d["r_xi1_independent"] is True
        assert all(v < 1e-9 for v in d["residual_norms"].values())


class TestProportionality:
    def lewy(self):
        expr = sy.fixtures()["lewy"].principal.expr
        return sy.ClassicalSymbol.from_exprs(1, [expr, se.ZERO], 3)

    def test_scalar_multiple(self):
        P = self.lewy()
        Q = sy.ClassicalSymbol.from_exprs(
            1, [se.Const(3 + 0j) * P.principal.expr, se.ZERO], 3
        )
        rep = fa.proportionality(P, Q, BASE3)
        assert rep.mu == pytest.approx(3.0)
        assert rep.ok
        assert rep.poly_residual == 0.0

    def test_planted_mu_lewy(self):
        P = self.lewy()
        mu0 = se.parse_expression("2 + i + x1 - 2*x3", 3)
        Q = sy.ClassicalSymbol.from_exprs(
            1, [mu0 * P.principal.expr, se.ZERO], 3
        )
        rep = fa.proportionality(P, Q, BASE3)
        assert abs(rep.mu - (2 + 1j)) < 1e-8
        assert rep.grad_residual < 1e-8
        assert rep.ok

    def test_nonproportional_flagged(self):
        P = self.lewy()
        Q = sy.ClassicalSymbol.from_exprs(
            1, [P.principal.expr + se.parse_expression("xi3", 3), se.ZERO], 3
        )
        rep = fa.proportionality(P, Q, BASE3)
        assert not rep.ok
        assert rep.poly_residual > 0.5

    def test_negative_bracket_rejected(self):
        P = self.lewy()
        pt = ((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
        with pytest.raises(fa.FactorError):
            fa.proportionality(P, P, pt)

    def test_noncharacteristic_rejected(self):
        P = self.lewy()
        pt = ((0.0, 0.0, 0.0), (1.0, 0.0, -1.0))
        with pytest.raises(fa.FactorError):
            fa.proportionality(P, P, pt)


class TestCommutator:
    PT = ((0.0, 0.0), (0.0, 1.0))

    def test_constant_q_passes(self):
        out = fa.commutator_test(p_model(), se.Const(4 + 0j), [self.PT], 4, 2)
        assert out[0]["pass"]

    def test_mu_transport_pass(self):
        out = fa.commutator_test(
            p_model(), se.ZERO, [self.PT], 2, 2,
            mu=se.parse_expression("x2^2", 2),
        )
        assert out[0]["pass"]
        assert out[0]["transport"] == 0

    def test_mu_transport_fail(self):
        out = fa.commutator_test(
            p_model(), se.ZERO, [self.PT], 2, 2,
            mu=se.parse_expression("x1", 2),
        )
        assert not out[0]["pass"]
        assert abs(out[0]["transport"]) == pytest.approx(1.0)

    def test_hand_evaluated_iterates(self):
        # q = x1^2 along p = xi1: H_p(q) = 2x1, H_p^2(q) = 2, H_p^3(q) = 0
        p = se.parse_expression("xi1", 2)
        out = fa.commutator_test(p, se.parse_expression("x1^2", 2), [self.PT], 3, 2)
        assert not out[0]["pass"]
        assert out[0]["values"][1] == pytest.approx(2.0)
        assert out[0]["values"][2] == 0

    def test_off_characteristic_rejected(self):
        with pytest.raises(fa.FactorError):
            fa.commutator_test(
                p_model(), se.ZERO, [(((1.0, 0.0)), ((1.0, 1.0)))], 1, 2
            )


class TestTaylorExpression:
    def test_round_trip_jet(self):
        rng = np.random.default_rng(11)
        expr = se.parse_expression("x1*xi2 + i*x2^2*xi1 - 3*x1", 2)
        j = jt.jet_of(expr, BASE2, 4)
        back = jt.jet_of(fa.taylor_expression(j), BASE2, 4)
        assert jet_err(j, back) < 1e-12

    def test_off_base_agreement(self):
        expr = se.parse_expression("x1^2*xi2 + x2*xi1", 2)
        j = jt.jet_of(expr, BASE2, 6)
        node = fa.taylor_expression(j)
        x = [0.3, -0.2]
        xi = [0.1, 1.4]
        # polynomial of degree <= 3 is captured exactly by a 6-jet
        assert se.evaluate(node, x, xi) == pytest.approx(
            se.evaluate(expr, x, xi)
        )
