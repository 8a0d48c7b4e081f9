import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psiwork import symexpr as se


def ev(src, n, x, xi):
    return se.evaluate(se.parse_expression(src, n), x, xi)


class TestParse:
    def test_basic_ast(self):
        ast = se.parse_expression("xi1 + i*x1*xi2", 2)
        assert ast == se.Add(
            se.Var("xi", 1),
            se.Mul(se.Mul(se.Const(1j), se.Var("x", 1)), se.Var("xi", 2)),
        )

    def test_syntax_error_offset(self):
        with pytest.raises(se.ExprSyntaxError) as ei:
            se.parse_expression("xi1 +", 2)
        assert ei.value.offset == 5

    def test_unknown_identifier(self):
        with pytest.raises(se.ExprSyntaxError):
            se.parse_expression("foo + 1", 2)

    def test_index_out_of_range(self):
        with pytest.raises(se.ExprSyntaxError):
            se.parse_expression("x3", 2)
        with pytest.raises(se.ExprSyntaxError):
            se.parse_expression("xi5", 4)

    def test_empty(self):
        with pytest.raises(se.ExprSyntaxError):
            se.parse_expression("   ", 2)

    def test_precedence(self):
        # ^ > unary - > * > +
        val = ev("-x1^2 + 2*x1", 1, [3.0], [0.0])
        assert val == pytest.approx(-9 + 6)

    def test_negative_power_rejected(self):
        with pytest.raises(se.ExprSyntaxError):
            se.parse_expression("x1^-2", 1)

    def test_flat_branch_expression(self):
        ast = se.parse_expression("normXiPrime * flatExp(x1 - 2)", 2)
        v = se.evaluate(ast, [3.0, 0.0], [0.0, 2.0])
        assert v == pytest.approx(2.0 * math.exp(-1.0))


class TestRoundTrip:
    CASES = [
        ("xi1 + i*x1*xi2", 2),
        ("normXiPrime * flatExp(x1 - 2)", 3),
        ("cutoff(x1, 0, 2) * x2 - flatExpLin(x2)", 2),
        ("(x1 + xi1)^3 / (1 + xi2^2)", 2),
        ("exp(-x1^2) * 2.5e-1", 1),
    ]

    @pytest.mark.parametrize("src,n", CASES)
    def test_parse_print_parse_identity(self, src, n):
        ast = se.parse_expression(src, n)
        printed = se.print_expression(ast)
        assert se.parse_expression(printed, n) == ast

    def test_derivative_asts_round_trip(self):
        ast = se.parse_expression("cutoff(x1, 0, 2)*x2 + flatExp(x1)", 2)
        d = se.differentiate(ast, "x1")
        printed = se.print_expression(d)
        assert se.parse_expression(printed, 2) == d


class TestBuiltins:
    def test_flatexp_values(self):
        assert ev("flatExp(x1)", 1, [-1.0], [0.0]) == 0
        assert ev("flatExp(x1)", 1, [0.0], [0.0]) == 0
        assert ev("flatExp(x1)", 1, [1.0], [0.0]) == pytest.approx(math.exp(-1))

    def test_flatexp_derivative_value(self):
        # d/dt e^{-1/t^2} = 2 t^-3 e^{-1/t^2}; at t = 0.5 this is 16 e^-4.
        d = se.differentiate(se.parse_expression("flatExp(x1)", 1), "x1")
        v = se.evaluate(d, [0.5], [0.0])
        assert v.real == pytest.approx(16 * math.exp(-4), rel=1e-12)
        assert v.real == pytest.approx(0.29305, rel=1e-4)

    def test_graph_fixture_f_values(self):
        # f(t) = -e^{-1/t^2} (t<0), 0 ([0,2]), e^{-1/(t-2)^2} (t>2)
        f = se.parse_expression("-flatExp(-x1) + flatExp(x1 - 2)", 1)
        assert se.evaluate(f, [-1.0], [0.0]).real == pytest.approx(
            -math.exp(-1), rel=1e-12
        )
        assert se.evaluate(f, [1.0], [0.0]) == 0
        assert se.evaluate(f, [2.5], [0.0]).real == pytest.approx(math.exp(-4))

    def test_flatness_first_six_derivatives(self):
        ast = se.parse_expression("flatExp(x1)", 1)
        for _ in range(6):
            ast = se.differentiate(ast, "x1")
            for t in (0.0, -0.3, -2.0):
                assert se.evaluate(ast, [t], [0.0]) == 0

    def test_flatexplin_flatness(self):
        ast = se.parse_expression("flatExpLin(x1)", 1)
        assert se.evaluate(ast, [2.0], [0.0]).real == pytest.approx(math.exp(-0.5))
        for _ in range(6):
            ast = se.differentiate(ast, "x1")
            assert se.evaluate(ast, [0.0], [0.0]) == 0
            assert se.evaluate(ast, [-1.0], [0.0]) == 0

    def test_cutoff_support(self):
        c = se.parse_expression("cutoff(x1, 0, 2)", 1)
        assert se.evaluate(c, [-0.1], [0.0]) == 0
        assert se.evaluate(c, [2.0], [0.0]) == 0
        assert se.evaluate(c, [1.0], [0.0]).real > 0

    def test_norm_xi_prime(self):
        assert ev("normXiPrime", 3, [0, 0, 0], [5.0, 3.0, 4.0]).real == pytest.approx(
            5.0
        )
        with pytest.raises(se.DomainError):
            ev("normXiPrime", 3, [0, 0, 0], [1.0, 0.0, 0.0])

    def test_norm_xi_prime_derivative(self):
        d = se.differentiate(se.parse_expression("normXiPrime", 3), "xi2")
        assert se.evaluate(d, [0, 0, 0], [0.0, 3.0, 4.0]).real == pytest.approx(0.6)


class TestDifferentiate:
    def test_power_rule(self):
        d = se.differentiate(se.parse_expression("x1^2", 1), "x1")
        assert se.evaluate(d, [3.0], [0.0]).real == pytest.approx(6.0)

    def test_evaluate_trivial_point(self):
        assert ev("xi1 + i*x1*xi2", 2, [0.0, 0.0], [0.0, 1.0]) == 0

    FIXTURES = [
        ("xi1 + i*normXiPrime*(-flatExp(-x1) + flatExp(x1-2) + x2*cutoff(x1,0,2))", 2),
        ("x1^3*xi2 - exp(x2)*xi1/(1 + xi2^2)", 2),
        ("normXiPrime*flatExpLin(x2) + cutoff(x1, -1, 1)", 3),
    ]

    @pytest.mark.parametrize("src,n", FIXTURES)
    def test_fd_agreement(self, src, n):
        ast = se.parse_expression(src, n)
        rng = np.random.default_rng(12345)
        h = 1e-5
        checked = 0
        attempts = 0
        while checked < 100 and attempts < 500:
            attempts += 1
            x = rng.uniform(-2, 3, n)
            xi = rng.uniform(0.5, 2, n)
            kind = rng.choice(["x", "xi"])
            idx = int(rng.integers(1, n + 1))
            d = se.differentiate(ast, (kind, idx))
            xp, xm = x.copy(), x.copy()
            xip, xim = xi.copy(), xi.copy()
            if kind == "x":
                xp[idx - 1] += h
                xm[idx - 1] -= h
            else:
                xip[idx - 1] += h
                xim[idx - 1] -= h
            fd = (se.evaluate(ast, xp, xip) - se.evaluate(ast, xm, xim)) / (2 * h)
            exact = se.evaluate(d, x, xi)
            if abs(fd) < 1e-8 and abs(exact) < 1e-8:
                checked += 1
                continue
            assert abs(exact - fd) / max(1.0, abs(exact)) < 1e-6
            checked += 1
        assert checked == 100


class TestVectorizedEval:
    def test_array_matches_scalar(self):
        ast = se.parse_expression(
            "xi1 + i*normXiPrime*(-flatExp(-x1) + flatExp(x1-2) + x2*cutoff(x1,0,2))",
            2,
        )
        xs = np.linspace(-1, 3, 23)
        arr = se.evaluate(ast, [xs, np.full_like(xs, 0.3)], [0.0, 1.0])
        for j, t in enumerate(xs):
            assert arr[j] == pytest.approx(
                se.evaluate(ast, [t, 0.3], [0.0, 1.0]), abs=1e-15
            )


@settings(max_examples=60, deadline=None)
@given(
    st.integers(-3, 3),
    st.integers(-3, 3),
    st.integers(0, 3),
)
def test_polynomial_eval_property(a, b, k):
    src = f"({a} + {b}*x1)^{k}" if k > 0 else f"({a} + {b}*x1)"
    v = ev(src, 1, [1.5], [0.0])
    expected = (a + b * 1.5) ** k if k > 0 else (a + b * 1.5)
    assert v.real == pytest.approx(expected, rel=1e-12, abs=1e-12)
