import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invbarrier.polyalg import (DynamicalSystem, ParamPolynomial, Polynomial, PolynomialSyntaxError, evaluate,
                                lie_derivative, monomial_basis, param_template, parse_polynomial,
                                sample_trajectory)

V2 = ("x1", "x2")


def P(text, variables=V2):
    return parse_polynomial(text, variables)


def poly_strategy(nvars=2, max_deg=3):
    mono = st.tuples(*[st.integers(0, max_deg)] * nvars).filter(lambda m: sum(m) <= max_deg)
    coeff = st.integers(-5, 5).map(float)
    return st.dictionaries(mono, coeff, max_size=6).map(
        lambda d: Polynomial(d, tuple(f"x{i + 1}" for i in range(nvars))))


# ---------------------------------------------------------------- parsing


def test_parse_basic_terms():
    p = P("3*x1^2*x2 - x2 + 0.5")
    assert p.coeff((2, 1)) == 3.0
    assert p.coeff((0, 1)) == -1.0
    assert p.coeff((0, 0)) == 0.5
    assert p.degree == 3


def test_parse_fraction_and_parentheses():
    p = P("8/3*x1 - (x1 - 1)^2")
    assert p.almost_equal(Polynomial({(1, 0): 8 / 3 + 2, (2, 0): -1.0, (0, 0): -1.0}, V2))


def test_parse_number_power_and_scientific():
    assert P("0.125^2").coeff((0, 0)) == pytest.approx(0.015625)
    assert P("1e-3*x1").coeff((1, 0)) == pytest.approx(1e-3)


def test_parse_unknown_variable_names_it():
    with pytest.raises(PolynomialSyntaxError, match="x3"):
        P("x1 + x3")


@pytest.mark.parametrize("text", ["x1 +", "x1^", "x1^-1", "(x1", "1/0", "x1 ** 2", ""])
def test_parse_errors(text):
    with pytest.raises(PolynomialSyntaxError):
        P(text)


@given(poly_strategy())
def test_str_round_trip(p):
    assert parse_polynomial(str(p), V2).almost_equal(p, 1e-12)


# ---------------------------------------------------------------- ring laws


@given(poly_strategy(), poly_strategy(), poly_strategy())
@settings(max_examples=60)
def test_ring_laws(p, q, r):
    assert (p + q) == (q + p)
    assert (p * q).almost_equal(q * p)
    assert ((p + q) + r).almost_equal(p + (q + r))
    assert (p * (q + r)).almost_equal(p * q + p * r)
    assert (p - p).is_zero


@given(poly_strategy(), poly_strategy(), st.lists(st.floats(-2, 2), min_size=2, max_size=2))
@settings(max_examples=60)
def test_evaluation_is_a_homomorphism(p, q, x):
    assert (p * q)(x) == pytest.approx(p(x) * q(x), rel=1e-9, abs=1e-9)
    assert (p + q)(x) == pytest.approx(p(x) + q(x), rel=1e-9, abs=1e-9)


@given(poly_strategy())
def test_eval_many_matches_pointwise(p):
    pts = np.random.default_rng(0).uniform(-2, 2, (7, 2))
    assert np.allclose(p.eval_many(pts), [p(x) for x in pts])


@given(poly_strategy(), poly_strategy())
@settings(max_examples=40)
def test_derivative_product_rule(p, q):
    for v in V2:
        assert (p * q).derivative(v).almost_equal(p.derivative(v) * q + p * q.derivative(v))


def test_pow_and_degree():
    p = P("x1 + x2") ** 3
    assert p.coeff((2, 1)) == 3.0
    assert p.degree == 3
    assert (P("x1") ** 0) == Polynomial.constant(1.0, V2)


def test_mixing_variable_sets_raises():
    with pytest.raises(ValueError):
        P("x1") + parse_polynomial("y", ("y",))


# ---------------------------------------------------------------- Lie derivatives


def test_lie_derivative_first_order_example():
    B = P("x1 + x2^2")
    f = [P("-x1"), P("x2")]
    assert lie_derivative(B, f, 1) == P("-x1 + 2*x2^2")
    assert lie_derivative(B, f, 1)((-1, 1)) == 3.0


def test_lie_derivative_higher_order_example():
    B = P("x1 + x2^2")
    f = [P("-2*x2"), P("x1^2")]
    assert lie_derivative(B, f, 1) == P("2*x1^2*x2 - 2*x2")
    assert lie_derivative(B, f, 2) == P("2*x1^4 - 2*x1^2 - 8*x1*x2^2")
    assert lie_derivative(B, f, 1)((-1, 1)) == 0.0
    assert lie_derivative(B, f, 2)((-1, 1)) > 0


def test_lie_derivative_order_zero_and_constant():
    B = P("x1*x2 + 4")
    f = [P("x2"), P("x1")]
    assert lie_derivative(B, f, 0) == B
    assert lie_derivative(P("7"), f, 3).is_zero


def test_lie_derivative_dimension_mismatch():
    with pytest.raises(ValueError):
        lie_derivative(P("x1"), [P("x1")], 1)


@given(poly_strategy(max_deg=2), st.lists(st.floats(-1, 1), min_size=2, max_size=2))
@settings(max_examples=40)
def test_lie_derivative_is_directional_derivative(B, x):
    f = [P("x2 - x1^2"), P("-x1 + 0.5*x2")]
    x = np.array(x)
    h = 1e-6
    fx = np.array([fi(x) for fi in f])
    numeric = (B(x + h * fx) - B(x - h * fx)) / (2 * h)
    assert lie_derivative(B, f, 1)(x) == pytest.approx(numeric, abs=1e-5)


def test_lie_derivative_of_param_polynomial_is_linear_in_params():
    tmpl = param_template([(0, 1), (1, 0)], V2)
    f = [P("x1*x2"), P("-x2")]
    L = lie_derivative(tmpl, f, 1)
    a = np.array([0.3, -1.2])
    direct = lie_derivative(tmpl.instantiate(a), f, 1)
    assert L.instantiate(a).almost_equal(direct)


# ---------------------------------------------------------------- bases and templates


@pytest.mark.parametrize("n,d", [(1, 3), (2, 2), (3, 2), (2, 4), (4, 1)])
def test_monomial_basis_size_and_order(n, d):
    basis = monomial_basis(n, d)
    assert len(basis) == math.comb(n + d, d)
    assert len(set(basis)) == len(basis)
    degs = [sum(m) for m in basis]
    assert degs == sorted(degs)
    assert basis[0] == (0,) * n


def test_monomial_basis_degree_one_puts_x1_first():
    assert monomial_basis(2, 1) == [(0, 0), (1, 0), (0, 1)]


def test_param_template_and_evaluate():
    tmpl = param_template([(0, 1)], V2)
    assert isinstance(tmpl, ParamPolynomial)
    assert evaluate(tmpl, (0.0, 2.0), [-3.0]) == -6.0
    assert evaluate(P("x1^2"), (3.0, 0.0)) == 9.0


# ---------------------------------------------------------------- systems and trajectories


def test_trajectory_matches_exponential_decay():
    sys = DynamicalSystem(("x1",), (parse_polynomial("-x1", ("x1",)),), parse_polynomial("x1 - 1", ("x1",)),
                          parse_polynomial("2 - x1", ("x1",)))
    tr = sample_trajectory(sys, [1.0], 0.01, 200)
    assert np.allclose(tr.states[:, 0], np.exp(-tr.times), atol=1e-9)


def test_trajectory_truncates_when_leaving_domain():
    sys = DynamicalSystem(("x1",), (parse_polynomial("x1", ("x1",)),), parse_polynomial("x1 - 1", ("x1",)),
                          parse_polynomial("2 - x1", ("x1",)), domain=((-1.0, 1.0),))
    tr = sample_trajectory(sys, [1.0], 0.1, 1000)
    assert tr.truncated
    assert len(tr) < 1001


def test_dynamical_system_validation():
    with pytest.raises(ValueError):
        DynamicalSystem(V2, (P("x1"),), P("x1"), P("x2"))
    with pytest.raises(ValueError):
        DynamicalSystem(V2, (P("x1"), P("x2")), P("x1"), P("x2"), lie_order=0)
