import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invbarrier.bnb import BnbConfig, ParamRegion, bisect, branch_and_bound, relaxation_upper_bound
from invbarrier.encode import BilinearMatrixFunction, BmiProblem, TemplateSpec, assemble_bmi, build_constraints
from invbarrier.pipeline import encode_problem
from invbarrier.polyalg import DynamicalSystem, parse_polynomial
from invbarrier.problems import load_benchmark
from invbarrier.sdp import ConicProgram, solve
from invbarrier.verify import CheckConfig, check_certificate

X = ("x",)


def P(text):
    return parse_polynomial(text, X)


def line_system(archimedean=None):
    """x' = 4 - x from [3, 3.5]; unsafe x <= 2; domain [-1, 6]."""
    return DynamicalSystem(X, (P("4 - x"),), P("(x - 3.25)^2 - 0.0625"), P("x - 2"), domain=((-1.0, 6.0),),
                           archimedean_radius=archimedean)


def line_problem(mode="sufficient"):
    # B = a - 0.2 x: valid exactly for a in [0.4 + eps, 0.6]
    sys = line_system(36.0 if mode == "necessary" else None)
    spec = TemplateSpec(monomials=[(0,)], fixed=P("-0.2*x"), epsilon=1e-4)
    cons, reg = build_constraints(sys, spec, mode)
    return sys, assemble_bmi(cons, reg, (1.0, 100.0))


def toy_bmi(F, H, G, Fij, L_a=1.0, L_s=1.0):
    blk = BilinearMatrixFunction(np.atleast_2d(F), np.array(H), np.array(G), Fij)
    return BmiProblem([blk], blk.m, blk.n, L_a, L_s)


# ---------------------------------------------------------------- regions


def test_bisect_examples():
    left, right = bisect(ParamRegion.cube(2, 1.0))
    assert np.array_equal(left.lower, [-1, -1]) and np.array_equal(left.upper, [0, 1])
    assert np.array_equal(right.lower, [0, -1]) and np.array_equal(right.upper, [1, 1])
    quarters = [q for half in bisect(ParamRegion(np.zeros(2), np.ones(2))) for q in bisect(half)]
    assert len(quarters) == 4
    assert all(np.allclose(q.widths, [0.5, 0.5]) for q in quarters)
    assert len({tuple(q.lower) for q in quarters}) == 4
    with pytest.raises(ValueError):
        bisect(ParamRegion(np.zeros(2), np.zeros(2)))


@given(st.integers(1, 3), st.floats(0.1, 5.0), st.floats(0.01, 1.0))
@settings(max_examples=30)
def test_bisection_depth_matches_counting_argument(dim, L, eta):
    region = ParamRegion.cube(dim, L)
    steps = 0
    while region.width >= eta:
        region = bisect(region)[0]
        steps += 1
    per_axis = math.ceil(math.log2(2 * L / eta)) if 2 * L >= eta else 0
    # exact powers of two land on width == eta, which needs one more split
    assert steps in (dim * per_axis, dim * (per_axis + 1))


def test_region_helpers():
    r = ParamRegion(np.array([0.0, -1.0]), np.array([2.0, 1.0]))
    assert np.allclose(r.center, [1.0, 0.0])
    assert r.width == 2.0
    assert r.contains([2.0, 1.0]) and not r.contains([2.1, 0.0])
    pts = r.sample(np.random.default_rng(0), 50)
    assert all(r.contains(p) for p in pts)
    with pytest.raises(ValueError):
        ParamRegion(np.array([1.0]), np.array([0.0]))


# ---------------------------------------------------------------- relaxation bound


def test_relaxation_of_scalar_product():
    # max lambda s.t. -a s + lambda <= 0; grid optimum 1 at a = s = 1
    prob = toy_bmi([[0.0]], [[[0.0]]], [[[0.0]]], {(0, 0): np.array([[-1.0]])})
    bound = relaxation_upper_bound(prob, ParamRegion(np.zeros(1), np.ones(1)))
    assert bound >= 1.0 - 1e-6


def grid_optimum(prob, step=1e-2):
    g = np.arange(-1.0, 1.0 + step / 2, step)
    best = -np.inf
    for a in g:
        for s in g:
            if np.hypot(0, s) <= prob.L_s:
                best = max(best, prob.optimal_lambda([a], [s]))
    return best


@pytest.mark.parametrize("seed", range(5))
def test_relaxation_dominates_grid_optimum(seed):
    rng = np.random.default_rng(seed)

    def sym():
        X = rng.normal(size=(2, 2))
        return X + X.T

    prob = toy_bmi(sym(), [sym()], [sym()], {(0, 0): sym()})
    assert relaxation_upper_bound(prob) >= grid_optimum(prob) - 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_relaxation_is_exact_on_a_point_region(seed):
    rng = np.random.default_rng(seed)

    def sym():
        X = rng.normal(size=(3, 3))
        return X + X.T

    prob = toy_bmi(sym() - 6 * np.eye(3), [sym()], [sym(), sym()], {(0, 0): sym(), (0, 1): sym()}, L_s=2.0)
    a0 = np.array([0.37])
    bound = relaxation_upper_bound(prob, ParamRegion(a0, a0.copy()))
    # with a fixed the problem is an LMI in (lambda, s)
    F0, G = prob.blocks[0].fix_a(a0)
    exact = ConicProgram(3, np.array([1.0, 0.0, 0.0]))
    exact.add_lmi(F0, {0: np.eye(3), 1: G[0], 2: G[1]})
    exact.add_norm_bound([1, 2], prob.L_s)
    ref = solve(exact).objective
    assert bound == pytest.approx(ref, abs=1e-5)
    assert bound >= ref - 1e-6


def test_relaxation_bounds_the_overview_optimum():
    from invbarrier.dcp import bmi_dc, initial_solution
    bmi, _ = encode_problem(load_benchmark("overview"))
    lam = bmi_dc(bmi, initial_solution(bmi, 1.0), 1e-6, 10).last.lam
    assert relaxation_upper_bound(bmi) >= lam - 1e-6


# ---------------------------------------------------------------- search


def test_line_problem_valid_set_on_grid():
    sys, bmi = line_problem()
    cfg = CheckConfig(n_points=4_000, epsilon_check=5e-5)
    template = bmi.registry.template
    for a in np.linspace(0.2, 0.8, 25):
        valid = check_certificate(sys, template.instantiate([a]), cfg).valid
        if abs(a - 0.4) > 1e-3 and abs(a - 0.6) > 1e-3:
            assert valid == (0.4 < a < 0.6), a


def test_branch_and_bound_finds_parameter_in_the_valid_interval():
    sys, bmi = line_problem()
    res = branch_and_bound(bmi, sys, eta=0.05, cfg=BnbConfig(seed=1))
    assert res.found
    assert 0.4 <= res.a[0] <= 0.6
    assert res.certificate.valid
    assert res.reason in ("sample", "dc")
    assert res.state.regions <= 1 + 2 * 4


def test_branch_and_bound_on_overview():
    bmi, reg = encode_problem(load_benchmark("overview"))
    prob = load_benchmark("overview")
    res = branch_and_bound(bmi, prob.system, eta=0.05)
    assert res.found and res.state.regions == 1
    assert res.a[0] < 0
    assert check_certificate(prob.system, reg.template.instantiate(res.a),
                             CheckConfig(epsilon_check=prob.spec.epsilon / 2)).valid


def test_necessary_mode_prunes_invalid_region_without_dc_runs():
    sys, bmi = line_problem("necessary")
    region = ParamRegion(np.array([-1.0]), np.array([-0.5]))
    assert relaxation_upper_bound(bmi, region) < 0
    res = branch_and_bound(bmi, sys, region, eta=0.05, cfg=BnbConfig(mode="necessary"))
    assert not res.found
    assert res.reason == "exhausted"
    assert res.state.pruned == 1
    assert res.state.dc_runs == 0 and res.state.regions == 0


def test_branch_and_bound_respects_limits():
    sys, bmi = line_problem()
    res = branch_and_bound(bmi, sys, ParamRegion(np.array([-1.0]), np.array([0.0])), eta=0.05,
                           cfg=BnbConfig(max_regions=3))
    assert not res.found and res.reason == "region-limit"
    res = branch_and_bound(bmi, sys, ParamRegion(np.array([-1.0]), np.array([0.0])), eta=0.05,
                           cfg=BnbConfig(time_limit=0.0))
    assert not res.found and res.reason == "time-limit"
    with pytest.raises(ValueError):
        branch_and_bound(bmi, sys, eta=0.0)


def test_invalid_half_line_is_exhausted_without_a_false_positive():
    sys, bmi = line_problem()
    res = branch_and_bound(bmi, sys, ParamRegion(np.array([-1.0]), np.array([0.3])), eta=0.1,
                           cfg=BnbConfig(max_iter=5))
    assert not res.found
    assert res.reason == "exhausted"
    assert res.state.too_fine > 0
