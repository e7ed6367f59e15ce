import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invbarrier.dcdecomp import decompose, kronecker_form, power_iteration, sqrt_psd, thin_factor
from invbarrier.encode import BilinearMatrixFunction
from invbarrier.pipeline import encode_problem
from invbarrier.problems import load_benchmark


def random_bmf(rng, m, n, p, density=0.5):
    def sym():
        X = rng.normal(size=(p, p))
        return X + X.T
    Fij = {(i, j): sym() for i in range(m) for j in range(n) if rng.random() < density}
    return BilinearMatrixFunction(sym(), np.array([sym() for _ in range(m)]),
                                  np.array([sym() for _ in range(n)]), Fij)


def check_invariants(dc):
    M = dc.M
    assert np.linalg.norm(M - (dc.M1 - dc.M2)) <= 1e-8 * (1 + np.linalg.norm(M))
    if M.size:
        assert np.linalg.eigvalsh(dc.M1)[0] >= -1e-8
        assert np.linalg.eigvalsh(dc.M2)[0] >= -1e-8
    assert np.linalg.norm(dc.N.T @ dc.N - dc.M1) <= 1e-7 * (1 + np.linalg.norm(dc.M1))


@pytest.fixture(scope="module")
def overview_split():
    bmi, _ = encode_problem(load_benchmark("overview"))
    blk = bmi.blocks[1]
    kf = kronecker_form(blk, compact=True)
    return blk, kf, decompose(kf, "eig")


# ---------------------------------------------------------------- Kronecker form


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 10_000), st.booleans())
@settings(max_examples=40, deadline=None)
def test_kronecker_form_reproduces_direct_evaluation(m, n, p, seed, compact):
    rng = np.random.default_rng(seed)
    bmf = random_bmf(rng, m, n, p)
    kf = kronecker_form(bmf, compact=compact)
    assert np.allclose(kf.M, kf.M.T)
    for _ in range(5):
        a, s = rng.normal(size=m), rng.normal(size=n)
        if compact:
            # dropped coordinates only carry affine terms
            keep_a = np.zeros(m)
            keep_a[kf.a_idx] = a[kf.a_idx]
            keep_s = np.zeros(n)
            keep_s[kf.s_idx] = s[kf.s_idx]
            assert np.allclose(kf.evaluate(a, s), bmf(keep_a, keep_s))
        else:
            assert np.allclose(kf.evaluate(a, s), bmf(a, s))


def test_kronecker_form_of_overview_block(overview_split):
    blk, kf, _ = overview_split
    assert kf.p == 3 and kf.nz == 4
    rng = np.random.default_rng(1)
    for _ in range(100):
        a = rng.normal(size=blk.m)
        s = rng.normal(size=blk.n)
        s_keep = np.zeros(blk.n)
        s_keep[kf.s_idx] = s[kf.s_idx]
        assert np.allclose(kf.evaluate(a, s), blk(a, s_keep))
    # a*s0 and a*s1 sit off the diagonal (two entries each), a*s2 on it
    assert np.count_nonzero(kf.Gamma) == 5


def test_kronecker_form_affine_when_uncoupled():
    rng = np.random.default_rng(0)
    bmf = random_bmf(rng, 2, 2, 3, density=0.0)
    kf = kronecker_form(bmf)
    assert not np.any(kf.M)
    dc = decompose(kf, "eig")
    assert not np.any(dc.M1) and not np.any(dc.M2)


def test_kronecker_form_scalar_case():
    bmf = BilinearMatrixFunction(np.zeros((1, 1)), np.zeros((1, 1, 1)), np.zeros((1, 1, 1)),
                                 {(0, 0): np.array([[2.0]])})
    kf = kronecker_form(bmf)
    assert np.array_equal(kf.Gamma, [[1.0]])
    assert np.array_equal(kf.M, [[0.0, 1.0], [1.0, 0.0]])


# ---------------------------------------------------------------- decompositions


def test_overview_split_matches_hand_computed_matrices(overview_split):
    _, kf, dc = overview_split
    check_invariants(dc)

    def concave_part(a, s0, s1, s2):
        return np.array([
            [a * a + 0.408 * s0 ** 2, 0.408 * s0 * s1, 2 * a * s0 + 0.816 * s0 * s2],
            [0.408 * s0 * s1, a * a + 0.408 * s1 ** 2, 2 * a * s1 + 0.816 * s1 * s2],
            [2 * a * s0 + 0.816 * s0 * s2, 2 * a * s1 + 0.816 * s1 * s2,
             2.449 * a * a + 4 * a * s2 + s0 * s0 + s1 * s1 + 1.632 * s2 * s2]]) / 8

    def convex_part(lam, a, s0, s1, s2):
        # the (1,1) entry is 0.8a/8: it must reproduce the 0.1a entry of the block itself
        return lam * np.eye(3) + np.array([
            [0.8 * a + a * a + 0.408 * s0 ** 2, 0.408 * s0 * s1, -2 * a * s0 + 0.816 * s0 * s2],
            [0.408 * s0 * s1, a * a + 0.408 * s1 ** 2, 4 * a - 2 * a * s1 + 0.816 * s1 * s2],
            [-2 * a * s0 + 0.816 * s0 * s2, 4 * a - 2 * a * s1 + 0.816 * s1 * s2,
             -4 * a + 2.449 * a * a - 4 * a * s2 + s0 * s0 + s1 * s1 + 1.632 * s2 * s2]]) / 8

    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.uniform(-1, 1, 4)
        lam = rng.normal()
        Z = kf.Zmat(z)
        minus = Z.T @ dc.M2 @ Z
        plus = lam * np.eye(3) + Z.T @ dc.M1 @ Z + kf.Omega @ Z + kf.Fconst
        assert np.abs(minus - concave_part(*z)).max() < 1e-3
        assert np.abs(plus - convex_part(lam, *z)).max() < 1e-3


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 10_000),
       st.sampled_from(["eig", "bound", "sdp"]))
@settings(max_examples=30, deadline=None)
def test_decomposition_invariants(m, n, p, seed, method):
    kf = kronecker_form(random_bmf(np.random.default_rng(seed), m, n, p))
    dc = decompose(kf, method)
    assert dc.method == method
    check_invariants(dc)


def test_eig_on_psd_input_has_zero_concave_part():
    kf = kronecker_form(random_bmf(np.random.default_rng(0), 1, 1, 2))
    X = np.random.default_rng(1).normal(size=kf.M.shape)
    kf.M = X @ X.T
    dc = decompose(kf, "eig")
    assert np.allclose(dc.M2, 0, atol=1e-8)
    assert np.allclose(dc.M1, kf.M)


def test_bound_method_with_given_upper_bound():
    kf = kronecker_form(random_bmf(np.random.default_rng(0), 1, 1, 1))
    kf.M = np.diag([2.0, -3.0])
    dc = decompose(kf, "bound", lam_u=2.0)
    assert np.allclose(dc.M1, 2 * np.eye(2))
    assert np.allclose(dc.M2, np.diag([0.0, 5.0]))


def test_bound_method_uses_safety_factor():
    kf = kronecker_form(random_bmf(np.random.default_rng(4), 2, 2, 2))
    dc = decompose(kf, "bound")
    top = np.linalg.eigvalsh(kf.M)[-1]
    assert dc.lam_u == pytest.approx(1.01 * top, rel=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_sdp_method_has_smaller_concave_trace_than_bound(seed):
    kf = kronecker_form(random_bmf(np.random.default_rng(seed), 2, 2, 2, density=0.4))
    sdp = decompose(kf, "sdp")
    bound = decompose(kf, "bound")
    assert np.trace(sdp.M2) <= np.trace(bound.M2) + 1e-6


def test_unknown_method():
    kf = kronecker_form(random_bmf(np.random.default_rng(0), 1, 1, 1))
    with pytest.raises(ValueError):
        decompose(kf, "cholesky")


# ---------------------------------------------------------------- helpers


def test_sqrt_psd_examples():
    assert np.allclose(sqrt_psd(np.eye(3)), np.eye(3))
    M = np.diag([4.0, 0.0, 9.0])
    assert np.allclose(sqrt_psd(M), np.diag([2.0, 0.0, 3.0]))
    with pytest.raises(ValueError):
        sqrt_psd(np.diag([1.0, -1.0]))
    # round-off below the clamp is accepted
    assert np.allclose(sqrt_psd(np.diag([1.0, -1e-12])), np.diag([1.0, 0.0]))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
@settings(max_examples=40)
def test_sqrt_psd_property(k, r, seed):
    X = np.random.default_rng(seed).normal(size=(r, k))
    M = X.T @ X
    for N in (sqrt_psd(M), thin_factor(M)):
        assert np.linalg.norm(N.T @ N - M) <= 1e-7 * (1 + np.linalg.norm(M))
    assert thin_factor(M).shape[0] <= min(k, r)


@given(st.integers(1, 8), st.integers(0, 10_000))
@settings(max_examples=40)
def test_power_iteration_finds_largest_eigenvalue(k, seed):
    X = np.random.default_rng(seed).normal(size=(k, k))
    M = X + X.T
    top = power_iteration(M, tol=1e-13, max_iter=200_000)
    if top is not None:
        w = np.linalg.eigvalsh(M)
        # the Rayleigh quotient never exceeds the top eigenvalue and ends near it
        assert top <= w[-1] + 1e-9
        assert top == pytest.approx(w[-1], abs=1e-3 * (1 + abs(w).max()))


def test_power_iteration_degenerate():
    assert power_iteration(np.zeros((3, 3))) == 0.0
    assert power_iteration(np.zeros((0, 0))) == 0.0
