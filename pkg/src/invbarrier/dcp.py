"""Difference-of-convex iteration for the lambda-augmented BMI problem.

Each step linearizes the concave part ``-B-`` of every bilinear block at the
current point, turns the remaining convex quadratic matrix inequality into an
LMI through a Schur complement, and solves the resulting conic program with a
proximal term ``delta/2 * ||z - z_k||^2`` (``delta < 0``).  Every iterate stays
feasible for the original BMI because the linearization over-estimates ``-B-``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dcdecomp import DcDecomposition, KroneckerForm, decompose, kronecker_form, thin_factor
from .encode import BmiProblem
from .sdp import ConicProgram, solve

log = logging.getLogger(__name__)

SHRINK = 1e-7


@dataclass
class Solution:
    lam: float
    a: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.s = np.asarray(self.s, dtype=float)

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.a, self.s])


@dataclass
class IterationTrace:
    solutions: list[Solution] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    reason: str = ""
    success: bool = False
    elapsed: float = 0.0

    @property
    def iterations(self) -> int:
        """Number of DCP steps taken (the initial point is not a step)."""
        return max(len(self.solutions) - 1, 0)

    @property
    def last(self) -> Solution:
        return self.solutions[-1]

    def append(self, sol: Solution, objective: float, residual: float, step: float) -> None:
        self.solutions.append(sol)
        self.objectives.append(objective)
        self.residuals.append(residual)
        self.steps.append(step)


def bmi_residual(problem: BmiProblem, sol: Solution) -> float:
    """max over blocks of the largest eigenvalue of F(a, s) + lambda I."""
    return float(problem.max_eigs(sol.a, sol.s).max() + sol.lam)


def _feasible_lambda(problem: BmiProblem, a, s, shrink: float = SHRINK) -> float:
    return problem.optimal_lambda(a, s) - shrink


# ---------------------------------------------------------------- initial solution


def fixed_multiplier_point(problem: BmiProblem, constants=1.0) -> np.ndarray:
    """s with every multiplier polynomial set to the constant of its constraint.

    ``constants`` is a scalar, a sequence indexed by constraint, or a dict
    ``{constraint index: c}`` (missing entries default to 1).  Negative
    constants are only meaningful for the sign-free multipliers ``v``; an SOS
    multiplier asked to take a negative constant raises ValueError.
    """
    reg = problem.registry
    s = np.zeros(problem.n)
    ncons = len(problem.blocks)
    if np.isscalar(constants):
        cs = [float(constants)] * ncons
    elif isinstance(constants, dict):
        cs = [float(constants.get(k, 1.0)) for k in range(ncons)]
    else:
        cs = [float(c) for c in constants] + [1.0] * (ncons - len(constants))
    for mu in reg.multipliers:
        k = mu.const_index
        if k is None:
            continue
        c = cs[mu.constraint]
        if mu.sos and c < 0:
            raise ValueError(f"SOS multiplier {mu.name} needs a non-negative constant, got {c}")
        s[k] = c
    return s


def _halved(constants):
    if np.isscalar(constants):
        return 0.5 * float(constants)
    if isinstance(constants, dict):
        return {k: 0.5 * float(c) for k, c in constants.items()}
    return [0.5 * float(c) for c in constants]


def initial_program(problem: BmiProblem, multiplier_constants=1.0, region=None):
    """The fixed-multiplier LMI as a conic program over (lambda, a, free Gram params).

    Returns ``(program, s_fixed, free_indices)``.
    """
    reg = problem.registry
    m = problem.m
    s_fix = fixed_multiplier_point(problem, multiplier_constants)
    free = reg.free_indices()
    nv = 1 + m + len(free)
    obj = np.zeros(nv)
    obj[0] = 1.0
    prog = ConicProgram(nv, obj)
    fpos = {j: 1 + m + k for k, j in enumerate(free)}
    for blk in problem.blocks:
        F0, H = blk.fix_s(s_fix)
        p = blk.p
        coeffs = {0: np.eye(p)}
        for i in range(m):
            if np.any(H[i]):
                coeffs[1 + i] = H[i]
        for j in free:
            if np.any(blk.G[j]):
                coeffs[fpos[j]] = blk.G[j]
        prog.add_lmi(F0, coeffs)
    prog.add_norm_bound(range(1, 1 + m), problem.L_a)
    rest = problem.L_s ** 2 - float(s_fix @ s_fix)
    if rest <= 0:
        raise ValueError("L_s too small for the fixed multiplier constants")
    if free:
        prog.add_norm_bound(range(1 + m, nv), np.sqrt(rest))
    if region is not None:
        lo, hi = region
        prog.set_bounds(list(range(1, 1 + m)), lo=np.asarray(lo, float), hi=np.asarray(hi, float))
    return prog, s_fix, free


def initial_solution(problem: BmiProblem, multiplier_constants=1.0, region=None, tol: float = 1e-8,
                     backend: str = "embedded", _retry: bool = True) -> Solution:
    """Fix the multipliers to constants and solve the resulting LMI for (lambda, a).

    Free Gram directions stay decision variables since they enter linearly.
    ``region`` optionally boxes ``a`` as ``(lower, upper)``.
    """
    m = problem.m
    prog, s_fix, free = initial_program(problem, multiplier_constants, region)
    fpos = {j: 1 + m + k for k, j in enumerate(free)}
    res = solve(prog, tol, backend)
    if res.x is None or res.status not in ("optimal", "numerical-limit") or (
            res.status != "optimal" and res.violation > 1e-5):
        if _retry:
            halved = _halved(multiplier_constants)
            log.info("initial LMI failed (%s); retrying with halved constants", res.status)
            return initial_solution(problem, halved, region, tol, backend, _retry=False)
        raise RuntimeError(f"initial LMI failed with status {res.status}")
    a = res.x[1:1 + m]
    if region is not None:
        a = np.clip(a, region[0], region[1])
    s = s_fix.copy()
    for j in free:
        s[j] = res.x[fpos[j]]
    return Solution(_feasible_lambda(problem, a, s), a, s)


# ---------------------------------------------------------------- linearized subproblem


@dataclass
class BlockSplit:
    """Per-block DC data cached across iterations."""

    kf: KroneckerForm | None
    dc: DcDecomposition | None
    N: np.ndarray | None

    @property
    def bilinear(self) -> bool:
        return self.kf is not None


def prepare_splits(problem: BmiProblem, method: str = "eig", compact: bool = True) -> list[BlockSplit]:
    out = []
    for blk in problem.blocks:
        if not blk.is_bilinear:
            out.append(BlockSplit(None, None, None))
            continue
        kf = kronecker_form(blk, compact=compact)
        dc = decompose(kf, method)
        out.append(BlockSplit(kf, dc, thin_factor(dc.M1)))
    return out


@dataclass
class Layout:
    """Variable layout of the linearized subproblem: [lambda, a, s, t]."""

    m: int
    n: int

    @property
    def lam(self) -> int:
        return 0

    def a(self, i: int) -> int:
        return 1 + i

    def s(self, j: int) -> int:
        return 1 + self.m + j

    @property
    def t(self) -> int:
        return 1 + self.m + self.n

    @property
    def size(self) -> int:
        return 2 + self.m + self.n


def balance_weights(kf: KroneckerForm, zk_kept: np.ndarray, limit: float = 1e4) -> np.ndarray:
    """Per-coordinate scaling ``alpha`` for a-coordinates, ``1/alpha`` for s-coordinates.

    ``D M D == M`` for ``D = diag(alpha I, I / alpha)`` because ``M`` only has
    off-diagonal a-s blocks, so ``(D M1 D, D M2 D)`` is again a DC split of M.
    ``alpha^2 = |s| / |a|`` equalizes the over-estimation cost of moves that are
    proportional to the current magnitudes.
    """
    na = len(kf.a_idx)
    za = np.linalg.norm(zk_kept[:na])
    zs = np.linalg.norm(zk_kept[na:])
    ratio = (zs + 1e-12) / (za + 1e-12)
    alpha = np.sqrt(np.clip(ratio, 1.0 / limit, limit))
    return np.concatenate([np.full(na, alpha), np.full(kf.nz - na, 1.0 / alpha)])


def _schur_block(blk, split: BlockSplit, zk_kept: np.ndarray, lay: Layout, balance: bool = False):
    """Schur-complement LMI ``[[-I, N Z], [(N Z)^T, A(z, lambda)]] <= 0``."""
    kf, M2, N = split.kf, split.dc.M2, split.N
    p = blk.p
    if balance:
        d = np.repeat(balance_weights(kf, zk_kept), p)
        M2 = d[:, None] * M2 * d[None, :]
        N = N * d[None, :]
    r = N.shape[0]
    K = kf.nz
    size = r + p
    # C_q = sum_r zk_r M2[q, r]
    M2b = M2.reshape(K, p, K, p)
    C = np.einsum("r,qkrl->qkl", zk_kept, M2b)
    Bminus = np.einsum("q,qkl->kl", zk_kept, C)
    F0 = np.zeros((size, size))
    F0[:r, :r] = -np.eye(r)
    F0[r:, r:] = blk.F + Bminus
    coeffs: dict[int, np.ndarray] = {}

    def put(var, mat):
        if var in coeffs:
            coeffs[var] = coeffs[var] + mat
        else:
            coeffs[var] = mat

    E = np.zeros((size, size))
    E[r:, r:] = np.eye(p)
    put(lay.lam, E)
    kept = [lay.a(i) for i in kf.a_idx] + [lay.s(j) for j in kf.s_idx]
    for q, var in enumerate(kept):
        Cq = np.zeros((size, size))
        Nq = N[:, q * p:(q + 1) * p]
        Cq[:r, r:] = Nq
        Cq[r:, :r] = Nq.T
        Cq[r:, r:] = -(C[q] + C[q].T)
        put(var, Cq)
    for i in range(blk.m):
        if np.any(blk.H[i]):
            E = np.zeros((size, size))
            E[r:, r:] = blk.H[i]
            put(lay.a(i), E)
    for j in blk.used_s():
        if np.any(blk.G[j]):
            E = np.zeros((size, size))
            E[r:, r:] = blk.G[j]
            put(lay.s(j), E)
    return F0, coeffs


def _plain_block(blk, lay: Layout):
    coeffs = {lay.lam: np.eye(blk.p)}
    for i in range(blk.m):
        if np.any(blk.H[i]):
            coeffs[lay.a(i)] = blk.H[i]
    for j in blk.used_s():
        if np.any(blk.G[j]):
            coeffs[lay.s(j)] = blk.G[j]
    return blk.F, coeffs


def linearized_subproblem(problem: BmiProblem, splits: Sequence[BlockSplit], zk: Solution,
                          delta: float = -1e-3, region=None, balance: bool = False) -> tuple[ConicProgram, Layout]:
    """Convex subproblem around ``zk``; returns the program and its variable layout."""
    if delta > 0:
        raise ValueError("delta must be non-positive")
    m, n = problem.m, problem.n
    lay = Layout(m, n)
    obj = np.zeros(lay.size)
    obj[lay.lam] = 1.0
    obj[lay.t] = 0.5 * delta
    prog = ConicProgram(lay.size, obj)
    for blk, split in zip(problem.blocks, splits):
        if split.bilinear:
            zk_kept = split.kf.z_of(zk.a, zk.s)
            F0, coeffs = _schur_block(blk, split, zk_kept, lay, balance)
        else:
            F0, coeffs = _plain_block(blk, lay)
        prog.add_lmi(F0, coeffs)
    prog.add_norm_bound([lay.a(i) for i in range(m)], problem.L_a)
    prog.add_norm_bound([lay.s(j) for j in range(n)], problem.L_s)
    # t >= ||z - zk||^2  <=>  ||(2(z - zk), t - 1)|| <= t + 1
    nz = m + n
    A = np.zeros((nz + 1, lay.size))
    A[np.arange(nz), 1 + np.arange(nz)] = 2.0
    A[nz, lay.t] = 1.0
    b = np.concatenate([-2.0 * zk.z, [-1.0]])
    c = np.zeros(lay.size)
    c[lay.t] = 1.0
    prog.add_soc(A, b, c, 1.0)
    if region is not None:
        lo, hi = region
        prog.set_bounds([lay.a(i) for i in range(m)], lo=np.asarray(lo, float), hi=np.asarray(hi, float))
    return prog, lay


def linearized_block_value(blk, split: BlockSplit, zk: Solution, a, s, lam: float = 0.0) -> np.ndarray:
    """The convex majorant ``B+(z) - B-(zk) - DB-(zk)(z - zk) + lambda I`` of one block."""
    kf, M1, M2 = split.kf, split.dc.M1, split.dc.M2
    z = kf.z_of(a, s)
    zk_ = kf.z_of(zk.a, zk.s)
    Z = kf.Zmat(z)
    Zk = kf.Zmat(zk_)
    quad = Z.T @ M1 @ Z
    lin = Z.T @ M2 @ Zk + Zk.T @ M2 @ Z - Zk.T @ M2 @ Zk
    affine = blk.F + np.tensordot(np.asarray(a, float), blk.H, axes=1) + np.tensordot(np.asarray(s, float), blk.G, axes=1)
    out = quad - lin + affine + lam * np.eye(blk.p)
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------- main loop


def bmi_dc(problem: BmiProblem, z0: Solution, epsilon: float = 1e-6, max_iter: int = 100,
           method: str = "eig", delta: float = -1e-3, *, tol: float = 1e-8, lambda_tol: float = 1e-6,
           region=None, backend: str = "embedded", accept: Callable[[Solution], bool] | None = None,
           splits: Sequence[BlockSplit] | None = None, time_limit: float | None = None,
           balance: bool = True) -> IterationTrace:
    """Run the DC iteration from ``z0``.

    Stops with success once ``lambda >= -lambda_tol`` (and ``accept`` agrees,
    when given).  Other reasons: ``tolerance`` (step below ``epsilon`` or no
    further ascent), ``max-iter``, ``solver-failure``, ``time-limit``.
    """
    t_start = time.perf_counter()
    splits = list(splits) if splits is not None else prepare_splits(problem, method)
    trace = IterationTrace()
    z = z0
    trace.append(z0, z0.lam, bmi_residual(problem, z0), 0.0)

    def done(sol):
        return sol.lam >= -lambda_tol and (accept is None or accept(sol))

    if done(z0):
        trace.success, trace.reason = True, "success"
        trace.elapsed = time.perf_counter() - t_start
        return trace
    for k in range(max_iter):
        if time_limit is not None and time.perf_counter() - t_start > time_limit:
            trace.reason = "time-limit"
            break
        prog, lay = linearized_subproblem(problem, splits, z, delta, region, balance)
        res = solve(prog, tol, backend)
        if res.x is None or res.status not in ("optimal", "numerical-limit"):
            log.info("subproblem failed at step %d: %s", k + 1, res.status)
            trace.reason = "solver-failure"
            break
        x = res.x
        a = x[1:1 + problem.m]
        s = x[1 + problem.m:1 + problem.m + problem.n]
        if region is not None:
            a = np.clip(a, region[0], region[1])
        lam = _feasible_lambda(problem, a, s)
        if lam < z.lam - 1e-9:
            # solver noise would break monotonicity; keep the previous iterate
            trace.reason = "tolerance" if res.status == "optimal" else "solver-failure"
            break
        new = Solution(lam, a, s)
        step = float(np.linalg.norm(new.z - z.z))
        trace.append(new, lam, bmi_residual(problem, new), step)
        z = new
        if done(new):
            trace.success, trace.reason = True, "success"
            break
        if step < epsilon:
            trace.reason = "tolerance"
            break
    else:
        trace.reason = "max-iter"
    trace.elapsed = time.perf_counter() - t_start
    return trace
