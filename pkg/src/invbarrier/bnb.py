"""Branch-and-bound over the template parameters with a convex relaxation bound.

Regions are boxes over ``a`` (the ball ``||a|| <= L_a`` stays a cone in every
subproblem).  Each region gets an upper bound on the BMI objective from a Shor
lifting with McCormick cuts; regions are explored best bound first.  Inside a
region we sample-and-check, then run the DC iteration unless a previously
visited point already lies in the region.  Nothing is returned without passing
the posterior check.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dcp import Solution, bmi_dc, initial_solution, prepare_splits
from .encode import BmiProblem
from .polyalg import DynamicalSystem
from .sdp import ConicProgram, solve
from .verify import CheckConfig, Certificate, check_certificate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParamRegion:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, float)
        hi = np.asarray(self.upper, float)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("region needs lower <= upper per coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, dim: int, radius: float) -> "ParamRegion":
        return cls(np.full(dim, -radius), np.full(dim, radius))

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def width(self) -> float:
        return float(self.widths.max()) if self.widths.size else 0.0

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, a, tol: float = 0.0) -> bool:
        a = np.asarray(a, float)
        return bool(np.all(a >= self.lower - tol) and np.all(a <= self.upper + tol))

    def sample(self, rng, count: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, len(self.lower)))


def bisect(region: ParamRegion) -> tuple[ParamRegion, ParamRegion]:
    """Split at the midpoint of the widest coordinate (first one on ties)."""
    if region.width <= 0:
        raise ValueError("cannot bisect a zero-width region")
    k = int(np.argmax(region.widths))
    mid = 0.5 * (region.lower[k] + region.upper[k])
    hi1 = region.upper.copy()
    hi1[k] = mid
    lo2 = region.lower.copy()
    lo2[k] = mid
    return ParamRegion(region.lower.copy(), hi1), ParamRegion(lo2, region.upper.copy())


# ---------------------------------------------------------------- relaxation bound


def _sym_pairs(k: int):
    return [(i, j) for i in range(k) for j in range(i, k)]


def relaxation_upper_bound(problem: BmiProblem, region: ParamRegion | None = None, tol: float = 1e-8,
                           backend: str = "embedded") -> float:
    """Upper bound on max lambda over ``region`` x {||s|| <= L_s}; +inf on solver failure.

    Bilinear products ``a_i s_j`` become ``Z[i, j]``, tied to ``(a, s)`` by the
    moment matrix ``[[1, w^T], [w, W]] >= 0`` over the coupled coordinates
    ``w``, trace bounds from the norm balls and McCormick cuts from the box.
    """
    m, n = problem.m, problem.n
    if region is None:
        region = ParamRegion.cube(m, problem.L_a)
    a_idx = sorted({i for blk in problem.blocks for (i, _) in blk.Fij})
    s_idx = sorted({j for blk in problem.blocks for (_, j) in blk.Fij})
    w_vars = [("a", i) for i in a_idx] + [("s", j) for j in s_idx]
    k = len(w_vars)
    pairs = _sym_pairs(k)
    # variables: lambda, a, s, W (upper triangle)
    nv = 1 + m + n + len(pairs)
    wpos = {p: 1 + m + n + t for t, p in enumerate(pairs)}

    def var_of(kind, idx):
        return 1 + idx if kind == "a" else 1 + m + idx

    def W(r, c):
        return wpos[(min(r, c), max(r, c))]

    apos = {i: r for r, i in enumerate(a_idx)}
    spos = {j: len(a_idx) + r for r, j in enumerate(s_idx)}
    obj = np.zeros(nv)
    obj[0] = 1.0
    prog = ConicProgram(nv, obj)
    for blk in problem.blocks:
        p = blk.p
        coeffs: dict[int, np.ndarray] = {0: np.eye(p)}

        def put(v, M):
            coeffs[v] = coeffs[v] + M if v in coeffs else M.copy()

        for i in range(m):
            if np.any(blk.H[i]):
                put(1 + i, blk.H[i])
        for j in range(n):
            if np.any(blk.G[j]):
                put(1 + m + j, blk.G[j])
        for (i, j), Fij in blk.Fij.items():
            put(W(apos[i], spos[j]), Fij)
        prog.add_lmi(blk.F, coeffs)
    if k:
        # -[[1, w^T], [w, W]] <= 0
        size = k + 1
        F0 = np.zeros((size, size))
        F0[0, 0] = -1.0
        mc: dict[int, np.ndarray] = {}
        for r, (kind, idx) in enumerate(w_vars):
            E = np.zeros((size, size))
            E[0, r + 1] = E[r + 1, 0] = -1.0
            mc[var_of(kind, idx)] = E
        for (r, c), v in wpos.items():
            E = np.zeros((size, size))
            E[r + 1, c + 1] = E[c + 1, r + 1] = -1.0
            mc[v] = E
        prog.add_lmi(F0, mc)
        # traces of the lifted blocks stay inside the norm balls
        row = np.zeros(nv)
        for i in a_idx:
            row[W(apos[i], apos[i])] = 1.0
        if a_idx:
            prog.add_linear(row, problem.L_a ** 2)
        row = np.zeros(nv)
        for j in s_idx:
            row[W(spos[j], spos[j])] = 1.0
        if s_idx:
            prog.add_linear(row, problem.L_s ** 2)
        # McCormick envelopes with s in [-L_s, L_s]
        bounds = {}
        for i in a_idx:
            bounds[apos[i]] = (float(region.lower[i]), float(region.upper[i]), var_of("a", i))
        for j in s_idx:
            bounds[spos[j]] = (-problem.L_s, problem.L_s, var_of("s", j))
        for r, c in pairs:
            lr, ur, vr = bounds[r]
            lc, uc, vc = bounds[c]
            wv = W(r, c)
            if r == c:
                # (x - l)(u - x) >= 0  gives  W <= (l + u) x - l u
                row = np.zeros(nv)
                row[wv] = 1.0
                row[vr] -= lr + ur
                prog.add_linear(row, -lr * ur)
                continue
            for (l1, l2, sign) in ((lr, lc, 1), (ur, uc, 1), (lr, uc, -1), (ur, lc, -1)):
                # sign +1: W >= l1 xc + l2 xr - l1 l2 ; sign -1: W <= ...
                row = np.zeros(nv)
                row[wv] = -sign
                row[vc] += sign * l1
                row[vr] += sign * l2
                prog.add_linear(row, sign * l1 * l2)
    prog.add_norm_bound(range(1, 1 + m), problem.L_a)
    if n:
        prog.add_norm_bound(range(1 + m, 1 + m + n), problem.L_s)
    prog.set_bounds(list(range(1, 1 + m)), lo=region.lower, hi=region.upper)
    try:
        res = solve(prog, tol, backend)
    except (ValueError, ArithmeticError) as exc:
        log.info("relaxation failed: %s", exc)
        return float("inf")
    if res.x is None or res.status != "optimal":
        if res.status == "infeasible":
            return float("-inf")
        return float("inf")
    # tolerance slack keeps the bound on the safe side
    return float(res.objective) + 10 * tol


# ---------------------------------------------------------------- search


@dataclass
class BnbConfig:
    eta: float | None = None            # default 0.05 * L_a
    samples: int = 8
    max_regions: int = 200
    time_limit: float | None = None
    seed: int = 0
    mode: str = "sufficient"
    max_iter: int = 30                  # DC iterations per region
    dc_method: str = "eig"
    delta: float = -1e-3
    tol: float = 1e-8
    lambda_tol: float = 1e-6
    balance: bool = True
    backend: str = "embedded"
    multiplier_constants: object = 1.0
    check: CheckConfig | None = None


@dataclass
class BnbState:
    visited: list[np.ndarray] = field(default_factory=list)     # projections of S_glb onto a
    queue: list = field(default_factory=list)
    eta: float = 0.0
    regions: int = 0
    pruned: int = 0
    demoted: int = 0
    dc_runs: int = 0
    samples_checked: int = 0
    too_fine: int = 0

    def visited_in(self, region: ParamRegion) -> bool:
        return any(region.contains(a, 1e-12) for a in self.visited)


@dataclass
class BnbResult:
    a: np.ndarray | None
    certificate: Certificate | None
    solution: Solution | None
    state: BnbState
    reason: str
    elapsed: float

    @property
    def found(self) -> bool:
        return self.a is not None


def branch_and_bound(problem: BmiProblem, sys: DynamicalSystem, region: ParamRegion | None = None,
                     eta: float | None = None, cfg: BnbConfig | None = None) -> BnbResult:
    """Search ``region`` for a parameter whose certificate passes the posterior check."""
    cfg = cfg or BnbConfig()
    t0 = time.perf_counter()
    template = problem.registry.template
    region = region or ParamRegion.cube(problem.m, problem.L_a)
    eta = eta if eta is not None else (cfg.eta if cfg.eta is not None else 0.05 * problem.L_a)
    if eta <= 0:
        raise ValueError("eta must be positive")
    ccfg = cfg.check or CheckConfig(epsilon_check=problem.registry.epsilon / 2, seed=cfg.seed)
    screen = replace(ccfg, n_points=min(ccfg.n_points, 20_000), refine=min(ccfg.refine, 4))
    rng = np.random.default_rng(cfg.seed)
    state = BnbState(eta=eta)
    splits = prepare_splits(problem, cfg.dc_method)
    counter = itertools.count()

    def elapsed():
        return time.perf_counter() - t0

    def out_of_time():
        return cfg.time_limit is not None and elapsed() > cfg.time_limit

    def verified(a) -> Certificate | None:
        a = np.asarray(a, float)
        if np.linalg.norm(a) > problem.L_a * (1 + 1e-9):
            return None
        B = template.instantiate(a)
        state.samples_checked += 1
        if not check_certificate(sys, B, screen).valid:
            return None
        cert = check_certificate(sys, B, ccfg)
        return cert if cert.valid else None

    def done(a, cert, sol, reason):
        cert.solution = sol
        return BnbResult(np.asarray(a, float), cert, sol, state, reason, elapsed())

    def push(reg: ParamRegion, retry: bool = False):
        bound = relaxation_upper_bound(problem, reg, cfg.tol, cfg.backend)
        if bound < 0:
            if cfg.mode == "necessary":
                state.pruned += 1
                return
            state.demoted += 1
        # best bound first; in sufficient mode negative bounds are only demoted
        key = (bound < 0, -bound, next(counter))
        heapq.heappush(state.queue, (key, reg, retry))

    push(region)
    while state.queue:
        if out_of_time():
            return BnbResult(None, None, None, state, "time-limit", elapsed())
        if state.regions >= cfg.max_regions:
            return BnbResult(None, None, None, state, "region-limit", elapsed())
        _, reg, retried = heapq.heappop(state.queue)
        state.regions += 1
        if reg.width < eta:
            state.too_fine += 1
            continue
        # sample-and-check: center plus uniform draws
        for a in np.vstack([reg.center[None, :], reg.sample(rng, cfg.samples)]):
            cert = verified(a)
            if cert is not None:
                return done(a, cert, None, "sample")
        if not state.visited_in(reg):
            state.dc_runs += 1
            try:
                z0 = initial_solution(problem, cfg.multiplier_constants, region=(reg.lower, reg.upper),
                                      tol=cfg.tol, backend=cfg.backend)
                remaining = None if cfg.time_limit is None else max(0.0, cfg.time_limit - elapsed())
                trace = bmi_dc(problem, z0, 1e-6, cfg.max_iter, cfg.dc_method, cfg.delta, tol=cfg.tol,
                               lambda_tol=cfg.lambda_tol, region=(reg.lower, reg.upper), backend=cfg.backend,
                               accept=lambda sol: verified(sol.a) is not None, splits=splits,
                               time_limit=remaining, balance=cfg.balance)
            except (RuntimeError, ValueError, ArithmeticError) as exc:
                log.info("DC run failed in region: %s", exc)
                if not retried:
                    push(reg, retry=True)
                    continue
                trace = None
            if trace is not None:
                state.visited.extend(sol.a.copy() for sol in trace.solutions)
                # the accept gate already checked the last iterate; re-check to hand back the certificate
                for sol in reversed(trace.solutions):
                    cert = verified(sol.a)
                    if cert is not None:
                        return done(sol.a, cert, sol, "dc")
                    break
        if reg.width / 2 < eta:
            state.too_fine += 1
            continue
        for child in bisect(reg):
            push(child)
    return BnbResult(None, None, None, state, "exhausted", elapsed())
