"""Conic programs (LMI + second-order cone + linear) and the embedded solver.

The embedded backend hands the program to cvxopt's ``conelp``, a primal-dual
interior-point method with Nesterov-Todd scaling on a self-dual embedding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL = "numerical-limit"


@dataclass
class LmiBlock:
    """``F0 + sum_i x_i * coeffs[i]`` must be negative semidefinite."""

    F0: np.ndarray
    coeffs: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def value(self, x) -> np.ndarray:
        out = self.F0.copy()
        for i, C in self.coeffs.items():
            out += x[i] * C
        return out


@dataclass
class SocBlock:
    """``|| A x + b || <= c.x + d``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float = 0.0

    def violation(self, x) -> float:
        return float(np.linalg.norm(self.A @ x + self.b) - (self.c @ x + self.d))


@dataclass
class ConicProgram:
    """maximize ``objective . x`` over LMI, SOC, linear (``A x <= b``) and box constraints."""

    nvars: int
    objective: np.ndarray
    lmis: list[LmiBlock] = field(default_factory=list)
    socs: list[SocBlock] = field(default_factory=list)
    lin_A: np.ndarray | None = None
    lin_b: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if self.objective.shape != (self.nvars,):
            raise ValueError("objective length must equal nvars")

    def add_lmi(self, F0, coeffs: dict) -> None:
        F0 = np.asarray(F0, dtype=float)
        for i, C in coeffs.items():
            if not 0 <= i < self.nvars:
                raise ValueError(f"variable index {i} out of range")
            if C.shape != F0.shape:
                raise ValueError("coefficient shape mismatch")
        self.lmis.append(LmiBlock(F0, {i: np.asarray(C, dtype=float) for i, C in coeffs.items()}))

    def add_soc(self, A, b, c, d=0.0) -> None:
        self.socs.append(SocBlock(np.atleast_2d(np.asarray(A, float)), np.asarray(b, float).ravel(),
                                  np.asarray(c, float).ravel(), float(d)))

    def add_norm_bound(self, idx, radius: float, center=None) -> None:
        """``|| x[idx] - center || <= radius``."""
        idx = list(idx)
        A = np.zeros((len(idx), self.nvars))
        A[np.arange(len(idx)), idx] = 1.0
        b = -np.asarray(center, float) if center is not None else np.zeros(len(idx))
        self.add_soc(A, b, np.zeros(self.nvars), radius)

    def add_linear(self, row, rhs: float) -> None:
        row = np.asarray(row, float).reshape(1, -1)
        self.lin_A = row if self.lin_A is None else np.vstack([self.lin_A, row])
        self.lin_b = np.array([rhs]) if self.lin_b is None else np.append(self.lin_b, rhs)

    def set_bounds(self, idx, lo=None, hi=None) -> None:
        if self.lower is None:
            self.lower = np.full(self.nvars, -np.inf)
            self.upper = np.full(self.nvars, np.inf)
        if lo is not None:
            self.lower[idx] = lo
        if hi is not None:
            self.upper[idx] = hi

    def check(self) -> None:
        for blk in self.lmis:
            for M in (blk.F0, *blk.coeffs.values()):
                if not np.allclose(M, M.T, atol=1e-12, rtol=0):
                    raise ValueError("LMI coefficient matrices must be symmetric")
                if not np.all(np.isfinite(M)):
                    raise ValueError("non-finite LMI coefficient")

    def violation(self, x) -> float:
        """Largest constraint violation at x (<= 0 when feasible)."""
        x = np.asarray(x, float)
        v = [-np.inf]
        for blk in self.lmis:
            v.append(np.linalg.eigvalsh(blk.value(x))[-1])
        for soc in self.socs:
            v.append(soc.violation(x))
        if self.lin_A is not None:
            v.append(float(np.max(self.lin_A @ x - self.lin_b)))
        if self.lower is not None:
            v.append(float(np.max(self.lower - x)))
            v.append(float(np.max(x - self.upper)))
        return float(max(v))


@dataclass
class SolverResult:
    status: str
    x: np.ndarray | None
    objective: float
    violation: float
    gap: float = float("nan")
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _linear_rows(prog: ConicProgram):
    rows, rhs = [], []
    if prog.lin_A is not None:
        rows.append(prog.lin_A)
        rhs.append(prog.lin_b)
    if prog.lower is not None:
        for i in range(prog.nvars):
            if np.isfinite(prog.upper[i]):
                r = np.zeros(prog.nvars)
                r[i] = 1.0
                rows.append(r[None])
                rhs.append([prog.upper[i]])
            if np.isfinite(prog.lower[i]):
                r = np.zeros(prog.nvars)
                r[i] = -1.0
                rows.append(r[None])
                rhs.append([-prog.lower[i]])
    if not rows:
        return np.zeros((0, prog.nvars)), np.zeros(0)
    return np.vstack(rows), np.concatenate([np.ravel(r) for r in rhs])


def _cvxopt_data(prog: ConicProgram):
    from cvxopt import matrix, spmatrix

    vals, ri, ci, h = [], [], [], []
    row = 0
    A, b = _linear_rows(prog)
    nz = np.nonzero(A)
    vals.extend(A[nz].tolist())
    ri.extend((nz[0] + row).tolist())
    ci.extend(nz[1].tolist())
    h.extend(b.tolist())
    row += A.shape[0]
    dims = {"l": A.shape[0], "q": [], "s": []}
    for soc in prog.socs:
        # s = (c.x + d, A x + b) in the cone: G = -[c; A], h = [d; b]
        G = -np.vstack([soc.c[None], soc.A])
        nz = np.nonzero(G)
        vals.extend(G[nz].tolist())
        ri.extend((nz[0] + row).tolist())
        ci.extend(nz[1].tolist())
        h.extend([soc.d] + soc.b.tolist())
        row += G.shape[0]
        dims["q"].append(G.shape[0])
    for blk in prog.lmis:
        k = blk.size
        # s = -(F0 + sum x_i C_i), column-major vec
        for i, C in blk.coeffs.items():
            flat = C.ravel(order="F")
            nz = np.flatnonzero(flat)
            vals.extend(flat[nz].tolist())
            ri.extend((nz + row).tolist())
            ci.extend([i] * len(nz))
        h.extend((-blk.F0).ravel(order="F").tolist())
        row += k * k
        dims["s"].append(k)
    G = spmatrix(vals, ri, ci, (row, prog.nvars)) if vals else spmatrix([], [], [], (row, prog.nvars))
    return G, matrix(np.asarray(h, float)), dims


def solve_conic(prog: ConicProgram, tol: float = 1e-8, max_iters: int = 200) -> SolverResult:
    """Solve ``prog`` with the embedded interior-point backend."""
    from cvxopt import matrix, solvers

    prog.check()
    G, h, dims = _cvxopt_data(prog)
    c = matrix(-prog.objective)
    opts = {"show_progress": False, "maxiters": max_iters, "abstol": tol, "reltol": tol, "feastol": tol}
    try:
        sol = solvers.conelp(c, G, h, dims, options=opts)
    except (ValueError, ArithmeticError) as exc:
        log.debug("conelp raised %s", exc)
        return SolverResult(NUMERICAL, None, float("nan"), float("inf"), info={"error": str(exc)})
    status = sol["status"]
    x = np.array(sol["x"]).ravel() if sol["x"] is not None else None
    if status == "optimal":
        st = OPTIMAL
    elif status == "primal infeasible":
        st = INFEASIBLE
    elif status == "dual infeasible":
        st = UNBOUNDED
    else:
        st = NUMERICAL
    if x is None or not np.all(np.isfinite(x)):
        return SolverResult(st if st in (INFEASIBLE, UNBOUNDED) else NUMERICAL, None, float("nan"), float("inf"),
                            iterations=sol.get("iterations", 0))
    viol = prog.violation(x)
    obj = float(prog.objective @ x)
    gap = sol.get("gap")
    gap = float(gap) if gap is not None else float("nan")
    if st == OPTIMAL and viol > max(10 * tol, 1e-7):
        st = NUMERICAL
    return SolverResult(st, x, obj, viol, gap, sol.get("iterations", 0),
                        {"cvxopt_status": status, "relative gap": sol.get("relative gap")})
