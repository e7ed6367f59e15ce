"""Posterior validity checks for barrier-certificate candidates.

``check_certificate`` tests the three clauses of the invariant barrier
certificate condition numerically:

* initial:      I(x) <= 0  implies  B(x) <= margin
* consecution:  L^j B(x) = 0 for all j < i  implies  L^i B(x) <= margin
* separation:   U(x) <= 0  implies  B(x) >= epsilon_check - margin

Points come from uniform box sampling, targeted sampling inside the initial and
unsafe sets, Gauss-Newton projection onto the consecution varieties, and a
local maximization of the violation started from the worst samples.  This is
evidence, not proof; ``export_smtlib`` writes the exact obligations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.optimize import minimize

from .polyalg import DynamicalSystem, Polynomial, lie_derivative

log = logging.getLogger(__name__)

VALID = "valid"
REFUTED = "refuted"
INCONCLUSIVE = "inconclusive"


@dataclass
class CheckConfig:
    n_points: int = 100_000
    n_boundary: int = 2_000
    margin: float = 1e-6
    epsilon_check: float = 5e-5
    seed: int = 0
    default_box: float = 10.0
    refine: int = 8             # local searches per clause
    batch: int = 20_000


@dataclass
class Certificate:
    B: Polynomial
    verdict: str
    lie_order: int
    clause: str | None = None
    witness: np.ndarray | None = None
    amount: float = 0.0
    config: CheckConfig | None = None
    solution: Any = None
    trace: Any = None
    notes: list[str] = field(default_factory=list)
    worst: dict = field(default_factory=dict)   # clause -> largest (possibly negative) violation seen

    @property
    def valid(self) -> bool:
        return self.verdict == VALID


def domain_box(sys: DynamicalSystem, default: float = 10.0):
    if sys.domain is None:
        return np.full(sys.dim, -default), np.full(sys.dim, default), True
    lo = np.array([d[0] for d in sys.domain], float)
    hi = np.array([d[1] for d in sys.domain], float)
    return lo, hi, False


class _Fn:
    """A polynomial with cached gradient, evaluated on point batches."""

    def __init__(self, p: Polynomial):
        self.p = p
        self.grad = p.gradient()

    def __call__(self, X):
        return self.p.eval_many(X)

    def jac(self, X):
        return np.stack([g.eval_many(X) for g in self.grad], axis=-1)

    def f1(self, x):
        return float(self.p.eval_many(x[None])[0])

    def g1(self, x):
        return self.jac(x[None])[0]


def _uniform(rng, lo, hi, n):
    return lo + (hi - lo) * rng.random((n, lo.size))


def _set_samples(rng, g: _Fn, lo, hi, count: int, pool: np.ndarray) -> np.ndarray:
    """Points of {g <= 0} inside the box: pool hits plus samples around local minima of g."""
    vals = g(pool)
    inside = pool[vals <= 0]
    seeds = list(inside[:4])
    if len(inside) < count:
        starts = pool[np.argsort(vals)[:6]]
        for x0 in starts:
            res = minimize(g.f1, x0, jac=g.g1, method="L-BFGS-B", bounds=list(zip(lo, hi)))
            if res.fun <= 0:
                seeds.append(res.x)
    if not seeds:
        return inside
    extra = []
    width = float(np.max(hi - lo))
    for seed in seeds:
        scale = 0.1 * width
        for _ in range(30):
            cand = np.clip(seed + scale * rng.standard_normal((count, lo.size)), lo, hi)
            ok = cand[g(cand) <= 0]
            if len(ok) >= 0.2 * count or scale < 1e-9 * width:
                extra.append(ok)
                break
            scale *= 0.5
    pts = np.vstack([inside] + extra) if extra else inside
    return pts


def _project(eqs: Sequence[_Fn], X: np.ndarray, lo, hi, iters: int = 60):
    """Gauss-Newton projection of rows of X onto {eq = 0 for all eqs}."""
    X = X.copy()
    scale = 1.0 + max(max(abs(c) for c in e.p.terms.values()) if not e.p.is_zero() else 0.0 for e in eqs)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(iters):
            G = np.stack([e(X) for e in eqs], axis=1)                     # (N, k)
            J = np.stack([e.jac(X) for e in eqs], axis=1)                 # (N, k, n)
            # rows that overflowed are dropped rather than handed to the SVD
            live = np.all(np.isfinite(G), axis=1) & np.all(np.isfinite(J), axis=(1, 2))
            X[~live] = np.nan
            if not live.any():
                break
            X[live] -= np.einsum("nij,nj->ni", np.linalg.pinv(J[live], rcond=1e-12), G[live])
            if np.all(np.abs(G[live]) < 1e-13 * scale):
                break
        G = np.stack([e(X) for e in eqs], axis=1)
    ok = np.all(np.abs(G) <= 1e-9 * scale, axis=1) & np.all(X >= lo, axis=1) & np.all(X <= hi, axis=1)
    ok &= np.all(np.isfinite(X), axis=1)
    return X[ok]


def _local_max(obj: _Fn, starts, lo, hi, ineq: _Fn | None = None, eqs: Sequence[_Fn] = ()):
    """Maximize obj from each start subject to ineq <= 0 and eqs == 0; returns feasible maximizers."""
    out = []
    cons = []
    if ineq is not None:
        cons.append({"type": "ineq", "fun": lambda x: -ineq.f1(x), "jac": lambda x: -ineq.g1(x)})
    for e in eqs:
        cons.append({"type": "eq", "fun": e.f1, "jac": e.g1})
    for x0 in starts:
        try:
            res = minimize(lambda x: -obj.f1(x), x0, jac=lambda x: -obj.g1(x), method="SLSQP",
                           bounds=list(zip(lo, hi)), constraints=cons, options={"maxiter": 200, "ftol": 1e-14})
        except (ValueError, np.linalg.LinAlgError):
            continue
        x = np.clip(res.x, lo, hi)
        if not np.all(np.isfinite(x)):
            continue
        if ineq is not None and ineq.f1(x) > 0:
            continue
        if eqs:
            xs = _project(eqs, x[None], lo, hi)
            if not len(xs):
                continue
            x = xs[0]
        out.append(x)
    return np.array(out).reshape(-1, lo.size)


def check_certificate(sys: DynamicalSystem, B: Polynomial, cfg: CheckConfig | None = None,
                      lie_order: int | None = None) -> Certificate:
    """Sample-based posterior check of ``B`` against the three clauses."""
    cfg = cfg or CheckConfig()
    if B.variables != tuple(sys.variables):
        raise ValueError("certificate and system use different variables")
    order = lie_order or sys.lie_order
    lo, hi, defaulted = domain_box(sys, cfg.default_box)
    if np.any(hi < lo):
        raise ValueError("empty domain box")
    notes = []
    if defaulted:
        notes.append(f"unbounded domain checked on the default box [-{cfg.default_box}, {cfg.default_box}]^n")
        log.info(notes[-1])
    rng = np.random.default_rng(cfg.seed)
    pool = _uniform(rng, lo, hi, cfg.n_points)
    mu = cfg.margin
    fB = _Fn(B)
    fI = _Fn(sys.init)
    fU = _Fn(sys.unsafe)
    lies = [fB] + [_Fn(lie_derivative(B, list(sys.flow), i)) for i in range(1, order + 1)]
    found: list[tuple[float, str, np.ndarray]] = []
    worst = {}

    def record(clause, X, viol):
        if len(X) == 0:
            return
        k = int(np.argmax(viol))
        worst[clause] = max(worst.get(clause, -np.inf), float(viol[k]))
        if viol[k] > 0:
            found.append((float(viol[k]), clause, X[k].copy()))

    # initial: B <= mu on I <= 0
    X0 = _set_samples(rng, fI, lo, hi, cfg.n_boundary, pool)
    if len(X0):
        v = fB(X0) - mu
        if cfg.refine:
            starts = X0[np.argsort(-v)[:cfg.refine]]
            Xr = _local_max(fB, starts, lo, hi, ineq=fI)
            if len(Xr):
                X0 = np.vstack([X0, Xr])
                v = fB(X0) - mu
        record("initial", X0, v)

    # separation: B >= eps_check - mu on U <= 0
    Xu = _set_samples(rng, fU, lo, hi, cfg.n_boundary, pool)
    if len(Xu):
        target = cfg.epsilon_check - mu
        v = target - fB(Xu)
        if cfg.refine:
            negB = _Fn(-B)
            starts = Xu[np.argsort(-v)[:cfg.refine]]
            Xr = _local_max(negB, starts, lo, hi, ineq=fU)
            if len(Xr):
                Xu = np.vstack([Xu, Xr])
                v = target - fB(Xu)
        record("separation", Xu, v)

    # consecution, order by order
    for i in range(1, order + 1):
        eqs = lies[:i]
        band = np.abs(np.stack([e(pool) for e in eqs], axis=1)).max(axis=1)
        starts = pool[np.argsort(band)[:cfg.n_boundary]]
        Xv = _project(eqs, starts, lo, hi)
        if len(Xv) == 0:
            continue
        v = lies[i](Xv) - mu
        if cfg.refine:
            st = Xv[np.argsort(-v)[:cfg.refine]]
            Xr = _local_max(lies[i], st, lo, hi, eqs=eqs)
            if len(Xr):
                Xv = np.vstack([Xv, Xr])
                v = lies[i](Xv) - mu
        record(f"consecution[{i}]", Xv, v)

    if not np.all(np.isfinite(list(worst.values()) or [0.0])):
        return Certificate(B, INCONCLUSIVE, order, config=cfg, notes=notes + ["non-finite evaluation"], worst=worst)
    if found:
        amount, clause, x = max(found, key=lambda t: t[0])
        return Certificate(B, REFUTED, order, clause, x, amount, cfg, notes=notes, worst=worst)
    return Certificate(B, VALID, order, config=cfg, notes=notes, worst=worst)


def clause_violation(sys: DynamicalSystem, B: Polynomial, clause: str, x, cfg: CheckConfig | None = None) -> float:
    """Re-evaluate one clause at a witness point (positive = violated beyond the margin)."""
    cfg = cfg or CheckConfig()
    x = np.asarray(x, float)
    if clause == "initial":
        return B(x) - cfg.margin if sys.init(x) <= 0 else -np.inf
    if clause == "separation":
        return cfg.epsilon_check - cfg.margin - B(x) if sys.unsafe(x) <= 0 else -np.inf
    if clause.startswith("consecution"):
        i = int(clause[clause.index("[") + 1:-1])
        return lie_derivative(B, list(sys.flow), i)(x) - cfg.margin
    raise ValueError(f"unknown clause {clause!r}")


# ---------------------------------------------------------------- SOS check


@dataclass
class SosReport:
    name: str
    min_eig: float
    ok: bool


def check_sos_solution(problem, a, s, tol: float = 1e-6) -> list[SosReport]:
    """Minimum eigenvalue of every Gram matrix Q = -F(a, s)."""
    blocks = problem.blocks if hasattr(problem, "blocks") else problem
    out = []
    for blk in blocks:
        q = float(np.linalg.eigvalsh(-blk(a, s))[0])
        out.append(SosReport(blk.name, q, q >= -tol))
    return out


# ---------------------------------------------------------------- SMT-LIB export


def smt_number(x: float) -> str:
    s = np.format_float_positional(abs(float(x)), precision=17, unique=False, fractional=False, trim="0")
    if s.endswith("."):
        s += "0"
    if "." not in s:
        s += ".0"
    return f"(- {s})" if x < 0 else s


def smt_term(p: Polynomial) -> str:
    if p.is_zero():
        return "0.0"
    terms = []
    for mono in sorted(p.terms, key=lambda m: (-sum(m), tuple(-e for e in m))):
        c = p.terms[mono]
        factors = []
        for v, e in zip(p.variables, mono):
            factors.extend([v] * e)
        if not factors:
            terms.append(smt_number(c))
        elif c == 1.0:
            terms.append(factors[0] if len(factors) == 1 else f"(* {' '.join(factors)})")
        else:
            terms.append(f"(* {smt_number(c)} {' '.join(factors)})")
    return terms[0] if len(terms) == 1 else f"(+ {' '.join(terms)})"


def _smt_file(sys, clause: str, assertions: list[str], lo, hi) -> str:
    lines = ["(set-info :smt-lib-version 2.6)", "(set-logic QF_NRA)",
             f'(set-info :source |invariant barrier certificate obligation: {clause}; unsat means the clause holds|)',
             f"(set-info :clause {clause})", "(set-info :status unknown)"]
    for v in sys.variables:
        lines.append(f"(declare-fun {v} () Real)")
    for v, l, h in zip(sys.variables, lo, hi):
        lines.append(f"(assert (and (<= {smt_number(l)} {v}) (<= {v} {smt_number(h)})))")
    lines.extend(f"(assert {a})" for a in assertions)
    lines += ["(check-sat)", "(exit)"]
    return "\n".join(lines) + "\n"


def smtlib_obligations(sys: DynamicalSystem, B: Polynomial, lie_order: int | None = None,
                       default_box: float = 10.0) -> dict[str, str]:
    """Clause name -> SMT-LIB text asserting the negated clause inside the domain box."""
    order = lie_order or sys.lie_order
    lo, hi, _ = domain_box(sys, default_box)
    out = {}
    tB = smt_term(B)
    out["initial"] = _smt_file(sys, "initial", [f"(<= {smt_term(sys.init)} 0.0)", f"(> {tB} 0.0)"], lo, hi)
    lies = [B] + [lie_derivative(B, list(sys.flow), i) for i in range(1, order + 1)]
    for i in range(1, order + 1):
        strict = sys.strict_last and i == order
        asserts = [f"(= {smt_term(lies[j])} 0.0)" for j in range(i)]
        asserts.append(f"({'>=' if strict else '>'} {smt_term(lies[i])} 0.0)")
        out[f"consecution_{i}"] = _smt_file(sys, f"consecution_{i}", asserts, lo, hi)
    out["separation"] = _smt_file(sys, "separation", [f"(<= {smt_term(sys.unsafe)} 0.0)", f"(<= {tB} 0.0)"], lo, hi)
    return out


def export_smtlib(sys: DynamicalSystem, B: Polynomial, destination, lie_order: int | None = None) -> list[Path]:
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in smtlib_obligations(sys, B, lie_order).items():
        p = dest / f"{name}.smt2"
        p.write_text(text)
        paths.append(p)
    return paths
