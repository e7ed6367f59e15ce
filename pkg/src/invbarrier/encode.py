"""SOS constraints for invariant barrier certificates and their Gram/BMI encoding.

Parameters are split into two blocks: ``a`` (template coefficients) and ``s``
(multiplier coefficients plus free Gram-matrix directions).  Every constraint
polynomial is bilinear in (a, s), so its Gram matrix is a bilinear matrix
function ``F + sum a_i H_i + sum s_j G_j + sum a_i s_j F_ij`` with ``F = -Q``;
the constraint polynomial is SOS iff ``F(a, s)`` is negative semidefinite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .polyalg import (
    DynamicalSystem,
    Monomial,
    ParamPolynomial,
    Polynomial,
    grevlex_key,
    lie_derivative,
    monomial_basis,
    param_template,
)

# key of a bilinear term: (a index or None, s index or None)
Key = tuple


class BiPoly:
    """Polynomial whose coefficients are bilinear in (a, s).

    Stored as ``{(i, j): Polynomial}`` where ``i`` indexes ``a`` (or ``None``)
    and ``j`` indexes ``s`` (or ``None``).
    """

    __slots__ = ("parts", "variables")

    def __init__(self, parts: dict, variables: Sequence[str]):
        self.variables = tuple(variables)
        self.parts = {k: p for k, p in parts.items() if not p.is_zero()}

    @classmethod
    def from_param(cls, pp: ParamPolynomial, block: str) -> "BiPoly":
        parts = {(None, None): pp.constant}
        for idx, p in pp.basis_terms:
            parts[(idx, None) if block == "a" else (None, idx)] = p
        return cls(parts, pp.variables)

    @classmethod
    def from_poly(cls, p: Polynomial) -> "BiPoly":
        return cls({(None, None): p}, p.variables)

    @classmethod
    def product(cls, pa: ParamPolynomial, ps: ParamPolynomial) -> "BiPoly":
        """Product of an a-affine and an s-affine parameterized polynomial."""
        a_terms = [(None, pa.constant)] + list(pa.basis_terms)
        s_terms = [(None, ps.constant)] + list(ps.basis_terms)
        parts: dict = {}
        for i, p in a_terms:
            if p.is_zero():
                continue
            for j, q in s_terms:
                if q.is_zero():
                    continue
                prod = p * q
                parts[(i, j)] = parts[(i, j)] + prod if (i, j) in parts else prod
        return cls(parts, pa.variables)

    def __add__(self, other):
        if isinstance(other, Polynomial):
            other = BiPoly.from_poly(other)
        parts = dict(self.parts)
        for k, p in other.parts.items():
            parts[k] = parts[k] + p if k in parts else p
        return BiPoly(parts, self.variables)

    def __neg__(self):
        return BiPoly({k: -p for k, p in self.parts.items()}, self.variables)

    def __sub__(self, other):
        if isinstance(other, Polynomial):
            other = BiPoly.from_poly(other)
        return self + (-other)

    def scale(self, c: float) -> "BiPoly":
        return BiPoly({k: p * c for k, p in self.parts.items()}, self.variables)

    @property
    def degree(self) -> int:
        return max([p.degree for p in self.parts.values()] + [-1])

    def monomials(self) -> set:
        out = set()
        for p in self.parts.values():
            out.update(p.terms)
        return out

    def a_indices(self) -> set:
        return {i for i, _ in self.parts if i is not None}

    def s_indices(self) -> set:
        return {j for _, j in self.parts if j is not None}

    def instantiate(self, a, s) -> Polynomial:
        out = Polynomial.zero(self.variables)
        for (i, j), p in self.parts.items():
            w = 1.0
            if i is not None:
                w *= float(a[i])
            if j is not None:
                w *= float(s[j])
            if w != 0.0:
                out = out + p * w
        return out


# ---------------------------------------------------------------- specs and registry


@dataclass
class TemplateSpec:
    """How to build the template and the multipliers.

    Either ``degree`` (all monomials up to that degree) or an explicit
    ``monomials`` list.  ``fixed`` is a parameter-free part added to the template.
    """

    degree: int | None = 1
    monomials: list | None = None
    include_constant: bool = True
    fixed: Polynomial | None = None
    multiplier_degree: int | None = None
    sos_degree: int | None = None
    epsilon: float = 1e-4

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.sos_degree is not None and (self.sos_degree < 0 or self.sos_degree % 2):
            raise ValueError("sos_degree must be even and non-negative")
        if self.degree is None and self.monomials is None:
            raise ValueError("template needs a degree or a monomial list")

    def template_monomials(self, dim: int) -> list[Monomial]:
        if self.monomials is not None:
            monos = [tuple(m) for m in self.monomials]
        else:
            monos = monomial_basis(dim, self.degree)
        if not self.include_constant:
            monos = [m for m in monos if sum(m) > 0]
        return monos


@dataclass
class Multiplier:
    name: str
    constraint: int
    indices: list[int]          # s indices of its coefficients
    monomials: list[Monomial]
    sos: bool                   # SOS multiplier (gets its own Gram constraint)

    @property
    def const_index(self) -> int | None:
        for k, m in zip(self.indices, self.monomials):
            if sum(m) == 0:
                return k
        return None


@dataclass
class ParamRegistry:
    m: int = 0
    n: int = 0
    a_names: list[str] = field(default_factory=list)
    s_names: list[str] = field(default_factory=list)
    multipliers: list[Multiplier] = field(default_factory=list)
    free_gram: dict[int, list[int]] = field(default_factory=dict)  # constraint -> s indices
    template: ParamPolynomial | None = None
    epsilon: float = 0.0            # separation offset used by the encoding

    def add_a(self, name: str) -> int:
        self.a_names.append(name)
        self.m += 1
        return self.m - 1

    def add_s(self, name: str) -> int:
        self.s_names.append(name)
        self.n += 1
        return self.n - 1

    def multiplier_indices(self) -> list[int]:
        return sorted(k for mu in self.multipliers for k in mu.indices)

    def free_indices(self) -> list[int]:
        return sorted(k for ks in self.free_gram.values() for k in ks)


@dataclass
class SosConstraint:
    name: str
    kind: str                       # initial | consecution | separation | multiplier
    poly: BiPoly
    basis: list[Monomial] = field(default_factory=list)

    @property
    def degree(self) -> int:
        return self.poly.degree


# ---------------------------------------------------------------- constraint construction


def _generic(reg: ParamRegistry, name: str, variables, degree: int, constraint: int, sos: bool,
             even_only: bool = False) -> tuple[ParamPolynomial, Multiplier]:
    monos = monomial_basis(len(variables), degree) if degree >= 0 else []
    idx = [reg.add_s(f"{name}[{k}]") for k in range(len(monos))]
    mult = Multiplier(name, constraint, idx, monos, sos)
    reg.multipliers.append(mult)
    pp = ParamPolynomial(Polynomial.zero(variables),
                         tuple((i, Polynomial.monomial(m, variables)) for i, m in zip(idx, monos)))
    return pp, mult


def _even_floor(x: int) -> int:
    return 2 * (x // 2) if x >= 0 else -1


def build_constraints(sys: DynamicalSystem, spec: TemplateSpec, mode: str = "sufficient"):
    """Parameterized SOS constraints for the invariant barrier-certificate condition.

    Returns ``(constraints, registry)``.  Constraint order: initial, one
    consecution constraint per Lie order, separation, then one Gram constraint
    per SOS multiplier.
    """
    if mode not in ("sufficient", "necessary"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "necessary" and sys.archimedean_radius is None:
        raise ValueError("necessary mode needs archimedean_radius")
    vars_ = tuple(sys.variables)
    n = len(vars_)
    reg = ParamRegistry(epsilon=spec.epsilon)
    monos = spec.template_monomials(n)
    for m in monos:
        reg.add_a("a[" + ("*".join(f"{v}^{e}" for v, e in zip(vars_, m) if e) or "1") + "]")
    if reg.m == 0:
        raise ValueError("template has no parameters")
    B = param_template(monos, vars_, 0, spec.fixed)
    reg.template = B
    N = sys.lie_order
    lies = [B] + [lie_derivative(B, list(sys.flow), i) for i in range(1, N + 1)]
    eps = spec.epsilon

    deg_needed = max([lies[i].degree for i in range(N + 1)] + [sys.init.degree, sys.unsafe.degree, 1])
    sos_deg = spec.sos_degree if spec.sos_degree is not None else 2 * math.ceil(deg_needed / 2)
    for i, L in enumerate(lies):
        if L.degree > sos_deg:
            raise ValueError(f"sos_degree {sos_deg} too small for Lie derivative of order {i} (degree {L.degree})")

    sig_deg = _even_floor(sos_deg - sys.init.degree)
    sigp_deg = _even_floor(sos_deg - sys.unsafe.degree)
    if sig_deg < 0 or sigp_deg < 0:
        raise ValueError(f"sos_degree {sos_deg} too small for the initial/unsafe polynomials")
    one = Polynomial.constant(1.0, vars_)
    ball = None
    if mode == "necessary":
        L = float(sys.archimedean_radius)
        ball = sum((Polynomial.variable(v, vars_) ** 2 for v in vars_), Polynomial.zero(vars_)) - L
        rho_deg = _even_floor(sos_deg - 2)
        if rho_deg < 0:
            raise ValueError("sos_degree too small for the Archimedean terms")

    constraints: list[SosConstraint] = []
    sos_mults: list[tuple[ParamPolynomial, Multiplier]] = []

    # initial: -B + sigma*I (+ rho*(|x|^2-L) + eps in necessary mode)
    sigma, mu = _generic(reg, "sigma_init", vars_, sig_deg, 0, True)
    sos_mults.append((sigma, mu))
    h = -BiPoly.from_param(B, "a") + BiPoly.from_param(sigma * sys.init, "s")
    if mode == "necessary":
        rho, mu = _generic(reg, "rho_init", vars_, rho_deg, 0, True)
        sos_mults.append((rho, mu))
        h = h + BiPoly.from_param(rho * ball, "s") + one * eps
    constraints.append(SosConstraint("initial", "initial", h))

    # consecution, one per Lie order
    for i in range(1, N + 1):
        ci = len(constraints)
        h = -BiPoly.from_param(lies[i], "a")
        for j in range(i):
            vdeg = sos_deg - lies[j].degree
            if spec.multiplier_degree is not None:
                vdeg = min(vdeg, spec.multiplier_degree)
            if vdeg < 0:
                continue
            v, _ = _generic(reg, f"v[{i},{j}]", vars_, vdeg, ci, False)
            h = h + BiPoly.product(lies[j], v)
        if mode == "necessary":
            rho, mu = _generic(reg, f"rho_lie[{i}]", vars_, rho_deg, ci, True)
            sos_mults.append((rho, mu))
            h = h + BiPoly.from_param(rho * ball, "s") + one * eps
        elif sys.strict_last and i == N:
            h = h - one * eps
        constraints.append(SosConstraint(f"consecution[{i}]", "consecution", h))

    # separation: B + sigma'*U - eps (necessary: B + rho'*(|x|^2-L) + sigma'*U)
    ci = len(constraints)
    sigp, mu = _generic(reg, "sigma_unsafe", vars_, sigp_deg, ci, True)
    sos_mults.append((sigp, mu))
    h = BiPoly.from_param(B, "a") + BiPoly.from_param(sigp * sys.unsafe, "s")
    if mode == "necessary":
        rho, mu = _generic(reg, "rho_unsafe", vars_, rho_deg, ci, True)
        sos_mults.append((rho, mu))
        h = h + BiPoly.from_param(rho * ball, "s")
    else:
        h = h - one * eps
    constraints.append(SosConstraint("separation", "separation", h))

    for pp, mu in sos_mults:
        constraints.append(SosConstraint(f"sos[{mu.name}]", "multiplier", BiPoly.from_param(pp, "s")))

    for k, c in enumerate(constraints):
        c.basis = gram_basis(c.poly, n)
        nfree = null_space_dim(c.basis)
        reg.free_gram[k] = [reg.add_s(f"gram[{c.name}][{t}]") for t in range(nfree)]
    return constraints, reg


def gram_basis(h: BiPoly, dim: int) -> list[Monomial]:
    d = max(h.degree, 0)
    return monomial_basis(dim, (d + 1) // 2)


# ---------------------------------------------------------------- Gram matrices


def _pair_table(basis: Sequence[Monomial]) -> dict:
    """Map each product monomial to the list of basis index pairs (k <= l) producing it."""
    table: dict = {}
    for k in range(len(basis)):
        for l in range(k, len(basis)):
            mono = tuple(x + y for x, y in zip(basis[k], basis[l]))
            table.setdefault(mono, []).append((k, l))
    for mono, pairs in table.items():
        # prefer the most balanced pair as the canonical slot
        pairs.sort(key=lambda kl: (abs(sum(basis[kl[0]]) - sum(basis[kl[1]])), kl))
    return table


def null_space_dim(basis: Sequence[Monomial]) -> int:
    p = len(basis)
    return p * (p + 1) // 2 - len(_pair_table(basis))


def null_space_directions(basis: Sequence[Monomial]) -> list[np.ndarray]:
    """Symmetric matrices N with b^T N b == 0, one per redundant index pair.

    The matching map is block diagonal over product monomials, so row reduction
    reduces to pairing every extra slot with the canonical slot of its monomial.
    """
    p = len(basis)
    out = []
    for mono, pairs in _pair_table(basis).items():
        k0, l0 = pairs[0]
        w0 = 1.0 if k0 == l0 else 2.0
        for k, l in pairs[1:]:
            w = 1.0 if k == l else 2.0
            N = np.zeros((p, p))
            N[k, l] += 1.0 / w
            if k != l:
                N[l, k] += 1.0 / w
            N[k0, l0] -= 1.0 / w0
            if k0 != l0:
                N[l0, k0] -= 1.0 / w0
            out.append(N)
    return out


def particular_gram(poly: Polynomial, basis: Sequence[Monomial], table: dict | None = None) -> np.ndarray:
    """A symmetric Q with b^T Q b == poly (coefficient on the canonical slot)."""
    table = table if table is not None else _pair_table(basis)
    p = len(basis)
    Q = np.zeros((p, p))
    for mono, c in poly.terms.items():
        if mono not in table:
            raise ValueError(f"monomial {mono} of the constraint is not in the span of the Gram basis")
        k, l = table[mono][0]
        if k == l:
            Q[k, k] += c
        else:
            Q[k, l] += c / 2.0
            Q[l, k] += c / 2.0
    return Q


@dataclass
class BilinearMatrixFunction:
    """``F(a,s) = F + sum a_i H_i + sum s_j G_j + sum a_i s_j F_ij`` (all symmetric p x p)."""

    F: np.ndarray
    H: np.ndarray                   # (m, p, p)
    G: np.ndarray                   # (n, p, p)
    Fij: dict                       # (i, j) -> (p, p)
    basis: list = field(default_factory=list)
    name: str = ""

    @property
    def p(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.G.shape[0]

    def __call__(self, a, s) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        s = np.asarray(s, dtype=float)
        out = self.F + np.tensordot(a, self.H, axes=1) + np.tensordot(s, self.G, axes=1)
        for (i, j), M in self.Fij.items():
            out = out + a[i] * s[j] * M
        return out

    def fix_s(self, s) -> tuple[np.ndarray, np.ndarray]:
        """Affine-in-a form ``(F0, H)`` with s fixed."""
        s = np.asarray(s, dtype=float)
        F0 = self.F + np.tensordot(s, self.G, axes=1)
        H = self.H.copy()
        for (i, j), M in self.Fij.items():
            H[i] = H[i] + s[j] * M
        return F0, H

    def fix_a(self, a) -> tuple[np.ndarray, np.ndarray]:
        a = np.asarray(a, dtype=float)
        F0 = self.F + np.tensordot(a, self.H, axes=1)
        G = self.G.copy()
        for (i, j), M in self.Fij.items():
            G[j] = G[j] + a[i] * M
        return F0, G

    @property
    def is_bilinear(self) -> bool:
        return bool(self.Fij)

    def active_a(self) -> list[int]:
        return sorted({i for i, _ in self.Fij})

    def active_s(self) -> list[int]:
        return sorted({j for _, j in self.Fij})

    def used_s(self) -> list[int]:
        nz = np.flatnonzero(np.abs(self.G).reshape(self.n, -1).max(axis=1) > 0) if self.n else []
        return sorted(set(int(j) for j in nz) | set(self.active_s()))

    def used_a(self) -> list[int]:
        nz = np.flatnonzero(np.abs(self.H).reshape(self.m, -1).max(axis=1) > 0) if self.m else []
        return sorted(set(int(i) for i in nz) | set(self.active_a()))


def gram_matrix(h: BiPoly, basis: Sequence[Monomial], m: int | None = None, n: int | None = None,
                free_indices: Sequence[int] | None = None):
    """Encode ``h`` as the bilinear matrix function ``-Q(a, s)`` over ``basis``.

    Null-space directions of the coefficient matching become extra ``s``
    parameters; their indices are ``free_indices`` (default: appended after the
    largest index used by ``h``).  Returns ``(bmf, free_indices)``.
    """
    basis = [tuple(b) for b in basis]
    p = len(basis)
    table = _pair_table(basis)
    nulls = null_space_directions(basis)
    if m is None:
        m = max(h.a_indices(), default=-1) + 1
    if free_indices is None:
        start = max(h.s_indices(), default=-1) + 1 if n is None else n
        free_indices = list(range(start, start + len(nulls)))
        n = start + len(nulls) if n is None else n + len(nulls)
    if n is None:
        n = max([*h.s_indices(), *free_indices], default=-1) + 1
    if len(free_indices) != len(nulls):
        raise ValueError("free index count does not match null-space dimension")
    F = np.zeros((p, p))
    H = np.zeros((m, p, p))
    G = np.zeros((n, p, p))
    Fij = {}
    for (i, j), poly in h.parts.items():
        Q = particular_gram(poly, basis, table)
        if i is None and j is None:
            F -= Q
        elif j is None:
            H[i] -= Q
        elif i is None:
            G[j] -= Q
        else:
            Fij[(i, j)] = Fij.get((i, j), 0) - Q
    for k, Nk in zip(free_indices, nulls):
        G[k] -= Nk
    return BilinearMatrixFunction(F, H, G, Fij, list(basis)), list(free_indices)


# ---------------------------------------------------------------- BMI problem


@dataclass
class BmiProblem:
    """maximize lambda subject to F_k(a, s) + lambda I <= 0 for every block k."""

    blocks: list[BilinearMatrixFunction]
    m: int
    n: int
    L_a: float
    L_s: float
    registry: ParamRegistry | None = None
    constraints: list[SosConstraint] | None = None

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("problem needs m, n >= 1")
        if not (self.L_a > 0 and self.L_s > 0):
            raise ValueError("bounds must be positive")
        for b in self.blocks:
            if b.m != self.m or b.n != self.n:
                raise ValueError("all blocks must share (m, n)")

    def block_diagonal(self, a, s) -> np.ndarray:
        from scipy.linalg import block_diag
        return block_diag(*[b(a, s) for b in self.blocks])

    def max_eigs(self, a, s) -> np.ndarray:
        return np.array([np.linalg.eigvalsh(b(a, s))[-1] for b in self.blocks])

    def optimal_lambda(self, a, s) -> float:
        """Largest lambda feasible at (a, s)."""
        return float(-self.max_eigs(a, s).max())


def assemble_bmi(constraints: list[SosConstraint], registry: ParamRegistry, bounds=(1.0, 100.0)) -> BmiProblem:
    if not constraints:
        raise ValueError("no constraints")
    L_a, L_s = bounds
    blocks = []
    for k, c in enumerate(constraints):
        bmf, _ = gram_matrix(c.poly, c.basis, registry.m, registry.n, registry.free_gram.get(k, []))
        bmf.name = c.name
        blocks.append(bmf)
    return BmiProblem(blocks, registry.m, registry.n, float(L_a), float(L_s), registry, constraints)


def quadratic_form(Q: np.ndarray, basis: Sequence[Monomial], variables: Sequence[str]) -> Polynomial:
    """The polynomial b^T Q b."""
    terms: dict = {}
    for k, bk in enumerate(basis):
        for l, bl in enumerate(basis):
            if Q[k, l] != 0.0:
                mono = tuple(x + y for x, y in zip(bk, bl))
                terms[mono] = terms.get(mono, 0.0) + Q[k, l]
    return Polynomial(terms, variables)
