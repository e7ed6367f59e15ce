"""Sparse multivariate polynomials over float coefficients.

A :class:`Polynomial` is an immutable map from exponent tuples to floats over
an ordered list of variable names.  Besides ring arithmetic the module offers a
small recursive-descent parser, Lie derivatives along a polynomial vector field,
graded-lexicographic monomial bases, affine parameterized polynomials (used for
templates and multipliers) and a Runge-Kutta trajectory sampler.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

Monomial = tuple[int, ...]


def grevlex_key(mono: Monomial) -> tuple:
    """Sort key: total degree first, then earlier variables first."""
    return (sum(mono), tuple(-e for e in mono))


class Polynomial:
    """Immutable sparse polynomial.

    ``terms`` maps exponent tuples to non-zero float coefficients.  Zero
    coefficients are dropped exactly (no tolerance).
    """

    __slots__ = ("_terms", "_vars", "_hash")

    def __init__(self, terms: Mapping[Monomial, float] | None, variables: Sequence[str]):
        variables = tuple(variables)
        n = len(variables)
        clean: dict[Monomial, float] = {}
        for mono, c in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != n:
                raise ValueError(f"monomial {mono} does not match {n} variables")
            if any(e < 0 for e in mono):
                raise ValueError(f"negative exponent in {mono}")
            c = float(c)
            if c != 0.0:
                clean[mono] = clean.get(mono, 0.0) + c
                if clean[mono] == 0.0:
                    del clean[mono]
        self._terms = clean
        self._vars = variables
        self._hash = None

    # construction helpers
    @classmethod
    def zero(cls, variables: Sequence[str]) -> "Polynomial":
        return cls({}, variables)

    @classmethod
    def constant(cls, value: float, variables: Sequence[str]) -> "Polynomial":
        return cls({(0,) * len(variables): value}, variables)

    @classmethod
    def monomial(cls, mono: Monomial, variables: Sequence[str], coeff: float = 1.0) -> "Polynomial":
        return cls({tuple(mono): coeff}, variables)

    @classmethod
    def variable(cls, name: str, variables: Sequence[str]) -> "Polynomial":
        variables = tuple(variables)
        idx = variables.index(name)
        mono = tuple(1 if k == idx else 0 for k in range(len(variables)))
        return cls({mono: 1.0}, variables)

    # accessors
    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    @property
    def variables(self) -> tuple[str, ...]:
        return self._vars

    @property
    def nvars(self) -> int:
        return len(self._vars)

    def coeff(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def monomials(self) -> list[Monomial]:
        return sorted(self._terms, key=grevlex_key)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        if not self._terms:
            return -1
        return max(sum(m) for m in self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    # arithmetic
    def _check(self, other: "Polynomial") -> None:
        if other._vars != self._vars:
            raise ValueError(f"variable mismatch: {self._vars} vs {other._vars}")

    def _lift(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other), self._vars)
        return NotImplemented

    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(out, self._vars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({m: -c for m, c in self._terms.items()}, self._vars)

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return other - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial({m: c * float(other) for m, c in self._terms.items()}, self._vars)
        other = self._lift(other)
        if other is NotImplemented:
            return other
        out: dict[Monomial, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(out, self._vars)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("exponent must be a non-negative integer")
        result = Polynomial.constant(1.0, self._vars)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._vars == other._vars and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self._vars, frozenset(self._terms.items())))
        return self._hash

    def almost_equal(self, other: "Polynomial", tol: float = 1e-9) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return all(abs(self.coeff(k) - other.coeff(k)) <= tol for k in keys)

    def derivative(self, var: int | str) -> "Polynomial":
        k = self._vars.index(var) if isinstance(var, str) else var
        out = {}
        for m, c in self._terms.items():
            e = m[k]
            if e:
                mm = list(m)
                mm[k] = e - 1
                out[tuple(mm)] = c * e
        return Polynomial(out, self._vars)

    def gradient(self) -> list["Polynomial"]:
        return [self.derivative(k) for k in range(self.nvars)]

    def prune(self, tol: float) -> "Polynomial":
        return Polynomial({m: c for m, c in self._terms.items() if abs(c) > tol}, self._vars)

    # evaluation
    def __call__(self, point) -> float:
        return evaluate(self, point)

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape (N, n))."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.nvars:
            raise ValueError(f"points have dimension {pts.shape[1]}, expected {self.nvars}")
        out = np.zeros(pts.shape[0])
        if not self._terms:
            return out
        maxdeg = max(max(m) for m in self._terms)
        powers = [np.ones_like(pts)]
        for _ in range(maxdeg):
            powers.append(powers[-1] * pts)
        for m, c in self._terms.items():
            t = np.full(pts.shape[0], c)
            for k, e in enumerate(m):
                if e:
                    t = t * powers[e][:, k]
            out += t
        return out

    # printing
    def __str__(self) -> str:
        if not self._terms:
            return "0"
        order = sorted(self._terms, key=lambda m: (-sum(m), tuple(-e for e in m)))
        parts = []
        for i, m in enumerate(order):
            c = self._terms[m]
            sign = "-" if c < 0 else "+"
            mag = abs(c)
            factors = [f"{v}^{e}" if e > 1 else v for v, e in zip(self._vars, m) if e]
            if not factors:
                body = _fmt(mag)
            elif mag == 1.0:
                body = "*".join(factors)
            else:
                body = "*".join([_fmt(mag)] + factors)
            if i == 0:
                parts.append(("-" if c < 0 else "") + body)
            else:
                parts.append(f" {sign} {body}")
        return "".join(parts)

    def __repr__(self) -> str:
        return f"Polynomial({str(self)!r}, vars={list(self._vars)})"


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))"
)


class PolynomialSyntaxError(ValueError):
    """Raised on malformed polynomial text; ``pos`` is the character offset."""

    def __init__(self, msg: str, pos: int | None = None):
        super().__init__(msg if pos is None else f"{msg} (at offset {pos})")
        self.pos = pos


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PolynomialSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.toks = _tokenize(text)
        self.i = 0
        self.vars = tuple(variables)
        self.end = len(text)

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, self.end)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            raise PolynomialSyntaxError(f"expected {value!r}, found {val!r}", pos)

    def parse(self) -> Polynomial:
        if not self.toks:
            raise PolynomialSyntaxError("empty expression", 0)
        p = self.expr()
        kind, val, pos = self.peek()
        if kind is not None:
            raise PolynomialSyntaxError(f"unexpected token {val!r}", pos)
        return p

    def expr(self) -> Polynomial:
        sign = 1.0
        kind, val, _ = self.peek()
        if val in ("+", "-"):
            self.take()
            sign = -1.0 if val == "-" else 1.0
        acc = self.term() * sign
        while True:
            kind, val, _ = self.peek()
            if val not in ("+", "-"):
                return acc
            self.take()
            t = self.term()
            acc = acc + t if val == "+" else acc - t

    def term(self) -> Polynomial:
        acc = self.factor()
        while self.peek()[1] == "*":
            self.take()
            acc = acc * self.factor()
        return acc

    def _exponent(self) -> int:
        kind, val, pos = self.take()
        if kind != "num" or not val.isdigit():
            raise PolynomialSyntaxError(f"malformed exponent {val!r}", pos)
        return int(val)

    def factor(self) -> Polynomial:
        kind, val, pos = self.take()
        if kind == "num":
            value = Fraction(val)
            if self.peek()[1] == "/":
                self.take()
                k2, v2, p2 = self.take()
                if k2 != "num" or not v2.isdigit():
                    raise PolynomialSyntaxError(f"denominator must be an integer, found {v2!r}", p2)
                if int(v2) == 0:
                    raise PolynomialSyntaxError("division by zero in coefficient", p2)
                value = value / int(v2)
            if self.peek()[1] == "^":
                # convenience beyond the grammar: literal powers such as 0.125^2
                self.take()
                value = value ** self._exponent()
            return Polynomial.constant(float(value), self.vars)
        if kind == "name":
            if val not in self.vars:
                raise PolynomialSyntaxError(f"unknown variable {val!r}", pos)
            base = Polynomial.variable(val, self.vars)
            if self.peek()[1] == "^":
                self.take()
                return base ** self._exponent()
            return base
        if val == "(":
            inner = self.expr()
            self.expect(")")
            if self.peek()[1] == "^":
                self.take()
                return inner ** self._exponent()
            return inner
        raise PolynomialSyntaxError(f"unexpected token {val!r}", pos)


def parse_polynomial(text: str, variables: Sequence[str]) -> Polynomial:
    """Parse ``text`` into an expanded polynomial over ``variables``."""
    return _Parser(text, variables).parse()


# ---------------------------------------------------------------- Lie derivatives, bases


def lie_derivative(B: "Polynomial | ParamPolynomial", flow: Sequence[Polynomial], order: int = 1):
    """Return the order-``order`` Lie derivative of ``B`` along ``flow``.

    Works on plain and parameterized polynomials (the latter term by term,
    since the operator is linear).
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    if isinstance(B, ParamPolynomial):
        return B.map(lambda p: lie_derivative(p, flow, order))
    if len(flow) != B.nvars:
        raise ValueError(f"flow has {len(flow)} components, polynomial has {B.nvars} variables")
    for f in flow:
        if f.variables != B.variables:
            raise ValueError("flow and polynomial use different variable lists")
    out = B
    for _ in range(order):
        acc = Polynomial.zero(B.variables)
        for k, f in enumerate(flow):
            d = out.derivative(k)
            if not d.is_zero():
                acc = acc + d * f
        out = acc
    return out


def monomial_basis(dimension: int, degree: int) -> list[Monomial]:
    """All monomials in ``dimension`` variables of total degree <= ``degree``."""
    if dimension < 1 or degree < 0:
        raise ValueError("dimension must be positive and degree non-negative")
    out = []
    for d in range(degree + 1):
        level = []
        for combo in combinations_with_replacement(range(dimension), d):
            m = [0] * dimension
            for k in combo:
                m[k] += 1
            level.append(tuple(m))
        out.extend(sorted(level, key=grevlex_key))
    return out


def monomials_of_degree_range(dimension: int, low: int, high: int) -> list[Monomial]:
    return [m for m in monomial_basis(dimension, high) if sum(m) >= low]


# ---------------------------------------------------------------- parameterized polynomials


@dataclass(frozen=True)
class ParamPolynomial:
    """``constant + sum_k params[idx_k] * poly_k``; affine in the parameters."""

    constant: Polynomial
    basis_terms: tuple[tuple[int, Polynomial], ...] = ()

    def __post_init__(self):
        idx = [i for i, _ in self.basis_terms]
        if len(set(idx)) != len(idx):
            raise ValueError("parameter indices must be unique")
        for _, p in self.basis_terms:
            if p.variables != self.constant.variables:
                raise ValueError("all parts must share the variable list")

    @property
    def variables(self):
        return self.constant.variables

    @property
    def param_indices(self) -> list[int]:
        return [i for i, _ in self.basis_terms]

    @property
    def degree(self) -> int:
        return max([self.constant.degree] + [p.degree for _, p in self.basis_terms])

    def map(self, fn) -> "ParamPolynomial":
        return ParamPolynomial(fn(self.constant), tuple((i, fn(p)) for i, p in self.basis_terms))

    def instantiate(self, params) -> Polynomial:
        out = self.constant
        for i, p in self.basis_terms:
            out = out + p * float(params[i])
        return out

    def __add__(self, other: "ParamPolynomial | Polynomial") -> "ParamPolynomial":
        if isinstance(other, Polynomial):
            return ParamPolynomial(self.constant + other, self.basis_terms)
        merged = dict(self.basis_terms)
        for i, p in other.basis_terms:
            merged[i] = merged[i] + p if i in merged else p
        return ParamPolynomial(self.constant + other.constant, tuple(sorted(merged.items())))

    def __mul__(self, other):
        if isinstance(other, (int, float, Polynomial)):
            return self.map(lambda p: p * other)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return self.map(lambda p: -p)

    def __sub__(self, other):
        return self + (-other)


def param_template(monomials: Iterable[Monomial], variables: Sequence[str], first_index: int = 0,
                   fixed: Polynomial | None = None) -> ParamPolynomial:
    """Generic template ``fixed + sum_k p_{first_index+k} * m_k``."""
    variables = tuple(variables)
    const = fixed if fixed is not None else Polynomial.zero(variables)
    terms = tuple((first_index + k, Polynomial.monomial(m, variables)) for k, m in enumerate(monomials))
    return ParamPolynomial(const, terms)


def evaluate(p, point, params=None) -> float:
    """Evaluate a polynomial (or parameterized polynomial with ``params``) at a point."""
    x = np.asarray(point, dtype=float).ravel()
    if isinstance(p, ParamPolynomial):
        if params is None:
            raise ValueError("parameterized polynomial needs params")
        return evaluate(p.instantiate(params), x)
    if params is not None:
        raise ValueError("params given for a plain polynomial")
    if x.shape[0] != p.nvars:
        raise ValueError(f"point has dimension {x.shape[0]}, expected {p.nvars}")
    total = 0.0
    for m, c in p._terms.items():
        t = c
        for xi, e in zip(x, m):
            if e:
                t *= xi ** e
        total += t
    return float(total)


# ---------------------------------------------------------------- systems and trajectories


@dataclass(frozen=True)
class DynamicalSystem:
    variables: tuple[str, ...]
    flow: tuple[Polynomial, ...]
    init: Polynomial
    unsafe: Polynomial
    domain: tuple[tuple[float, float], ...] | None = None
    archimedean_radius: float | None = None
    lie_order: int = 1
    strict_last: bool = False
    name: str = ""

    def __post_init__(self):
        n = len(self.variables)
        if len(self.flow) != n:
            raise ValueError(f"flow has {len(self.flow)} components for {n} variables")
        for p in (*self.flow, self.init, self.unsafe):
            if p.variables != tuple(self.variables):
                raise ValueError("all polynomials must share the system variables")
        if self.domain is not None:
            if len(self.domain) != n:
                raise ValueError("domain box must have one interval per variable")
            for lo, hi in self.domain:
                if not lo <= hi:
                    raise ValueError(f"empty domain interval [{lo}, {hi}]")
        if self.archimedean_radius is not None and not self.archimedean_radius > 0:
            raise ValueError("archimedean_radius must be positive")
        if self.lie_order < 1:
            raise ValueError("lie_order must be >= 1")

    @property
    def dim(self) -> int:
        return len(self.variables)

    def vector_field(self, x: np.ndarray) -> np.ndarray:
        return np.array([evaluate(f, x) for f in self.flow])

    def vector_field_many(self, pts: np.ndarray) -> np.ndarray:
        return np.stack([f.eval_many(pts) for f in self.flow], axis=1)

    def with_lie_order(self, order: int) -> "DynamicalSystem":
        from dataclasses import replace
        return replace(self, lie_order=order)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    truncated: bool = False

    def __len__(self):
        return len(self.states)


def sample_trajectory(sys: DynamicalSystem, x0, step: float, count: int) -> Trajectory:
    """Classical RK4 integration with ``count`` steps of size ``step``.

    Stops early (``truncated=True``) once the state leaves the domain box by
    more than ten box widths.  Raises ``FloatingPointError`` on non-finite states.
    """
    x = np.asarray(x0, dtype=float).ravel()
    if x.shape[0] != sys.dim:
        raise ValueError(f"x0 has dimension {x.shape[0]}, expected {sys.dim}")
    if not step > 0 or count < 1:
        raise ValueError("step must be positive and count >= 1")
    if sys.domain is not None:
        lo = np.array([d[0] for d in sys.domain])
        hi = np.array([d[1] for d in sys.domain])
        slack = 10.0 * (hi - lo)
    f = sys.vector_field
    states = [x.copy()]
    truncated = False
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(count):
            k1 = f(x)
            k2 = f(x + 0.5 * step * k1)
            k3 = f(x + 0.5 * step * k2)
            k4 = f(x + step * k3)
            x = x + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite state after {len(states)} steps")
            states.append(x.copy())
            if sys.domain is not None and (np.any(x < lo - slack) or np.any(x > hi + slack)):
                truncated = True
                break
    arr = np.array(states)
    return Trajectory(times=step * np.arange(len(arr)), states=arr, truncated=truncated)
