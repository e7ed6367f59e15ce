"""Kronecker form of a bilinear matrix function and difference-of-convex splits.

With ``z = (a, s)`` and ``Z = z kron I_p`` a bilinear matrix function reads

    B(z) = Z^T M Z + Omega Z + F,   M = [[0, Gamma], [Gamma^T, 0]],

where ``Gamma`` holds the blocks ``F_ij / 2``.  Splitting ``M = M1 - M2`` with
both parts PSD gives ``B = B+ - B-`` with ``B+(z) = Z^T M1 Z + Omega Z + F`` and
``B-(z) = Z^T M2 Z``, both PSD-convex in ``z``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .encode import BilinearMatrixFunction

log = logging.getLogger(__name__)

CLAMP = 1e-8


@dataclass
class KroneckerForm:
    """Kronecker form restricted to the coordinates listed in ``a_idx``/``s_idx``.

    ``compact=False`` keeps every coordinate (the textbook shape); the compact
    form drops coordinates without bilinear coupling, which only carry zero
    rows of ``M``.
    """

    Gamma: np.ndarray       # (mp, np) over the kept coordinates
    Omega1: np.ndarray      # (p, mp)
    Omega2: np.ndarray      # (p, np)
    Fconst: np.ndarray      # (p, p)
    a_idx: list[int]
    s_idx: list[int]
    p: int
    M: np.ndarray = field(init=False)

    def __post_init__(self):
        ma = len(self.a_idx) * self.p
        ns = len(self.s_idx) * self.p
        self.M = np.zeros((ma + ns, ma + ns))
        self.M[:ma, ma:] = self.Gamma
        self.M[ma:, :ma] = self.Gamma.T

    @property
    def Omega(self) -> np.ndarray:
        return np.hstack([self.Omega1, self.Omega2])

    @property
    def nz(self) -> int:
        return len(self.a_idx) + len(self.s_idx)

    def z_of(self, a, s) -> np.ndarray:
        return np.concatenate([np.asarray(a, float)[self.a_idx], np.asarray(s, float)[self.s_idx]])

    def Zmat(self, z) -> np.ndarray:
        return np.kron(np.asarray(z, float).reshape(-1, 1), np.eye(self.p))

    def evaluate(self, a, s, extra: np.ndarray | None = None) -> np.ndarray:
        """``Z^T M Z + Omega Z + F`` at the kept coordinates of (a, s)."""
        Z = self.Zmat(self.z_of(a, s))
        out = Z.T @ self.M @ Z + self.Omega @ Z + self.Fconst
        return 0.5 * (out + out.T)


def kronecker_form(bmf: BilinearMatrixFunction, compact: bool = False) -> KroneckerForm:
    """Rewrite ``bmf`` in Kronecker form.

    The affine terms of coordinates dropped in compact mode are not part of the
    form; callers add them back (see :mod:`invbarrier.dcp`).
    """
    p = bmf.p
    if compact:
        a_idx = bmf.active_a()
        s_idx = bmf.active_s()
    else:
        a_idx = list(range(bmf.m))
        s_idx = list(range(bmf.n))
    apos = {i: k for k, i in enumerate(a_idx)}
    spos = {j: k for k, j in enumerate(s_idx)}
    Gamma = np.zeros((len(a_idx) * p, len(s_idx) * p))
    for (i, j), Fij in bmf.Fij.items():
        r, c = apos[i], spos[j]
        Gamma[r * p:(r + 1) * p, c * p:(c + 1) * p] = 0.5 * Fij
    Omega1 = np.hstack([bmf.H[i] for i in a_idx]) if a_idx else np.zeros((p, 0))
    Omega2 = np.hstack([bmf.G[j] for j in s_idx]) if s_idx else np.zeros((p, 0))
    return KroneckerForm(Gamma, Omega1, Omega2, bmf.F.copy(), a_idx, s_idx, p)


@dataclass
class DcDecomposition:
    M: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    N: np.ndarray
    method: str
    lam_u: float | None = None

    def residual(self) -> float:
        return float(np.linalg.norm(self.M - (self.M1 - self.M2)))


def sqrt_psd(M1: np.ndarray, tol: float = CLAMP, thin: bool = False) -> np.ndarray:
    """Return N with N^T N = M1 (symmetric square root, or thin factor when ``thin``)."""
    M1 = 0.5 * (M1 + M1.T)
    if M1.size == 0:
        return np.zeros((0, M1.shape[0])) if thin else M1.copy()
    w, V = np.linalg.eigh(M1)
    scale = max(1.0, float(np.abs(w).max()))
    if w[0] < -tol * scale:
        raise ValueError(f"matrix is indefinite (min eigenvalue {w[0]:.3e})")
    w = np.where(w > 0, w, 0.0)
    if thin:
        keep = w > tol * scale * 1e-6
        return (V[:, keep] * np.sqrt(w[keep])).T
    return (V * np.sqrt(w)) @ V.T


def _split_eig(M: np.ndarray):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    wp = np.where(w > CLAMP, w, 0.0)
    wm = np.where(w < -CLAMP, -w, 0.0)
    M1 = (V * wp) @ V.T
    # keep the reconstruction exact: M2 absorbs clamped round-off
    M2 = M1 - M
    return 0.5 * (M1 + M1.T), 0.5 * (M2 + M2.T)


def power_iteration(M: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0):
    """Largest algebraic eigenvalue of symmetric M, or None on non-convergence.

    Shifts by a Gershgorin bound so the target eigenvalue dominates in magnitude.
    """
    k = M.shape[0]
    if k == 0 or not np.any(M):
        return 0.0
    shift = float(np.max(np.sum(np.abs(M), axis=1)))
    A = M + shift * np.eye(k)
    v = np.random.default_rng(seed).standard_normal(k)
    v /= np.linalg.norm(v)
    rq = float(v @ M @ v)
    for _ in range(max_iter):
        w = A @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            # the shifted matrix is zero: M is a multiple of the identity
            return float(v @ M @ v)
        v = w / nrm
        new = float(v @ M @ v)
        if abs(new - rq) <= tol * max(1.0, abs(new)):
            return new
        rq = new
    return None


def decompose(kf: KroneckerForm, method: str = "eig", lam_u: float | None = None,
              sdp_tol: float = 1e-9) -> DcDecomposition:
    """DC split of ``kf.M`` by ``eig``, ``bound`` or ``sdp``."""
    M = kf.M
    if method == "eig":
        M1, M2 = _split_eig(M)
        return DcDecomposition(M, M1, M2, sqrt_psd(M1), "eig")
    if method == "bound":
        if lam_u is None:
            top = power_iteration(M)
            if top is None:
                log.info("power iteration did not converge; falling back to eig")
                return decompose(kf, "eig")
            lam_u = max(0.0, 1.01 * top)
            # guard against a Rayleigh quotient that converged below the true maximum
            if M.size and lam_u < np.linalg.eigvalsh(M)[-1]:
                lam_u = 1.01 * float(np.linalg.eigvalsh(M)[-1])
        k = M.shape[0]
        M1 = lam_u * np.eye(k)
        M2 = M1 - M
        return DcDecomposition(M, M1, M2, np.sqrt(lam_u) * np.eye(k), "bound", lam_u)
    if method == "sdp":
        c = _diag_lmi(M, sdp_tol)
        if c is None:
            log.info("diagonal LMI failed; falling back to bound")
            return decompose(kf, "bound")
        M1 = np.diag(c)
        M2 = M1 - M
        return DcDecomposition(M, M1, M2, np.diag(np.sqrt(c)), "sdp")
    raise ValueError(f"unknown decomposition method {method!r}")


def _diag_lmi(M: np.ndarray, tol: float):
    """minimize sum(c) s.t. c >= 0, diag(c) - M PSD; None on failure."""
    from .sdp import ConicProgram, solve_conic

    k = M.shape[0]
    if k == 0:
        return np.zeros(0)
    prog = ConicProgram(k, -np.ones(k))
    # M - diag(c) <= 0
    prog.add_lmi(M, {i: -np.diag(np.eye(k)[i]) for i in range(k)})
    prog.set_bounds(list(range(k)), lo=0.0)
    res = solve_conic(prog, tol)
    if res.x is None or res.status not in ("optimal", "numerical-limit"):
        return None
    c = np.maximum(res.x, 0.0)
    # make diag(c) - M PSD despite solver tolerance
    gap = np.linalg.eigvalsh(np.diag(c) - M)[0]
    if gap < 0:
        c = c - gap + 1e-12
    if res.status != "optimal" and res.violation > 1e-4:
        return None
    return c


def thin_factor(M1: np.ndarray) -> np.ndarray:
    """Rank-revealing factor N (r x k) with N^T N = M1 up to clamped eigenvalues."""
    return sqrt_psd(M1, thin=True)
