"""SDPA sparse-format export/import and a file-based external solver backend.

Mapping from a :class:`ConicProgram` (maximize c.x, F0 + sum x_i C_i <= 0) to
SDPA's primal form (minimize c'.x, sum x_i F_i - F_0 >= 0):
c' = -c, F_i = -C_i, F_0 = F0.  Linear rows ``A x <= b`` (boxes included)
become one trailing diagonal block with F_i = -A[:, i] and F_0 = -b.
"""

from __future__ import annotations

import os
import re
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from .solver import (INFEASIBLE, NUMERICAL, OPTIMAL, UNBOUNDED, ConicProgram, LmiBlock,
                     SolverResult, _linear_rows)


def _num(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError("non-finite coefficient cannot be exported")
    s = "%.17g" % x
    return "0" if s == "-0" else s


def sdpa_text(prog: ConicProgram) -> str:
    if prog.socs:
        raise ValueError("SDPA export does not support second-order cone blocks")
    prog.check()
    A, b = _linear_rows(prog)
    sizes = [blk.size for blk in prog.lmis]
    if A.shape[0]:
        sizes.append(-A.shape[0])
    if not sizes:
        raise ValueError("program has no constraints to export")
    lines = [str(prog.nvars), str(len(sizes)), " ".join(str(s) for s in sizes),
             " ".join(_num(-c) for c in prog.objective)]

    def emit(matno, blkno, M):
        k = M.shape[0]
        for i in range(k):
            for j in range(i, k):
                v = M[i, j]
                if v != 0.0:
                    lines.append(f"{matno} {blkno} {i + 1} {j + 1} {_num(v)}")

    for matno in range(prog.nvars + 1):
        for bi, blk in enumerate(prog.lmis):
            if matno == 0:
                emit(0, bi + 1, blk.F0)
            elif (matno - 1) in blk.coeffs:
                emit(matno, bi + 1, -blk.coeffs[matno - 1])
        if A.shape[0]:
            bi = len(prog.lmis) + 1
            vec = -b if matno == 0 else -A[:, matno - 1]
            for r in np.flatnonzero(vec):
                lines.append(f"{matno} {bi} {r + 1} {r + 1} {_num(vec[r])}")
    return "\n".join(lines) + "\n"


def export_sdpa(prog: ConicProgram, destination) -> Path:
    path = Path(destination)
    path.write_text(sdpa_text(prog))
    return path


def parse_sdpa(text: str) -> ConicProgram:
    """Read an SDPA sparse file back into a :class:`ConicProgram`."""
    raw = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith(('"', "*"))]
    clean = lambda ln: re.sub(r"[,{}()]", " ", ln).split()
    nvars = int(clean(raw[0])[0])
    nblocks = int(clean(raw[1])[0])
    sizes = [int(t) for t in clean(raw[2])[:nblocks]]
    obj = np.array([float(t) for t in clean(raw[3])[:nvars]])
    mats = [[np.zeros((abs(s), abs(s))) for s in sizes] for _ in range(nvars + 1)]
    for ln in raw[4:]:
        t = clean(ln)
        matno, blk, i, j, v = int(t[0]), int(t[1]), int(t[2]), int(t[3]), float(t[4])
        M = mats[matno][blk - 1]
        M[i - 1, j - 1] = v
        M[j - 1, i - 1] = v
    prog = ConicProgram(nvars, -obj)
    for bi, s in enumerate(sizes):
        if s > 0:
            coeffs = {k: -mats[k + 1][bi] for k in range(nvars) if np.any(mats[k + 1][bi])}
            prog.add_lmi(mats[0][bi], coeffs)
        else:
            r = abs(s)
            A = np.stack([-np.diag(mats[k + 1][bi]) for k in range(nvars)], axis=1) if nvars else np.zeros((r, 0))
            b = -np.diag(mats[0][bi])
            for row in range(r):
                prog.add_linear(A[row], b[row])
    return prog


def soc_as_lmi(prog: ConicProgram) -> ConicProgram:
    """Copy of ``prog`` with each SOC replaced by its arrow-matrix LMI."""
    out = ConicProgram(prog.nvars, prog.objective.copy(), list(prog.lmis), [], prog.lin_A, prog.lin_b,
                       prog.lower, prog.upper, prog.names)
    for soc in prog.socs:
        k = soc.A.shape[0]
        # [[t I, v], [v^T, t]] >= 0 with t = c.x + d, v = A x + b; stored negated
        F0 = np.zeros((k + 1, k + 1))
        F0[:k, :k] = -soc.d * np.eye(k)
        F0[k, k] = -soc.d
        F0[:k, k] = F0[k, :k] = -soc.b
        coeffs = {}
        for i in range(prog.nvars):
            C = np.zeros((k + 1, k + 1))
            C[:k, :k] = -soc.c[i] * np.eye(k)
            C[k, k] = -soc.c[i]
            C[:k, k] = C[k, :k] = -soc.A[:, i]
            if np.any(C):
                coeffs[i] = C
        out.lmis = out.lmis + [LmiBlock(F0, coeffs)]
    return out


_PHASES = {"pdOPT": OPTIMAL, "pINF_dFEAS": INFEASIBLE, "pINF": INFEASIBLE, "pdINF": INFEASIBLE,
           "pUNBD": UNBOUNDED, "dINF": UNBOUNDED, "pFEAS_dINF": UNBOUNDED}


def parse_sdpa_result(text: str, nvars: int) -> dict:
    """Parse the conventional SDPA result layout (objValPrimal/objValDual, xVec)."""
    out = {"phase": None, "objValPrimal": None, "objValDual": None, "xVec": None}
    m = re.search(r"phase\.value\s*=\s*(\w+)", text)
    if m:
        out["phase"] = m.group(1)
    for key in ("objValPrimal", "objValDual"):
        m = re.search(key + r"\s*=\s*([-+0-9.eE]+)", text)
        if m:
            out[key] = float(m.group(1))
    m = re.search(r"xVec\s*=\s*\{([^}]*)\}", text)
    if m:
        vals = [float(t) for t in re.split(r"[,\s]+", m.group(1).strip()) if t]
        if len(vals) == nvars:
            out["xVec"] = np.array(vals)
    return out


def solve_external(prog: ConicProgram, binary: str, tol: float = 1e-8, timeout: float = 600.0) -> SolverResult:
    """Export ``prog``, run ``binary in.dat-s out.out`` and read the result file."""
    work = prog if not prog.socs else soc_as_lmi(prog)
    with tempfile.TemporaryDirectory() as tmp:
        src = os.path.join(tmp, "problem.dat-s")
        dst = os.path.join(tmp, "problem.out")
        export_sdpa(work, src)
        try:
            subprocess.run([binary, src, dst], check=False, capture_output=True, timeout=timeout)
            text = Path(dst).read_text()
        except (OSError, subprocess.TimeoutExpired) as exc:
            return SolverResult(NUMERICAL, None, float("nan"), float("inf"), info={"error": str(exc)})
    res = parse_sdpa_result(text, prog.nvars)
    x = res["xVec"]
    status = _PHASES.get(res["phase"], NUMERICAL if res["phase"] else (OPTIMAL if x is not None else NUMERICAL))
    if x is None:
        return SolverResult(status if status != OPTIMAL else NUMERICAL, None, float("nan"), float("inf"), info=res)
    viol = prog.violation(x)
    if status == OPTIMAL and viol > max(10 * tol, 1e-6):
        status = NUMERICAL
    gap = abs(res["objValPrimal"] - res["objValDual"]) if res["objValPrimal"] is not None and res["objValDual"] is not None else float("nan")
    return SolverResult(status, x, float(prog.objective @ x), viol, gap, info=res)
