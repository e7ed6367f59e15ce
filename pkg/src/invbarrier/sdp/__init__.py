"""Conic solver layer: program container, embedded solver, SDPA file adapter."""

from .sdpa import export_sdpa, parse_sdpa, parse_sdpa_result, sdpa_text, soc_as_lmi, solve_external
from .solver import (INFEASIBLE, NUMERICAL, OPTIMAL, UNBOUNDED, ConicProgram, LmiBlock, SocBlock,
                     SolverResult, solve_conic)


def solve(prog: ConicProgram, tol: float = 1e-8, backend: str = "embedded") -> SolverResult:
    """Dispatch to the embedded solver or to ``sdpa:<path>``."""
    if backend in (None, "", "embedded"):
        return solve_conic(prog, tol)
    if backend.startswith("sdpa:"):
        return solve_external(prog, backend[5:], tol)
    raise ValueError(f"unknown backend {backend!r}")


__all__ = [
    "ConicProgram", "LmiBlock", "SocBlock", "SolverResult", "solve_conic", "solve", "export_sdpa",
    "parse_sdpa", "parse_sdpa_result", "sdpa_text", "soc_as_lmi", "solve_external",
    "OPTIMAL", "INFEASIBLE", "UNBOUNDED", "NUMERICAL",
]
