"""Command line: synth, check, bench, trace, decompose.

Exit codes: 0 valid (or success), 1 bad input, 2 refuted or failed,
3 inconclusive.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .polyalg import PolynomialSyntaxError, parse_polynomial, sample_trajectory
from .problems import Problem, ProblemError, benchmark_names, load_benchmark, load_problem, reference_table
from .verify import INCONCLUSIVE, REFUTED, VALID, CheckConfig, check_certificate, export_smtlib

EXIT_OK, EXIT_INPUT, EXIT_INVALID, EXIT_INCONCLUSIVE = 0, 1, 2, 3


def _exit_for(status: str) -> int:
    if status == VALID:
        return EXIT_OK
    if status == INCONCLUSIVE:
        return EXIT_INCONCLUSIVE
    return EXIT_INVALID


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["sufficient", "necessary"], default="sufficient")
    p.add_argument("--dc-method", choices=["eig", "bound", "sdp"], default="eig")
    p.add_argument("--bnb", action="store_true", help="search the parameter box by branch-and-bound")
    p.add_argument("--eta", type=float, default=None, help="branch-and-bound granularity (default 0.05*L_a)")
    p.add_argument("--delta", type=float, default=-1e-3, help="proximal weight (negative)")
    p.add_argument("--tol", type=float, default=1e-8, help="conic solver tolerance")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", default="embedded", help="embedded or sdpa:<path to binary>")
    p.add_argument("--lie-order", type=int, default=None, help="override the problem's Lie order")
    p.add_argument("--time-limit", type=float, default=None, help="seconds")


def _synth_config(args):
    from .pipeline import SynthConfig
    if args.delta >= 0:
        raise ValueError("--delta must be negative")
    if not (args.backend == "embedded" or args.backend.startswith("sdpa:")):
        raise ValueError("--backend must be 'embedded' or 'sdpa:<path>'")
    return SynthConfig(mode=args.mode, dc_method=args.dc_method, max_iter=args.max_iter, delta=args.delta,
                       tol=args.tol, seed=args.seed, backend=args.backend, bnb=args.bnb, eta=args.eta,
                       time_limit=args.time_limit, lie_order=args.lie_order)


def _load(path: str) -> Problem:
    p = Path(path)
    if not p.exists() and path in benchmark_names():
        return load_benchmark(path)
    return load_problem(p)


def _certificate_json(res) -> dict:
    return {"name": res.name, "variables": list(res.B.variables), "B": str(res.B),
            "lie_order": res.certificate.lie_order if res.certificate else None,
            "verdict": res.status, "iterations": res.iterations}


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    from .pipeline import synthesize
    problem = _load(args.problem)
    cfg = _synth_config(args)
    res = synthesize(problem, cfg)
    if args.emit_sdpa:
        _emit_sdpa(problem, cfg, Path(args.emit_sdpa))
    if res.B is None:
        print(f"{problem.name}: {res.status}")
        for note in res.notes:
            print(f"  note: {note}")
        return EXIT_INVALID
    print(f"problem:    {problem.name}")
    print(f"B(x) =      {res.B}")
    print(f"iterations: {res.iterations}")
    print(f"verdict:    {res.status}")
    cert = res.certificate
    if cert is not None and cert.verdict == REFUTED:
        print(f"witness:    {cert.clause} violated by {cert.amount:.3e} at {np.array2string(cert.witness)}")
    for note in res.notes + (cert.notes if cert else []):
        print(f"note:       {note}")
    if args.out:
        Path(args.out).write_text(json.dumps(_certificate_json(res), indent=2) + "\n")
    if args.emit_smt:
        files = export_smtlib(problem.system, res.B, args.emit_smt, cert.lie_order if cert else None)
        print(f"smt:        {len(files)} files in {args.emit_smt}")
    return _exit_for(res.status)


def _emit_sdpa(problem: Problem, cfg, dest: Path) -> None:
    """Write the initial LMI (second-order cones as arrow LMIs) in SDPA sparse format."""
    from .dcp import initial_program
    from .pipeline import encode_problem
    from .sdp import export_sdpa, soc_as_lmi
    dest.mkdir(parents=True, exist_ok=True)
    bmi, _ = encode_problem(problem, cfg.mode, cfg.lie_order)
    prog, _, _ = initial_program(bmi, 1.0 if cfg.multiplier_constants is None else cfg.multiplier_constants)
    path = export_sdpa(soc_as_lmi(prog), dest / f"{problem.name or 'problem'}-initial.dat-s")
    print(f"sdpa:       {path}")


# ---------------------------------------------------------------- check


def _read_certificate(text: str, variables) -> tuple:
    """A certificate JSON file written by ``synth --out`` or a polynomial string."""
    p = Path(text)
    lie_order = None
    if p.exists():
        data = json.loads(p.read_text())
        text = data["B"]
        lie_order = data.get("lie_order")
    return parse_polynomial(text, variables), lie_order


def cmd_check(args) -> int:
    problem = _load(args.problem)
    B, lie_order = _read_certificate(args.certificate, problem.system.variables)
    order = args.lie_order or lie_order or problem.system.lie_order
    cfg = CheckConfig(n_points=args.points, epsilon_check=problem.spec.epsilon / 2, seed=args.seed)
    cert = check_certificate(problem.system, B, cfg, order)
    print(f"B(x) =    {B}")
    print(f"verdict:  {cert.verdict}")
    if cert.verdict == REFUTED:
        print(f"witness:  {cert.clause} violated by {cert.amount:.3e} at {np.array2string(cert.witness)}")
    for note in cert.notes:
        print(f"note:     {note}")
    if args.emit_smt:
        files = export_smtlib(problem.system, B, args.emit_smt, order)
        print(f"smt:      {len(files)} files in {args.emit_smt}")
    return _exit_for(cert.verdict)


# ---------------------------------------------------------------- bench

FAST_LIMIT_DIM = 3
BENCH_COLUMNS = ["name", "n_sys", "d_flow", "d_bc", "iterations", "ref_iterations", "delta_iterations",
                 "verdict", "ref_verdict", "match", "seconds"]


def _bench_one(name: str, cfg) -> dict:
    from .pipeline import synthesize
    problem = load_benchmark(name)
    t0 = time.perf_counter()
    try:
        res = synthesize(problem, cfg)
        status, iters = res.status, res.iterations
    except Exception as exc:     # harness keeps going; the row records the failure
        logging.getLogger(__name__).warning("%s failed: %s", name, exc)
        status, iters = "error", None
    sys_ = problem.system
    dflow = max(f.degree for f in sys_.flow)
    dbc = problem.spec.degree if problem.spec.monomials is None else max(sum(m) for m in problem.spec.monomials)
    if problem.spec.fixed is not None:
        dbc = max(dbc, problem.spec.fixed.degree)
    return {"name": name, "n_sys": sys_.dim, "d_flow": dflow, "d_bc": dbc, "iterations": iters,
            "status": status, "seconds": time.perf_counter() - t0}


def _verdict(status: str) -> str:
    return {VALID: "valid", INCONCLUSIVE: "inconclusive"}.get(status, "invalid")


def bench_rows(names, cfg, jobs: int = 1) -> list[dict]:
    ref = reference_table()
    if jobs > 1 and len(names) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_bench_one, names, [cfg] * len(names)))
    else:
        raw = [_bench_one(n, cfg) for n in names]
    rows = []
    for r in raw:
        rr = ref.get(r["name"], {})
        verdict = _verdict(r["status"])
        ref_it = rr.get("iterations")
        rows.append({
            "name": r["name"], "n_sys": r["n_sys"], "d_flow": r["d_flow"], "d_bc": r["d_bc"],
            "iterations": r["iterations"], "ref_iterations": ref_it,
            "delta_iterations": None if r["iterations"] is None or ref_it is None else r["iterations"] - ref_it,
            "verdict": verdict, "ref_verdict": rr.get("validity"),
            "match": verdict == rr.get("validity"), "seconds": round(r["seconds"], 2),
        })
    return rows


def bench_markdown(rows) -> str:
    head = "| " + " | ".join(BENCH_COLUMNS) + " |"
    sep = "|" + "|".join("---" for _ in BENCH_COLUMNS) + "|"
    body = ["| " + " | ".join("" if r[c] is None else str(r[c]) for c in BENCH_COLUMNS) + " |" for r in rows]
    return "\n".join([head, sep, *body]) + "\n"


def bench_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def default_selection() -> list[str]:
    """All 2- and 3-dimensional benchmarks."""
    return [n for n in benchmark_names() if len(load_benchmark(n).system.variables) <= FAST_LIMIT_DIM]


def cmd_bench(args) -> int:
    if args.names:
        unknown = [n for n in args.names if n not in benchmark_names()]
        if unknown:
            raise ValueError(f"unknown benchmarks: {', '.join(unknown)}")
        names = args.names
    elif args.all:
        names = benchmark_names()
    else:
        names = default_selection()
    cfg = _synth_config(args)
    rows = bench_rows(names, cfg, args.jobs)
    md = bench_markdown(rows)
    print(md, end="")
    if args.csv:
        Path(args.csv).write_text(bench_csv(rows))
    if args.markdown:
        Path(args.markdown).write_text(md)
    return EXIT_OK


# ---------------------------------------------------------------- trace


def cmd_trace(args) -> int:
    problem = _load(args.problem)
    sys_ = problem.system
    x0 = np.array([float(v) for v in args.x0.split(",")])
    B = None
    if args.certificate:
        B, _ = _read_certificate(args.certificate, sys_.variables)
    traj = sample_trajectory(sys_, x0, args.step, args.count)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t", *sys_.variables, "B"])
        Bv = B.eval_many(traj.states) if B is not None else np.full(len(traj), np.nan)
        for t, x, b in zip(traj.times, traj.states, Bv):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in x), "" if np.isnan(b) else repr(float(b))])
    finally:
        if args.out:
            out.close()
    if traj.truncated:
        print("note: trajectory left the domain and was truncated", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- decompose


def cmd_decompose(args) -> int:
    from .dcdecomp import decompose, kronecker_form
    from .pipeline import encode_problem
    problem = _load(args.problem)
    bmi, _ = encode_problem(problem, args.mode, args.lie_order)
    dest = Path(args.out) if args.out else None
    if dest:
        dest.mkdir(parents=True, exist_ok=True)
    for k, (blk, con) in enumerate(zip(bmi.blocks, bmi.constraints)):
        if not blk.is_bilinear:
            print(f"[{k}] {con.name}: affine, nothing to split")
            continue
        kf = kronecker_form(blk, compact=not args.full)
        dc = decompose(kf, args.dc_method)
        w1 = np.linalg.eigvalsh(dc.M1)[0] if dc.M1.size else 0.0
        w2 = np.linalg.eigvalsh(dc.M2)[0] if dc.M2.size else 0.0
        print(f"[{k}] {con.name}: size {dc.M.shape[0]}, residual {dc.residual():.2e}, "
              f"min eig M1 {w1:.2e}, M2 {w2:.2e}")
        if dest:
            np.savez(dest / f"block{k}.npz", M=dc.M, M1=dc.M1, M2=dc.M2, N=dc.N)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="invbarrier", description="Invariant barrier certificate synthesis")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a certificate for a problem file")
    p.add_argument("problem", help="problem JSON file or bundled benchmark name")
    _add_synth_flags(p)
    p.add_argument("--out", help="write the certificate as JSON")
    p.add_argument("--emit-smt", metavar="DIR", help="write SMT-LIB obligations for the result")
    p.add_argument("--emit-sdpa", metavar="DIR", help="write the initial LMI in SDPA format")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("check", help="posterior check of a certificate")
    p.add_argument("problem")
    p.add_argument("certificate", help="certificate JSON from synth --out, or a polynomial string")
    p.add_argument("--lie-order", type=int, default=None)
    p.add_argument("--points", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit-smt", metavar="DIR")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", help="run bundled benchmarks and compare with the reference table")
    p.add_argument("names", nargs="*")
    p.add_argument("--all", action="store_true", help="include the high-dimensional examples")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv")
    p.add_argument("--markdown")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("trace", help="write a simulated trajectory as CSV")
    p.add_argument("problem")
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--certificate", help="certificate JSON or polynomial to evaluate along the path")
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("decompose", help="show the DC split of every bilinear block")
    p.add_argument("problem")
    p.add_argument("--dc-method", choices=["eig", "bound", "sdp"], default="eig")
    p.add_argument("--mode", choices=["sufficient", "necessary"], default="sufficient")
    p.add_argument("--lie-order", type=int, default=None)
    p.add_argument("--full", action="store_true", help="keep uncoupled coordinates")
    p.add_argument("--out", help="directory for block<k>.npz dumps")
    p.set_defaults(func=cmd_decompose)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ProblemError, PolynomialSyntaxError, FileNotFoundError, json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
