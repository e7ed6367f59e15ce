"""End-to-end synthesis: encode, initial LMI, DC iteration, posterior check."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .dcp import IterationTrace, Solution, bmi_dc, initial_solution, prepare_splits
from .encode import BmiProblem, ParamRegistry, assemble_bmi, build_constraints
from .polyalg import Polynomial
from .problems import Problem
from .verify import INCONCLUSIVE, REFUTED, VALID, Certificate, CheckConfig, check_certificate

log = logging.getLogger(__name__)

FAILED = "failed"

# Multiplier constants tried for the initial LMI, as (initial, consecution,
# separation).  Sign-free consecution multipliers may take negative constants,
# which turns the consecution condition into a decay condition.
CONSECUTION_CONSTANTS = (1.0, 0.0, -1.0, -0.1, 0.1, -10.0, 10.0)
SET_CONSTANTS = ((1.0, 1.0), (0.1, 0.1), (1.0, 0.1), (0.1, 1.0), (10.0, 1.0))


@dataclass
class SynthConfig:
    mode: str = "sufficient"
    dc_method: str = "eig"
    max_iter: int = 100
    epsilon: float = 1e-6           # step-norm termination of the DC iteration
    delta: float = -1e-3            # proximal weight
    tol: float = 1e-8               # conic solver tolerance
    lambda_tol: float = 1e-6
    seed: int = 0
    multiplier_constants: Any = None  # None: try the built-in schedule
    random_constants: int = 0       # extra randomized constant vectors
    max_screen: int = 4             # initial solutions given a posterior check
    max_starts: int = 3             # DC runs from distinct initial solutions
    backend: str = "embedded"
    check: CheckConfig | None = None
    bnb: bool = False
    eta: float | None = None
    max_regions: int = 200
    balance: bool = True
    time_limit: float | None = None
    lie_order: int | None = None


@dataclass
class SynthesisResult:
    name: str
    status: str                     # valid | refuted | inconclusive | failed
    B: Polynomial | None
    certificate: Certificate | None
    solution: Solution | None
    trace: IterationTrace | None
    iterations: int
    constants: Any
    lam0: float | None
    elapsed: float
    problem: BmiProblem | None = None
    registry: ParamRegistry | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.status == VALID


def encode_problem(problem: Problem, mode: str = "sufficient", lie_order: int | None = None):
    """Build the BMI for ``problem``; returns (bmi, registry)."""
    if lie_order is not None:
        problem = problem.with_lie_order(lie_order)
    cons, reg = build_constraints(problem.system, problem.spec, mode)
    return assemble_bmi(cons, reg, (problem.L_a, problem.L_s)), reg


def constant_schedule(bmi: BmiProblem, random_count: int = 0, seed: int = 0) -> list[list[float]]:
    """Per-constraint multiplier constants to try, most conventional first."""
    kinds = [c.kind for c in bmi.constraints]
    # SOS-side blocks carry no constant multiplier; their entries are ignored
    out = []
    for cv, (ci, cu) in itertools.product(CONSECUTION_CONSTANTS, SET_CONSTANTS):
        out.append([ci if k == "initial" else cv if k == "consecution" else cu if k == "separation" else 1.0
                    for k in kinds])
    rng = np.random.default_rng(seed)
    for _ in range(random_count):
        ci, cu = 10.0 ** rng.uniform(-2, 1, size=2)
        cv = float(rng.choice([-1, 1])) * 10.0 ** rng.uniform(-2, 1)
        out.append([ci if k == "initial" else cv if k == "consecution" else cu if k == "separation" else 1.0
                    for k in kinds])
    return out


def _check_config(problem: Problem, cfg: SynthConfig) -> CheckConfig:
    if cfg.check is not None:
        return cfg.check
    return CheckConfig(epsilon_check=problem.spec.epsilon / 2, seed=cfg.seed)


def _candidates(bmi: BmiProblem, cfg: SynthConfig, region=None, deadline: float | None = None):
    """Initial solutions for every constant vector that yields a feasible LMI."""
    if cfg.multiplier_constants is not None:
        schedule = [cfg.multiplier_constants]
    else:
        schedule = constant_schedule(bmi, cfg.random_constants, cfg.seed)
    found = []
    for k, c in enumerate(schedule):
        # keep whatever was found once the clock runs out
        if deadline is not None and found and time.perf_counter() > deadline:
            log.info("candidate scan stopped after %d of %d constant vectors", k, len(schedule))
            break
        try:
            z = initial_solution(bmi, c, region=region, tol=cfg.tol, backend=cfg.backend)
        except (RuntimeError, ValueError) as exc:
            log.debug("constants %s rejected: %s", c, exc)
            continue
        found.append((k, c, z))
    # best lambda first; schedule order breaks near-ties
    found.sort(key=lambda r: (-round(r[2].lam, 9), r[0]))
    return found


def synthesize(problem: Problem, cfg: SynthConfig | None = None) -> SynthesisResult:
    """Search for an invariant barrier certificate for ``problem``."""
    cfg = cfg or SynthConfig()
    t0 = time.perf_counter()
    if cfg.lie_order is not None:
        problem = problem.with_lie_order(cfg.lie_order)
    if cfg.bnb:
        return _synthesize_bnb(problem, cfg, t0)
    system = problem.system
    bmi, reg = encode_problem(problem, cfg.mode)
    ccfg = _check_config(problem, cfg)
    screen = replace(ccfg, n_points=min(ccfg.n_points, 20_000), refine=min(ccfg.refine, 4))
    notes = []
    if cfg.mode == "necessary":
        notes.append("necessary-mode output is a candidate pending the posterior check")

    def result(status, sol, trace, iters, consts, lam0, cert):
        B = reg.template.instantiate(sol.a) if sol is not None else None
        return SynthesisResult(problem.name, status, B, cert, sol, trace, iters, consts, lam0,
                               time.perf_counter() - t0, bmi, reg, notes)

    # the scan may use at most half the budget, leaving the rest to the DC runs
    deadline = None if cfg.time_limit is None else t0 + 0.5 * cfg.time_limit
    cands = _candidates(bmi, cfg, deadline=deadline)
    if not cands:
        notes.append("no multiplier constants gave a feasible initial LMI")
        return result(FAILED, None, None, 0, None, None, None)

    def posterior(sol, config):
        return check_certificate(system, reg.template.instantiate(sol.a), config)

    # an initial solution that already passes the posterior check needs no iteration
    for _, c, z in cands[:cfg.max_screen]:
        if posterior(z, screen).valid:
            cert = posterior(z, ccfg)
            if cert.valid:
                cert.solution = z
                return result(VALID, z, None, 0, c, z.lam, cert)

    # DC starts: the all-ones constants first, then the best remaining lambda
    ones = [r for r in cands if r[0] == 0]
    starts = (ones + [r for r in cands if r[0] != 0])[:max(1, cfg.max_starts)]
    splits = prepare_splits(bmi, cfg.dc_method)

    def accept(sol):
        return posterior(sol, screen).valid

    best = None
    for _, c, z0 in starts:
        remaining = None if cfg.time_limit is None else cfg.time_limit - (time.perf_counter() - t0)
        if remaining is not None and remaining <= 0:
            notes.append("time limit reached")
            break
        trace = bmi_dc(bmi, z0, cfg.epsilon, cfg.max_iter, cfg.dc_method, cfg.delta, tol=cfg.tol,
                       lambda_tol=cfg.lambda_tol, backend=cfg.backend, accept=accept, splits=splits,
                       time_limit=remaining, balance=cfg.balance)
        sol = trace.last
        cert = posterior(sol, ccfg)
        cert.solution, cert.trace = sol, trace
        if best is None or cert.valid or sol.lam > best[3].last.lam:
            best = (c, z0, cert, trace)
        if cert.valid:
            break
        log.info("DC run from constants %s ended %s (%s)", c, cert.verdict, trace.reason)
    if best is None:
        return result(FAILED, None, None, 0, None, None, None)
    c, z0, cert, trace = best
    if cert.valid:
        status = VALID
    elif cert.verdict == REFUTED:
        status = REFUTED
    else:
        status = INCONCLUSIVE
    if not trace.success:
        notes.append(f"DC iteration stopped: {trace.reason}")
    return result(status, trace.last, trace, trace.iterations, c, z0.lam, cert)


def _synthesize_bnb(problem: Problem, cfg: SynthConfig, t0: float) -> SynthesisResult:
    from .bnb import BnbConfig, branch_and_bound
    bmi, reg = encode_problem(problem, cfg.mode)
    consts = 1.0 if cfg.multiplier_constants is None else cfg.multiplier_constants
    bcfg = BnbConfig(eta=cfg.eta, max_regions=cfg.max_regions, time_limit=cfg.time_limit, seed=cfg.seed,
                     mode=cfg.mode, max_iter=cfg.max_iter, dc_method=cfg.dc_method, delta=cfg.delta, tol=cfg.tol,
                     lambda_tol=cfg.lambda_tol, balance=cfg.balance, backend=cfg.backend,
                     multiplier_constants=consts, check=_check_config(problem, cfg))
    res = branch_and_bound(bmi, problem.system, None, cfg.eta, bcfg)
    st = res.state
    notes = [f"branch and bound: {res.reason}; {st.regions} regions, {st.pruned} pruned, "
             f"{st.dc_runs} DC runs, {st.samples_checked} samples checked"]
    B = reg.template.instantiate(res.a) if res.found else None
    return SynthesisResult(problem.name, VALID if res.found else FAILED, B, res.certificate, res.solution, None,
                           st.dc_runs, consts, None, time.perf_counter() - t0, bmi, reg, notes)
