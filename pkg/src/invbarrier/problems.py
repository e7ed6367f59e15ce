"""JSON problem files and the bundled benchmark corpus."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .encode import TemplateSpec
from .polyalg import DynamicalSystem, Polynomial, PolynomialSyntaxError, parse_polynomial

FIELDS = ("name", "variables", "flow", "init", "unsafe", "domain", "archimedean_radius", "template",
          "lie_order", "strict_last", "epsilon", "multiplier_degree", "sos_degree", "bounds")


class ProblemError(ValueError):
    """Invalid problem file; ``location`` names the offending field."""

    def __init__(self, location: str, msg: str):
        super().__init__(f"{location}: {msg}")
        self.location = location


@dataclass
class Problem:
    name: str
    system: DynamicalSystem
    spec: TemplateSpec
    L_a: float = 1.0
    L_s: float = 100.0
    extras: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def with_lie_order(self, order: int) -> "Problem":
        from dataclasses import replace
        return replace(self, system=self.system.with_lie_order(order))


def _poly(text, variables, where) -> Polynomial:
    if not isinstance(text, str):
        raise ProblemError(where, "expected a polynomial string")
    try:
        return parse_polynomial(text, variables)
    except PolynomialSyntaxError as exc:
        raise ProblemError(where, str(exc)) from None


def _monomial(text, variables, where):
    p = _poly(text, variables, where)
    if len(p) != 1 or list(p.terms.values())[0] != 1.0:
        raise ProblemError(where, f"{text!r} is not a single monic monomial")
    return next(iter(p.terms))


def problem_from_dict(d: dict[str, Any]) -> Problem:
    if not isinstance(d, dict):
        raise ProblemError("<root>", "problem must be a JSON object")
    for key in ("variables", "flow", "init", "unsafe", "template"):
        if key not in d:
            raise ProblemError(key, "missing required field")
    variables = d["variables"]
    if not (isinstance(variables, list) and variables and all(isinstance(v, str) for v in variables)):
        raise ProblemError("variables", "expected a non-empty list of names")
    flow_txt = d["flow"]
    if not isinstance(flow_txt, list) or len(flow_txt) != len(variables):
        raise ProblemError("flow", f"expected {len(variables)} component strings")
    flow = tuple(_poly(t, variables, f"flow[{k}]") for k, t in enumerate(flow_txt))
    init = _poly(d["init"], variables, "init")
    unsafe = _poly(d["unsafe"], variables, "unsafe")
    domain = d.get("domain")
    if domain is not None:
        try:
            domain = tuple((float(lo), float(hi)) for lo, hi in domain)
        except (TypeError, ValueError):
            raise ProblemError("domain", "expected a list of [lo, hi] pairs") from None
        if len(domain) != len(variables):
            raise ProblemError("domain", "need one interval per variable")
    tmpl = d["template"]
    if not isinstance(tmpl, dict):
        raise ProblemError("template", "expected an object")
    fixed = _poly(tmpl["fixed"], variables, "template.fixed") if tmpl.get("fixed") else None
    monos = None
    if "monomials" in tmpl:
        monos = [_monomial(t, variables, f"template.monomials[{k}]") for k, t in enumerate(tmpl["monomials"])]
    degree = tmpl.get("degree")
    if monos is None and degree is None:
        raise ProblemError("template", "needs 'degree' or 'monomials'")
    bounds = d.get("bounds") or {}
    try:
        spec = TemplateSpec(degree=degree, monomials=monos, include_constant=bool(tmpl.get("include_constant", True)),
                            fixed=fixed, multiplier_degree=d.get("multiplier_degree"),
                            sos_degree=d.get("sos_degree"), epsilon=float(d.get("epsilon", 1e-4)))
    except ValueError as exc:
        raise ProblemError("template", str(exc)) from None
    try:
        system = DynamicalSystem(tuple(variables), flow, init, unsafe, domain, d.get("archimedean_radius"),
                                 int(d.get("lie_order", 1)), bool(d.get("strict_last", False)), d.get("name", ""))
    except ValueError as exc:
        raise ProblemError("system", str(exc)) from None
    extras = {k: v for k, v in d.items() if k not in FIELDS}
    return Problem(d.get("name", ""), system, spec, float(bounds.get("L_a", 1.0)), float(bounds.get("L_s", 100.0)),
                   extras, dict(d))


def load_problem(path) -> Problem:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProblemError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    prob = problem_from_dict(data)
    if not prob.name:
        prob.name = path.stem
    return prob


def _data_dir():
    return resources.files("invbarrier") / "data"


def benchmark_names() -> list[str]:
    return sorted(p.name[:-5] for p in (_data_dir() / "benchmarks").iterdir() if p.name.endswith(".json"))


def benchmark_path(name: str) -> Path:
    p = _data_dir() / "benchmarks" / f"{name}.json"
    if not p.is_file():
        raise KeyError(f"unknown benchmark {name!r}")
    return Path(str(p))


def load_benchmark(name: str) -> Problem:
    return load_problem(benchmark_path(name))


def reference_table() -> dict:
    return json.loads((_data_dir() / "reference_results.json").read_text())["examples"]
