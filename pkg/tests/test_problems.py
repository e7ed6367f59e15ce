import json

import pytest

from invbarrier.polyalg import parse_polynomial
from invbarrier.problems import (ProblemError, benchmark_names, load_benchmark, load_problem, problem_from_dict,
                                 reference_table)

BASE = {"variables": ["x1", "x2"], "flow": ["x2", "-x1"], "init": "x1^2 + x2^2 - 1", "unsafe": "x1 - 3",
        "template": {"degree": 2}}


def test_all_benchmarks_load():
    names = benchmark_names()
    assert len(names) == 24
    for name in names:
        prob = load_benchmark(name)
        assert prob.name == name
        assert prob.system.dim == len(prob.raw["variables"])


def test_reference_table_covers_every_benchmark():
    table = reference_table()
    assert set(table) == set(benchmark_names())
    for row in table.values():
        assert row["validity"] in ("valid", "invalid", "inconclusive")


def test_lorenz_third_component():
    prob = load_benchmark("lorenz")
    v = prob.system.variables
    assert prob.system.flow[2].almost_equal(parse_polynomial("x1*x2 - 8/3*x3", v))


def test_quadcopter_dimension():
    assert load_benchmark("quadcopter").system.dim == 12


def test_lie_order_override():
    prob = load_benchmark("lie-high-order")
    assert prob.system.lie_order == 2
    assert prob.with_lie_order(1).system.lie_order == 1
    assert prob.system.lie_order == 2


def test_unknown_benchmark():
    with pytest.raises(KeyError):
        load_benchmark("no-such-example")


def test_minimal_problem_defaults():
    prob = problem_from_dict(dict(BASE))
    assert prob.L_a == 1.0 and prob.L_s == 100.0
    assert prob.system.lie_order == 1 and prob.system.domain is None
    assert prob.spec.degree == 2 and prob.spec.epsilon == 1e-4


def test_extra_fields_are_kept():
    prob = problem_from_dict(dict(BASE, note="hello"))
    assert prob.extras == {"note": "hello"}


@pytest.mark.parametrize("patch,where", [
    ({"flow": ["x2", "-x3"]}, "flow[1]"),
    ({"flow": ["x2"]}, "flow"),
    ({"variables": []}, "variables"),
    ({"init": 3}, "init"),
    ({"domain": [[0, 1]]}, "domain"),
    ({"template": {}}, "template"),
    ({"template": {"monomials": ["2*x1"]}}, "template.monomials[0]"),
    ({"epsilon": 0}, "template"),
    ({"lie_order": 0}, "system"),
])
def test_invalid_fields_are_located(patch, where):
    with pytest.raises(ProblemError) as err:
        problem_from_dict(dict(BASE, **patch))
    assert err.value.location == where


def test_unknown_variable_is_named():
    with pytest.raises(ProblemError, match="x3"):
        problem_from_dict(dict(BASE, flow=["x2", "-x3"]))


def test_missing_field():
    d = dict(BASE)
    del d["unsafe"]
    with pytest.raises(ProblemError, match="unsafe"):
        problem_from_dict(d)


def test_load_problem_from_file(tmp_path):
    path = tmp_path / "rot.json"
    path.write_text(json.dumps(BASE))
    prob = load_problem(path)
    assert prob.name == "rot"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ProblemError, match="bad.json:1"):
        load_problem(bad)
