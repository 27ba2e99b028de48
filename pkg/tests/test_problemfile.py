from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import EX2_PINNED, EXAMPLE_EDGES
from robustmas.problemfile import (
    ProblemError,
    ReportFile,
    bundled_problem_path,
    load_problem,
    parse_problem,
)


def _doc(name):
    return json.loads(bundled_problem_path(name).read_text())


@pytest.mark.parametrize("name", ["example1.json", "example2.json"])
def test_round_trip(name):
    problem = load_problem(name)
    again = parse_problem(problem.serialize())
    assert again == problem
    assert again.digest() == problem.digest()


def test_example1_fixture():
    problem = load_problem("example1.json")
    model, net = problem.model(), problem.network()
    assert model.mode == "continuous"
    np.testing.assert_array_equal(model.A, [[0, 1], [-2.8, 0]])
    assert model.delta == 10
    assert sorted(net.graph.edges) == sorted(EXAMPLE_EDGES)
    assert net.pins.as_mapping() == {"1": 2.0}
    assert net.lambda_min() == pytest.approx(0.237, abs=5e-4)


def test_example2_fixture():
    problem = load_problem("example2.json")
    model, net = problem.model(), problem.network()
    assert model.mode == "discrete"
    assert problem.kappa == 0.9
    np.testing.assert_allclose(net.pinned_stochastic(), EX2_PINNED, atol=1e-12)
    assert problem.simulation.steps == 200


def test_wrong_b_height_names_b():
    doc = _doc("example1.json")
    doc["B"] = [[0], [1], [2]]
    with pytest.raises(ProblemError) as info:
        parse_problem(json.dumps(doc))
    msg = " ".join(info.value.errors)
    assert "$.B" in msg and "2 rows" in msg and "3x1" in msg


def test_all_errors_reported_together():
    doc = _doc("example1.json")
    doc["delta"] = -1
    doc["colour"] = "blue"
    doc["graph"]["pins"] = {"9": 1.0}
    with pytest.raises(ProblemError) as info:
        parse_problem(json.dumps(doc))
    paths = [e.split(":")[0] for e in info.value.errors]
    assert "$.delta" in paths
    assert "$.colour" in paths
    assert "$.graph.pins.9" in paths


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(mode="hybrid"),
    lambda d: d.pop("E"),
    lambda d: d["graph"].update(extra=1),
    lambda d: d["graph"].update(edges=[[1, 1]]),
    lambda d: d.update(gamma=2.0),
    lambda d: d.update(kappa=1.5),
    lambda d: d["simulation"].update(x0="zeros"),
])
def test_invalid_documents_rejected(mutate):
    doc = _doc("example1.json")
    mutate(doc)
    with pytest.raises(ProblemError):
        parse_problem(json.dumps(doc))


def test_non_json_rejected():
    with pytest.raises(ProblemError):
        parse_problem("{not json")
    with pytest.raises(ProblemError):
        parse_problem("[1, 2]")


def test_null_pin_uses_default_weight():
    doc = _doc("example1.json")
    doc["graph"]["pins"] = {"1": None}
    assert parse_problem(json.dumps(doc)).network().pins.as_mapping() == {"1": 1.0}
    doc = _doc("example2.json")
    doc["graph"]["pins"] = {"1": None}
    net = parse_problem(json.dumps(doc)).network()
    assert net.pins.as_mapping() == {"1": pytest.approx(0.2)}


def test_digest_ignores_formatting_and_key_order():
    doc = _doc("example2.json")
    a = parse_problem(json.dumps(doc))
    b = parse_problem(json.dumps(dict(reversed(list(doc.items()))), indent=5))
    assert a.digest() == b.digest()
    doc["delta"] = 2.4
    assert parse_problem(json.dumps(doc)).digest() != a.digest()


def test_load_prefers_real_files(tmp_path):
    doc = _doc("example1.json")
    doc["delta"] = 3.0
    path = tmp_path / "example1.json"
    path.write_text(json.dumps(doc))
    assert load_problem(str(path)).delta == 3.0
    with pytest.raises(FileNotFoundError):
        load_problem(str(tmp_path / "missing.json"))


def test_report_round_trip():
    rep = ReportFile(["synth", "--problem", "x"], "abc", "0.1.0", "pass",
                     {"K": [[1.0, -2.5]], "rows": [{"eig": 0.2}]}, {"synthesis": 0.5})
    assert ReportFile.from_json(rep.to_json()) == rep
