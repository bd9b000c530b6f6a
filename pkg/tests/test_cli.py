import io
import json

import pytest

from mspmdp.cli import parse_law, run_command
from mspmdp.examples import build_example
from mspmdp.serialize import instance_to_dict, save_instance


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run_command(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def box_specs(tmp_path):
    inst, fx = build_example("4.1")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_instance(inst, a)
    save_instance(fx.perturbed, b)
    return str(a), str(b)


def test_metric_kantorovich_uniform():
    code, out, _ = run("metric", "kantorovich", "uniform(-2,0,2d)", "uniform(-1.98,0,2d)")
    assert code == 0 and out.strip().startswith("0.01333333333")


def test_metric_discretized():
    code, out, _ = run("metric", "kantorovich", "uniform(-2,0,2d)", "uniform(-1.98,0,2d)", "--discretize")
    assert code == 0 and float(out) == pytest.approx(1 / 75, abs=2e-3)


def test_metric_law_files(tmp_path):
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"law": "discrete", "atoms": [[0.0], [1.0]], "weights": [0.5, 0.5]}))
    q = tmp_path / "q.json"
    q.write_text(json.dumps({"law": "discrete", "atoms": [[0.0], [2.0]], "weights": [0.5, 0.5]}))
    for kind, want in (("kantorovich", 0.5), ("wasserstein", 0.5), ("fortet-mourier", 0.5)):
        code, out, _ = run("metric", kind, str(p), str(q))
        assert code == 0 and float(out) == pytest.approx(want)
    code, out, _ = run("metric", "fortet-mourier", str(p), str(q), "--p", "2")
    assert float(out) == pytest.approx(1.0)


def test_metric_nested(box_specs):
    code, out, _ = run("metric", "nested", *box_specs, "--atoms", "4")
    assert code == 0 and float(out) == pytest.approx(0.04, abs=5e-3)


def test_solve_and_json_determinism(box_specs):
    code, out, _ = run("solve", box_specs[0])
    assert code == 0 and "optimal value: -78" in out
    a = run("solve", box_specs[0], "--format", "json")[1]
    b = run("solve", box_specs[0], "--format", "json")[1]
    assert a == b and json.loads(a)["value"] == pytest.approx(-78.0)


def test_solve_empty_cost(tmp_path):
    d = instance_to_dict(build_example("4.1")[0])
    for st in d["stages"]:
        del st["cost"]
    p = tmp_path / "empty.json"
    p.write_text(json.dumps(d))
    code, out, _ = run("solve", str(p))
    assert code == 0 and "optimal value: 0\n" in out


def test_constants(box_specs):
    code, out, _ = run("constants", box_specs[0])
    assert code == 0 and "| L_xi,t | (6, 2) |" in out
    code, out, _ = run("constants", box_specs[0], "--format", "json")
    assert json.loads(out)["L_xi"][1:] == [6.0, 2.0]


def test_bounds_formats(box_specs):
    code, out, _ = run("bounds", *box_specs, "--format", "csv", "--branching", "1")
    assert code == 0 and out.splitlines()[0] == "bound_name,value,metric_input,dominates_gap"
    code, out, _ = run("bounds", *box_specs, "--format", "json", "--branching", "1")
    assert json.loads(out)["gap"] == pytest.approx(0.08, abs=1e-6)


def test_reproduce_linear():
    code, out, _ = run("reproduce", "4.2a")
    assert code == 0
    for token in ("-62.12", "-62.03", "0.16", "0.2025", "4.19"):
        assert token in out
    assert "FAIL" not in out


def test_compare():
    code, out, _ = run("compare")
    assert code == 0 and "| 4.1 |" in out and "| 4.2b |" in out
    code, out, _ = run("compare", "--format", "csv")
    assert out.splitlines()[0] == "example,gap,stagewise,nested,filtration"


def test_export_round_trip(tmp_path):
    p = tmp_path / "x.json"
    assert run("export", "4.2a", "-o", str(p))[0] == 0
    code, out, _ = run("solve", str(p), "--branching", "3")
    assert code == 0 and "optimal value: -62.12" in out


def test_usage_errors():
    assert run()[0] == 2
    assert run("frobnicate")[0] == 2
    assert run("solve", "/no/such/spec.json")[0] == 2
    assert run("metric", "kantorovich", "uniform(0,1)", "uniform(0,1,2d)")[0] == 2
    assert run("reproduce", "9.9")[0] == 2
    assert run("bounds", "--format", "xml", "a", "b")[0] == 2


def test_parse_law():
    u = parse_law("uniform(-1, 2, 3d)")
    assert u.dim == 3 and u.lower[0] == -1 and u.upper[2] == 2
