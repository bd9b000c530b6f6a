import csv
import io
import json

import numpy as np
import pytest

from mspmdp.bounds import (BoundConfig, BoundReport, BoundRow, applicable_bounds, bound_report,
                           comparison_bounds, endo_bounds, exo_global_bounds,
                           exo_stagewise_bounds, law_distance, paired_path_moment,
                           stagewise_conditional_metric)
from mspmdp.errors import InvalidExponent, MissingGrowth, NotApplicable
from mspmdp.examples import build_example, random_instance, random_perturbation
from mspmdp.lipschitz import endogenous_coeffs, exogenous_global_coeffs, stagewise_coeffs
from mspmdp.model import RegularityData
from mspmdp.stochastic import DiscreteDistribution, ExogenousProcess, Marginal, UniformBox


def test_endo_zero_and_substitution():
    c = {"L_hat": [0.0, 4.5], "L_C": 2.0}
    assert endo_bounds(c, [0.0, 0.0]) == 0.0
    assert endo_bounds(c, [0.1, 0.2]) == pytest.approx(0.85)


def test_endo_solution_needs_growth():
    r = RegularityData(L_C=(2.0,), L_S=(1.0,), L_g=(0.0, 1.0), rho=40.0, A=10.0)
    en = endogenous_coeffs(r, 1)
    with pytest.raises(MissingGrowth):
        endo_bounds(en, [0.1, 0.1], "solution")
    v = endo_bounds(en, [0.1, 0.2], "solution", beta=2.0)
    X = en["L_Xtj"]
    assert v == pytest.approx((en["H"][0] / 2 + X[1][0]) * 0.1 + en["H"][1] / 2 * 0.2)


def test_global_value_and_solution():
    c = {"L_theta": 2.0, "L_X": 0.0, "L_sigma": 1.0}
    assert exo_global_bounds(c, 0.0) == 0
    assert exo_global_bounds(c, 0.1, "solution", beta=1, nu=1) == pytest.approx(0.3)
    with pytest.raises(MissingGrowth):
        exo_global_bounds(c, 0.1, "solution")
    fm = exo_global_bounds(c, (0.1, 0.2), "solution_fm", beta=1, nu=2)
    assert fm == pytest.approx(np.sqrt(3 * 0.2))


def test_stagewise_reference_inputs():
    assert exo_stagewise_bounds({"L_xi": [0, 35 / 4, 13 / 4]}, [1 / 75, 1 / 75]) == pytest.approx(0.16, abs=1e-12)
    assert exo_stagewise_bounds({"L_xi": [0, 42, 26]}, [1 / 75, 1 / 150]) == pytest.approx(11 / 15, abs=1e-12)
    assert exo_stagewise_bounds({"L_xi": [0, 6, 2]}, [1 / 75, 1 / 75]) == pytest.approx(8 / 75, abs=1e-12)


def test_stagewise_solution_mode():
    r = RegularityData(L_C=(2.0,), L_S=(1.0,), L_g=(0.0, 1.0, 1.0), rho=40.0, A=10.0)
    sw = stagewise_coeffs(r, (0.0, 1.0), 2)
    ex = exogenous_global_coeffs(r, 2)
    sw.update(L_X_max=ex["L_X"], L_sigma=ex["L_sigma"])
    with pytest.raises(MissingGrowth):
        exo_stagewise_bounds(sw, [0.1, 0.1], "solution")
    v = exo_stagewise_bounds(sw, [0.1, 0.1], "solution", beta=1.0)
    assert v > exo_stagewise_bounds(sw, [0.1, 0.1], "value")


def test_comparison():
    assert comparison_bounds("nested", {"L": 4.0, "beta": 1.0, "distance": 0.04}) == pytest.approx(0.16)
    assert comparison_bounds("filtration", {"L": 18, "wasserstein": 0.030, "filtration": 0.203}) == pytest.approx(4.194)
    assert comparison_bounds("nested", {"L": 4.0, "beta": 0.5, "distance": 0.0}) == 0
    for bad in (0.0, -1.0, float("inf")):
        with pytest.raises(InvalidExponent):
            comparison_bounds("nested", {"L": 1.0, "beta": bad, "distance": 0.1})


def test_value_bounds_linear_in_metric():
    c = {"L_xi": [0, 3.0, 5.0]}
    h = 1e-3
    a = exo_stagewise_bounds(c, [0.1, 0.2])
    b = exo_stagewise_bounds(c, [0.1 + h, 0.2])
    assert (b - a) / h == pytest.approx(3.0)
    e = {"L_hat": [0, 4.0, 3.0], "L_C": 2.0}
    a = endo_bounds(e, [0.1, 0.2, 0.3])
    b = endo_bounds(e, [0.1, 0.2, 0.3 + h])
    assert (b - a) / h == pytest.approx(2.0)


def test_conditional_metric_examples():
    for ex, want in (("4.1", (1 / 75, 1 / 75)), ("4.3", (1 / 75, 1 / 150))):
        inst, fx = build_example(ex)
        np.testing.assert_allclose(stagewise_conditional_metric(inst.exogenous, fx.perturbed.exogenous), want,
                                   atol=1e-12)
    inst, _ = build_example("4.1")
    assert stagewise_conditional_metric(inst.exogenous, inst.exogenous) == [0.0, 0.0]


def test_law_distance_routes():
    assert law_distance(UniformBox([0], [1]), UniformBox([0], [1.2])) == pytest.approx(0.1)
    P = DiscreteDistribution([[0.0], [1.0]], [0.5, 0.5])
    Q = DiscreteDistribution([[0.0], [2.0]], [0.5, 0.5])
    assert law_distance(P, Q) == pytest.approx(0.5)


def test_paired_moment():
    P = ExogenousProcess([Marginal(DiscreteDistribution([[0.0], [1.0]], [0.5, 0.5]))])
    Q = ExogenousProcess([Marginal(DiscreteDistribution([[0.5], [1.0]], [0.5, 0.5]))])
    assert paired_path_moment(P, Q) == pytest.approx(0.25)
    R = ExogenousProcess([Marginal(DiscreteDistribution([[0.5], [1.0]], [0.4, 0.6]))])
    with pytest.raises(NotApplicable):
        paired_path_moment(P, R)


def test_identical_report_is_zero():
    inst, _ = build_example("4.1")
    rep = bound_report(inst, inst, BoundConfig(branching=1))
    assert rep.gap == 0 and rep.rows == []


def test_report_outputs():
    inst, fx = build_example("4.2a")
    rep = bound_report(inst, fx.perturbed, BoundConfig(branching=3, comparison={
        "filtration": {"L": 18.0, "wasserstein": 0.030, "filtration": 0.203}}))
    assert rep.gap == pytest.approx(0.0904, abs=0.05)
    names = {r.name: r for r in rep.rows}
    assert names["stagewise value"].value == pytest.approx(0.16, abs=1e-9)
    assert names["stagewise value"].value < names["filtration comparison"].value
    assert all(r.dominates_gap for r in rep.rows)
    assert rep.solution_note == "set-valued, estimate skipped"
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["bound_name", "value", "metric_input", "dominates_gap"]
    assert len(rows) == len(rep.rows) + 1
    assert json.loads(rep.to_json())["gap"] == pytest.approx(rep.gap, rel=1e-9)
    assert "| stagewise value |" in rep.to_markdown()
    assert rep.to_json() == rep.to_json()


def test_verdicts_recomputed():
    rep = BoundReport(0.0, 1.0, 1.0, None, "", {}, [BoundRow("a", 0.5, "", True), BoundRow("b", 2.0, "", False)])
    rep.recompute_verdicts()
    assert [r.dominates_gap for r in rep.rows] == [False, True]


def test_bounds_nonnegative_on_random_pairs():
    for i in range(6):
        inst = random_instance(50 + i)
        pert = random_perturbation(inst, i, ("endogenous", "exogenous")[i % 2])
        rows, inputs = applicable_bounds(inst, pert)
        assert rows
        assert all(r.value >= 0 for r in rows)
        for v in inputs.values():
            assert np.all(np.asarray(v) >= 0)
