import json
from dataclasses import replace

import numpy as np
import pytest

from mspmdp.errors import Infeasible, PolicyInfeasible, UnknownExample
from mspmdp.examples import build_example, random_instance
from mspmdp.model import AffineCost, AffineInequality, BoxConstraint, StageSpec
from mspmdp.solver import (Policy, SolverConfig, analytic_solve, evaluate_policy,
                           policy_from_rule, solve, solve_nested, split_coordinates,
                           stage_minimize)
from mspmdp.stochastic import build_joint_tree


def _min(obj, res, box, start):
    x, f, _ = stage_minimize(obj, res, box, [np.atleast_2d(start)])
    return x[0], f[0]


def test_linear_on_box():
    box = BoxConstraint([-5, -5], [5, 5])
    x, f = _min(lambda x, sel: x.sum(axis=1), lambda x, sel: box.residual(x).max(axis=1), box, [0, 0])
    np.testing.assert_allclose(x, [-5, -5], atol=1e-6)
    assert f == pytest.approx(-10, abs=1e-6)


def test_linear_constraint_subproblem():
    # stage-2 subproblem at x1 = s2 = xi2 = 0: min e.x s.t. -10 x - 11 <= 0
    box = BoxConstraint([-5, -5], [5, 5])
    g = AffineInequality(-10 * np.eye(2), np.eye(2), np.eye(2), np.eye(2), [11, 11])
    z = np.zeros((1, 2))

    def res(x, sel):
        return np.maximum(box.residual(x).max(axis=1),
                          g.residual(x, z[sel], z[sel], np.zeros((len(sel), 1, 2))).max(axis=1))

    x, f = _min(lambda x, sel: x.sum(axis=1), res, box, [0, 0])
    np.testing.assert_allclose(x, [-1.1, -1.1], atol=1e-6)


def test_quadratic_constraint_subproblem():
    box = BoxConstraint([-5, -5], [5, 5])

    def res(x, sel):
        return np.maximum(box.residual(x).max(axis=1), (x * x - 11).max(axis=1))

    x, _ = _min(lambda x, sel: x.sum(axis=1), res, box, [0, 0])
    np.testing.assert_allclose(x, [-np.sqrt(11)] * 2, atol=1e-6)


def test_empty_interval_is_infeasible():
    box = BoxConstraint([-1], [1])
    with pytest.raises(Infeasible):
        _min(lambda x, sel: x[:, 0], lambda x, sel: np.full(len(x), 1.0), box, [0])


@pytest.mark.parametrize("example_id,expected", [("4.1", -78.0), ("4.2a", -62.12), ("4.2b", -78.0),
                                                 ("4.3", -71.36)])
def test_solve_examples(example_id, expected):
    inst, _ = build_example(example_id)
    assert solve(inst, 3, "midpoint").value == pytest.approx(expected, abs=0.05)


def test_report_value_matches_policy_evaluation():
    inst = random_instance(4)
    tree = build_joint_tree(inst, 1)
    rep = solve_nested(inst, tree)
    assert evaluate_policy(inst, tree, rep.policy) == pytest.approx(rep.value, abs=1e-6)


def test_report_json():
    inst = random_instance(1)
    rep = solve_nested(inst, build_joint_tree(inst, 1))
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["value"] == rep.value and len(d["policy"]["decisions"]) == 3


def test_deterministic():
    inst = random_instance(2)
    tree = build_joint_tree(inst, 1)
    a, b = solve_nested(inst, tree), solve_nested(inst, tree)
    assert a.value == b.value
    for x, y in zip(a.policy.decisions, b.policy.decisions):
        np.testing.assert_array_equal(x, y)


def test_constant_policy_on_means_tree():
    inst, fx = build_example("4.1")
    sub = split_coordinates(inst)
    total = 0.0
    for s in sub:
        tree = build_joint_tree(s, 1, "midpoint")
        total += evaluate_policy(s, tree, policy_from_rule(s, tree, fx.policy))
    assert total == pytest.approx(-78.0, abs=1e-9)


def test_zero_cost_instance():
    inst = random_instance(3)
    zero = AffineCost(np.zeros(2), np.zeros(2), np.zeros((1, 2)), np.zeros(2), 0.0)
    stages = [StageSpec(st.t, zero, st.constraints, st.transition, 2, 2, 2, 2) for st in inst.stages]
    z = replace(inst, stages=tuple(stages))
    tree = build_joint_tree(z, 1)
    rng = np.random.default_rng(0)
    pol = Policy([rng.uniform(-1, 1, (tree.cond[2 * t].size, 2)) for t in range(3)])
    assert evaluate_policy(z, tree, pol) == 0.0


def test_infeasible_policy():
    inst = random_instance(3)
    tree = build_joint_tree(inst, 1)
    pol = Policy([np.full((tree.cond[2 * t].size, 2), 2.0) for t in range(3)])
    with pytest.raises(PolicyInfeasible):
        evaluate_policy(inst, tree, pol)


def test_analytic_policy_quadrature():
    assert analytic_solve("4.3").value == pytest.approx(-71.36, abs=0.02)


@pytest.mark.parametrize("example_id,perturbed,expected", [("4.2a", False, -62.12), ("4.2a", True, -62.0296),
                                                           ("4.3", True, -71.28)])
def test_analytic_solve(example_id, perturbed, expected):
    assert analytic_solve(example_id, perturbed).value == pytest.approx(expected, abs=0.02)


def test_analytic_unknown():
    with pytest.raises(UnknownExample):
        analytic_solve("inventory")


def test_infeasible_stage():
    inst, _ = build_example("4.2a")
    g = AffineInequality(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), [-1, -1])
    st = inst.stages[1]
    bad = replace(inst, stages=(inst.stages[0], replace(st, constraints=(st.box, g)), inst.stages[2]))
    with pytest.raises(Infeasible):
        solve(bad, 1, "midpoint")


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tolerance=0)
