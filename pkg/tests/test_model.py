import numpy as np
import pytest

from mspmdp.errors import EvaluatorError, InvalidDimension, MissingRegularity, SlaterViolation
from mspmdp.examples import build_example, random_instance
from mspmdp.model import (AffineCost, AffineInequality, AffineTransition, BoxConstraint, Custom,
                          ProblemInstance, RegularityData, StageSpec, derive_regularity,
                          evaluate_cost, evaluate_transition, feasibility_residual, is_feasible,
                          register_custom)
from mspmdp.stochastic import EndogenousProcess, ExogenousProcess, Marginal, UniformBox


@pytest.fixture(scope="module")
def box_example():
    return build_example("4.1")[0]


def test_affine_cost_stage1(box_example):
    v = evaluate_cost(box_example, 1, [0, 0], [-5, -5], [[-1, -1]], [-1, -1])
    assert v == -14


def test_constant_cost():
    c = AffineCost(np.zeros(2), np.zeros(2), np.zeros((1, 2)), np.zeros(2), 3.0)
    assert c.value(np.ones(2), np.ones(2), None, np.ones(2)) == 3.0


def test_inventory_cost_formula():
    inv, _ = build_example("inventory")
    # holding 1 * s + price * x, no backorder
    assert evaluate_cost(inv, 1, [2.0], [1.0], [[2.0]], [0.0]) == pytest.approx(4.0)
    # backorder branch: 3 * 2 + price 1.5 * 0
    assert evaluate_cost(inv, 1, [-2.0], [0.0], [[1.5]], [0.0]) == pytest.approx(6.0)


def test_stage0_cost_ignores_history(box_example):
    a = evaluate_cost(box_example, 0, [0, 0], [1, 2], None, [0, 0])
    b = evaluate_cost(box_example, 0, [0, 0], [1, 2], [[9, 9]], [0, 0])
    assert a == b == 3


def test_identity_transition(box_example):
    out = evaluate_transition(box_example, 1, [0, 0], [-5, -5], [-1, -1], [-1, -1])
    np.testing.assert_array_equal(out, [-7, -7])


def test_zero_transition():
    tr = AffineTransition(*[np.zeros((2, 2))] * 4)
    np.testing.assert_array_equal(tr.apply(np.ones(2), np.ones(2), np.ones(2), np.ones(2)), 0)
    assert tr.lipschitz() == 0


def test_inventory_transition_with_loss():
    tr = AffineTransition([[1.0]], [[0.9]], [[0.0]], [[-1.0]])
    assert tr.apply(np.array([3.0]), np.array([2.0]), None, np.array([1.0]))[0] == pytest.approx(3.8)


def test_box_residual_boundary():
    box = BoxConstraint([-5, -5], [5, 5])
    np.testing.assert_array_equal(box.residual(np.array([5.0, -5.0])), [0, 0])


def test_linear_constraint_active_at_policy():
    inst, _ = build_example("4.2a")
    xp, s, xi = np.array([0.3, -1.2]), np.array([-2.0, 1.0]), np.array([-0.7, 0.4])
    x = 0.1 * (xp + s + xi - 11)
    r = feasibility_residual(inst, 1, s, x, xp, [xi])
    np.testing.assert_allclose(r[-2:], 0, atol=1e-12)


def test_quadratic_constraint_at_root():
    inst, _ = build_example("4.3")
    x = -np.sqrt(11) * np.ones(2)
    r = feasibility_residual(inst, 2, np.zeros(2), x, np.zeros(2), [[0, 0], [0, 0]])
    np.testing.assert_allclose(r[-2:], 0, atol=1e-12)
    assert is_feasible(inst, 2, np.zeros(2), x, np.zeros(2), [[0, 0], [0, 0]])


def test_dimension_errors(box_example):
    with pytest.raises(InvalidDimension):
        evaluate_cost(box_example, 1, [0, 0, 0], [0, 0], [[0, 0]], [0, 0])
    with pytest.raises(InvalidDimension):
        evaluate_transition(box_example, 0, [0, 0], [0], None, [0, 0])
    with pytest.raises(InvalidDimension):
        feasibility_residual(box_example, 1, [0, 0], [0, 0], [0, 0], [[0, 0, 0]])
    with pytest.raises(InvalidDimension):
        box_example.stage(3)


@register_custom("_broken_cost")
def _broken(**kw):
    def f(s, x, h, z):
        raise RuntimeError("boom")
    return f


def test_custom_evaluator_failure():
    c = Custom("cost", "_broken_cost", {}, {"L_C": 1.0})
    with pytest.raises(EvaluatorError):
        c.value(np.zeros(1), np.zeros(1), None, np.zeros(1))


def test_custom_unknown_name():
    with pytest.raises(EvaluatorError):
        Custom("cost", "_no_such_evaluator")


def test_box_invariants():
    with pytest.raises(ValueError):
        BoxConstraint([1.0], [0.0])
    with pytest.raises(ValueError):
        BoxConstraint([0.0], [1.0], exponent=3)
    BoxConstraint([0.0], [1.0], exponent=4)


def test_affine_inequality_row_mismatch():
    with pytest.raises(InvalidDimension):
        AffineInequality(np.eye(2), np.eye(3), np.eye(2), np.eye(2), [1, 1])


def test_stage_chain_mismatch():
    st0 = StageSpec(0, AffineCost([0], [0], [[0]], [0]), [BoxConstraint([0], [1])],
                    AffineTransition(np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1))),
                    1, 1, 1, 1)
    st1 = StageSpec(1, AffineCost([0], [0], [[0]], [0]), [BoxConstraint([0], [1])],
                    AffineTransition([[1]], [[1]], [[1]], [[1]]), 1, 1, 1, 1)
    law = UniformBox([0], [1])
    with pytest.raises(InvalidDimension):
        ProblemInstance(1, [0.0], [st0, st1], ExogenousProcess([Marginal(law)]),
                        EndogenousProcess([law, law]))


def test_regularity_box_example(box_example):
    reg = derive_regularity(box_example)
    assert max(reg.L_C) == 2 and max(reg.L_S) == 1 and max(reg.L_g) == 0 and reg.A == 10


def test_regularity_linear_example():
    reg = derive_regularity(build_example("4.2a")[0])
    assert (reg.Lc, reg.Ls, reg.Lg, reg.A, reg.rho) == (2, 1, 1, 10, 40)


def test_regularity_slater_point():
    inv, _ = build_example("inventory")
    reg = derive_regularity(inv.with_processes())
    assert reg.rho == 2.0
    # without the user value the margin comes from the declared Slater point x = 0
    from dataclasses import replace
    bare = replace(inv, regularity=RegularityData())
    assert derive_regularity(bare).rho == pytest.approx(10.0)


def test_regularity_errors():
    inv, _ = build_example("inventory")
    from dataclasses import replace
    with pytest.raises(SlaterViolation):
        derive_regularity(inv, rho=-1.0)
    cost = Custom("cost", "quadratic_cost",
                  {"a_s": [0], "a_xi": [0], "a_z": [0], "q": 1.0, "c": [0]}, {})
    with pytest.raises(MissingRegularity):
        cost.lipschitz()


def test_purity(box_example):
    args = (1, np.array([0.3, -0.2]), np.array([1.0, 2.0]), np.array([[0.5, 0.1]]), np.array([0.2, 0.3]))
    a = evaluate_cost(box_example, *args)
    b = evaluate_cost(box_example, *args)
    assert a == b


@pytest.mark.parametrize("seed", range(4))
def test_affine_moduli_hold_on_random_pairs(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(2 * seed + 1)  # two-dimensional affine families
    for st in inst.stages:
        n = 10_000
        u = [rng.uniform(-2, 2, (n, 2)) for _ in range(4)]
        v = [rng.uniform(-2, 2, (n, 2)) for _ in range(4)]
        blocks = sum(np.abs(a - b).max(axis=1) for a, b in zip(u, v))
        # cost: state, decision, last exogenous row, endogenous draw
        cu = st.cost.value(u[0], u[1], u[2][:, None, :], u[3])
        cv = st.cost.value(v[0], v[1], v[2][:, None, :], v[3])
        assert np.all(np.abs(cu - cv) <= st.cost.lipschitz() * blocks + 1e-9)
        tu = st.transition.apply(*u)
        tv = st.transition.apply(*v)
        assert np.all(np.abs(tu - tv).max(axis=1) <= st.transition.lipschitz() * blocks + 1e-9)


def test_monotone_probe():
    rng = np.random.default_rng(5)
    inst = random_instance(3, monotone=True)
    for st in inst.stages:
        s = rng.uniform(-2, 2, (1000, 2))
        x, z = rng.uniform(-1, 1, (1000, 2)), rng.uniform(-1, 1, (1000, 2))
        h = rng.uniform(-1, 1, (1000, 1, 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = rng.uniform(0.01, 1.0)
            assert np.all(st.cost.value(s + e, x, h, z) >= st.cost.value(s, x, h, z) - 1e-12)
            assert np.all(st.transition.apply(s + e, x, h[:, -1], z) >= st.transition.apply(s, x, h[:, -1], z) - 1e-12)
