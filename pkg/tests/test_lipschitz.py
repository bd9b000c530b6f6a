import numpy as np
import pytest

from mspmdp.errors import InvalidModulus, MissingRegularity, SlaterViolation
from mspmdp.lipschitz import (constant_table, endogenous_coeffs, exogenous_global_coeffs,
                              feasible_set_closed_form, feasible_set_constants,
                              growth_from_strong_convexity, stagewise_coeffs,
                              value_function_constants, _feasible_recursion)
from mspmdp.model import RegularityData


def reg(LC=2.0, LS=1.0, Lg=1.0, rho=40.0, A=10.0, LQ=None, T=2):
    return RegularityData(L_C=(LC,), L_S=(LS,), L_g=(0.0,) + (Lg,) * T, rho=rho, A=A, L_Q=LQ)


def test_box_only_value_moduli():
    vf = value_function_constants(reg(Lg=0.0), 2)
    assert vf["L_X"] == [0, 0, 0]
    assert vf["L"][2] == 2.0


def test_linear_example_feasible_moduli():
    vf = value_function_constants(reg(), 2)
    assert vf["L_X"][1:] == [0.25, 0.25]
    fs = feasible_set_constants(reg(), 2)
    assert fs["L_X"][1] == 0.25 and fs["l_s"][2] == 1.25 and fs["L_X"][2] == 0.625


def test_one_stage_value_modulus():
    r = RegularityData(L_C=(2.0,), L_S=(1.0,), L_g=(0.0, 1.0), rho=40.0, A=10.0)
    assert value_function_constants(r, 1)["L"][1] == pytest.approx(2.5)


def test_quadratic_example_feasible_moduli():
    fs = feasible_set_constants(reg(rho=5.0), 2)
    assert fs["L_X"][1:] == [2.0, 12.0]
    assert fs["l_s"][2] == 3.0


def test_zero_constraint_moduli():
    fs = feasible_set_constants(reg(Lg=0.0, LS=0.5, T=4), 4)
    assert fs["L_X"] == [0.0] * 5
    np.testing.assert_allclose(fs["l_s"][1:], [0, 0.5, 0.75, 0.875, 0.9375])


def test_closed_form_matches_recursion_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a, LS = rng.uniform(0, 2), rng.uniform(0, 2)
        T = int(rng.integers(1, 6))
        LX, _ = _feasible_recursion(a, LS, T)
        for t in range(1, T + 1):
            cf, _ = feasible_set_closed_form(a, LS, t)
            assert cf == pytest.approx(LX[t], rel=1e-9, abs=1e-9)


def test_closed_form_degenerate_branch():
    # 1 - a - L_S = 0
    for a in (0.2, 0.5, 0.7):
        LX, _ = _feasible_recursion(a, 1 - a, 5)
        for t in range(1, 6):
            cf, roots = feasible_set_closed_form(a, 1 - a, t)
            assert roots is None
            assert cf == pytest.approx(LX[t], rel=1e-9)


def test_endogenous_coeffs():
    r = RegularityData(L_C=(2.0,), L_S=(1.0,), L_g=(0.0, 1.0), rho=40.0, A=10.0)
    en = endogenous_coeffs(r, 1)
    assert en["L_hat"][1] == pytest.approx(4.5)
    assert en["H"][1] == 2.0
    z = endogenous_coeffs(reg(Lg=0.0, T=3), 3)
    assert np.all(np.array(z["L_Xtj"]) == 0)
    L = z["L"]
    for t in range(1, 4):
        assert z["L_hat"][t] == pytest.approx(2 * 1 + 2 + L[t + 1] * 1)


def test_h_last_stage_is_cost_modulus():
    rng = np.random.default_rng(1)
    for _ in range(20):
        r = reg(LC=rng.uniform(0.1, 5), LS=rng.uniform(0, 2), Lg=rng.uniform(0, 1), rho=rng.uniform(1, 50))
        T = int(rng.integers(1, 5))
        r = RegularityData(L_C=r.L_C, L_S=r.L_S, L_g=(0.0,) + (r.L_g[1],) * T, rho=r.rho, A=10.0)
        assert endogenous_coeffs(r, T)["H"][T] == r.L_C[0]


def test_global_coeffs_unit_state_modulus():
    r = reg(rho=5.0)
    ex = exogenous_global_coeffs(r, 2)
    LX, LC, T = 12.0, 2.0, 2
    assert ex["L_X"] == LX
    assert ex["L_theta"] == pytest.approx(T * LC * (LX + 1) + T * (T - 1) * LC * (LX + 1) / 2)
    assert ex["L_sigma2"] == 12.0


def test_global_coeffs_general_state_modulus():
    r = reg(LS=0.5, rho=5.0, T=3)
    ex = exogenous_global_coeffs(r, 3)
    LX = feasible_set_constants(r, 3)["L_X"]
    m = max(LX)
    # closed form of the geometric double sum for L_S != 1
    LS, T = 0.5, 3
    geo = sum((LS - LS ** t) / (1 - LS) for t in range(1, T + 1))
    assert ex["L_theta"] == pytest.approx(T * 2 * (m + 1) + 2 * (m + 1) * geo)


def test_stagewise_linear_example():
    sw = stagewise_coeffs(reg(), (0.0, 1.0), 2)
    assert sw["L_v"][2] == 5.0
    assert sw["L_xi"][1:] == [35 / 4, 13 / 4]


def test_stagewise_quadratic_example():
    sw = stagewise_coeffs(reg(rho=5.0), (0.0, 1.0), 2)
    assert sw["L_v"][1:3] == [84.0, 12.0]
    assert sw["L_xi"][1:] == [42.0, 26.0]


def test_stagewise_zero():
    r = RegularityData(L_C=(0.0,), L_S=(0.0,), L_g=(0.0,), rho=1.0, A=1.0)
    sw = stagewise_coeffs(r, (0.0, 0.0), 2)
    assert sw["L_v"] == [0.0] * 4 and sw["L_xi"] == [0.0] * 3


def test_stagewise_missing_lq():
    with pytest.raises(MissingRegularity):
        stagewise_coeffs(reg(), None, 2)


def test_boundary_identity():
    rng = np.random.default_rng(4)
    for _ in range(50):
        r = reg(LC=rng.uniform(0, 3), LS=rng.uniform(0, 2), Lg=rng.uniform(0, 2), rho=rng.uniform(1, 30))
        sw = stagewise_coeffs(r, (0.0, rng.uniform(0, 2)), 2)
        assert sw["L_xi"][2] == pytest.approx(r.L_C[0] * (sw["L_X"][2] + 1))


def test_monotone_in_moduli():
    rng = np.random.default_rng(6)
    keys = ("LC", "LS", "Lg", "LQ")
    for _ in range(100):
        base = dict(LC=rng.uniform(0.1, 3), LS=rng.uniform(0.1, 2), Lg=rng.uniform(0, 2), LQ=rng.uniform(0, 2))
        rho = rng.uniform(1, 30)

        def table(p):
            r = reg(p["LC"], p["LS"], p["Lg"], rho, T=3)
            vf = value_function_constants(r, 3)
            en = endogenous_coeffs(r, 3)
            ex = exogenous_global_coeffs(r, 3)
            sw = stagewise_coeffs(r, (0.0, p["LQ"], p["LQ"]), 3)
            return np.concatenate([vf["L"], en["L_hat"], en["H"], np.ravel(en["L_Xtj"]),
                                   [ex["L_theta"], ex["L_sigma"], ex["L_X"]], sw["L_v"], sw["L_xi"]])

        t0 = table(base)
        for k in keys:
            p = dict(base)
            p[k] *= 1.05
            assert np.all(table(p) >= t0 - 1e-9 * np.abs(t0))


def test_rho_errors():
    r = RegularityData(L_C=(1.0,), L_S=(1.0,), L_g=(1.0,), A=1.0)
    with pytest.raises(SlaterViolation):
        value_function_constants(r, 2)
    with pytest.raises(SlaterViolation):
        RegularityData(rho=0.0)


def test_growth_from_strong_convexity():
    assert growth_from_strong_convexity(1) == (1.0, 2.0)
    assert growth_from_strong_convexity(0.5) == (0.5, 2.0)
    with pytest.raises(InvalidModulus):
        growth_from_strong_convexity(0)


def test_growth_on_strongly_convex_instance():
    """Sampled policies on a tiny tree: J(x) - J(x*) >= mu/2 ... in the growth form
    beta * E|x - x*|^2 with beta = mu/2 for the unit-weight quadratic q/2 |x - c|^2."""
    from mspmdp.examples import random_instance
    from mspmdp.solver import Policy, evaluate_policy, solve_nested
    from mspmdp.stochastic import build_joint_tree

    inst = random_instance(0)  # scalar quadratic stage costs
    tree = build_joint_tree(inst, 1)
    rep = solve_nested(inst, tree, __import__("mspmdp.solver", fromlist=["SolverConfig"]).SolverConfig(tolerance=1e-9))
    q_min = min(st.cost.params["q"] for st in inst.stages)
    beta, nu = growth_from_strong_convexity(q_min)
    rng = np.random.default_rng(0)
    for _ in range(200):
        dec = [np.clip(d + rng.normal(0, 0.3, d.shape), -1, 1) for d in rep.policy.decisions]
        gap = evaluate_policy(inst, tree, Policy(dec)) - rep.value
        # first-stage component of the distance, weighted by node probabilities
        d2 = sum(float(tree.prob[2 * t] @ ((dec[t] - rep.policy.decisions[t]) ** 2).sum(1))
                 for t in range(3))
        assert gap >= 0.5 * beta * d2 - 1e-6


def test_constant_table_json():
    import json

    tab = constant_table(reg(LQ=(0.0, 1.0)), 2)
    d = json.loads(json.dumps(tab.to_dict()))
    assert d["L_xi"] == [0.0, 35 / 4, 13 / 4]
