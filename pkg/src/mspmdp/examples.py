"""Built-in instances: three two-stage-horizon linear/nonlinear test problems
(ids "4.1", "4.2a", "4.2b", "4.3") and an inventory model ("inventory"),
each with perturbed counterparts and reference values."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .errors import UnknownExample
from .model import (AffineCost, AffineInequality, AffineTransition, BoxConstraint, Custom,
                    ProblemInstance, QuadraticInequality, RegularityData, StageSpec,
                    register_custom)
from .stochastic import (AffineShiftKernel, DiscreteDistribution, EndogenousProcess,
                         ExogenousProcess, Marginal, UniformBox)

EXAMPLE_IDS = ("4.1", "4.2a", "4.2b", "4.3", "inventory")
ANALYTIC_IDS = ("4.1", "4.2a", "4.2b", "4.3")


# ------------------------------------------------------- custom families


@register_custom("inventory_cost")
def _inventory_cost(holding=1.0, backorder=3.0, price0=2.0):
    """holding [s]^+ + price x + backorder [-s]^+; the price is xi_t (fixed at stage 0)."""

    def f(s, x, xi_hist, zeta):
        price = price0 if xi_hist is None or xi_hist.shape[-2] == 0 else xi_hist[..., -1, 0]
        s0 = s[..., 0]
        return holding * np.maximum(s0, 0) + price * x[..., 0] + backorder * np.maximum(-s0, 0)

    return f


@register_custom("inventory_budget")
def _inventory_budget(budget=20.0):
    """price x - budget <= 0."""

    def g(x, x_prev, s, xi_hist):
        return xi_hist[..., -1, :1] * x[..., :1] - budget

    return g


@register_custom("quadratic_cost")
def _quadratic_cost(a_s, a_xi, a_z, q, c, b=0.0):
    """a_s.s + a_xi.xi_t + a_z.zeta + q/2 |x - c|_2^2 + b (convex in x)."""
    a_s, a_xi, a_z, c = (np.asarray(v, dtype=float) for v in (a_s, a_xi, a_z, c))

    def f(s, x, xi_hist, zeta):
        out = s @ a_s + zeta @ a_z + 0.5 * q * np.sum((x - c) ** 2, axis=-1) + b
        if xi_hist is not None and xi_hist.shape[-2] > 0:
            out = out + xi_hist[..., -1, :] @ a_xi
        return out

    return f


# ------------------------------------------------------------ fixtures


@dataclass(frozen=True)
class Ref:
    value: float
    source: str
    tol: float = 0.0


@dataclass
class ExampleFixture:
    example_id: str
    instance: ProblemInstance
    perturbed: ProblemInstance
    policy: Optional[Callable] = None
    expected: dict = field(default_factory=dict)


def _e(n=2):
    return np.ones(n)


def _uniform(lo, hi, n=2):
    return UniformBox(np.full(n, lo), np.full(n, hi))


def _processes(xi1, nu):
    exo = ExogenousProcess([Marginal(_uniform(*xi1)), AffineShiftKernel((1.0,), _uniform(*nu))])
    endo = EndogenousProcess([_uniform(-2, 0)] * 3)
    return exo, endo


def _linear_instance(name, constraint, perturbed, alpha=1, rho=None, pert_nu=(-0.98, 1.0)):
    e, I = _e(), np.eye(2)
    box = BoxConstraint(np.full(2, -5.0), np.full(2, 5.0), alpha)
    stages = []
    for t in range(3):
        cost = AffineCost(e, e, e.reshape(1, 2) if t else np.zeros((1, 2)), e, 0.0)
        cons = [box] + ([constraint] if (constraint is not None and t > 0) else [])
        stages.append(StageSpec(t, cost, cons, AffineTransition(I, I, I, I), 2, 2, 2, 2))
    exo, endo = _processes((-1.98, 0.0) if perturbed else (-2.0, 0.0),
                           pert_nu if perturbed else (-1.0, 1.0))
    reg = RegularityData(rho=rho)
    return ProblemInstance(2, np.zeros(2), stages, exo, endo, reg, separable=True,
                           name=name + ("~" if perturbed else ""))


def _policy_const(t, s, x_prev, xi):
    return np.full_like(s, -5.0)


def _policy_linear(kappa):
    def pol(t, s, x_prev, xi):
        if t == 0:
            return np.full_like(s, -5.0)
        return (x_prev + s + xi - kappa) / 10.0
    return pol


def _policy_sqrt(kappa):
    def pol(t, s, x_prev, xi):
        if t == 0:
            return np.full_like(s, -5.0)
        return -np.sqrt(np.maximum(kappa + x_prev - s - xi, 0.0))
    return pol


def example_43_closed_form(prec: int = 40) -> float:
    """Reference optimal value of the square-root example, in extended precision."""
    import mpmath as mp

    mp.mp.dps = prec
    f = mp.mpf
    v = 2 * (-24 - f(2) / 15 * (f(15) ** f(2.5) - 2 * f(13) ** f(2.5) + f(11) ** f(2.5))
             - f(1) / 1890 * (2 * f(19) ** f(4.5) + 2 * f(21) ** f(4.5) - 3 * f(17) ** f(4.5)
                              - 3 * f(23) ** f(4.5) + f(15) ** f(4.5) + f(25) ** f(4.5)))
    return float(v)


def alpha_bound(alpha: float) -> float:
    """Stagewise value bound of the box example when its box is written as |x|^alpha <= 5^alpha."""
    return 8 / 75 + 28 / (15 * 5 ** alpha) + 32 / (3 * 5 ** (2 * alpha))


def alpha_regularity(alpha: float) -> RegularityData:
    """Moduli behind alpha_bound: the reformulated box counted as a parametric
    constraint with unit modulus and Slater margin 5^alpha."""
    return RegularityData(L_C=(2.0,), L_S=(1.0,), L_g=(0.0, 1.0, 1.0), rho=5.0 ** alpha,
                          A=10.0, L_Q=(0.0, 1.0))


def _inventory(perturbed: bool, demand_shift: float = 0.5, T: int = 3):
    price_law = UniformBox([1.0], [3.0])
    lo, hi = (2.0 + demand_shift, 6.0 + demand_shift) if perturbed else (2.0, 6.0)
    endo = EndogenousProcess([UniformBox([lo], [hi])] * (T + 1))
    exo = ExogenousProcess([Marginal(price_law)] * T)
    cost = Custom("cost", "inventory_cost", {"holding": 1.0, "backorder": 3.0, "price0": 2.0},
                  {"L_C": 10.0})
    budget = Custom("constraint", "inventory_budget", {"budget": 20.0}, {"L_g": 10.0})
    capacity = AffineInequality([[1.0]], [[0.0]], [[1.0]], [[0.0]], [10.0])
    trans = AffineTransition([[1.0]], [[0.95]], [[0.0]], [[-1.0]])
    stages = [StageSpec(0, cost, [BoxConstraint([0.0], [6.0])], trans, 1, 1, 1, 1)]
    for t in range(1, T + 1):
        stages.append(StageSpec(t, cost, [BoxConstraint([0.0], [10.0]), budget, capacity],
                                trans, 1, 1, 1, 1, slater_point=[0.0]))
    reg = RegularityData(rho=2.0)
    return ProblemInstance(T, [2.0], stages, exo, endo, reg, separable=False,
                           name="inventory" + ("~" if perturbed else ""))


def build_example(example_id: str, perturbed: bool = False, alpha: int = 1,
                  kappa: float = 11.0, horizon: int = 3):
    """(instance, fixture) for a built-in id; perturbed selects which instance is returned.

    alpha is the box exponent of "4.1", kappa the constraint level of "4.2a",
    "4.2b" and "4.3", horizon the number of stages after the first for "inventory".
    """
    if example_id not in EXAMPLE_IDS:
        raise UnknownExample(example_id)
    I = np.eye(2)
    x = {}
    if example_id == "4.1":
        base = _linear_instance("4.1", None, False, alpha)
        pert = _linear_instance("4.1", None, True, alpha)
        pol = _policy_const
        x = {"value": Ref(-78.0, "reference optimal value, base", 0.05),
             "value_perturbed": Ref(-77.92, "reference optimal value, perturbed", 0.05),
             "gap": Ref(0.08, "reference value gap"),
             "L_C": Ref(2, "reference modulus"), "L_S": Ref(1, "reference modulus"),
             "L_g": Ref(0, "reference modulus"), "A": Ref(10, "reference diameter"),
             "dK": Ref((1 / 75, 1 / 75), "reference stagewise Kantorovich inputs"),
             "stagewise_bound_limit": Ref(8 / 75, "stagewise bound as alpha grows"),
             "L1_nested": Ref(4.0, "reference Holder constant for the nested comparison"),
             "nested_distance": Ref(0.04, "reference nested distance", 5e-3),
             "nested_bound": Ref(0.16, "reference nested comparison bound", 1e-6)}
    elif example_id in ("4.2a", "4.2b"):
        if example_id == "4.2a":
            g = AffineInequality(-10 * I, I, I, I, np.full(2, kappa))
            rho, pol = 40.0, _policy_linear(kappa)
        else:
            g = AffineInequality(I, -I, I, I, np.full(2, kappa))
            rho, pol = 10.0, _policy_const
        base = _linear_instance(example_id, g, False, 1, rho)
        pert = _linear_instance(example_id, g, True, 1, rho)
        if example_id == "4.2a":
            x = {"value": Ref(-62.12, "reference optimal value, base", 0.05),
                 "value_perturbed": Ref(-62.0296, "reference optimal value, perturbed", 0.05),
                 "L_X": Ref((0.25, 0.625), "reference feasible-set moduli"),
                 "L_xi": Ref((35 / 4, 13 / 4), "reference stagewise coefficients"),
                 "stagewise_bound": Ref(0.16, "reference stagewise bound", 1e-9),
                 "filtration": Ref(0.203, "reference filtration estimate", 0.02),
                 "filtration_stage1": Ref(1 / 15, "reference stage-1 filtration term", 5e-3),
                 "filtration_stage2": Ref(0.136, "reference stage-2 filtration term", 0.02),
                 "W3": Ref(0.030, "reference 3-Wasserstein input"),
                 "L_hrs": Ref(18.0, "reference constant of the filtration comparison"),
                 "hrs_bound": Ref(4.19, "reference filtration comparison bound", 0.25)}
        else:
            x = {"value": Ref(-78.0, "reference optimal value, base", 0.05),
                 "value_perturbed": Ref(-77.92, "reference optimal value, perturbed", 0.05),
                 "L_X": Ref((1.0, 4.0), "reference feasible-set moduli"),
                 "listed_L_v2": Ref(4.0, "listed value modulus (recursion gives 8)"),
                 "listed_L_xi": Ref((12.0, 10.0), "listed stagewise coefficients"),
                 "stagewise_bound": Ref(22 / 75, "reference stagewise bound", 1e-9),
                 "W3": Ref(0.030, "reference 3-Wasserstein input"),
                 "hrs_bound": Ref(0.540, "reference filtration comparison bound", 0.02)}
    elif example_id == "4.3":
        g = QuadraticInequality(kappa)
        base = _linear_instance("4.3", g, False, 1, 5.0)
        pert = _linear_instance("4.3", g, True, 1, 5.0, pert_nu=(-0.99, 0.99))
        pol = _policy_sqrt(kappa)
        x = {"value": Ref(-71.36, "reference optimal value, base", 0.02),
             "value_perturbed": Ref(-71.28, "reference optimal value, perturbed", 0.02),
             "closed_form": Ref(example_43_closed_form(), "closed-form optimal value"),
             "L_X": Ref((2.0, 12.0), "reference feasible-set moduli"),
             "L_v": Ref((84.0, 12.0), "reference value moduli"),
             "L_xi": Ref((42.0, 26.0), "reference stagewise coefficients"),
             "dK": Ref((1 / 75, 1 / 150), "reference stagewise Kantorovich inputs"),
             "stagewise_bound": Ref(11 / 15, "reference stagewise bound", 1e-9)}
    else:
        base, pert, pol = _inventory(False, T=horizon), _inventory(True, T=horizon), None
    fx = ExampleFixture(example_id, base, pert, pol, x)
    return (pert if perturbed else base), fx


def listed_bound_42b() -> float:
    """Stagewise bound from the listed coefficients (12, 10) and inputs 1/75."""
    return float(Fraction(12, 75) + Fraction(10, 75))


# ------------------------------------------------------- random instances


def _two_atom_law(rng, d):
    atoms = rng.uniform(-1.0, 1.0, (2, d))
    p = rng.uniform(0.3, 0.7)
    return DiscreteDistribution(atoms, [p, 1.0 - p])


def random_instance(seed: int, n_dec: Optional[int] = None, monotone: bool = False) -> ProblemInstance:
    """Small convex T=2 instance on [-1, 1]^d boxes with two-atom laws.

    d = 2 uses affine costs; d = 1 a Custom quadratic cost.  With monotone
    the cost and the state map are nondecreasing in the state.
    """
    rng = np.random.default_rng(seed)
    d = int(n_dec or 1 + seed % 2)
    lo_s = 0.0 if monotone else -1.0
    exo = [Marginal(_two_atom_law(rng, d))]
    if rng.uniform() < 0.5:
        exo.append(AffineShiftKernel((float(rng.uniform(-0.5, 0.5)),), _two_atom_law(rng, d)))
    else:
        exo.append(Marginal(_two_atom_law(rng, d)))
    endo = EndogenousProcess([_two_atom_law(rng, d) for _ in range(3)])
    box = BoxConstraint(-np.ones(d), np.ones(d))
    stages = []
    for t in range(3):
        trans = AffineTransition(rng.uniform(lo_s, 1.0, (d, d)) * 0.8, rng.uniform(-1, 1, (d, d)),
                                 rng.uniform(-1, 1, (d, d)), rng.uniform(-1, 1, (d, d)))
        a_s = rng.uniform(lo_s, 1.0, d)
        a_xi = rng.uniform(-1, 1, d) if t else np.zeros(d)
        a_z = rng.uniform(-1, 1, d)
        if d == 1:
            q, c = float(rng.uniform(1.0, 3.0)), rng.uniform(-0.5, 0.5, 1)
            L_C = max(abs(a_s[0]), abs(a_xi[0]), abs(a_z[0]), q * (1.0 + abs(c[0])))
            cost = Custom("cost", "quadratic_cost",
                          {"a_s": a_s.tolist(), "a_xi": a_xi.tolist(), "a_z": a_z.tolist(),
                           "q": q, "c": c.tolist()}, {"L_C": L_C, "monotone": monotone})
        else:
            cost = AffineCost(a_s, rng.uniform(-1, 1, d), a_xi.reshape(1, d), a_z, 0.0)
        stages.append(StageSpec(t, cost, [box], trans, d, d, d, d))
    return ProblemInstance(2, rng.uniform(-1, 1, d), stages, ExogenousProcess(exo), endo,
                           RegularityData(), separable=False, name=f"random-{seed}")


def _shift_law(law: DiscreteDistribution, shift) -> DiscreteDistribution:
    return DiscreteDistribution(law.atoms + shift, law.weights)


def random_perturbation(instance: ProblemInstance, seed: int, kind: str) -> ProblemInstance:
    """Move the atoms of the endogenous laws ("endogenous") or of the
    exogenous marginals/innovations ("exogenous") by random offsets of size
    0.05 to 0.2 per coordinate; weights are kept so atoms stay paired."""
    rng = np.random.default_rng(10_000 + seed)
    d = instance.stages[0].n_dec

    def bump(law):
        return _shift_law(law, rng.uniform(0.05, 0.2, (law.size, d)) * rng.choice([-1, 1], (law.size, d)))

    if kind == "endogenous":
        endo = EndogenousProcess([bump(l) for l in instance.endogenous.laws])
        return instance.with_processes(endogenous=endo, name=instance.name + "~endo")
    if kind == "exogenous":
        exo = []
        for e in instance.exogenous.stages:
            if isinstance(e, Marginal):
                exo.append(Marginal(bump(e.law)))
            else:
                exo.append(AffineShiftKernel(e.weights, bump(e.innovation)))
        return instance.with_processes(exogenous=ExogenousProcess(exo), name=instance.name + "~exo")
    raise ValueError(f"unknown perturbation kind {kind!r}")
