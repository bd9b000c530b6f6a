"""Stability bounds: endogenous (zeta-law) and exogenous (xi-process) value and
solution bounds, the nested/filtration comparison bounds, and a report that
sets all of them against solved gaps."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidExponent, MissingGrowth, NotApplicable
from .lipschitz import endogenous_coeffs, exogenous_global_coeffs, stagewise_coeffs
from .metrics import (InfNorm, affine_coupling_moment, filtration_terms,
                      kantorovich_1d, kantorovich_uniform_affine, ot_distance)
from .model import ProblemInstance, derive_regularity
from .stochastic import (DiscreteDistribution, ExogenousProcess, Marginal, UniformBox,
                         build_exo_tree, conditional_distribution, discretize)

DOMINANCE_SLACK = 1e-6


def _need_growth(beta, nu=1.0):
    if beta is None or not beta > 0:
        raise MissingGrowth("solution bounds need a positive growth modulus beta")
    if nu is None or not nu > 0:
        raise MissingGrowth("solution bounds need a positive growth order nu")


# ---------------------------------------------------------------- formulas


def endo_bounds(coeffs: dict, dK_list: Sequence[float], mode: str = "value",
                beta: Optional[float] = None) -> float:
    """Bound on the value (or expected solution distance) under zeta-law changes.

    coeffs needs L_C and L_hat (index 1..T) for the value; H and L_Xtj for
    solutions.  dK_list holds d_K(P_t, P~_t) for t = 0..T.
    """
    d = [float(v) for v in dK_list]
    T = len(d) - 1
    if mode == "value":
        Lh = coeffs["L_hat"]
        return float(sum(Lh[t + 1] * d[t] for t in range(T)) + coeffs["L_C"] * d[T])
    if mode == "solution":
        _need_growth(beta)
        H, X = coeffs["H"], coeffs["L_Xtj"]
        return float(sum((H[t] / beta + sum(X[k][t] for k in range(t + 1, T + 1))) * d[t]
                         for t in range(T + 1)))
    raise ValueError(f"unknown mode {mode!r}")


def exo_global_bounds(coeffs: dict, metric, mode: str = "value",
                      beta: Optional[float] = None, nu: Optional[float] = None) -> float:
    """Global bounds under a change of the whole xi process.

    value / value_fm: L_theta * m, with m = E|xi - xi~| or d_FM,3T+1.
    solution / solution_fm: L_X m1 + ((L_theta + L_Sigma L_X + L_Sigma) m2 / beta)^(1/nu),
    metric = m or (m1, m2) = (d_FM,2T, d_FM,3T+1).
    """
    if mode in ("value", "value_fm"):
        m = metric[-1] if isinstance(metric, (tuple, list)) else metric
        return float(coeffs["L_theta"] * m)
    if mode in ("solution", "solution_fm"):
        _need_growth(beta, nu)
        m1, m2 = (metric, metric) if np.isscalar(metric) else metric
        LX, LS = coeffs["L_X"], coeffs["L_sigma"]
        inner = (coeffs["L_theta"] + LS * LX + LS) * m2 / beta
        return float(LX * m1 + max(inner, 0.0) ** (1.0 / nu))
    raise ValueError(f"unknown mode {mode!r}")


def _lq_factor(LQ, t, T):
    """max{1, L_Q,t+1, L_Q,t+1 L_Q,t+2, ..., prod_{k>t} L_Q,k}; LQ is indexed by stage."""
    best, prod = 1.0, 1.0
    for k in range(t + 1, T + 1):
        prod *= LQ[k] if k < len(LQ) else 0.0
        best = max(best, prod)
    return best


def exo_stagewise_bounds(coeffs: dict, cond_dK: Sequence[float], mode: str = "value",
                         beta: Optional[float] = None) -> float:
    """Bounds from the per-stage expected conditional Kantorovich distances.

    coeffs needs L_xi (index 1..T) for the value; L_Q (index by stage),
    L_X_max and L_sigma for solutions.
    """
    d = [float(v) for v in cond_dK]
    T = len(d)
    Lxi = coeffs["L_xi"]
    if mode == "value":
        return float(sum(Lxi[t] * d[t - 1] for t in range(1, T + 1)))
    if mode == "solution":
        _need_growth(beta)
        LX, LS, LQ = coeffs["L_X_max"], coeffs["L_sigma"], coeffs["L_Q"]
        return float(sum((Lxi[t] / beta + (LX + (LX + 1) * LS / beta) * _lq_factor(LQ, t, T))
                         * d[t - 1] for t in range(1, T + 1)))
    raise ValueError(f"unknown mode {mode!r}")


def comparison_bounds(kind: str, inputs: dict) -> float:
    """nested: L * d_nested^beta.  filtration: L * (W_r + d_filtration)."""
    if kind == "nested":
        b = float(inputs.get("beta", 1.0))
        if not (math.isfinite(b) and b > 0):
            raise InvalidExponent(f"Holder exponent must lie in (0, inf), got {b}")
        return float(inputs["L"] * inputs["distance"] ** b)
    if kind == "filtration":
        return float(inputs["L"] * (inputs["wasserstein"] + inputs["filtration"]))
    raise ValueError(f"unknown comparison {kind!r}")


# ---------------------------------------------------------------- metric inputs


def law_distance(P, Q, n: int = 20) -> float:
    """d_K between two laws: exact for uniform boxes and 1-D discrete laws,
    else discretized optimal transport."""
    if isinstance(P, UniformBox) and isinstance(Q, UniformBox):
        return kantorovich_uniform_affine(P, Q)
    dp = P if isinstance(P, DiscreteDistribution) else discretize(P, n, "midpoint")
    dq = Q if isinstance(Q, DiscreteDistribution) else discretize(Q, n, "midpoint")
    if dp.dim == 1:
        return kantorovich_1d(dp, dq)
    return ot_distance(dp, dq, InfNorm())


def stagewise_conditional_metric(processP: ExogenousProcess, processQ: ExogenousProcess,
                                 n_hist_samples: int = 8) -> list:
    """E over histories of the base process of d_K(Q_t(.|h), Q~_t(.|h)), t = 1..T."""
    if processP.T != processQ.T:
        raise ValueError("processes differ in horizon")
    out = []
    for t in range(1, processP.T + 1):
        if t == 1 or all(isinstance(p.stages[t - 1], Marginal) for p in (processP, processQ)):
            out.append(law_distance(processP.stages[t - 1].law if t > 1 else
                                    conditional_distribution(processP, 1, np.zeros((0, processP.dim))),
                                    processQ.stages[t - 1].law if t > 1 else
                                    conditional_distribution(processQ, 1, np.zeros((0, processQ.dim)))))
            continue
        sub = ExogenousProcess(processP.stages[:t - 1])
        tree = build_exo_tree(sub, n_hist_samples, "gauss_legendre")
        hist, prob = tree.xi_hist[t - 1], tree.prob[t - 1]
        vals = np.array([law_distance(conditional_distribution(processP, t, h),
                                      conditional_distribution(processQ, t, h)) for h in hist])
        out.append(float(prob @ vals))
    return out


def paired_path_moment(processP: ExogenousProcess, processQ: ExogenousProcess, r: float = 1.0) -> float:
    """(E max_t |xi_t - xi~_t|^r)^(1/r) for independent discrete marginals whose
    atoms are paired index by index (equal weights required)."""
    laws = []
    for a, b in zip(processP.stages, processQ.stages):
        if not (isinstance(a, Marginal) and isinstance(b, Marginal)
                and isinstance(a.law, DiscreteDistribution) and isinstance(b.law, DiscreteDistribution)):
            raise NotApplicable("index pairing needs discrete marginals")
        if a.law.size != b.law.size or not np.allclose(a.law.weights, b.law.weights):
            raise NotApplicable("index pairing needs matching weights")
        laws.append((np.abs(a.law.atoms - b.law.atoms).max(axis=1), a.law.weights))
    total = 0.0
    for combo in itertools.product(*[range(len(w)) for _, w in laws]):
        p = np.prod([laws[t][1][i] for t, i in enumerate(combo)])
        total += p * max(laws[t][0][i] for t, i in enumerate(combo)) ** r
    return float(total ** (1.0 / r))


def path_moment(processP: ExogenousProcess, processQ: ExogenousProcess, r: float = 1.0) -> float:
    try:
        return affine_coupling_moment(processP, processQ, r=r, norm="inf")
    except NotApplicable:
        return paired_path_moment(processP, processQ, r)


def endogenous_distances(instance: ProblemInstance, perturbed: ProblemInstance) -> list:
    return [law_distance(p, q) for p, q in zip(instance.endogenous.laws, perturbed.endogenous.laws)]


# ---------------------------------------------------------------- report


@dataclass
class BoundConfig:
    branching: int = 3
    rule: str = "midpoint"
    tolerance: float = 1e-6
    oracle_grid: Optional[int] = None  # solve by grid enumeration instead of the solver
    comparison: dict = field(default_factory=dict)  # {"nested": {...}, "filtration": {...}}


@dataclass
class BoundRow:
    name: str
    value: float
    metric_input: str
    dominates_gap: Optional[bool]


@dataclass
class BoundReport:
    value: float
    value_perturbed: float
    gap: float
    solution_distance: Optional[float]
    solution_note: str
    metric_inputs: dict
    rows: list

    def recompute_verdicts(self):
        for r in self.rows:
            r.dominates_gap = bool(r.value >= self.gap - DOMINANCE_SLACK)
        return self

    def to_dict(self) -> dict:
        return {"value": self.value, "value_perturbed": self.value_perturbed, "gap": self.gap,
                "solution_distance": self.solution_distance, "solution_note": self.solution_note,
                "metric_inputs": self.metric_inputs,
                "bounds": [{"bound_name": r.name, "value": r.value, "metric_input": r.metric_input,
                            "dominates_gap": r.dominates_gap} for r in self.rows]}

    def to_json(self) -> str:
        from .serialize import dumps
        return dumps(self.to_dict())

    def to_markdown(self) -> str:
        lines = [f"value {self.value:.4g}, perturbed {self.value_perturbed:.4g}, gap {self.gap:.4g}",
                 "solution distance: " + (f"{self.solution_distance:.4g}"
                                          if self.solution_distance is not None else self.solution_note),
                 "", "| bound | value | metric input | dominates gap |", "|---|---|---|---|"]
        for r in self.rows:
            lines.append(f"| {r.name} | {r.value:.4g} | {r.metric_input} | {r.dominates_gap} |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bound_name", "value", "metric_input", "dominates_gap"])
        for r in self.rows:
            w.writerow([r.name, f"{r.value:.10g}", r.metric_input, r.dominates_gap])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (list, tuple)):
        return "(" + "; ".join(f"{x:.4g}" for x in v) + ")"
    return f"{v:.4g}"


def _exo_differs(a: ExogenousProcess, b: ExogenousProcess) -> bool:
    return a.to_dict() != b.to_dict()


def _endo_differs(a, b) -> bool:
    return a.to_dict() != b.to_dict()


def _solve_pair(instance, perturbed, cfg: BoundConfig):
    from .solver import SolverConfig, solve

    if cfg.oracle_grid:
        from .oracle import brute_force_solve

        return (brute_force_solve(instance, grid_points_per_dim=cfg.oracle_grid,
                                  branching=cfg.branching, rule=cfg.rule),
                brute_force_solve(perturbed, grid_points_per_dim=cfg.oracle_grid,
                                  branching=cfg.branching, rule=cfg.rule))
    sc = SolverConfig(tolerance=cfg.tolerance)
    return (solve(instance, cfg.branching, cfg.rule, sc), solve(perturbed, cfg.branching, cfg.rule, sc))


def _policy_distance(ra, rb) -> float:
    """Sum over stages of E|x_t - x~_t| on matched trees (max over coordinate parts)."""
    pairs = list(zip(ra.parts, rb.parts)) if ra.parts else [(ra, rb)]
    out = 0.0
    for a, b in pairs:
        tot = 0.0
        for t, (xa, xb) in enumerate(zip(a.policy.decisions, b.policy.decisions)):
            p = a.tree.prob[2 * t]
            tot += float(p @ np.abs(np.asarray(xa) - np.asarray(xb)).max(axis=1))
        out = max(out, tot)
    return out


def applicable_bounds(instance: ProblemInstance, perturbed: ProblemInstance,
                      reg=None) -> tuple:
    """Rows (verdicts unset) and metric inputs of every bound whose inputs exist
    for this pair; no solve is involved."""
    reg = reg or derive_regularity(instance)
    T = instance.T
    rows, inputs = [], {}

    if _endo_differs(instance.endogenous, perturbed.endogenous):
        dK = endogenous_distances(instance, perturbed)
        inputs["dK_zeta"] = dK
        en = endogenous_coeffs(reg, T)
        en["L_C"] = reg.Lc
        rows.append(BoundRow("endogenous value", endo_bounds(en, dK, "value"), _fmt(dK), None))
        if reg.beta is not None:
            rows.append(BoundRow("endogenous solution", endo_bounds(en, dK, "solution", reg.beta),
                                 _fmt(dK), None))

    if _exo_differs(instance.exogenous, perturbed.exogenous):
        ex = exogenous_global_coeffs(reg, T)
        try:
            m = path_moment(instance.exogenous, perturbed.exogenous)
        except NotApplicable:
            m = None
        if m is not None:
            inputs["E_path_distance"] = m
            rows.append(BoundRow("global value", exo_global_bounds(ex, m, "value"), _fmt(m), None))
            if reg.beta is not None and reg.nu is not None:
                rows.append(BoundRow("global solution",
                                     exo_global_bounds(ex, m, "solution", reg.beta, reg.nu), _fmt(m), None))
        if reg.L_Q is not None:
            cd = stagewise_conditional_metric(instance.exogenous, perturbed.exogenous)
            inputs["cond_dK"] = cd
            sw = stagewise_coeffs(reg, reg.L_Q, T)
            sw.update(L_X_max=ex["L_X"], L_sigma=ex["L_sigma"])
            inputs["L_xi"] = sw["L_xi"][1:]
            rows.append(BoundRow("stagewise value", exo_stagewise_bounds(sw, cd, "value"), _fmt(cd), None))
            if reg.beta is not None:
                rows.append(BoundRow("stagewise solution",
                                     exo_stagewise_bounds(sw, cd, "solution", reg.beta), _fmt(cd), None))
    return rows, inputs


def bound_report(instance: ProblemInstance, perturbed: ProblemInstance,
                 config: Optional[BoundConfig] = None) -> BoundReport:
    """Solve both instances and evaluate every bound whose inputs are available."""
    cfg = config or BoundConfig()
    ra, rb = _solve_pair(instance, perturbed, cfg)
    gap = abs(ra.value - rb.value)
    reg = derive_regularity(instance)
    rows, inputs = applicable_bounds(instance, perturbed, reg)

    sol_dist, note = None, "set-valued, estimate skipped"
    if reg.beta is not None and (ra.policy is not None or ra.parts):
        sol_dist, note = _policy_distance(ra, rb), "expected decision distance"

    comp = cfg.comparison or {}
    if "nested" in comp:
        c = comp["nested"]
        rows.append(BoundRow("nested comparison", comparison_bounds("nested", c), _fmt(c["distance"]), None))
    if "filtration" in comp:
        c = dict(comp["filtration"])
        if c.get("filtration") is None and ra.policy is None and ra.parts:
            terms = [sum(filtration_terms(a.policy, b.policy, a.tree, b.tree))
                     for a, b in zip(ra.parts, rb.parts)]
            c["filtration"] = max(terms)
        inputs["filtration"] = c["filtration"]
        rows.append(BoundRow("filtration comparison", comparison_bounds("filtration", c),
                             _fmt([c["wasserstein"], c["filtration"]]), None))
    rep = BoundReport(ra.value, rb.value, gap, sol_dist, note, inputs, rows)
    return rep.recompute_verdicts()
