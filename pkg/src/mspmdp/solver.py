"""Backward dynamic programming over a joint scenario tree.

v_t(s, x_prev, node) = min_x sum_zeta p [C_t + sum_xi q v_{t+1}(S_t(s, x, xi_t, zeta), x, child)]

Value functions are evaluated lazily: a batch of (node, state, previous
decision) queries triggers a batched stage minimization, whose objective
evaluations recurse into the next stage.  Stage minimization is projected
coordinate descent: a batched bracket search finds the feasible interval
along a coordinate, a convexity endpoint test settles monotone pieces and a
batched grid refinement (golden section evaluated several points at a time)
handles the rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import Infeasible, MaxIterations, PolicyInfeasible
from .model import (FEAS_TOL, AffineCost, AffineInequality, AffineTransition, BoxConstraint,
                    Custom, ProblemInstance, QuadraticInequality, RegularityData, StageSpec)
from .stochastic import (AffineShiftKernel, DiscreteDistribution, EndogenousProcess,
                         ExogenousProcess, Marginal, ScenarioTree, UniformBox, build_joint_tree)

ZOOM_POINTS = 8  # interior points per line-search round


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-6
    max_iterations: int = 200
    multi_start: int = 3
    sweep_limit: int = 50
    bisection_steps: int = 60
    separable: Optional[bool] = None  # None: follow the instance flag

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass
class Policy:
    """decisions[t] has one row per decision node of stage t (tree layer 2t)."""

    decisions: list

    def to_dict(self):
        return {"decisions": [np.asarray(d).tolist() for d in self.decisions]}


@dataclass
class SolveReport:
    value: float
    policy: Optional[Policy] = None
    node_values: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    tree: Optional[ScenarioTree] = None
    parts: list = field(default_factory=list)  # per-coordinate reports of a separable solve

    def to_dict(self):
        d = {"value": self.value, "stats": dict(self.stats)}
        if self.policy is not None:
            d["policy"] = self.policy.to_dict()
            d["node_values"] = [np.asarray(v).tolist() for v in self.node_values]
        if self.parts:
            d["parts"] = [p.to_dict() for p in self.parts]
        return d


# ---------------------------------------------------------------- stage min


def _has_custom(st: StageSpec) -> bool:
    return any(isinstance(f, Custom) for f in (st.cost, st.transition, *st.constraints))


def _feasible_interval(g, x, i, lo_box, hi_box, steps, k=16):
    """Feasible range of coordinate i through the feasible rows x.

    Each end is located by a batched k-point search between the box end and
    the current (feasible) value; a round shrinks the bracket by k + 1.
    """
    n = x.shape[0]
    c = x[:, i]
    out = []
    frac = np.arange(1, k + 1) / (k + 1)
    rounds = max(1, int(math.ceil(steps * math.log(2) / math.log(k + 1))))
    for end in (lo_box, hi_box):
        e = np.full(n, float(end))
        y = x.copy()
        y[:, i] = e
        good = g(y, np.arange(n)) <= 0.0
        res = e.copy()
        sel = np.flatnonzero(~good)
        if sel.size:
            a, b = e[sel], c[sel].copy()  # a infeasible, b feasible
            ys = np.repeat(x[sel], k, axis=0)
            rs = np.repeat(sel, k)
            for _ in range(rounds):
                pts = a[:, None] + (b - a)[:, None] * frac  # ordered from a towards b
                ys[:, i] = pts.ravel()
                ok = (g(ys, rs) <= 0.0).reshape(-1, k)
                # first feasible point from the infeasible end (b itself is feasible)
                j = np.where(ok.any(axis=1), ok.argmax(axis=1), k)
                pts = np.concatenate([a[:, None], pts, b[:, None]], axis=1)
                r = np.arange(sel.size)
                a, b = pts[r, j], pts[r, j + 1]
            res[sel] = b
        out.append(res)
    return out[0], out[1]


def _grid_zoom(phi, a, b, sel, rounds, k=ZOOM_POINTS):
    """Batched bracket refinement for convex phi: evaluate k interior points,
    keep the two cells around the best one.  Returns (u, phi(u))."""
    frac = np.arange(1, k + 1) / (k + 1)
    rs = np.repeat(sel, k)
    r = np.arange(sel.size)
    best_u = np.full(sel.size, np.nan)
    best_f = np.full(sel.size, np.inf)
    for _ in range(rounds):
        pts = a[:, None] + (b - a)[:, None] * frac
        f = phi(pts.ravel(), rs).reshape(-1, k)
        j = f.argmin(axis=1)  # first minimizer: ties go to the smaller u
        fj = f[r, j]
        imp = fj < best_f
        best_u = np.where(imp, pts[r, j], best_u)
        best_f = np.where(imp, fj, best_f)
        full = np.concatenate([a[:, None], pts, b[:, None]], axis=1)
        a, b = full[r, j], full[r, j + 2]
    return best_u, best_f


def _line_search(phi, lo, hi, tol, max_iter):
    """Minimize convex phi(u, sel) on [lo, hi] row-wise; ties go to the smaller u."""
    n = lo.shape[0]
    width = hi - lo
    h = np.maximum(1e-9 * np.maximum(1.0, np.abs(lo) + np.abs(hi)), 1e-3 * tol)
    best_u = lo.copy()
    f_lo = phi(lo, np.arange(n))
    best_f = f_lo.copy()
    sel = np.flatnonzero(width > h)
    if sel.size == 0:
        return best_u, best_f
    # convexity: a non-decreasing first step means lo is optimal
    sel = sel[f_lo[sel] > phi(lo[sel] + h[sel], sel)]
    if sel.size == 0:
        return best_u, best_f
    f_hi = phi(hi[sel], sel)
    at_hi = f_hi < phi(hi[sel] - h[sel], sel)
    best_u[sel[at_hi]] = hi[sel[at_hi]]
    best_f[sel[at_hi]] = f_hi[at_hi]
    sel, fh = sel[~at_hi], f_hi[~at_hi]
    if sel.size == 0:
        return best_u, best_f
    x_tol = max(tol * 0.1, 1e-12)
    span = float(width[sel].max())
    rounds = min(max_iter, max(1, int(math.ceil(math.log(max(span, x_tol) / x_tol) / math.log((ZOOM_POINTS + 1) / 2)))))
    u, fu = _grid_zoom(phi, lo[sel].copy(), hi[sel].copy(), sel, rounds)
    take_lo = f_lo[sel] <= fu
    take_hi = (~take_lo) & (fh < fu)
    best_u[sel] = np.where(take_lo, lo[sel], np.where(take_hi, hi[sel], u))
    best_f[sel] = np.where(take_lo, f_lo[sel], np.where(take_hi, fh, fu))
    return best_u, best_f


def stage_minimize(objective: Callable, residual: Callable, box: BoxConstraint, starts,
                   config: SolverConfig = SolverConfig(), box_only: bool = False):
    """Batched projected coordinate descent.

    objective(x, sel) and residual(x, sel) take decisions x of shape (k, d)
    for the query rows sel and return (k,) values / worst residuals.
    starts is a list of candidate (n, d) arrays; the first feasible one per
    row anchors the search, and with several starts every feasible one is
    run and the best result kept.  Returns (x*, value, sweeps).
    """
    cand = [np.asarray(s, dtype=float) for s in starts]
    n, d = cand[0].shape
    rows = np.arange(n)
    feas = [residual(c, rows) <= FEAS_TOL for c in cand]
    anyfeas = np.logical_or.reduce(feas)
    if not anyfeas.all():
        raise Infeasible(f"no feasible anchor for {int((~anyfeas).sum())} stage subproblems")
    best_x, best_f = None, None
    sweeps_used = 0
    first = np.argmax(np.stack(feas), axis=0)
    anchor = np.stack(cand)[first, rows]
    runs = [anchor] + [np.where(f[:, None], c, anchor)
                       for f, c in zip(feas[:config.multi_start], cand[:config.multi_start])]
    span = float(np.max(box.upper - box.lower))
    bits = min(config.bisection_steps,
               max(1, int(math.ceil(math.log2(max(span, 1e-300) / (0.1 * config.tolerance))))))
    seen = []
    for x0 in runs:
        if any(np.array_equal(x0, r) for r in seen):
            continue
        seen.append(x0)
        x = x0.copy()
        fx = objective(x, rows)
        for sweep in range(config.sweep_limit):
            f_before = fx.copy()
            for i in range(d):
                if box_only:
                    lo, hi = np.broadcast_to(box.lower[i], (n,)).copy(), np.broadcast_to(box.upper[i], (n,)).copy()
                else:
                    lo, hi = _feasible_interval(residual, x, i, box.lower[i], box.upper[i],
                                                bits)

                def phi(u, sel, i=i):
                    y = x[sel].copy()
                    y[:, i] = u
                    return objective(y, sel)

                u, fu = _line_search(phi, lo, hi, config.tolerance, config.max_iterations)
                better = fu <= fx + 0.0
                x[better, i] = u[better]
                fx = np.where(better, fu, fx)
            sweeps_used = max(sweeps_used, sweep + 1)
            if d == 1 or np.max(f_before - fx) < config.tolerance:
                break
        else:
            raise MaxIterations("coordinate descent did not settle within the sweep limit")
        if best_x is None:
            best_x, best_f = x, fx
        else:
            imp = fx < best_f - 1e-12
            best_x = np.where(imp[:, None], x, best_x)
            best_f = np.where(imp, fx, best_f)
    return best_x, best_f, sweeps_used


# ---------------------------------------------------------------- recursion


class NestedSolver:
    """Lazy batched evaluation of the stage value functions on one tree."""

    def __init__(self, instance: ProblemInstance, tree: ScenarioTree, config: SolverConfig = SolverConfig()):
        if tree.T != instance.T or tree.n_layers != 2 * instance.T + 2:
            raise ValueError("tree was not built for this instance")
        self.inst, self.tree, self.cfg = instance, tree, config
        self.stats = {"value_calls": 0, "objective_evals": 0, "max_sweeps": 0}

    def _hist(self, t, nodes):
        if t == 0:
            return None
        return self.tree.xi_hist[2 * t][nodes]

    def _residual(self, t, nodes, s, xp):
        st = self.inst.stages[t]
        hist = self._hist(t, nodes)

        def g(x, sel):
            if not st.constraints:
                return np.full(x.shape[0], -np.inf)
            h = None if hist is None else hist[sel]
            r = [np.asarray(c.residual(x, xp[sel], s[sel], h), dtype=float) for c in st.constraints]
            return np.concatenate(r, axis=-1).max(axis=-1)

        return g

    def stage_objective(self, t, nodes, s, xp, x):
        """Q_t for matched rows of nodes, s, x_prev and x."""
        self.stats["objective_evals"] += 1
        tr, st = self.tree, self.inst.stages[t]
        lz = 2 * t + 1
        zc = tr.children(2 * t, nodes)  # (B, bz)
        B, bz = zc.shape
        zeta = tr.values[lz][zc]
        wz = tr.cond[lz][zc]
        sb = np.repeat(s[:, None, :], bz, axis=1)
        xb = np.repeat(x[:, None, :], bz, axis=1)
        hist = self._hist(t, nodes)
        hb = None if hist is None else np.repeat(hist[:, None], bz, axis=1)
        cost = np.asarray(st.cost.value(sb, xb, hb, zeta), dtype=float)
        if t < self.inst.T:
            xi_t = None if hist is None else hb[..., -1, :]
            s_next = np.asarray(st.transition.apply(sb, xb, xi_t, zeta), dtype=float)
            xc = tr.children(lz, zc)  # (B, bz, bx)
            bx = xc.shape[-1]
            v, _ = self.value(t + 1, xc.reshape(-1),
                              np.repeat(s_next[:, :, None, :], bx, axis=2).reshape(B * bz * bx, -1),
                              np.repeat(xb[:, :, None, :], bx, axis=2).reshape(B * bz * bx, -1))
            cost = cost + np.einsum("ijk,ijk->ij", tr.cond[lz + 1][xc], v.reshape(B, bz, bx))
        return np.einsum("ij,ij->i", wz, cost)

    def value(self, t, nodes, s, xp):
        """(v_t, argmin) for decision nodes of stage t at states s and previous decisions xp."""
        self.stats["value_calls"] += 1
        nodes = np.asarray(nodes)
        st = self.inst.stages[t]
        box = st.box
        n = nodes.shape[0]
        if xp is None or xp.shape[-1] == 0:
            xp = np.zeros((n, self.inst.stages[max(t - 1, 0)].n_dec))
        starts = [np.tile(box.center, (n, 1))]
        if st.slater_point is not None:
            starts.append(np.tile(st.slater_point, (n, 1)))
        if t > 0 and xp.shape[1] == st.n_dec:
            starts.append(np.clip(xp, box.lower, box.upper))
        starts += [np.tile(box.upper, (n, 1)), np.tile(box.lower, (n, 1))]
        if not _has_custom(st) or st.n_dec == 1:
            cfg = SolverConfig(tolerance=self.cfg.tolerance, max_iterations=self.cfg.max_iterations,
                               multi_start=1, sweep_limit=self.cfg.sweep_limit,
                               bisection_steps=self.cfg.bisection_steps)
        else:
            cfg = self.cfg

        def obj(x, sel):
            return self.stage_objective(t, nodes[sel], s[sel], xp[sel], x)

        box_only = all(isinstance(c, BoxConstraint) for c in st.constraints)
        x, f, sw = stage_minimize(obj, self._residual(t, nodes, s, xp), box, starts, cfg, box_only)
        self.stats["max_sweeps"] = max(self.stats["max_sweeps"], sw)
        return f, x

    def solve(self) -> SolveReport:
        inst, tr = self.inst, self.tree
        s = inst.s0[None, :]
        xp = np.zeros((1, 0))
        nodes = np.zeros(1, dtype=int)
        decisions, node_values = [], []
        value = None
        for t in range(inst.T + 1):
            v, x = self.value(t, nodes, s, xp)
            if t == 0:
                value = float(v[0])
            decisions.append(x)
            node_values.append(v)
            if t == inst.T:
                break
            st = inst.stages[t]
            lz = 2 * t + 1
            zc = tr.children(2 * t, nodes)
            bz = zc.shape[1]
            hist = self._hist(t, nodes)
            xi_t = None if hist is None else np.repeat(hist[:, None, -1, :], bz, axis=1)
            s_next = st.transition.apply(np.repeat(s[:, None], bz, 1), np.repeat(x[:, None], bz, 1),
                                         xi_t, tr.values[lz][zc])
            xc = tr.children(lz, zc)
            bx = xc.shape[-1]
            nodes = xc.reshape(-1)
            s = np.repeat(s_next[:, :, None, :], bx, axis=2).reshape(nodes.size, -1)
            xp = np.repeat(np.repeat(x[:, None, None, :], bz, 1), bx, 2).reshape(nodes.size, -1)
        return SolveReport(value, Policy(decisions), node_values, dict(self.stats), tr)

    def value_at(self, t, node, s, x_prev):
        """v_t at explicit points; s and x_prev are (k, n) and (k, d_prev)."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        xp = np.atleast_2d(np.asarray(x_prev, dtype=float))
        nodes = np.broadcast_to(np.asarray(node), (s.shape[0],)).copy()
        return self.value(t, nodes, s, xp)[0]


def solve_nested(instance: ProblemInstance, tree: ScenarioTree,
                 config: SolverConfig = SolverConfig()) -> SolveReport:
    return NestedSolver(instance, tree, config).solve()


# ---------------------------------------------------------------- policies


def evaluate_policy(instance: ProblemInstance, tree: ScenarioTree, policy, check: bool = True) -> float:
    """Expected total cost of a tree policy by a forward pass."""
    dec = policy.decisions if isinstance(policy, Policy) else policy
    s = instance.s0[None, :]
    total = 0.0
    for t in range(instance.T + 1):
        st = instance.stages[t]
        x = np.asarray(dec[t], dtype=float)
        n = tree.cond[2 * t].size
        if x.shape != (n, st.n_dec):
            raise PolicyInfeasible(f"stage-{t} policy has shape {x.shape}, expected {(n, st.n_dec)}")
        hist = None if t == 0 else tree.xi_hist[2 * t]
        if check and st.constraints:
            xp = np.zeros_like(x) if t == 0 else np.asarray(dec[t - 1])[tree.ancestor(2 * t, np.arange(n), 2 * t - 2)]
            r = np.concatenate([np.asarray(c.residual(x, xp, s, hist), dtype=float)
                                for c in st.constraints], axis=-1)
            if np.any(r > FEAS_TOL):
                raise PolicyInfeasible(f"stage-{t} decision violates a constraint by {r.max():.3g}")
        lz = 2 * t + 1
        b = tree.branching[lz]
        zeta = tree.values[lz]
        sb, xb = s.repeat(b, 0), x.repeat(b, 0)
        hb = None if hist is None else hist.repeat(b, 0)
        cost = np.asarray(st.cost.value(sb, xb, hb, zeta), dtype=float)
        total += float(tree.prob[lz] @ cost)
        if t < instance.T:
            s_next = st.transition.apply(sb, xb, None if hb is None else hb[:, -1, :], zeta)
            s = s_next.repeat(tree.branching[lz + 1], 0)
    return total


# ---------------------------------------------------------------- separable


def _diag(m, i):
    return np.array([[m[i, i]]])


def _off_diagonal(m):
    return np.any(m - np.diag(np.diag(m)) != 0) if m.shape[0] == m.shape[1] else True


def _law_coord(law, i):
    if isinstance(law, UniformBox):
        return UniformBox(law.lower[i:i + 1], law.upper[i:i + 1])
    if isinstance(law, DiscreteDistribution) and law.dim == 1:
        return law
    raise ValueError("coordinate split needs product (uniform box) laws")


def split_coordinates(instance: ProblemInstance) -> list:
    """One scalar instance per coordinate when every family acts diagonally."""
    dims = {st.n_state for st in instance.stages} | {st.n_dec for st in instance.stages}
    if len(dims) != 1:
        raise ValueError("coordinate split needs equal state and decision dimensions")
    n = dims.pop()
    for st in instance.stages:
        tr = st.transition
        if not isinstance(tr, AffineTransition) or any(_off_diagonal(getattr(tr, k)) for k in ("M1", "M2", "N1", "N2")):
            raise ValueError("coordinate split needs diagonal affine transitions")
        if not isinstance(st.cost, AffineCost):
            raise ValueError("coordinate split needs affine costs")
        for c in st.constraints:
            if isinstance(c, AffineInequality) and any(_off_diagonal(getattr(c, k)) for k in "ABCD"):
                raise ValueError("coordinate split needs diagonal constraints")
            if isinstance(c, Custom):
                raise ValueError("custom constraints cannot be split")
    out = []
    for i in range(n):
        stages = []
        for st in instance.stages:
            c = st.cost
            cost = AffineCost(c.a_s[i:i + 1], c.a_x[i:i + 1], c.a_xi[:, i:i + 1], c.a_z[i:i + 1],
                              c.b if i == 0 else 0.0)
            cons = []
            for g in st.constraints:
                if isinstance(g, BoxConstraint):
                    cons.append(BoxConstraint(g.lower[i:i + 1], g.upper[i:i + 1], g.exponent))
                elif isinstance(g, QuadraticInequality):
                    cons.append(g)
                else:
                    cons.append(AffineInequality(_diag(g.A, i), _diag(g.B, i), _diag(g.C, i),
                                                 _diag(g.D, i), g.kappa[i:i + 1]))
            tr = st.transition
            trans = AffineTransition(_diag(tr.M1, i), _diag(tr.M2, i), _diag(tr.N1, i), _diag(tr.N2, i))
            sp = None if st.slater_point is None else st.slater_point[i:i + 1]
            stages.append(StageSpec(st.t, cost, cons, trans, 1, 1, 1, 1, sp))
        exo = []
        for e in instance.exogenous.stages:
            if isinstance(e, Marginal):
                exo.append(Marginal(_law_coord(e.law, i)))
            elif isinstance(e, AffineShiftKernel):
                exo.append(AffineShiftKernel(e.weights, _law_coord(e.innovation, i)))
            else:
                raise ValueError("explicit kernels cannot be split")
        endo = EndogenousProcess([_law_coord(l, i) for l in instance.endogenous.laws])
        reg = RegularityData(rho=instance.regularity.rho, A=instance.regularity.A,
                             beta=instance.regularity.beta, nu=instance.regularity.nu)
        out.append(ProblemInstance(instance.T, instance.s0[i:i + 1], stages, ExogenousProcess(exo),
                                   endo, reg, separable=False, name=f"{instance.name}[{i}]"))
    return out


def solve(instance: ProblemInstance, branching=3, rule: str = "gauss_legendre",
          config: SolverConfig = SolverConfig()) -> SolveReport:
    """Build the tree(s) and solve; separable instances go coordinate by coordinate."""
    sep = instance.separable if config.separable is None else config.separable
    if not sep:
        tree = build_joint_tree(instance, branching, rule)
        return solve_nested(instance, tree, config)
    parts = [solve_nested(sub, build_joint_tree(sub, branching, rule), config)
             for sub in split_coordinates(instance)]
    stats = {"coordinates": len(parts),
             "objective_evals": sum(p.stats["objective_evals"] for p in parts)}
    return SolveReport(float(sum(p.value for p in parts)), None, [], stats, None, parts)


def policy_from_rule(instance: ProblemInstance, tree: ScenarioTree, rule: Callable) -> Policy:
    """Roll a feedback rule x_t = rule(t, s_t, x_{t-1}, xi_t) forward over the tree."""
    s = instance.s0[None, :]
    xp = np.zeros((1, instance.stages[0].n_dec))
    decisions = []
    for t in range(instance.T + 1):
        xi = None if t == 0 else tree.xi_hist[2 * t][:, -1, :]
        x = np.asarray(rule(t, s, xp, xi), dtype=float).reshape(s.shape[0], -1)
        decisions.append(x)
        if t == instance.T:
            break
        lz = 2 * t + 1
        bz, bx = tree.branching[lz], tree.branching[lz + 1]
        x_b = x.repeat(bz, 0)
        s_next = instance.stages[t].transition.apply(s.repeat(bz, 0), x_b,
                                                     None if xi is None else xi.repeat(bz, 0),
                                                     tree.values[lz])
        s, xp = s_next.repeat(bx, 0), x_b.repeat(bx, 0)
    return Policy(decisions)


def analytic_solve(example_id: str, perturbed: bool = False, n: int = 16,
                   rule: str = "gauss_legendre") -> SolveReport:
    """Closed-form policy of a built-in example evaluated by n-point quadrature per layer."""
    from .examples import ANALYTIC_IDS, build_example
    from .errors import UnknownExample

    if example_id not in ANALYTIC_IDS:
        raise UnknownExample(f"no closed-form policy for {example_id!r}")
    inst, fx = build_example(example_id, perturbed)
    parts = []
    for sub in split_coordinates(inst):
        tree = build_joint_tree(sub, n, rule, budget=4 * 10 ** 6)
        pol = policy_from_rule(sub, tree, fx.policy)
        parts.append(SolveReport(evaluate_policy(sub, tree, pol), pol, [], {}, tree))
    return SolveReport(float(sum(p.value for p in parts)), None, [],
                       {"coordinates": len(parts), "nodes_per_layer": n}, None, parts)
