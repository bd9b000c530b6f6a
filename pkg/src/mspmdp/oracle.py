"""Brute-force validators: grid enumeration of the nested problem and
basis enumeration of small transportation problems.

Both are deliberately naive and share no search code with the solver or the
transport simplex.
"""
from __future__ import annotations

import itertools
import json
from typing import Optional

import numpy as np

from .errors import BudgetExceeded, Infeasible
from .model import FEAS_TOL, ProblemInstance
from .stochastic import DiscreteDistribution, ScenarioTree, build_joint_tree

GRID_BUDGET = 20_000_000
OT_MAX_ATOMS = 4


def _grid(box, k: int) -> np.ndarray:
    """Lexicographically ordered tensor grid with k points per coordinate."""
    axes = [np.linspace(lo, hi, k) for lo, hi in zip(box.lower, box.upper)]
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(axes))


class _Enumerator:
    def __init__(self, inst: ProblemInstance, tree: ScenarioTree, k: int, budget: float):
        self.inst, self.tree = inst, tree
        self.grids = [_grid(st.box, k) for st in inst.stages]
        rows, work = 1, 0
        for t in range(inst.T + 1):
            rows *= len(self.grids[t]) * tree.branching[2 * t + 1]
            work += rows
            if t < inst.T:
                rows *= tree.branching[2 * t + 2]
        if work > budget:
            raise BudgetExceeded(f"grid enumeration needs about {work:.3g} evaluations, budget is {budget:.3g}")
        self.evaluations = 0

    def value(self, t, nodes, s, xp):
        inst, tr = self.inst, self.tree
        st = inst.stages[t]
        G = self.grids[t]
        n, K = len(nodes), len(G)
        x = np.tile(G, (n, 1))
        nodes_r = np.repeat(nodes, K)
        s_r = np.repeat(s, K, axis=0)
        xp_r = np.repeat(xp, K, axis=0)
        hist = None if t == 0 else tr.xi_hist[2 * t][nodes_r]
        Q = np.full(n * K, np.inf)
        ok = np.ones(n * K, dtype=bool)
        for c in st.constraints:
            r = np.asarray(c.residual(x, xp_r, s_r, hist), dtype=float)
            ok &= (r <= FEAS_TOL).all(axis=-1)
        idx = np.flatnonzero(ok)
        if idx.size:
            Q[idx] = self._expected(t, nodes_r[idx], s_r[idx], x[idx],
                                    None if hist is None else hist[idx])
        Q = Q.reshape(n, K)
        if not np.isfinite(Q).any(axis=1).all():
            raise Infeasible(f"no grid point is feasible at some stage-{t} node")
        j = Q.argmin(axis=1)  # first minimizer = lexicographically smallest x
        return Q[np.arange(n), j], G[j]

    def _expected(self, t, nodes, s, x, hist):
        tr = self.tree
        st = self.inst.stages[t]
        lz = 2 * t + 1
        bz = tr.branching[lz]
        zc = (nodes[:, None] * bz + np.arange(bz)).reshape(-1)
        zeta = tr.values[lz][zc]
        s_b, x_b = np.repeat(s, bz, axis=0), np.repeat(x, bz, axis=0)
        h_b = None if hist is None else np.repeat(hist, bz, axis=0)
        self.evaluations += len(zc)
        total = np.asarray(st.cost.value(s_b, x_b, h_b, zeta), dtype=float)
        if t < self.inst.T:
            s_next = np.asarray(st.transition.apply(s_b, x_b, None if h_b is None else h_b[:, -1, :], zeta),
                                dtype=float)
            bx = tr.branching[lz + 1]
            xc = (zc[:, None] * bx + np.arange(bx)).reshape(-1)
            v, _ = self.value(t + 1, xc, np.repeat(s_next, bx, axis=0), np.repeat(x_b, bx, axis=0))
            total = total + (tr.cond[lz + 1][xc] * v).reshape(-1, bx).sum(axis=1)
        return (tr.cond[lz][zc] * total).reshape(-1, bz).sum(axis=1)


def _enumerate(instance, tree, k, budget):
    from .solver import Policy, SolveReport

    en = _Enumerator(instance, tree, k, budget)
    s = instance.s0[None, :]
    xp = np.zeros((1, instance.stages[0].n_dec))
    nodes = np.zeros(1, dtype=int)
    decisions, node_values, value = [], [], None
    for t in range(instance.T + 1):
        v, x = en.value(t, nodes, s, xp)
        if t == 0:
            value = float(v[0])
        decisions.append(x)
        node_values.append(v)
        if t == instance.T:
            break
        st = instance.stages[t]
        lz = 2 * t + 1
        bz, bx = tree.branching[lz], tree.branching[lz + 1]
        zc = (nodes[:, None] * bz + np.arange(bz)).reshape(-1)
        hist = None if t == 0 else tree.xi_hist[2 * t][np.repeat(nodes, bz)]
        x_b = np.repeat(x, bz, axis=0)
        s_next = st.transition.apply(np.repeat(s, bz, axis=0), x_b,
                                     None if hist is None else hist[:, -1, :], tree.values[lz][zc])
        nodes = (zc[:, None] * bx + np.arange(bx)).reshape(-1)
        s = np.repeat(s_next, bx, axis=0)
        xp = np.repeat(x_b, bx, axis=0)
    stats = {"grid_points": [len(g) for g in en.grids], "evaluations": en.evaluations}
    return SolveReport(value, Policy(decisions), node_values, stats, tree)


def brute_force_solve(instance: ProblemInstance, tree: Optional[ScenarioTree] = None,
                      grid_points_per_dim: int = 21, budget: float = GRID_BUDGET,
                      branching=1, rule: str = "midpoint"):
    """Exact backward enumeration over a uniform grid on every stage box.

    Without a tree, one is built with the given branching; separable
    instances are then enumerated coordinate by coordinate and summed.
    """
    from .solver import SolveReport, split_coordinates

    k = int(grid_points_per_dim)
    if k < 2:
        raise ValueError("need at least two grid points per dimension")
    if tree is not None:
        return _enumerate(instance, tree, k, budget)
    if instance.separable and instance.stages[0].n_dec > 1:
        parts = [_enumerate(sub, build_joint_tree(sub, branching, rule), k, budget)
                 for sub in split_coordinates(instance)]
        return SolveReport(float(sum(p.value for p in parts)), None, [],
                           {"coordinates": len(parts)}, None, parts)
    return _enumerate(instance, build_joint_tree(instance, branching, rule), k, budget)


# ------------------------------------------------------------ transport


def _tree_flows(cells, a, b):
    """Flows on a spanning-tree basis by leaf elimination; None if not a tree."""
    m, n = len(a), len(b)
    ra, rb = list(a), list(b)
    left = set(range(len(cells)))
    deg = [0] * (m + n)
    for i, j in cells:
        deg[i] += 1
        deg[m + j] += 1
    flows = [0.0] * len(cells)
    while left:
        leaf = None
        for e in left:
            i, j = cells[e]
            if deg[i] == 1:
                leaf = (e, "row")
                break
            if deg[m + j] == 1:
                leaf = (e, "col")
                break
        if leaf is None:
            return None  # contains a cycle
        e, side = leaf
        i, j = cells[e]
        q = ra[i] if side == "row" else rb[j]
        flows[e] = q
        ra[i] -= q
        rb[j] -= q
        deg[i] -= 1
        deg[m + j] -= 1
        left.discard(e)
    if any(d != 0 for d in deg):
        return None
    return flows


def ot_brute_force(P, Q, C) -> float:
    """Transportation optimum by enumerating every basis (spanning tree of the
    row/column bipartite graph) and keeping the cheapest feasible one."""
    a = P.weights if isinstance(P, DiscreteDistribution) else np.asarray(P, dtype=float)
    b = Q.weights if isinstance(Q, DiscreteDistribution) else np.asarray(Q, dtype=float)
    if not isinstance(C, np.ndarray) and hasattr(C, "matrix"):
        C = C.matrix(P.atoms, Q.atoms)
    C = np.asarray(C, dtype=float)
    m, n = len(a), len(b)
    if m > OT_MAX_ATOMS or n > OT_MAX_ATOMS:
        raise BudgetExceeded(f"basis enumeration is limited to {OT_MAX_ATOMS} atoms per side")
    b = b * (a.sum() / b.sum())
    tol = 1e-12 * max(1.0, a.sum())
    best = np.inf
    all_cells = [(i, j) for i in range(m) for j in range(n)]
    for cells in itertools.combinations(all_cells, m + n - 1):
        f = _tree_flows(list(cells), a, b)
        if f is None or min(f) < -tol:
            continue
        best = min(best, sum(fk * C[i, j] for fk, (i, j) in zip(f, cells)))
    return float(best)


# ------------------------------------------------------------ fixtures


def write_fixtures(path, payload: dict) -> None:
    """Freeze oracle outputs as sorted, indented JSON."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_fixtures(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
