"""Probability metrics: Kantorovich, Fortet-Mourier, Wasserstein-r, nested distance
and the filtration-distance estimate evaluated at given policies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from ._transport import transport
from .errors import InvalidInput, InvalidTrees, NotApplicable
from .stochastic import (AffineShiftKernel, DiscreteDistribution, ExogenousProcess, Marginal,
                         ScenarioTree, UniformBox, discretize)


# ------------------------------------------------------------ ground costs


@dataclass(frozen=True)
class InfNorm:
    def matrix(self, X, Y):
        return np.abs(X[:, None, :] - Y[None, :, :]).max(axis=-1)


@dataclass(frozen=True)
class FortetMourier:
    """c_p(x, y) = max{1, |x|^(p-1), |y|^(p-1)} |x - y|."""

    p: float = 1.0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("Fortet-Mourier order must be >= 1")

    def matrix(self, X, Y):
        nx = np.abs(X).max(axis=-1) ** (self.p - 1)
        ny = np.abs(Y).max(axis=-1) ** (self.p - 1)
        scale = np.maximum(1.0, np.maximum(nx[:, None], ny[None, :]))
        return scale * InfNorm().matrix(X, Y)


@dataclass(frozen=True)
class Power:
    """|x - y|^r; the transport optimum is returned to the power 1/r."""

    r: float = 1.0

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("Wasserstein order must be >= 1")

    def matrix(self, X, Y):
        return InfNorm().matrix(X, Y) ** self.r


def _as_discrete(law, n=20, rule="midpoint") -> DiscreteDistribution:
    return law if isinstance(law, DiscreteDistribution) else discretize(law, n, rule)


# ------------------------------------------------------------ distances


def kantorovich_1d(P: DiscreteDistribution, Q: DiscreteDistribution) -> float:
    """Integral of |F_P^-1 - F_Q^-1| over the merged quantile levels."""
    if P.dim != 1 or Q.dim != 1:
        raise InvalidInput("kantorovich_1d needs scalar atoms")
    op, oq = np.argsort(P.atoms[:, 0], kind="stable"), np.argsort(Q.atoms[:, 0], kind="stable")
    xp, wp = P.atoms[op, 0], P.weights[op]
    xq, wq = Q.atoms[oq, 0], Q.weights[oq]
    cp, cq = np.cumsum(wp), np.cumsum(wq)
    cp[-1] = cq[-1] = 1.0
    levels = np.union1d(cp, cq)
    lo = np.concatenate([[0.0], levels[:-1]])
    mid = 0.5 * (lo + levels)
    ip = np.minimum(np.searchsorted(cp, mid), len(xp) - 1)
    iq = np.minimum(np.searchsorted(cq, mid), len(xq) - 1)
    return float(np.sum((levels - lo) * np.abs(xp[ip] - xq[iq])))


def ot_distance(P: DiscreteDistribution, Q: DiscreteDistribution, cost=None) -> float:
    cost = cost or InfNorm()
    if P.dim != Q.dim:
        raise InvalidInput("distributions live in different dimensions")
    val = transport(P.weights, Q.weights, cost.matrix(P.atoms, Q.atoms))
    val = max(val, 0.0)
    if isinstance(cost, Power):
        return val ** (1.0 / cost.r)
    return val


def _abs_uniform_cdf_breaks(lo, hi):
    """Breakpoints of the cdf of |D| with D ~ U(lo, hi) (or D = lo when lo == hi)."""
    return [abs(lo), abs(hi)] + ([0.0] if lo < 0 < hi else [])


def _abs_uniform_cdf(y, lo, hi):
    if hi - lo <= 0:
        return (y >= abs(lo)).astype(float)
    a = np.clip(y, 0, None)
    inside = np.clip(np.minimum(a, hi) - np.maximum(-a, lo), 0, None)
    return inside / (hi - lo)


def _expected_max_abs(lows, highs):
    """E max_i |D_i| for independent D_i ~ U(lows_i, highs_i), exactly.

    The cdf of the max is a product of piecewise-linear factors, so Gauss
    rules with dim+1 nodes per piece integrate it without error.
    """
    k = len(lows)
    breaks = sorted({0.0, *[b for lo, hi in zip(lows, highs) for b in _abs_uniform_cdf_breaks(lo, hi)]})
    xg, wg = leggauss(k + 1)
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        y = 0.5 * (a + b) + 0.5 * (b - a) * xg
        F = np.ones_like(y)
        for lo, hi in zip(lows, highs):
            F = F * _abs_uniform_cdf(y, lo, hi)
        total += 0.5 * (b - a) * np.sum(wg * (1.0 - F))
    return float(total)


def _affine_diff(U1: UniformBox, U2: UniformBox):
    """Range of x - T(x) on U1 where T is the increasing affine map onto U2."""
    w1, w2 = U1.upper - U1.lower, U2.upper - U2.lower
    scale = w2 / w1
    # D(x) = x - (l2 + scale (x - l1)) is affine in x; evaluate at both ends
    d_lo = U1.lower - U2.lower
    d_hi = U1.upper - U2.upper
    return np.minimum(d_lo, d_hi), np.maximum(d_lo, d_hi), scale


def kantorovich_uniform_affine(U1, U2) -> float:
    """E|x - T(x)|_inf under the componentwise increasing affine coupling."""
    if not isinstance(U1, UniformBox) or not isinstance(U2, UniformBox):
        raise NotApplicable("closed form needs two uniform boxes")
    if U1.dim != U2.dim:
        raise NotApplicable("boxes of different dimension are not affinely related")
    lo, hi, _ = _affine_diff(U1, U2)
    return _expected_max_abs(lo, hi)


def _base_laws(process: ExogenousProcess):
    out = []
    for e in process.stages:
        if isinstance(e, Marginal) and isinstance(e.law, UniformBox):
            out.append((e.law, ()))
        elif isinstance(e, AffineShiftKernel) and isinstance(e.innovation, UniformBox):
            out.append((e.innovation, e.weights))
        else:
            raise NotApplicable("affine coupling needs uniform marginals or shift innovations")
    return out


def affine_coupling_moment(processP: ExogenousProcess, processQ: ExogenousProcess,
                           r: float = 1.0, n: int = 16, norm: str = "inf") -> float:
    """(E |xi - xi~|^r)^(1/r) when every uniform source of xi is paired with its
    counterpart in xi~ through the increasing affine map.

    norm "inf" takes the max over all path components; "lr" uses the l_r norm
    of the path, i.e. the sum of |component difference|^r.  The expectation
    uses an n-point Gauss rule per source coordinate.
    """
    if processP.T != processQ.T or processP.dim != processQ.dim:
        raise InvalidInput("processes differ in horizon or dimension")
    bp, bq = _base_laws(processP), _base_laws(processQ)
    m, T = processP.dim, processP.T
    nodes, w = np.polynomial.legendre.leggauss(n)
    u = (nodes + 1) / 2  # reference points on [0, 1]
    grids = np.meshgrid(*[u] * (m * T), indexing="ij")
    U = np.stack([g.ravel() for g in grids], axis=1).reshape(-1, T, m)
    wg = np.meshgrid(*[w / 2] * (m * T), indexing="ij")
    W = np.prod(np.stack([g.ravel() for g in wg], axis=1), axis=1)
    xi = np.zeros_like(U)
    xq = np.zeros_like(U)
    for t in range(T):
        (lp, wp), (lq, wq) = bp[t], bq[t]
        xi[:, t] = lp.lower + U[:, t] * (lp.upper - lp.lower)
        xq[:, t] = lq.lower + U[:, t] * (lq.upper - lq.lower)
        for k, c in enumerate(wp):
            xi[:, t] += c * xi[:, k]
        for k, c in enumerate(wq):
            xq[:, t] += c * xq[:, k]
    D = np.abs(xi - xq).reshape(len(W), -1)
    if norm == "inf":
        val = np.sum(W * D.max(axis=1) ** r)
    elif norm == "lr":
        val = np.sum(W * (D ** r).sum(axis=1))
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return float(val) ** (1.0 / r)


def nested_distance(treeP: ScenarioTree, treeQ: ScenarioTree, cost=None) -> float:
    """Backward transport recursion over two exogenous trees.

    For every pair of nodes at depth t-1 the children are coupled with
    cost ||xi_t - xi~_t|| plus the children's nested value.
    """
    cost = cost or InfNorm()
    if treeP.T != treeQ.T or treeP.n_layers != treeQ.n_layers:
        raise InvalidTrees("trees must share the horizon")
    if any(k == "endo" for k in list(treeP.kinds) + list(treeQ.kinds)):
        raise InvalidTrees("nested distance runs on exogenous trees")
    L = treeP.n_layers - 1
    D = np.zeros((len(treeP.cond[L]), len(treeQ.cond[L])))
    for l in range(L, 0, -1):
        bp, bq = treeP.branching[l], treeQ.branching[l]
        n_par_p, n_par_q = len(treeP.cond[l - 1]), len(treeQ.cond[l - 1])
        stage = cost.matrix(treeP.values[l], treeQ.values[l]) + D
        D_up = np.empty((n_par_p, n_par_q))
        for i in range(n_par_p):
            ci = slice(i * bp, (i + 1) * bp)
            for j in range(n_par_q):
                cj = slice(j * bq, (j + 1) * bq)
                D_up[i, j] = transport(treeP.cond[l][ci], treeQ.cond[l][cj], stage[ci, cj])
        D = D_up
    return float(D[0, 0])


def _decisions(policy, t):
    return np.asarray(policy.decisions[t] if hasattr(policy, "decisions") else policy[t], dtype=float)


def _same_tree(a: ScenarioTree, b: ScenarioTree) -> bool:
    if a is b:
        return True
    if a.layer_sizes() != b.layer_sizes() or list(a.branching) != list(b.branching):
        return False
    return all(np.array_equal(u, v) for u, v in zip(a.values, b.values)) and \
        all(np.array_equal(u, v) for u, v in zip(a.cond, b.cond))


def filtration_terms(policyP, policyQ, treeP: ScenarioTree, treeQ: ScenarioTree) -> list:
    """Per-stage max{E|x_t - E[x_t | F~_t]|, E~|x~_t - E~[x~_t | F_t]|} for t = 1..T.

    Two different trees are coupled independently, so conditioning on the
    other filtration leaves the plain mean; on identical trees the
    filtrations coincide and every term vanishes.
    """
    if treeP.T != treeQ.T:
        raise InvalidInput("trees differ in horizon")
    same = _same_tree(treeP, treeQ)
    out = []
    for t in range(1, treeP.T + 1):
        xp, xq = _decisions(policyP, t), _decisions(policyQ, t)
        pp, pq = treeP.prob[2 * t], treeQ.prob[2 * t]
        if xp.shape[0] != pp.size or xq.shape[0] != pq.size:
            raise InvalidInput(f"stage-{t} policy does not match its tree")
        if xp.shape[1:] != xq.shape[1:]:
            raise InvalidInput("policies have different decision dimensions")
        if same:
            out.append(0.0)
            continue
        a = pp @ np.abs(xp - pp @ xp).max(axis=1)
        b = pq @ np.abs(xq - pq @ xq).max(axis=1)
        out.append(float(max(a, b)))
    return out


def filtration_estimate(policyP, policyQ, treeP: ScenarioTree, treeQ: ScenarioTree) -> float:
    return float(sum(filtration_terms(policyP, policyQ, treeP, treeQ)))
