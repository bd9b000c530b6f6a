"""Uncertainty laws, exogenous/endogenous processes and joint scenario trees."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import BudgetExceeded, InvalidBox, InvalidHistory, InvalidDimension

NODE_BUDGET = 10**6


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        w = np.asarray(self.weights, dtype=float).ravel()
        if a.shape[0] != w.shape[0]:
            raise InvalidDimension("atoms and weights differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12 * max(1, len(w)):
            raise ValueError("weights must be nonnegative and sum to one")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def mean(self):
        return self.weights @ self.atoms

    def translate(self, shift) -> "DiscreteDistribution":
        return DiscreteDistribution(self.atoms + np.asarray(shift, dtype=float), self.weights)

    def merged(self) -> "DiscreteDistribution":
        """Collapse repeated atoms (weights add)."""
        u, inv = np.unique(self.atoms, axis=0, return_inverse=True)
        w = np.zeros(len(u))
        np.add.at(w, inv.ravel(), self.weights)
        return DiscreteDistribution(u, w / w.sum())

    def to_dict(self):
        return {"law": "discrete", "atoms": self.atoms.tolist(), "weights": self.weights.tolist()}


@dataclass(frozen=True, eq=False)
class UniformBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidBox("box bounds must be vectors of equal length")
        if np.any(~(lo < hi)):
            raise InvalidBox(f"degenerate box [{lo}, {hi}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def mean(self):
        return 0.5 * (self.lower + self.upper)

    def translate(self, shift) -> "UniformBox":
        sh = np.asarray(shift, dtype=float)
        return UniformBox(self.lower + sh, self.upper + sh)

    def sample(self, rng, n):
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def to_dict(self):
        return {"law": "uniform", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


Law = Union[DiscreteDistribution, UniformBox]


def law_from_dict(d) -> Law:
    if d["law"] == "uniform":
        return UniformBox(d["lower"], d["upper"])
    if d["law"] == "discrete":
        return DiscreteDistribution(d["atoms"], d["weights"])
    raise ValueError(f"unknown law {d['law']!r}")


def _rule_1d(n, rule):
    if rule == "midpoint":
        x = (np.arange(n) + 0.5) / n
        return 2 * x - 1, np.full(n, 1.0 / n)
    if rule == "gauss_legendre":
        x, w = leggauss(n)
        return x, w / 2.0
    raise ValueError(f"unknown quadrature rule {rule!r}")


def discretize(law: Law, n_per_dim: int, rule: str = "gauss_legendre") -> DiscreteDistribution:
    """Tensor-product quadrature of a uniform box (discrete laws pass through)."""
    if isinstance(law, DiscreteDistribution):
        return law
    if n_per_dim < 1:
        raise ValueError("need at least one node per dimension")
    if not isinstance(law, UniformBox):
        raise TypeError(f"cannot discretize {type(law).__name__}")
    ref, w1 = _rule_1d(int(n_per_dim), rule)
    c, r = law.mean(), 0.5 * (law.upper - law.lower)
    grids = np.meshgrid(*[c[i] + r[i] * ref for i in range(law.dim)], indexing="ij")
    atoms = np.stack([g.ravel() for g in grids], axis=1)
    wg = np.meshgrid(*[w1] * law.dim, indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wg], axis=1), axis=1)
    return DiscreteDistribution(atoms, weights / weights.sum())


# ------------------------------------------------------------- processes


@dataclass(frozen=True, eq=False)
class Marginal:
    law: Law
    kind = "marginal"

    def to_dict(self):
        return {"kind": self.kind, "law": self.law.to_dict()}


@dataclass(frozen=True, eq=False)
class AffineShiftKernel:
    """xi_t = sum_k weights[k] * xi_{k+1} + nu_t with nu_t ~ innovation."""

    weights: tuple
    innovation: Law
    kind = "affine_shift"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def to_dict(self):
        return {"kind": self.kind, "weights": list(self.weights),
                "innovation": self.innovation.to_dict()}


EXPLICIT_KERNELS: dict[str, Callable] = {}


@dataclass(frozen=True, eq=False)
class ExplicitKernel:
    """History -> law, resolved by registry name; lipschitz is user supplied."""

    name: str
    lipschitz: Optional[float] = None
    kind = "explicit"

    def __call__(self, hist):
        if self.name not in EXPLICIT_KERNELS:
            raise KeyError(f"no kernel registered as {self.name!r}")
        return EXPLICIT_KERNELS[self.name](hist)

    def to_dict(self):
        return {"kind": self.kind, "name": self.name, "lipschitz": self.lipschitz}


def stage_entry_from_dict(d):
    if d["kind"] == "marginal":
        return Marginal(law_from_dict(d["law"]))
    if d["kind"] == "affine_shift":
        return AffineShiftKernel(tuple(d["weights"]), law_from_dict(d["innovation"]))
    if d["kind"] == "explicit":
        return ExplicitKernel(d["name"], d.get("lipschitz"))
    raise ValueError(f"unknown process stage kind {d['kind']!r}")


@dataclass(frozen=True, eq=False)
class ExogenousProcess:
    """stages[t-1] describes xi_t for t = 1..T."""

    stages: tuple

    def __post_init__(self):
        st = tuple(self.stages)
        object.__setattr__(self, "stages", st)
        if st and not isinstance(st[0], Marginal):
            raise ValueError("stage-1 exogenous entry must be a marginal law")
        for t, e in enumerate(st, start=1):
            if isinstance(e, AffineShiftKernel) and len(e.weights) > t - 1:
                raise ValueError(f"stage-{t} kernel weights reference future stages")

    @property
    def T(self) -> int:
        return len(self.stages)

    @property
    def dim(self) -> int:
        return _entry_dim(self.stages[0]) if self.stages else 0

    def lipschitz_moduli(self) -> Optional[tuple]:
        out = []
        for e in self.stages:
            if isinstance(e, Marginal):
                out.append(0.0)
            elif isinstance(e, AffineShiftKernel):
                out.append(float(np.sum(np.abs(e.weights))))
            elif e.lipschitz is not None:
                out.append(float(e.lipschitz))
            else:
                return None
        return tuple(out)

    def sample(self, rng, n) -> np.ndarray:
        """Forward samples of shape (n, T, m); uniform laws only for kernels' innovations."""
        out = np.zeros((n, self.T, self.dim))
        for t, e in enumerate(self.stages, start=1):
            if isinstance(e, Marginal):
                out[:, t - 1] = _sample_law(e.law, rng, n)
            elif isinstance(e, AffineShiftKernel):
                shift = sum(w * out[:, k] for k, w in enumerate(e.weights))
                out[:, t - 1] = shift + _sample_law(e.innovation, rng, n)
            else:
                for i in range(n):
                    out[i, t - 1] = _sample_law(e(out[i, :t - 1]), rng, 1)[0]
        return out

    def to_dict(self):
        return [e.to_dict() for e in self.stages]


@dataclass(frozen=True, eq=False)
class EndogenousProcess:
    laws: tuple

    def __post_init__(self):
        object.__setattr__(self, "laws", tuple(self.laws))

    @property
    def dim(self) -> int:
        return self.laws[0].dim

    def to_dict(self):
        return [law.to_dict() for law in self.laws]


def _entry_dim(e):
    if isinstance(e, Marginal):
        return e.law.dim
    if isinstance(e, AffineShiftKernel):
        return e.innovation.dim
    raise InvalidDimension("explicit kernel cannot fix the process dimension")


def _sample_law(law, rng, n):
    if isinstance(law, UniformBox):
        return law.sample(rng, n)
    idx = rng.choice(law.size, size=n, p=law.weights)
    return law.atoms[idx]


def conditional_distribution(process: ExogenousProcess, t: int, xi_hist) -> Law:
    """Law of xi_t given the history xi_1..xi_{t-1} (rows of xi_hist)."""
    if not 1 <= t <= process.T:
        raise InvalidHistory(f"stage {t} outside 1..{process.T}")
    e = process.stages[t - 1]
    if isinstance(e, Marginal):
        return e.law
    h = np.asarray(xi_hist, dtype=float)
    if h.ndim == 1:
        h = h.reshape(-1, process.dim) if h.size else h.reshape(0, process.dim)
    if h.shape[0] != t - 1:
        raise InvalidHistory(f"stage {t} needs {t - 1} past draws, got {h.shape[0]}")
    if isinstance(e, AffineShiftKernel):
        shift = sum((w * h[k] for k, w in enumerate(e.weights)), np.zeros(process.dim))
        return e.innovation.translate(shift)
    return e(h)


# ------------------------------------------------------------------ trees


@dataclass(eq=False)
class ScenarioTree:
    """Layered tree with uniform branching inside each layer.

    Layer 0 is the root.  For t = 0..T layer 2t+1 carries zeta_t and, when
    t < T, layer 2t+2 carries xi_{t+1}.  A node at index i in layer l has
    parent i // branching[l].  Decisions for stage t sit on layer 2t.
    Exogenous-only trees (for process distances) use layers root, xi_1..xi_T.
    """

    kinds: list
    stages: list
    branching: list
    values: list
    cond: list
    xi_hist: dict = field(default_factory=dict)
    T: int = 0

    def __post_init__(self):
        self.prob = [np.ones(1)]
        for l in range(1, len(self.values)):
            self.prob.append(self.prob[-1].repeat(self.branching[l]) * self.cond[l])

    @property
    def n_layers(self) -> int:
        return len(self.values)

    def layer_sizes(self) -> list:
        return [len(c) for c in self.cond]

    def node_count(self) -> int:
        return int(sum(self.layer_sizes()))

    def children(self, l: int, idx: np.ndarray) -> np.ndarray:
        """Child indices in layer l+1, shape idx.shape + (b,)."""
        b = self.branching[l + 1]
        return np.asarray(idx)[..., None] * b + np.arange(b)

    def parent(self, l: int, idx):
        return np.asarray(idx) // self.branching[l]

    def ancestor(self, l: int, idx, l_up: int):
        idx = np.asarray(idx)
        for k in range(l, l_up, -1):
            idx = idx // self.branching[k]
        return idx

    def leaf_probability_total(self) -> float:
        return float(self.prob[-1].sum())

    def to_dict(self):
        return {"T": self.T, "kinds": list(self.kinds), "stages": list(self.stages),
                "branching": list(self.branching),
                "values": [v.tolist() for v in self.values],
                "cond": [c.tolist() for c in self.cond]}

    @classmethod
    def from_dict(cls, d):
        values = [np.asarray(v, dtype=float).reshape(len(c), -1) if len(c) else np.zeros((0, 0))
                  for v, c in zip(d["values"], d["cond"])]
        cond = [np.asarray(c, dtype=float) for c in d["cond"]]
        tree = cls(d["kinds"], d["stages"], d["branching"], values, cond, T=d["T"])
        tree._rebuild_hist()
        return tree

    def _rebuild_hist(self):
        hist = {}
        prev = None
        for l, k in enumerate(self.kinds):
            if k != "exo":
                continue
            v = self.values[l]
            if prev is None:
                h = v[:, None, :]
            else:
                lp, hp = prev
                anc = self.ancestor(l, np.arange(len(v)), lp)
                h = np.concatenate([hp[anc], v[:, None, :]], axis=1)
            hist[l] = h
            prev = (l, h)
        self.xi_hist = hist


def _as_pairs(branching, T):
    if isinstance(branching, (int, np.integer)):
        return [(int(branching), int(branching))] * (T + 1)
    if len(branching) == 2 and all(isinstance(u, (int, np.integer)) for u in branching):
        return [(int(branching[0]), int(branching[1]))] * (T + 1)  # one pair for every stage
    pairs = [tuple(int(u) for u in p) for p in branching]
    if len(pairs) != T + 1:
        raise ValueError("branching needs one (n_xi, n_zeta) pair per stage 0..T")
    return pairs


def _discretize_exo_layer(process, t, hist, n, rule):
    """Atoms for xi_t below every node with history hist (N, t-1, m)."""
    e = process.stages[t - 1]
    if isinstance(e, Marginal):
        d = discretize(e.law, n, rule)
        return np.broadcast_to(d.atoms, (hist.shape[0],) + d.atoms.shape), \
            np.broadcast_to(d.weights, (hist.shape[0], d.size))
    if isinstance(e, AffineShiftKernel):
        d = discretize(e.innovation, n, rule)
        shift = np.zeros((hist.shape[0], process.dim))
        for k, w in enumerate(e.weights):
            shift = shift + w * hist[:, k]
        return shift[:, None, :] + d.atoms[None], np.broadcast_to(d.weights, (hist.shape[0], d.size))
    atoms, weights = [], []
    for h in hist:
        d = discretize(e(h), n, rule)
        atoms.append(d.atoms)
        weights.append(d.weights)
    if len({a.shape for a in atoms}) > 1:
        raise InvalidHistory("explicit kernel returned laws of differing support size")
    return np.stack(atoms), np.stack(weights)


def _layer_size(law, n, dim):
    return law.size if isinstance(law, DiscreteDistribution) else n ** dim


def _exo_layer_size(process, t, n):
    e = process.stages[t - 1]
    law = e.law if isinstance(e, Marginal) else getattr(e, "innovation", None)
    return _layer_size(law, n, process.dim)


def _check_budget(sizes, budget):
    if sum(sizes) > budget:
        raise BudgetExceeded(f"tree would hold {sum(sizes)} nodes, budget is {budget}")


def build_joint_tree(instance, branching=3, rule: str = "gauss_legendre",
                     budget: int = NODE_BUDGET) -> ScenarioTree:
    """Interleave zeta_t and xi_{t+1} layers for t = 0..T.

    branching is either one count per dimension for every layer, or a list
    of (n_xi, n_zeta) pairs for stages 0..T (n_xi of stage 0 is unused).
    Counts are per dimension, so a layer holds n**dim atoms.
    """
    T = instance.T
    exo, endo = instance.exogenous, instance.endogenous
    pairs = _as_pairs(branching, T)
    # size check before allocating anything
    sizes, n = [1], 1
    for t in range(T + 1):
        n *= _layer_size(endo.laws[t], pairs[t][1], endo.laws[t].dim)
        sizes.append(n)
        if t < T:
            n *= _exo_layer_size(exo, t + 1, pairs[t + 1][0])
            sizes.append(n)
    _check_budget(sizes, budget)

    kinds, stages, br = ["root"], [0], [1]
    values, cond = [np.zeros((1, 0))], [np.ones(1)]
    hist = np.zeros((1, 0, exo.dim))  # xi history attached to the current layer
    for t in range(T + 1):
        dz = discretize(endo.laws[t], pairs[t][1], rule)
        N = len(cond[-1])
        kinds.append("endo"); stages.append(t); br.append(dz.size)
        values.append(np.tile(dz.atoms, (N, 1)))
        cond.append(np.tile(dz.weights, N))
        hist = hist.repeat(dz.size, axis=0)
        if t < T:
            atoms, w = _discretize_exo_layer(exo, t + 1, hist, pairs[t + 1][0], rule)
            b = atoms.shape[1]
            kinds.append("exo"); stages.append(t + 1); br.append(b)
            values.append(atoms.reshape(-1, exo.dim))
            cond.append(np.asarray(w).reshape(-1).copy())
            hist = np.concatenate([hist.repeat(b, axis=0), values[-1][:, None, :]], axis=1)
    tree = ScenarioTree(kinds, stages, br, values, cond, T=T)
    tree._rebuild_hist()
    return tree


def build_exo_tree(process: ExogenousProcess, n_per_dim=3, rule: str = "gauss_legendre",
                   budget: int = NODE_BUDGET) -> ScenarioTree:
    """Tree over the exogenous layers only: root, xi_1, ..., xi_T."""
    T = process.T
    ns = [int(n_per_dim)] * T if np.isscalar(n_per_dim) else [int(u) for u in n_per_dim]
    sizes, n = [1], 1
    for t in range(T):
        n *= _exo_layer_size(process, t + 1, ns[t])
        sizes.append(n)
    _check_budget(sizes, budget)
    kinds, stages, br = ["root"], [0], [1]
    values, cond = [np.zeros((1, 0))], [np.ones(1)]
    hist = np.zeros((1, 0, process.dim))
    for t in range(1, T + 1):
        atoms, w = _discretize_exo_layer(process, t, hist, ns[t - 1], rule)
        b = atoms.shape[1]
        kinds.append("exo"); stages.append(t); br.append(b)
        values.append(atoms.reshape(-1, process.dim))
        cond.append(np.asarray(w).reshape(-1).copy())
        hist = np.concatenate([hist.repeat(b, axis=0), values[-1][:, None, :]], axis=1)
    tree = ScenarioTree(kinds, stages, br, values, cond, T=T)
    tree._rebuild_hist()
    return tree
