"""Problem representation for integrated MSP-MDP instances.

Every family evaluates on batches: the trailing axis carries the vector
components and any leading axes are broadcast.  The norm is the infinity
norm throughout, and Lipschitz moduli follow the block convention

    |f(u) - f(v)| <= L * sum_blocks ||u_block - v_block||_inf

where the blocks are the separate arguments (state, decision, history, draw).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .errors import EvaluatorError, InvalidDimension, MissingRegularity, SlaterViolation

FEAS_TOL = 1e-9


def _vec(v, name="vector") -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.ndim != 1:
        raise InvalidDimension(f"{name} must be one-dimensional, got shape {a.shape}")
    return a


def _mat(m, name="matrix") -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise InvalidDimension(f"{name} must be two-dimensional, got shape {a.shape}")
    return a


def _opnorm_inf(m: np.ndarray) -> float:
    # induced infinity norm = max absolute row sum
    return float(np.abs(m).sum(axis=1).max()) if m.size else 0.0


# ---------------------------------------------------------------- families


@dataclass(frozen=True, eq=False)
class AffineCost:
    """C = a_s.s + a_x.x + sum_k a_xi[k].xi_{t-h+1+k} + a_z.zeta + b."""

    a_s: np.ndarray
    a_x: np.ndarray
    a_xi: np.ndarray
    a_z: np.ndarray
    b: float = 0.0
    tag = "AffineCost"

    def __post_init__(self):
        object.__setattr__(self, "a_s", _vec(self.a_s, "a_s"))
        object.__setattr__(self, "a_x", _vec(self.a_x, "a_x"))
        object.__setattr__(self, "a_z", _vec(self.a_z, "a_z"))
        a_xi = np.asarray(self.a_xi, dtype=float)
        if a_xi.ndim == 1:
            a_xi = a_xi.reshape(1, -1)
        if a_xi.ndim != 2:
            raise InvalidDimension("a_xi must be (history length, xi dim)")
        object.__setattr__(self, "a_xi", a_xi)
        object.__setattr__(self, "b", float(self.b))

    def value(self, s, x, xi_hist, zeta):
        out = s @ self.a_s + x @ self.a_x + zeta @ self.a_z + self.b
        if xi_hist is not None and self.a_xi.size and xi_hist.shape[-2] > 0:
            h = min(self.a_xi.shape[0], xi_hist.shape[-2])
            w = self.a_xi[self.a_xi.shape[0] - h:]
            out = out + np.einsum("...km,km->...", xi_hist[..., -h:, :], w)
        return out

    def lipschitz(self) -> float:
        return max(np.abs(self.a_s).sum(), np.abs(self.a_x).sum(),
                   np.abs(self.a_xi).sum(), np.abs(self.a_z).sum())

    monotone = property(lambda self: bool(np.all(self.a_s >= 0)))

    def to_dict(self):
        return {"family": self.tag, "a_s": self.a_s.tolist(), "a_x": self.a_x.tolist(),
                "a_xi": self.a_xi.tolist(), "a_z": self.a_z.tolist(), "b": self.b}


@dataclass(frozen=True, eq=False)
class BoxConstraint:
    """Per-coordinate residual |x - c|^alpha - r^alpha with c, r the box center and radius."""

    lower: np.ndarray
    upper: np.ndarray
    exponent: int = 1
    tag = "BoxConstraint"

    def __post_init__(self):
        lo, hi = _vec(self.lower, "lower"), _vec(self.upper, "upper")
        if lo.shape != hi.shape:
            raise InvalidDimension("box bounds differ in length")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        a = int(self.exponent)
        if a < 1 or (a != 1 and a % 2):
            raise ValueError("box exponent must be 1 or an even positive integer")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "exponent", a)

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self):
        return 0.5 * (self.upper - self.lower)

    @property
    def diameter(self) -> float:
        return float(np.max(self.upper - self.lower))

    def residual(self, x, x_prev=None, s=None, xi_hist=None):
        a = self.exponent
        return np.abs(x - self.center) ** a - self.radius ** a

    def lipschitz(self) -> float:
        return 0.0

    def to_dict(self):
        return {"family": self.tag, "lower": self.lower.tolist(),
                "upper": self.upper.tolist(), "exponent": self.exponent}


@dataclass(frozen=True, eq=False)
class AffineInequality:
    """A x + B x_prev + C s + D xi_t - kappa <= 0."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    kappa: np.ndarray
    tag = "AffineInequality"

    def __post_init__(self):
        for k in "ABCD":
            object.__setattr__(self, k, _mat(getattr(self, k), k))
        r = self.A.shape[0]
        kap = np.asarray(self.kappa, dtype=float)
        kap = np.full(r, float(kap)) if kap.ndim == 0 else _vec(kap, "kappa")
        object.__setattr__(self, "kappa", kap)
        if any(getattr(self, k).shape[0] != r for k in "BCD") or kap.shape[0] != r:
            raise InvalidDimension("constraint blocks disagree on the number of rows")

    def residual(self, x, x_prev, s, xi_hist):
        out = x @ self.A.T + x_prev @ self.B.T + s @ self.C.T - self.kappa
        if xi_hist is not None and xi_hist.shape[-2] > 0:
            out = out + xi_hist[..., -1, :] @ self.D.T
        return out

    def lipschitz(self) -> float:
        return max(_opnorm_inf(self.B), _opnorm_inf(self.C), _opnorm_inf(self.D))

    def to_dict(self):
        return {"family": self.tag, "A": self.A.tolist(), "B": self.B.tolist(),
                "C": self.C.tolist(), "D": self.D.tolist(), "kappa": self.kappa.tolist()}


@dataclass(frozen=True, eq=False)
class QuadraticInequality:
    """Per coordinate x_i^2 - x_prev_i + s_i + xi_i - kappa <= 0."""

    kappa: float = 11.0
    tag = "QuadraticInequality"

    def __post_init__(self):
        object.__setattr__(self, "kappa", float(self.kappa))

    def residual(self, x, x_prev, s, xi_hist):
        out = x * x - x_prev + s - self.kappa
        if xi_hist is not None and xi_hist.shape[-2] > 0:
            out = out + xi_hist[..., -1, :]
        return out

    def lipschitz(self) -> float:
        return 1.0

    def to_dict(self):
        return {"family": self.tag, "kappa": self.kappa}


@dataclass(frozen=True, eq=False)
class AffineTransition:
    """s' = M1 s + M2 x + N1 xi_t + N2 zeta_t."""

    M1: np.ndarray
    M2: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    tag = "AffineTransition"

    def __post_init__(self):
        for k in ("M1", "M2", "N1", "N2"):
            object.__setattr__(self, k, _mat(getattr(self, k), k))
        r = self.M1.shape[0]
        if any(getattr(self, k).shape[0] != r for k in ("M2", "N1", "N2")):
            raise InvalidDimension("transition blocks disagree on the output dimension")

    def apply(self, s, x, xi, zeta):
        out = s @ self.M1.T + x @ self.M2.T + zeta @ self.N2.T
        if xi is not None:
            out = out + xi @ self.N1.T
        return out

    def lipschitz(self) -> float:
        return max(_opnorm_inf(self.M1), _opnorm_inf(self.M2),
                   _opnorm_inf(self.N1), _opnorm_inf(self.N2))

    monotone = property(lambda self: bool(np.all(self.M1 >= 0)))

    def to_dict(self):
        return {"family": self.tag, "M1": self.M1.tolist(), "M2": self.M2.tolist(),
                "N1": self.N1.tolist(), "N2": self.N2.tolist()}


# Custom families are resolved by name so that specs stay serializable.
CUSTOM_REGISTRY: dict[str, Callable[..., Callable]] = {}


def register_custom(name: str):
    def deco(factory):
        CUSTOM_REGISTRY[name] = factory
        return factory
    return deco


@dataclass(frozen=True, eq=False)
class Custom:
    """User evaluator looked up in CUSTOM_REGISTRY.

    role is one of "cost", "constraint", "transition".  constants must carry
    the modulus for that role ("L_C", "L_g" or "L_S"); nothing is estimated.
    """

    role: str
    name: str
    params: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    tag = "Custom"

    def __post_init__(self):
        if self.role not in ("cost", "constraint", "transition"):
            raise ValueError(f"unknown custom role {self.role!r}")
        if self.name not in CUSTOM_REGISTRY:
            raise EvaluatorError(f"no custom evaluator registered as {self.name!r}")
        object.__setattr__(self, "_fn", CUSTOM_REGISTRY[self.name](**self.params))

    def _call(self, *args):
        try:
            return np.asarray(self._fn(*args), dtype=float)
        except Exception as exc:  # evaluator bugs surface as one error type
            raise EvaluatorError(f"custom evaluator {self.name!r} failed: {exc}") from exc

    def value(self, s, x, xi_hist, zeta):
        return self._call(s, x, xi_hist, zeta)

    def residual(self, x, x_prev, s, xi_hist):
        return self._call(x, x_prev, s, xi_hist)

    def apply(self, s, x, xi, zeta):
        return self._call(s, x, xi, zeta)

    def lipschitz(self) -> float:
        key = {"cost": "L_C", "constraint": "L_g", "transition": "L_S"}[self.role]
        if key not in self.constants:
            raise MissingRegularity(f"custom {self.role} {self.name!r} lacks {key}")
        return float(self.constants[key])

    monotone = property(lambda self: bool(self.constants.get("monotone", False)))

    def to_dict(self):
        return {"family": self.tag, "role": self.role, "name": self.name,
                "params": dict(self.params), "constants": dict(self.constants)}


FAMILIES = {c.tag: c for c in (AffineCost, BoxConstraint, AffineInequality,
                               QuadraticInequality, AffineTransition, Custom)}


def family_from_dict(d: dict):
    d = dict(d)
    tag = d.pop("family")
    if tag not in FAMILIES:
        raise ValueError(f"unknown function family {tag!r}")
    return FAMILIES[tag](**d)


# ------------------------------------------------------------ containers


@dataclass(frozen=True, eq=False)
class StageSpec:
    t: int
    cost: Any
    constraints: tuple
    transition: Any
    n_state: int
    n_dec: int
    n_xi: int
    n_zeta: int
    slater_point: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.slater_point is not None:
            object.__setattr__(self, "slater_point", _vec(self.slater_point))

    @property
    def box(self) -> Optional[BoxConstraint]:
        for g in self.constraints:
            if isinstance(g, BoxConstraint):
                return g
        return None

    @property
    def parametric_constraints(self) -> tuple:
        return tuple(g for g in self.constraints if not isinstance(g, BoxConstraint))


@dataclass(frozen=True)
class RegularityData:
    """Moduli per stage (index 0..T) plus Slater margin, diameter and growth data.

    Any field may be None on input; derive_regularity fills what it can.
    L_Q[t-1] is the modulus of the conditional law of xi_t in the history.
    """

    L_C: Optional[tuple] = None
    L_S: Optional[tuple] = None
    L_g: Optional[tuple] = None
    rho: Optional[float] = None
    A: Optional[float] = None
    beta: Optional[float] = None
    nu: Optional[float] = None
    L_Q: Optional[tuple] = None
    moment_2T: bool = True
    moment_3T1: bool = True

    def __post_init__(self):
        for k in ("L_C", "L_S", "L_g", "L_Q"):
            v = getattr(self, k)
            if v is not None:
                v = tuple(float(u) for u in np.atleast_1d(v))
                if any(u < 0 for u in v):
                    raise ValueError(f"{k} entries must be nonnegative")
                object.__setattr__(self, k, v)
        if self.rho is not None and not self.rho > 0:
            raise SlaterViolation(f"Slater margin must be positive, got {self.rho}")
        if self.A is not None and not self.A > 0:
            raise ValueError("diameter bound A must be positive")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("growth constant beta must be positive")
        if self.nu is not None and not self.nu >= 1:
            raise ValueError("growth order nu must be at least 1")

    # scalar summaries used by the uniform-modulus formulas
    @property
    def Lc(self) -> float:
        return max(self.L_C)

    @property
    def Ls(self) -> float:
        return max(self.L_S)

    @property
    def Lg(self) -> float:
        return max(self.L_g)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def with_(self, **kw) -> "RegularityData":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    T: int
    s0: np.ndarray
    stages: tuple
    exogenous: Any
    endogenous: Any
    regularity: RegularityData = field(default_factory=RegularityData)
    separable: bool = False
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "s0", _vec(self.s0, "s0"))
        object.__setattr__(self, "stages", tuple(self.stages))
        if len(self.stages) != self.T + 1:
            raise InvalidDimension(f"need {self.T + 1} stages, got {len(self.stages)}")
        if self.stages[0].n_state != self.s0.shape[0]:
            raise InvalidDimension("initial state does not match stage-0 state dimension")
        for a, b in zip(self.stages[:-1], self.stages[1:]):
            out = _transition_out_dim(a.transition)
            if out is not None and out != b.n_state:
                raise InvalidDimension(f"stage {a.t} transition emits {out} states, "
                                       f"stage {b.t} expects {b.n_state}")
        if not isinstance(self.stages[0].box, BoxConstraint):
            raise InvalidDimension("stage-0 decision set must be a box")
        if len(self.endogenous.laws) != self.T + 1:
            raise InvalidDimension("endogenous process needs T+1 laws")
        if len(self.exogenous.stages) != self.T:
            raise InvalidDimension("exogenous process needs T stage entries")

    def stage(self, t) -> StageSpec:
        if not 0 <= t <= self.T:
            raise InvalidDimension(f"stage {t} outside 0..{self.T}")
        return self.stages[t]

    def with_processes(self, exogenous=None, endogenous=None, name=None):
        return replace(self, exogenous=exogenous or self.exogenous,
                       endogenous=endogenous or self.endogenous,
                       name=self.name if name is None else name)


def _transition_out_dim(fam):
    return fam.M1.shape[0] if isinstance(fam, AffineTransition) else None


# ------------------------------------------------------------ operations


def _check(arr, n, what):
    a = np.asarray(arr, dtype=float)
    if a.ndim == 0 or a.shape[-1] != n:
        raise InvalidDimension(f"{what} has trailing dimension {a.shape[-1:] }, expected {n}")
    return a


def _hist(xi_hist, m, t):
    if t == 0 or xi_hist is None:
        return None
    h = np.asarray(xi_hist, dtype=float)
    if h.ndim == 1:
        h = h.reshape(1, -1) if m > 1 or h.shape[0] == 1 else h.reshape(-1, 1)
    if h.shape[-1] != m:
        raise InvalidDimension(f"history rows have dimension {h.shape[-1]}, expected {m}")
    return h


def evaluate_cost(instance: ProblemInstance, t, s, x, xi_hist, zeta):
    st = instance.stage(t)
    s = _check(s, st.n_state, "state")
    x = _check(x, st.n_dec, "decision")
    z = _check(zeta, st.n_zeta, "endogenous draw")
    h = _hist(xi_hist, st.n_xi, t)
    out = st.cost.value(s, x, h, z)
    return float(out) if np.ndim(out) == 0 else out


def evaluate_transition(instance: ProblemInstance, t, s, x, xi_t, zeta_t):
    st = instance.stage(t)
    s = _check(s, st.n_state, "state")
    x = _check(x, st.n_dec, "decision")
    z = _check(zeta_t, st.n_zeta, "endogenous draw")
    xi = None if t == 0 or xi_t is None else _check(xi_t, st.n_xi, "exogenous draw")
    return st.transition.apply(s, x, xi, z)


def feasibility_residual(instance: ProblemInstance, t, s, x, x_prev, xi_hist):
    st = instance.stage(t)
    s = _check(s, st.n_state, "state")
    x = _check(x, st.n_dec, "decision")
    xp = _check(x_prev, instance.stages[t - 1].n_dec if t > 0 else st.n_dec, "previous decision")
    h = _hist(xi_hist, st.n_xi, t)
    if not st.constraints:
        return np.zeros(x.shape[:-1] + (0,))
    return np.concatenate([np.asarray(g.residual(x, xp, s, h), dtype=float)
                           for g in st.constraints], axis=-1)


def is_feasible(instance, t, s, x, x_prev, xi_hist, tol=FEAS_TOL) -> bool:
    r = feasibility_residual(instance, t, s, x, x_prev, xi_hist)
    return bool(np.all(r <= tol))


def _slater_margin(instance: ProblemInstance, probes: Optional[dict]) -> Optional[float]:
    margins = []
    for st in instance.stages:
        cons = st.parametric_constraints or (st.constraints if st.t > 0 else ())
        if not cons:
            continue
        xbar = st.slater_point if st.slater_point is not None else (
            st.box.center if st.box is not None else np.zeros(st.n_dec))
        pr = (probes or {}).get(st.t, {})
        s = np.asarray(pr.get("s", np.zeros(st.n_state)), dtype=float)
        xp = np.asarray(pr.get("x_prev", np.zeros(instance.stages[st.t - 1].n_dec)), dtype=float)
        h = np.asarray(pr.get("xi_hist", np.zeros((st.t, st.n_xi))), dtype=float).reshape(st.t, st.n_xi)
        r = np.concatenate([np.atleast_1d(g.residual(xbar, xp, s, h)) for g in cons])
        margins.append(-float(r.max()))
    if not margins:
        return None
    return min(margins)


def derive_regularity(instance: ProblemInstance, rho: Optional[float] = None,
                      probes: Optional[dict] = None) -> RegularityData:
    """Fill the moduli from the families; user-supplied values take precedence.

    rho comes from (in order) the argument, the instance's regularity block,
    or the worst constraint margin at each stage's Slater point evaluated at
    the probe inputs (zeros by default).  Boxes are only used for the margin
    when a stage has no other constraint.
    """
    user = instance.regularity
    L_C = user.L_C or tuple(st.cost.lipschitz() for st in instance.stages)
    L_S = user.L_S or tuple(st.transition.lipschitz() for st in instance.stages)
    if user.L_g is not None:
        L_g = user.L_g
    else:
        L_g = tuple(0.0 if st.t == 0 else max([g.lipschitz() for g in st.constraints] or [0.0])
                    for st in instance.stages)
    if user.A is not None:
        A = user.A
    else:
        diam = []
        for st in instance.stages:
            if st.box is not None:
                diam.append(st.box.diameter)
            else:
                for g in st.constraints:
                    if isinstance(g, Custom) and "diameter" in g.constants:
                        diam.append(float(g.constants["diameter"]))
        if not diam:
            raise MissingRegularity("no box or declared diameter bounds the decision sets")
        A = max(diam)
    if rho is None:
        rho = user.rho
    if rho is None:
        rho = _slater_margin(instance, probes)
        if rho is None:
            rho = 1.0  # no constraints at all: the margin never enters a formula
    if not rho > 0:
        raise SlaterViolation(f"declared Slater point leaves margin {rho} <= 0")
    L_Q = user.L_Q if user.L_Q is not None else instance.exogenous.lipschitz_moduli()
    return RegularityData(L_C=L_C, L_S=L_S, L_g=L_g, rho=float(rho), A=float(A),
                          beta=user.beta, nu=user.nu, L_Q=L_Q,
                          moment_2T=user.moment_2T, moment_3T1=user.moment_3T1)
