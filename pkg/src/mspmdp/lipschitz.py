"""Coefficient recursions that turn regularity moduli into stability constants.

Stage-indexed tables are plain lists with the stage as index (entries that
do not exist for a stage are 0).  Where the uniform-modulus formulas use a
single L_C, L_S or L_g, the maximum over stages is taken.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidModulus, MissingRegularity, SlaterViolation
from .model import RegularityData

CLOSED_FORM_TOL = 1e-9


@dataclass
class ConstantTable:
    T: int
    L: list = field(default_factory=list)          # value-function moduli, index 1..T (+ T+1 = 0)
    L_X3: list = field(default_factory=list)       # A L_g,t / rho, index 0..T
    L_X: list = field(default_factory=list)        # feasible-set recursion, index 0..T
    l_s: list = field(default_factory=list)        # state moduli, index 1..T+1
    roots: Optional[tuple] = None
    L_hat: list = field(default_factory=list)      # index 1..T
    H: list = field(default_factory=list)          # index 0..T
    L_Xtj: list = field(default_factory=list)      # (T+1)x(T+1), lower triangle j < t
    L_theta: Optional[float] = None
    L_sigma1: Optional[float] = None
    L_sigma2: Optional[float] = None
    L_sigma: Optional[float] = None
    L_X_max: Optional[float] = None
    L_v: list = field(default_factory=list)        # index 1..T+1
    L_xi: list = field(default_factory=list)       # index 1..T
    L_Q: list = field(default_factory=list)        # index 1..T+1

    def to_dict(self):
        return asdict(self)


def _check_rho(reg: RegularityData):
    if reg.rho is None or not reg.rho > 0:
        raise SlaterViolation(f"Slater margin must be positive, got {reg.rho}")
    if reg.A is None:
        raise MissingRegularity("feasible-set diameter A is missing")
    if reg.L_C is None or reg.L_S is None or reg.L_g is None:
        raise MissingRegularity("moduli L_C, L_S, L_g are required")


def _stage(seq, t, T):
    """Per-stage entry with a scalar broadcast; seq covers stages 0..T."""
    seq = tuple(seq)
    if len(seq) == 1:
        return seq[0]
    if len(seq) != T + 1:
        raise MissingRegularity(f"expected {T + 1} per-stage moduli, got {len(seq)}")
    return seq[t]


def slater_ratio(reg: RegularityData, t: int, T: int) -> float:
    """A L_g,t / rho."""
    return reg.A * _stage(reg.L_g, t, T) / reg.rho


def value_function_constants(reg: RegularityData, T: int) -> dict:
    """L_t for t = 1..T plus L_{T+1} = 0 and the per-stage L_X,t = A L_g,t / rho."""
    _check_rho(reg)
    LX = [0.0] + [slater_ratio(reg, t, T) for t in range(1, T + 1)]
    L = [0.0] * (T + 2)
    for t in range(T, 0, -1):
        LS, LC = _stage(reg.L_S, t, T), _stage(reg.L_C, t, T)
        L[t] = (LC + L[t + 1]) * LS + LX[t] + LX[t] * LS
    return {"L": L, "L_X": LX}


def _feasible_recursion(a: float, LS: float, T: int):
    LX = [0.0] * (T + 1)
    ls = [0.0] * (T + 2)
    for t in range(1, T + 1):
        LX[t] = a * (ls[t] + LX[t - 1] + 1.0)
        ls[t + 1] = LS * (ls[t] + LX[t] + 1.0)
    return LX, ls


def feasible_set_closed_form(a: float, LS: float, t: int):
    """L_X,t from the characteristic roots of r^2 - (a + L_S + a L_S) r + a L_S.

    Returns (value, roots); roots is None on the branch 1 - a - L_S = 0.
    """
    if t == 0:
        return 0.0, None
    den = 1.0 - a - LS
    if abs(den) < 1e-14:
        q = a * LS
        if abs(1 - q) < 1e-14:
            raise ValueError("degenerate characteristic equation")
        return a * a * LS / (1 - q) ** 2 * (q ** t - 1) + a * t / (1 - q), None
    p = a + LS + a * LS
    disc = np.sqrt(p * p - 4 * a * LS)
    r1, r2 = (p + disc) / 2, (p - disc) / 2
    c = a / den
    if abs(r1 - r2) < 1e-300:  # only when a = L_S = 0
        return 0.0, (r1, r2)
    val = c / (r1 - r2) * ((r2 - 1) * r1 ** (t + 1) - (r1 - 1) * r2 ** (t + 1)) + c
    return float(val), (float(r1), float(r2))


def feasible_set_constants(reg: RegularityData, T: int, check: bool = True) -> dict:
    """L_X,t and l_s,t by the feasible-set recursion (uniform a and L_S),
    cross-checked against the closed form."""
    _check_rho(reg)
    a = reg.A * reg.Lg / reg.rho
    LS = reg.Ls
    LX, ls = _feasible_recursion(a, LS, T)
    roots = None
    for t in range(1, T + 1):
        cf, roots = feasible_set_closed_form(a, LS, t)
        if check and abs(cf - LX[t]) > CLOSED_FORM_TOL * max(1.0, abs(LX[t])):
            raise ArithmeticError(f"closed form {cf} disagrees with recursion {LX[t]} at t={t}")
    return {"L_X": LX, "l_s": ls, "roots": roots, "a": a}


def endogenous_coeffs(reg: RegularityData, T: int) -> dict:
    """L_hat_t, the triangular L_X,t,j table and H_t for the zeta-perturbation bounds."""
    _check_rho(reg)
    vf = value_function_constants(reg, T)
    L, LX = vf["L"], vf["L_X"]
    LC, LS = reg.Lc, reg.Ls
    L_hat = [0.0] * (T + 1)
    for t in range(1, T + 1):
        L_hat[t] = LC * LS + LC * LX[t] + LC + L[t + 1] * LS + L[t + 1] * LX[t]
    X = np.zeros((T + 1, T + 1))
    for j in range(T):
        for t in range(j + 1, T + 1):
            a = slater_ratio(reg, t, T)
            inner = sum(LS ** (t - 1 - k) * X[k, j] for k in range(j + 1, t))
            X[t, j] = a * (X[t - 1, j] + LS ** (t - j) + inner)
    H = [0.0] * (T + 1)
    for t in range(T):
        proj = 1.0 + sum(X[k, t] for k in range(t + 1, T + 1))
        proj += sum(LS ** k * X[l - k, t]
                    for k in range(1, T - t) for l in range(k + t + 1, T + 1))
        proj += sum(LS ** k for k in range(1, T - t + 1))
        H[t] = float(L_hat[t + 1] + LC * proj)
    H[T] = LC
    return {"L_hat": L_hat, "H": H, "L_Xtj": X.tolist(), "L": L}


def exogenous_global_coeffs(reg: RegularityData, T: int) -> dict:
    """L_theta, L_Sigma1, L_Sigma2, L_Sigma and L_X = max_t L_X,t (uniform moduli).

    The double sums are evaluated directly, which covers L_S = 1 and L_S != 1
    with one expression.
    """
    fs = feasible_set_constants(reg, T)
    LXm = max(fs["L_X"])
    LC, LS = reg.Lc, reg.Ls
    geo = sum(LS ** k for t in range(1, T + 1) for k in range(1, t))
    L_theta = T * LC * (LXm + 1) + LC * (LXm + 1) * geo
    s1 = LC * (T + 1 + sum(LS ** k for t in range(1, T + 1) for k in range(1, t + 1)))
    s2 = LC * (T + 1 + T * (T + 1) / 2)
    return {"L_theta": L_theta, "L_sigma1": s1, "L_sigma2": s2,
            "L_sigma": max(s1, s2), "L_X": LXm}


def stagewise_coeffs(reg: RegularityData, L_Q: Optional[Sequence[float]], T: int) -> dict:
    """L_v,t and L_xi,t for t = 1..T.  L_Q[t-1] is the modulus for stage t."""
    _check_rho(reg)
    if L_Q is None:
        L_Q = reg.L_Q
    if L_Q is None:
        raise MissingRegularity("conditional-law moduli L_Q are required")
    LQ = [0.0] + [float(q) for q in L_Q] + [0.0]
    if len(LQ) < T + 2:
        raise MissingRegularity(f"need {T} L_Q entries, got {len(L_Q)}")
    LQ = LQ[:T + 1] + [0.0]
    fs = feasible_set_constants(reg, T)
    LX = fs["L_X"]
    Lv = [0.0] * (T + 2)
    Lxi = [0.0] * (T + 1)
    for t in range(T, 0, -1):
        LC, LS = _stage(reg.L_C, t, T), _stage(reg.L_S, t, T)
        a = slater_ratio(reg, t, T)
        Lv[t] = (LC + max(Lv[t + 1], Lv[t + 1] * LQ[t + 1])) * (a + 1) * (LS + 1)
        Lxi[t] = LC * (LX[t] + 1) + Lv[t + 1] * (LX[t] + LQ[t + 1])
    return {"L_v": Lv, "L_xi": Lxi, "L_Q": LQ, "L_X": LX}


def growth_from_strong_convexity(mu: float):
    if not mu > 0:
        raise InvalidModulus(f"strong-convexity modulus must be positive, got {mu}")
    return float(mu), 2.0


def constant_table(reg: RegularityData, T: int) -> ConstantTable:
    """Every coefficient that the inputs allow; stagewise entries need L_Q."""
    vf = value_function_constants(reg, T)
    fs = feasible_set_constants(reg, T)
    en = endogenous_coeffs(reg, T)
    ex = exogenous_global_coeffs(reg, T)
    tab = ConstantTable(T=T, L=vf["L"], L_X3=vf["L_X"], L_X=fs["L_X"], l_s=fs["l_s"],
                        roots=fs["roots"], L_hat=en["L_hat"], H=en["H"], L_Xtj=en["L_Xtj"],
                        L_theta=ex["L_theta"], L_sigma1=ex["L_sigma1"],
                        L_sigma2=ex["L_sigma2"], L_sigma=ex["L_sigma"], L_X_max=ex["L_X"])
    if reg.L_Q is not None:
        sw = stagewise_coeffs(reg, reg.L_Q, T)
        tab.L_v, tab.L_xi, tab.L_Q = sw["L_v"], sw["L_xi"], sw["L_Q"]
    return tab
