"""Command-line front end.

    mspmdp solve spec.json
    mspmdp metric kantorovich 'uniform(-2,0,2d)' 'uniform(-1.98,0,2d)'
    mspmdp constants spec.json
    mspmdp bounds base.json perturbed.json
    mspmdp reproduce 4.2a
    mspmdp compare
    mspmdp export 4.3 --perturbed -o spec.json
"""
from __future__ import annotations

import argparse
import json
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import MspMdpError, UnknownExample

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _g(v) -> str:
    """Human rendering: 4 significant digits."""
    if isinstance(v, (list, tuple)):
        return "(" + ", ".join(_g(u) for u in v) + ")"
    if v is None:
        return "-"
    return f"{v:.4g}"


# ------------------------------------------------------------------ laws


_UNIFORM = re.compile(r"^uniform\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*(?:,\s*(\d+)d)?\s*\)$")


def parse_law(text: str):
    """'uniform(lo,hi[,kd])' or a path to a JSON law."""
    from .stochastic import UniformBox, law_from_dict

    m = _UNIFORM.match(text.strip())
    if m:
        lo, hi, k = float(m.group(1)), float(m.group(2)), int(m.group(3) or 1)
        return UniformBox(np.full(k, lo), np.full(k, hi))
    p = Path(text)
    if not p.exists():
        raise UsageError(f"not a law spec or file: {text}")
    return law_from_dict(json.loads(p.read_text()))


def _load_instance(path):
    from .serialize import load_instance

    if not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    return load_instance(path)


# ------------------------------------------------------------------ reproduce


@dataclass
class Check:
    name: str
    value: float
    expected: Optional[float]
    tol: Optional[float]
    source: str
    passed: Optional[bool] = None  # None: reported, not asserted

    @classmethod
    def near(cls, name, value, ref, tol=None):
        tol = ref.tol if tol is None else tol
        return cls(name, float(value), float(ref.value), tol, ref.source,
                   bool(abs(value - ref.value) <= tol))

    @classmethod
    def holds(cls, name, value, ok, source):
        return cls(name, float(value), None, None, source, bool(ok))

    @classmethod
    def info(cls, name, value, source):
        return cls(name, float(value), None, None, source, None)


def _vector_checks(name, values, ref, tol=1e-12):
    return [Check(f"{name},{i}", v, e, tol, ref.source, bool(abs(v - e) <= tol))
            for i, (v, e) in enumerate(zip(values, ref.value), start=1)]


def _coeff_checks(fx, reg, T, keys):
    from .lipschitz import feasible_set_constants, stagewise_coeffs

    out = []
    fs = feasible_set_constants(reg, T)
    sw = stagewise_coeffs(reg, reg.L_Q, T)
    table = {"L_X": fs["L_X"][1:], "L_v": sw["L_v"][1:T + 1], "L_xi": sw["L_xi"][1:]}
    for k in keys:
        out += _vector_checks(k, table[k], fx.expected[k])
    return out, sw


def reproduce(example_id: str) -> list:
    """Recompute the reference numbers of a built-in example."""
    from .bounds import (comparison_bounds, endo_bounds, endogenous_distances,
                         exo_stagewise_bounds, stagewise_conditional_metric)
    from .examples import EXAMPLE_IDS, alpha_bound, alpha_regularity, build_example, listed_bound_42b
    from .lipschitz import endogenous_coeffs, stagewise_coeffs
    from .metrics import affine_coupling_moment, filtration_terms, nested_distance
    from .model import derive_regularity
    from .solver import analytic_solve, solve
    from .stochastic import build_exo_tree

    if example_id not in EXAMPLE_IDS:
        raise UnknownExample(example_id)
    base, fx = build_example(example_id)
    pert = fx.perturbed
    x = fx.expected
    checks = []
    if example_id == "inventory":
        from .oracle import brute_force_solve

        base, fx = build_example("inventory", horizon=2)
        pert = fx.perturbed
        va = brute_force_solve(base, grid_points_per_dim=21, branching=2, rule="gauss_legendre").value
        vb = brute_force_solve(pert, grid_points_per_dim=21, branching=2, rule="gauss_legendre").value
        reg = derive_regularity(base)
        en = endogenous_coeffs(reg, base.T)
        en["L_C"] = reg.Lc
        dK = endogenous_distances(base, pert)
        bnd = endo_bounds(en, dK, "value")
        checks.append(Check.info("grid value", va, "brute force"))
        checks.append(Check.info("grid value, perturbed", vb, "brute force"))
        checks.append(Check.holds("endogenous value bound >= gap", bnd, bnd >= abs(va - vb) - 1e-6,
                                  "dominance property"))
        return checks

    reg = derive_regularity(base)
    T = base.T
    ra, rb = solve(base, 3, "midpoint"), solve(pert, 3, "midpoint")
    gap = abs(ra.value - rb.value)
    cd = stagewise_conditional_metric(base.exogenous, pert.exogenous)
    if example_id != "4.3":
        checks.append(Check.near("value", ra.value, x["value"]))
        checks.append(Check.near("value, perturbed", rb.value, x["value_perturbed"]))
    if example_id == "4.1":
        checks.append(Check.near("gap", gap, x["gap"], 1e-3))
        checks += _vector_checks("conditional d_K", cd, x["dK"])
        sw = stagewise_coeffs(alpha_regularity(10), (0.0, 1.0), T)
        b10 = exo_stagewise_bounds(sw, cd, "value")
        checks.append(Check("stagewise bound, alpha=10", b10, alpha_bound(10), 1e-9,
                            "closed form in alpha", bool(abs(b10 - alpha_bound(10)) <= 1e-9)))
        checks.append(Check.holds("stagewise bound >= gap", b10, b10 >= gap - 1e-6, "dominance"))
        d = nested_distance(build_exo_tree(base.exogenous, 4, "midpoint"),
                            build_exo_tree(pert.exogenous, 4, "midpoint"))
        checks.append(Check.near("nested distance", d, x["nested_distance"]))
        nb = comparison_bounds("nested", {"L": x["L1_nested"].value, "beta": 1.0,
                                          "distance": x["nested_distance"].value})
        checks.append(Check.near("nested comparison bound", nb, x["nested_bound"]))
    elif example_id == "4.2a":
        cc, sw = _coeff_checks(fx, reg, T, ["L_X", "L_xi"])
        checks += cc
        checks.append(Check.near("stagewise bound", exo_stagewise_bounds(sw, cd, "value"),
                                 x["stagewise_bound"]))
        aa, ab = analytic_solve("4.2a", False), analytic_solve("4.2a", True)
        terms = [filtration_terms(p.policy, q.policy, p.tree, q.tree) for p, q in zip(aa.parts, ab.parts)]
        k = int(np.argmax([sum(t) for t in terms]))
        filt = sum(terms[k])
        checks.append(Check.near("filtration estimate", filt, x["filtration"]))
        checks.append(Check.near("filtration stage 1", terms[k][0], x["filtration_stage1"]))
        checks.append(Check.near("filtration stage 2", terms[k][1], x["filtration_stage2"]))
        w3 = affine_coupling_moment(base.exogenous, pert.exogenous, r=3, norm="lr")
        checks.append(Check.near("W3", w3, x["W3"], 1e-3))
        hrs = comparison_bounds("filtration", {"L": x["L_hrs"].value, "wasserstein": w3,
                                               "filtration": filt})
        checks.append(Check.near("filtration comparison bound", hrs, x["hrs_bound"]))
        checks.append(Check.holds("stagewise tighter than filtration comparison",
                                  exo_stagewise_bounds(sw, cd, "value"),
                                  exo_stagewise_bounds(sw, cd, "value") < hrs, "comparison"))
    elif example_id == "4.2b":
        cc, sw = _coeff_checks(fx, reg, T, ["L_X"])
        checks += cc
        listed = {"L_xi": [0.0, *x["listed_L_xi"].value]}
        lb = exo_stagewise_bounds(listed, cd, "value")
        checks.append(Check.near("stagewise bound (listed coefficients)", lb, x["stagewise_bound"]))
        checks.append(Check.info("L_v,2 by recursion", sw["L_v"][2], "listed value is 4"))
        checks.append(Check.info("L_xi,1 by recursion", sw["L_xi"][1], "listed value is 12"))
        checks.append(Check.info("stagewise bound by recursion", exo_stagewise_bounds(sw, cd, "value"),
                                 "recursion coefficients"))
        w3 = affine_coupling_moment(base.exogenous, pert.exogenous, r=3, norm="lr")
        hrs = comparison_bounds("filtration", {"L": 18.0, "wasserstein": w3, "filtration": 0.0})
        checks.append(Check.near("filtration comparison bound", hrs, x["hrs_bound"]))
        checks.append(Check.holds("listed bound equals 22/75", listed_bound_42b(),
                                  abs(listed_bound_42b() - 22 / 75) < 1e-15, "arithmetic"))
    elif example_id == "4.3":
        aa, ab = analytic_solve("4.3", False), analytic_solve("4.3", True)
        checks.append(Check.near("value (analytic policy)", aa.value, x["value"]))
        checks.append(Check.near("value, perturbed (analytic policy)", ab.value, x["value_perturbed"]))
        checks.append(Check.near("closed-form value", x["closed_form"].value, x["value"]))
        checks.append(Check("solver vs analytic", ra.value, aa.value, 5e-2, "generic solver",
                            bool(abs(ra.value - aa.value) <= 5e-2)))
        checks += _vector_checks("conditional d_K", cd, x["dK"])
        cc, sw = _coeff_checks(fx, reg, T, ["L_X", "L_v", "L_xi"])
        checks += cc
        b = exo_stagewise_bounds(sw, cd, "value")
        checks.append(Check.near("stagewise bound", b, x["stagewise_bound"]))
        checks.append(Check.holds("stagewise bound >= gap", b, b >= abs(aa.value - ab.value) - 1e-6,
                                  "dominance"))
    return checks


def _checks_table(checks) -> str:
    lines = ["| quantity | computed | expected | tol | result |", "|---|---|---|---|---|"]
    for c in checks:
        exp = "-" if c.expected is None else f"{c.expected:.6g}"
        tol = "-" if c.tol is None else f"{c.tol:.1g}"
        res = "info" if c.passed is None else ("PASS" if c.passed else "FAIL")
        lines.append(f"| {c.name} | {_g(c.value)} | {exp} | {tol} | {res} |")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ commands


def _cmd_solve(a, out):
    from .solver import SolverConfig, solve

    inst = _load_instance(a.spec)
    rep = solve(inst, a.branching, a.rule, SolverConfig(tolerance=a.tolerance))
    if a.format == "json":
        from .serialize import dumps
        out.write(dumps(rep.to_dict()))
        return EXIT_OK
    out.write(f"optimal value: {_g(rep.value)}\n")
    parts = rep.parts or [rep]
    x0 = np.concatenate([p.policy.decisions[0][0] for p in parts])
    out.write(f"stage-0 decision: {_g(list(x0))}\n")
    for t in range(1, inst.T + 1):
        xs = np.concatenate([np.asarray(p.policy.decisions[t]) for p in parts], axis=1) \
            if len({len(p.policy.decisions[t]) for p in parts}) == 1 else None
        if xs is not None:
            out.write(f"stage-{t} decisions: {len(xs)} nodes, range [{_g(float(xs.min()))}, {_g(float(xs.max()))}]\n")
    return EXIT_OK


def _cmd_metric(a, out):
    from .bounds import law_distance
    from .metrics import FortetMourier, InfNorm, Power, nested_distance, ot_distance
    from .stochastic import UniformBox, build_exo_tree, discretize

    if a.kind == "nested":
        pa, pb = _load_instance(a.a).exogenous, _load_instance(a.b).exogenous
        v = nested_distance(build_exo_tree(pa, a.atoms, a.rule), build_exo_tree(pb, a.atoms, a.rule))
    else:
        P, Q = parse_law(a.a), parse_law(a.b)
        if P.dim != Q.dim:
            raise UsageError("laws live in different dimensions")
        if a.kind == "kantorovich" and not a.discretize:
            v = law_distance(P, Q, a.atoms)
        else:
            cost = {"kantorovich": InfNorm(), "wasserstein": Power(a.r),
                    "fortet-mourier": FortetMourier(a.p)}[a.kind]
            dp = discretize(P, a.atoms, a.rule) if isinstance(P, UniformBox) else P
            dq = discretize(Q, a.atoms, a.rule) if isinstance(Q, UniformBox) else Q
            v = ot_distance(dp, dq, cost)
    out.write(f"{v:.10g}\n")
    return EXIT_OK


def _cmd_constants(a, out):
    from .lipschitz import constant_table
    from .model import derive_regularity
    from .serialize import dumps

    inst = _load_instance(a.spec)
    tab = constant_table(derive_regularity(inst), inst.T)
    if a.format == "json":
        out.write(dumps(tab.to_dict()))
        return EXIT_OK
    rows = [("L_t", tab.L[1:inst.T + 1]), ("L_X,t", tab.L_X[1:]), ("l_s,t", tab.l_s[1:]),
            ("L_hat_t", tab.L_hat[1:]), ("H_t", tab.H), ("L_theta", tab.L_theta),
            ("L_Sigma", tab.L_sigma), ("L_v,t", tab.L_v[1:inst.T + 1]), ("L_xi,t", tab.L_xi[1:])]
    out.write("| constant | value |\n|---|---|\n")
    for k, v in rows:
        out.write(f"| {k} | {_g(v)} |\n")
    return EXIT_OK


def _cmd_bounds(a, out):
    from .bounds import BoundConfig, bound_report

    rep = bound_report(_load_instance(a.base), _load_instance(a.perturbed),
                       BoundConfig(branching=a.branching, rule=a.rule))
    out.write({"json": rep.to_json, "markdown": rep.to_markdown, "csv": rep.to_csv}[a.format]())
    return EXIT_OK


def _cmd_reproduce(a, out):
    t0 = time.perf_counter()
    checks = reproduce(a.example)
    if a.format == "json":
        from .serialize import dumps
        out.write(dumps([c.__dict__ for c in checks]))
    else:
        out.write(_checks_table(checks))
        out.write(f"{a.example}: {sum(c.passed is True for c in checks)} passed, "
                  f"{sum(c.passed is False for c in checks)} failed "
                  f"({time.perf_counter() - t0:.1f} s)\n")
    return EXIT_FAIL if any(c.passed is False for c in checks) else EXIT_OK


def compare_rows() -> list:
    """Our stagewise bound against the nested and filtration comparison bounds."""
    from .bounds import comparison_bounds, exo_stagewise_bounds, stagewise_conditional_metric
    from .examples import build_example
    from .lipschitz import stagewise_coeffs
    from .metrics import affine_coupling_moment
    from .model import derive_regularity

    rows = []
    for ex in ("4.1", "4.2a", "4.2b"):
        base, fx = build_example(ex)
        pert, x = fx.perturbed, fx.expected
        cd = stagewise_conditional_metric(base.exogenous, pert.exogenous)
        if ex == "4.2b":
            ours = exo_stagewise_bounds({"L_xi": [0.0, *x["listed_L_xi"].value]}, cd)
        else:
            reg = derive_regularity(base)
            ours = exo_stagewise_bounds(stagewise_coeffs(reg, reg.L_Q, base.T), cd)
        w3 = affine_coupling_moment(base.exogenous, pert.exogenous, r=3, norm="lr")
        nested = comparison_bounds("nested", {"L": 4.0, "beta": 1.0, "distance": 0.04}) if ex == "4.1" else None
        filt = x["filtration"].value if "filtration" in x else 0.0
        hrs = comparison_bounds("filtration", {"L": 18.0, "wasserstein": w3, "filtration": filt})
        gap = abs(x["value"].value - x["value_perturbed"].value)
        rows.append({"example": ex, "gap": gap, "stagewise": ours, "nested": nested, "filtration": hrs})
    return rows


def _cmd_compare(a, out):
    rows = compare_rows()
    if a.format == "json":
        from .serialize import dumps
        out.write(dumps(rows))
        return EXIT_OK
    if a.format == "csv":
        out.write("example,gap,stagewise,nested,filtration\n")
        for r in rows:
            out.write(",".join([r["example"]] + [("" if r[k] is None else f"{r[k]:.10g}")
                                                  for k in ("gap", "stagewise", "nested", "filtration")]) + "\n")
        return EXIT_OK
    out.write("| example | gap | stagewise bound | nested comparison | filtration comparison |\n")
    out.write("|---|---|---|---|---|\n")
    for r in rows:
        out.write(f"| {r['example']} | {_g(r['gap'])} | {_g(r['stagewise'])} | {_g(r['nested'])} "
                  f"| {_g(r['filtration'])} |\n")
    return EXIT_OK


def _cmd_export(a, out):
    from .examples import build_example
    from .serialize import dumps, instance_to_dict

    inst, _ = build_example(a.example, a.perturbed)
    text = dumps(instance_to_dict(inst))
    if a.output:
        Path(a.output).write_text(text)
    else:
        out.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mspmdp", description="Nested stochastic programs on scenario trees: "
                                           "solve, measure distances, evaluate stability bounds.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, fmts=("markdown", "json")):
        sp.add_argument("--format", choices=fmts, default=fmts[0])
        sp.add_argument("--branching", type=int, default=3, help="atoms per dimension per layer")
        sp.add_argument("--rule", choices=("midpoint", "gauss_legendre"), default="midpoint")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized steps")

    s = sub.add_parser("solve", help="solve a problem spec")
    s.add_argument("spec")
    s.add_argument("--tolerance", type=float, default=1e-6)
    common(s)
    s = sub.add_parser("metric", help="distance between two laws or two processes")
    s.add_argument("kind", choices=("kantorovich", "wasserstein", "fortet-mourier", "nested"))
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--atoms", type=int, default=20, help="quadrature atoms per dimension")
    s.add_argument("--rule", choices=("midpoint", "gauss_legendre"), default="midpoint")
    s.add_argument("--r", type=float, default=1.0)
    s.add_argument("--p", type=float, default=1.0)
    s.add_argument("--discretize", action="store_true", help="skip closed forms")
    s = sub.add_parser("constants", help="stability constants of a problem spec")
    s.add_argument("spec")
    common(s)
    s = sub.add_parser("bounds", help="bound report for a base/perturbed pair")
    s.add_argument("base")
    s.add_argument("perturbed")
    common(s, ("markdown", "json", "csv"))
    s = sub.add_parser("reproduce", help="recompute a built-in example's reference numbers")
    s.add_argument("example")
    common(s)
    s = sub.add_parser("compare", help="our bounds against the comparison bounds")
    common(s, ("markdown", "json", "csv"))
    s = sub.add_parser("export", help="write a built-in example as a problem spec")
    s.add_argument("example")
    s.add_argument("--perturbed", action="store_true")
    s.add_argument("-o", "--output")
    return p


COMMANDS = {"solve": _cmd_solve, "metric": _cmd_metric, "constants": _cmd_constants,
            "bounds": _cmd_bounds, "reproduce": _cmd_reproduce, "compare": _cmd_compare,
            "export": _cmd_export}


def run_command(argv, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        err.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except UnknownExample as exc:
        err.write(f"unknown example: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (MspMdpError, ValueError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_FAIL


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
