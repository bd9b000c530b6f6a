"""JSON problem specs (schema version 1) and deterministic number rendering."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .model import AffineCost, ProblemInstance, RegularityData, StageSpec, family_from_dict
from .stochastic import EndogenousProcess, ExogenousProcess, law_from_dict, stage_entry_from_dict

SCHEMA_VERSION = 1
SIG_DIGITS = 10


def _round(obj):
    if isinstance(obj, float) or isinstance(obj, np.floating):
        v = float(obj)
        if not math.isfinite(v):
            return None
        r = float(f"{v:.{SIG_DIGITS}g}")
        return 0.0 if r == 0 else r  # drop negative zero
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    """Sorted keys, 10 significant digits, trailing newline: byte-stable output."""
    return json.dumps(_round(obj), indent=1, sort_keys=True) + "\n"


def instance_to_dict(inst: ProblemInstance) -> dict:
    stages = []
    for st in inst.stages:
        d = {"cost": st.cost.to_dict(), "constraints": [g.to_dict() for g in st.constraints],
             "transition": st.transition.to_dict(),
             "dims": {"state": st.n_state, "decision": st.n_dec, "xi": st.n_xi, "zeta": st.n_zeta}}
        if st.slater_point is not None:
            d["slater_point"] = st.slater_point.tolist()
        stages.append(d)
    reg = {k: v for k, v in inst.regularity.to_dict().items() if v is not None}
    return {"schema_version": SCHEMA_VERSION, "name": inst.name, "horizon": inst.T,
            "initial_state": inst.s0.tolist(), "separable": inst.separable, "stages": stages,
            "exogenous": inst.exogenous.to_dict(), "endogenous": inst.endogenous.to_dict(),
            "regularity": reg}


def _zero_cost(dims) -> AffineCost:
    return AffineCost(np.zeros(dims["state"]), np.zeros(dims["decision"]),
                      np.zeros((1, dims["xi"])), np.zeros(dims["zeta"]), 0.0)


def instance_from_dict(d: dict) -> ProblemInstance:
    """Inverse of instance_to_dict; a stage without "cost" has zero cost."""
    ver = d.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {ver!r}")
    stages = []
    for t, sd in enumerate(d["stages"]):
        dims = sd["dims"]
        cost = family_from_dict(sd["cost"]) if sd.get("cost") else _zero_cost(dims)
        stages.append(StageSpec(t, cost,
                                [family_from_dict(g) for g in sd.get("constraints", [])],
                                family_from_dict(sd["transition"]), dims["state"], dims["decision"],
                                dims["xi"], dims["zeta"], sd.get("slater_point")))
    exo = ExogenousProcess([stage_entry_from_dict(e) for e in d["exogenous"]])
    endo = EndogenousProcess([law_from_dict(l) for l in d["endogenous"]])
    return ProblemInstance(int(d["horizon"]), d["initial_state"], stages, exo, endo,
                           RegularityData.from_dict(d.get("regularity", {})),
                           bool(d.get("separable", False)), d.get("name", ""))


def save_instance(inst: ProblemInstance, path) -> None:
    Path(path).write_text(dumps(instance_to_dict(inst)))


def load_instance(path) -> ProblemInstance:
    return instance_from_dict(json.loads(Path(path).read_text()))


def load_law(path):
    return law_from_dict(json.loads(Path(path).read_text()))
