"""JSON file formats, schema validation and canonical serialization.

Output is canonical: sorted keys, floats rounded to 9 significant digits, so
identical runs give byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .cluster import Action, ActionCostModel, ClusterState, GpuState
from .model import Deployment, GpuConfig, ModelProfile, Placement, ServiceSpec
from .transition import TransitionPlan


class SchemaError(ValueError):
    """Malformed JSON or a document that violates its schema."""


_pos = {"type": "number", "exclusiveMinimum": 0}
_size = {"type": "integer", "enum": [1, 2, 3, 4, 7]}
_slot = {"type": "integer", "minimum": 0, "maximum": 6}


def _obj(props: dict, required=None) -> dict:
    return {"type": "object", "properties": props, "required": list(props if required is None else required),
            "additionalProperties": False}


_instance = _obj({"size": _size, "slot": _slot, "service": {"type": "string"}, "batch": {"type": "integer", "minimum": 1}})
_placement = _obj({"size": _size, "slot": _slot})

SCHEMAS: dict[str, dict] = {
    "profiles": _obj({"models": {"type": "array", "items": _obj({
        "name": {"type": "string"},
        "entries": {"type": "array", "items": _obj({
            "size": _size, "batch": {"type": "integer", "minimum": 1}, "throughput_rps": _pos, "p90_ms": _pos})},
    })}}),
    "slos": _obj({"services": {"type": "array", "items": _obj({
        "id": {"type": "string"}, "model": {"type": "string"}, "required_rps": _pos, "max_p90_ms": _pos})}}),
    "deployment": _obj({"gpus": {"type": "array", "items": _obj({
        "id": {"type": "string"}, "instances": {"type": "array", "items": _instance}})}}),
    "plan": _obj({"extra_gpu_budget": {"type": "integer", "minimum": 0}, "stages": {"type": "array", "items": {
        "type": "array", "items": _obj({
            "kind": {"enum": ["create", "delete", "migrate", "repartition"]},
            "gpu": {"type": "string"}, "target_gpu": {"type": "string"},
            "size": _size, "slot": _slot, "target_slot": _slot,
            "service": {"type": "string"}, "batch": {"type": "integer", "minimum": 1},
            "remove": {"type": "array", "items": _placement}, "add": {"type": "array", "items": _placement},
        }, required=["kind", "gpu"])}}}),
    "cluster": _obj({"machines": {"type": "array", "items": _obj({
        "id": {"type": "string"}, "gpus": {"type": "array", "items": _obj({
            "id": {"type": "string"}, "instances": {"type": "array", "items": _instance},
            "idle": {"type": "array", "items": _placement}})}})}}),
    "costs": _obj({k: _pos for k in ("create", "delete", "migrate_local", "migrate_remote", "repartition")},
                  required=[]),
    "prices": {"type": "object", "additionalProperties": _pos, "minProperties": 1},
    "counts": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}, "minProperties": 1},
    "rules": _obj({
        "slot_positions": {"type": "object", "additionalProperties": {"type": "array", "items": _slot}},
        "memory_weight": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "hard_exclusions": {"type": "array", "items": {"type": "array", "items": _size, "minItems": 2, "maxItems": 2}},
        "memory_budget": {"type": "integer", "minimum": 1},
    }, required=[]),
}


# -- canonical output ---------------------------------------------------------


def _canon(x: Any) -> Any:
    if x is None or isinstance(x, (bool, str)):
        return x
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if not math.isfinite(v):
            raise ValueError("non-finite number in output")
        return float(f"{v:.9g}")
    if isinstance(x, dict):
        return {str(k): _canon(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_canon(v) for v in x]
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(doc: Any) -> str:
    return json.dumps(_canon(doc), sort_keys=True, indent=2) + "\n"


def dump_lines(rows) -> str:
    return "".join(json.dumps(_canon(r), sort_keys=True) + "\n" for r in rows)


def write(path, doc: Any) -> None:
    Path(path).write_text(dumps(doc))


# -- loading ------------------------------------------------------------------


def validate(doc: Any, kind: str, source: str = "<document>") -> Any:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMAS[kind]).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        raise SchemaError(f"{source}: {e.json_path}: {e.message}")
    return doc


def read(path, kind: str) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return validate(doc, kind, str(path))


# -- domain conversion --------------------------------------------------------


def profiles_from(doc: dict) -> dict[str, ModelProfile]:
    out = {}
    for m in doc["models"]:
        if m["name"] in out:
            raise SchemaError(f"duplicate model {m['name']!r}")
        entries = {}
        for e in m["entries"]:
            key = (e["size"], e["batch"])
            if key in entries:
                raise SchemaError(f"{m['name']}: duplicate entry for size {key[0]} batch {key[1]}")
            entries[key] = (e["throughput_rps"], e["p90_ms"])
        out[m["name"]] = ModelProfile(m["name"], entries)
    return out


def profiles_doc(profiles: dict[str, ModelProfile]) -> dict:
    return {"models": [
        {"name": name, "entries": [
            {"size": s, "batch": b, "throughput_rps": e.throughput, "p90_ms": e.p90_ms}
            for (s, b), e in p.entries.items()]}
        for name, p in sorted(profiles.items())]}


def slos_from(doc: dict) -> list[ServiceSpec]:
    return [ServiceSpec(s["id"], s["model"], float(s["required_rps"]), float(s["max_p90_ms"])) for s in doc["services"]]


def slos_doc(services) -> dict:
    return {"services": [
        {"id": s.service_id, "model": s.model_name, "required_rps": s.required_throughput, "max_p90_ms": s.max_p90_latency}
        for s in sorted(services, key=lambda s: s.service_id)]}


def _inst(a) -> dict:
    return {"size": a.placement.size, "slot": a.placement.start, "service": a.service_id, "batch": a.batch}


def deployment_from(doc: dict) -> Deployment:
    gpus, ids = [], []
    for g in doc["gpus"]:
        gpus.append(GpuConfig.build((i["size"], i["slot"], i["service"], i["batch"]) for i in g["instances"]))
        ids.append(g["id"])
    return Deployment(tuple(gpus), tuple(ids))


def deployment_doc(dep: Deployment) -> dict:
    return {"gpus": [{"id": gid, "instances": [_inst(a) for a in g.instances]} for gid, g in zip(dep.gpu_ids, dep.gpus)]}


def _pl(d) -> Placement:
    return Placement(d["size"], d["slot"])


def _pl_doc(p: Placement) -> dict:
    return {"size": p.size, "slot": p.start}


def action_doc(a: Action) -> dict:
    if a.kind == "repartition":
        d = {"kind": a.kind, "gpu": a.gpu, "remove": [_pl_doc(p) for p in a.remove], "add": [_pl_doc(p) for p in a.add]}
        if a.add:
            d.update(_pl_doc(a.add[0]))
        return d
    d = {"kind": a.kind, "gpu": a.gpu, **_pl_doc(a.placement), "service": a.service, "batch": a.batch}
    if a.kind == "migrate":
        d["target_gpu"] = a.target_gpu
        d["target_slot"] = a.target_placement.start
    return d


def action_from(d: dict) -> Action:
    kind = d["kind"]
    if kind == "repartition":
        return Action(kind, d["gpu"], remove=tuple(map(_pl, d.get("remove", []))), add=tuple(map(_pl, d.get("add", []))))
    for key in ("size", "slot"):
        if key not in d:
            raise SchemaError(f"{kind} action on {d['gpu']} lacks {key!r}")
    p = _pl(d)
    if kind == "migrate":
        if "target_gpu" not in d:
            raise SchemaError(f"migrate action on {d['gpu']} lacks 'target_gpu'")
        target = Placement(p.size, d.get("target_slot", p.start))
        return Action(kind, d["gpu"], p, d.get("service"), d.get("batch"), d["target_gpu"], target)
    return Action(kind, d["gpu"], p, d.get("service"), d.get("batch"))


def plan_doc(plan: TransitionPlan) -> dict:
    return {"extra_gpu_budget": plan.extra_gpu_budget, "stages": [[action_doc(a) for a in s] for s in plan.stages]}


def plan_from(doc: dict) -> TransitionPlan:
    stages = [[action_from(a) for a in s] for s in doc["stages"]]
    return TransitionPlan(stages, doc["extra_gpu_budget"], None, [a for s in stages for a in s])


def cluster_doc(state: ClusterState) -> dict:
    machines = []
    for mid, gids in state.machines.items():
        gpus = []
        for gid in gids:
            g = state.gpus[gid]
            inst = [{"size": p.size, "slot": p.start, "service": s, "batch": b} for p, (s, b) in sorted(g.assigned.items())]
            gpus.append({"id": gid, "instances": inst, "idle": [_pl_doc(p) for p in sorted(g.idle)]})
        machines.append({"id": mid, "gpus": gpus})
    return {"machines": machines}


def cluster_from(doc: dict) -> ClusterState:
    gpus = {}
    for m in doc["machines"]:
        for g in m["gpus"]:
            if g["id"] in gpus:
                raise SchemaError(f"duplicate GPU id {g['id']!r}")
            st = GpuState(g["id"], m["id"])
            for i in g["instances"]:
                p = _pl(i)
                st.partition.add(p)
                st.assigned[p] = (i["service"], i["batch"])
            st.partition |= {_pl(p) for p in g["idle"]}
            gpus[g["id"]] = st
    return ClusterState(gpus)


def costs_from(doc: dict) -> ActionCostModel:
    return ActionCostModel.from_dict(doc)
