"""File formats: cluster/model/profile/SLO JSON, JSON-lines traces,
deployment-plan JSON, and planner config overrides.

All writers produce deterministic byte output (sorted keys, fixed float
formatting via json's repr) so identical inputs yield identical files.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import (
    ClusterSpec,
    Gpu,
    GpuType,
    ModelSpec,
    Request,
    RequestTrace,
    SloSpec,
    WorkloadProfile,
)
from .costs import CostParams, KvPrecision
from .orchestrate import RoutingPlan
from .parallel import ParallelConfig, Phase, ServingGroup, Stage
from .search import TabuParams
from .simulate import DeploymentPlan, Replica


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load(path):
    return json.loads(Path(path).read_text())


# -- cluster ---------------------------------------------------------------

def cluster_to_dict(spec: ClusterSpec) -> dict:
    types = {}
    for g in spec.gpus:
        types[g.gpu_type.name] = g.gpu_type
    return {
        "gpu_types": [
            {
                "name": t.name,
                "mem_bandwidth": t.mem_bandwidth,
                "peak_flops": t.peak_flops,
                "mem_capacity": t.mem_capacity,
                "price": t.price,
            }
            for t in sorted(types.values(), key=lambda t: t.name)
        ],
        "gpus": [
            {"gpu_id": g.gpu_id, "type": g.gpu_type.name, "node_id": g.node_id}
            for g in spec.gpus
        ],
        "alpha": spec.alpha.tolist(),
        "beta": spec.beta.tolist(),
    }


def cluster_from_dict(d: dict) -> ClusterSpec:
    types = {
        t["name"]: GpuType(
            name=t["name"],
            mem_bandwidth=t["mem_bandwidth"],
            peak_flops=t["peak_flops"],
            mem_capacity=t["mem_capacity"],
            price=t["price"],
        )
        for t in d["gpu_types"]
    }
    gpus = tuple(
        Gpu(gpu_id=g["gpu_id"], gpu_type=types[g["type"]], node_id=g["node_id"])
        for g in d["gpus"]
    )
    return ClusterSpec(gpus=gpus, alpha=np.array(d["alpha"]), beta=np.array(d["beta"]))


def save_cluster(spec: ClusterSpec, path):
    _dump(cluster_to_dict(spec), path)


def load_cluster(path) -> ClusterSpec:
    return cluster_from_dict(_load(path))


# -- model / profile / slo --------------------------------------------------

def save_model(model: ModelSpec, path):
    _dump(
        {
            "n_layers": model.n_layers,
            "hidden_size": model.hidden_size,
            "n_params": model.n_params,
            "bytes_per_param": model.bytes_per_param,
        },
        path,
    )


def load_model(path) -> ModelSpec:
    d = _load(path)
    return ModelSpec(
        n_layers=d["n_layers"],
        hidden_size=d["hidden_size"],
        n_params=d["n_params"],
        bytes_per_param=d.get("bytes_per_param", 2.0),
    )


def save_profile(p: WorkloadProfile, path):
    _dump(
        {
            "arrival_rate": p.arrival_rate,
            "mean_input_len": p.mean_input_len,
            "mean_output_len": p.mean_output_len,
            "input_len_samples": list(p.input_len_samples),
            "output_len_samples": list(p.output_len_samples),
        },
        path,
    )


def load_profile(path) -> WorkloadProfile:
    d = _load(path)
    return WorkloadProfile(
        arrival_rate=d["arrival_rate"],
        mean_input_len=d["mean_input_len"],
        mean_output_len=d["mean_output_len"],
        input_len_samples=tuple(d.get("input_len_samples", ())),
        output_len_samples=tuple(d.get("output_len_samples", ())),
    )


def save_slo(s: SloSpec, path):
    _dump(
        {
            "ttft_ref": s.ttft_ref,
            "tpot_ref": s.tpot_ref,
            "slo_scale": s.slo_scale,
            "target_attainment": s.target_attainment,
        },
        path,
    )


def load_slo(path) -> SloSpec:
    d = _load(path)
    return SloSpec(
        ttft_ref=d["ttft_ref"],
        tpot_ref=d["tpot_ref"],
        slo_scale=d.get("slo_scale", 1.0),
        target_attainment=d.get("target_attainment", 0.9),
    )


# -- trace (JSON-lines) ------------------------------------------------------

def save_trace(trace: RequestTrace, path):
    with open(path, "w") as fh:
        for r in trace:
            fh.write(
                json.dumps({"t": r.arrival_time, "in": r.input_len, "out": r.output_len})
                + "\n"
            )


def load_trace(path) -> RequestTrace:
    reqs = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            reqs.append(Request(arrival_time=d["t"], input_len=d["in"], output_len=d["out"]))
    return RequestTrace(requests=tuple(reqs))


# -- planner config -----------------------------------------------------------

def load_planner_config(path=None) -> dict:
    """Planner config: tabu/cost overrides, kv bits, mode, sim seed."""
    d = _load(path) if path else {}
    tabu = TabuParams(**d.get("tabu", {}))
    cost = CostParams(**d.get("cost", {}))
    prec = KvPrecision(bits=d.get("kv_bits", 16))
    return {
        "tabu": tabu,
        "cost": cost,
        "precision": prec,
        "mode": d.get("mode", "analytic"),
    }


# -- deployment plan ----------------------------------------------------------

def plan_to_dict(plan: DeploymentPlan, provenance: dict | None = None) -> dict:
    return {
        "replicas": [
            {
                "gpu_ids": sorted(r.group.gpu_ids),
                "phase": r.group.phase.value,
                "tp": r.config.tp,
                "pp": r.config.pp,
                "stages": [
                    {"gpu_ids": list(s.gpu_ids), "layer_count": s.layer_count}
                    for s in r.config.stages
                ],
            }
            for r in plan.replicas
        ],
        "routing": {
            "x": plan.routing.x.tolist(),
            "y": plan.routing.y.tolist(),
            "z": plan.routing.z.tolist(),
            "objective": plan.routing.objective,
            "saturated": plan.routing.saturated,
        },
        "kv_bits": plan.kv_precision.bits,
        "provenance": provenance or {},
    }


def plan_from_dict(d: dict) -> DeploymentPlan:
    replicas = []
    for r in d["replicas"]:
        group = ServingGroup(frozenset(r["gpu_ids"]), Phase(r["phase"]))
        stages = tuple(
            Stage(tuple(s["gpu_ids"]), s["layer_count"]) for s in r["stages"]
        )
        replicas.append(Replica(group=group, config=ParallelConfig(tp=r["tp"], stages=stages)))
    routing = RoutingPlan(
        x=np.array(d["routing"]["x"]),
        y=np.array(d["routing"]["y"]),
        z=np.array(d["routing"]["z"]),
        objective=d["routing"].get("objective", 0.0),
        saturated=d["routing"].get("saturated", False),
    )
    return DeploymentPlan(
        replicas=tuple(replicas),
        routing=routing,
        kv_precision=KvPrecision(bits=d.get("kv_bits", 16)),
    )


def save_plan(plan: DeploymentPlan, path, provenance: dict | None = None):
    _dump(plan_to_dict(plan, provenance), path)


def load_plan(path) -> DeploymentPlan:
    return plan_from_dict(_load(path))


def load_plan_provenance(path) -> dict:
    return _load(path).get("provenance", {})
