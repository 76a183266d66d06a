"""Synthetic clusters, models, workload profiles, and trace generation.

The cloud cluster mirrors a 32-GPU mixed fleet (one 8-GPU node plus six
4-GPU nodes of assorted types) with fast intra-node links and slow
inter-node links; the in-house cluster is a uniform 8-GPU box.
"""
from __future__ import annotations

import numpy as np

from .core import ClusterSpec, Gpu, GpuType, ModelSpec, Request, RequestTrace, WorkloadProfile

GB = 1e9
TB = 1e12

# Public cloud price sheet for the supported accelerators.
GPU_CATALOG = {
    "A100": GpuType("A100", mem_bandwidth=2 * TB, peak_flops=312e12, mem_capacity=80 * GB, price=1.753),
    "A6000": GpuType("A6000", mem_bandwidth=768 * GB, peak_flops=38.7e12, mem_capacity=48 * GB, price=0.483),
    "A5000": GpuType("A5000", mem_bandwidth=626.8 * GB, peak_flops=27.8e12, mem_capacity=24 * GB, price=0.223),
    "A40": GpuType("A40", mem_bandwidth=696 * GB, peak_flops=149.7e12, mem_capacity=48 * GB, price=0.403),
    "3090Ti": GpuType("3090Ti", mem_bandwidth=1008 * GB, peak_flops=71e12, mem_capacity=24 * GB, price=0.307),
}

INTRA_NODE_BW = 64 * GB
INTER_NODE_BW = 5 * GB
SELF_BW = 1 * TB
INTRA_NODE_LAT = 5e-6
INTER_NODE_LAT = 1e-4


def build_cluster(nodes, intra_bw=INTRA_NODE_BW, inter_bw=INTER_NODE_BW,
                  intra_lat=INTRA_NODE_LAT, inter_lat=INTER_NODE_LAT) -> ClusterSpec:
    """nodes: list of (type_name, gpu_count); each entry is one node."""
    gpus = []
    gid = 0
    for node_id, (tname, count) in enumerate(nodes):
        for _ in range(count):
            gpus.append(Gpu(gpu_id=gid, gpu_type=GPU_CATALOG[tname], node_id=node_id))
            gid += 1
    g = len(gpus)
    beta = np.empty((g, g))
    alpha = np.empty((g, g))
    for i in range(g):
        for j in range(g):
            if i == j:
                beta[i, j] = SELF_BW
                alpha[i, j] = 0.0
            elif gpus[i].node_id == gpus[j].node_id:
                beta[i, j] = intra_bw
                alpha[i, j] = intra_lat
            else:
                beta[i, j] = inter_bw
                alpha[i, j] = inter_lat
    return ClusterSpec(gpus=tuple(gpus), alpha=alpha, beta=beta)


def cloud_cluster_32() -> ClusterSpec:
    """32 mixed GPUs: 8xA40, 2x(4xA6000), 2x(4xA5000), 2x(4x3090Ti)."""
    return build_cluster(
        [("A40", 8), ("A6000", 4), ("A6000", 4),
         ("A5000", 4), ("A5000", 4), ("3090Ti", 4), ("3090Ti", 4)]
    )


def inhouse_cluster_8() -> ClusterSpec:
    """Uniform 8xA100 single node."""
    return build_cluster([("A100", 8)], intra_bw=300 * GB)


def symmetric_cluster(n_gpus: int, type_name: str = "A5000", gpus_per_node: int = 4) -> ClusterSpec:
    nodes = [(type_name, gpus_per_node) for _ in range(n_gpus // gpus_per_node)]
    rem = n_gpus % gpus_per_node
    if rem:
        nodes.append((type_name, rem))
    return build_cluster(nodes)


# Small enumerable instances for exhaustive-search checks.
def tiny_homogeneous_4() -> ClusterSpec:
    return build_cluster([("A5000", 4)])


def tiny_two_type_4() -> ClusterSpec:
    return build_cluster([("A40", 2), ("3090Ti", 2)])


def tiny_bandwidth_split_4() -> ClusterSpec:
    # two well-connected pairs joined by a slow link
    return build_cluster([("A5000", 2), ("A5000", 2)], inter_bw=1.25 * GB)


def llama_30b() -> ModelSpec:
    return ModelSpec(n_layers=60, hidden_size=6656, n_params=30e9, bytes_per_param=2.0)


def llama_13b() -> ModelSpec:
    return ModelSpec(n_layers=40, hidden_size=5120, n_params=13e9, bytes_per_param=2.0)


def tiny_model() -> ModelSpec:
    """Small model that fits a single 24 GB GPU; used by the tiny fixtures."""
    return ModelSpec(n_layers=16, hidden_size=2048, n_params=3e9, bytes_per_param=2.0)


def coding_profile(rate: float = 8.0) -> WorkloadProfile:
    """Long prompts, short completions."""
    return WorkloadProfile(arrival_rate=rate, mean_input_len=1024, mean_output_len=16)


def conversation_profile(rate: float = 8.0) -> WorkloadProfile:
    """Shorter prompts, long completions."""
    return WorkloadProfile(arrival_rate=rate, mean_input_len=256, mean_output_len=256)


def generate_trace(
    rate: float,
    mean_input_len: float,
    mean_output_len: float,
    n_requests: int,
    seed: int = 0,
    length_cv: float = 0.3,
) -> RequestTrace:
    """Poisson arrivals with lognormal input/output lengths."""
    rng = np.random.default_rng(seed)
    gaps = rng.exponential(1.0 / rate, size=n_requests)
    arrivals = np.cumsum(gaps)

    def lengths(mean):
        sigma = np.sqrt(np.log(1 + length_cv**2))
        mu = np.log(mean) - sigma**2 / 2
        return np.maximum(1, np.round(rng.lognormal(mu, sigma, size=n_requests))).astype(int)

    ins = lengths(mean_input_len)
    outs = lengths(mean_output_len)
    reqs = tuple(
        Request(arrival_time=float(t), input_len=int(a), output_len=int(b))
        for t, a, b in zip(arrivals, ins, outs)
    )
    return RequestTrace(requests=reqs)


def trace_from_profile(profile: WorkloadProfile, n_requests: int, seed: int = 0) -> RequestTrace:
    return generate_trace(
        profile.arrival_rate,
        profile.mean_input_len,
        profile.mean_output_len,
        n_requests,
        seed=seed,
    )


def write_fixture_files(outdir) -> list[str]:
    """Export the canonical fixture set as JSON files; returns the names."""
    from pathlib import Path

    from . import io as hio
    from .core import SloSpec

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    hio.save_cluster(cloud_cluster_32(), out / "cloud32.cluster.json")
    hio.save_cluster(inhouse_cluster_8(), out / "inhouse8.cluster.json")
    hio.save_cluster(tiny_two_type_4(), out / "tiny4.cluster.json")
    hio.save_model(llama_30b(), out / "llama30b.model.json")
    hio.save_model(llama_13b(), out / "llama13b.model.json")
    hio.save_model(tiny_model(), out / "tiny.model.json")
    hio.save_profile(coding_profile(), out / "coding.profile.json")
    hio.save_profile(conversation_profile(), out / "conversation.profile.json")
    hio.save_slo(SloSpec(ttft_ref=2.0, tpot_ref=0.2, slo_scale=1.5), out / "slo.json")
    hio.save_trace(
        trace_from_profile(coding_profile(), n_requests=300, seed=0),
        out / "coding.trace.jsonl",
    )
    return sorted(p.name for p in out.iterdir())
