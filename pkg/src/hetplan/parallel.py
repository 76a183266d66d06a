"""Per-group parallel configuration: enumeration of (TP, PP) candidates,
bitmask-DP pipeline routing, non-uniform layer partitioning, and selection
of the latency- or throughput-optimal configuration."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import ClusterSpec, ModelSpec, WorkloadProfile
from .costs import (
    CostParams,
    decode_step_latency,
    group_memory_feasible,
    max_decode_batch,
    prefill_latency,
)
from .errors import InfeasibleConfig, InfeasiblePartition, NoFeasibleConfig, TooManyStages

MAX_STAGES = 16


class Phase(enum.Enum):
    PREFILL = "prefill"
    DECODE = "decode"


@dataclass(frozen=True)
class ServingGroup:
    gpu_ids: frozenset[int]
    phase: Phase

    def __post_init__(self):
        object.__setattr__(self, "gpu_ids", frozenset(self.gpu_ids))
        if not self.gpu_ids:
            raise ValueError("serving group must be non-empty")

    def type_counts(self, cluster: ClusterSpec) -> dict[str, int]:
        counts: dict[str, int] = {}
        for g in self.gpu_ids:
            name = cluster.gpu(g).gpu_type.name
            counts[name] = counts.get(name, 0) + 1
        return counts


@dataclass(frozen=True)
class Stage:
    gpu_ids: tuple[int, ...]
    layer_count: int

    def __post_init__(self):
        object.__setattr__(self, "gpu_ids", tuple(self.gpu_ids))

    @property
    def tp(self) -> int:
        return len(self.gpu_ids)


@dataclass(frozen=True)
class ParallelConfig:
    tp: int
    stages: tuple[Stage, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def pp(self) -> int:
        return len(self.stages)

    @property
    def n_layers(self) -> int:
        return sum(s.layer_count for s in self.stages)

    def sort_key(self):
        return (self.pp, self.tp, tuple(s.gpu_ids for s in self.stages))


def _sorted_group_gpus(group: ServingGroup, cluster: ClusterSpec):
    return sorted(
        group.gpu_ids,
        key=lambda g: (cluster.gpu(g).gpu_type.name, cluster.gpu(g).node_id, g),
    )


def _pack_stages(gpus_sorted, tp: int, cluster: ClusterSpec):
    """Split the canonical GPU order into TP units of same type and node.

    Returns None when some unit would mix types or nodes.
    """
    units = []
    for i in range(0, len(gpus_sorted), tp):
        unit = tuple(gpus_sorted[i : i + tp])
        kinds = {(cluster.gpu(g).gpu_type.name, cluster.gpu(g).node_id) for g in unit}
        if len(kinds) != 1:
            return None
        units.append(unit)
    return units


def enumerate_configs(
    group: ServingGroup, model: ModelSpec, cluster: ClusterSpec
) -> list[ParallelConfig]:
    """All (TP, PP) skeletons using every GPU in the group, TP kept within
    single-type, single-node units. Layers are partitioned per skeleton."""
    n = len(group.gpu_ids)
    counts = group.type_counts(cluster)
    t_min = min(counts.values())
    gpus_sorted = _sorted_group_gpus(group, cluster)
    if not group_memory_feasible(group.gpu_ids, model, cluster):
        raise NoFeasibleConfig("group memory cannot hold the model weights")

    out: list[ParallelConfig] = []
    for tp in range(1, t_min + 1):
        if n % tp != 0:
            continue
        pp = n // tp
        if pp > MAX_STAGES or pp > model.n_layers:
            continue
        units = _pack_stages(gpus_sorted, tp, cluster)
        if units is None:
            continue
        order, _ = route_pipeline(units, cluster)
        ordered = [units[i] for i in order]
        caps = []
        for unit in ordered:
            gt = cluster.gpu(unit[0]).gpu_type
            caps.append((tp * gt.mem_capacity, tp * gt.peak_flops))
        try:
            layers = partition_layers(caps, model, tp)
        except InfeasiblePartition:
            continue
        cfg = ParallelConfig(
            tp=tp,
            stages=tuple(Stage(u, lc) for u, lc in zip(ordered, layers)),
        )
        out.append(cfg)
    if not out:
        raise NoFeasibleConfig(f"no feasible parallel configuration for group of {n} GPUs")
    out.sort(key=ParallelConfig.sort_key)
    return out


def _stage_bandwidth_matrix(stage_sets, cluster: ClusterSpec) -> np.ndarray:
    """Pairwise stage-to-stage bandwidth: best single link between the sets."""
    n = len(stage_sets)
    idx = [[cluster.index_of(g) for g in s] for s in stage_sets]
    bw = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            bw[i, j] = cluster.beta[np.ix_(idx[i], idx[j])].max()
    return bw


def route_pipeline(stage_sets, cluster: ClusterSpec) -> tuple[list[int], float]:
    """Order pipeline stages to maximize the minimum inter-stage bandwidth.

    Exact bitmask DP over (visited subset, last stage); n is capped at 16.
    Returns (ordering, bottleneck bandwidth); a single stage gets +inf.
    """
    n = len(stage_sets)
    if n > MAX_STAGES:
        raise TooManyStages(f"{n} stages exceed the {MAX_STAGES}-stage bound")
    if n == 1:
        return [0], math.inf
    bw = _stage_bandwidth_matrix(stage_sets, cluster)
    off = bw[~np.eye(n, dtype=bool)]
    if np.all(off == off[0]):
        # uniform links: any order is optimal
        return list(range(n)), float(off[0])

    size = 1 << n
    dp = np.full((size, n), -1.0)
    parent = np.full((size, n), -1, dtype=np.int32)
    for i in range(n):
        dp[1 << i, i] = math.inf
    for mask in range(size):
        row = dp[mask]
        active = np.nonzero(row >= 0)[0]
        if active.size == 0:
            continue
        for last in active:
            cur = row[last]
            for nxt in range(n):
                if mask & (1 << nxt):
                    continue
                cand = min(cur, bw[last, nxt])
                m2 = mask | (1 << nxt)
                if cand > dp[m2, nxt]:
                    dp[m2, nxt] = cand
                    parent[m2, nxt] = last
    full = size - 1
    last = int(np.argmax(dp[full]))
    best = dp[full, last]
    order = []
    mask = full
    while last >= 0:
        order.append(last)
        prev = parent[mask, last]
        mask ^= 1 << last
        last = int(prev)
    order.reverse()
    return order, float(best)


def partition_layers(
    stage_capacities: list[tuple[float, float]], model: ModelSpec, tp: int
) -> list[int]:
    """Layer counts proportional to a per-stage capacity score (geometric
    mean of normalized memory and flops), largest-remainder rounded, then
    repaired against per-stage memory caps."""
    n = len(stage_capacities)
    L = model.n_layers
    if n > L:
        raise InfeasiblePartition(f"{n} stages for {L} layers")
    mems = np.array([c[0] for c in stage_capacities], dtype=float)
    flops = np.array([c[1] for c in stage_capacities], dtype=float)
    score = np.sqrt((mems / mems.sum()) * (flops / flops.sum()))
    quota = score / score.sum() * L

    counts = np.floor(quota).astype(int)
    counts = np.maximum(counts, 1)
    # largest remainder, deficit only; shave overshoot from smallest remainders
    while counts.sum() < L:
        rem = quota - counts
        counts[int(np.argmax(rem))] += 1
    while counts.sum() > L:
        rem = quota - counts
        order = np.argsort(rem)
        for i in order:
            if counts[i] > 1:
                counts[i] -= 1
                break
        else:
            raise InfeasiblePartition("cannot shrink partition to layer count")

    # per-stage cap: weights of assigned layers must fit the stage memory
    per_layer = model.params_per_layer * model.bytes_per_param
    caps = np.floor(mems / per_layer).astype(int)
    if caps.sum() < L or np.any(caps < 1):
        raise InfeasiblePartition("stage memory caps cannot hold the model")
    for _ in range(L):
        over = counts - caps
        if np.all(over <= 0):
            break
        src = int(np.argmax(over))
        slack = caps - counts
        dst = int(np.argmax(slack))
        if slack[dst] <= 0:
            raise InfeasiblePartition("repair failed: no stage has slack")
        move = min(over[src], slack[dst])
        counts[src] -= move
        counts[dst] += move
    return [int(c) for c in counts]


def decode_throughput(
    cfg: ParallelConfig,
    model: ModelSpec,
    context_len: float,
    params: CostParams,
    cluster: ClusterSpec,
) -> float:
    """Requests per decode step time at the largest feasible batch."""
    b = max_decode_batch(cfg, model, context_len, cluster)
    if b < 1:
        return 0.0
    return b / decode_step_latency(cfg, model, b, context_len, params, cluster)


def best_config(
    group: ServingGroup,
    model: ModelSpec,
    cluster: ClusterSpec,
    workload: WorkloadProfile,
    params: CostParams,
) -> ParallelConfig:
    """Latency-optimal config for prefill groups, throughput-optimal for
    decode groups; deterministic tie-break by (pp, tp, stage order)."""
    candidates = enumerate_configs(group, model, cluster)
    batch_tokens = max(1, int(round(workload.mean_input_len)))
    ctx = workload.mean_context_len
    best = None
    for cfg in candidates:
        try:
            if group.phase is Phase.PREFILL:
                score = prefill_latency(cfg, model, batch_tokens, params, cluster)
                better = best is None or score < best[0] - 1e-15
            else:
                score = -decode_throughput(cfg, model, ctx, params, cluster)
                better = best is None or score < best[0] - 1e-15
        except InfeasibleConfig:
            continue
        tied = best is not None and abs(score - best[0]) <= 1e-15
        if better or (tied and cfg.sort_key() < best[1].sort_key()):
            best = (score, cfg)
    if best is None:
        raise NoFeasibleConfig("all candidate configurations are memory-infeasible")
    return best[1]
