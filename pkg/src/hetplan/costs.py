"""Analytic latency/capacity estimates for prefill and decode replicas.

Per-stage times follow a roofline form: max(compute time, memory time),
plus tensor-parallel collective overhead and inter-stage activation
transfers modeled with the latency/bandwidth (alpha-beta) link model.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import ClusterSpec, ModelSpec
from .errors import InfeasibleConfig, NoPath


@dataclass(frozen=True)
class KvPrecision:
    """Element bitwidth used for KV-cache transfer between phases."""

    bits: int = 16

    def __post_init__(self):
        if self.bits not in (16, 8, 4, 2):
            raise ValueError("bits must be one of 16, 8, 4, 2")

    @property
    def bytes_per_element(self) -> Fraction:
        return Fraction(self.bits, 8)


@dataclass(frozen=True)
class CostParams:
    """Calibration constants for the analytic cost model."""

    flops_efficiency: float = 0.6
    mem_efficiency: float = 0.8
    tp_allreduce_latency: float = 0.0  # seconds per collective per layer
    batch_token_plateau: int = 1024
    # Whether the KV transfer volume spans all layers (whole-model cache).
    kv_layer_factor: bool = True

    def __post_init__(self):
        for f in ("flops_efficiency", "mem_efficiency"):
            v = getattr(self, f)
            if not 0 < v <= 1:
                raise ValueError(f"{f} must be in (0,1]")


def bottleneck_link(src_gpu_ids, dst_gpu_ids, cluster: ClusterSpec) -> tuple[float, float]:
    """(alpha, beta) of the minimum-bandwidth GPU pair between two sets."""
    best = None
    for a in src_gpu_ids:
        ia = cluster.index_of(a)
        for b in dst_gpu_ids:
            ib = cluster.index_of(b)
            beta = cluster.beta[ia, ib]
            if beta <= 0:
                continue
            if best is None or beta < best[1]:
                best = (cluster.alpha[ia, ib], beta)
    if best is None:
        raise NoPath(f"no positive-bandwidth link between {src_gpu_ids} and {dst_gpu_ids}")
    return best


def best_link(src_gpu_ids, dst_gpu_ids, cluster: ClusterSpec) -> tuple[float, float]:
    """(alpha, beta) of the maximum-bandwidth GPU pair between two sets."""
    best = None
    for a in src_gpu_ids:
        ia = cluster.index_of(a)
        for b in dst_gpu_ids:
            ib = cluster.index_of(b)
            beta = cluster.beta[ia, ib]
            if best is None or beta > best[1]:
                best = (cluster.alpha[ia, ib], beta)
    if best is None or best[1] <= 0:
        raise NoPath(f"no positive-bandwidth link between {src_gpu_ids} and {dst_gpu_ids}")
    return best


def kv_comm_cost(
    prefill_gpu_ids,
    decode_gpu_ids,
    b: int,
    s: int,
    model: ModelSpec,
    prec: KvPrecision,
    cluster: ClusterSpec,
    params: CostParams = CostParams(),
) -> float:
    """KV-cache transfer time from a prefill replica to a decode replica.

    alpha + 2*b*s*h*N_bytes*L / beta over the bottleneck link between the
    last prefill stage and the first decode stage.
    """
    if b < 1 or s < 1:
        raise ValueError("batch size and sequence length must be >= 1")
    alpha, beta = bottleneck_link(prefill_gpu_ids, decode_gpu_ids, cluster)
    layers = model.n_layers if params.kv_layer_factor else 1
    volume = 2 * b * s * model.hidden_size * prec.bytes_per_element * layers
    return alpha + float(volume) / beta


def _stage_gpu_type(stage, cluster: ClusterSpec):
    return cluster.gpu(next(iter(stage.gpu_ids))).gpu_type


def _check_stage_memory(stage, model: ModelSpec, cluster: ClusterSpec):
    gt = _stage_gpu_type(stage, cluster)
    per_gpu = stage.layer_count * model.params_per_layer * model.bytes_per_param / stage.tp
    if per_gpu > gt.mem_capacity:
        raise InfeasibleConfig(
            f"stage weights {per_gpu:.3e} B exceed capacity {gt.mem_capacity:.3e} B"
        )


def _interstage_time(cfg, batch_tokens: float, model: ModelSpec, cluster: ClusterSpec) -> float:
    """Activation handoff between consecutive pipeline stages."""
    total = 0.0
    for a, b in zip(cfg.stages, cfg.stages[1:]):
        alpha, beta = best_link(a.gpu_ids, b.gpu_ids, cluster)
        total += alpha + batch_tokens * model.hidden_size * 2.0 / beta
    return total


def prefill_latency(
    cfg,
    model: ModelSpec,
    batch_tokens: int,
    params: CostParams,
    cluster: ClusterSpec,
) -> float:
    """Latency of one prefill batch through the pipeline."""
    if batch_tokens < 1:
        raise ValueError("batch_tokens must be >= 1")
    total = 0.0
    for stage in cfg.stages:
        _check_stage_memory(stage, model, cluster)
        gt = _stage_gpu_type(stage, cluster)
        p_stage = stage.layer_count * model.params_per_layer
        compute = 2.0 * p_stage * batch_tokens / (stage.tp * gt.peak_flops * params.flops_efficiency)
        memory = p_stage * model.bytes_per_param / (stage.tp * gt.mem_bandwidth * params.mem_efficiency)
        total += max(compute, memory)
        if stage.tp > 1:
            total += params.tp_allreduce_latency * stage.layer_count
    return total + _interstage_time(cfg, batch_tokens, model, cluster)


def decode_step_latency(
    cfg,
    model: ModelSpec,
    batch_size: int,
    context_len: float,
    params: CostParams,
    cluster: ClusterSpec,
) -> float:
    """Latency of one decode step (one token per enrolled request)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    total = 0.0
    for stage in cfg.stages:
        _check_stage_memory(stage, model, cluster)
        gt = _stage_gpu_type(stage, cluster)
        p_stage = stage.layer_count * model.params_per_layer
        read_bytes = p_stage * model.bytes_per_param + (
            batch_size * context_len * model.kv_bytes_per_token_layer_16bit * stage.layer_count
        )
        memory = read_bytes / (stage.tp * gt.mem_bandwidth * params.mem_efficiency)
        compute = 2.0 * p_stage * batch_size / (stage.tp * gt.peak_flops * params.flops_efficiency)
        total += max(memory, compute)
        if stage.tp > 1:
            total += params.tp_allreduce_latency * stage.layer_count
    return total + _interstage_time(cfg, float(batch_size), model, cluster)


def max_decode_batch(cfg, model: ModelSpec, context_len: float, cluster: ClusterSpec) -> int:
    """Largest request batch whose KV cache fits every stage alongside weights."""
    best = None
    for stage in cfg.stages:
        gt = _stage_gpu_type(stage, cluster)
        weights = stage.layer_count * model.params_per_layer * model.bytes_per_param
        free = stage.tp * gt.mem_capacity - weights
        kv_per_req = context_len * model.kv_bytes_per_token_layer_16bit * stage.layer_count
        b = int(free // kv_per_req) if kv_per_req > 0 else 0
        b = max(b, 0)
        best = b if best is None else min(best, b)
    return best or 0


def group_memory_feasible(gpu_ids, model: ModelSpec, cluster: ClusterSpec) -> bool:
    """True iff the group's combined memory can hold one copy of the weights."""
    total = sum(cluster.gpu(g).gpu_type.mem_capacity for g in gpu_ids)
    return total >= model.weight_bytes
