"""Canonical domain types, cluster validation, and workload profiling.

All types are immutable after construction and safe to share across
concurrent workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyWindow

SYMMETRY_RTOL = 1e-9


@dataclass(frozen=True)
class GpuType:
    """Hardware spec of one GPU model.

    Units: mem_bandwidth bytes/s, peak_flops FLOP/s (fp16),
    mem_capacity bytes, price currency/hour.
    """

    name: str
    mem_bandwidth: float
    peak_flops: float
    mem_capacity: float
    price: float

    def __post_init__(self):
        for f in ("mem_bandwidth", "peak_flops", "mem_capacity", "price"):
            if getattr(self, f) <= 0:
                raise ValueError(f"GpuType.{f} must be strictly positive")


@dataclass(frozen=True)
class Gpu:
    gpu_id: int
    gpu_type: GpuType
    node_id: int


def _frozen_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=float).copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ClusterSpec:
    """GPUs plus pairwise latency (alpha, seconds) and bandwidth
    (beta, bytes/s) matrices indexed by position in ``gpus``."""

    gpus: tuple[Gpu, ...]
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gpus", tuple(self.gpus))
        object.__setattr__(self, "alpha", _frozen_matrix(self.alpha))
        object.__setattr__(self, "beta", _frozen_matrix(self.beta))

    @property
    def n_gpus(self) -> int:
        return len(self.gpus)

    def index_of(self, gpu_id: int) -> int:
        for i, g in enumerate(self.gpus):
            if g.gpu_id == gpu_id:
                return i
        raise KeyError(gpu_id)

    def gpu(self, gpu_id: int) -> Gpu:
        return self.gpus[self.index_of(gpu_id)]

    def subset(self, keep_gpu_ids) -> "ClusterSpec":
        """Cluster restricted to the given gpu ids (matrix rows/cols kept)."""
        keep = [i for i, g in enumerate(self.gpus) if g.gpu_id in set(keep_gpu_ids)]
        idx = np.asarray(keep)
        return ClusterSpec(
            gpus=tuple(self.gpus[i] for i in keep),
            alpha=self.alpha[np.ix_(idx, idx)],
            beta=self.beta[np.ix_(idx, idx)],
        )


@dataclass(frozen=True)
class Violation:
    """One machine-readable cluster-invariant violation."""

    code: str
    detail: tuple

    def __str__(self):
        return f"{self.code}{self.detail}"


def validate_cluster(spec: ClusterSpec) -> list[Violation]:
    """Return every invariant violation of a cluster spec (empty = valid)."""
    out: list[Violation] = []
    g = spec.n_gpus
    seen: set[int] = set()
    for gpu in spec.gpus:
        if gpu.gpu_id in seen:
            out.append(Violation("duplicate_gpu_id", (gpu.gpu_id,)))
        seen.add(gpu.gpu_id)
    names = {}
    for gpu in spec.gpus:
        prev = names.get(gpu.gpu_type.name)
        if prev is not None and prev is not gpu.gpu_type:
            out.append(Violation("conflicting_gpu_type", (gpu.gpu_type.name,)))
        names[gpu.gpu_type.name] = gpu.gpu_type

    for name, mat in (("alpha", spec.alpha), ("beta", spec.beta)):
        if mat.shape != (g, g):
            out.append(Violation(f"bad_{name}_shape", mat.shape))

    if spec.alpha.shape == (g, g) and spec.beta.shape == (g, g):
        for name, mat in (("alpha", spec.alpha), ("beta", spec.beta)):
            scale = np.maximum(np.abs(mat), np.abs(mat.T))
            bad = np.argwhere(np.abs(mat - mat.T) > SYMMETRY_RTOL * np.maximum(scale, 1e-300))
            for i, j in bad:
                if i < j:
                    code = "asymmetric_latency" if name == "alpha" else "asymmetric_bandwidth"
                    out.append(Violation(code, (int(i), int(j))))
        for i in range(g):
            off = np.delete(spec.beta[i], i)
            if off.size and spec.beta[i, i] < off.max():
                out.append(Violation("diagonal_not_dominant", (i,)))
        if np.any(spec.beta < 0):
            out.append(Violation("negative_bandwidth", ()))
        if np.any(spec.alpha < 0):
            out.append(Violation("negative_latency", ()))
    return out


@dataclass(frozen=True)
class ModelSpec:
    """Transformer model description; layer params assumed uniform."""

    n_layers: int
    hidden_size: int
    n_params: float
    bytes_per_param: float = 2.0

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")

    @property
    def kv_bytes_per_token_layer_16bit(self) -> float:
        # K and V, each hidden_size elements at 2 bytes
        return 4.0 * self.hidden_size

    @property
    def params_per_layer(self) -> float:
        return self.n_params / self.n_layers

    @property
    def weight_bytes(self) -> float:
        return self.n_params * self.bytes_per_param


@dataclass(frozen=True)
class WorkloadProfile:
    arrival_rate: float
    mean_input_len: float
    mean_output_len: float
    input_len_samples: tuple[int, ...] = ()
    output_len_samples: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "input_len_samples", tuple(self.input_len_samples))
        object.__setattr__(self, "output_len_samples", tuple(self.output_len_samples))
        if self.arrival_rate <= 0:
            raise ValueError("arrival_rate must be positive")
        for mean, samples in (
            (self.mean_input_len, self.input_len_samples),
            (self.mean_output_len, self.output_len_samples),
        ):
            if samples:
                m = sum(samples) / len(samples)
                if abs(m - mean) > 1e-9 * max(abs(mean), 1.0):
                    raise ValueError("profile mean disagrees with samples")

    @property
    def mean_context_len(self) -> float:
        """Average decode context: full prompt plus half the response."""
        return self.mean_input_len + self.mean_output_len / 2.0


@dataclass(frozen=True)
class SloSpec:
    ttft_ref: float
    tpot_ref: float
    slo_scale: float = 1.0
    target_attainment: float = 0.9

    def __post_init__(self):
        if min(self.ttft_ref, self.tpot_ref, self.slo_scale) <= 0:
            raise ValueError("SLO references and scale must be positive")
        if not 0 < self.target_attainment <= 1:
            raise ValueError("target_attainment must be in (0,1]")

    def e2e_deadline(self, mean_output_len: float, scale: float | None = None) -> float:
        s = self.slo_scale if scale is None else scale
        return s * (self.ttft_ref + mean_output_len * self.tpot_ref)


@dataclass(frozen=True)
class Request:
    arrival_time: float
    input_len: int
    output_len: int


@dataclass(frozen=True)
class RequestTrace:
    requests: tuple[Request, ...]

    def __post_init__(self):
        object.__setattr__(self, "requests", tuple(self.requests))
        prev = float("-inf")
        for r in self.requests:
            if r.arrival_time < prev:
                raise ValueError("arrival times must be non-decreasing")
            if r.input_len < 1 or r.output_len < 1:
                raise ValueError("input_len and output_len must be >= 1")
            prev = r.arrival_time

    def __len__(self):
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    @property
    def mean_input_len(self) -> float:
        return sum(r.input_len for r in self.requests) / len(self.requests)

    @property
    def mean_output_len(self) -> float:
        return sum(r.output_len for r in self.requests) / len(self.requests)


def profile_from_trace(trace: RequestTrace, window: tuple[float, float]) -> WorkloadProfile:
    """Summarize the requests arriving in [start, end) into a profile."""
    start, end = window
    if end <= start:
        raise ValueError("window end must exceed start")
    reqs = [r for r in trace if start <= r.arrival_time < end]
    if not reqs:
        raise EmptyWindow(f"no requests in window [{start}, {end})")
    ins = tuple(r.input_len for r in reqs)
    outs = tuple(r.output_len for r in reqs)
    return WorkloadProfile(
        arrival_rate=len(reqs) / (end - start),
        mean_input_len=sum(ins) / len(ins),
        mean_output_len=sum(outs) / len(outs),
        input_len_samples=ins,
        output_len_samples=outs,
    )


def detect_shift(old: WorkloadProfile, new: WorkloadProfile, rel_threshold: float = 0.2) -> bool:
    """True iff any of mean input/output length or arrival rate moved by
    more than rel_threshold relative to the old profile."""
    if rel_threshold <= 0:
        raise ValueError("rel_threshold must be positive")
    pairs = (
        (old.mean_input_len, new.mean_input_len),
        (old.mean_output_len, new.mean_output_len),
        (old.arrival_rate, new.arrival_rate),
    )
    return any(abs(n - o) / o > rel_threshold for o, n in pairs)
