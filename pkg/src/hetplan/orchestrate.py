"""Pairwise SLO-attainment matrix and the two-stage transportation LP.

The bilinear routing objective sum_ij X_i*Y_ij*D_ij is linearized with
z_ij = X_i*Y_ij and solved by a dense simplex with Bland's rule
(deterministic; float64 by default, rationals on request). X and Y are
recovered from z afterwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import ClusterSpec, ModelSpec, SloSpec, WorkloadProfile
from .costs import (
    CostParams,
    KvPrecision,
    decode_step_latency,
    kv_comm_cost,
    max_decode_batch,
    prefill_latency,
)
from .errors import Infeasible


@dataclass(frozen=True)
class SloMatrix:
    d: np.ndarray  # m x n, entries in [0,1]

    def __post_init__(self):
        a = np.asarray(self.d, dtype=float).copy()
        if a.ndim != 2:
            raise ValueError("D must be 2-dimensional")
        if np.any(a < -1e-12) or np.any(a > 1 + 1e-12):
            raise ValueError("D entries must lie in [0,1]")
        a.flags.writeable = False
        object.__setattr__(self, "d", a)

    @property
    def shape(self):
        return self.d.shape


@dataclass(frozen=True)
class CapacityVector:
    prefill_cap: np.ndarray  # requests/second
    decode_cap: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.prefill_cap, dtype=float).copy()
        q = np.asarray(self.decode_cap, dtype=float).copy()
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "prefill_cap", p)
        object.__setattr__(self, "decode_cap", q)


@dataclass(frozen=True)
class RoutingPlan:
    x: np.ndarray  # m
    y: np.ndarray  # m x n, rows sum to 1
    z: np.ndarray  # m x n, z_ij = x_i * y_ij
    objective: float = 0.0
    saturated: bool = False

    def __post_init__(self):
        for name in ("x", "y", "z"):
            a = np.asarray(getattr(self, name), dtype=float).copy()
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if abs(self.x.sum() - 1.0) > 1e-9:
            raise ValueError("X must sum to 1")
        if np.any(self.y < -1e-12) or np.any(np.abs(self.y.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("Y rows must be distributions")


def _frac(v) -> Fraction:
    return Fraction(v).limit_denominator(10**12)


def _simplex_maximize_float(c, a_ub, b_ub, a_eq, b_eq, tol=1e-11):
    """Dense two-phase simplex with Bland's rule in float64 (numpy).

    Same contract as the rational variant; deterministic pivot order.
    """
    n = len(c)
    n_ub = len(b_ub)
    n_eq = len(b_eq)
    m = n_ub + n_eq
    n_tot = n + n_ub + n_eq

    t = np.zeros((m, n_tot + 1))
    basis = np.zeros(m, dtype=int)
    t[:n_ub, :n] = np.asarray(a_ub, dtype=float)
    t[:n_ub, n : n + n_ub] = np.eye(n_ub)
    t[:n_ub, -1] = b_ub
    basis[:n_ub] = n + np.arange(n_ub)
    if n_eq:
        t[n_ub:, :n] = np.asarray(a_eq, dtype=float)
        t[n_ub:, n + n_ub : n_tot] = np.eye(n_eq)
        t[n_ub:, -1] = b_eq
        basis[n_ub:] = n + n_ub + np.arange(n_eq)

    def pivot(row, col):
        t[row] /= t[row, col]
        for r in range(m):
            if r != row and t[r, col] != 0.0:
                t[r] -= t[r, col] * t[row]
        basis[row] = col

    def run(obj, allowed):
        for _ in range(20000):
            red = obj.copy()
            for r in range(m):
                cb = obj[basis[r]]
                if cb != 0.0:
                    red -= cb * t[r, :n_tot]
            cand = np.nonzero(allowed & (red > tol))[0]
            if cand.size == 0:
                return
            col = int(cand[0])
            rows = np.nonzero(t[:, col] > tol)[0]
            if rows.size == 0:
                raise Infeasible("unbounded linear program")
            ratios = t[rows, -1] / t[rows, col]
            best = ratios.min()
            tied = rows[ratios <= best + tol * max(1.0, abs(best))]
            row = int(tied[np.argmin(basis[tied])])
            pivot(row, col)
        raise Infeasible("simplex failed to converge")

    if n_eq:
        phase1 = np.zeros(n_tot)
        phase1[n + n_ub :] = -1.0
        run(phase1, np.ones(n_tot, dtype=bool))
        art = basis >= n + n_ub
        if art.any() and t[art, -1].sum() > 1e-8:
            raise Infeasible("no feasible routing satisfies the constraints")
        for r in np.nonzero(art)[0]:
            cols = np.nonzero(np.abs(t[r, : n + n_ub]) > tol)[0]
            if cols.size:
                pivot(int(r), int(cols[0]))

    allowed = np.ones(n_tot, dtype=bool)
    allowed[n + n_ub :] = False
    phase2 = np.zeros(n_tot)
    phase2[:n] = c
    run(phase2, allowed)

    x = np.zeros(n)
    for r in range(m):
        if basis[r] < n:
            x[basis[r]] = t[r, -1]
    return x, float(np.dot(np.asarray(c, dtype=float), x))


def _simplex_maximize(c, a_ub, b_ub, a_eq, b_eq):
    """Dense two-phase simplex with Bland's rule over Fractions.

    Maximizes c.x s.t. a_ub.x <= b_ub, a_eq.x = b_eq, x >= 0; all right-hand
    sides must be nonnegative. Returns (x, value) or raises Infeasible.
    """
    n = len(c)
    n_ub = len(b_ub)
    n_eq = len(b_eq)
    m = n_ub + n_eq
    n_tot = n + n_ub + n_eq  # structural + slack + artificial

    t = [[Fraction(0)] * (n_tot + 1) for _ in range(m)]
    basis = [0] * m
    for i in range(n_ub):
        for j in range(n):
            t[i][j] = _frac(a_ub[i][j])
        t[i][n + i] = Fraction(1)
        t[i][n_tot] = _frac(b_ub[i])
        basis[i] = n + i
    for k in range(n_eq):
        i = n_ub + k
        for j in range(n):
            t[i][j] = _frac(a_eq[k][j])
        t[i][n + n_ub + k] = Fraction(1)
        t[i][n_tot] = _frac(b_eq[k])
        basis[i] = n + n_ub + k

    def pivot(row, col):
        piv = t[row][col]
        t[row] = [v / piv for v in t[row]]
        for r in range(m):
            if r != row and t[r][col] != 0:
                f = t[r][col]
                t[r] = [a - f * b for a, b in zip(t[r], t[row])]
        basis[row] = col

    def run(obj, allowed):
        # obj: coefficient list to maximize; Bland's rule on reduced costs
        while True:
            red = list(obj)
            for r in range(m):
                cb = obj[basis[r]]
                if cb != 0:
                    for j in range(n_tot):
                        red[j] -= cb * t[r][j]
            col = next((j for j in range(n_tot) if allowed[j] and red[j] > 0), None)
            if col is None:
                return
            row, best = None, None
            for r in range(m):
                if t[r][col] > 0:
                    ratio = t[r][n_tot] / t[r][col]
                    if best is None or ratio < best or (ratio == best and basis[r] < basis[row]):
                        row, best = r, ratio
            if row is None:
                raise Infeasible("unbounded linear program")
            pivot(row, col)

    if n_eq:
        phase1 = [Fraction(0)] * n_tot
        for k in range(n_eq):
            phase1[n + n_ub + k] = Fraction(-1)
        run(phase1, [True] * n_tot)
        art_sum = sum(t[r][n_tot] for r in range(m) if basis[r] >= n + n_ub)
        if art_sum != 0:
            raise Infeasible("no feasible routing satisfies the constraints")
        # drive artificials out of the basis where possible
        for r in range(m):
            if basis[r] >= n + n_ub:
                col = next((j for j in range(n + n_ub) if t[r][j] != 0), None)
                if col is not None:
                    pivot(r, col)

    allowed = [True] * (n + n_ub) + [False] * n_eq
    phase2 = [_frac(c[j]) if j < n else Fraction(0) for j in range(n_tot)]
    run(phase2, allowed)

    x = [Fraction(0)] * n
    for r in range(m):
        if basis[r] < n:
            x[basis[r]] = t[r][n_tot]
    value = sum(_frac(c[j]) * x[j] for j in range(n))
    return x, value


def solve_routing(
    d: SloMatrix, caps: CapacityVector, rate: float, exact: bool = False
) -> RoutingPlan:
    """Maximize sum z_ij*d_ij over the transportation polytope.

    When total prefill or decode capacity falls short of the rate, caps are
    scaled up to admit a full assignment and the plan is flagged saturated.
    exact=True solves over rationals; the default float path uses the same
    deterministic pivot order.
    """
    m, n = d.shape
    pcap = np.asarray(caps.prefill_cap, dtype=float).copy()
    dcap = np.asarray(caps.decode_cap, dtype=float).copy()
    if len(pcap) != m or len(dcap) != n:
        raise ValueError("capacity dimensions do not match D")
    if np.any(pcap <= 0) or np.any(dcap <= 0):
        raise Infeasible("capacities must be strictly positive")
    if rate <= 0:
        raise ValueError("rate must be positive")

    saturated = False
    if pcap.sum() < rate:
        pcap *= rate / pcap.sum()
        saturated = True
    if dcap.sum() < rate:
        dcap *= rate / dcap.sum()
        saturated = True

    nv = m * n
    c = [d.d[i, j] for i in range(m) for j in range(n)]
    a_ub, b_ub = [], []
    for i in range(m):
        row = [0.0] * nv
        for j in range(n):
            row[i * n + j] = rate
        a_ub.append(row)
        b_ub.append(pcap[i])
    for j in range(n):
        row = [0.0] * nv
        for i in range(m):
            row[i * n + j] = rate
        a_ub.append(row)
        b_ub.append(dcap[j])
    a_eq = [[1.0] * nv]
    b_eq = [1.0]

    if exact:
        zf, value = _simplex_maximize(c, a_ub, b_ub, a_eq, b_eq)
    else:
        zf, value = _simplex_maximize_float(c, a_ub, b_ub, a_eq, b_eq)
    z = np.array([float(v) for v in zf]).reshape(m, n)
    x = z.sum(axis=1)
    y = np.empty_like(z)
    for i in range(m):
        if x[i] > 0:
            y[i] = z[i] / x[i]
        else:
            y[i] = 1.0 / n  # unrouted prefill replica: uniform fallback
    return RoutingPlan(x=x, y=y, z=z, objective=float(value), saturated=saturated)


def capacities_from_costs(
    prefills,
    decodes,
    workload: WorkloadProfile,
    model: ModelSpec,
    cluster: ClusterSpec,
    params: CostParams,
) -> CapacityVector:
    """Per-replica sustainable request rates from the analytic cost model.

    prefills/decodes are sequences of (ServingGroup, ParallelConfig).
    """
    batch_tokens = max(1, int(round(workload.mean_input_len)))
    ctx = workload.mean_context_len
    pcap = []
    for _, cfg in prefills:
        pcap.append(1.0 / prefill_latency(cfg, model, batch_tokens, params, cluster))
    dcap = []
    for _, cfg in decodes:
        b = max_decode_batch(cfg, model, ctx, cluster)
        if b < 1:
            dcap.append(1e-12)
            continue
        step = decode_step_latency(cfg, model, b, ctx, params, cluster)
        dcap.append(b / (workload.mean_output_len * step))
    return CapacityVector(prefill_cap=np.array(pcap), decode_cap=np.array(dcap))


def _last_stage_gpus(cfg):
    return cfg.stages[-1].gpu_ids


def _first_stage_gpus(cfg):
    return cfg.stages[0].gpu_ids


def pair_attainment_analytic(
    prefill,
    decode,
    workload: WorkloadProfile,
    slo: SloSpec,
    prec: KvPrecision,
    model: ModelSpec,
    cluster: ClusterSpec,
    params: CostParams,
    rate: float,
) -> float:
    """M/D/1-style attainment estimate for one prefill/decode pair.

    Deterministic service path plus an exponential approximation of the
    prefill queueing delay; zero once the deterministic path misses the
    deadline or the pair is unstable at the given rate.
    """
    _, pcfg = prefill
    _, dcfg = decode
    batch_tokens = max(1, int(round(workload.mean_input_len)))
    ctx = workload.mean_context_len
    s_p = prefill_latency(pcfg, model, batch_tokens, params, cluster)
    rho = rate * s_p
    if rho >= 1.0:
        return 0.0
    wait = rho * s_p / (2.0 * (1.0 - rho))

    kv = kv_comm_cost(
        _last_stage_gpus(pcfg), _first_stage_gpus(dcfg),
        b=1, s=batch_tokens, model=model, prec=prec, cluster=cluster, params=params,
    )

    b_max = max_decode_batch(dcfg, model, ctx, cluster)
    if b_max < 1:
        return 0.0
    step_full = decode_step_latency(dcfg, model, b_max, ctx, params, cluster)
    # Little's-law estimate of the operating batch at this rate
    b_load = min(b_max, max(1, math.ceil(rate * workload.mean_output_len * step_full)))
    step = decode_step_latency(dcfg, model, b_load, ctx, params, cluster)
    decode_time = workload.mean_output_len * step
    if rate * workload.mean_output_len * step / b_load > 1.0 + 1e-9:
        return 0.0

    base = s_p + kv + decode_time
    deadline = slo.e2e_deadline(workload.mean_output_len)
    slack = deadline - base
    if slack < 0:
        return 0.0
    if wait <= 0:
        return 1.0
    return float(1.0 - math.exp(-slack / wait))


def build_slo_matrix(
    prefills,
    decodes,
    workload: WorkloadProfile,
    slo: SloSpec,
    prec: KvPrecision,
    model: ModelSpec,
    cluster: ClusterSpec,
    params: CostParams,
    mode: str = "analytic",
    caps: CapacityVector | None = None,
    seed: int = 0,
) -> SloMatrix:
    """Estimate SLO attainment for every prefill/decode replica pair.

    The per-pair rate is capped just below each replica's own capacity so
    that the matrix stays informative at rates a single pair cannot carry.
    """
    if not prefills or not decodes:
        raise ValueError("need at least one replica of each phase")
    if caps is None:
        caps = capacities_from_costs(prefills, decodes, workload, model, cluster, params)
    m, n = len(prefills), len(decodes)
    d = np.zeros((m, n))
    if mode == "analytic":
        for i in range(m):
            for j in range(n):
                rate = min(
                    workload.arrival_rate,
                    0.95 * caps.prefill_cap[i],
                    0.95 * caps.decode_cap[j],
                )
                d[i, j] = pair_attainment_analytic(
                    prefills[i], decodes[j], workload, slo, prec,
                    model, cluster, params, rate,
                )
    elif mode == "simulated":
        import os
        from concurrent.futures import ThreadPoolExecutor

        from .simulate import simulate_pair

        def entry(ij):
            i, j = ij
            return simulate_pair(
                prefills[i], decodes[j], workload, slo, prec,
                model, cluster, params, seed=seed,
            )

        pairs = [(i, j) for i in range(m) for j in range(n)]
        workers = int(os.environ.get("HETPLAN_THREADS", "1"))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                values = list(pool.map(entry, pairs))
        else:
            values = [entry(ij) for ij in pairs]
        for (i, j), v in zip(pairs, values):
            d[i, j] = v
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return SloMatrix(d=d)
