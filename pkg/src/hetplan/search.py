"""Upper-level tabu search over group construction and phase designation,
plus the flip-only lightweight rescheduling path.

The lower-level evaluation (parallel configs, SLO matrix, routing LP) is
memoized by a canonical solution key; the search itself is sequential and
deterministic under a fixed seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ClusterSpec, ModelSpec, SloSpec, WorkloadProfile
from .costs import CostParams, KvPrecision, group_memory_feasible
from .errors import InsufficientMemory, NoFeasibleConfig, NoSurvivingPhasePair
from .orchestrate import (
    CapacityVector,
    SloMatrix,
    build_slo_matrix,
    capacities_from_costs,
    solve_routing,
)
from .parallel import ParallelConfig, Phase, ServingGroup, best_config
from .simulate import DeploymentPlan, Replica

Solution = tuple[ServingGroup, ...]


@dataclass(frozen=True)
class TabuParams:
    n_step: int = 100
    n_nghb: int = 10
    n_mem: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.n_nghb, self.n_mem) < 1 or self.n_step < 0:
            raise ValueError("tabu parameters must be >= 1 (n_step >= 0)")


@dataclass
class SearchResult:
    plan: DeploymentPlan
    best_score: float
    score_trace: list[float]
    candidates_scored: int
    lower_level_evals: int
    seed: int
    simulated_score: float | None = None


def canonical_key(sol: Solution):
    return tuple(sorted((tuple(sorted(g.gpu_ids)), g.phase.value) for g in sol))


def canonical_order(sol: Solution) -> Solution:
    return tuple(
        sorted(sol, key=lambda g: (tuple(sorted(g.gpu_ids)), g.phase.value))
    )


def initial_solution(
    cluster: ClusterSpec, model: ModelSpec, rng: np.random.Generator
) -> Solution:
    """Agglomerative clustering (average linkage, distance 1/beta) cut at
    the maximal cluster count whose clusters are all memory-feasible."""
    all_ids = [g.gpu_id for g in cluster.gpus]
    if not group_memory_feasible(all_ids, model, cluster):
        raise InsufficientMemory("cluster memory cannot hold one model copy")
    n = cluster.n_gpus
    if n == 1:
        groups = [frozenset(all_ids)]
    else:
        with np.errstate(divide="ignore"):
            d = 1.0 / cluster.beta
        np.fill_diagonal(d, 0.0)
        parts = [frozenset([i]) for i in range(n)]
        while True:
            if all(
                group_memory_feasible([all_ids[i] for i in p], model, cluster)
                for p in parts
            ):
                break
            # agglomerate one level: average linkage; ties merge the smallest
            # clusters (lowest indices) first so tied geometries split evenly
            best = None
            for ai in range(len(parts)):
                for bi in range(ai + 1, len(parts)):
                    a, b = parts[ai], parts[bi]
                    dist = d[np.ix_(sorted(a), sorted(b))].mean()
                    key = (dist, len(a) + len(b), min(a), min(b))
                    if best is None or key < best[0]:
                        best = (key, ai, bi)
            _, ai, bi = best
            merged = parts[ai] | parts[bi]
            parts = [p for k, p in enumerate(parts) if k not in (ai, bi)]
            parts.append(merged)
        groups = [frozenset(all_ids[i] for i in p) for p in parts]

    phases = [Phase.PREFILL if rng.random() < 0.5 else Phase.DECODE for _ in groups]
    if len(groups) >= 2:
        if all(p is Phase.PREFILL for p in phases):
            phases[-1] = Phase.DECODE
        elif all(p is Phase.DECODE for p in phases):
            phases[-1] = Phase.PREFILL
    sol = tuple(ServingGroup(g, p) for g, p in zip(groups, phases))
    return canonical_order(sol)


def _split_group(group: ServingGroup, r: float, cluster: ClusterSpec, rng):
    """Per-type split: floor(count*r) GPUs of each type to the first child."""
    by_type: dict[str, list[int]] = {}
    for g in sorted(group.gpu_ids):
        by_type.setdefault(cluster.gpu(g).gpu_type.name, []).append(g)
    first, second = [], []
    for ids in by_type.values():
        k = int(len(ids) * r)
        first.extend(ids[:k])
        second.extend(ids[k:])
    if not first or not second:
        return None
    p1 = Phase.PREFILL if rng.random() < 0.5 else Phase.DECODE
    p2 = Phase.PREFILL if rng.random() < 0.5 else Phase.DECODE
    return (ServingGroup(frozenset(first), p1), ServingGroup(frozenset(second), p2))


def _one_neighbor(sol: Solution, cluster: ClusterSpec, rng) -> Solution | None:
    move = rng.integers(4)
    groups = list(sol)
    if move == 0:  # flip phase
        i = int(rng.integers(len(groups)))
        g = groups[i]
        flipped = Phase.DECODE if g.phase is Phase.PREFILL else Phase.PREFILL
        groups[i] = ServingGroup(g.gpu_ids, flipped)
    elif move == 1:  # split
        i = int(rng.integers(len(groups)))
        if len(groups[i].gpu_ids) < 2:
            return None
        r = float(rng.random())
        parts = _split_group(groups[i], r, cluster, rng)
        if parts is None:
            return None
        groups[i : i + 1] = list(parts)
    elif move == 2:  # merge
        if len(groups) < 2:
            return None
        i, j = rng.choice(len(groups), size=2, replace=False)
        i, j = int(min(i, j)), int(max(i, j))
        merged = groups[i].gpu_ids | groups[j].gpu_ids
        phase = Phase.PREFILL if rng.random() < 0.5 else Phase.DECODE
        del groups[j]
        groups[i] = ServingGroup(merged, phase)
    else:  # move GPUs of one type between groups
        if len(groups) < 2:
            return None
        i, j = rng.choice(len(groups), size=2, replace=False)
        i, j = int(i), int(j)
        src = groups[i]
        by_type: dict[str, list[int]] = {}
        for g in sorted(src.gpu_ids):
            by_type.setdefault(cluster.gpu(g).gpu_type.name, []).append(g)
        tname = sorted(by_type)[int(rng.integers(len(by_type)))]
        ids = by_type[tname]
        m_t = int(rng.integers(1, len(ids) + 1))
        if m_t >= len(src.gpu_ids):
            return None  # would empty the source group
        moved = set(ids[:m_t])
        groups[i] = ServingGroup(src.gpu_ids - moved, src.phase)
        groups[j] = ServingGroup(groups[j].gpu_ids | moved, groups[j].phase)
    return canonical_order(tuple(groups))


def neighbors(
    sol: Solution,
    n: int,
    rng: np.random.Generator,
    cluster: ClusterSpec,
    model: ModelSpec,
) -> list[Solution]:
    """Up to n neighbors via {flip, split, merge, move}; candidates failing
    the early memory check are discarded and redrawn (10n attempt budget)."""
    out: list[Solution] = []
    attempts = 0
    while len(out) < n and attempts < 10 * n:
        attempts += 1
        cand = _one_neighbor(sol, cluster, rng)
        if cand is None:
            continue
        if not all(group_memory_feasible(g.gpu_ids, model, cluster) for g in cand):
            continue
        out.append(cand)
    return out


class Evaluator:
    """Memoized lower-level evaluation of upper-level solutions."""

    def __init__(
        self,
        model: ModelSpec,
        cluster: ClusterSpec,
        workload: WorkloadProfile,
        slo: SloSpec,
        prec: KvPrecision,
        params: CostParams,
        mode: str = "analytic",
        sim_seed: int = 0,
        frozen_configs: dict | None = None,
    ):
        self.model = model
        self.cluster = cluster
        self.workload = workload
        self.slo = slo
        self.prec = prec
        self.params = params
        self.mode = mode
        self.sim_seed = sim_seed
        self.frozen_configs = frozen_configs
        self._score_cache: dict = {}
        self._config_cache: dict = {}
        self.candidates_scored = 0
        self.lower_level_evals = 0

    def config_for(self, group: ServingGroup) -> ParallelConfig:
        key = (tuple(sorted(group.gpu_ids)), group.phase.value)
        if self.frozen_configs is not None:
            frozen = self.frozen_configs.get(tuple(sorted(group.gpu_ids)))
            if frozen is not None:
                return frozen
        if key not in self._config_cache:
            self._config_cache[key] = best_config(
                group, self.model, self.cluster, self.workload, self.params
            )
        return self._config_cache[key]

    def _lower_level(self, sol: Solution) -> float:
        prefills, decodes = [], []
        try:
            for g in sol:
                if not group_memory_feasible(g.gpu_ids, self.model, self.cluster):
                    return 0.0
                cfg = self.config_for(g)
                (prefills if g.phase is Phase.PREFILL else decodes).append((g, cfg))
        except NoFeasibleConfig:
            return 0.0
        if not prefills or not decodes:
            return 0.0
        caps = capacities_from_costs(
            prefills, decodes, self.workload, self.model, self.cluster, self.params
        )
        d = build_slo_matrix(
            prefills, decodes, self.workload, self.slo, self.prec,
            self.model, self.cluster, self.params, mode="analytic", caps=caps,
        )
        routing = solve_routing(d, caps, self.workload.arrival_rate)
        score = routing.objective
        if routing.saturated:
            rate = self.workload.arrival_rate
            score *= min(
                1.0, caps.prefill_cap.sum() / rate, caps.decode_cap.sum() / rate
            )
        if self.mode == "simulated":
            plan = self.materialize(sol)
            if plan is None:
                return 0.0
            from .fixtures import trace_from_profile
            from .simulate import simulate

            trace = trace_from_profile(self.workload, n_requests=200, seed=self.sim_seed)
            res = simulate(
                plan, trace, self.slo, self.params,
                seed=self.sim_seed, model=self.model, cluster=self.cluster,
            )
            return res.attainment_e2e
        return score

    def evaluate(self, sol: Solution) -> float:
        self.candidates_scored += 1
        key = canonical_key(sol)
        if key not in self._score_cache:
            self.lower_level_evals += 1
            self._score_cache[key] = self._lower_level(sol)
        return self._score_cache[key]

    def is_cached(self, sol: Solution) -> bool:
        return canonical_key(sol) in self._score_cache

    def materialize(self, sol: Solution) -> DeploymentPlan | None:
        """Build the full DeploymentPlan for a solution (None if infeasible)."""
        prefills, decodes = [], []
        try:
            for g in canonical_order(sol):
                cfg = self.config_for(g)
                (prefills if g.phase is Phase.PREFILL else decodes).append((g, cfg))
        except NoFeasibleConfig:
            return None
        if not prefills or not decodes:
            return None
        caps = capacities_from_costs(
            prefills, decodes, self.workload, self.model, self.cluster, self.params
        )
        d = build_slo_matrix(
            prefills, decodes, self.workload, self.slo, self.prec,
            self.model, self.cluster, self.params, mode="analytic", caps=caps,
        )
        routing = solve_routing(d, caps, self.workload.arrival_rate)
        replicas = tuple(
            Replica(g, cfg) for g, cfg in list(prefills) + list(decodes)
        )
        return DeploymentPlan(replicas=replicas, routing=routing, kv_precision=self.prec)


def _tabu_loop(
    start: Solution,
    evaluator: Evaluator,
    tp: TabuParams,
    neighbor_fn,
    rng: np.random.Generator,
    stop_when_exhausted: bool = False,
) -> tuple[Solution, float, list[float]]:
    x = start
    x_best = start
    f_best = evaluator.evaluate(start)
    tabu: list = []
    trace = [f_best]
    for _ in range(tp.n_step):
        cands = []
        attempts = 0
        while len(cands) < tp.n_nghb and attempts < 10 * tp.n_nghb:
            attempts += 1
            batch = neighbor_fn(x, 1, rng)
            for c in batch:
                if canonical_key(c) in tabu:
                    continue
                cands.append(c)
        if stop_when_exhausted:
            cands = [c for c in cands if not evaluator.is_cached(c)]
        if not cands:
            break
        scored = sorted(
            ((evaluator.evaluate(c), canonical_key(c), c) for c in cands),
            key=lambda t: (-t[0], t[1]),
        )
        f_x, _, x = scored[0][0], scored[0][1], scored[0][2]
        if f_x > f_best:
            f_best, x_best = f_x, x
        tabu.append(canonical_key(x))
        if len(tabu) > tp.n_mem:
            tabu = tabu[-tp.n_mem :]
        trace.append(f_best)
    return x_best, f_best, trace


def tabu_search(
    cluster: ClusterSpec,
    model: ModelSpec,
    workload: WorkloadProfile,
    slo: SloSpec,
    prec: KvPrecision = KvPrecision(16),
    params: CostParams = CostParams(),
    tp: TabuParams = TabuParams(),
    mode: str = "analytic",
) -> SearchResult:
    """Full upper-level search; returns the best plan plus provenance."""
    rng = np.random.default_rng(tp.rng_seed)
    evaluator = Evaluator(model, cluster, workload, slo, prec, params, mode=mode,
                          sim_seed=tp.rng_seed)
    start = initial_solution(cluster, model, rng)

    def nf(sol, n, r):
        return neighbors(sol, n, r, cluster, model)

    x_best, f_best, trace = _tabu_loop(start, evaluator, tp, nf, rng)
    plan = evaluator.materialize(x_best)
    if plan is None:
        # fall back to a 2-way split of the initial grouping if the search
        # never found a phase-complete feasible solution
        raise NoFeasibleConfig("search found no feasible phase-complete plan")
    return SearchResult(
        plan=plan,
        best_score=f_best,
        score_trace=trace,
        candidates_scored=evaluator.candidates_scored,
        lower_level_evals=evaluator.lower_level_evals,
        seed=tp.rng_seed,
    )


def _flip_neighbors(sol: Solution, n: int, rng: np.random.Generator) -> list[Solution]:
    out = []
    for _ in range(n):
        i = int(rng.integers(len(sol)))
        g = sol[i]
        flipped = Phase.DECODE if g.phase is Phase.PREFILL else Phase.PREFILL
        groups = list(sol)
        groups[i] = ServingGroup(g.gpu_ids, flipped)
        out.append(canonical_order(tuple(groups)))
    return out


def lightweight_reschedule(
    plan: DeploymentPlan,
    cluster: ClusterSpec,
    model: ModelSpec,
    workload: WorkloadProfile,
    slo: SloSpec,
    prec: KvPrecision = KvPrecision(16),
    params: CostParams = CostParams(),
    tp: TabuParams = TabuParams(),
    removed_gpu_ids: set[int] | None = None,
) -> SearchResult:
    """Flip-only re-search with group membership and parallel configs frozen.

    Groups touched by removed GPUs are dissolved entirely; surviving groups
    keep their configuration. Terminates early once a step produces no
    not-yet-evaluated flip candidate.
    """
    removed = set(removed_gpu_ids or ())
    survivors = [r for r in plan.replicas if not (r.group.gpu_ids & removed)]
    if len(survivors) < 2:
        raise NoSurvivingPhasePair("fewer than two groups survive the removal")

    frozen = {tuple(sorted(r.group.gpu_ids)): r.config for r in survivors}
    rng = np.random.default_rng(tp.rng_seed)
    evaluator = Evaluator(
        model, cluster, workload, slo, prec, params,
        mode="analytic", sim_seed=tp.rng_seed, frozen_configs=frozen,
    )
    start = canonical_order(tuple(r.group for r in survivors))

    def nf(sol, n, r):
        return _flip_neighbors(sol, n, r)

    x_best, f_best, trace = _tabu_loop(
        start, evaluator, tp, nf, rng, stop_when_exhausted=True
    )
    if f_best <= 0.0:
        raise NoSurvivingPhasePair("no feasible phase assignment over survivors")
    new_plan = evaluator.materialize(x_best)
    if new_plan is None:
        raise NoSurvivingPhasePair("no feasible phase assignment over survivors")
    return SearchResult(
        plan=new_plan,
        best_score=f_best,
        score_trace=trace,
        candidates_scored=evaluator.candidates_scored,
        lower_level_evals=evaluator.lower_level_evals,
        seed=tp.rng_seed,
    )
