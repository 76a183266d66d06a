import itertools

import numpy as np
import pytest

from hetplan import fixtures
from hetplan.core import SloSpec, WorkloadProfile
from hetplan.costs import CostParams, KvPrecision
from hetplan.errors import Infeasible
from hetplan.orchestrate import (
    CapacityVector,
    RoutingPlan,
    SloMatrix,
    build_slo_matrix,
    capacities_from_costs,
    solve_routing,
)
from hetplan.parallel import Phase, ServingGroup, best_config


def lp_vertex_oracle(d: np.ndarray, pcap, dcap, rate: float) -> float:
    """Optimum of the routing LP by enumerating basic feasible points.

    Constraints: sum z = 1 (equality), rate * row/col sums <= caps, z >= 0.
    Every vertex activates nv-1 of the inequality/bound constraints on top
    of the equality; enumerate all combinations and keep the feasible max.
    """
    m, n = d.shape
    nv = m * n
    rows, rhs = [], []
    for i in range(m):
        r = np.zeros(nv)
        r[i * n : (i + 1) * n] = rate
        rows.append(r)
        rhs.append(pcap[i])
    for j in range(n):
        r = np.zeros(nv)
        r[j::n] = rate
        rows.append(r)
        rhs.append(dcap[j])
    a_ub = np.array(rows)
    b_ub = np.array(rhs)
    bounds = np.eye(nv)  # z_k >= 0 active as z_k = 0

    sys_rows = np.vstack([a_ub, bounds])
    sys_rhs = np.concatenate([b_ub, np.zeros(nv)])
    eq = np.ones(nv)

    combos = list(itertools.combinations(range(len(sys_rows)), nv - 1))
    mats = np.stack([np.vstack([eq, sys_rows[list(c)]]) for c in combos])
    rhss = np.stack([np.concatenate([[1.0], sys_rhs[list(c)]]) for c in combos])
    dets = np.linalg.det(mats)
    # singularity test relative to the Hadamard bound on |det|
    hadamard = np.linalg.norm(mats, axis=2).prod(axis=1)
    ok = np.abs(dets) > 1e-9 * np.maximum(hadamard, 1e-300)
    best = -np.inf
    c = d.reshape(-1)
    if ok.any():
        zs = np.linalg.solve(mats[ok], rhss[ok][..., None])[..., 0]
        feas = (
            (zs >= -1e-9).all(axis=1)
            & (zs @ a_ub.T <= b_ub + 1e-9 * np.maximum(1.0, np.abs(b_ub))).all(axis=1)
        )
        if feas.any():
            best = float((zs[feas] @ c).max())
    return best


def _random_instance(m, n, rng, slack=1.3):
    d = rng.uniform(0.0, 1.0, size=(m, n))
    rate = float(rng.uniform(0.5, 20.0))
    pcap = rng.uniform(0.1, 1.0, size=m)
    pcap *= slack * rate / pcap.sum()
    dcap = rng.uniform(0.1, 1.0, size=n)
    dcap *= slack * rate / dcap.sum()
    return d, pcap, dcap, rate


class TestSolveRouting:
    def test_one_by_one(self):
        plan = solve_routing(
            SloMatrix(np.array([[0.7]])),
            CapacityVector(np.array([10.0]), np.array([10.0])),
            rate=1.0,
        )
        assert plan.x.tolist() == [1.0]
        assert plan.y.tolist() == [[1.0]]
        assert plan.objective == pytest.approx(0.7)

    def test_two_by_two_ample_capacity(self):
        d = SloMatrix(np.array([[0.9, 0.5], [0.4, 0.8]]))
        caps = CapacityVector(np.array([10.0, 10.0]), np.array([10.0, 10.0]))
        plan = solve_routing(d, caps, rate=1.0)
        assert plan.objective == pytest.approx(0.9, abs=1e-12)
        assert plan.z == pytest.approx(np.array([[1.0, 0.0], [0.0, 0.0]]), abs=1e-12)

    def test_two_by_two_capacity_limited(self):
        d = SloMatrix(np.array([[0.9, 0.5], [0.4, 0.8]]))
        caps = CapacityVector(np.array([0.5, 10.0]), np.array([10.0, 10.0]))
        plan = solve_routing(d, caps, rate=1.0)
        assert plan.objective == pytest.approx(0.85, abs=1e-12)
        assert plan.z[0, 0] == pytest.approx(0.5, abs=1e-12)
        assert plan.z[1, 1] == pytest.approx(0.5, abs=1e-12)

    def test_exact_path_matches_float(self):
        rng = np.random.default_rng(11)
        for _ in range(15):
            d, pcap, dcap, rate = _random_instance(2, 3, rng)
            caps = CapacityVector(pcap, dcap)
            f = solve_routing(SloMatrix(d), caps, rate, exact=False)
            e = solve_routing(SloMatrix(d), caps, rate, exact=True)
            assert f.objective == pytest.approx(e.objective, abs=1e-9)

    @pytest.mark.parametrize("shape", [(2, 2), (3, 3)])
    def test_matches_vertex_enumeration(self, shape):
        m, n = shape
        rng = np.random.default_rng(m * 31 + n)
        for _ in range(30):
            d, pcap, dcap, rate = _random_instance(m, n, rng)
            plan = solve_routing(SloMatrix(d), CapacityVector(pcap, dcap), rate)
            oracle = lp_vertex_oracle(d, pcap, dcap, rate)
            assert plan.objective == pytest.approx(oracle, abs=1e-9)

    def test_scaling_d_scales_objective_not_routing(self):
        rng = np.random.default_rng(5)
        d, pcap, dcap, rate = _random_instance(3, 3, rng)
        caps = CapacityVector(pcap, dcap)
        base = solve_routing(SloMatrix(d), caps, rate)
        scaled = solve_routing(SloMatrix(0.25 * d), caps, rate)
        assert scaled.objective == pytest.approx(0.25 * base.objective, rel=1e-9)
        assert scaled.z == pytest.approx(base.z, abs=1e-9)

    def test_saturated_flag_and_full_assignment(self):
        d = SloMatrix(np.array([[0.9, 0.5], [0.4, 0.8]]))
        caps = CapacityVector(np.array([0.1, 0.1]), np.array([10.0, 10.0]))
        plan = solve_routing(d, caps, rate=1.0)
        assert plan.saturated is True
        assert plan.z.sum() == pytest.approx(1.0, abs=1e-9)

    def test_invariants_hold_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            d, pcap, dcap, rate = _random_instance(3, 2, rng)
            plan = solve_routing(SloMatrix(d), CapacityVector(pcap, dcap), rate)
            assert plan.x.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(plan.z >= -1e-12)
            assert plan.y.sum(axis=1) == pytest.approx(np.ones(3), abs=1e-9)
            assert plan.z == pytest.approx(plan.x[:, None] * plan.y, abs=1e-9)

    def test_nonpositive_caps_rejected(self):
        d = SloMatrix(np.array([[0.5]]))
        with pytest.raises(Infeasible):
            solve_routing(d, CapacityVector(np.array([0.0]), np.array([1.0])), 1.0)

    def test_dimension_mismatch(self):
        d = SloMatrix(np.array([[0.5, 0.5]]))
        with pytest.raises(ValueError):
            solve_routing(d, CapacityVector(np.array([1.0]), np.array([1.0])), 1.0)


class TestRoutingPlanInvariants:
    def test_x_must_sum_to_one(self):
        with pytest.raises(ValueError):
            RoutingPlan(x=np.array([0.5]), y=np.array([[1.0]]), z=np.array([[0.5]]))

    def test_y_rows_must_be_distributions(self):
        with pytest.raises(ValueError):
            RoutingPlan(x=np.array([1.0]), y=np.array([[0.5]]), z=np.array([[0.5]]))


def _pair_fixtures(hidden=2048):
    cluster = fixtures.tiny_homogeneous_4()
    model = fixtures.tiny_model()
    params = CostParams()
    w = WorkloadProfile(arrival_rate=0.5, mean_input_len=256, mean_output_len=8)
    pg = ServingGroup(frozenset({0, 1}), Phase.PREFILL)
    dg = ServingGroup(frozenset({2, 3}), Phase.DECODE)
    prefills = [(pg, best_config(pg, model, cluster, w, params))]
    decodes = [(dg, best_config(dg, model, cluster, w, params))]
    return cluster, model, params, w, prefills, decodes


class TestBuildSloMatrix:
    def test_slack_system_near_one(self):
        cluster, model, params, w, prefills, decodes = _pair_fixtures()
        slo = SloSpec(ttft_ref=5.0, tpot_ref=0.5, slo_scale=2.0)
        d = build_slo_matrix(prefills, decodes, w, slo, KvPrecision(16), model, cluster, params)
        assert d.d[0, 0] > 0.99

    def test_deterministic_miss_is_zero(self):
        cluster, model, params, w, prefills, decodes = _pair_fixtures()
        slo = SloSpec(ttft_ref=1e-6, tpot_ref=1e-7, slo_scale=1.0)
        d = build_slo_matrix(prefills, decodes, w, slo, KvPrecision(16), model, cluster, params)
        assert d.d[0, 0] == 0.0

    def test_identical_pairs_identical_entries(self):
        cluster, model, params, w, prefills, decodes = _pair_fixtures()
        slo = SloSpec(ttft_ref=1.0, tpot_ref=0.1, slo_scale=1.5)
        d = build_slo_matrix(
            prefills * 2, decodes * 2, w, slo, KvPrecision(16), model, cluster, params
        )
        assert np.all(d.d == d.d[0, 0])

    def test_simulated_mode_agrees_in_direction(self):
        cluster, model, params, w, prefills, decodes = _pair_fixtures()
        slo = SloSpec(ttft_ref=5.0, tpot_ref=0.5, slo_scale=2.0)
        d = build_slo_matrix(
            prefills, decodes, w, slo, KvPrecision(16), model, cluster, params,
            mode="simulated",
        )
        assert d.d[0, 0] > 0.9

    def test_requires_both_phases(self):
        cluster, model, params, w, prefills, decodes = _pair_fixtures()
        slo = SloSpec(ttft_ref=1.0, tpot_ref=0.1)
        with pytest.raises(ValueError):
            build_slo_matrix(prefills, [], w, slo, KvPrecision(16), model, cluster, params)

    def test_capacities_positive(self):
        cluster, model, params, w, prefills, decodes = _pair_fixtures()
        caps = capacities_from_costs(prefills, decodes, w, model, cluster, params)
        assert np.all(caps.prefill_cap > 0)
        assert np.all(caps.decode_cap > 0)
