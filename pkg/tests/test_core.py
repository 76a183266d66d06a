import numpy as np
import pytest
from hypothesis import given, strategies as st

from hetplan import fixtures
from hetplan.core import (
    ClusterSpec,
    Gpu,
    ModelSpec,
    Request,
    RequestTrace,
    SloSpec,
    WorkloadProfile,
    detect_shift,
    profile_from_trace,
    validate_cluster,
)
from hetplan.errors import EmptyWindow

A40 = fixtures.GPU_CATALOG["A40"]


def _two_gpu_spec(beta=None, alpha=None):
    if beta is None:
        beta = [[1e12, 5e9], [5e9, 1e12]]
    if alpha is None:
        alpha = [[0.0, 1e-4], [1e-4, 0.0]]
    return ClusterSpec(
        gpus=(Gpu(0, A40, 0), Gpu(1, A40, 1)), alpha=alpha, beta=beta
    )


class TestValidateCluster:
    def test_valid_spec_is_clean(self):
        assert validate_cluster(_two_gpu_spec()) == []

    def test_fixture_generators_are_clean(self):
        for build in (
            fixtures.cloud_cluster_32,
            fixtures.inhouse_cluster_8,
            fixtures.tiny_homogeneous_4,
            fixtures.tiny_two_type_4,
            fixtures.tiny_bandwidth_split_4,
            lambda: fixtures.symmetric_cluster(16),
        ):
            assert validate_cluster(build()) == []

    def test_asymmetric_bandwidth(self):
        spec = _two_gpu_spec(beta=[[1e12, 5e9], [6e9, 1e12]])
        codes = [(v.code, v.detail) for v in validate_cluster(spec)]
        assert ("asymmetric_bandwidth", (0, 1)) in codes

    def test_duplicate_gpu_id(self):
        spec = ClusterSpec(
            gpus=(Gpu(3, A40, 0), Gpu(3, A40, 0)),
            alpha=np.zeros((2, 2)),
            beta=np.full((2, 2), 1e12),
        )
        codes = [(v.code, v.detail) for v in validate_cluster(spec)]
        assert ("duplicate_gpu_id", (3,)) in codes

    def test_diagonal_not_dominant(self):
        spec = _two_gpu_spec(beta=[[1e9, 5e9], [5e9, 1e12]])
        codes = [v.code for v in validate_cluster(spec)]
        assert "diagonal_not_dominant" in codes

    def test_bad_shape(self):
        spec = ClusterSpec(
            gpus=(Gpu(0, A40, 0), Gpu(1, A40, 0)),
            alpha=np.zeros((2, 2)),
            beta=np.full((3, 3), 1e12),
        )
        codes = [v.code for v in validate_cluster(spec)]
        assert "bad_beta_shape" in codes

    def test_negative_latency(self):
        spec = _two_gpu_spec(alpha=[[0.0, -1e-4], [-1e-4, 0.0]])
        codes = [v.code for v in validate_cluster(spec)]
        assert "negative_latency" in codes


class TestProfileFromTrace:
    def test_uniform_trace(self):
        reqs = tuple(Request(float(t), 512, 16) for t in range(10))
        p = profile_from_trace(RequestTrace(reqs), (0.0, 10.0))
        assert p.arrival_rate == 1.0
        assert p.mean_input_len == 512
        assert p.mean_output_len == 16

    def test_empty_window_raises(self):
        reqs = tuple(Request(float(t), 512, 16) for t in range(5))
        with pytest.raises(EmptyWindow):
            profile_from_trace(RequestTrace(reqs), (5.0, 10.0))

    def test_bad_window_raises(self):
        trace = RequestTrace((Request(0.0, 4, 4),))
        with pytest.raises(ValueError):
            profile_from_trace(trace, (3.0, 3.0))

    def test_order_invariance_at_equal_arrivals(self):
        # requests sharing an arrival time may be listed in any order
        a = RequestTrace((Request(1.0, 10, 2), Request(1.0, 30, 6)))
        b = RequestTrace((Request(1.0, 30, 6), Request(1.0, 10, 2)))
        pa = profile_from_trace(a, (0.0, 2.0))
        pb = profile_from_trace(b, (0.0, 2.0))
        assert (pa.arrival_rate, pa.mean_input_len, pa.mean_output_len) == (
            pb.arrival_rate,
            pb.mean_input_len,
            pb.mean_output_len,
        )

    def test_coding_like_trace_shape(self):
        trace = fixtures.generate_trace(4.0, 1024, 16, 200, seed=1)
        p = profile_from_trace(trace, (0.0, trace.requests[-1].arrival_time + 1e-9))
        assert p.mean_input_len > 10 * p.mean_output_len


profiles = st.builds(
    WorkloadProfile,
    arrival_rate=st.floats(0.01, 100.0),
    mean_input_len=st.floats(1.0, 4096.0),
    mean_output_len=st.floats(1.0, 4096.0),
)


class TestDetectShift:
    @given(profiles, st.floats(1e-6, 10.0))
    def test_identity_never_shifts(self, p, threshold):
        assert detect_shift(p, p, threshold) is False

    def test_output_length_jump(self):
        old = WorkloadProfile(1.0, 512, 16)
        new = WorkloadProfile(1.0, 512, 129)
        assert detect_shift(old, new, 0.2) is True

    def test_small_rate_change_below_threshold(self):
        old = WorkloadProfile(1.0, 512, 16)
        new = WorkloadProfile(1.1, 512, 16)
        assert detect_shift(old, new, 0.2) is False

    def test_bad_threshold(self):
        p = WorkloadProfile(1.0, 512, 16)
        with pytest.raises(ValueError):
            detect_shift(p, p, 0.0)


class TestDomainTypes:
    def test_mean_context_len(self):
        p = WorkloadProfile(1.0, 256, 256)
        assert p.mean_context_len == 256 + 128

    def test_profile_mean_sample_mismatch(self):
        with pytest.raises(ValueError):
            WorkloadProfile(1.0, 100, 16, input_len_samples=(10, 20))

    def test_slo_deadline(self):
        slo = SloSpec(ttft_ref=0.5, tpot_ref=0.05, slo_scale=2.0)
        assert slo.e2e_deadline(100) == pytest.approx(2.0 * (0.5 + 100 * 0.05))
        assert slo.e2e_deadline(100, scale=1.0) == pytest.approx(0.5 + 5.0)

    def test_trace_rejects_unordered_arrivals(self):
        with pytest.raises(ValueError):
            RequestTrace((Request(1.0, 4, 4), Request(0.5, 4, 4)))

    def test_trace_rejects_zero_lengths(self):
        with pytest.raises(ValueError):
            RequestTrace((Request(0.0, 0, 4),))

    def test_model_kv_bytes(self):
        m = ModelSpec(n_layers=32, hidden_size=4096, n_params=7e9)
        assert m.kv_bytes_per_token_layer_16bit == 4 * 4096
        assert m.weight_bytes == 14e9

    def test_subset_keeps_matrix_entries(self):
        c = fixtures.tiny_two_type_4()
        sub = c.subset({0, 3})
        assert [g.gpu_id for g in sub.gpus] == [0, 3]
        i0, i3 = c.index_of(0), c.index_of(3)
        assert sub.beta[0, 1] == c.beta[i0, i3]
