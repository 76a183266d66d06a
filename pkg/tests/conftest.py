import numpy as np
import pytest

from hetplan import CostParams, SloSpec
from hetplan.core import ClusterSpec, Gpu, GpuType
from hetplan import fixtures


@pytest.fixture
def tiny_cluster():
    return fixtures.tiny_homogeneous_4()


@pytest.fixture
def tiny_model():
    return fixtures.tiny_model()


@pytest.fixture
def params():
    return CostParams()


@pytest.fixture
def slo():
    return SloSpec(ttft_ref=0.5, tpot_ref=0.05, slo_scale=1.5)


def single_gpu_cluster(gpu_type: GpuType) -> ClusterSpec:
    return ClusterSpec(
        gpus=(Gpu(0, gpu_type, 0),),
        alpha=np.zeros((1, 1)),
        beta=np.array([[1e12]]),
    )


def chain_cluster(betas: np.ndarray, gpu_type: GpuType | None = None) -> ClusterSpec:
    """One GPU per matrix row; beta given, alpha zero. For routing tests."""
    g = betas.shape[0]
    if gpu_type is None:
        gpu_type = fixtures.GPU_CATALOG["A5000"]
    b = betas.astype(float).copy()
    np.fill_diagonal(b, max(1e12, float(b.max()) * 10))
    return ClusterSpec(
        gpus=tuple(Gpu(i, gpu_type, i) for i in range(g)),
        alpha=np.zeros((g, g)),
        beta=b,
    )
