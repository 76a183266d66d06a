"""Deployment planner and SLO simulator for phase-split LLM serving on
heterogeneous GPU clusters."""

from .core import (
    ClusterSpec,
    Gpu,
    GpuType,
    ModelSpec,
    Request,
    RequestTrace,
    SloSpec,
    WorkloadProfile,
    detect_shift,
    profile_from_trace,
    validate_cluster,
)
from .costs import (
    CostParams,
    KvPrecision,
    decode_step_latency,
    group_memory_feasible,
    kv_comm_cost,
    max_decode_batch,
    prefill_latency,
)
from .orchestrate import (
    CapacityVector,
    RoutingPlan,
    SloMatrix,
    build_slo_matrix,
    solve_routing,
)
from .parallel import (
    ParallelConfig,
    Phase,
    ServingGroup,
    Stage,
    best_config,
    enumerate_configs,
    partition_layers,
    route_pipeline,
)
from .search import (
    SearchResult,
    TabuParams,
    initial_solution,
    lightweight_reschedule,
    neighbors,
    tabu_search,
)
from .simulate import (
    DeploymentPlan,
    Replica,
    SimResult,
    attainment_at_scale,
    simulate,
)

__version__ = "0.1.0"
