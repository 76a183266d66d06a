"""Exception types shared across the planner."""


class PlanningError(Exception):
    """Base class for all planner errors."""


class EmptyWindow(PlanningError):
    """No requests fall inside the profiling window."""


class NoPath(PlanningError):
    """No usable network link between two replicas."""


class InfeasibleConfig(PlanningError):
    """A parallel configuration exceeds per-GPU memory."""


class NoFeasibleConfig(PlanningError):
    """A serving group admits no valid parallel configuration."""


class TooManyStages(PlanningError):
    """Pipeline stage count exceeds the bitmask-DP width bound."""


class InfeasiblePartition(PlanningError):
    """Layer partition cannot satisfy per-stage memory caps."""


class Infeasible(PlanningError):
    """Linear program has no feasible point."""


class InsufficientMemory(PlanningError):
    """Cluster cannot hold even one copy of the model."""


class NoSurvivingPhasePair(PlanningError):
    """After GPU removal no prefill/decode pair can be formed."""


class InvalidPlan(PlanningError):
    """Deployment plan violates its structural invariants."""
