"""Closed-loop intersection testbed: dual-ring adaptive signal control,
decision-tree surrogate learning, and falsified-BSM attack evaluation."""

from .domain import (
    BsmRecord,
    ScenarioConfig,
    SpatRecord,
    TimingPlan,
    eta_of,
    validate_plan,
)

__version__ = "0.1.0"

__all__ = [
    "BsmRecord",
    "ScenarioConfig",
    "SpatRecord",
    "TimingPlan",
    "eta_of",
    "validate_plan",
    "__version__",
]
