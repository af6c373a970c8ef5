"""Simulation-based estimation of joint longitudinal and event-time models."""

from .hazards import ClosedFormHazard, ConstantHazard, StepHazard, cox_rate
from .model import (
    DriftModel,
    LinearMixedModel,
    LongitudinalSpec,
    ModelSetup,
    ObservedDataset,
    Subject,
)
from .simulate import (
    SimulatedSample,
    TrajectoryGrid,
    simulate_counting_paths,
    simulate_drift_paths,
    simulate_joint_samples,
    simulate_linear_mixed_paths,
    stack_samples,
)

__version__ = "0.1.0"

__all__ = [
    "ClosedFormHazard",
    "ConstantHazard",
    "StepHazard",
    "cox_rate",
    "DriftModel",
    "LinearMixedModel",
    "LongitudinalSpec",
    "ModelSetup",
    "ObservedDataset",
    "Subject",
    "SimulatedSample",
    "TrajectoryGrid",
    "simulate_counting_paths",
    "simulate_drift_paths",
    "simulate_joint_samples",
    "simulate_linear_mixed_paths",
    "stack_samples",
    "__version__",
]
