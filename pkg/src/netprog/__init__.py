"""Spatiotemporal propagation of a positive signal on a fixed mesh."""
from .estimator import NetworkProgressionModel, check_dataset
from .inference import FitResult, SamplerConfig, fit
from .model import (
    IndividualParameters,
    LongitudinalDataset,
    PopulationParameters,
    forward_map,
    log_likelihood,
)
from .network import (
    MeshNetwork,
    build_interpolator,
    build_network,
    geodesic_distances,
    select_control_nodes,
)
from .personalize import PersonalizationConfig, personalize, predict
from .simulate import CohortSpec, simulate_cohort

__version__ = "0.1.0"

__all__ = [
    "CohortSpec",
    "FitResult",
    "IndividualParameters",
    "LongitudinalDataset",
    "MeshNetwork",
    "NetworkProgressionModel",
    "PersonalizationConfig",
    "PopulationParameters",
    "SamplerConfig",
    "build_interpolator",
    "build_network",
    "check_dataset",
    "fit",
    "forward_map",
    "geodesic_distances",
    "log_likelihood",
    "personalize",
    "predict",
    "select_control_nodes",
    "simulate_cohort",
]
