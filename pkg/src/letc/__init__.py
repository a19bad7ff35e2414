"""Low-rank tensor completion with spatial and temporal graph regularisation, for kriging."""

__version__ = "0.1.0"

from .graphs import (DiffusionKernel, SpatialGraph, build_temporal_adjacency,
                     gaussian_adjacency, temporal_kernel_laplacian, tgft_transform)
from .harness import MaskScenario, SpeedDataset, apply_scenario, generate_synthetic, load_dataset
from .solver import ObservationSet, SolverConfig, evaluate, solve
from .tensor import LinearTransform, randomized_t_svt, t_product, t_svd, t_svt, t_tnn

__all__ = [
    "DiffusionKernel", "SpatialGraph", "build_temporal_adjacency", "gaussian_adjacency",
    "temporal_kernel_laplacian", "tgft_transform", "MaskScenario", "SpeedDataset",
    "apply_scenario", "generate_synthetic", "load_dataset", "ObservationSet", "SolverConfig",
    "evaluate", "solve", "LinearTransform", "randomized_t_svt", "t_product", "t_svd", "t_svt",
    "t_tnn",
]
