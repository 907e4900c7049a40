"""Graph attention enhancement and attention-map distillation on a small numpy autodiff engine."""

from .tensor import Tensor, backward
from .graph import CsrGraph, laplacian_pe, normalized_laplacian, symmetric_eigendecomposition
from .datasets import NodeDataset, load_dataset, save_dataset, sbm_generate
from .layers import Architecture, GraphModel, gkedm_forward
from .distill import DistillConfig
from .pipeline import TrainConfig, TrainReport, alpha_sweep, compare_baselines, distill_student, enhance_with_gkedm, pretrain_gcn

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "CsrGraph", "laplacian_pe", "normalized_laplacian", "symmetric_eigendecomposition",
    "NodeDataset", "load_dataset", "save_dataset", "sbm_generate", "Architecture", "GraphModel", "gkedm_forward",
    "DistillConfig", "TrainConfig", "TrainReport", "alpha_sweep", "compare_baselines", "distill_student",
    "enhance_with_gkedm", "pretrain_gcn",
]
