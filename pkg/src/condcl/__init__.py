"""Meta-data-aware contrastive losses with analytic gradients.

The package implements a kernel-weighted InfoNCE loss over unit-sphere
embeddings, its exact split into a conditional alignment and a global
uniformity term, and a conditional uniformity estimator that repels only
pairs with dissimilar meta-data. Around the losses sit a finite-difference
gradient oracle, Monte Carlo machinery that verifies the large-batch limit
of the weighted loss, a small MLP encoder trained by manual
backpropagation, and a linear-probe evaluation pipeline, all orchestrated
by the ``condcl`` command-line tool.
"""

from .kernels import KernelConfig, MetaBatch, MetaRecord, WeightMatrix, weight_matrix
from .losses import (
    Batch,
    LossConfig,
    LossResult,
    combined_objective,
    conditional_alignment,
    conditional_uniformity,
    global_uniformity,
    infonce_reference,
    supcon_reference,
    yaware_infonce,
)
from .numerics import Rng

__all__ = [
    "Batch",
    "KernelConfig",
    "LossConfig",
    "LossResult",
    "MetaBatch",
    "MetaRecord",
    "Rng",
    "WeightMatrix",
    "combined_objective",
    "conditional_alignment",
    "conditional_uniformity",
    "global_uniformity",
    "infonce_reference",
    "supcon_reference",
    "weight_matrix",
    "yaware_infonce",
]

__version__ = "0.1.0"
