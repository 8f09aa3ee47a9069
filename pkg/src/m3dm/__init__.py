"""m3dm: attribute control for linear 3D morphable face models, desk scale.

The pipeline: a synthetic latent world with known attribute hyperplanes
generates attribute-paired face parameters; an analysis-by-synthesis fitter
recovers parameters from rendered observations; a rank-1 global direction
baseline and a residual conditional controller learn attribute edits; two
evaluation protocols (cross-validated L2 and Mahalanobis-to-population)
compare them.
"""

__version__ = "0.1.0"

from .core_model import (
    DimensionMismatchError,
    FaceParams,
    MorphableBasis,
    eval_shape,
    eval_texture,
    icosphere,
    synth_basis,
    vertex_normals,
)

__all__ = [
    "DimensionMismatchError",
    "FaceParams",
    "MorphableBasis",
    "eval_shape",
    "eval_texture",
    "icosphere",
    "synth_basis",
    "vertex_normals",
    "__version__",
]
