"""Texture-extraction ensembles (encoding, histogram, fractal and global pooling) on numpy."""

__version__ = "0.1.0"

from .tensor import Tensor, Parameter, ShapeError, default_dtype, no_grad  # noqa: E402
from .ensemble import (EnsembleConfig, LayerConfig, MethodSelection, TextureEnsemble,  # noqa: E402
                       all_selections, PROPOSED, METHODS)
from .config import RunConfig  # noqa: E402

__all__ = ["Tensor", "Parameter", "ShapeError", "default_dtype", "no_grad", "EnsembleConfig",
           "LayerConfig", "MethodSelection", "TextureEnsemble", "all_selections", "PROPOSED",
           "METHODS", "RunConfig", "__version__"]
