"""A compact NCHW deep-learning stack with a grouped-convolution ResNeXt reference.

Pure-numpy kernels, define-by-run reverse-mode autograd with a
finite-difference oracle, a three-form bottleneck block with exact weight
translation, a binary CIFAR data pipeline, a deterministic SGD trainer and
a small CLI.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    ModelConfig,
    build_model,
    count_parameters,
    translate_weights,
    validate_config,
)
from .train import TrainConfig  # noqa: E402
from .estimator import ResNeXtClassifier  # noqa: E402

__all__ = [
    "ModelConfig",
    "ResNeXtClassifier",
    "TrainConfig",
    "build_model",
    "count_parameters",
    "translate_weights",
    "validate_config",
    "__version__",
]
