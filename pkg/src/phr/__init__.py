"""Part-heatmap regression toolkit.

A detection-followed-by-regression keypoint localizer: a detector produces
per-part heatmaps trained with pixelwise sigmoid cross-entropy on visible
parts, and a second network regresses Gaussian confidence maps from those
heatmaps stacked with the input image. Everything (tensor autodiff, layers,
models, synthetic data, training, metrics) runs on CPU at desk scale.
"""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, backward  # noqa: F401
