"""seisfault: 2.5D seismic fault segmentation on synthetic volumes.

Adjacent crossline slices are stacked into the channel dimension and fed to
a ViT encoder whose frozen weights are adapted through small residual
bottlenecks; a prompt-free decoder restores full resolution with stride-2
transposed convolutions whose weights are fine-tuned as a frozen base plus
an L2-regularized delta. Everything runs on a small reverse-mode autodiff
core with compiled convolution kernels (numpy fallback).
"""

__version__ = "0.1.0"

from .kernels import active_backend

__all__ = ["active_backend", "__version__"]
