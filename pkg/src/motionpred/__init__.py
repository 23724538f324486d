"""Skeleton motion prediction on a small numpy autodiff engine.

Submodules: ``autodiff`` (tensors, tape, Adam, gradient checks), ``model``
(attention pose graphs, temporal convolutions, decoder), ``losses`` (training
objectives, MPJPE, Jitter), ``data`` (sequence files, windows, synthetic
motion), ``harness`` and ``cli`` (train/eval/predict/gradcheck).
"""

__version__ = "0.1.0"
