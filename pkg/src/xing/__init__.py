"""Cross-attention pose-transfer GAN engine on a self-contained autodiff core.

The package is organized bottom-up:

- ``tensor``: float64 reverse-mode autodiff (the only numerics substrate).
- ``nn``: parameter containers and initializers for conv / layer-norm layers.
- ``pose_synth``: procedural stick-figure episodes (images + joint heatmaps).
- ``attention``: shape/appearance cross-attention blocks, multi-scale
  variants with external-attention refinement, and a slow reference oracle.
- ``fusion``: multi-image decoding and co-attention compositing.
- ``generator``: full two-stream generator in both variants.
- ``adversarial``: patch discriminators, losses, Adam, and the training loop.
- ``metrics``: SSIM.
- ``checkpoint`` / ``config`` / ``imageio`` / ``cli``: persistence and tooling.

The ``XING_THREADS`` environment variable caps BLAS worker threads (default
1, for determinism and predictable benchmarks). It must be honored before
numpy first loads, hence the assignments below run ahead of any import.
"""

import os as _os

_threads = _os.environ.get("XING_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
             "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)
del _os, _threads, _var

from .tensor import (
    ContractError,
    Parameter,
    ShapeError,
    Tensor,
    backward,
    grad_check,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "ContractError",
    "backward",
    "grad_check",
    "__version__",
]
