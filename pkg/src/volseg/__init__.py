"""CPU benchmark harness for 3D multi-organ segmentation networks.

The package bundles a verifiable reverse-mode autodiff core, four volumetric
segmentation architectures, NIfTI-1 I/O with a synthetic phantom generator,
preprocessing, patch sampling, Dice evaluation with sliding-window inference,
and a training/benchmark loop exposed through the ``volseg`` command line.
"""

import os as _os

# Best-effort thread cap: honoured if the package is imported before the
# BLAS runtime initialises (always true for the console entry point).
_cap = _os.environ.get("VOLSEG_THREADS")
if _cap:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _cap)

from .core import Tensor, backward, grad_check, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "grad_check", "no_grad", "__version__"]
