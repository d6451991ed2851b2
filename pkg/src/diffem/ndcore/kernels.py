"""Kernel backend selection.

The compiled Cython kernels are used when the extension was built;
otherwise the numpy implementations are used. Setting the environment
variable ``DIFFEM_PURE_PYTHON=1`` forces the numpy path.
"""
import os

from . import _numpy_kernels

BACKEND = "numpy"
_impl = _numpy_kernels

if not os.environ.get("DIFFEM_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

silu_forward = _impl.silu_forward
silu_backward = _impl.silu_backward
adam_step = _impl.adam_step
inpaint_update = _impl.inpaint_update
# numpy's vectorized isfinite beats the compiled scalar loop (see the
# benchmark), so the finiteness check always uses it.
all_finite = _numpy_kernels.all_finite

__all__ = [
    "BACKEND",
    "silu_forward",
    "silu_backward",
    "adam_step",
    "inpaint_update",
    "all_finite",
]
