"""Kernel dispatch: compiled Cython core when built, numpy fallback otherwise.

Set ``BLCB_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
by the parity tests).
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("BLCB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

im2col = _impl.im2col
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
col2im = _impl.col2im
batchnorm_train_forward = _impl.batchnorm_train_forward
batchnorm_backward = _impl.batchnorm_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
binary_erode = _impl.binary_erode
binary_dilate = _impl.binary_dilate

__all__ = [
    "BACKEND",
    "im2col",
    "conv2d_forward",
    "conv2d_backward",
    "col2im",
    "batchnorm_train_forward",
    "batchnorm_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "binary_erode",
    "binary_dilate",
]
