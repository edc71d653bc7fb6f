"""Pick the gram-kernel implementation at import time.

The compiled extension is used when it imports; ``KERNATTN_BACKEND=python``
forces the numpy fallback and ``KERNATTN_BACKEND=compiled`` makes a missing
extension an import error.  Even with the extension loaded, the dot-product
kernels (edp, quadratic) go through numpy, whose BLAS matmul beats the
plain loops; the distance and min kernels use the compiled loops.
"""

import os

from . import _gram_py

_choice = os.environ.get("KERNATTN_BACKEND", "auto").lower()
if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"KERNATTN_BACKEND must be auto, python or compiled, got {_choice!r}")

_ext = None
if _choice != "python":
    try:
        from . import _gram_ext as _ext
    except ImportError:
        if _choice == "compiled":
            raise

# kind codes whose Gram is a matrix product (edp, quadratic)
BLAS_CODES = frozenset((_gram_py.EDP, _gram_py.QUAD))

if _ext is not None:
    NAME = "compiled"

    def gram_forward(kind, Q, K, param, scale):
        impl = _gram_py if kind in BLAS_CODES else _ext
        return impl.gram_forward(kind, Q, K, param, scale)

    def gram_backward(kind, Q, K, param, scale, out, gout):
        impl = _gram_py if kind in BLAS_CODES else _ext
        return impl.gram_backward(kind, Q, K, param, scale, out, gout)

else:
    NAME = "python"
    gram_forward = _gram_py.gram_forward
    gram_backward = _gram_py.gram_backward

BACKENDS = {"python": (_gram_py.gram_forward, _gram_py.gram_backward)}
if _ext is not None:
    BACKENDS["compiled"] = (_ext.gram_forward, _ext.gram_backward)
