"""Numeric kernels with a compiled fast path.

The inner loops that dominate a training step (row softmax, layer norm,
activations, the cross-entropy head, the AdamW update, raster
resampling) exist twice: ``_ckernels`` is a Cython extension compiled at
install time, ``_pykernels`` is a vectorized NumPy fallback. The active
backend is chosen at import; set ``MORE_LAB_BACKEND=python`` or ``=c``
to force one. ``benchmarks/bench_kernels.py`` compares the two.

Matrix products are delegated to NumPy's BLAS in both backends; a
hand-rolled GEMM would not beat it.
"""

import os

from . import _pykernels

try:
    from . import _ckernels

    _HAVE_C = True
except ImportError:
    _ckernels = None
    _HAVE_C = False

_FUNCS = (
    "softmax_fwd",
    "softmax_bwd",
    "layernorm_fwd",
    "layernorm_bwd",
    "gelu_fwd",
    "gelu_bwd",
    "relu_fwd",
    "relu_bwd",
    "softmax_xent_fwd",
    "adamw_update",
    "resize_bilinear",
    "resize_nearest",
)

BACKEND = "python"


def available_backends():
    return ("python", "c") if _HAVE_C else ("python",)


def get_backend(name):
    """Return the raw backend module, for side-by-side comparison."""
    if name == "python":
        return _pykernels
    if name == "c":
        if not _HAVE_C:
            raise RuntimeError("compiled kernel backend is not built")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def use(name):
    """Activate a backend ('python', 'c', or 'auto') and return its name."""
    global BACKEND
    if name == "auto":
        name = "c" if _HAVE_C else "python"
    impl = get_backend(name)
    g = globals()
    for fn in _FUNCS:
        g[fn] = getattr(impl, fn)
    BACKEND = name
    return name


use(os.environ.get("MORE_LAB_BACKEND", "auto"))
