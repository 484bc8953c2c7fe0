"""Backend selection for the hot kernels.

The compiled ``_ckernels`` module is used when it imports; otherwise the numpy
fallback.  ``FRACFLOW_BACKEND=python`` forces the fallback.
"""
import os


from . import _pykernels

try:
    if os.environ.get("FRACFLOW_BACKEND", "").lower() == "python":
        raise ImportError
    from . import _ckernels
except ImportError:
    _ckernels = None

NAME = "cython" if _ckernels is not None else "python"


def kernel_K(pm, pp, s, backend=None):
    impl = _pick(backend)
    if impl is _ckernels:
        return _ckernels.kernel_K(pm, pp, float(s))
    return _pykernels.kernel_K(pm, pp, s)


def even_accumulate(out, u0, um, up, r, c, s, backend=None):
    """In-place ``out += c * (2 u0 - um - up) * K((um-u0)/r, (up-u0)/r)``; 1-D float64 arrays."""
    impl = _pick(backend)
    if impl is _ckernels:
        _ckernels.even_accumulate(out, u0, um, up, float(r), float(c), float(s))
    else:
        _pykernels.even_accumulate(out, u0, um, up, r, c, s)


def even_accumulate_rows(out, u0, um, up, r, c, s, backend=None, nthreads=1):
    """Batched form: ``um``, ``up`` of shape ``(m, n)`` with per-row ``r`` and ``c``."""
    impl = _pick(backend)
    if impl is _ckernels:
        _ckernels.even_accumulate_rows(out, u0, um, up, r, c, float(s), int(nthreads))
    else:
        _pykernels.even_accumulate_rows(out, u0, um, up, r, c, s)


def _pick(backend):
    if backend is None:
        return _ckernels if _ckernels is not None else _pykernels
    if backend == "python":
        return _pykernels
    if backend == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not available")
        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")


def available():
    return ["python"] + (["cython"] if _ckernels is not None else [])


__all__ = ["NAME", "kernel_K", "even_accumulate", "even_accumulate_rows", "available"]
