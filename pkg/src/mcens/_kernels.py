"""Backend selection for the hot kernels.

The compiled ``_core`` extension is used when importable. Set the
environment variable ``MCENS_PURE_PYTHON=1`` to force the fallback.

Sinkhorn scaling always runs the numpy version: its matrix-vector
products go through BLAS and beat the sequential compiled loop (see
``benchmarks/bench_kernels.py``). The compiled variant stays available
through :func:`get`.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("MCENS_PURE_PYTHON") != "1":
    try:
        from . import _core
    except ImportError:  # extension not built
        pass
    else:
        _impl = _core
        BACKEND = "cython"


def get(name, backend=None):
    """Return kernel ``name`` from the active backend, or an explicit one."""
    if backend is None:
        return getattr(_impl, name)
    if backend == "python":
        return getattr(_fallback, name)
    if backend == "cython":
        from . import _core
        return getattr(_core, name)
    raise ValueError(f"unknown backend {backend!r}")


def hungarian(cost):
    return _impl.hungarian(cost)


def sinkhorn_scaling(kernel, a, b, iterations):
    return _fallback.sinkhorn_scaling(kernel, a, b, iterations)


def kth_neighbor_distance(test, train, k):
    return _impl.kth_neighbor_distance(test, train, k)
