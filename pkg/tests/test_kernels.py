import importlib.util
import os
import subprocess
import sys

import numpy as np
import pytest

from mcens import _kernels

HAVE_CORE = importlib.util.find_spec("mcens._core") is not None

needs_core = pytest.mark.skipif(not HAVE_CORE, reason="compiled extension not built")


@needs_core
def test_compiled_backend_is_default():
    if os.environ.get("MCENS_PURE_PYTHON") != "1":
        assert _kernels.BACKEND == "cython"


def test_forced_fallback_in_fresh_interpreter():
    env = dict(os.environ, MCENS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from mcens import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.get("hungarian", "fortran")


@needs_core
@pytest.mark.parametrize("n", [1, 2, 5, 17, 60])
def test_hungarian_backends_agree(n, rng):
    for _ in range(10):
        cost = rng.random((n, n))
        a = _kernels.get("hungarian", "cython")(cost)
        b = _kernels.get("hungarian", "python")(cost)
        np.testing.assert_array_equal(a, b)
    # heavy ties: integer costs
    cost = rng.integers(0, 3, (n, n)).astype(np.float64)
    np.testing.assert_array_equal(_kernels.get("hungarian", "cython")(cost),
                                  _kernels.get("hungarian", "python")(cost))


@needs_core
@pytest.mark.parametrize("k", [1, 3, 10])
def test_knn_backends_agree_exactly(k, rng):
    train = rng.standard_normal((300, 16))
    test = rng.standard_normal((120, 16))
    a = _kernels.get("kth_neighbor_distance", "cython")(test, train, k)
    b = _kernels.get("kth_neighbor_distance", "python")(test, train, k)
    assert a.tobytes() == b.tobytes()


@needs_core
def test_knn_backends_agree_on_duplicates():
    train = np.repeat(np.eye(3), 4, axis=0)
    test = np.vstack([np.eye(3), np.zeros((1, 3))])
    for k in (1, 4, 5, 12):
        a = _kernels.get("kth_neighbor_distance", "cython")(test, train, k)
        b = _kernels.get("kth_neighbor_distance", "python")(test, train, k)
        assert a.tobytes() == b.tobytes()


@needs_core
def test_sinkhorn_backends_agree(rng):
    n = 128
    X, Y = rng.standard_normal((n, 8)), rng.standard_normal((n, 8))
    C = np.sqrt(((X[:, None] - Y[None]) ** 2).sum(-1))
    K = np.exp(-(C / C.max()) / 0.05)
    a = np.full(n, 1.0 / n)
    pc = _kernels.get("sinkhorn_scaling", "cython")(K, a, a, 100)
    pp = _kernels.get("sinkhorn_scaling", "python")(K, a, a, 100)
    assert len(pc) == len(pp)
    for x, y in zip(pc, pp):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=0)
