"""Compiled kernels against their plain-Python bodies."""

import os
import subprocess
import sys

import numpy as np
import pytest

from syncon import _jit, kernels
from syncon._jit import python_impl

pytestmark = pytest.mark.skipif(not _jit.JIT_ENABLED, reason="numba disabled")


def _simplex_qp(rng, n):
    A = rng.standard_normal((3 * n, n))
    H = A.T @ A + 1e-3 * np.eye(n)
    c = A.T @ rng.standard_normal(3 * n)
    C = np.vstack([np.ones((1, n)), np.eye(n)])
    d = np.concatenate([[1.0], np.zeros(n)])
    return H, c, C, d


def test_dual_active_set_parity(rng):
    for n in (2, 5, 12):
        H, c, C, d = _simplex_qp(rng, n)
        a = kernels.dual_active_set(H, c, C, d, 1, 1e-13, 1000)
        b = python_impl(kernels.dual_active_set)(H, c, C, d, 1, 1e-13, 1000)
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)
        assert a[3:] == b[3:]


def test_projected_gradient_parity(rng):
    H, c, _, _ = _simplex_qp(rng, 6)
    x0 = np.full(6, 1 / 6)
    a = kernels.projected_gradient(H, c, True, True, x0, 1e-14, 50000)
    b = python_impl(kernels.projected_gradient)(H, c, True, True, x0, 1e-14, 50000)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    ref = kernels.dual_active_set(H, c, *_simplex_qp(np.random.default_rng(0), 6)[2:], 1, 1e-13, 1000)[0]
    np.testing.assert_allclose(a[0], ref, atol=1e-7)


def test_simplex_projection_parity(rng):
    for _ in range(20):
        v = rng.standard_normal(7) * 3
        a = kernels.project_simplex(v)
        np.testing.assert_allclose(a, python_impl(kernels.project_simplex)(v), atol=1e-15)
        assert a.min() >= 0 and abs(a.sum() - 1) < 1e-12


def test_path_kernels_parity(rng):
    z = rng.standard_normal((4, 50))
    np.testing.assert_array_equal(kernels.ar1_paths(z, 0.5), python_impl(kernels.ar1_paths)(z, 0.5))
    np.testing.assert_allclose(kernels.random_walk_paths(z), np.cumsum(z, axis=1), atol=1e-12)
    X, y = rng.standard_normal((5, 30)), rng.standard_normal(30)
    for u, v in zip(kernels.second_moments(X, y), python_impl(kernels.second_moments)(X, y)):
        np.testing.assert_allclose(u, v, atol=1e-13)


def test_ife_em_parity(rng):
    y = rng.standard_normal((2, 25)).T @ rng.standard_normal((2, 8))
    y = np.ascontiguousarray(y.T + 0.1 * rng.standard_normal((8, 25)))
    start = np.ascontiguousarray(y[0, 20:])
    a = kernels.ife_em(y, 20, 2, start, 500, 1e-10)
    b = python_impl(kernels.ife_em)(y, 20, 2, start, 500, 1e-10)
    np.testing.assert_allclose(a[0], b[0], atol=1e-9)


def test_disable_flag_subprocess():
    code = ("from syncon import _jit, kernels; import numpy as np;"
            "print(_jit.JIT_ENABLED, hasattr(kernels.ar1_paths, 'py_func'));"
            "from syncon.estimators import estimate, SC; from syncon.fixtures import load_fixture;"
            "print(repr(float(estimate(load_fixture(), SC).effects.values[0])))")
    outs = []
    for flag in ("1", "0"):
        env = dict(os.environ, SYNCON_DISABLE_JIT=flag)
        res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, timeout=600)
        assert res.returncode == 0, res.stderr
        outs.append(res.stdout.split("\n"))
    assert outs[0][0] == "False False" and outs[1][0] == "True True"
    assert float(outs[0][1]) == pytest.approx(float(outs[1][1]), abs=1e-9)
