import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plaplab import _pykernels, kernels

ck = pytest.importorskip("plaplab._ckernels", reason="compiled extension not built")

exponents = st.sampled_from([1.3, 1.5, 2.0, 2.5, 3.0, 4.0, 1.77])
regular = st.sampled_from([0.0, 0.05, 1.0])


def close(a, b):
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


@given(st.integers(0, 2**32 - 1), st.integers(3, 40), exponents, regular)
def test_update_1d_agrees(seed, n, p, s):
    u = np.random.default_rng(seed).normal(size=n)
    close(ck.flux_update_1d(u, 0.1, 1e-4, p, s), _pykernels.flux_update_1d(u, 0.1, 1e-4, p, s))


@given(st.integers(0, 2**32 - 1), st.integers(3, 20), st.integers(3, 20), exponents, regular)
def test_update_2d_agrees(seed, nx, ny, p, s):
    u = np.random.default_rng(seed).normal(size=(nx, ny))
    close(ck.flux_update_2d(u, 0.1, 1e-4, p, s), _pykernels.flux_update_2d(u, 0.1, 1e-4, p, s))


@given(st.integers(0, 2**32 - 1), st.integers(3, 20), exponents, regular)
def test_max_coefficient_agrees(seed, n, p, s):
    rng = np.random.default_rng(seed)
    u1, u2 = rng.normal(size=n), rng.normal(size=(n, n + 1))
    close(ck.max_coefficient_1d(u1, 0.1, p, s), _pykernels.max_coefficient_1d(u1, 0.1, p, s))
    close(ck.max_coefficient_2d(u2, 0.1, p, s), _pykernels.max_coefficient_2d(u2, 0.1, p, s))


@pytest.mark.parametrize("p,expected", [(1.5, np.inf), (2.0, 1.0), (3.0, 0.0)])
def test_flat_field_coefficient(p, expected):
    u = np.zeros((5, 5))
    for mod in (ck, _pykernels):
        assert mod.max_coefficient_2d(u, 0.1, p, 0.0) == expected
        assert mod.max_coefficient_1d(u[0], 0.1, p, 0.0) == expected


def test_boundary_untouched():
    u = np.random.default_rng(1).normal(size=(6, 7))
    out = ck.flux_update_2d(u, 0.1, 1e-3, 3.0, 0.0)
    for idx in (0, -1):
        np.testing.assert_array_equal(out[idx], u[idx])
        np.testing.assert_array_equal(out[:, idx], u[:, idx])


def test_default_backend_is_compiled():
    assert kernels.BACKEND == "cython"


def test_pure_python_switch():
    env = dict(os.environ, PLAPLAB_PURE_PYTHON="1")
    got = subprocess.run([sys.executable, "-c", "from plaplab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert got.stdout.strip() == "numpy"
