import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_div_free
from tgf_cda import kernels
from tgf_cda.operators import FluidParams, nonlinear_drift

compiled = pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")


@pytest.fixture
def inputs():
    return np.random.default_rng(0).standard_normal((3, 5, 32, 32))


def test_python_backend_always_present():
    assert "python" in kernels.available_backends()


def test_unknown_backend():
    with pytest.raises(ValueError, match="not available"):
        kernels.use_backend("fortran")


def test_use_backend_restores():
    prev = kernels.use_backend("python")
    try:
        assert kernels.get_backend() == "python"
    finally:
        kernels.use_backend(prev)
    assert kernels.get_backend() == prev


def test_reference_values(inputs):
    # pointwise oracle written out from the component definitions
    u, v, ux, uy, vx = inputs[0]
    vy = -ux
    e11, e12, e22 = 2 * ux, uy + vx, 2 * vy
    e2 = e11**2 + 2 * e12**2 + e22**2
    alpha, beta = 0.4, 1.5
    prev = kernels.use_backend("python")
    try:
        adv, s, e4, vmax2 = kernels.assemble(inputs[:1], alpha, beta)
    finally:
        kernels.use_backend(prev)
    np.testing.assert_allclose(adv[0, 0], u * ux + v * uy, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(adv[0, 1], u * vx + v * vy, rtol=1e-13, atol=1e-13)
    # xx, xy, yy entries of alpha E.E + beta |E|^2 E - u (x) u / 2
    want = [
        alpha * (e11 * e11 + e12 * e12) + beta * e2 * e11 - 0.5 * u * u,
        alpha * e12 * (e11 + e22) + beta * e2 * e12 - 0.5 * u * v,
        alpha * (e12 * e12 + e22 * e22) + beta * e2 * e22 - 0.5 * v * v,
    ]
    for i in range(3):
        np.testing.assert_allclose(s[0, i], want[i], rtol=1e-12, atol=1e-12)
    assert e4[0] == pytest.approx(np.sum(e2 * e2), rel=1e-12)
    assert vmax2[0] == pytest.approx(np.max(u * u + v * v), rel=1e-15)


@compiled
def test_backends_agree(inputs):
    a = kernels._BACKENDS["python"](inputs, 0.3, 1.2)
    b = kernels._BACKENDS["cython"](inputs, 0.3, 1.2)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_array_equal(a[2], b[2])
    np.testing.assert_array_equal(a[3], b[3])


@compiled
def test_reductions_agree(inputs):
    prev = kernels.use_backend("cython")
    try:
        a = kernels.assemble(inputs, 0.3, 1.2)
        kernels.use_backend("python")
        b = kernels.assemble(inputs, 0.3, 1.2)
    finally:
        kernels.use_backend(prev)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@compiled
def test_drift_backend_independent(dom32):
    f = random_div_free(dom32, 4)
    p = FluidParams(1.0, 0.5, 1.0)
    prev = kernels.use_backend("cython")
    try:
        a = nonlinear_drift(f, p)
        kernels.use_backend("python")
        b = nonlinear_drift(f, p)
    finally:
        kernels.use_backend(prev)
    np.testing.assert_array_equal(a.data, b.data)


def test_env_forces_fallback():
    env = dict(os.environ, TGF_CDA_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from tgf_cda import kernels; print(kernels.get_backend())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
