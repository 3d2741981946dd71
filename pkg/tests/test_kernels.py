import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from mapdenoise import _core

BACKEND_NAMES = sorted(_core.BACKENDS)


def naive_forward(x, w, stride, padding):
    b, cin, length = x.shape
    cout, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    out_len = (length + 2 * padding - k) // stride + 1
    y = np.zeros((b, cout, out_len))
    for n in range(b):
        for o in range(cout):
            for t in range(out_len):
                y[n, o, t] = np.sum(w[o] * xp[n, :, t * stride:t * stride + k])
    return y


def naive_backward(x, w, gy, stride, padding):
    """Scatter form of both gradients, written independently of the kernels."""
    b, cin, length = x.shape
    cout, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    gxp, gw = np.zeros_like(xp), np.zeros_like(w)
    for n in range(b):
        for o in range(cout):
            for t in range(gy.shape[2]):
                seg = slice(t * stride, t * stride + k)
                gxp[n, :, seg] += gy[n, o, t] * w[o]
                gw[o] += gy[n, o, t] * xp[n, :, seg]
    return gxp[:, :, padding:padding + length], gw


geometry = st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 7),
                     st.integers(1, 3), st.integers(0, 3), st.integers(0, 2**32 - 1))


@pytest.mark.parametrize("backend", BACKEND_NAMES)
@settings(max_examples=60, deadline=None)
@given(geometry, st.integers(0, 30))
def test_conv_kernels_match_naive(backend, geo, extra):
    kernels = _core.BACKENDS[backend]
    b, cin, cout, k, stride, padding, seed = geo
    length = max(k - 2 * padding, 1) + extra
    r = np.random.default_rng(seed)
    x, w = r.normal(size=(b, cin, length)), r.normal(size=(cout, cin, k))
    y = kernels.conv1d_forward(x, w, stride, padding)
    np.testing.assert_allclose(y, naive_forward(x, w, stride, padding), rtol=0, atol=1e-12)
    gy = r.normal(size=y.shape)
    gx_ref, gw_ref = naive_backward(x, w, gy, stride, padding)
    np.testing.assert_allclose(kernels.conv1d_backward_input(gy, w, stride, padding, length), gx_ref,
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(kernels.conv1d_backward_weight(x, gy, stride, padding, k), gw_ref,
                               rtol=0, atol=1e-11)


@pytest.mark.parametrize("backend", BACKEND_NAMES)
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_sosfilt_matches_scipy(backend, rows, sections, n, seed):
    kernels = _core.BACKENDS[backend]
    r = np.random.default_rng(seed)
    sos = signal.butter(2 * sections, 0.05 + 0.9 * r.uniform(), output="sos")
    x = r.normal(size=(rows, n))
    zi = r.normal(size=(rows, sections, 2))
    expected, zf = signal.sosfilt(sos, x, axis=-1, zi=np.transpose(zi, (1, 0, 2)).copy())
    state = zi.copy()
    got = kernels.sosfilt(sos, x, state)
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(state, np.transpose(zf, (1, 0, 2)), rtol=1e-12, atol=1e-12)


def test_sosfilt_leaves_input_untouched(kernels):
    sos = signal.butter(4, 0.2, output="sos")
    x = np.random.default_rng(0).normal(size=(2, 50))
    keep = x.copy()
    kernels.sosfilt(sos, x, np.zeros((2, 2, 2)))
    assert np.array_equal(x, keep)


def test_backends_agree():
    if "cython" not in _core.BACKENDS:
        pytest.skip("compiled extension not built")
    c, p = _core.BACKENDS["cython"], _core.BACKENDS["numpy"]
    r = np.random.default_rng(5)
    x, w = r.normal(size=(32, 16, 185)), r.normal(size=(32, 16, 5))
    y = p.conv1d_forward(x, w, 2, 2)
    np.testing.assert_allclose(c.conv1d_forward(x, w, 2, 2), y, rtol=1e-12, atol=1e-12)
    gy = r.normal(size=y.shape)
    np.testing.assert_allclose(c.conv1d_backward_input(gy, w, 2, 2, 185),
                               p.conv1d_backward_input(gy, w, 2, 2, 185), rtol=1e-12, atol=1e-11)
    np.testing.assert_allclose(c.conv1d_backward_weight(x, gy, 2, 2, 5),
                               p.conv1d_backward_weight(x, gy, 2, 2, 5), rtol=1e-12, atol=1e-10)


def _backend_in_subprocess(value):
    env = {**os.environ, "MAPDENOISE_BACKEND": value}
    return subprocess.run([sys.executable, "-c", "from mapdenoise import _core; print(_core.BACKEND)"],
                          env=env, capture_output=True, text=True)


def test_backend_environment_override():
    out = _backend_in_subprocess("numpy")
    assert out.returncode == 0 and out.stdout.strip() == "numpy"
    bad = _backend_in_subprocess("fortran")
    assert bad.returncode != 0 and "MAPDENOISE_BACKEND" in bad.stderr
    default = _backend_in_subprocess("")
    assert default.stdout.strip() == ("cython" if "cython" in _core.BACKENDS else "numpy")
