"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is not importable. Every
function here has the same signature and contract as its compiled twin.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _columns(x, kernel_size, stride, padding, out_len):
    """Return the im2col tensor of shape (B, Cin, K, Lout) as a strided view."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    x = np.ascontiguousarray(x)
    sb, sc, sl = x.strides
    b, c, _ = x.shape
    return as_strided(
        x,
        shape=(b, c, kernel_size, out_len),
        strides=(sb, sc, sl, sl * stride),
        writeable=False,
    )


def conv1d_forward(x, w, stride, padding):
    """Cross-correlate ``x`` (B, Cin, L) with ``w`` (Cout, Cin, K); no bias."""
    b, cin, length = x.shape
    cout, _, k = w.shape
    out_len = (length + 2 * padding - k) // stride + 1
    cols = _columns(x, k, stride, padding, out_len).reshape(b, cin * k, out_len)
    return np.matmul(w.reshape(cout, cin * k), cols)


def conv1d_backward_input(gy, w, stride, padding, length):
    """Gradient of conv1d w.r.t. its input; also the transposed convolution."""
    b, cout, out_len = gy.shape
    _, cin, k = w.shape
    gcols = np.matmul(w.reshape(cout, cin * k).T, gy).reshape(b, cin, k, out_len)
    gx = np.zeros((b, cin, length + 2 * padding))
    span = stride * (out_len - 1) + 1
    for j in range(k):
        gx[:, :, j:j + span:stride] += gcols[:, :, j, :]
    return gx[:, :, padding:padding + length]


def conv1d_backward_weight(x, gy, stride, padding, kernel_size):
    b, cin, _ = x.shape
    _, cout, out_len = gy.shape
    cols = _columns(x, kernel_size, stride, padding, out_len).reshape(
        b, cin * kernel_size, out_len
    )
    gw = np.einsum("bot,bct->oc", gy, cols, optimize=True)
    return gw.reshape(cout, cin, kernel_size)


def sosfilt(sos, x, zi):
    """Run a biquad cascade along the last axis of ``x`` (rows, n).

    ``zi`` has shape (rows, n_sections, 2) and holds the transposed direct
    form II state; it is updated in place. Returns the filtered array.
    """
    y = np.array(x, dtype=np.float64, copy=True)
    for s in range(sos.shape[0]):
        b0, b1, b2, _, a1, a2 = sos[s]
        z0 = zi[:, s, 0].copy()
        z1 = zi[:, s, 1].copy()
        col = y
        for n in range(col.shape[1]):
            xn = col[:, n].copy()
            yn = b0 * xn + z0
            z0 = b1 * xn - a1 * yn + z1
            z1 = b2 * xn - a2 * yn
            col[:, n] = yn
        zi[:, s, 0] = z0
        zi[:, s, 1] = z1
    return y
