"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

EPS = 1e-4
TOL = 1e-3
# Gradients smaller than this are compared absolutely: the central
# difference carries O(eps^2) truncation plus O(1e-16 / eps) rounding.
FLOOR = 1e-6


def numeric_grad(f, x: np.ndarray, index=None, eps: float = EPS) -> np.ndarray:
    """d f() / d x by central differences, perturbing ``x`` in place."""
    idx = list(np.ndindex(x.shape)) if index is None else index
    out = np.zeros(len(idx))
    for n, i in enumerate(idx):
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        out[n] = (hi - lo) / (2 * eps)
    return out


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def group_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error of one parameter group."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / scale) if scale > 0 else 0.0


class KinkWatch:
    """Records the sign pattern of every leaky_relu input during a forward pass.

    A central difference whose two evaluations see a different pattern than
    the base point straddles a kink of a piecewise-linear function, where
    the derivative does not exist; such coordinates are reported, not compared.
    """

    def __init__(self, monkeypatch, module):
        self.masks = None
        original = module.leaky_relu

        def watched(a, alpha=0.01):
            if self.masks is not None:
                self.masks.append(a.data > 0)
            return original(a, alpha)

        monkeypatch.setattr(module, "leaky_relu", watched)

    def run(self, f):
        self.masks = []
        try:
            value = f()
            return value, [m.copy() for m in self.masks]
        finally:
            self.masks = None


def numeric_grad_smooth(f, x: np.ndarray, watch: KinkWatch, index=None, eps: float = EPS):
    """Central differences plus a mask of coordinates whose stencil stays on one linear piece."""
    _, base = watch.run(f)
    idx = list(np.ndindex(x.shape)) if index is None else index
    out, smooth = np.zeros(len(idx)), np.ones(len(idx), dtype=bool)
    for n, i in enumerate(idx):
        old = x[i]
        x[i] = old + eps
        hi, m_hi = watch.run(f)
        x[i] = old - eps
        lo, m_lo = watch.run(f)
        x[i] = old
        out[n] = (hi - lo) / (2 * eps)
        smooth[n] = all(np.array_equal(a, b) and np.array_equal(a, c) for a, b, c in zip(base, m_hi, m_lo))
    return out, smooth
