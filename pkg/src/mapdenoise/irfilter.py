"""Butterworth baseline: analog prototype, bilinear discretization, zero-phase filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _core
from .errors import InvalidCutoff, InvalidParams, SignalTooShort
from .sigcore import SAMPLE_RATE_HZ, Beat

BASELINE_ORDER = 5
BASELINE_BAND_HZ = (0.5, 120.0)
# Candidate designs for the tuned baseline: the fixed clinical band plus a
# ladder of lowpass cutoffs. Selection is by mean RMSE on training pairs.
TUNING_GRID = (
    ("bandpass", (0.5, 120.0)),
    ("bandpass", (0.5, 250.0)),
    ("lowpass", (40.0,)),
    ("lowpass", (60.0,)),
    ("lowpass", (80.0,)),
    ("lowpass", (100.0,)),
    ("lowpass", (150.0,)),
    ("lowpass", (200.0,)),
    ("lowpass", (250.0,)),
    ("lowpass", (300.0,)),
    ("lowpass", (400.0,)),
)


@dataclass(frozen=True, eq=False)
class ButterworthDesign:
    """A discretized Butterworth filter.

    ``prototype_poles`` are the analog lowpass poles on the circle of radius
    ``omega_c`` (rad/s): the prewarped cutoff for a lowpass, the prewarped
    bandwidth for a bandpass. ``sos`` rows are ``[b0, b1, b2, 1, a1, a2]``.
    """

    order: int
    cutoff_hz: tuple
    kind: str
    fs: float
    omega_c: float
    prototype_poles: np.ndarray
    sos: np.ndarray

    @property
    def digital_poles(self) -> np.ndarray:
        return np.concatenate([np.roots(row[3:]) for row in self.sos])


def butterworth_poles(order: int, omega_c: float = 1.0) -> np.ndarray:
    """``omega_c * exp(j*pi*(2k + N - 1) / (2N))`` for k = 1..N."""
    k = np.arange(1, order + 1)
    return omega_c * np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))


def prewarp(f_hz: float, fs: float) -> float:
    return 2.0 * fs * math.tan(math.pi * f_hz / fs)


def analog_lowpass_response(poles: np.ndarray, omega) -> np.ndarray:
    """``H(jw) = prod_k (1 - jw / p_k)^-1``."""
    s = 1j * np.asarray(omega, dtype=np.float64)[..., None]
    return 1.0 / np.prod(1.0 - s / poles, axis=-1)


def _bilinear(p, fs):
    return (2.0 * fs + p) / (2.0 * fs - p)


def _pair_poles(zp):
    """Group digital poles into conjugate pairs, then leftover reals two by two."""
    tol = 1e-10
    upper = sorted([p for p in zp if p.imag > tol], key=abs)
    reals = sorted([p.real for p in zp if abs(p.imag) <= tol], key=abs)
    groups = [[r1, r2] for r1, r2 in zip(reals[0::2], reals[1::2])]
    if len(reals) % 2:
        groups.insert(0, [reals[-1]])
    groups += [[p, p.conjugate()] for p in upper]
    return groups


def design_butterworth(order: int = BASELINE_ORDER, cutoff_hz=BASELINE_BAND_HZ,
                       kind: str = "bandpass", fs: float = SAMPLE_RATE_HZ) -> ButterworthDesign:
    if not 1 <= int(order) <= 10:
        raise InvalidParams(f"order must be in [1, 10], got {order}")
    order = int(order)
    cut = (float(cutoff_hz),) if np.isscalar(cutoff_hz) else tuple(float(c) for c in cutoff_hz)
    nyq = fs / 2.0
    if kind == "lowpass":
        if len(cut) != 1:
            raise InvalidCutoff("lowpass takes a single cutoff")
    elif kind == "bandpass":
        if len(cut) != 2 or not cut[0] < cut[1]:
            raise InvalidCutoff("bandpass takes (low, high) with low < high")
    else:
        raise InvalidParams(f"kind must be 'lowpass' or 'bandpass', got {kind!r}")
    for c in cut:
        if not 0 < c < nyq:
            raise InvalidCutoff(f"cutoff {c} Hz outside (0, {nyq}) Hz")

    if kind == "lowpass":
        wc = prewarp(cut[0], fs)
        proto = butterworth_poles(order, wc)
        zpoles = _bilinear(proto, fs)
        zero = -1.0
        ref_z = 1.0
    else:
        w1, w2 = prewarp(cut[0], fs), prewarp(cut[1], fs)
        wc = w2 - w1
        w0 = math.sqrt(w1 * w2)
        proto = butterworth_poles(order, wc)
        # s -> (s^2 + w0^2) / s maps each lowpass pole p to the roots of s^2 - p s + w0^2
        disc = np.sqrt(proto * proto - 4.0 * w0 * w0 + 0j)
        apoles = np.concatenate([(proto + disc) / 2.0, (proto - disc) / 2.0])
        zpoles = _bilinear(apoles, fs)
        zero = None
        ref_z = np.exp(1j * 2.0 * math.atan(w0 / (2.0 * fs)))

    rows = []
    for group in _pair_poles(zpoles):
        if len(group) == 1:
            rows.append([1.0, 1.0, 0.0, 1.0, -group[0].real, 0.0])
            continue
        p1, p2 = group
        a1, a2 = -(p1 + p2).real, (p1 * p2).real
        b = [1.0, 2.0, 1.0] if zero is not None else [1.0, 0.0, -1.0]
        rows.append(b + [1.0, a1, a2])
    sos = np.array(rows)
    # unit gain at DC (lowpass) or at the prewarped band center (bandpass)
    gain = abs(_sos_response(sos, np.array([ref_z]))[0])
    sos[:, :3] *= gain ** (-1.0 / sos.shape[0])
    sos.flags.writeable = False
    return ButterworthDesign(order, cut, kind, float(fs), wc, proto, sos)


def _sos_response(sos, z):
    zi = 1.0 / z
    h = np.ones_like(z, dtype=np.complex128)
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 * zi + b2 * zi * zi) / (a0 + a1 * zi + a2 * zi * zi)
    return h


def frequency_response(design: ButterworthDesign, f_hz):
    """Complex response of the discrete cascade at ``f_hz``; returns (magnitude, phase)."""
    f = np.asarray(f_hz, dtype=np.float64)
    h = _sos_response(design.sos, np.exp(1j * 2.0 * np.pi * f / design.fs))
    return np.abs(h), np.angle(h)


def analog_magnitude(design: ButterworthDesign, f_hz) -> np.ndarray:
    """|H(jw)| of the analog lowpass prototype evaluated at w = 2 pi f."""
    return np.abs(analog_lowpass_response(design.prototype_poles, 2.0 * np.pi * np.asarray(f_hz)))


def sos_steady_state(sos) -> np.ndarray:
    """Per-section transposed-direct-form-II state for a unit step at steady state."""
    zi = np.zeros((sos.shape[0], 2))
    level = 1.0
    for s, (b0, b1, b2, _, a1, a2) in enumerate(sos):
        out = level * (b0 + b1 + b2) / (1.0 + a1 + a2)
        zi[s] = (out - b0 * level, b2 * level - a2 * out)
        level = out
    return zi


def _rows(x):
    if isinstance(x, Beat):
        return x.samples[None, :], "beat"
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], "1d"
    if arr.ndim == 2:
        return arr, "2d"
    raise InvalidParams(f"expected a beat, a 1-d or a 2-d array, got shape {arr.shape}")


def sosfilt(sos, x, zi=None) -> np.ndarray:
    """Single forward pass of the cascade over the last axis (rows independent)."""
    rows, form = _rows(x)
    state = np.zeros((rows.shape[0], sos.shape[0], 2)) if zi is None else np.array(zi, dtype=np.float64)
    y = _core.sosfilt(np.asarray(sos), np.ascontiguousarray(rows), state)
    return y[0] if form == "1d" else y


def _forward_backward(sos, ext, zi):
    state = zi[None, :, :] * ext[:, :1, None]
    y = _core.sosfilt(sos, np.ascontiguousarray(ext), state)
    y = np.ascontiguousarray(y[:, ::-1])
    state = zi[None, :, :] * y[:, :1, None]
    return _core.sosfilt(sos, y, state)[:, ::-1]


def filtfilt(design: ButterworthDesign, x, padlen: int | None = None):
    """Zero-phase filtering with odd reflective edge padding.

    Runs forward-then-backward and backward-then-forward passes, each pass
    starting from the steady state for its first padded sample, and
    averages them. The average commutes exactly with time reversal, so edge
    transients cannot depend on the direction of the first pass.
    Accepts a Beat (returns a Beat), a 1-d array or a 2-d array of rows.
    """
    rows, form = _rows(x)
    pad = 3 * design.order if padlen is None else int(padlen)
    n = rows.shape[1]
    if n < 3 * design.order or n <= pad:
        raise SignalTooShort(f"signal of length {n} too short for padding {pad} (order {design.order})")
    left = 2.0 * rows[:, :1] - rows[:, pad:0:-1]
    right = 2.0 * rows[:, -1:] - rows[:, -2:-pad - 2:-1]
    ext = np.concatenate([left, rows, right], axis=1)
    zi = sos_steady_state(design.sos)
    fb = _forward_backward(design.sos, ext, zi)
    bf = _forward_backward(design.sos, ext[:, ::-1], zi)[:, ::-1]
    out = np.ascontiguousarray(0.5 * (fb + bf)[:, pad:pad + n])
    if form == "beat":
        return x.with_samples(out[0])
    return out[0] if form == "1d" else out


def baseline_filter_pipeline(beat, order: int = BASELINE_ORDER, band_hz=BASELINE_BAND_HZ,
                             design: ButterworthDesign | None = None):
    """Zero-phase Butterworth baseline; ``design`` overrides ``order``/``band_hz``."""
    if design is None:
        design = design_butterworth(order, band_hz, "bandpass")
    return filtfilt(design, beat)


@dataclass(frozen=True)
class TuningResult:
    design: ButterworthDesign
    scores: tuple  # ((kind, cutoff_hz, mean_rmse), ...) in grid order


def tune_baseline(clean, noisy, order: int = BASELINE_ORDER, grid=TUNING_GRID,
                  fs: float = SAMPLE_RATE_HZ) -> TuningResult:
    """Pick the grid design with the lowest mean per-beat RMSE to ``clean``.

    ``clean`` and ``noisy`` are aligned (n, length) arrays, normally the
    training split. Ties keep the earlier grid entry.
    """
    c = np.atleast_2d(np.asarray(clean, dtype=np.float64))
    x = np.atleast_2d(np.asarray(noisy, dtype=np.float64))
    if c.shape != x.shape or c.shape[0] == 0:
        raise InvalidParams(f"clean {c.shape} and noisy {x.shape} must be equal, non-empty")
    if not grid:
        raise InvalidParams("tuning grid is empty")
    best, scores = None, []
    for kind, cut in grid:
        d = design_butterworth(order, cut, kind, fs)
        y = filtfilt(d, x)
        score = float(np.mean(np.sqrt(np.mean((y - c) ** 2, axis=1))))
        scores.append((kind, tuple(cut), score))
        if best is None or score < best[1]:
            best = (d, score)
    return TuningResult(best[0], tuple(scores))
