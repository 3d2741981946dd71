"""Parametric MAP-like beat generator with per-patient morphology.

A beat is built as ``baseline + (plateau - baseline) * U * P * R - notch``:
``U`` a skewed logistic upstroke (steepest near onset), ``P`` a slow
linear-plus-exponential plateau decay, ``R`` a logistic repolarization
placed so the beat is 90% repolarized at ``onset + apd``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import InsufficientData, InvalidParams
from .sigcore import WINDOW_LEN, Beat, Dataset, normalize

RANGES = {
    "baseline_level": (0.0, 0.1),
    "upstroke_onset_ms": (30.0, 90.0),
    "upstroke_rise_ms": (2.0, 8.0),
    "plateau_amplitude": (0.7, 1.0),
    "apd_ms": (180.0, 280.0),
    "repol_shape": (1.5, 4.0),
    "notch_depth": (0.0, 0.1),
}

# plateau decay: fractional linear drop over one APD plus a saturating exponential
PLATEAU_LINEAR_DROP = 0.10
PLATEAU_EXP_DROP = 0.05
PLATEAU_EXP_TAU_MS = 30.0
# repolarization logistic scale in ms is REPOL_WIDTH_MS / repol_shape
REPOL_WIDTH_MS = 80.0
NOTCH_DELAY_MS = 6.0
NOTCH_WIDTH_MS = 3.0

# Per-beat relative jitter. The onset is the alignment anchor of the
# windows and is not jittered.
BEAT_JITTER = 0.02
UNJITTERED = ("upstroke_onset_ms",)


@dataclass(frozen=True)
class MapParams:
    baseline_level: float = 0.02
    upstroke_onset_ms: float = 50.0
    upstroke_rise_ms: float = 4.0
    plateau_amplitude: float = 0.9
    apd_ms: float = 220.0
    repol_shape: float = 2.5
    notch_depth: float = 0.03

    def violations(self) -> list:
        out = []
        for name, (lo, hi) in RANGES.items():
            v = getattr(self, name)
            if not (lo <= v <= hi) or not math.isfinite(v):
                out.append(f"{name}={v} outside [{lo}, {hi}]")
        if not self.upstroke_onset_ms + self.apd_ms + 3 * self.upstroke_rise_ms < WINDOW_LEN:
            out.append("onset + apd + 3*rise must be < window length")
        if not self.plateau_amplitude > self.baseline_level:
            out.append("plateau_amplitude must exceed baseline_level")
        return out

    def validate(self) -> "MapParams":
        problems = self.violations()
        if problems:
            raise InvalidParams("; ".join(problems))
        return self


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _upstroke(t, onset, rise):
    # Steepest point a quarter of the way into the rise; the foot is four
    # narrow scales wide and the shoulder four wide scales.
    center = onset + rise / 4.0
    pre, post = rise / 16.0, 3.0 * rise / 16.0
    z = np.where(t < center, (t - center) / pre, (t - center) / post)
    return _logistic(z)


def _plateau(t, onset, rise, apd):
    s = np.maximum(0.0, t - (onset + rise))
    return (1.0 - PLATEAU_LINEAR_DROP * s / apd
            - PLATEAU_EXP_DROP * (1.0 - np.exp(-s / PLATEAU_EXP_TAU_MS)))


def repolarization_center(p: MapParams) -> float:
    """Logistic center making the shape reach 10% of its height at onset + apd."""
    t90 = p.upstroke_onset_ms + p.apd_ms
    width = REPOL_WIDTH_MS / p.repol_shape
    plateau = float(_plateau(np.array(t90), p.upstroke_onset_ms, p.upstroke_rise_ms, p.apd_ms))
    keep = 0.1 / plateau  # R(t90) must equal this
    return t90 + width * math.log(keep / (1.0 - keep))


def raw_shape(p: MapParams, t=None) -> np.ndarray:
    """Un-normalized beat on the sample grid (or on the times ``t`` in ms)."""
    if t is None:
        t = np.arange(WINDOW_LEN, dtype=np.float64)
    up = _upstroke(t, p.upstroke_onset_ms, p.upstroke_rise_ms)
    plat = _plateau(t, p.upstroke_onset_ms, p.upstroke_rise_ms, p.apd_ms)
    width = REPOL_WIDTH_MS / p.repol_shape
    rep = 1.0 - _logistic((t - repolarization_center(p)) / width)
    height = p.plateau_amplitude - p.baseline_level
    notch_t = p.upstroke_onset_ms + p.upstroke_rise_ms + NOTCH_DELAY_MS
    notch = p.notch_depth * height * np.exp(-(((t - notch_t) / NOTCH_WIDTH_MS) ** 2))
    return p.baseline_level + height * up * plat * rep - notch


def synth_beat(params: MapParams, patient_id: str = "", beat_id: str = "") -> Beat:
    params.validate()
    beat, _ = normalize(Beat(raw_shape(params), patient_id, beat_id))
    return beat


def sample_params(rng: np.random.Generator) -> MapParams:
    """Draw base parameters uniformly from the global ranges (rejection on invariants)."""
    while True:
        p = MapParams(**{name: float(rng.uniform(lo, hi)) for name, (lo, hi) in RANGES.items()})
        if not p.violations():
            return p


def jitter_params(base: MapParams, rng: np.random.Generator, amount: float = BEAT_JITTER) -> MapParams:
    values = asdict(base)
    while True:
        trial = {}
        for f in fields(MapParams):
            v = values[f.name]
            if f.name not in UNJITTERED:
                lo, hi = RANGES[f.name]
                v = min(hi, max(lo, v * (1.0 + rng.uniform(-amount, amount))))
            trial[f.name] = v
        p = MapParams(**trial)
        if not p.violations():
            return p


def synth_patient(patient_id: str, n_beats: int, seed) -> list:
    if n_beats < 1:
        raise InvalidParams(f"n_beats must be >= 1, got {n_beats}")
    rng = np.random.default_rng(seed)
    base = sample_params(rng)
    return [
        synth_beat(jitter_params(base, rng), patient_id, f"{patient_id}_b{i:04d}")
        for i in range(n_beats)
    ]


def n_test_patients(n_patients: int, test_fraction: float) -> int:
    """round-half-up of n * fraction, at least one and leaving one for training."""
    n = int(math.floor(n_patients * test_fraction + 0.5))
    return min(max(n, 1), n_patients - 1)


def synth_dataset(n_patients: int = 42, beats_per_patient: int = 136,
                  test_fraction: float = 0.25, seed: int = 0) -> Dataset:
    if n_patients < 2:
        raise InsufficientData(f"need at least 2 patients for a train/test split, got {n_patients}")
    if not 0.0 < test_fraction < 1.0:
        raise InvalidParams(f"test_fraction must lie in (0, 1), got {test_fraction}")
    root = np.random.SeedSequence(seed)
    patient_seeds = root.spawn(n_patients)
    split_rng = np.random.default_rng(root.spawn(1)[0])
    ids = [f"p{i:03d}" for i in range(n_patients)]
    test_ids = set(split_rng.permutation(ids)[: n_test_patients(n_patients, test_fraction)])
    beats, split = [], {}
    for pid, ps in zip(ids, patient_seeds):
        tag = "test" if pid in test_ids else "train"
        for beat in synth_patient(pid, beats_per_patient, ps):
            beats.append(beat)
            split[beat.beat_id] = tag
    return Dataset(beats, split, meta={"seed": seed})
