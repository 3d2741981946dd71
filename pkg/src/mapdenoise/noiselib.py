"""Noise sources and the corruption pipeline producing clean/noisy pairs.

Every generator is a pure function of its parameters and ``seed``; a seed
may be an int or a sequence of ints (as accepted by
``numpy.random.default_rng``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSignal,
    InsufficientData,
    InvalidParams,
    NoPreUpstrokeRegion,
    ParseError,
)
from .sigcore import (
    SAMPLE_RATE_HZ,
    WINDOW_LEN,
    Beat,
    Dataset,
    patient_mean_beat,
    upstroke_index,
)

KINDS = ("Gaussian", "BaselineWander", "Powerline", "Spike", "Truncation", "EP")
ADDITIVE = ("Gaussian", "BaselineWander", "Powerline", "Spike", "EP")
CLAMP = (-0.5, 1.5)

_PARAM_DEFAULTS = {
    "Gaussian": {},
    "BaselineWander": {"n_components": 3, "f_low": 0.01, "f_high": 0.3},
    "Powerline": {"freq_hz": 50.0},
    "Spike": {"min_amplitude": 0.1, "n_spikes": 2},
    "Truncation": {"keep_start": 0, "keep_end": WINDOW_LEN},
    "EP": {"k_mix": 3},
}


def _time(length: int) -> np.ndarray:
    return np.arange(length, dtype=np.float64) / SAMPLE_RATE_HZ


def gaussian_noise(length: int, sigma: float, seed) -> np.ndarray:
    if sigma < 0:
        raise InvalidParams(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(length)
    return np.random.default_rng(seed).normal(0.0, sigma, size=length)


def baseline_wander(length: int, amplitude: float, n_components: int = 3,
                    f_low: float = 0.01, f_high: float = 0.3, seed=0) -> np.ndarray:
    """Sum of low-frequency sinusoids, each with amplitude ``amplitude / n_components``."""
    if not 0 < f_low < f_high:
        raise InvalidParams(f"need 0 < f_low < f_high, got {f_low}, {f_high}")
    if n_components < 1:
        raise InvalidParams(f"n_components must be >= 1, got {n_components}")
    if amplitude < 0:
        raise InvalidParams(f"amplitude must be >= 0, got {amplitude}")
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(f_low, f_high, size=n_components)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_components)
    t = _time(length)
    waves = np.sin(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])
    return (amplitude / n_components) * waves.sum(axis=0)


def powerline(length: int, amplitude: float, seed=0, freq_hz: float = 50.0) -> np.ndarray:
    if amplitude < 0:
        raise InvalidParams(f"amplitude must be >= 0, got {amplitude}")
    if not 0 < freq_hz < SAMPLE_RATE_HZ / 2:
        raise InvalidParams(f"powerline frequency {freq_hz} Hz outside (0, Nyquist)")
    phase = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi)
    return amplitude * np.sin(2.0 * np.pi * freq_hz * _time(length) + phase)


def spikes(beat, amplitude_range, n_spikes: int, seed) -> np.ndarray:
    """Single-sample impulses at distinct indices before the beat's upstroke."""
    lo, hi = (float(a) for a in amplitude_range)
    if not 0 <= lo <= hi:
        raise InvalidParams(f"spike amplitude range must satisfy 0 <= lo <= hi, got {amplitude_range}")
    if n_spikes < 1:
        raise InvalidParams(f"n_spikes must be >= 1, got {n_spikes}")
    samples = beat.samples if isinstance(beat, Beat) else np.asarray(beat, dtype=np.float64)
    up = upstroke_index(samples)
    if up < n_spikes:
        raise NoPreUpstrokeRegion(
            f"upstroke at index {up} leaves no room for {n_spikes} pre-upstroke spike(s)")
    rng = np.random.default_rng(seed)
    where = rng.choice(up, size=n_spikes, replace=False)
    heights = rng.uniform(lo, hi, size=n_spikes) * rng.choice([-1.0, 1.0], size=n_spikes)
    out = np.zeros(samples.size)
    out[where] = heights
    return out


def truncation_mask(length: int, keep_start: int, keep_end: int, seed=None) -> np.ndarray:
    """Multiplicative mask: 1 on ``[keep_start, keep_end)``, 0 elsewhere.

    ``seed`` is accepted for a uniform generator signature; the mask is
    fully determined by its bounds.
    """
    if not 0 <= keep_start < keep_end <= length:
        raise InvalidParams(f"keep window [{keep_start}, {keep_end}) invalid for length {length}")
    mask = np.zeros(length)
    mask[keep_start:keep_end] = 1.0
    return mask


@dataclass(frozen=True)
class EpNoiseLibrary:
    """Per-patient residuals (beat minus patient mean) with provenance."""

    residuals: np.ndarray
    patient_ids: tuple

    def __post_init__(self):
        res = np.array(self.residuals, dtype=np.float64)
        if res.ndim != 2 or res.shape[0] != len(self.patient_ids):
            raise InvalidParams("residuals must be (n, length) with one patient id per row")
        res.flags.writeable = False
        object.__setattr__(self, "residuals", res)
        object.__setattr__(self, "patient_ids", tuple(self.patient_ids))

    def __len__(self):
        return self.residuals.shape[0]

    def eligible(self, exclude_patient=None) -> np.ndarray:
        ids = np.array(self.patient_ids, dtype=object)
        return np.flatnonzero(ids != exclude_patient)


def extract_ep_library(dataset) -> EpNoiseLibrary:
    """Pool residuals of every patient with at least two beats."""
    beats = dataset.beats if isinstance(dataset, Dataset) else list(dataset)
    by_patient = {}
    for b in beats:
        by_patient.setdefault(b.patient_id, []).append(b)
    rows, owners = [], []
    for pid in sorted(by_patient):
        mine = sorted(by_patient[pid], key=lambda b: b.beat_id)
        if len(mine) < 2:
            continue
        template = patient_mean_beat(mine, pid).samples
        for b in mine:
            rows.append(b.samples - template)
            owners.append(pid)
    if not rows:
        raise InsufficientData("no patient has at least 2 beats to extract residuals from")
    return EpNoiseLibrary(np.stack(rows), tuple(owners))


def ep_noise(library: EpNoiseLibrary, length: int, amplitude: float, k_mix: int = 3,
             seed=0, exclude_patient=None, weights=None) -> np.ndarray:
    """RMS-scaled weighted mix of ``k_mix`` residuals from other patients."""
    if amplitude < 0:
        raise InvalidParams(f"amplitude must be >= 0, got {amplitude}")
    if length != library.residuals.shape[1]:
        raise InvalidParams(f"library residuals have length {library.residuals.shape[1]}, asked for {length}")
    pool = library.eligible(exclude_patient)
    if k_mix < 1 or pool.size < k_mix:
        raise InsufficientData(
            f"need {k_mix} residuals from patients other than {exclude_patient!r}, have {pool.size}")
    if amplitude == 0:
        return np.zeros(length)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool, size=k_mix, replace=False)
    if weights is None:
        weights = rng.uniform(0.5, 1.5, size=k_mix)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (k_mix,) or np.any(weights <= 0):
        raise InvalidParams("weights must be k_mix positive values")
    weights = weights / weights.sum()
    mix = weights @ library.residuals[chosen]
    level = math.sqrt(float(np.mean(mix * mix)))
    if level == 0:
        raise DegenerateSignal("selected residuals mix to an all-zero series")
    return mix * (amplitude / level)


def ep_noise_sources(library: EpNoiseLibrary, length, amplitude, k_mix=3, seed=0,
                     exclude_patient=None) -> tuple:
    """Patient ids of the residuals :func:`ep_noise` would draw (provenance audit)."""
    pool = library.eligible(exclude_patient)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool, size=k_mix, replace=False)
    return tuple(library.patient_ids[i] for i in chosen)


@dataclass(frozen=True)
class NoiseSpec:
    """One noise source of a corruption plan.

    ``amplitude`` is sigma for Gaussian, the total amplitude for wander and
    powerline, the maximum spike height for Spike, the target RMS for EP and
    is ignored for Truncation. ``seed_offset`` separates the random streams of
    sources in one plan; ``None`` means the entry's position in the plan.
    """

    kind: str
    amplitude: float = 0.0
    params: dict = field(default_factory=dict)
    seed_offset: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParams(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if not (self.amplitude >= 0 and math.isfinite(self.amplitude)):
            raise InvalidParams(f"{self.kind}: amplitude must be finite and >= 0")
        unknown = set(self.params) - set(_PARAM_DEFAULTS[self.kind])
        if unknown:
            raise InvalidParams(f"{self.kind}: unknown parameter(s) {sorted(unknown)}")
        object.__setattr__(self, "params", {**_PARAM_DEFAULTS[self.kind], **self.params})
        if self.kind == "BaselineWander" and not 0 < self.params["f_low"] < self.params["f_high"]:
            raise InvalidParams("BaselineWander: need 0 < f_low < f_high")
        if self.kind == "Powerline" and not 0 < self.params["freq_hz"] < SAMPLE_RATE_HZ / 2:
            raise InvalidParams("Powerline: frequency outside (0, Nyquist)")
        if self.kind == "Spike" and not 0 <= self.params["min_amplitude"] <= self.amplitude:
            raise InvalidParams("Spike: need 0 <= min_amplitude <= amplitude")
        if self.kind == "Truncation":
            ks, ke = self.params["keep_start"], self.params["keep_end"]
            if not 0 <= ks < ke <= WINDOW_LEN:
                raise InvalidParams(f"Truncation: keep window [{ks}, {ke}) invalid")

    def to_json(self) -> dict:
        out = {"kind": self.kind, "amplitude": self.amplitude, **self.params}
        if self.seed_offset is not None:
            out["seed_offset"] = self.seed_offset
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseSpec":
        obj = dict(obj)
        try:
            kind = obj.pop("kind")
        except KeyError:
            raise InvalidParams("noise spec without 'kind'") from None
        amplitude = float(obj.pop("amplitude", 0.0))
        seed_offset = obj.pop("seed_offset", None)
        return cls(kind, amplitude, obj, seed_offset)


def validate_plan(plan) -> list:
    plan = [p if isinstance(p, NoiseSpec) else NoiseSpec.from_json(p) for p in plan]
    if sum(p.kind == "Truncation" for p in plan) > 1:
        raise InvalidParams("a corruption plan may contain at most one Truncation entry")
    return plan


def default_plan(include_ep: bool = True) -> list:
    plan = [
        NoiseSpec("Gaussian", 0.01),
        NoiseSpec("BaselineWander", 0.05),
        NoiseSpec("Powerline", 0.02),
        NoiseSpec("Spike", 0.3, {"min_amplitude": 0.1, "n_spikes": 2}),
        NoiseSpec("Truncation", 0.0, {"keep_start": 5, "keep_end": 365}),
        NoiseSpec("EP", 0.03, {"k_mix": 3}),
    ]
    return [p for p in plan if include_ep or p.kind != "EP"]


def load_plan(path) -> list:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"plan is not valid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(raw, list):
        raise InvalidParams("plan JSON must be an array of noise specs")
    return validate_plan(raw)


def save_plan(plan, path) -> None:
    Path(path).write_text(json.dumps([p.to_json() for p in plan], indent=2) + "\n", encoding="utf-8")


def _source_seed(seed, spec: NoiseSpec, position: int) -> list:
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    offset = position if spec.seed_offset is None else int(spec.seed_offset)
    return base + [offset]


def noise_series(beat: Beat, spec: NoiseSpec, seed, library: EpNoiseLibrary | None = None) -> np.ndarray:
    """Additive series for one (non-truncation) plan entry."""
    n = len(beat)
    p = spec.params
    if spec.kind == "Gaussian":
        return gaussian_noise(n, spec.amplitude, seed)
    if spec.kind == "BaselineWander":
        return baseline_wander(n, spec.amplitude, int(p["n_components"]), p["f_low"], p["f_high"], seed)
    if spec.kind == "Powerline":
        return powerline(n, spec.amplitude, seed, p["freq_hz"])
    if spec.kind == "Spike":
        return spikes(beat, (p["min_amplitude"], spec.amplitude), int(p["n_spikes"]), seed)
    if spec.kind == "EP":
        if library is None:
            raise InvalidParams("EP noise requires an EpNoiseLibrary")
        return ep_noise(library, n, spec.amplitude, int(p["k_mix"]), seed, beat.patient_id)
    raise InvalidParams(f"{spec.kind} is not additive")


def corrupt(beat: Beat, plan, library: EpNoiseLibrary | None = None, seed=0) -> Beat:
    """Add every additive source in plan order, apply the mask, clamp."""
    plan = validate_plan(plan)
    x = beat.samples.copy()
    mask = None
    for pos, spec in enumerate(plan):
        s = _source_seed(seed, spec, pos)
        if spec.kind == "Truncation":
            mask = truncation_mask(len(beat), int(spec.params["keep_start"]), int(spec.params["keep_end"]), s)
        else:
            x = x + noise_series(beat, spec, s, library)
    if mask is not None:
        x = x * mask
    return beat.with_samples(np.clip(x, *CLAMP))


def corrupt_dataset(dataset: Dataset, plan, library: EpNoiseLibrary | None = None,
                    seed: int = 0) -> Dataset:
    """Pair every clean beat with its corrupted counterpart (seed per beat index)."""
    plan = validate_plan(plan)
    if library is None and any(p.kind == "EP" for p in plan):
        library = extract_ep_library(dataset)
    noisy = {
        b.beat_id: corrupt(b, plan, library, [int(seed), i])
        for i, b in enumerate(dataset.beats)
    }
    meta = dict(dataset.meta)
    meta["noise_seed"] = seed
    return Dataset(dataset.beats, dict(dataset.split), noisy, meta)


def write_library(library: EpNoiseLibrary, path) -> None:
    """Residual rows in the dataset CSV layout (role ``clean``, split ``train``)."""
    from .sigcore import write_dataset

    beats = [Beat(r, pid, f"{pid}_r{i:05d}") for i, (r, pid) in
             enumerate(zip(library.residuals, library.patient_ids))]
    write_dataset(Dataset(beats, {b.beat_id: "train" for b in beats}, meta={"kind": "ep_residuals"}), path)


def read_library(path) -> EpNoiseLibrary:
    from .sigcore import read_dataset

    ds = read_dataset(path)
    return EpNoiseLibrary(np.stack([b.samples for b in ds.beats]), tuple(b.patient_id for b in ds.beats))
