"""Beat and Dataset types, per-beat normalization, patient templates, CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateSignal,
    EmptyDataset,
    InsufficientData,
    InvalidParams,
    ParseError,
)

SAMPLE_RATE_HZ = 1000.0
WINDOW_SECONDS = 0.370
WINDOW_LEN = int(round(SAMPLE_RATE_HZ * WINDOW_SECONDS))

SPLITS = ("train", "test")
ROLES = ("clean", "noisy")


def _as_samples(samples) -> np.ndarray:
    arr = np.array(samples, dtype=np.float64).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Beat:
    """One aligned 370 ms window sampled at 1 kHz."""

    samples: np.ndarray
    patient_id: str = ""
    beat_id: str = ""
    sample_rate_hz: float = SAMPLE_RATE_HZ

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_samples(self.samples))
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise InvalidParams(f"sample rate must be {SAMPLE_RATE_HZ:g} Hz, got {self.sample_rate_hz}")
        if self.samples.size != WINDOW_LEN:
            raise InvalidParams(f"beat {self.beat_id!r} has {self.samples.size} samples, expected {WINDOW_LEN}")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidParams(f"beat {self.beat_id!r} contains non-finite samples")

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, Beat):
            return NotImplemented
        return (
            self.patient_id == other.patient_id
            and self.beat_id == other.beat_id
            and np.array_equal(self.samples, other.samples)
        )

    def with_samples(self, samples) -> "Beat":
        return Beat(samples, self.patient_id, self.beat_id, self.sample_rate_hz)


@dataclass(frozen=True)
class NormParams:
    offset: float
    scale: float


def _samples_of(beat):
    return beat.samples if isinstance(beat, Beat) else np.asarray(beat, dtype=np.float64)


def _rewrap(beat, samples):
    return beat.with_samples(samples) if isinstance(beat, Beat) else samples


def normalize(beat):
    """Min-max scale a beat (or a bare sample array) onto [0, 1].

    Returns ``(normalized, NormParams)`` such that ``denormalize`` inverts it.
    """
    x = _samples_of(beat)
    lo, hi = float(np.min(x)), float(np.max(x))
    if not hi > lo:
        raise DegenerateSignal("cannot normalize a constant signal")
    params = NormParams(offset=lo, scale=hi - lo)
    out = (x - lo) / params.scale
    return _rewrap(beat, out), params


def denormalize(beat, params: NormParams):
    if not params.scale > 0:
        raise InvalidParams(f"normalization scale must be positive, got {params.scale}")
    x = _samples_of(beat)
    return _rewrap(beat, x * params.scale + params.offset)


def pairwise_sum(rows: np.ndarray) -> np.ndarray:
    """Sum along axis 0 by repeated adjacent-pair reduction (fixed order)."""
    rows = np.asarray(rows, dtype=np.float64)
    while rows.shape[0] > 1:
        head = rows[0:rows.shape[0] - rows.shape[0] % 2]
        paired = head[0::2] + head[1::2]
        if rows.shape[0] % 2:
            paired = np.concatenate([paired, rows[-1:]])
        rows = paired
    return rows[0]


def patient_mean_beat(beats: Iterable[Beat], patient_id) -> Beat:
    """Samplewise mean of one patient's beats, summed in sorted beat_id order."""
    mine = sorted((b for b in beats if b.patient_id == patient_id), key=lambda b: b.beat_id)
    if len(mine) < 2:
        raise InsufficientData(f"patient {patient_id!r} has {len(mine)} beat(s); need at least 2")
    stacked = np.stack([b.samples for b in mine])
    return Beat(pairwise_sum(stacked) / len(mine), patient_id, f"{patient_id}_mean")


def upstroke_index(beat) -> int:
    """Index ``i`` maximizing ``x[i+1] - x[i]``; ties go to the smallest ``i``."""
    x = _samples_of(beat)
    return int(np.argmax(np.diff(x)))


@dataclass
class Dataset:
    """Clean beats with a train/test tag each, optionally paired with noisy beats.

    ``noisy`` maps beat_id to the corrupted counterpart of the clean beat with
    the same id. ``meta`` carries provenance such as ``config_hash``.
    """

    beats: list
    split: dict
    noisy: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beats = list(self.beats)
        self.validate()

    def validate(self) -> None:
        ids = [b.beat_id for b in self.beats]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})[:3]
            raise InvalidParams(f"duplicate beat ids: {dup}")
        if set(self.split) != set(ids):
            raise InvalidParams("split tags must cover exactly the dataset's beats")
        bad = {v for v in self.split.values()} - set(SPLITS)
        if bad:
            raise InvalidParams(f"unknown split tags {sorted(bad)}")
        if self.noisy is not None:
            index = self.by_id()
            for bid, nb in self.noisy.items():
                clean = index.get(bid)
                if clean is None:
                    raise InvalidParams(f"noisy beat {bid!r} has no clean counterpart")
                if nb.patient_id != clean.patient_id or len(nb) != len(clean) or nb.beat_id != bid:
                    raise InvalidParams(f"pair {bid!r} disagrees on patient, id or length")

    def __len__(self):
        return len(self.beats)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.split != other.split or len(self.beats) != len(other.beats):
            return False
        if any(a != b for a, b in zip(self.beats, other.beats)):
            return False
        if (self.noisy is None) != (other.noisy is None):
            return False
        if self.noisy is not None:
            if set(self.noisy) != set(other.noisy):
                return False
            return all(self.noisy[k] == other.noisy[k] for k in self.noisy)
        return True

    @property
    def paired(self) -> bool:
        return self.noisy is not None and len(self.noisy) > 0

    def by_id(self) -> dict:
        return {b.beat_id: b for b in self.beats}

    def patients(self) -> list:
        return sorted({b.patient_id for b in self.beats})

    def beats_in(self, split: str) -> list:
        return [b for b in self.beats if self.split[b.beat_id] == split]

    def pairs(self, split: str | None = None) -> list:
        """(clean, noisy) tuples in dataset order, optionally for one split."""
        if not self.paired:
            raise InsufficientData("dataset has no noisy counterparts")
        return [
            (b, self.noisy[b.beat_id])
            for b in self.beats
            if b.beat_id in self.noisy and (split is None or self.split[b.beat_id] == split)
        ]

    def clean_array(self, split: str | None = None) -> np.ndarray:
        chosen = self.beats if split is None else self.beats_in(split)
        return np.stack([b.samples for b in chosen]) if chosen else np.empty((0, WINDOW_LEN))

    def replace_beats(self, beats: Sequence[Beat], meta: dict | None = None) -> "Dataset":
        """New unpaired dataset with the same ids/split but different samples."""
        return Dataset(list(beats), dict(self.split), None, dict(self.meta if meta is None else meta))


def _header(n: int = WINDOW_LEN) -> list:
    return ["beat_id", "patient_id", "split", "role"] + [f"s{i}" for i in range(n)]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        for key in sorted(dataset.meta):
            fh.write(f"# {key}={dataset.meta[key]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header())
        for b in dataset.beats:
            split = dataset.split[b.beat_id]
            writer.writerow([b.beat_id, b.patient_id, split, "clean"] + [_fmt(v) for v in b.samples])
            if dataset.noisy is not None and b.beat_id in dataset.noisy:
                nb = dataset.noisy[b.beat_id]
                writer.writerow([b.beat_id, b.patient_id, split, "noisy"] + [_fmt(v) for v in nb.samples])


def read_dataset(path) -> Dataset:
    path = Path(path)
    meta = {}
    clean, noisy, split, lines = {}, {}, {}, {}
    order = []
    header = _header()
    with path.open("r", encoding="utf-8", newline="") as fh:
        raw_lines = fh.read().split("\n")
    if raw_lines and raw_lines[-1] == "":
        raw_lines.pop()
    if not raw_lines:
        raise EmptyDataset(f"{path} is empty")
    seen_header = False
    for lineno, text in enumerate(raw_lines, start=1):
        if text.startswith("#") and not seen_header:
            key, sep, value = text[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        row = next(csv.reader([text]))
        if not seen_header:
            if row != header:
                raise ParseError(f"unexpected header (want {len(header)} columns "
                                 f"beat_id,patient_id,split,role,s0..s{WINDOW_LEN - 1})", lineno)
            seen_header = True
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(row)}", lineno)
        bid, pid, sp, role = row[:4]
        if sp not in SPLITS:
            raise ParseError(f"split must be one of {SPLITS}, got {sp!r}", lineno)
        if role not in ROLES:
            raise ParseError(f"role must be one of {ROLES}, got {role!r}", lineno)
        try:
            values = np.array([float(v) for v in row[4:]])
        except ValueError as exc:
            raise ParseError(f"non-numeric sample: {exc}", lineno) from None
        if not np.all(np.isfinite(values)):
            raise ParseError("non-finite sample value", lineno)
        target = clean if role == "clean" else noisy
        if bid in target:
            raise ParseError(f"duplicate {role} row for beat {bid!r}", lineno)
        target[bid] = Beat(values, pid, bid)
        lines[(bid, role)] = lineno
        if role == "clean":
            order.append(bid)
            split[bid] = sp
        else:
            split.setdefault(("noisy", bid), sp)
    if not seen_header:
        raise EmptyDataset(f"{path} has no header")
    if not clean:
        raise EmptyDataset(f"{path} contains no clean rows")
    for bid, nb in noisy.items():
        lineno = lines[(bid, "noisy")]
        if bid not in clean:
            raise ParseError(f"noisy row for {bid!r} has no clean counterpart", lineno)
        if nb.patient_id != clean[bid].patient_id or split[("noisy", bid)] != split[bid]:
            raise ParseError(f"noisy row for {bid!r} disagrees with its clean row", lineno)
    tags = {bid: split[bid] for bid in order}
    return Dataset([clean[b] for b in order], tags, noisy or None, meta)


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return math.sqrt(float(np.mean(x * x)))
