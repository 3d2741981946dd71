"""RMSE / PCC / PSNR and the Noisy-Filtered-VAE evaluation harness."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DegenerateSignal, ShapeError
from .sigcore import SPLITS, WINDOW_LEN, pairwise_sum

LABELS = ("Noisy", "Filtered", "VAE")
MAX_SIGNAL = 1.0


def _pair(s1, s2):
    a = np.asarray(getattr(s1, "samples", s1), dtype=np.float64).reshape(-1)
    b = np.asarray(getattr(s2, "samples", s2), dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size == 0:
        raise ShapeError(f"series lengths differ or are empty: {a.size} vs {b.size}")
    return a, b


def mse(s1, s2) -> float:
    a, b = _pair(s1, s2)
    d = a - b
    return float(np.dot(d, d)) / a.size


def rmse(s1, s2) -> float:
    return math.sqrt(mse(s1, s2))


def pcc(s1, s2) -> float:
    a, b = _pair(s1, s2)
    da = a - a.mean()
    db = b - b.mean()
    den = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if den == 0.0:
        raise DegenerateSignal("PCC undefined for a constant series")
    return float(np.dot(da, db)) / den


def psnr_from_mse(err: float, max_signal: float = MAX_SIGNAL, as_printed: bool = False) -> float:
    if err == 0.0:
        return math.inf
    coef = 1.0 if as_printed else 10.0
    return 20.0 * math.log10(max_signal) - coef * math.log10(err)


def psnr(clean, other, max_signal: float = MAX_SIGNAL, as_printed: bool = False) -> float:
    """Peak SNR in dB; ``inf`` for identical inputs.

    ``as_printed`` drops the factor 10 on the MSE term (literal variant kept
    for auditing; not the default).
    """
    return psnr_from_mse(mse(clean, other), max_signal, as_printed)


@dataclass
class EvalReport:
    rows: dict
    detail: list
    noise_plan: str = ""
    config_hash: str = ""
    psnr_as_printed: bool = False

    def row(self, split: str, label: str) -> dict:
        return self.rows[(split, label)]

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "noise_plan": self.noise_plan,
            "psnr_as_printed": self.psnr_as_printed,
            "rows": [
                {"split": s, "label": lab, **{k: _jsonable(v) for k, v in vals.items()}}
                for (s, lab), vals in self.rows.items()
            ],
            "detail": [{k: _jsonable(v) for k, v in d.items()} for d in self.detail],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        rows = {}
        for r in obj["rows"]:
            r = dict(r)
            key = (r.pop("split"), r.pop("label"))
            rows[key] = {k: _unjson(v) for k, v in r.items()}
        detail = [{k: _unjson(v) if k not in ("beat_id", "split", "label") else v
                   for k, v in d.items()} for d in obj["detail"]]
        return cls(rows, detail, obj.get("noise_plan", ""), obj.get("config_hash", ""),
                   obj.get("psnr_as_printed", False))

    def __eq__(self, other):
        return isinstance(other, EvalReport) and self.to_json() == other.to_json()


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _unjson(v):
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return v


def _aggregate(values) -> tuple:
    """Mean and population std with a fixed (pairwise) summation order."""
    v = np.asarray(values, dtype=np.float64)
    if np.any(np.isinf(v)):
        finite = v[np.isfinite(v)]
        return math.inf, (0.0 if finite.size == 0 else math.nan)
    mean = float(pairwise_sum(v[:, None])[0]) / v.size
    var = float(pairwise_sum(((v - mean) ** 2)[:, None])[0]) / v.size
    return mean, math.sqrt(var)


def _index(beats, name):
    out = {}
    for b in beats:
        if b.beat_id in out:
            raise AlignmentError(f"{name}: duplicate beat id {b.beat_id!r}")
        out[b.beat_id] = b
    return out


def evaluate(clean_set, noisy_set, filtered_set, vae_set, split: dict,
             noise_plan: str = "", config_hash: str = "", psnr_as_printed: bool = False) -> EvalReport:
    """Per-beat metrics of each candidate against the clean reference, aggregated.

    Each ``*_set`` is a sequence of beats; ``split`` maps beat_id to train/test.
    Beats are matched by id, and every set must hold exactly the same ids in the same order.
    """
    clean = _index(clean_set, "clean")
    order = [b.beat_id for b in clean_set]
    candidates = {}
    for label, beats in zip(LABELS, (noisy_set, filtered_set, vae_set)):
        ids = [b.beat_id for b in beats]
        if ids != order:
            raise AlignmentError(f"{label} beats are not aligned with the clean set by beat_id")
        candidates[label] = _index(beats, label)
    if set(split) != set(order):
        raise AlignmentError("split tags do not cover exactly the evaluated beats")

    detail = []
    for bid in sorted(order):
        ref = clean[bid].samples
        for label in LABELS:
            est = candidates[label][bid].samples
            e = mse(ref, est)
            detail.append({
                "beat_id": bid, "split": split[bid], "label": label,
                "rmse": math.sqrt(e), "pcc": pcc(ref, est),
                "psnr": psnr_from_mse(e, MAX_SIGNAL, psnr_as_printed),
            })
    rows = {}
    for s in SPLITS:
        for label in LABELS:
            mine = [d for d in detail if d["split"] == s and d["label"] == label]
            if not mine:
                continue
            row = {"n": len(mine)}
            for metric in ("rmse", "pcc", "psnr"):
                m, sd = _aggregate([d[metric] for d in mine])
                row[f"{metric}_mean"] = m
                row[f"{metric}_std"] = sd
            rows[(s, label)] = row
    return EvalReport(rows, detail, noise_plan, config_hash, psnr_as_printed)


REPORT_COLUMNS = ("split", "label", "n", "rmse_mean", "rmse_std", "pcc_mean", "pcc_std",
                  "psnr_mean", "psnr_std")


def emit_report(report: EvalReport, path) -> tuple:
    """Write ``<stem>.json`` and ``<stem>.csv``; returns both paths."""
    path = Path(path)
    stem = path.with_suffix("")
    json_path, csv_path = stem.with_suffix(".json"), stem.with_suffix(".csv")
    json_path.write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        if report.config_hash:
            fh.write(f"# config_hash={report.config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for (s, label), vals in report.rows.items():
            w.writerow([s, label] + [_jsonable(vals[c]) if c != "n" else vals[c]
                                     for c in REPORT_COLUMNS[2:]])
    return json_path, csv_path


def read_report(path) -> EvalReport:
    return EvalReport.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def emit_plot_data(beat_id: str, clean, noisy, filtered, vae, path) -> None:
    """Four aligned columns (clean, noisy, filtered, vae), one row per sample."""
    cols = [np.asarray(getattr(s, "samples", s), dtype=np.float64) for s in (clean, noisy, filtered, vae)]
    if any(c.shape != (WINDOW_LEN,) for c in cols):
        raise ShapeError(f"plot data for {beat_id!r} needs four {WINDOW_LEN}-sample series")
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clean", "noisy", "filtered", "vae"])
        for row in zip(*cols):
            w.writerow([format(v, ".17g") for v in row])
