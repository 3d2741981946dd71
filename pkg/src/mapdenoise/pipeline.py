"""Declarative pipeline config and the end-to-end run.

synth -> extract EP library -> corrupt -> train -> denoise -> filter -> eval,
with every artifact stamped by the hash of the canonical config document.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import irfilter, mapsynth, metrics, noiselib, vae
from .errors import CheckpointError, ConfigError, InvalidParams, MapDenoiseError
from .sigcore import Dataset, write_dataset

log = logging.getLogger("mapdenoise")

FILTER_MODES = ("tuned", "fixed")


def default_document() -> dict:
    return {
        "dataset": {"n_patients": 42, "beats_per_patient": 136, "test_fraction": 0.25, "seed": 0},
        "noise": {"plan": [s.to_json() for s in noiselib.default_plan()], "seed": 1},
        "vae": vae.VaeConfig().to_dict(),
        "filter": {
            "mode": "tuned",
            "order": irfilter.BASELINE_ORDER,
            "kind": "bandpass",
            "cutoff_hz": list(irfilter.BASELINE_BAND_HZ),
            "grid": [[kind, list(cut)] for kind, cut in irfilter.TUNING_GRID],
        },
        "eval": {"psnr_as_printed": False, "plot_beat": None},
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key] and key != "plan":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True, eq=False)
class PipelineConfig:
    """Every module default in one JSON document; unknown keys are rejected."""

    document: dict = field(default_factory=default_document)

    def __post_init__(self):
        doc = _merge(default_document(), self.document)
        object.__setattr__(self, "document", doc)
        self.validate()

    def __eq__(self, other):
        return isinstance(other, PipelineConfig) and self.config_hash == other.config_hash

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls(doc)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.document, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.document).encode()).hexdigest()

    @property
    def vae_config(self) -> vae.VaeConfig:
        try:
            return vae.VaeConfig.from_dict(self.document["vae"])
        except TypeError as exc:
            raise ConfigError(f"vae section: {exc}") from None

    @property
    def noise_plan(self) -> list:
        return noiselib.validate_plan([noiselib.NoiseSpec.from_json(s) for s in self.document["noise"]["plan"]])

    def validate(self) -> None:
        d = self.document
        ds = d["dataset"]
        for key in ("n_patients", "beats_per_patient", "seed"):
            if not isinstance(ds[key], int) or isinstance(ds[key], bool):
                raise ConfigError(f"dataset.{key} must be an integer")
        if not isinstance(d["noise"]["seed"], int):
            raise ConfigError("noise.seed must be an integer")
        try:
            canonical_json(d)
            self.vae_config
            self.noise_plan
            self.filter_grid()
            if d["filter"]["mode"] not in FILTER_MODES:
                raise ConfigError(f"filter.mode must be one of {FILTER_MODES}")
            self.fixed_design()
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    def filter_grid(self) -> tuple:
        return tuple((kind, tuple(cut)) for kind, cut in self.document["filter"]["grid"])

    def fixed_design(self) -> irfilter.ButterworthDesign:
        f = self.document["filter"]
        return irfilter.design_butterworth(f["order"], f["cutoff_hz"], f["kind"])


def _stamp(dataset: Dataset, cfg: PipelineConfig, **extra) -> Dataset:
    dataset.meta = {**dataset.meta, "config_hash": cfg.config_hash, **extra}
    return dataset


def estimates_dataset(source: Dataset, rows: np.ndarray, meta: dict) -> Dataset:
    """Unpaired dataset of per-beat estimates with the ids and split of ``source``."""
    beats = [b.with_samples(r) for b, r in zip(source.beats, rows)]
    return source.replace_beats(beats, meta)


def inputs_of(dataset: Dataset) -> np.ndarray:
    """Noisy rows of a paired dataset, else its clean rows, in dataset order."""
    if dataset.paired:
        return np.stack([dataset.noisy[b.beat_id].samples for b in dataset.beats])
    return dataset.clean_array()


def write_train_log(report: vae.TrainingReport, path, config_hash: str = "") -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "neg_elbo", "recon_term", "kl_term"])
        for r in report.log_rows():
            w.writerow([r["epoch"], r["split"], format(r["neg_elbo"], ".17g"),
                        format(r["recon_term"], ".17g"), format(r["kl_term"], ".17g")])


def select_filter(cfg: PipelineConfig, paired: Dataset):
    """The baseline design for this run and, when tuned, its grid scores."""
    f = cfg.document["filter"]
    if f["mode"] == "fixed":
        return cfg.fixed_design(), ()
    pairs = paired.pairs("train")
    clean = np.stack([c.samples for c, _ in pairs])
    noisy = np.stack([n.samples for _, n in pairs])
    result = irfilter.tune_baseline(clean, noisy, f["order"], cfg.filter_grid())
    return result.design, result.scores


ARTIFACTS = {
    "dataset": "dataset.csv",
    "ep_library": "ep_library.csv",
    "paired": "paired.csv",
    "checkpoint": "model.ckpt",
    "train_log": "train_log.csv",
    "denoised": "denoised.csv",
    "filtered": "filtered.csv",
    "report": "report.json",
    "manifest": "manifest.json",
}


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if isinstance(exc, MapDenoiseError) and not getattr(exc, "stage", None):
            exc.stage = self.name
            exc.args = (f"stage {self.name}: {exc}",) + exc.args[1:]
        return False


def run_pipeline(cfg: PipelineConfig, out_dir, skip_train: bool = False) -> dict:
    """Run every stage into ``out_dir``; returns artifact paths plus the report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in ARTIFACTS.items()}
    h = cfg.config_hash
    doc = cfg.document
    vcfg = cfg.vae_config

    with _Stage("synth"):
        ds = doc["dataset"]
        clean = mapsynth.synth_dataset(ds["n_patients"], ds["beats_per_patient"], ds["test_fraction"], ds["seed"])
        write_dataset(_stamp(clean, cfg), paths["dataset"])
    with _Stage("extract-noise"):
        library = noiselib.extract_ep_library(clean)
        noiselib.write_library(library, paths["ep_library"])
    with _Stage("corrupt"):
        plan = cfg.noise_plan
        paired = noiselib.corrupt_dataset(clean, plan, library, seed=doc["noise"]["seed"])
        write_dataset(_stamp(paired, cfg, noise_plan=plan_json(plan)), paths["paired"])

    with _Stage("train"):
        if skip_train:
            if not paths["checkpoint"].exists():
                raise CheckpointError(f"--skip-train needs an existing checkpoint at {paths['checkpoint']}")
            model = vae.load_checkpoint(paths["checkpoint"], expected=vcfg)
            if model.checkpoint_extra.get("config_hash") != h:
                raise CheckpointError("checkpoint config_hash does not match this config")
            training = None
        else:
            model = vae.VaeModel(vcfg)
            training = vae.train(model, paired, vcfg,
                                 log=lambda r: log.info("epoch %d train %.4f test %.4f", r["epoch"],
                                                        r["train_neg_elbo"], r.get("test_neg_elbo", np.nan)))
            vae.save_checkpoint(model, paths["checkpoint"], {"config_hash": h})
            write_train_log(training, paths["train_log"], h)

    noisy_rows = inputs_of(paired)
    with _Stage("denoise"):
        denoised = estimates_dataset(paired, vae.denoise(model, noisy_rows), {"config_hash": h})
        write_dataset(denoised, paths["denoised"])
    with _Stage("filter"):
        design, scores = select_filter(cfg, paired)
        filtered = estimates_dataset(paired, irfilter.filtfilt(design, noisy_rows),
                                     {"config_hash": h, "filter": describe_design(design)})
        write_dataset(filtered, paths["filtered"])

    with _Stage("eval"):
        noisy_set = [paired.noisy[b.beat_id] for b in paired.beats]
        report = metrics.evaluate(paired.beats, noisy_set, filtered.beats, denoised.beats, paired.split,
                                  noise_plan=plan_json(plan), config_hash=h,
                                  psnr_as_printed=bool(doc["eval"]["psnr_as_printed"]))
        metrics.emit_report(report, paths["report"])
        plot_beat = doc["eval"]["plot_beat"]
        if plot_beat is None:
            test_ids = sorted(b.beat_id for b in paired.beats_in("test"))
            plot_beat = test_ids[0] if test_ids else paired.beats[0].beat_id
        idx = {b.beat_id: i for i, b in enumerate(paired.beats)}
        if plot_beat not in idx:
            raise InvalidParams(f"plot_beat {plot_beat!r} is not in the dataset")
        i = idx[plot_beat]
        paths["plot"] = out / f"plot_{plot_beat}.csv"
        metrics.emit_plot_data(plot_beat, paired.beats[i], noisy_set[i], filtered.beats[i],
                               denoised.beats[i], paths["plot"])

    manifest = {
        "config_hash": h,
        "config": doc,
        "seeds": {"dataset": doc["dataset"]["seed"], "noise": doc["noise"]["seed"], "vae": vcfg.seed},
        "filter": {"design": describe_design(design),
                   "scores": [[k, list(c), s] for k, c, s in scores]},
        "training": None if training is None else {
            "steps": training.steps, "best_epoch": training.best_epoch,
            "best_test_loss": training.best_test_loss, "collapse_warning": training.collapse_warning,
        },
        "artifacts": {k: str(p.name) for k, p in paths.items()},
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return {"paths": paths, "report": report, "training": training, "design": design}


def describe_design(d: irfilter.ButterworthDesign) -> str:
    return f"{d.kind}:order={d.order}:" + "-".join(format(c, "g") for c in d.cutoff_hz) + "Hz"


def plan_json(plan) -> str:
    return json.dumps([s.to_json() for s in plan], sort_keys=True, separators=(",", ":"))
