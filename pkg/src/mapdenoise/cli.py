"""``mapdenoise`` command line: one subcommand per pipeline stage plus ``run``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
``MAPDENOISE_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import irfilter, mapsynth, metrics, noiselib, vae
from .errors import ConfigError, InvalidParams, MapDenoiseError, ProvenanceMismatch
from .pipeline import (
    PipelineConfig,
    describe_design,
    estimates_dataset,
    inputs_of,
    plan_json,
    run_pipeline,
    write_train_log,
)
from .sigcore import read_dataset, write_dataset

log = logging.getLogger("mapdenoise")

BETA_SWEEP = (0.5, 1.0, 2.0, 4.0)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _vae_config(path, overrides: dict) -> vae.VaeConfig:
    """VaeConfig from a pipeline config (its ``vae`` section) or a bare VaeConfig JSON."""
    base = vae.VaeConfig().to_dict()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if isinstance(doc, dict) and set(doc) & {"dataset", "noise", "vae", "filter", "eval"}:
            base = PipelineConfig(doc).vae_config.to_dict()
        elif isinstance(doc, dict):
            base = vae.VaeConfig.from_dict(doc).to_dict()
        else:
            raise ConfigError("config must be a JSON object")
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return vae.VaeConfig.from_dict(base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def cmd_synth(a):
    ds = mapsynth.synth_dataset(a.patients, a.beats_per_patient, a.test_fraction, a.seed)
    write_dataset(ds, a.out)
    log.info("wrote %d beats from %d patients to %s", len(ds), len(ds.patients()), a.out)


def _library(arg, clean):
    if arg == "auto":
        return noiselib.extract_ep_library(clean)
    return noiselib.read_library(arg)


def cmd_corrupt(a):
    clean = read_dataset(a.input)
    plan = noiselib.load_plan(a.plan) if a.plan else noiselib.default_plan()
    library = _library(a.ep_library, clean) if any(p.kind == "EP" for p in plan) else None
    paired = noiselib.corrupt_dataset(clean, plan, library, seed=a.seed)
    paired.meta["noise_plan"] = plan_json(plan)
    write_dataset(paired, a.out)
    log.info("wrote %d clean/noisy pairs to %s", len(paired), a.out)


def cmd_extract_noise(a):
    library = noiselib.extract_ep_library(read_dataset(a.input))
    noiselib.write_library(library, a.out)
    log.info("wrote %d residual rows to %s", len(library.patient_ids), a.out)


def cmd_train(a):
    data = read_dataset(a.data)
    cfg = _vae_config(a.config, {"epochs": a.epochs, "seed": a.seed, "beta": a.beta})
    betas = BETA_SWEEP if a.beta_sweep else (cfg.beta,)
    h = data.meta.get("config_hash", "")
    for beta in betas:
        c = vae.VaeConfig.from_dict({**cfg.to_dict(), "beta": beta})
        out, log_path = Path(a.out), Path(a.log) if a.log else None
        if a.beta_sweep:
            out = out.with_name(f"{out.stem}_beta{beta:g}{out.suffix}")
            log_path = log_path and log_path.with_name(f"{log_path.stem}_beta{beta:g}{log_path.suffix}")
        model = vae.VaeModel(c)
        report = vae.train(model, data, c, log=lambda r: log.info(
            "epoch %d train %.4f test %.4f kl %.3f", r["epoch"], r["train_neg_elbo"],
            r.get("test_neg_elbo", float("nan")), r["train_kl"]))
        vae.save_checkpoint(model, out, {"config_hash": h})
        if log_path:
            write_train_log(report, log_path, h)
        if report.collapse_warning:
            log.warning("posterior collapse suspected: KL < 1e-3 for 5 consecutive epochs")
        log.info("beta %g: best epoch %d, test loss %.6g -> %s", beta, report.best_epoch,
                 report.best_test_loss, out)


def cmd_denoise(a):
    model = vae.load_checkpoint(a.ckpt)
    data = read_dataset(a.input)
    meta = {"config_hash": model.checkpoint_extra.get("config_hash", "")}
    out = estimates_dataset(data, vae.denoise(model, inputs_of(data)), meta)
    write_dataset(out, a.out)


def cmd_filter(a):
    data = read_dataset(a.input)
    if a.low_hz is not None and a.high_hz is not None:
        design = irfilter.design_butterworth(a.order, (a.low_hz, a.high_hz), "bandpass")
    elif a.high_hz is not None:
        design = irfilter.design_butterworth(a.order, a.high_hz, "lowpass")
    elif a.low_hz is not None:
        raise InvalidParams("--low-hz alone would be a highpass; give --high-hz as well")
    elif a.tune:
        pairs = data.pairs("train")
        design = irfilter.tune_baseline(np.stack([c.samples for c, _ in pairs]),
                                        np.stack([n.samples for _, n in pairs]), a.order).design
    else:
        design = irfilter.design_butterworth(a.order, irfilter.BASELINE_BAND_HZ, "bandpass")
    meta = {"config_hash": data.meta.get("config_hash", ""), "filter": describe_design(design)}
    write_dataset(estimates_dataset(data, irfilter.filtfilt(design, inputs_of(data)), meta), a.out)
    log.info("filtered with %s", meta["filter"])


def _rows(path, want_noisy):
    ds = read_dataset(path)
    if want_noisy and ds.paired:
        return ds, [ds.noisy[b.beat_id] for b in ds.beats]
    return ds, list(ds.beats)


def cmd_eval(a):
    clean_ds, clean = _rows(a.clean, False)
    noisy_ds, noisy = _rows(a.noisy, True)
    filt_ds, filt = _rows(a.filtered, False)
    vae_ds, den = _rows(a.vae, False)
    hashes = {p: d.meta.get("config_hash", "") for p, d in
              ((a.clean, clean_ds), (a.noisy, noisy_ds), (a.filtered, filt_ds), (a.vae, vae_ds))}
    if len(set(hashes.values())) > 1 and not a.force:
        detail = ", ".join(f"{p}={h[:12] or '<none>'}" for p, h in hashes.items())
        raise ProvenanceMismatch(f"artifacts carry different config hashes ({detail}); use --force to mix")
    config_hash = next(iter(hashes.values())) if len(set(hashes.values())) == 1 else "mixed"
    report = metrics.evaluate(clean, noisy, filt, den, clean_ds.split,
                              noise_plan=noisy_ds.meta.get("noise_plan", ""), config_hash=config_hash,
                              psnr_as_printed=a.psnr_as_printed)
    json_path, csv_path = metrics.emit_report(report, a.out)
    for (split, label), row in report.rows.items():
        print(f"{split:5s} {label:8s} rmse {row['rmse_mean']:.6f} pcc {row['pcc_mean']:.6f} "
              f"psnr {row['psnr_mean']:.4f}")
    if a.plot_beat:
        if not a.plot_out:
            raise InvalidParams("--plot-beat needs --plot-out")
        idx = {b.beat_id: i for i, b in enumerate(clean)}
        if a.plot_beat not in idx:
            raise InvalidParams(f"beat {a.plot_beat!r} not found")
        i = idx[a.plot_beat]
        metrics.emit_plot_data(a.plot_beat, clean[i], noisy[i], filt[i], den[i], a.plot_out)
    log.info("wrote %s and %s", json_path, csv_path)


def cmd_run(a):
    cfg = PipelineConfig.load(a.config) if a.config else PipelineConfig()
    if a.epochs is not None:
        cfg = PipelineConfig({**cfg.document, "vae": {**cfg.document["vae"], "epochs": a.epochs}})
    result = run_pipeline(cfg, a.out_dir, skip_train=a.skip_train)
    for (split, label), row in result["report"].rows.items():
        print(f"{split:5s} {label:8s} rmse {row['rmse_mean']:.6f} pcc {row['pcc_mean']:.6f} "
              f"psnr {row['psnr_mean']:.4f}")
    print(f"config_hash {cfg.config_hash}")


def cmd_config(a):
    cfg = PipelineConfig.load(a.config) if a.config else PipelineConfig()
    if a.out:
        cfg.save(a.out)
    else:
        print(json.dumps(cfg.document, indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mapdenoise", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a clean synthetic dataset")
    s.add_argument("--patients", type=int, default=42)
    s.add_argument("--beats-per-patient", type=int, default=136)
    s.add_argument("--test-fraction", type=float, default=0.25)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="dataset CSV to write")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("corrupt", help="pair each clean beat with a corrupted copy")
    s.add_argument("--in", dest="input", required=True, help="clean dataset CSV")
    s.add_argument("--plan", help="plan JSON (array of noise specs); default: all six kinds")
    s.add_argument("--ep-library", default="auto", help="'auto' to extract from --in, or a library CSV")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", required=True, help="paired dataset CSV to write")
    s.set_defaults(func=cmd_corrupt)

    s = sub.add_parser("extract-noise", help="write per-patient EP residuals")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract_noise)

    s = sub.add_parser("train", help="train the VAE denoiser on a paired dataset")
    s.add_argument("--data", required=True, help="paired dataset CSV")
    s.add_argument("--config", help="pipeline config or VaeConfig JSON")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="train_log.csv path")
    s.add_argument("--epochs", type=int, help="override the configured epoch count")
    s.add_argument("--seed", type=int, help="override the configured seed")
    s.add_argument("--beta", type=float, help="override the configured beta")
    s.add_argument("--beta-sweep", action="store_true",
                   help="train one model per beta in {0.5, 1, 2, 4}, suffixing output names")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", help="posterior-mean reconstruction of every beat")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", required=True, help="dataset CSV (noisy rows used when paired)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("filter", help="zero-phase Butterworth baseline")
    s.add_argument("--in", dest="input", required=True, help="dataset CSV (noisy rows used when paired)")
    s.add_argument("--order", type=int, default=irfilter.BASELINE_ORDER)
    s.add_argument("--low-hz", type=float, help="lower band edge (bandpass with --high-hz)")
    s.add_argument("--high-hz", type=float, help="upper band edge, or lowpass cutoff alone")
    s.add_argument("--tune", action="store_true",
                   help="without cutoffs: pick the best grid design on the train pairs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("eval", help="Noisy / Filtered / VAE metrics against clean")
    s.add_argument("--clean", required=True)
    s.add_argument("--noisy", required=True, help="paired dataset (noisy rows) or noisy-only dataset")
    s.add_argument("--filtered", required=True)
    s.add_argument("--vae", required=True)
    s.add_argument("--out", required=True, help="report path; writes <stem>.json and <stem>.csv")
    s.add_argument("--force", action="store_true", help="allow artifacts with different config hashes")
    s.add_argument("--psnr-as-printed", action="store_true",
                   help="use 1*log10(MSE) instead of 10*log10(MSE) in PSNR")
    s.add_argument("--plot-beat", help="beat id to export as plot data")
    s.add_argument("--plot-out", help="plot data CSV path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("run", help="full pipeline: synth, corrupt, train, denoise, filter, eval")
    s.add_argument("--config", help="pipeline config JSON (defaults when omitted)")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--skip-train", action="store_true", help="reuse <out-dir>/model.ckpt")
    s.add_argument("--epochs", type=int, help="override vae.epochs")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("config", help="print or write the effective pipeline config")
    s.add_argument("--config", help="partial config JSON to merge over defaults")
    s.add_argument("--out", help="write here instead of stdout")
    s.set_defaults(func=cmd_config)
    return p


def _limit_threads():
    n = os.environ.get("MAPDENOISE_THREADS")
    if not n:
        return None
    try:
        count = int(n)
    except ValueError:
        raise ConfigError(f"MAPDENOISE_THREADS must be an integer, got {n!r}") from None
    if count < 1:
        raise ConfigError("MAPDENOISE_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=count)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        limiter = _limit_threads()
        try:
            args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except MapDenoiseError as exc:
        print(f"mapdenoise: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"mapdenoise: file not found: {exc.filename}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
