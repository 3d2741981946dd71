import json

import numpy as np
import pytest

from mapdenoise import cli, metrics
from mapdenoise.errors import CheckpointError, ConfigError, InvalidParams
from mapdenoise.pipeline import PipelineConfig, default_document, run_pipeline
from mapdenoise.sigcore import read_dataset, write_dataset

SMALL = {
    "dataset": {"n_patients": 4, "beats_per_patient": 8, "test_fraction": 0.25, "seed": 2},
    "vae": {"epochs": 2, "batch_size": 8},
}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, run_pipeline(PipelineConfig(SMALL), out)


def test_run_produces_stamped_artifacts(small_run):
    out, result = small_run
    h = PipelineConfig(SMALL).config_hash
    rep = result["report"]
    assert len(rep.rows) == 6 and rep.config_hash == h
    csv_lines = (out / "report.csv").read_text().splitlines()
    assert csv_lines[0] == f"# config_hash={h}" and len(csv_lines) == 1 + 1 + 6
    for name in ("dataset.csv", "paired.csv", "denoised.csv", "filtered.csv"):
        assert read_dataset(out / name).meta["config_hash"] == h
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == h and manifest["seeds"] == {"dataset": 2, "noise": 1, "vae": 0}
    assert (out / "train_log.csv").read_text().count("\n") >= 3
    assert metrics.read_report(out / "report.json") == rep
    plot = result["paths"]["plot"].read_text().splitlines()
    assert len(plot) == 371


def test_rerun_is_identical(small_run, tmp_path):
    _, first = small_run
    again = run_pipeline(PipelineConfig(SMALL), tmp_path)
    for key, row in first["report"].rows.items():
        for metric, v in row.items():
            assert again["report"].rows[key][metric] == pytest.approx(v, rel=0, abs=1e-9)


def test_skip_train_reuses_checkpoint(small_run, tmp_path):
    out, first = small_run
    again = run_pipeline(PipelineConfig(SMALL), out, skip_train=True)
    assert again["training"] is None
    assert again["report"] == first["report"]
    with pytest.raises(CheckpointError):
        run_pipeline(PipelineConfig(SMALL), tmp_path / "empty", skip_train=True)


def test_checkpoint_hash_mismatch(small_run):
    out, _ = small_run
    # same VAE, different document: the stamped hash disagrees
    other = PipelineConfig({**SMALL, "eval": {"psnr_as_printed": True}})
    with pytest.raises(CheckpointError, match="config_hash"):
        run_pipeline(other, out, skip_train=True)
    # different VAE architecture: the checkpoint itself is incompatible
    wider = PipelineConfig({**SMALL, "vae": {**SMALL["vae"], "latent_dim": 16}})
    with pytest.raises(CheckpointError):
        run_pipeline(wider, out, skip_train=True)


def test_config_document():
    assert PipelineConfig().document == default_document()
    a = PipelineConfig(json.loads(json.dumps(SMALL)))
    b = PipelineConfig({"vae": SMALL["vae"], "dataset": dict(reversed(list(SMALL["dataset"].items())))})
    assert a.config_hash == b.config_hash
    assert a.config_hash != PipelineConfig().config_hash
    with pytest.raises(ConfigError):
        PipelineConfig({"dataset": {"n_patients": 4, "colour": "red"}})
    with pytest.raises(ConfigError):
        PipelineConfig({"vae": {"dropout": 0.5}})
    with pytest.raises(ConfigError):
        PipelineConfig({"filter": {"mode": "adaptive"}})
    with pytest.raises(ConfigError):
        PipelineConfig({"dataset": {"seed": 1.5}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_json("[1, 2]")


def test_config_save_load(tmp_path):
    cfg = PipelineConfig(SMALL)
    cfg.save(tmp_path / "c.json")
    assert PipelineConfig.load(tmp_path / "c.json").config_hash == cfg.config_hash


def test_stage_error_names_stage(tmp_path):
    cfg = PipelineConfig({**SMALL, "eval": {"plot_beat": "nope"}})
    with pytest.raises(InvalidParams, match="stage eval"):
        run_pipeline(cfg, tmp_path)


# ---- command line -------------------------------------------------------

def _cli(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def staged(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert _cli("synth", "--patients", 3, "--beats-per-patient", 8, "--seed", 4, "--out", d / "clean.csv") == 0
    assert _cli("corrupt", "--in", d / "clean.csv", "--out", d / "paired.csv") == 0
    assert _cli("train", "--data", d / "paired.csv", "--out", d / "m.ckpt", "--epochs", 1,
                "--log", d / "log.csv") == 0
    assert _cli("denoise", "--ckpt", d / "m.ckpt", "--in", d / "paired.csv", "--out", d / "vae.csv") == 0
    assert _cli("filter", "--in", d / "paired.csv", "--out", d / "filt.csv") == 0
    return d


def test_cli_stages(staged, capsys):
    d = staged
    code = _cli("eval", "--clean", d / "paired.csv", "--noisy", d / "paired.csv", "--filtered",
                d / "filt.csv", "--vae", d / "vae.csv", "--out", d / "report.json",
                "--plot-beat", read_dataset(d / "paired.csv").beats[0].beat_id, "--plot-out", d / "plot.csv")
    assert code == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 6
    rep = metrics.read_report(d / "report.json")
    assert len(rep.rows) == 6
    assert (d / "plot.csv").read_text().count("\n") == 371
    paired = read_dataset(d / "paired.csv")
    filt = read_dataset(d / "filt.csv")
    assert [b.beat_id for b in filt.beats] == [b.beat_id for b in paired.beats]
    assert not np.array_equal(filt.beats[0].samples, paired.noisy[paired.beats[0].beat_id].samples)


def test_cli_filter_variants(staged):
    d = staged
    assert _cli("filter", "--in", d / "paired.csv", "--high-hz", 150, "--out", d / "lp.csv") == 0
    assert read_dataset(d / "lp.csv").meta["filter"] == "lowpass:order=5:150Hz"
    assert _cli("filter", "--in", d / "paired.csv", "--tune", "--out", d / "tuned.csv") == 0
    assert _cli("filter", "--in", d / "paired.csv", "--low-hz", 1, "--out", d / "x.csv") == 2
    assert _cli("filter", "--in", d / "paired.csv", "--high-hz", 600, "--out", d / "x.csv") == 2


def test_cli_eval_refuses_mixed_hashes(tmp_path, capsys):
    run_dir = tmp_path / "run"
    run_pipeline(PipelineConfig(SMALL), run_dir)
    den = read_dataset(run_dir / "denoised.csv")
    den.meta["config_hash"] = "0" * 64
    write_dataset(den, tmp_path / "restamped.csv")
    base = ["eval", "--clean", run_dir / "paired.csv", "--noisy", run_dir / "paired.csv",
            "--filtered", run_dir / "filtered.csv", "--out", tmp_path / "r.json"]
    assert _cli(*base, "--vae", tmp_path / "restamped.csv") == 3
    assert "ProvenanceMismatch" in capsys.readouterr().err
    assert _cli(*base, "--vae", tmp_path / "restamped.csv", "--force") == 0
    assert metrics.read_report(tmp_path / "r.json").config_hash == "mixed"
    assert _cli(*base, "--vae", run_dir / "denoised.csv") == 0
    assert metrics.read_report(tmp_path / "r.json") == metrics.read_report(run_dir / "report.json")


def test_cli_extract_noise(staged):
    assert _cli("extract-noise", "--in", staged / "clean.csv", "--out", staged / "lib.csv") == 0
    assert _cli("corrupt", "--in", staged / "clean.csv", "--ep-library", staged / "lib.csv",
                "--out", staged / "p2.csv") == 0
    a, b = read_dataset(staged / "paired.csv"), read_dataset(staged / "p2.csv")
    assert all(np.array_equal(a.noisy[k].samples, b.noisy[k].samples) for k in a.noisy)


def test_cli_exit_codes(staged, tmp_path, capsys):
    d = staged
    assert _cli("train", "--data", tmp_path / "missing.csv", "--out", tmp_path / "m.ckpt") == 3
    (tmp_path / "bad.json").write_text('{"vae": {"dropout": 1}}')
    assert _cli("run", "--config", tmp_path / "bad.json", "--out-dir", tmp_path / "o") == 2
    assert _cli("config", "--config", tmp_path / "bad.json") == 2
    (tmp_path / "junk.csv").write_text("not,a,dataset\n1,2\n")
    assert _cli("denoise", "--ckpt", d / "m.ckpt", "--in", tmp_path / "junk.csv", "--out", tmp_path / "o.csv") == 3
    assert _cli("denoise", "--ckpt", tmp_path / "junk.csv", "--in", d / "paired.csv", "--out", tmp_path / "o.csv") == 3
    # a learning rate this large overflows the first decoder pass
    (tmp_path / "hot.json").write_text(json.dumps({"vae": {"lr": 1e150, "epochs": 2}}))
    assert _cli("train", "--data", d / "paired.csv", "--config", tmp_path / "hot.json",
                "--out", tmp_path / "h.ckpt") == 4
    with pytest.raises(SystemExit) as exc:
        _cli("synth")
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        _cli("fly")
    assert exc.value.code == 2
    assert "NonFiniteError" in capsys.readouterr().err


def test_cli_threads_env(staged, monkeypatch, tmp_path):
    monkeypatch.setenv("MAPDENOISE_THREADS", "1")
    assert _cli("filter", "--in", staged / "paired.csv", "--out", tmp_path / "f.csv") == 0
    monkeypatch.setenv("MAPDENOISE_THREADS", "zero")
    assert _cli("filter", "--in", staged / "paired.csv", "--out", tmp_path / "f.csv") == 2


def test_cli_config_roundtrip(tmp_path, capsys):
    (tmp_path / "part.json").write_text(json.dumps(SMALL))
    assert _cli("config", "--config", tmp_path / "part.json", "--out", tmp_path / "full.json") == 0
    full = PipelineConfig.load(tmp_path / "full.json")
    assert full.config_hash == PipelineConfig(SMALL).config_hash
    assert _cli("config") == 0
    assert json.loads(capsys.readouterr().out) == default_document()


def test_cli_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        _cli("--help")
    text = capsys.readouterr().out
    for name in ("synth", "corrupt", "extract-noise", "train", "denoise", "filter", "eval", "run"):
        assert name in text
