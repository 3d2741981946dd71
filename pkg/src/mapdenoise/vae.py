"""Convolutional beta-VAE denoiser built on :mod:`mapdenoise.diffengine`.

The encoder sees the noisy beat and the Gaussian likelihood scores the
decoder mean against the clean beat, so maximizing the ELBO trains a
denoiser. Inference decodes the posterior mean.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diffengine as de
from .diffengine import Tensor
from .errors import CheckpointError, InsufficientData, InvalidParams, ShapeError
from .sigcore import WINDOW_LEN, Beat

CHECKPOINT_FORMAT = "mapdenoise-vae/1"
LEAK = 0.01


@dataclass(frozen=True)
class VaeConfig:
    input_dim: int = WINDOW_LEN
    latent_dim: int = 32
    batch_size: int = 32
    beta: float = 1.0
    mc_samples: int = 1
    likelihood_sigma: float = 0.1
    encoder_channels: tuple = (16, 32, 32, 64, 64, 128)
    kernel_size: int = 5
    strides: tuple = (2, 1, 2, 1, 2, 1)
    lr: float = 1e-3
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        problems = []
        if len(self.encoder_channels) != len(self.strides) or not self.strides:
            problems.append("encoder_channels and strides need the same nonzero length")
        if min(self.encoder_channels + self.strides, default=0) < 1:
            problems.append("channels and strides must be positive")
        for name in ("input_dim", "latent_dim", "batch_size", "mc_samples", "kernel_size"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        for name in ("beta", "likelihood_sigma", "lr"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if problems:
            raise InvalidParams("; ".join(problems))
        if self.flatten_dim < self.latent_dim:
            raise InvalidParams(f"flatten dimension {self.flatten_dim} is smaller than latent_dim {self.latent_dim}")

    @property
    def padding(self) -> int:
        return self.kernel_size // 2

    @property
    def encoder_lengths(self) -> list:
        lengths = [self.input_dim]
        for s in self.strides:
            lengths.append(de.conv_output_length(lengths[-1], self.kernel_size, s, self.padding))
        if lengths[-1] < 1:
            raise InvalidParams("input too short for the encoder strides")
        return lengths

    @property
    def flatten_dim(self) -> int:
        return self.encoder_channels[-1] * self.encoder_lengths[-1]

    def decoder_layout(self) -> list:
        """(in_ch, out_ch, stride, padding, crop_to) per transposed layer.

        Each layer mirrors one encoder layer; padding is the largest value
        that still reaches the mirrored length, and any excess is cropped.
        """
        lengths = self.encoder_lengths
        chans = (1,) + self.encoder_channels
        k = self.kernel_size
        layout = []
        cur = lengths[-1]
        for i in reversed(range(len(self.strides))):
            s, target = self.strides[i], lengths[i]
            full = (cur - 1) * s + k
            pad = max(0, min(self.padding, (full - target) // 2))
            out = full - 2 * pad
            if out < target:
                raise InvalidParams(f"decoder cannot reach length {target} at layer {i}")
            layout.append((chans[i + 1], chans[i], s, pad, target))
            cur = target
        return layout

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["strides"] = list(self.strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VaeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidParams(f"unknown VaeConfig keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class VaeModel:
    """Parameters and forward passes of the encoder/decoder pair."""

    def __init__(self, config: VaeConfig | None = None, seed: int | None = None):
        self.config = config or VaeConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        k = cfg.kernel_size
        self.params = {}
        cin = 1
        for i, cout in enumerate(cfg.encoder_channels):
            self._add(f"enc{i}.w", _uniform(rng, (cout, cin, k), cin * k))
            self._add(f"enc{i}.b", _uniform(rng, (cout,), cin * k))
            cin = cout
        flat = cfg.flatten_dim
        for head in ("mu", "logvar"):
            self._add(f"{head}.w", _uniform(rng, (cfg.latent_dim, flat), flat))
            self._add(f"{head}.b", _uniform(rng, (cfg.latent_dim,), flat))
        self._add("dec_in.w", _uniform(rng, (flat, cfg.latent_dim), cfg.latent_dim))
        self._add("dec_in.b", _uniform(rng, (flat,), cfg.latent_dim))
        for j, (ci, co, _s, _p, _t) in enumerate(cfg.decoder_layout()):
            self._add(f"dec{j}.w", _uniform(rng, (ci, co, k), co * k))
            self._add(f"dec{j}.b", _uniform(rng, (co,), co * k))

    def _add(self, name, value):
        self.params[name] = Tensor(value, requires_grad=True)

    def parameters(self) -> list:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        if set(state) != set(self.params):
            raise CheckpointError("parameter names do not match the model architecture")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise CheckpointError(f"parameter {k} has shape {v.shape}, expected {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def encode(self, x: Tensor):
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != cfg.input_dim:
            raise ShapeError(f"encode expects (B, 1, {cfg.input_dim}), got {x.shape}")
        p = self.params
        h = x
        for i, s in enumerate(cfg.strides):
            h = de.leaky_relu(de.conv1d(h, p[f"enc{i}.w"], p[f"enc{i}.b"], s, cfg.padding), LEAK)
        h = de.flatten(h)
        return de.linear(h, p["mu.w"], p["mu.b"]), de.linear(h, p["logvar.w"], p["logvar.b"])

    def decode(self, z: Tensor) -> Tensor:
        cfg = self.config
        if z.ndim != 2 or z.shape[1] != cfg.latent_dim:
            raise ShapeError(f"decode expects (B, {cfg.latent_dim}), got {z.shape}")
        p = self.params
        h = de.leaky_relu(de.linear(z, p["dec_in.w"], p["dec_in.b"]), LEAK)
        h = de.reshape(h, (z.shape[0], cfg.encoder_channels[-1], cfg.encoder_lengths[-1]))
        layout = cfg.decoder_layout()
        for j, (_ci, _co, s, pad, target) in enumerate(layout):
            h = de.conv_transpose1d(h, p[f"dec{j}.w"], p[f"dec{j}.b"], s, pad)
            if h.shape[2] > target:
                h = de.crop(h, target)
            if j < len(layout) - 1:
                h = de.leaky_relu(h, LEAK)
        return h

    def denoise_array(self, x_noisy: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Posterior-mean reconstruction of each row of ``x_noisy``, clamped to [0, 1]."""
        x = np.asarray(x_noisy, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeError(f"expected (n, {self.config.input_dim}) rows, got {x.shape}")
        out = np.empty_like(x)
        for i in range(0, x.shape[0], batch_size):
            mu, _ = self.encode(Tensor(x[i:i + batch_size, None, :]))
            out[i:i + batch_size] = self.decode(mu).data[:, 0, :]
        return np.clip(out, 0.0, 1.0)


def encode(model: VaeModel, x):
    return model.encode(de.as_tensor(x))


def decode(model: VaeModel, z):
    return model.decode(de.as_tensor(z))


def reparameterize(mu: Tensor, logvar: Tensor, seed) -> Tensor:
    """``mu + exp(logvar / 2) * eps`` with eps ~ N(0, I) drawn from ``seed``."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    eps = np.random.default_rng(seed).standard_normal(mu.shape)
    return mu + de.exp(logvar * 0.5) * Tensor(eps)


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, diag exp(logvar)) || N(0, I)) per batch row, always >= 0."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    inner = de.square(mu) + de.exp(logvar) - logvar - 1.0
    return de.sum(inner, axis=1) * 0.5


def gaussian_nll(x: Tensor, x_mu: Tensor, sigma: float) -> Tensor:
    """Per-row ``-log p(x | z)`` for a fixed isotropic Gaussian of std ``sigma``."""
    if x.shape != x_mu.shape:
        raise ShapeError(f"target {x.shape} and reconstruction {x_mu.shape} differ")
    d = int(np.prod(x.shape[1:]))
    sq = de.sum(de.square(x - x_mu), axis=tuple(range(1, x.ndim)))
    return sq * (1.0 / (2.0 * sigma * sigma)) + 0.5 * d * math.log(2.0 * math.pi * sigma * sigma)


@dataclass
class LossTerms:
    loss: Tensor
    recon: float
    kl: float


def elbo_loss(model: VaeModel, x_clean, x_noisy, beta: float | None = None,
              mc_samples: int | None = None, sigma: float | None = None, seed=0) -> LossTerms:
    """Batch-mean negative beta-ELBO.

    The encoder sees ``x_noisy``; the Monte Carlo average of the Gaussian
    log-likelihood over ``mc_samples`` latents is scored against ``x_clean``.
    """
    cfg = model.config
    beta = cfg.beta if beta is None else beta
    mc_samples = cfg.mc_samples if mc_samples is None else mc_samples
    sigma = cfg.likelihood_sigma if sigma is None else sigma
    if mc_samples < 1:
        raise InvalidParams("mc_samples must be >= 1")
    x_clean, x_noisy = de.as_tensor(x_clean), de.as_tensor(x_noisy)
    if x_clean.shape != x_noisy.shape:
        raise ShapeError(f"clean {x_clean.shape} and noisy {x_noisy.shape} batches differ")
    mu, logvar = model.encode(x_noisy)
    rng = np.random.default_rng(seed)
    nll = None
    for _ in range(mc_samples):
        z = reparameterize(mu, logvar, rng.integers(2**63))
        term = gaussian_nll(x_clean, model.decode(z), sigma)
        nll = term if nll is None else nll + term
    nll = nll * (1.0 / mc_samples)
    kl = kl_divergence(mu, logvar)
    loss = de.mean(nll + kl * beta)
    return LossTerms(loss, float(nll.data.mean()), float(kl.data.mean()))


@dataclass
class TrainingReport:
    epochs: list = field(default_factory=list)
    steps: int = 0
    best_epoch: int = -1
    best_test_loss: float = math.inf
    collapse_warning: bool = False

    def losses(self, split: str = "train") -> list:
        return [e[f"{split}_neg_elbo"] for e in self.epochs]

    def log_rows(self) -> list:
        rows = []
        for e in self.epochs:
            for split in ("train", "test"):
                if f"{split}_neg_elbo" in e:
                    rows.append({"epoch": e["epoch"], "split": split,
                                 "neg_elbo": e[f"{split}_neg_elbo"],
                                 "recon_term": e[f"{split}_recon"],
                                 "kl_term": e[f"{split}_kl"]})
        return rows


def _pair_arrays(pairs):
    clean = np.stack([c.samples for c, _ in pairs])[:, None, :]
    noisy = np.stack([n.samples for _, n in pairs])[:, None, :]
    return clean, noisy


def evaluate_loss(model: VaeModel, clean: np.ndarray, noisy: np.ndarray, seed=0,
                  batch_size: int = 256) -> tuple:
    """Dataset-mean (neg_elbo, recon, kl) without building a tape."""
    total = np.zeros(3)
    n = clean.shape[0]
    for i in range(0, n, batch_size):
        terms = elbo_loss(model, Tensor(clean[i:i + batch_size]), Tensor(noisy[i:i + batch_size]),
                          seed=[int(seed) if np.isscalar(seed) else 0, i])
        m = min(batch_size, n - i)
        total += m * np.array([terms.loss.item(), terms.recon, terms.kl])
    return tuple(total / n)


def _detached(model: VaeModel):
    """Forward-only view: same arrays, no gradient tracking."""
    twin = copy.copy(model)
    twin.params = {k: Tensor.__new__(Tensor) for k in model.params}
    for k, t in twin.params.items():
        src = model.params[k]
        t.data, t.grad, t.requires_grad = src.data, None, False
        t._parents, t._backward, t._op, t._consumed = (), None, "leaf", False
    return twin


def train(model: VaeModel, dataset, config: VaeConfig | None = None, log=None,
          eval_seed: int = 12345) -> TrainingReport:
    """Minibatch Adam on the negative beta-ELBO over the train split.

    Logs train (running average over the epoch's minibatches) and test
    losses per epoch, keeps the parameters with the best test loss and
    restores them at the end. ``log`` is an optional callable receiving each
    epoch record.
    """
    cfg = config or model.config
    train_pairs = dataset.pairs("train") if dataset.paired else []
    if not train_pairs:
        raise InsufficientData("training needs a paired dataset with a non-empty train split")
    test_pairs = dataset.pairs("test")
    xc, xn = _pair_arrays(train_pairs)
    tc, tn = _pair_arrays(test_pairs) if test_pairs else (None, None)
    opt = de.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    report = TrainingReport()
    best_state = model.state_dict()
    low_kl_run = 0
    n = xc.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            terms = elbo_loss(model, Tensor(xc[idx]), Tensor(xn[idx]), cfg.beta, cfg.mc_samples,
                              cfg.likelihood_sigma, seed=rng.integers(2**63))
            terms.loss.backward()
            opt.step()
            report.steps += 1
            sums += idx.size * np.array([terms.loss.item(), terms.recon, terms.kl])
        rec = {"epoch": epoch, "train_neg_elbo": sums[0] / n, "train_recon": sums[1] / n,
               "train_kl": sums[2] / n}
        if tc is not None:
            loss, recon, kl = evaluate_loss(_detached(model), tc, tn, seed=eval_seed)
            rec.update(test_neg_elbo=loss, test_recon=recon, test_kl=kl)
            if loss < report.best_test_loss:
                report.best_test_loss, report.best_epoch = loss, epoch
                best_state = model.state_dict()
        else:
            best_state, report.best_epoch = model.state_dict(), epoch
        low_kl_run = low_kl_run + 1 if rec["train_kl"] < 1e-3 else 0
        if low_kl_run >= 5:
            report.collapse_warning = True
        report.epochs.append(rec)
        if log is not None:
            log(rec)
    if cfg.epochs:
        model.load_state_dict(best_state)
    return report


def denoise(model: VaeModel, x_noisy):
    """Deterministic posterior-mean reconstruction, clamped to [0, 1].

    Accepts a Beat (returns a Beat) or an array of shape (370,) or (n, 370).
    """
    if isinstance(x_noisy, Beat):
        return x_noisy.with_samples(_detached(model).denoise_array(x_noisy.samples[None, :])[0])
    x = np.asarray(x_noisy, dtype=np.float64)
    out = _detached(model).denoise_array(np.atleast_2d(x))
    return out[0] if x.ndim == 1 else out


def save_checkpoint(model: VaeModel, path, extra: dict | None = None) -> None:
    """Write parameters and config to an uncompressed npz with a JSON header."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
        "params": list(model.params),
        "extra": extra or {},
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **{f"p/{k}": v.data for k, v in model.params.items()})
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint_meta(path) -> dict:
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            return json.loads(z["__meta__"].tobytes().decode())
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, EOFError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None


def load_checkpoint(path, expected: VaeConfig | None = None) -> VaeModel:
    """Restore a model; raises CheckpointError if ``expected`` differs from the stored config."""
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(z["__meta__"].tobytes().decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"unsupported checkpoint format {meta.get('format')!r}")
            state = {k: z[f"p/{k}"] for k in meta["params"]}
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, EOFError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    try:
        config = VaeConfig.from_dict(meta["config"])
    except (InvalidParams, TypeError) as exc:
        raise CheckpointError(f"checkpoint config invalid: {exc}") from None
    if config.config_hash() != meta.get("config_hash"):
        raise CheckpointError("checkpoint config hash does not match its stored config")
    if expected is not None and expected.config_hash() != config.config_hash():
        raise CheckpointError("checkpoint was trained with a different VaeConfig")
    model = VaeModel(config)
    model.load_state_dict(state)
    model.checkpoint_extra = meta.get("extra", {})
    return model
