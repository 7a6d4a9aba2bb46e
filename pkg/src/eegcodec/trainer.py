"""Joint training of encoder, quantizer, decoder and optional discriminator."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import torch

from .checkpoint import Checkpoint, state_to_numpy
from .codec import CodecConfig, build_codec
from .discriminator import DiscriminatorConfig, build_discriminator
from .errors import EmptyDataset, InvalidConfig, NonFiniteLoss, StepOutOfRange
from .losses import (
    BalancerState,
    LineLengthConfig,
    LossWeights,
    SpectralLossConfig,
    balanced_gradient_step,
    disc_adv_loss,
    feature_loss,
    gen_adv_loss,
    line_length_loss,
    spectral_loss,
    time_loss,
)
from .metrics import patch_prds
from .signal_io import Recording, patch_array, window_length

logger = logging.getLogger(__name__)


def one_cycle_lr(step: int, total_steps: int, lr_min: float, lr_max: float,
                 warmup_fraction: float = 0.3) -> float:
    """Cosine ramp from ``lr_min`` up to ``lr_max`` and back down again."""
    if not 0 <= step <= total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_min
    peak = warmup_fraction * total_steps
    if step <= peak:
        frac = step / peak if peak > 0 else 1.0
        return lr_min + (lr_max - lr_min) * (1 - math.cos(math.pi * frac)) / 2
    frac = (step - peak) / (total_steps - peak)
    return lr_min + (lr_max - lr_min) * (1 + math.cos(math.pi * frac)) / 2


@dataclass
class TrainConfig:
    variant: str = "base"
    weights: Optional[LossWeights] = None
    lr_generator: Tuple[float, float] = (1e-5, 1e-4)
    lr_discriminator: Tuple[float, float] = (1e-7, 1e-6)
    warmup_fraction: float = 0.3
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    train_split_fraction: float = 0.8
    grad_clip: Optional[float] = 1.0
    balancer: bool = True
    balancer_decay: float = 0.999
    spectral: SpectralLossConfig = field(default_factory=SpectralLossConfig)
    line_length: LineLengthConfig = field(default_factory=LineLengthConfig)
    discriminator: Optional[DiscriminatorConfig] = None
    train_generator: bool = True
    train_discriminator: bool = True

    def __post_init__(self):
        if self.variant not in ("base", "gan"):
            raise InvalidConfig(f"variant must be 'base' or 'gan', got {self.variant!r}")
        if self.weights is None:
            self.weights = LossWeights.gan() if self.variant == "gan" else LossWeights.base()
        if self.variant == "gan" and self.discriminator is None:
            self.discriminator = DiscriminatorConfig()
        for lo, hi in (self.lr_generator, self.lr_discriminator):
            if not 0 < lo <= hi:
                raise InvalidConfig("learning-rate ranges must be positive with min <= max")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidConfig("batch_size must be positive and epochs nonnegative")
        if not 0 < self.train_split_fraction <= 1:
            raise InvalidConfig("train_split_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_generator"] = list(self.lr_generator)
        d["lr_discriminator"] = list(self.lr_discriminator)
        d["spectral"]["scale_exponents"] = list(self.spectral.scale_exponents)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("weights") is not None and not isinstance(d["weights"], LossWeights):
            d["weights"] = LossWeights(**d["weights"])
        if isinstance(d.get("spectral"), dict):
            sp = dict(d["spectral"])
            if "scale_exponents" in sp:
                sp["scale_exponents"] = tuple(sp["scale_exponents"])
            d["spectral"] = SpectralLossConfig(**sp)
        if isinstance(d.get("line_length"), dict):
            d["line_length"] = LineLengthConfig(**d["line_length"])
        if isinstance(d.get("discriminator"), dict):
            d["discriminator"] = DiscriminatorConfig(**d["discriminator"])
        for key in ("lr_generator", "lr_discriminator"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc


def _finite(t: torch.Tensor) -> bool:
    return bool(torch.isfinite(t).all())


class Trainer:
    """Owns the model state and performs single optimisation steps.

    ``total_steps`` drives the one-cycle schedule; steps beyond it keep the
    minimum learning rate.
    """

    def __init__(self, codec_config: CodecConfig, config: TrainConfig, total_steps: int = 1000):
        self.config = config
        self.codec_config = codec_config
        self.total_steps = max(int(total_steps), 0)
        torch.manual_seed(config.seed)
        self.codec = build_codec(codec_config, seed=config.seed)
        self.disc = None
        self.opt_d = None
        if config.variant == "gan":
            self.disc = build_discriminator(config.discriminator, seed=config.seed + 1)
            self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=config.lr_discriminator[0])
        self.opt_g = torch.optim.Adam(self.codec.parameters(), lr=config.lr_generator[0])
        self.balancer = BalancerState(decay=config.balancer_decay)
        self.rng = torch.Generator().manual_seed(config.seed)
        self.step = 0

    # -- helpers ------------------------------------------------------------

    def _lr(self, bounds) -> float:
        step = min(self.step, self.total_steps)
        return one_cycle_lr(step, self.total_steps, bounds[0], bounds[1], self.config.warmup_fraction)

    @torch.no_grad()
    def init_codebooks(self, patches: torch.Tensor) -> None:
        self.codec.eval()
        z = torch.cat([self.codec.encode(chunk) for chunk in patches.split(256)])
        self.codec.quantizer.kmeans_init(z, generator=self.rng)

    def _apply_update(self, optimizer, params, lr: float, record: dict) -> None:
        params = [p for p in params if p.grad is not None]
        for p in params:
            if not _finite(p.grad):
                raise NonFiniteLoss("non-finite gradient; update skipped", record)
        if self.config.grad_clip:
            torch.nn.utils.clip_grad_norm_(params, self.config.grad_clip)
        for group in optimizer.param_groups:
            group["lr"] = lr
        optimizer.step()

    def _codebook_update(self, out) -> int:
        q = self.codec.quantizer
        q.ema_update(out.residuals, out.codes)
        return q.replace_dead_codes(out.residuals, generator=self.rng)

    # -- steps --------------------------------------------------------------

    def train_step(self, batch) -> dict:
        if self.config.variant == "gan":
            return self.train_step_gan(batch)
        return self.train_step_base(batch)

    def train_step_base(self, batch) -> dict:
        x = torch.as_tensor(batch, dtype=torch.float32)
        if not bool(self.codec.quantizer.initialized):
            self.init_codebooks(x)
        w = self.config.weights
        lr = self._lr(self.config.lr_generator)
        self.codec.train()
        out = self.codec(x)
        lt = time_loss(x, out.reconstruction)
        lq = out.commit_loss
        loss = w.t * lt + w.q * lq
        record = {"step": self.step + 1, "lr_g": lr, "loss_t": lt.item(), "loss_q": lq.item(),
                  "loss_total": loss.item()}
        if not _finite(loss):
            raise NonFiniteLoss("non-finite generator loss", record)
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        self._apply_update(self.opt_g, self.codec.parameters(), lr, record)
        record["dead_codes"] = self._codebook_update(out)
        self.step += 1
        return record

    def train_step_gan(self, batch) -> dict:
        if self.disc is None:
            raise InvalidConfig("GAN step needs a discriminator")
        x = torch.as_tensor(batch, dtype=torch.float32)
        if not bool(self.codec.quantizer.initialized):
            self.init_codebooks(x)
        cfg = self.config
        w = cfg.weights
        lr_g = self._lr(cfg.lr_generator)
        lr_d = self._lr(cfg.lr_discriminator)
        self.codec.train(cfg.train_generator)
        with torch.set_grad_enabled(cfg.train_generator):
            out = self.codec(x)
        x_hat = out.reconstruction
        record = {"step": self.step + 1, "lr_g": lr_g, "lr_d": lr_d}

        # discriminator update on the current reconstruction
        real = self.disc(x)
        fake = self.disc(x_hat.detach())
        ld = disc_adv_loss(real.logits, fake.logits)
        record["loss_d"] = ld.item()
        if not _finite(ld):
            raise NonFiniteLoss("non-finite discriminator loss", record)
        if cfg.train_discriminator:
            self.opt_d.zero_grad(set_to_none=True)
            ld.backward()
            self._apply_update(self.opt_d, self.disc.parameters(), lr_d, record)

        # generator update through the balancer
        with torch.no_grad():
            real = self.disc(x)
        if cfg.train_generator:
            fake = self.disc(x_hat)
        else:
            with torch.no_grad():
                fake = self.disc(x_hat)
        terms = {
            "t": time_loss(x, x_hat),
            "s": spectral_loss(x, x_hat, cfg.spectral),
            "l": line_length_loss(x, x_hat, cfg.line_length),
            "f": feature_loss(real.features, fake.features),
            "g": gen_adv_loss(fake.logits),
        }
        lq = out.commit_loss
        for k, v in terms.items():
            record[f"loss_{k}"] = v.item()
        record["loss_q"] = lq.item()
        weights = w.as_dict()
        record["loss_total"] = float(sum(weights[k] * record[f"loss_{k}"] for k in "tslfgq"))
        if not all(math.isfinite(record[f"loss_{k}"]) for k in "tslfgq"):
            raise NonFiniteLoss("non-finite generator loss", record)
        if cfg.train_generator:
            grad, self.balancer, norms = balanced_gradient_step(
                terms, x_hat, weights, self.balancer, enabled=cfg.balancer)
            record.update({f"grad_norm_{k}": v for k, v in norms.items()})
            self.opt_g.zero_grad(set_to_none=True)
            torch.autograd.backward([x_hat, w.q * lq], [grad, None])
            self._apply_update(self.opt_g, self.codec.parameters(), lr_g, record)
            record["dead_codes"] = self._codebook_update(out)
        self.step += 1
        return record

    # -- evaluation and snapshots ------------------------------------------

    @torch.no_grad()
    def reconstruct(self, patches: np.ndarray, chunk: int = 256) -> np.ndarray:
        self.codec.eval()
        x = torch.as_tensor(patches, dtype=torch.float32)
        outs = [self.codec.decompress(self.codec.compress(c)) for c in x.split(chunk)]
        return torch.cat(outs).numpy()

    def validation_prd(self, patches: np.ndarray) -> float:
        prds = patch_prds(patches, self.reconstruct(patches))
        prds = prds[~np.isnan(prds)]
        return float(np.median(prds)) if prds.size else float("nan")

    def checkpoint(self, history=None, meta=None) -> Checkpoint:
        optim = {"generator": copy.deepcopy(self.opt_g.state_dict())}
        if self.opt_d is not None:
            optim["discriminator"] = copy.deepcopy(self.opt_d.state_dict())
        return Checkpoint(
            codec_config=self.codec_config,
            codec_state=state_to_numpy(self.codec),
            disc_config=self.config.discriminator if self.disc is not None else None,
            disc_state=state_to_numpy(self.disc) if self.disc is not None else None,
            optimizer_state=optim,
            balancer_state=self.balancer.to_dict() if self.config.variant == "gan" else None,
            train_config=self.config.to_dict(),
            step=self.step,
            history=list(history or []),
            meta=dict(meta or {}),
        )


def as_patches(dataset, codec_config: CodecConfig) -> np.ndarray:
    """Turn recordings (or a ready ``(n, W)`` array) into training patches.

    Only whole windows are used; a recording shorter than one window
    contributes its zero-padded patch.
    """
    if isinstance(dataset, np.ndarray):
        arr = np.asarray(dataset, dtype=np.float32)
        if arr.ndim != 2:
            raise EmptyDataset("patch array must be 2-D (n, W)")
        return arr
    if isinstance(dataset, Recording):
        dataset = [dataset]
    chunks = []
    for rec in dataset:
        W = window_length(codec_config.patch_seconds, rec.sampling_rate_hz)
        arr, tail = patch_array(rec.samples.astype(np.float32), W)
        if tail < W and arr.shape[1] > 1:
            arr = arr[:, :-1]
        chunks.append(arr.reshape(-1, W))
    if not chunks:
        return np.zeros((0, codec_config.patch_length), dtype=np.float32)
    widths = {c.shape[1] for c in chunks}
    if len(widths) > 1:
        raise InvalidConfig("recordings yield patches of different lengths; resample first")
    return np.concatenate(chunks)


def split_patches(patches: np.ndarray, fraction: float, seed: int):
    n = len(patches)
    order = np.random.default_rng(seed).permutation(n)
    n_train = n if fraction >= 1 else min(max(1, int(round(fraction * n))), max(n - 1, 1))
    return patches[order[:n_train]], patches[order[n_train:]]


def fit(dataset, codec_config: CodecConfig, config: TrainConfig,
        log_path: Union[str, Path, None] = None) -> Checkpoint:
    """Train on an 80/20 split and return the best-validation checkpoint."""
    patches = as_patches(dataset, codec_config)
    if len(patches) == 0:
        raise EmptyDataset("dataset yields no patches")
    train, val = split_patches(patches, config.train_split_fraction, config.seed)
    if len(val) == 0:
        val = train
    steps_per_epoch = -(-len(train) // config.batch_size)
    trainer = Trainer(codec_config, config, total_steps=config.epochs * steps_per_epoch)
    order_rng = np.random.default_rng(config.seed + 1)

    need = codec_config.codebook_size
    frames = codec_config.latent_frames
    n_init = min(len(train), max(config.batch_size, -(-need // frames)))
    trainer.init_codebooks(torch.from_numpy(train[order_rng.permutation(len(train))[:n_init]]))

    log = open(log_path, "a") if log_path else None

    def emit(rec):
        if log:
            log.write(json.dumps(rec, sort_keys=True) + "\n")
            log.flush()

    try:
        history = []
        prd0 = trainer.validation_prd(val)
        history.append({"epoch": 0, "step": 0, "val_prd": prd0})
        emit({"kind": "validation", **history[-1]})
        best = trainer.checkpoint(history, {"best_epoch": 0, "val_prd": prd0})
        best_prd = prd0
        for epoch in range(1, config.epochs + 1):
            order = order_rng.permutation(len(train))
            for start in range(0, len(train), config.batch_size):
                rec = trainer.train_step(train[order[start:start + config.batch_size]])
                emit({"kind": "step", "epoch": epoch, **rec})
            prd = trainer.validation_prd(val)
            history.append({"epoch": epoch, "step": trainer.step, "val_prd": prd})
            emit({"kind": "validation", **history[-1]})
            logger.info("epoch %d  step %d  val PRD %.3f", epoch, trainer.step, prd)
            if prd < best_prd:
                best_prd = prd
                best = trainer.checkpoint(history, {"best_epoch": epoch, "val_prd": prd})
        best.history = history
        return best
    finally:
        if log:
            log.close()
