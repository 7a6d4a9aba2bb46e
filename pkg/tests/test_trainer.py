import math

import numpy as np
import pytest
import torch

from eegcodec.checkpoint import Checkpoint
from eegcodec.discriminator import DiscriminatorConfig
from eegcodec.errors import InvalidConfig, NonFiniteLoss, StepOutOfRange
from eegcodec.losses import LineLengthConfig, LossWeights, SpectralLossConfig
from eegcodec.trainer import Trainer, TrainConfig, as_patches, fit, one_cycle_lr, split_patches
from eegcodec.signal_io import Recording

from conftest import tiny_config


def sines(n=64, W=32, seed=0):
    r = np.random.default_rng(seed)
    t = np.arange(W) / W
    f = r.uniform(1, 4, size=(n, 1))
    ph = r.uniform(0, 2 * np.pi, size=(n, 1))
    return np.sin(2 * np.pi * f * t + ph).astype(np.float32)


def gan_config(**kw):
    base = dict(variant="gan", batch_size=8, discriminator=DiscriminatorConfig(window_lengths=[64, 32], base_channels=4),
                lr_generator=(1e-4, 1e-3), lr_discriminator=(1e-4, 1e-3),
                line_length=LineLengthConfig(window_T=16, stride_S=8),
                spectral=SpectralLossConfig(scale_exponents=(3, 4, 5)))
    base.update(kw)
    return TrainConfig(**base)


def params(module):
    return [p.detach().clone() for p in module.parameters()]


def test_one_cycle_shape():
    T, lo, hi = 100, 1e-5, 1e-4
    assert one_cycle_lr(0, T, lo, hi) == pytest.approx(lo)
    assert one_cycle_lr(30, T, lo, hi) == pytest.approx(hi)
    assert one_cycle_lr(100, T, lo, hi) == pytest.approx(lo)
    lrs = [one_cycle_lr(s, T, lo, hi) for s in range(T + 1)]
    assert all(a <= b + 1e-18 for a, b in zip(lrs[:30], lrs[1:31]))
    assert all(a >= b - 1e-18 for a, b in zip(lrs[30:], lrs[31:]))
    assert one_cycle_lr(15, T, lo, hi) == pytest.approx(lo + (hi - lo) / 2)
    with pytest.raises(StepOutOfRange):
        one_cycle_lr(101, T, lo, hi)


def test_train_config_defaults_and_roundtrip():
    base = TrainConfig()
    assert base.weights == LossWeights.base()
    assert base.lr_generator == (1e-5, 1e-4)
    gan = TrainConfig(variant="gan")
    assert gan.weights == LossWeights.gan()
    assert gan.lr_discriminator == (1e-7, 1e-6)
    assert gan.discriminator is not None
    assert TrainConfig.from_dict(gan.to_dict()) == gan
    with pytest.raises(InvalidConfig):
        TrainConfig(variant="vae")
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"epochz": 3})


def test_base_steps_reduce_loss():
    tr = Trainer(tiny_config(), TrainConfig(batch_size=16, lr_generator=(1e-3, 1e-3)), total_steps=60)
    batch = sines(16)
    tr.init_codebooks(torch.from_numpy(sines(64)))
    first = tr.train_step(batch)
    for _ in range(59):
        last = tr.train_step(batch)
    assert {"loss_t", "loss_q", "loss_total", "lr_g", "dead_codes"} <= set(first)
    assert last["loss_t"] < first["loss_t"]
    assert tr.step == 60


def test_gan_step_updates_both_networks():
    tr = Trainer(tiny_config(), gan_config(), total_steps=10)
    tr.init_codebooks(torch.from_numpy(sines(64)))
    g0, d0 = params(tr.codec), params(tr.disc)
    rec = tr.train_step(sines(8))
    for k in "tslfgqd":
        assert math.isfinite(rec[f"loss_{k}"])
    assert {"grad_norm_t", "grad_norm_s", "grad_norm_l", "grad_norm_f", "grad_norm_g"} <= set(rec)
    assert any(not torch.equal(a, b) for a, b in zip(g0, params(tr.codec)))
    assert any(not torch.equal(a, b) for a, b in zip(d0, params(tr.disc)))


@pytest.mark.parametrize("frozen", ["generator", "discriminator"])
def test_gan_step_freezing(frozen):
    cfg = gan_config(train_generator=frozen != "generator", train_discriminator=frozen != "discriminator")
    tr = Trainer(tiny_config(), cfg, total_steps=10)
    tr.init_codebooks(torch.from_numpy(sines(64)))
    net = tr.codec if frozen == "generator" else tr.disc
    before = params(net)
    tr.train_step(sines(8))
    after = params(net)
    assert all(torch.equal(a, b) for a, b in zip(before, after))


def test_nonfinite_batch_aborts_without_update():
    tr = Trainer(tiny_config(), TrainConfig(batch_size=4), total_steps=5)
    tr.init_codebooks(torch.from_numpy(sines(64)))
    before = params(tr.codec)
    bad = sines(4)
    bad[0, 3] = np.inf
    with pytest.raises(NonFiniteLoss) as info:
        tr.train_step(bad)
    assert "loss_total" in info.value.record
    assert all(torch.equal(a, b) for a, b in zip(before, params(tr.codec)))


def test_as_patches_whole_windows_only():
    rec = Recording(np.zeros((2, 100), dtype=np.float32), 32.0)
    assert as_patches(rec, tiny_config()).shape == (6, 32)
    short = Recording(np.ones((1, 20), dtype=np.float32), 32.0)
    assert as_patches(short, tiny_config()).shape == (1, 32)


def test_split_is_seeded_partition():
    x = np.arange(50)[:, None].astype(np.float32)
    a_tr, a_va = split_patches(x, 0.8, 3)
    b_tr, _ = split_patches(x, 0.8, 3)
    assert len(a_tr) == 40 and len(a_va) == 10
    assert np.array_equal(a_tr, b_tr)
    assert sorted(np.concatenate([a_tr, a_va])[:, 0].tolist()) == list(range(50))


def test_fit_zero_epochs_gives_initial_checkpoint():
    ckpt = fit(sines(40), tiny_config(), TrainConfig(epochs=0, batch_size=8))
    assert isinstance(ckpt, Checkpoint)
    assert ckpt.step == 0 and len(ckpt.history) == 1
    assert bool(ckpt.codec_state["quantizer.initialized"])


def test_fit_is_deterministic_and_logs(tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=8, seed=5)
    a = fit(sines(40), tiny_config(), cfg, log_path=tmp_path / "a.jsonl")
    b = fit(sines(40), tiny_config(), cfg, log_path=tmp_path / "b.jsonl")
    assert a.to_bytes() == b.to_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    assert sum('"kind": "validation"' in ln for ln in lines) == 3
    assert [h["epoch"] for h in a.history] == [0, 1, 2]


def test_fit_gan_variant_runs():
    ckpt = fit(sines(40), tiny_config(), gan_config(epochs=1))
    assert ckpt.disc_state is not None and ckpt.balancer_state is not None
