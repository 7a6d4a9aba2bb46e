"""Training objectives and the gradient-norm loss balancer.

All reconstruction losses take ``(B, W)`` tensors (any shape works for the
time loss) and return scalar means so that magnitudes do not depend on the
batch size.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import torch

from .errors import (
    EmptyScaleSet,
    NestingMismatch,
    NonFiniteGradient,
    NonFiniteTerm,
    ScaleMismatch,
    ShapeMismatch,
    TooShort,
)

LOSS_TERMS = ("t", "s", "l", "f", "g", "q")


@dataclass
class LossWeights:
    t: float = 1.0
    s: float = 0.0
    l: float = 0.0
    f: float = 0.0
    g: float = 0.0
    q: float = 1.0

    def __post_init__(self):
        vals = [getattr(self, k) for k in LOSS_TERMS]
        if any(v < 0 for v in vals) or not any(v > 0 for v in vals):
            raise ValueError("loss weights must be nonnegative with at least one positive")

    @classmethod
    def base(cls) -> "LossWeights":
        return cls(t=1.0, q=1.0)

    @classmethod
    def gan(cls) -> "LossWeights":
        return cls(t=0.1, s=1.0, l=0.1, f=3.0, g=3.0, q=1.0)

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class SpectralLossConfig:
    scale_exponents: Tuple[int, ...] = tuple(range(5, 12))
    alpha: float = 1.0


@dataclass
class LineLengthConfig:
    window_T: int = 128
    stride_S: int = 64
    eps: float = 1e-8


def _same_shape(x, x_hat):
    if x.shape != x_hat.shape:
        raise ShapeMismatch(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")


def time_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    _same_shape(x, x_hat)
    return (x - x_hat).abs().mean()


def magnitude_spectrogram(x: torch.Tensor, n_fft: int, hop: int) -> torch.Tensor:
    window = torch.hann_window(n_fft, dtype=x.dtype, device=x.device)
    spec = torch.stft(x, n_fft, hop_length=hop, window=window, center=True,
                      pad_mode="reflect", return_complex=True)
    return spec.abs()


def usable_scales(length: int, exponents: Sequence[int]) -> List[int]:
    # reflect padding by n_fft // 2 must stay inside the signal
    return [i for i in exponents if (2 ** i) // 2 < length]


def spectral_loss(x: torch.Tensor, x_hat: torch.Tensor,
                  config: Optional[SpectralLossConfig] = None) -> torch.Tensor:
    config = config or SpectralLossConfig()
    _same_shape(x, x_hat)
    if x.ndim == 1:
        x, x_hat = x[None], x_hat[None]
    scales = usable_scales(x.shape[-1], config.scale_exponents)
    skipped = sorted(set(config.scale_exponents) - set(scales))
    if skipped:
        warnings.warn(f"spectral loss skips window exponents {skipped} (signal of {x.shape[-1]} samples)",
                      stacklevel=2)
    if not scales:
        raise EmptyScaleSet("no spectrogram scale fits the signal")
    total = x.new_zeros(x.shape[0])
    for i in scales:
        n_fft, hop = 2 ** i, 2 ** (i - 2)
        diff = magnitude_spectrogram(x, n_fft, hop) - magnitude_spectrogram(x_hat, n_fft, hop)
        diff = diff.flatten(1)
        l1 = diff.abs().sum(1)
        l2 = torch.linalg.vector_norm(diff, dim=1) if config.alpha else 0.0
        total = total + (l1 + config.alpha * l2) / diff.shape[1]
    return total.mean()


def line_length_windows(length: int, config: LineLengthConfig) -> int:
    """Number of windows of ``window_T`` first differences with stride ``stride_S``."""
    n_diff = length - 1
    if n_diff < config.window_T:
        return 0
    return (n_diff - config.window_T) // config.stride_S + 1


def line_length_loss(x: torch.Tensor, x_hat: torch.Tensor,
                     config: Optional[LineLengthConfig] = None) -> torch.Tensor:
    """Relative line-length mismatch averaged over all window terms."""
    config = config or LineLengthConfig()
    _same_shape(x, x_hat)
    if x.ndim == 1:
        x, x_hat = x[None], x_hat[None]
    n_win = line_length_windows(x.shape[-1], config)
    if n_win == 0:
        raise TooShort(f"line-length loss needs more than {config.window_T} samples")
    dx = (x[..., 1:] - x[..., :-1]).abs()
    dxh = (x_hat[..., 1:] - x_hat[..., :-1]).abs()
    rel = (dx - dxh).abs() / (dx + config.eps)
    windows = rel.unfold(-1, config.window_T, config.stride_S)[..., :n_win, :]
    return windows.mean()


def gen_adv_loss(fake_logits: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(fake_logits) == 0:
        raise ScaleMismatch("no discriminator logits given")
    return sum(torch.relu(1 - d).mean() for d in fake_logits)


def disc_adv_loss(real_logits: Sequence[torch.Tensor], fake_logits: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(real_logits) != len(fake_logits) or not real_logits:
        raise ScaleMismatch(f"{len(real_logits)} real vs {len(fake_logits)} fake scales")
    return sum(torch.relu(1 - r).mean() + torch.relu(1 + f).mean()
               for r, f in zip(real_logits, fake_logits))


def feature_loss(features_real: Sequence[Sequence[torch.Tensor]],
                 features_fake: Sequence[Sequence[torch.Tensor]]) -> torch.Tensor:
    if len(features_real) != len(features_fake):
        raise NestingMismatch("scale counts differ")
    total = None
    for k, (real_k, fake_k) in enumerate(zip(features_real, features_fake)):
        if len(real_k) != len(fake_k):
            raise NestingMismatch(f"layer counts differ at scale {k}")
        for l, (r, f) in enumerate(zip(real_k, fake_k)):
            if r.shape != f.shape:
                raise NestingMismatch(f"feature shapes differ at scale {k} layer {l}")
            denom = r.abs().sum()
            if denom == 0:
                warnings.warn(f"zero reference features at scale {k} layer {l}; term skipped", stacklevel=2)
                term = (r - f).abs().sum() * 0.0
            else:
                term = (r - f).abs().sum() / denom
            total = term if total is None else total + term
    if total is None:
        raise NestingMismatch("empty feature set")
    return total


def total_generator_loss(terms: Mapping[str, torch.Tensor], weights: LossWeights):
    """Weighted sum of the generator terms; the discriminator loss is never included."""
    total = 0.0
    w = weights.as_dict()
    for name, value in terms.items():
        if name not in w:
            continue
        v = value if torch.is_tensor(value) else torch.tensor(float(value))
        if not torch.isfinite(v).all():
            raise NonFiniteTerm(f"loss term {name} is not finite")
        if w[name]:
            total = total + w[name] * value
    return total


@dataclass
class BalancerState:
    decay: float = 0.999
    reference_norm: float = 1.0
    norm_sums: Dict[str, float] = field(default_factory=dict)
    weight_totals: Dict[str, float] = field(default_factory=dict)

    def update(self, name: str, norm: float) -> float:
        """Bias-corrected EMA of a gradient norm; the first value is returned exactly."""
        s = norm + self.decay * self.norm_sums.get(name, 0.0)
        n = 1.0 + self.decay * self.weight_totals.get(name, 0.0)
        self.norm_sums[name] = s
        self.weight_totals[name] = n
        return s / n

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BalancerState":
        return cls(**d)


def balanced_gradient_step(losses: Mapping[str, torch.Tensor], x_hat: torch.Tensor,
                           weights: Mapping[str, float], state: Optional[BalancerState] = None,
                           enabled: bool = True):
    """Combine per-loss gradients at the decoder output.

    Each loss gradient w.r.t. ``x_hat`` is rescaled to norm
    ``R * w_i / sum(w)`` using an EMA of its raw norm. With ``enabled=False``
    the plain weighted sum of gradients is returned. Returns
    ``(gradient, state, raw_norms)``.
    """
    state = state or BalancerState()
    active = {k: v for k, v in losses.items() if weights.get(k, 0.0) > 0}
    if not active:
        return torch.zeros_like(x_hat), state, {}
    grads = {}
    for name, loss in active.items():
        (g,) = torch.autograd.grad(loss, x_hat, retain_graph=True, allow_unused=True)
        g = torch.zeros_like(x_hat) if g is None else g
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"gradient of loss {name} is not finite")
        grads[name] = g
    norms = {k: float(g.norm()) for k, g in grads.items()}
    out = torch.zeros_like(x_hat)
    if not enabled:
        for name, g in grads.items():
            out = out + weights[name] * g
        return out, state, norms
    total_w = sum(weights[k] for k in grads)
    for name, g in grads.items():
        avg = state.update(name, norms[name])
        scale = state.reference_norm * weights[name] / total_w / max(avg, 1e-12)
        out = out + scale * g
    return out, state, norms
