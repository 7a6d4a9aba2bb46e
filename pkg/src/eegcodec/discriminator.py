"""Multi-scale STFT discriminator.

Each sub-discriminator looks at the complex STFT of the signal (real and
imaginary parts as two input channels, laid out ``(B, 2, frames, bins)``)
at one window length.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidConfig, TooShort


@dataclass
class DiscriminatorConfig:
    window_lengths: List[int] = field(default_factory=lambda: [2048, 1024, 512, 256, 128])
    base_channels: int = 64
    dilations: List[int] = field(default_factory=lambda: [1, 2, 4])
    leaky_slope: float = 0.2
    pad_short: bool = True

    def validate(self) -> "DiscriminatorConfig":
        w = list(self.window_lengths)
        if not w or any(a <= b for a, b in zip(w, w[1:])):
            raise InvalidConfig("window_lengths must be strictly decreasing")
        if min(w) < 32:
            raise InvalidConfig("window lengths must be at least 32")
        if self.base_channels < 1 or not self.dilations:
            raise InvalidConfig("invalid discriminator width or dilations")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


class DiscriminatorOutput(NamedTuple):
    logits: List[torch.Tensor]
    features: List[List[torch.Tensor]]


class STFTDiscriminator(nn.Module):
    def __init__(self, window: int, channels: int, dilations: Sequence[int], slope: float):
        super().__init__()
        self.window = window
        self.hop = window // 4
        self.register_buffer("hann", torch.hann_window(window), persistent=False)
        convs = [nn.Conv2d(2, channels, (3, 3), padding=(1, 1))]
        for d in dilations:
            convs.append(nn.Conv2d(channels, channels, (3, 3), stride=(1, 2), dilation=(d, 1), padding=(d, 1)))
        convs.append(nn.Conv2d(channels, channels, (3, 3), padding=(1, 1)))
        self.convs = nn.ModuleList(convs)
        self.post = nn.Conv2d(channels, 1, (3, 3), padding=(1, 1))
        self.slope = slope

    def forward(self, x: torch.Tensor):
        spec = torch.stft(x, self.window, hop_length=self.hop, window=self.hann.to(x.dtype),
                          center=True, pad_mode="reflect", return_complex=True)
        h = torch.stack([spec.real, spec.imag], dim=1).transpose(2, 3)
        features = []
        for conv in self.convs:
            h = F.leaky_relu(conv(h), self.slope)
            features.append(h)
        return self.post(h), features


class MultiScaleSTFTDiscriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config.validate()
        self.scales = nn.ModuleList(
            STFTDiscriminator(w, config.base_channels, config.dilations, config.leaky_slope)
            for w in config.window_lengths
        )

    @property
    def num_layers(self) -> int:
        """Feature maps per scale (every layer except the logit conv)."""
        return 2 + len(self.config.dilations)

    def _fit_length(self, x: torch.Tensor) -> torch.Tensor:
        longest = max(self.config.window_lengths)
        n = x.shape[-1]
        if n >= longest:
            return x
        if not self.config.pad_short:
            raise TooShort(f"signal of {n} samples is shorter than the {longest}-sample window")
        while x.shape[-1] < longest:
            need = longest - x.shape[-1]
            left = min(need // 2, x.shape[-1] - 1)
            right = min(need - left, x.shape[-1] - 1)
            x = F.pad(x[:, None, :], (left, right), mode="reflect")[:, 0, :]
        return x

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        x = self._fit_length(x)
        logits, features = [], []
        for d in self.scales:
            lg, fm = d(x)
            logits.append(lg)
            features.append(fm)
        return DiscriminatorOutput(logits, features)


def build_discriminator(config: DiscriminatorConfig, seed: int = 0) -> MultiScaleSTFTDiscriminator:
    state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        disc = MultiScaleSTFTDiscriminator(config)
    finally:
        torch.random.set_rng_state(state)
    return disc
