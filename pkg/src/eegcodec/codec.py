"""Convolutional encoder/decoder around the residual vector quantizer.

Every convolution runs along time only, so a patch is processed without
seeing any other channel. Patches enter as ``(B, W)`` tensors; the encoder
emits ``(B, D, W / S**N)`` latents.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import List, NamedTuple

import torch
from torch import nn

from .errors import InvalidConfig, ShapeMismatch
from .quantizer import QuantizerConfig, ResidualVectorQuantizer


@dataclass
class CodecConfig:
    base_channels: int = 16
    stride: int = 2
    latent_dim: int = 64
    num_blocks: int = 6
    init_kernel: int = 3
    patch_seconds: float = 4.0
    sampling_rate_hz: float = 256.0
    max_channels: int = 256
    raw_bits_per_sample: int = 32
    num_quantizers: int = 4
    codebook_size: int = 256
    ema_decay: float = 0.99
    dead_code_threshold: float = 0.01

    @property
    def kernel(self) -> int:
        return 2 * self.stride

    @property
    def downsample(self) -> int:
        return self.stride ** self.num_blocks

    @property
    def patch_length(self) -> int:
        w = self.patch_seconds * self.sampling_rate_hz
        if abs(w - round(w)) > 1e-9:
            raise InvalidConfig(f"patch of {self.patch_seconds} s at {self.sampling_rate_hz} Hz is fractional")
        return int(round(w))

    @property
    def latent_frames(self) -> int:
        return self.patch_length // self.downsample

    def encoder_widths(self) -> List[int]:
        """Feature widths after each encoder block."""
        widths, c = [], self.base_channels
        for _ in range(self.num_blocks):
            c = min(2 * c, self.max_channels)
            widths.append(c)
        return widths

    def validate(self) -> "CodecConfig":
        ints = [self.base_channels, self.stride, self.latent_dim, self.num_blocks,
                self.init_kernel, self.max_channels, self.num_quantizers, self.codebook_size]
        if any(v < 1 for v in ints) or self.stride < 1:
            raise InvalidConfig("all sizes must be positive")
        if self.init_kernel % 2 == 0:
            raise InvalidConfig("init_kernel must be odd for same padding")
        if self.codebook_size < 2:
            raise InvalidConfig("codebook_size must be at least 2")
        W = self.patch_length
        if W <= 0 or W % self.downsample:
            raise InvalidConfig(f"downsample factor {self.downsample} does not divide patch length {W}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown codec config keys: {sorted(unknown)}")
        return cls(**d)

    def quantizer_config(self) -> QuantizerConfig:
        return QuantizerConfig(
            dim=self.latent_dim, num_quantizers=self.num_quantizers,
            codebook_size=self.codebook_size, decay=self.ema_decay,
            dead_code_threshold=self.dead_code_threshold,
        )


def compression_ratio(config: CodecConfig) -> float:
    """Nominal ratio of raw bits to code bits, ignoring container overhead."""
    return (config.raw_bits_per_sample * config.downsample) / (
        config.num_quantizers * math.log2(config.codebook_size)
    )


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        self.block = nn.Sequential(
            nn.ELU(),
            nn.Conv1d(channels, channels, kernel, padding=kernel // 2),
            nn.ELU(),
            nn.Conv1d(channels, channels, kernel, padding=kernel // 2),
        )

    def forward(self, x):
        return x + self.block(x)


class Encoder(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        S, K = config.stride, config.kernel
        layers = [nn.Conv1d(1, config.base_channels, config.init_kernel, padding=config.init_kernel // 2)]
        c_in = config.base_channels
        for c_out in config.encoder_widths():
            layers += [
                ResidualBlock(c_in),
                nn.ELU(),
                nn.Conv1d(c_in, c_out, K, stride=S, padding=(K - S) // 2 + (K - S) % 2),
            ]
            c_in = c_out
        layers += [nn.ELU(), nn.Conv1d(c_in, config.latent_dim, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        S, K = config.stride, config.kernel
        widths = [config.base_channels] + config.encoder_widths()
        layers = [nn.Conv1d(config.latent_dim, widths[-1], 3, padding=1)]
        for c_in, c_out in zip(widths[:0:-1], widths[-2::-1]):
            layers += [
                nn.ELU(),
                nn.ConvTranspose1d(c_in, c_out, K, stride=S, padding=(S + 1) // 2, output_padding=S % 2),
                ResidualBlock(c_out),
            ]
        layers += [nn.ELU(), nn.Conv1d(config.base_channels, 1, config.init_kernel, padding=config.init_kernel // 2)]
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


class CodecOutput(NamedTuple):
    reconstruction: torch.Tensor   # (B, W)
    codes: torch.Tensor            # (B, n_q, T_lat)
    commit_loss: torch.Tensor
    latents: torch.Tensor          # (B, D, T_lat) pre-quantization
    residuals: torch.Tensor        # per-stage quantizer inputs, for EMA updates


class Codec(nn.Module):
    """Encoder, residual quantizer and decoder as one module."""

    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config.validate()
        self.encoder = Encoder(config)
        self.quantizer = ResidualVectorQuantizer(config.quantizer_config())
        self.decoder = Decoder(config)

    def _check_patches(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 2:
            raise ShapeMismatch(f"expected (B, W) patches, got {tuple(x.shape)}")
        if x.shape[1] % self.config.downsample:
            raise ShapeMismatch(
                f"patch length {x.shape[1]} not divisible by downsample factor {self.config.downsample}"
            )
        return x

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        x = self._check_patches(x)
        return self.encoder(x[:, None, :])

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 3 or z.shape[1] != self.config.latent_dim:
            raise ShapeMismatch(f"expected (B, {self.config.latent_dim}, T) latents, got {tuple(z.shape)}")
        return self.decoder(z)[:, 0, :]

    def forward(self, x: torch.Tensor, codes=None) -> CodecOutput:
        z = self.encode(x)
        q = self.quantizer(z, codes=codes)
        return CodecOutput(self.decode(q.quantized), q.codes, q.commit_loss, z, q.residuals)

    @torch.no_grad()
    def compress(self, x: torch.Tensor) -> torch.Tensor:
        return self.quantizer(self.encode(x)).codes

    @torch.no_grad()
    def decompress(self, codes: torch.Tensor) -> torch.Tensor:
        return self.decode(self.quantizer.dequantize(codes))


def build_codec(config: CodecConfig, seed: int = 0) -> Codec:
    """Deterministically initialised codec for ``seed``."""
    config.validate()
    gen_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        codec = Codec(config)
    finally:
        torch.random.set_rng_state(gen_state)
    return codec.eval()
