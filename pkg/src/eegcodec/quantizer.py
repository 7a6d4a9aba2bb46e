"""Residual vector quantizer with EMA codebooks.

Latents are ``(B, D, T)`` tensors; every time step is one ``D``-dimensional
frame vector. Stage ``s`` quantizes the residual left by stages ``< s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import torch
from torch import nn

from .errors import (
    AlreadyInitialized,
    DimMismatch,
    IndexOutOfRange,
    NotInitialized,
    TooFewVectors,
)


class QuantizerOutput(NamedTuple):
    quantized: torch.Tensor     # (B, D, T), straight-through when latents carry grad
    codes: torch.Tensor         # (B, n_q, T) int64
    commit_loss: torch.Tensor   # scalar
    residuals: torch.Tensor     # (n_q, B*T, D) detached stage inputs


def nearest_code(vectors: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Index of the closest codebook row for every vector; ties go to the lowest index."""
    dist = (
        vectors.pow(2).sum(1, keepdim=True)
        - 2 * vectors @ codebook.t()
        + codebook.pow(2).sum(1)[None, :]
    )
    # torch.argmin returns the first minimal index
    return dist.argmin(dim=1)


def kmeans(vectors: torch.Tensor, k: int, iters: int = 10,
           generator: Optional[torch.Generator] = None):
    """k-means++ seeding followed by Lloyd iterations.

    Returns ``(centroids, counts)``. Empty clusters keep their previous centroid.
    """
    n = vectors.shape[0]
    if n < k:
        raise TooFewVectors(f"k-means needs at least {k} vectors, got {n}")
    first = torch.randint(n, (1,), generator=generator).item()
    centroids = [vectors[first]]
    d2 = (vectors - vectors[first]).pow(2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = torch.randint(n, (1,), generator=generator).item()
        else:
            idx = torch.multinomial(d2 / total, 1, generator=generator).item()
        centroids.append(vectors[idx])
        d2 = torch.minimum(d2, (vectors - vectors[idx]).pow(2).sum(1))
    centroids = torch.stack(centroids)

    for _ in range(iters):
        assign = nearest_code(vectors, centroids)
        counts = torch.bincount(assign, minlength=k).to(vectors.dtype)
        sums = torch.zeros_like(centroids).index_add_(0, assign, vectors)
        filled = counts > 0
        centroids = torch.where(filled[:, None], sums / counts.clamp(min=1)[:, None], centroids)
    counts = torch.bincount(nearest_code(vectors, centroids), minlength=k).to(vectors.dtype)
    return centroids, counts


@dataclass
class QuantizerConfig:
    dim: int = 64
    num_quantizers: int = 4
    codebook_size: int = 256
    decay: float = 0.99
    epsilon: float = 1e-5
    dead_code_threshold: float = 0.01
    kmeans_iters: int = 10


class ResidualVectorQuantizer(nn.Module):
    """Greedy residual VQ with EMA-learned codebooks.

    Codebooks are buffers, not parameters: they never receive gradients and are
    only changed by :meth:`kmeans_init`, :meth:`ema_update` and
    :meth:`replace_dead_codes`.
    """

    def __init__(self, config: QuantizerConfig):
        super().__init__()
        if not 0 < config.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        self.config = config
        n_q, K, D = config.num_quantizers, config.codebook_size, config.dim
        self.register_buffer("codebooks", torch.zeros(n_q, K, D))
        self.register_buffer("ema_cluster_size", torch.zeros(n_q, K))
        self.register_buffer("ema_embed_sum", torch.zeros(n_q, K, D))
        self.register_buffer("initialized", torch.zeros((), dtype=torch.bool))

    @property
    def num_quantizers(self) -> int:
        return self.config.num_quantizers

    @property
    def codebook_size(self) -> int:
        return self.config.codebook_size

    @staticmethod
    def _frames(latents: torch.Tensor) -> torch.Tensor:
        return latents.transpose(1, 2).reshape(-1, latents.shape[1])

    def _check(self, latents: torch.Tensor):
        if not bool(self.initialized):
            raise NotInitialized("quantizer codebooks have not been initialized")
        if latents.ndim != 3 or latents.shape[1] != self.config.dim:
            raise DimMismatch(f"expected (B, {self.config.dim}, T) latents, got {tuple(latents.shape)}")

    @torch.no_grad()
    def kmeans_init(self, latents: torch.Tensor, generator: Optional[torch.Generator] = None):
        """Initialise every stage from k-means centroids of that stage's residuals."""
        if bool(self.initialized):
            raise AlreadyInitialized("codebooks are already initialized")
        if latents.ndim == 3:
            if latents.shape[1] != self.config.dim:
                raise DimMismatch("latent dimension does not match quantizer")
            residual = self._frames(latents)
        else:
            residual = latents.reshape(-1, self.config.dim)
        residual = residual.to(self.codebooks.dtype)
        K = self.config.codebook_size
        if residual.shape[0] < K:
            raise TooFewVectors(f"need >= {K} frame vectors, got {residual.shape[0]}")
        for s in range(self.config.num_quantizers):
            centroids, counts = kmeans(residual, K, self.config.kmeans_iters, generator)
            self.codebooks[s] = centroids
            self.ema_cluster_size[s] = counts
            self.ema_embed_sum[s] = centroids * counts[:, None]
            residual = residual - centroids[nearest_code(residual, centroids)]
        self.initialized.fill_(True)
        return self

    def forward(self, latents: torch.Tensor, codes: Optional[torch.Tensor] = None) -> QuantizerOutput:
        return self.quantize(latents, codes=codes)

    def quantize(self, latents: torch.Tensor, codes: Optional[torch.Tensor] = None) -> QuantizerOutput:
        """Quantize ``(B, D, T)`` latents.

        Passing ``codes`` freezes the assignment instead of searching; this is
        how the straight-through surrogate is checked against finite differences.
        """
        self._check(latents)
        B, D, T = latents.shape
        frames = self._frames(latents)
        residual = frames
        quantized = torch.zeros_like(frames)
        commit = frames.new_zeros(())
        indices: List[torch.Tensor] = []
        stage_inputs = []
        for s in range(self.config.num_quantizers):
            book = self.codebooks[s]
            if codes is None:
                idx = nearest_code(residual.detach(), book)
            else:
                idx = codes[:, s, :].reshape(-1)
            chosen = book[idx]
            stage_inputs.append(residual.detach())
            # gradient flows to the latent only; prototypes are EMA-updated
            commit = commit + (residual - chosen.detach()).pow(2).sum(1).mean()
            quantized = quantized + chosen
            residual = residual - chosen.detach()
            indices.append(idx)
        quantized = quantized.reshape(B, T, D).transpose(1, 2)
        if latents.requires_grad:
            # straight-through: identity on the backward pass
            quantized = latents + (quantized - latents).detach()
        grid = torch.stack(indices, 0).reshape(self.config.num_quantizers, B, T).transpose(0, 1)
        return QuantizerOutput(quantized, grid, commit, torch.stack(stage_inputs))

    def dequantize(self, codes: torch.Tensor) -> torch.Tensor:
        """Sum of addressed prototypes; ``codes`` is ``(B, n_q, T)``."""
        if not bool(self.initialized):
            raise NotInitialized("quantizer codebooks have not been initialized")
        codes = torch.as_tensor(codes, dtype=torch.long, device=self.codebooks.device)
        if codes.ndim != 3 or codes.shape[1] != self.config.num_quantizers:
            raise DimMismatch(f"expected (B, {self.config.num_quantizers}, T) codes")
        if codes.numel() and (codes.min() < 0 or codes.max() >= self.config.codebook_size):
            raise IndexOutOfRange("code index outside codebook")
        B, _, T = codes.shape
        # accumulate in stage order so the sum matches quantize() bitwise
        out = torch.zeros(B * T, self.config.dim, dtype=self.codebooks.dtype, device=codes.device)
        for s in range(self.config.num_quantizers):
            out = out + self.codebooks[s][codes[:, s, :].reshape(-1)]
        return out.reshape(B, T, -1).transpose(1, 2)

    @torch.no_grad()
    def ema_update(self, residuals: torch.Tensor, codes: torch.Tensor):
        """EMA codebook update from the stage inputs and assignments of one batch."""
        decay, eps = self.config.decay, self.config.epsilon
        K = self.config.codebook_size
        for s in range(self.config.num_quantizers):
            idx = codes[:, s, :].reshape(-1)
            x = residuals[s].to(self.codebooks.dtype)
            counts = torch.bincount(idx, minlength=K).to(x.dtype)
            sums = torch.zeros(K, x.shape[1], dtype=x.dtype, device=x.device).index_add_(0, idx, x)
            self.ema_cluster_size[s].mul_(decay).add_(counts, alpha=1 - decay)
            self.ema_embed_sum[s].mul_(decay).add_(sums, alpha=1 - decay)
            size = self.ema_cluster_size[s]
            n = size.sum()
            smoothed = (size + eps) / (n + K * eps) * n
            self.codebooks[s] = self.ema_embed_sum[s] / smoothed.clamp(min=eps)[:, None]
        return self

    @torch.no_grad()
    def replace_dead_codes(self, residuals: torch.Tensor, threshold: Optional[float] = None,
                           generator: Optional[torch.Generator] = None) -> int:
        """Overwrite entries whose EMA count fell below ``threshold`` with batch vectors.

        ``residuals`` holds each stage's input vectors ``(n_q, M, D)``. Returns
        the number of replaced entries.
        """
        threshold = self.config.dead_code_threshold if threshold is None else threshold
        replaced = 0
        for s in range(self.config.num_quantizers):
            dead = torch.nonzero(self.ema_cluster_size[s] < threshold).flatten()
            if dead.numel() == 0:
                continue
            pool = residuals[s].to(self.codebooks.dtype)
            pick = torch.randint(pool.shape[0], (dead.numel(),), generator=generator)
            self.codebooks[s, dead] = pool[pick]
            self.ema_cluster_size[s, dead] = 1.0
            self.ema_embed_sum[s, dead] = pool[pick]
            replaced += dead.numel()
        return replaced
