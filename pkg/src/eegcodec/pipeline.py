"""Recording-level compression: patches -> codes -> container and back."""

from __future__ import annotations

from typing import Union

import numpy as np
import torch

from .bitstream import ContainerHeader, deserialize, serialize
from .checkpoint import Checkpoint
from .codec import Codec, compression_ratio
from .errors import GeometryMismatch, ModelMismatch, NonIntegerWindow
from .signal_io import Modality, Recording, patch_array, unpatch_array, window_length

CHUNK = 256


class LoadedModel:
    """A checkpoint with its codec built once, in evaluation mode."""

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.codec: Codec = checkpoint.build_codec()
        self.model_hash = checkpoint.content_hash
        self.config = checkpoint.codec_config

    @property
    def nominal_cr(self) -> float:
        return compression_ratio(self.config)


ModelLike = Union[Checkpoint, LoadedModel]


def as_model(model: ModelLike) -> LoadedModel:
    return model if isinstance(model, LoadedModel) else LoadedModel(model)


def patch_length_for(model: LoadedModel, sampling_rate_hz: float) -> int:
    cfg = model.config
    try:
        W = window_length(cfg.patch_seconds, sampling_rate_hz)
    except NonIntegerWindow as exc:
        raise GeometryMismatch(str(exc)) from exc
    if cfg.stride != 2:
        raise GeometryMismatch("containers describe geometry as 2**N and need stride 2")
    if W % cfg.downsample:
        raise GeometryMismatch(f"patch length {W} at {sampling_rate_hz} Hz is not divisible by {cfg.downsample}")
    return W


@torch.no_grad()
def encode_patches(model: LoadedModel, patches: np.ndarray) -> np.ndarray:
    """``(n, W)`` float patches to ``(n, n_q, T_lat)`` integer codes."""
    x = torch.as_tensor(np.ascontiguousarray(patches, dtype=np.float32))
    return torch.cat([model.codec.compress(c) for c in x.split(CHUNK)]).numpy()


@torch.no_grad()
def decode_codes(model: LoadedModel, codes: np.ndarray) -> np.ndarray:
    c = torch.as_tensor(np.asarray(codes, dtype=np.int64))
    return torch.cat([model.codec.decompress(chunk) for chunk in c.split(CHUNK)]).numpy()


def compress_recording(rec: Recording, model: ModelLike) -> bytes:
    model = as_model(model)
    cfg = model.config
    W = patch_length_for(model, rec.sampling_rate_hz)
    patches, tail = patch_array(rec.samples.astype(np.float32), W)
    C, P, _ = patches.shape
    codes = encode_patches(model, patches.reshape(C * P, W))
    header = ContainerHeader(
        model_hash=model.model_hash, sampling_rate_hz=float(rec.sampling_rate_hz),
        C=C, T=rec.n_samples, patch_W=W, N=cfg.num_blocks, n_q=cfg.num_quantizers,
        K_cb=cfg.codebook_size, raw_bits_per_sample=cfg.raw_bits_per_sample,
        modality=int(rec.modality), true_tail_length=tail,
    )
    return serialize(codes.reshape(C, P, cfg.num_quantizers, -1), header)


def decompress_bytes(data: bytes, model: ModelLike, force: bool = False) -> Recording:
    """Decode a container. A model-hash mismatch raises unless ``force`` is set."""
    model = as_model(model)
    header, grids = deserialize(data)
    if header.model_hash != model.model_hash and not force:
        raise ModelMismatch("container was written by a different model (use force to override)")
    cfg = model.config
    if (header.n_q, header.K_cb) != (cfg.num_quantizers, cfg.codebook_size) or header.N != cfg.num_blocks:
        raise GeometryMismatch("container geometry does not match the decoding model")
    C, P, n_q, T_lat = grids.shape
    patches = decode_codes(model, grids.reshape(C * P, n_q, T_lat)).reshape(C, P, header.patch_W)
    return Recording(unpatch_array(patches, header.T), header.sampling_rate_hz, Modality(header.modality))


def reconstruct_recording(rec: Recording, model: ModelLike) -> Recording:
    """Full compress -> container -> decompress round trip; metadata is carried over."""
    model = as_model(model)
    out = decompress_bytes(compress_recording(rec, model), model)
    return Recording(out.samples, rec.sampling_rate_hz, rec.modality, annotations=list(rec.annotations),
                     channel_names=rec.channel_names, electrode_groups=rec.electrode_groups)
