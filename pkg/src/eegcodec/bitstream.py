"""Compressed container format (``BCC1``).

Layout, little-endian::

    header   (see ``ContainerHeader``, 72 bytes)
    payload  C * P patches, each n_q * T_lat indices of ceil(log2 K_cb) bits,
             MSB-first, ordered (stage, frame) and zero-padded to a byte
    crc32    u32 over header + payload

``P = ceil(T / W)``, ``T_lat = W / 2**N``. The total length is a function of
the header alone, so concatenated containers can be split without an index.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import asdict, dataclass
from typing import Iterator, Tuple

import numpy as np

from .errors import (
    BadMagic,
    ChecksumMismatch,
    ContainerError,
    GeometryMismatch,
    IndexOverflow,
    TruncatedPayload,
    VersionUnsupported,
)

MAGIC = b"BCC1"
VERSION = 1
_HEADER = struct.Struct("<4sH32sdIQIBBHBBI")
HEADER_SIZE = _HEADER.size
CRC_SIZE = 4


@dataclass(frozen=True)
class ContainerHeader:
    model_hash: bytes
    sampling_rate_hz: float
    C: int
    T: int
    patch_W: int
    N: int
    n_q: int
    K_cb: int
    raw_bits_per_sample: int = 32
    modality: int = 0
    true_tail_length: int = -1
    version: int = VERSION

    def __post_init__(self):
        if self.true_tail_length < 0 and self.patch_W > 0 and self.T > 0:
            object.__setattr__(self, "true_tail_length", self.T - (self.num_patches - 1) * self.patch_W)

    @property
    def bits_per_index(self) -> int:
        return max(1, math.ceil(math.log2(self.K_cb)))

    @property
    def latent_frames(self) -> int:
        return self.patch_W >> self.N

    @property
    def num_patches(self) -> int:
        return -(-self.T // self.patch_W)

    @property
    def patch_bytes(self) -> int:
        return -(-(self.n_q * self.latent_frames * self.bits_per_index) // 8)

    @property
    def payload_bytes(self) -> int:
        return self.C * self.num_patches * self.patch_bytes

    @property
    def container_bytes(self) -> int:
        return HEADER_SIZE + self.payload_bytes + CRC_SIZE

    @property
    def grid_shape(self) -> Tuple[int, int, int, int]:
        return (self.C, self.num_patches, self.n_q, self.latent_frames)

    def validate(self) -> "ContainerHeader":
        if len(self.model_hash) != 32:
            raise ContainerError("model_hash must be 32 bytes")
        if not (1 <= self.K_cb <= 65535):
            raise ContainerError(f"K_cb {self.K_cb} outside [1, 65535]")
        if self.C < 1 or self.T < 1 or self.patch_W < 1 or self.n_q < 1:
            raise ContainerError("C, T, patch_W and n_q must be positive")
        if self.N > 31 or self.patch_W % (1 << self.N) or self.latent_frames < 1:
            raise ContainerError(f"2**{self.N} does not divide patch_W={self.patch_W}")
        if not (math.isfinite(self.sampling_rate_hz) and self.sampling_rate_hz > 0):
            raise ContainerError("sampling rate must be positive and finite")
        expected_tail = self.T - (self.num_patches - 1) * self.patch_W
        if self.true_tail_length != expected_tail:
            raise ContainerError(f"true_tail_length {self.true_tail_length} != {expected_tail}")
        return self

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC, self.version, self.model_hash, self.sampling_rate_hz, self.C, self.T,
            self.patch_W, self.N, self.n_q, self.K_cb, self.raw_bits_per_sample,
            self.modality, self.true_tail_length,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "ContainerHeader":
        if len(data) < 4:
            raise TruncatedPayload("container shorter than its magic")
        if data[:4] != MAGIC:
            raise BadMagic(f"bad magic {bytes(data[:4])!r}")
        if len(data) < 6:
            raise TruncatedPayload("container shorter than its header")
        version = struct.unpack_from("<H", data, 4)[0]
        if version != VERSION:
            raise VersionUnsupported(f"container version {version} is not supported")
        if len(data) < HEADER_SIZE:
            raise TruncatedPayload("container shorter than its header")
        (_, version, model_hash, fs, C, T, W, N, n_q, K_cb, raw_bits,
         modality, tail) = _HEADER.unpack_from(data)
        return cls(model_hash, fs, C, T, W, N, n_q, K_cb, raw_bits, modality, tail, version).validate()

    def as_dict(self) -> dict:
        d = asdict(self)
        d["model_hash"] = self.model_hash.hex()
        d.update(bits_per_index=self.bits_per_index, latent_frames=self.latent_frames,
                 num_patches=self.num_patches, payload_bytes=self.payload_bytes,
                 container_bytes=self.container_bytes)
        return d


def pack_indices(grids: np.ndarray, bits: int) -> bytes:
    """Pack ``(patches, n_q, T_lat)`` indices; each patch is padded to a byte boundary."""
    rows = grids.reshape(grids.shape[0], -1).astype(np.uint32)
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint32)
    bitmat = ((rows[:, :, None] >> shifts) & 1).astype(np.uint8).reshape(rows.shape[0], -1)
    return np.packbits(bitmat, axis=1).tobytes()


def unpack_indices(payload: bytes, n_patches: int, per_patch: int, bits: int) -> np.ndarray:
    row_bytes = -(-(per_patch * bits) // 8)
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(n_patches, row_bytes)
    bitmat = np.unpackbits(raw, axis=1)[:, : per_patch * bits].reshape(n_patches, per_patch, bits)
    weights = (1 << np.arange(bits - 1, -1, -1)).astype(np.int64)
    return bitmat.astype(np.int64) @ weights


def serialize(grids: np.ndarray, header: ContainerHeader) -> bytes:
    """Write a container for ``grids`` of shape ``(C, P, n_q, T_lat)``."""
    header.validate()
    grids = np.asarray(grids)
    if grids.shape != header.grid_shape:
        raise GeometryMismatch(f"grids {grids.shape} do not match header geometry {header.grid_shape}")
    if grids.size and (grids.min() < 0 or grids.max() >= header.K_cb):
        raise IndexOverflow(f"indices must lie in [0, {header.K_cb})")
    C, P, n_q, T_lat = grids.shape
    body = header.pack() + pack_indices(grids.reshape(C * P, n_q, T_lat), header.bits_per_index)
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize(data: bytes, allow_trailing: bool = False) -> Tuple[ContainerHeader, np.ndarray]:
    """Inverse of :func:`serialize`."""
    data = bytes(data)
    header = ContainerHeader.unpack(data)
    total = header.container_bytes
    if len(data) < total:
        raise TruncatedPayload(f"container needs {total} bytes, got {len(data)}")
    if len(data) > total and not allow_trailing:
        raise ContainerError(f"{len(data) - total} unexpected trailing bytes")
    body = data[: total - CRC_SIZE]
    (crc,) = struct.unpack_from("<I", data, total - CRC_SIZE)
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch("CRC32 does not match container contents")
    C, P, n_q, T_lat = header.grid_shape
    flat = unpack_indices(body[HEADER_SIZE:], C * P, n_q * T_lat, header.bits_per_index)
    if flat.size and flat.max() >= header.K_cb:
        raise IndexOverflow("decoded index exceeds codebook size")
    return header, flat.reshape(C, P, n_q, T_lat)


def split_containers(data: bytes) -> Iterator[bytes]:
    """Split concatenated containers using only their header length fields."""
    data = bytes(data)
    pos = 0
    while pos < len(data):
        header = ContainerHeader.unpack(data[pos:])
        end = pos + header.container_bytes
        if end > len(data):
            raise TruncatedPayload("last container is truncated")
        yield data[pos:end]
        pos = end


def measured_compression_ratio(header: ContainerHeader, original_byte_count: int) -> float:
    """Original size over full container size (header and CRC included).

    Unlike the nominal ratio of the codec configuration, this counts container
    overhead and tail padding, so it only approaches the nominal value for
    long recordings.
    """
    if original_byte_count <= 0:
        raise ValueError("original_byte_count must be positive")
    return original_byte_count / header.container_bytes


def raw_byte_count(header: ContainerHeader) -> int:
    return header.C * header.T * header.raw_bits_per_sample // 8
