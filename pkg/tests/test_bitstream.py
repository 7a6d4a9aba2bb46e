import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eegcodec.bitstream import (
    HEADER_SIZE,
    ContainerHeader,
    deserialize,
    measured_compression_ratio,
    pack_indices,
    raw_byte_count,
    serialize,
    split_containers,
    unpack_indices,
)
from eegcodec.errors import (
    BadMagic,
    ChecksumMismatch,
    ContainerError,
    GeometryMismatch,
    IndexOverflow,
    TruncatedPayload,
    VersionUnsupported,
)


def header(C=2, T=1000, W=256, N=4, n_q=3, K=16, **kw):
    return ContainerHeader(model_hash=bytes(range(32)), sampling_rate_hz=256.0, C=C, T=T,
                           patch_W=W, N=N, n_q=n_q, K_cb=K, **kw)


def random_grids(h, rng):
    return rng.integers(0, h.K_cb, size=h.grid_shape)


def test_header_size_and_layout():
    h = header()
    packed = h.pack()
    assert len(packed) == HEADER_SIZE == 72
    assert packed[:4] == b"BCC1"
    assert ContainerHeader.unpack(packed) == h


def test_geometry_fields():
    h = header(T=1000, W=256, N=4, n_q=3, K=16)
    assert h.num_patches == 4
    assert h.true_tail_length == 1000 - 3 * 256
    assert h.latent_frames == 16
    assert h.bits_per_index == 4
    assert h.patch_bytes == 3 * 16 * 4 // 8
    assert h.container_bytes == 72 + 2 * 4 * 24 + 4


def test_pack_oracle_msb_first():
    grids = np.array([[[5, 3]]])
    assert pack_indices(grids, 3) == bytes([0b10101100])
    assert pack_indices(np.array([[[1]], [[2]]]), 2) == bytes([0b01000000, 0b10000000])
    back = unpack_indices(pack_indices(grids, 3), 1, 2, 3)
    assert back.tolist() == [[5, 3]]


def test_fuzz_roundtrip_1000():
    rng = np.random.default_rng(0)
    combos = [(n_q, K, T_lat) for n_q in (1, 2, 4, 8) for K in (2, 3, 16, 100, 256, 1024, 65535) for T_lat in (1, 5, 16)]
    for i in range(1000):
        n_q, K, T_lat = combos[i % len(combos)]
        N = int(rng.integers(0, 4))
        W = T_lat << N
        h = header(C=int(rng.integers(1, 4)), T=int(rng.integers(1, 4 * W + 1)), W=W, N=N, n_q=n_q, K=K)
        grids = random_grids(h, rng)
        h2, g2 = deserialize(serialize(grids, h))
        assert h2 == h and np.array_equal(g2, grids)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.data())
def test_corruption_always_detected(seed, data):
    rng = np.random.default_rng(seed)
    h = header(C=int(rng.integers(1, 3)), T=int(rng.integers(1, 600)), W=64, N=2, n_q=2, K=256)
    blob = bytearray(serialize(random_grids(h, rng), h))
    pos = data.draw(st.integers(0, len(blob) - 1))
    flip = data.draw(st.integers(1, 255))
    blob[pos] ^= flip
    with pytest.raises(ContainerError):
        deserialize(bytes(blob))


def test_structural_errors():
    h = header()
    blob = serialize(random_grids(h, np.random.default_rng(1)), h)
    with pytest.raises(BadMagic):
        deserialize(b"XXXX" + blob[4:])
    with pytest.raises(VersionUnsupported):
        deserialize(blob[:4] + struct.pack("<H", 9) + blob[6:])
    with pytest.raises(TruncatedPayload):
        deserialize(blob[:-1])
    with pytest.raises(TruncatedPayload):
        deserialize(blob[:10])
    with pytest.raises(ContainerError):
        deserialize(blob + b"\0")
    body = bytearray(blob[:-4])
    body[-1] ^= 1
    with pytest.raises(ChecksumMismatch):
        deserialize(bytes(body) + blob[-4:])


def test_index_overflow():
    h = header(K=10)
    grids = random_grids(h, np.random.default_rng(2))
    grids[0, 0, 0, 0] = 10
    with pytest.raises(IndexOverflow):
        serialize(grids, h)
    # 4-bit field can encode 15 > K-1; decoder must reject it even with a valid CRC
    grids[0, 0, 0, 0] = 0
    blob = bytearray(serialize(grids, h))
    blob[HEADER_SIZE] |= 0xF0
    body = bytes(blob[:-4])
    with pytest.raises(IndexOverflow):
        deserialize(body + struct.pack("<I", zlib.crc32(body)))


def test_grid_shape_checked():
    h = header()
    with pytest.raises(GeometryMismatch):
        serialize(np.zeros((1, 1, 1, 1), dtype=int), h)


def test_split_concatenated():
    rng = np.random.default_rng(3)
    hs = [header(T=100), header(C=1, T=700, n_q=1, K=1024), header(T=5)]
    blobs = [serialize(random_grids(h, rng), h) for h in hs]
    assert list(split_containers(b"".join(blobs))) == blobs
    with pytest.raises(TruncatedPayload):
        list(split_containers(b"".join(blobs)[:-3]))


def test_measured_cr_approaches_nominal():
    h = header(C=16, T=256 * 1000, W=1024, N=6, n_q=4, K=256)
    measured = measured_compression_ratio(h, raw_byte_count(h))
    assert 63.0 < measured < 64.0
