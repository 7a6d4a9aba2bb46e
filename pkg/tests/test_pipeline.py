import numpy as np
import pytest

from eegcodec.bitstream import deserialize
from eegcodec.checkpoint import Checkpoint
from eegcodec.errors import GeometryMismatch, ModelMismatch
from eegcodec.metrics import prd
from eegcodec.pipeline import LoadedModel, compress_recording, decompress_bytes, reconstruct_recording
from eegcodec.signal_io import Modality, Recording, patch_array

from conftest import initialised_codec, tiny_config


@pytest.fixture(scope="module")
def model():
    return LoadedModel(Checkpoint.from_codec(initialised_codec(tiny_config())))


def recording(C=3, T=100, seed=0):
    x = np.random.default_rng(seed).standard_normal((C, T)).astype(np.float32)
    return Recording(x, 32.0, Modality.iEEG, annotations=[(10, 40, "seizure")], channel_names=["a", "b", "c"][:C])


def test_container_header_and_shape(model):
    rec = recording()
    data = compress_recording(rec, model)
    header, grids = deserialize(data)
    assert (header.C, header.T, header.patch_W, header.true_tail_length) == (3, 100, 32, 4)
    assert header.model_hash == model.model_hash
    assert header.modality == int(Modality.iEEG)
    assert grids.shape == (3, 4, 3, 8)
    out = decompress_bytes(data, model)
    assert out.samples.shape == rec.samples.shape
    assert out.modality is Modality.iEEG


def test_compression_is_deterministic(model):
    rec = recording(seed=3)
    a = compress_recording(rec, model)
    assert a == compress_recording(rec, model)
    assert np.array_equal(decompress_bytes(a, model).samples, decompress_bytes(a, model).samples)


def test_channels_are_independent(model):
    rec = recording(C=2, T=64, seed=4)
    both = reconstruct_recording(rec, model).samples
    alone = reconstruct_recording(Recording(rec.samples[:1], 32.0), model).samples
    assert np.array_equal(both[:1], alone)


def test_reconstruction_carries_metadata_and_prd(model):
    rec = recording(T=96, seed=5)
    out = reconstruct_recording(rec, model)
    assert out.annotations == rec.annotations and out.channel_names == rec.channel_names
    assert prd(rec.samples, out.samples) == prd(rec.samples.ravel(), out.samples.ravel())
    assert np.isfinite(prd(rec.samples, out.samples))


def test_wrong_model_refused_unless_forced(model):
    other = LoadedModel(Checkpoint.from_codec(initialised_codec(tiny_config(), seed=9)))
    data = compress_recording(recording(), model)
    with pytest.raises(ModelMismatch):
        decompress_bytes(data, other)
    assert decompress_bytes(data, other, force=True).samples.shape == (3, 100)


def test_geometry_mismatch(model):
    with pytest.raises(GeometryMismatch):
        compress_recording(Recording(np.zeros((1, 64), np.float32), 33.3), model)
    with pytest.raises(GeometryMismatch):
        compress_recording(Recording(np.zeros((1, 64), np.float32), 30.0), model)
    bigger = LoadedModel(Checkpoint.from_codec(initialised_codec(tiny_config(num_quantizers=2))))
    with pytest.raises(GeometryMismatch):
        decompress_bytes(compress_recording(recording(), model), bigger, force=True)


def test_tail_is_padded_not_wrapped(model):
    rec = recording(C=1, T=40, seed=6)
    patches, tail = patch_array(rec.samples, 32)
    assert tail == 8 and np.all(patches[0, 1, 8:] == 0)
    assert reconstruct_recording(rec, model).n_samples == 40
