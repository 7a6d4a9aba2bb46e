import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eegcodec.errors import (
    IndexCollision,
    InvalidBand,
    InvalidConfig,
    MissingGroups,
    MissingPatch,
    NonFiniteSamples,
    NonIntegerWindow,
    ShapeMismatch,
    TooFewChannels,
    UnreadableFile,
)
from eegcodec.signal_io import (
    Modality,
    Recording,
    apply_reference,
    bandpass,
    decode_raw,
    depatchify,
    encode_raw,
    load_recording,
    patchify,
    save_recording,
)


def rec_of(x, fs=256.0, **kw):
    return Recording(np.asarray(x, dtype=np.float32), fs, **kw)


def test_raw_roundtrip_bitwise(tmp_path, rng):
    rec = rec_of(rng.normal(size=(2, 1024)), annotations=[(10, 20, "seizure")],
                 channel_names=["a", "b"], modality=Modality.iEEG)
    path = save_recording(rec, tmp_path / "x.bcraw")
    back = load_recording(path)
    assert back.n_channels == 2 and back.n_samples == 1024 and back.duration_s == 4.0
    assert back.samples.tobytes() == rec.samples.tobytes()
    assert back.annotations == [(10, 20, "seizure")]
    assert back.channel_names == ["a", "b"] and back.modality is Modality.iEEG


def test_csv_roundtrip_exact(tmp_path, rng):
    rec = rec_of(rng.normal(size=(3, 50)), fs=128.0)
    back = load_recording(save_recording(rec, tmp_path / "x.csv"))
    assert back.sampling_rate_hz == 128.0
    assert np.array_equal(back.samples.astype(np.float32), rec.samples)


def test_raw_header_mismatch_and_missing(tmp_path, rng):
    data = encode_raw(rec_of(rng.normal(size=(2, 16))))
    with pytest.raises((ShapeMismatch, UnreadableFile)):
        decode_raw(data[:-4])
    with pytest.raises(UnreadableFile, match="nope"):
        load_recording(tmp_path / "nope.bcraw")
    with pytest.raises(InvalidConfig):
        load_recording(tmp_path / "x.edf")


def test_nan_rejected(tmp_path):
    x = np.ones((1, 10))
    x[0, 3] = np.nan
    with pytest.raises(NonFiniteSamples):
        rec_of(x)
    (tmp_path / "bad.csv").write_text("# sampling_rate_hz: 10\na\n1\nnan\n")
    with pytest.raises(NonFiniteSamples):
        load_recording(tmp_path / "bad.csv")


def test_reference_none_and_median():
    x = np.tile(np.arange(8.0), (3, 1))
    assert apply_reference(rec_of(x), "none").samples is not None
    assert np.array_equal(apply_reference(rec_of(x), "none").samples, rec_of(x).samples)
    assert np.all(apply_reference(rec_of(x), "median").samples == 0)
    y = np.random.default_rng(0).normal(size=(5, 40))
    med = apply_reference(rec_of(y), "median").samples
    assert np.allclose(np.median(med, axis=0), 0, atol=1e-6)


def test_reference_bipolar():
    x = np.array([[1.0, 2.0], [4.0, 4.0], [0.0, 1.0]])
    out = apply_reference(rec_of(x, channel_names=["a", "b", "c"]), "bipolar")
    assert out.samples.tolist() == [[-3.0, -2.0], [4.0, 3.0]]
    assert out.channel_names == ["a-b", "b-c"]
    with pytest.raises(TooFewChannels):
        apply_reference(rec_of(x[:1]), "bipolar")


def test_reference_laplacian_oracle(rng):
    x = rng.normal(size=(4, 64))
    out = apply_reference(rec_of(x, electrode_groups={0: 0, 1: 0, 2: 0, 3: 0}), "laplacian").samples
    xs = rec_of(x).samples.astype(np.float64)
    for t in range(64):
        mean = sum(xs[c, t] for c in range(4)) / 4
        for c in range(4):
            assert out[c, t] == pytest.approx(xs[c, t] - mean, abs=1e-5)
    grouped = apply_reference(rec_of(x, channel_names=list("abcd"),
                                     electrode_groups={"a": 0, "b": 0, "c": 1, "d": 1}), "laplacian").samples
    assert np.allclose(grouped[0] + grouped[1], 0, atol=1e-5)
    with pytest.raises(MissingGroups):
        apply_reference(rec_of(x), "laplacian")


def _sine(f, fs=512.0, seconds=6.0):
    t = np.arange(int(fs * seconds)) / fs
    return np.sin(2 * np.pi * f * t)[None, :]


def test_bandpass_passband_and_stopband():
    fs = 512.0
    inside = bandpass(Recording(_sine(60.0), fs), 0.5, 120.0, 4).samples[0, 512:-512]
    ref = _sine(60.0)[0, 512:-512]
    assert np.sqrt(np.mean(inside ** 2)) / np.sqrt(np.mean(ref ** 2)) == pytest.approx(1.0, abs=0.01)
    outside = bandpass(Recording(_sine(200.0), fs), 0.5, 120.0, 4).samples[0, 512:-512]
    attenuation = 20 * np.log10(np.sqrt(np.mean(outside ** 2)) / np.sqrt(0.5))
    assert attenuation <= -20
    dc = bandpass(Recording(np.ones((1, 3072)), fs), 0.5, 120.0, 4).samples[0, 512:-512]
    assert np.sqrt(np.mean(dc ** 2)) <= 0.01


def test_bandpass_linear_and_validated(rng):
    fs = 256.0
    x, y = rng.normal(size=(2, 1000)), rng.normal(size=(2, 1000))
    f = lambda s: bandpass(Recording(s, fs), 1.0, 40.0).samples
    combo = f(2.0 * x - 0.5 * y)
    np.testing.assert_allclose(combo, 2.0 * f(x) - 0.5 * f(y), rtol=1e-6, atol=1e-9)
    for lo, hi in [(0, 40), (40, 10), (1, 128)]:
        with pytest.raises(InvalidBand):
            bandpass(Recording(x, fs), lo, hi)


def test_patchify_order_and_padding(rng):
    rec = rec_of(rng.normal(size=(2, 2048)))
    patches = patchify(rec, 4.0)
    assert [(p.channel_index, p.patch_index) for p in patches] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert all(len(p.values) == 1024 for p in patches)
    short = patchify(rec_of(rng.normal(size=(1, 1000))), 4.0)
    assert len(short) == 1 and short[0].true_length == 1000
    assert np.all(short[0].values[1000:] == 0)
    with pytest.raises(NonIntegerWindow):
        patchify(rec_of(np.zeros((1, 10)), fs=250.3), 4.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 400), st.integers(0, 2 ** 31 - 1))
def test_depatchify_inverts_after_shuffle(C, T, seed):
    r = np.random.default_rng(seed)
    rec = Recording(r.normal(size=(C, T)).astype(np.float32), 32.0)
    patches = patchify(rec, 2.0)
    r.shuffle(patches)
    assert np.array_equal(depatchify(patches, C, T), rec.samples)


def test_depatchify_errors(rng):
    patches = patchify(rec_of(rng.normal(size=(1, 2048))), 4.0)
    with pytest.raises(IndexCollision):
        depatchify(patches + [patches[0]], 1, 2048)
    with pytest.raises(MissingPatch):
        depatchify(patches[:1], 1, 2048)
