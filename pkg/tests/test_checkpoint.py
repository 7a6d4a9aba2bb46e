import io
import zipfile

import numpy as np
import pytest
import torch

from eegcodec.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from eegcodec.errors import UnreadableFile
from eegcodec.trainer import fit

from conftest import tiny_config
from test_trainer import gan_config, sines


@pytest.fixture(scope="module")
def trained():
    return fit(sines(40), tiny_config(), gan_config(epochs=1))


def test_bytes_roundtrip(trained, tmp_path):
    path = save_checkpoint(trained, tmp_path / "m.ckpt")
    back = load_checkpoint(path)
    assert back.to_bytes() == trained.to_bytes()
    assert back.content_hash == trained.content_hash
    assert back.codec_config == trained.codec_config
    assert back.optimizer_state.keys() == {"generator", "discriminator"}
    x = torch.from_numpy(sines(3))
    with torch.no_grad():
        assert torch.equal(back.build_codec()(x).reconstruction, trained.build_codec()(x).reconstruction)


def test_archive_is_deterministic(trained):
    zf = zipfile.ZipFile(io.BytesIO(trained.to_bytes()))
    names = zf.namelist()
    assert names[0] == "meta.json" and names[1:] == sorted(names[1:])
    assert {i.date_time for i in zf.infolist()} == {(1980, 1, 1, 0, 0, 0)}


def test_content_hash_tracks_weights(trained):
    other = Checkpoint(trained.codec_config, {k: v.copy() for k, v in trained.codec_state.items()})
    assert other.content_hash == trained.content_hash
    key = next(k for k in other.codec_state if k.endswith("weight"))
    other.codec_state[key] = other.codec_state[key] + np.float32(1e-3)
    assert other.content_hash != trained.content_hash


def test_corrupt_archive_rejected(trained, tmp_path):
    with pytest.raises(UnreadableFile):
        Checkpoint.from_bytes(b"not a zip")
    with pytest.raises(UnreadableFile):
        load_checkpoint(tmp_path / "missing.ckpt")
    buf = io.BytesIO()
    src = zipfile.ZipFile(io.BytesIO(trained.to_bytes()))
    with zipfile.ZipFile(buf, "w") as dst:
        for info in src.infolist():
            data = src.read(info)
            if info.filename == "codec/decoder.net.0.bias.npy":
                arr = np.load(io.BytesIO(data))
                out = io.BytesIO()
                np.save(out, arr + 1)
                data = out.getvalue()
            dst.writestr(info, data)
    with pytest.raises(UnreadableFile, match="hash"):
        Checkpoint.from_bytes(buf.getvalue())
