import csv
import json

import numpy as np
import pytest

from eegcodec.cli import DEFAULT_CONFIG, EXIT_CONFIG, EXIT_DATA, EXIT_GEOMETRY, build_parser, load_config, main
from eegcodec.harness import DEGRADATION_COLUMNS, RD_COLUMNS
from eegcodec.signal_io import Recording, load_recording, save_recording

CODEC = dict(base_channels=4, latent_dim=8, num_blocks=4, patch_seconds=1.0, sampling_rate_hz=64.0,
             num_quantizers=2, codebook_size=16, max_channels=16)


def write_config(tmp_path, **sections):
    cfg = {"codec": CODEC, "train": {"epochs": 1, "batch_size": 8, "seed": 3},
           "data": {"synthetic": {"num_channels": 2, "duration_s": 20, "sampling_rate_hz": 64.0}}}
    cfg.update(sections)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    assert main(["train", "--config", cfg, "--output", str(tmp / "m.ckpt")]) == 0
    return tmp, cfg


def test_help_documents_every_option(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.choices and "train" in a.choices)
    assert set(sub.choices) == {"train", "compress", "decompress", "evaluate", "sweep", "inspect"}
    for name, p in sub.choices.items():
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, f"{name} {action.option_strings} lacks help"


def test_config_overrides_and_seed(tmp_path):
    cfg = load_config(write_config(tmp_path), ["train.epochs=4", "codec.num_quantizers=2"], seed=11)
    assert cfg["train"]["epochs"] == 4 and cfg["codec"]["num_quantizers"] == 2
    assert cfg["train"]["seed"] == 11 and cfg["evaluate"]["protocol"]["seed"] == 11
    assert cfg["output"] == DEFAULT_CONFIG["output"]


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"trainer": {}}')
    assert main(["train", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["train", "--config", write_config(tmp_path), "--set", "codec.num_blocks=0"]) == EXIT_CONFIG
    assert main(["train", "--config", write_config(tmp_path), "--set", "nokey"]) == EXIT_CONFIG
    assert main(["sweep", "--config", write_config(tmp_path)]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_missing_input_exit_3(trained, tmp_path, capsys):
    tmp, _ = trained
    code = main(["compress", str(tmp_path / "none.bcraw"), "--checkpoint", str(tmp / "m.ckpt"),
                 "--output", str(tmp_path / "x.bcc")])
    assert code == EXIT_DATA
    assert "none.bcraw" in capsys.readouterr().err


def test_train_zero_epochs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", cfg, "--set", "train.epochs=0"]) == 0
    out = capsys.readouterr().out
    assert "nominal CR: 64.00" in out
    assert (tmp_path / "model.ckpt").is_file() and (tmp_path / "train.jsonl").is_file()


def test_train_is_reproducible(trained, tmp_path):
    tmp, cfg = trained
    assert main(["train", "--config", cfg, "--output", str(tmp_path / "again.ckpt"),
                 "--log", str(tmp_path / "again.jsonl")]) == 0
    assert (tmp_path / "again.ckpt").read_bytes() == (tmp / "m.ckpt").read_bytes()


def test_compress_decompress_roundtrip(trained, tmp_path, capsys):
    tmp, _ = trained
    x = np.random.default_rng(0).standard_normal((2, 200)).astype(np.float32)
    save_recording(Recording(x, 64.0, annotations=[(10, 50, "seizure")]), tmp_path / "r.bcraw")
    ckpt = str(tmp / "m.ckpt")
    for name in ("a.bcc", "b.bcc"):
        assert main(["compress", str(tmp_path / "r.bcraw"), "--checkpoint", ckpt, "--output", str(tmp_path / name)]) == 0
    out = capsys.readouterr().out
    assert "nominal CR: 64.00" in out and "measured CR" in out
    assert (tmp_path / "a.bcc").read_bytes() == (tmp_path / "b.bcc").read_bytes()
    assert main(["decompress", str(tmp_path / "a.bcc"), "--checkpoint", ckpt, "--output", str(tmp_path / "y.csv")]) == 0
    y = load_recording(tmp_path / "y.csv")
    assert y.samples.shape == (2, 200) and y.sampling_rate_hz == 64.0
    assert y.annotations == [(10, 50, "seizure")]

    capsys.readouterr()
    assert main(["inspect", str(tmp_path / "a.bcc")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["kind"] == "container" and info["C"] == 2 and info["T"] == 200


def test_decompress_refuses_other_model(trained, tmp_path):
    tmp, cfg = trained
    assert main(["train", "--config", cfg, "--seed", "99", "--output", str(tmp_path / "o.ckpt"),
                 "--log", str(tmp_path / "o.jsonl")]) == 0
    save_recording(Recording(np.ones((1, 128), np.float32), 64.0), tmp_path / "r.bcraw")
    assert main(["compress", str(tmp_path / "r.bcraw"), "--checkpoint", str(tmp / "m.ckpt"),
                 "--output", str(tmp_path / "c.bcc")]) == 0
    args = ["decompress", str(tmp_path / "c.bcc"), "--checkpoint", str(tmp_path / "o.ckpt"),
            "--output", str(tmp_path / "y.bcraw")]
    assert main(args) == EXIT_DATA
    assert main(args + ["--force"]) == 0


def test_geometry_error_exit_5(trained, tmp_path):
    tmp, _ = trained
    save_recording(Recording(np.ones((1, 200), np.float32), 100.0), tmp_path / "r.bcraw")
    assert main(["compress", str(tmp_path / "r.bcraw"), "--checkpoint", str(tmp / "m.ckpt"),
                 "--output", str(tmp_path / "c.bcc")]) == EXIT_GEOMETRY


def test_evaluate_and_sweep_columns(trained, tmp_path):
    tmp, _ = trained
    cfg = write_config(tmp_path, data={"synthetic_subjects": {
        "n_subjects": 1, "n_seizures": 2, "seizure_s": 10, "context_s": 10, "sampling_rate_hz": 64.0}},
        evaluate={"classifier": "oracle"})
    ckpt = str(tmp / "m.ckpt")
    assert main(["evaluate", "--config", cfg, "--checkpoint", ckpt, "--report", str(tmp_path / "d.csv")]) == 0
    rows = list(csv.DictReader((tmp_path / "d.csv").open()))
    assert list(rows[0]) == DEGRADATION_COLUMNS and rows[-1]["degradation"] == "0.0"
    assert main(["sweep", "--config", cfg, "--checkpoint", ckpt, "--checkpoint", ckpt,
                 "--report", str(tmp_path / "rd.csv")]) == 0
    rows = list(csv.DictReader((tmp_path / "rd.csv").open()))
    assert list(rows[0]) == RD_COLUMNS and len(rows) == 2
    assert rows[0]["nominal_cr"] == "64.0"
