"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure during training, 5 geometry mismatch between model and data.

Configuration is one JSON file plus ``--set section.key=value`` overrides.
Values given to ``--set`` are parsed as JSON when possible and taken as
strings otherwise. Relative paths inside the file resolve against the file's
directory; data paths prefer ``$BRAINCODEC_DATA_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .bitstream import MAGIC, ContainerHeader, measured_compression_ratio, raw_byte_count
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .codec import CodecConfig, compression_ratio
from .errors import (
    CodecError,
    ConfigError,
    GeometryMismatch,
    InvalidConfig,
    NonFiniteGradient,
    NonFiniteLoss,
    NonFiniteTerm,
    UnreadableFile,
)
from .harness import (
    ConstantAdapter,
    Dataset,
    OracleAdapter,
    ProtocolConfig,
    ReferenceCNNAdapter,
    Subject,
    load_manifest,
    rate_distortion_sweep,
    run_protocol,
)
from .pipeline import LoadedModel, compress_recording
from .signal_io import load_recording, save_recording, write_sidecar
from .synthetic import BurstEvent, SyntheticSpec, generate, seizure_subject
from .trainer import TrainConfig, fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_GEOMETRY = 0, 2, 3, 4, 5

DEFAULT_CONFIG: Dict[str, Any] = {
    "codec": {},
    "train": {},
    "data": {},
    "output": {"checkpoint": "model.ckpt", "log": "train.jsonl"},
    "evaluate": {"checkpoint": None, "classifier": "reference_cnn", "classifier_options": {},
                 "protocol": {}, "report": "degradation.csv"},
    "sweep": {"checkpoints": [], "manifests": [], "report": "rate_distortion.csv"},
}

ADAPTERS = {"reference_cnn": ReferenceCNNAdapter, "oracle": OracleAdapter, "constant": ConstantAdapter}

log = logging.getLogger("eegcodec")


# ---------------------------------------------------------------------------
# configuration

def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, assignment: str) -> None:
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise InvalidConfig(f"override {assignment!r} is not of the form key=value")
    *parents, leaf = key.split(".")
    node = config
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise InvalidConfig(f"override {key!r} descends into a non-section")
    node[leaf] = _parse_value(value)


def load_config(path: Optional[str], overrides: Sequence[str] = (), seed: Optional[int] = None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    base_dir = Path.cwd()
    if path:
        p = Path(path)
        try:
            user = json.loads(p.read_text())
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {p}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config {p} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise InvalidConfig("config must be a JSON object")
        unknown = set(user) - set(config)
        if unknown:
            raise InvalidConfig(f"unknown config sections: {sorted(unknown)}")
        for section, values in user.items():
            if not isinstance(values, dict):
                raise InvalidConfig(f"section {section!r} must be an object")
            config[section].update(values)
        base_dir = p.resolve().parent
    for assignment in overrides:
        apply_override(config, assignment)
    if seed is not None:
        config["train"]["seed"] = seed
        config["evaluate"].setdefault("protocol", {})["seed"] = seed
    config["_base_dir"] = str(base_dir)
    return config


def _path(config: dict, value: str, data: bool = False) -> Path:
    p = Path(value)
    if p.is_absolute():
        return p
    root = os.environ.get("BRAINCODEC_DATA_ROOT") if data else None
    return Path(root) / p if root else Path(config["_base_dir"]) / p


def codec_config(config: dict) -> CodecConfig:
    try:
        return CodecConfig.from_dict(config["codec"]).validate()
    except TypeError as exc:
        raise InvalidConfig(f"codec section: {exc}") from exc


def train_config(config: dict) -> TrainConfig:
    return TrainConfig.from_dict(config["train"])


def _synthetic_spec(d: dict) -> SyntheticSpec:
    d = dict(d)
    d["burst_events"] = [BurstEvent(**e) for e in d.get("burst_events", [])]
    try:
        return SyntheticSpec(**d).validate()
    except TypeError as exc:
        raise InvalidConfig(f"synthetic section: {exc}") from exc


def build_dataset(config: dict) -> Dataset:
    """Dataset from the ``data`` section.

    Exactly one of ``manifest``, ``recordings``, ``synthetic`` (one generated
    recording) or ``synthetic_subjects`` (labelled seizure subjects).
    """
    data = config["data"]
    kinds = [k for k in ("manifest", "recordings", "synthetic", "synthetic_subjects") if k in data]
    if len(kinds) != 1:
        raise InvalidConfig("data section needs exactly one of manifest, recordings, synthetic, synthetic_subjects")
    kind = kinds[0]
    if kind == "manifest":
        return load_manifest(_path(config, data["manifest"], data=True))
    if kind == "recordings":
        kw = {"sampling_rate_hz": data["sampling_rate_hz"]} if "sampling_rate_hz" in data else {}
        recs = [load_recording(_path(config, p, data=True), data.get("format"), **kw) for p in data["recordings"]]
        return Dataset(data.get("name", "recordings"), [Subject("all", recs)])
    if kind == "synthetic":
        return Dataset(data.get("name", "synthetic"), [Subject("synthetic", [generate(_synthetic_spec(data["synthetic"]))])])
    opts = dict(data["synthetic_subjects"])
    n_subjects = int(opts.pop("n_subjects", 2))
    base_seed = int(opts.pop("seed", 0))
    try:
        subjects = [Subject(f"S{i:02d}", seizure_subject(seed=base_seed + i, **opts)) for i in range(n_subjects)]
    except TypeError as exc:
        raise InvalidConfig(f"synthetic_subjects section: {exc}") from exc
    return Dataset(data.get("name", "synthetic_subjects"), subjects)


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args, config: dict) -> int:
    cc, tc = codec_config(config), train_config(config)
    dataset = build_dataset(config)
    out = Path(args.output) if args.output else _path(config, config["output"]["checkpoint"])
    log_path = Path(args.log) if args.log else _path(config, config["output"]["log"])
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text("")
    ckpt = fit(dataset.recordings, cc, tc, log_path=log_path)
    ckpt.meta["train_dataset"] = dataset.name
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    print(f"checkpoint: {out}")
    print(f"nominal CR: {compression_ratio(cc):.2f}")
    print(f"best validation PRD: {ckpt.meta['val_prd']:.3f} (epoch {ckpt.meta['best_epoch']})")
    return EXIT_OK


def cmd_compress(args, config: dict) -> int:
    model = LoadedModel(load_checkpoint(args.checkpoint))
    kw = {"sampling_rate_hz": args.sampling_rate} if args.sampling_rate else {}
    rec = load_recording(args.input, args.format, **kw)
    data = compress_recording(rec, model)
    out = Path(args.output)
    out.write_bytes(data)
    write_sidecar(out, rec)
    header = ContainerHeader.unpack(data)
    print(f"container: {out} ({len(data)} bytes)")
    print(f"nominal CR: {model.nominal_cr:.2f}")
    print(f"measured CR: {measured_compression_ratio(header, raw_byte_count(header)):.2f}")
    return EXIT_OK


def cmd_decompress(args, config: dict) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    rec = load_recording(args.input, "bcc", checkpoint=ckpt, force=args.force)
    save_recording(rec, args.output, args.format)
    print(f"recording: {args.output} ({rec.n_channels} channels, {rec.n_samples} samples)")
    return EXIT_OK


def _adapter(ev: dict):
    name = ev.get("classifier", "reference_cnn")
    if name not in ADAPTERS:
        raise InvalidConfig(f"unknown classifier {name!r}; choose from {sorted(ADAPTERS)}")
    try:
        return ADAPTERS[name](**ev.get("classifier_options", {}))
    except TypeError as exc:
        raise InvalidConfig(f"classifier_options: {exc}") from exc


def cmd_evaluate(args, config: dict) -> int:
    ev = config["evaluate"]
    ckpt_path = args.checkpoint or ev.get("checkpoint")
    if not ckpt_path:
        raise InvalidConfig("evaluate needs a checkpoint (--checkpoint or evaluate.checkpoint)")
    ckpt = load_checkpoint(args.checkpoint or _path(config, ckpt_path))
    try:
        protocol = ProtocolConfig(**ev.get("protocol", {}))
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"protocol: {exc}") from exc
    report = run_protocol(build_dataset(config), _adapter(ev), protocol, ckpt)
    out = Path(args.report) if args.report else _path(config, ev["report"])
    report.write_csv(out)
    print(f"report: {out}")
    print(f"{protocol.metric} original {report.score_original:.4f}  reconstructed {report.score_reconstructed:.4f}  "
          f"degradation {report.degradation:.4f}  median PRD {report.median_prd:.3f}  CR {report.nominal_cr:.2f}")
    return EXIT_OK


def cmd_sweep(args, config: dict) -> int:
    sw = config["sweep"]
    paths = list(args.checkpoint) if args.checkpoint else [_path(config, p) for p in sw.get("checkpoints", [])]
    if not paths:
        raise InvalidConfig("sweep needs at least one checkpoint")
    checkpoints = [(Path(p).stem, load_checkpoint(p)) for p in paths]
    manifests = sw.get("manifests") or []
    if manifests:
        datasets = {ds.name: ds.recordings for ds in (load_manifest(_path(config, m, data=True)) for m in manifests)}
    else:
        ds = build_dataset(config)
        datasets = {ds.name: ds.recordings}
    out = Path(args.report) if args.report else _path(config, sw["report"])
    rows = rate_distortion_sweep(datasets, checkpoints, out)
    print(f"report: {out} ({len(rows)} rows)")
    for row in rows:
        print(f"{row['dataset']:>20s} {row['model']:>20s}  CR {row['nominal_cr']:7.2f}  median PRD {row['median_prd']:8.3f}")
    return EXIT_OK


def inspect_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(f"no such file: {path}")
    data = path.read_bytes()
    if data[:4] == MAGIC:
        header = ContainerHeader.unpack(data)
        return {"kind": "container", "measured_cr": measured_compression_ratio(header, raw_byte_count(header)),
                **header.as_dict()}
    if data[:2] == b"PK":
        ckpt = Checkpoint.from_bytes(data)
        return {"kind": "checkpoint", "content_hash": ckpt.content_hash.hex(),
                "nominal_cr": compression_ratio(ckpt.codec_config), "step": ckpt.step,
                "codec_config": ckpt.codec_config.to_dict(), "train_config": ckpt.train_config,
                "meta": ckpt.meta}
    rec = load_recording(path)
    return {"kind": "recording", "channels": rec.n_channels, "samples": rec.n_samples,
            "sampling_rate_hz": rec.sampling_rate_hz, "modality": rec.modality.name,
            "annotations": len(rec.annotations)}


def cmd_inspect(args, config: dict) -> int:
    print(json.dumps(inspect_file(args.input), indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="JSON configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. train.epochs=5 (repeatable)")
    p.add_argument("--seed", type=int, help="seed for training and evaluation (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegcodec", description="Neural compression of EEG and iEEG recordings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train a codec and write a checkpoint")
    _common(p)
    p.add_argument("--output", metavar="FILE", help="checkpoint path (default: output.checkpoint)")
    p.add_argument("--log", metavar="FILE", help="JSON-lines training log (default: output.log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="compress a recording into a container")
    _common(p)
    p.add_argument("input", help="recording file (.bcraw or .csv)")
    p.add_argument("--checkpoint", required=True, metavar="FILE", help="trained checkpoint")
    p.add_argument("--output", required=True, metavar="FILE", help="container path to write")
    p.add_argument("--format", choices=["bcraw", "csv"], help="input format (default: from suffix)")
    p.add_argument("--sampling-rate", type=float, metavar="HZ", help="sampling rate for text input without one")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decode a container back to a recording")
    _common(p)
    p.add_argument("input", help="container file")
    p.add_argument("--checkpoint", required=True, metavar="FILE", help="checkpoint that wrote the container")
    p.add_argument("--output", required=True, metavar="FILE", help="recording path to write")
    p.add_argument("--format", choices=["bcraw", "csv"], help="output format (default: from suffix)")
    p.add_argument("--force", action="store_true", help="decode even if the container names a different model")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("evaluate", help="downstream classifier degradation report")
    _common(p)
    p.add_argument("--checkpoint", metavar="FILE", help="checkpoint (default: evaluate.checkpoint)")
    p.add_argument("--report", metavar="FILE", help="CSV path (default: evaluate.report)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="rate-distortion table over several checkpoints")
    _common(p)
    p.add_argument("--checkpoint", action="append", metavar="FILE",
                   help="checkpoint to include (repeatable; default: sweep.checkpoints)")
    p.add_argument("--report", metavar="FILE", help="CSV path (default: sweep.report)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect", help="print the header of a container, checkpoint or recording")
    _common(p)
    p.add_argument("input", help="file to inspect")
    p.set_defaults(func=cmd_inspect)
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, GeometryMismatch):
        return EXIT_GEOMETRY
    if isinstance(exc, (NonFiniteLoss, NonFiniteTerm, NonFiniteGradient)):
        return EXIT_NUMERIC
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    return EXIT_DATA


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.overrides, args.seed)
        return args.func(args, config)
    except CodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def inspect_main(argv: Optional[List[str]] = None) -> int:
    """Entry point for ``bcc-inspect FILE``."""
    return main(["inspect", *(sys.argv[1:] if argv is None else argv)])


if __name__ == "__main__":
    sys.exit(main())
