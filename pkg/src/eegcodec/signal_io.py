"""Recording containers, file I/O, referencing, filtering and patching.

Binary layout (``.bcraw``), all little-endian::

    magic   5 bytes  b"BCRAW"
    version u16
    C       u32      channel count
    T       u64      samples per channel
    fs      f64      sampling rate in Hz
    modality u8      0 = EEG, 1 = iEEG
    payload C*T float32, channel-major

Metadata that does not fit the header (annotations, channel names, electrode
groups) lives in an optional JSON sidecar ``<file>.json``.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal

from .errors import (
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

RAW_MAGIC = b"BCRAW"
RAW_VERSION = 1
_RAW_HEADER = struct.Struct("<5sHIQdB")


class Modality(enum.IntEnum):
    EEG = 0
    iEEG = 1


class ReferenceScheme(enum.Enum):
    NONE = "none"
    MEDIAN = "median"
    BIPOLAR = "bipolar"
    LAPLACIAN = "laplacian"


class FileFormat(enum.Enum):
    RAW = "bcraw"
    TEXT = "csv"
    CONTAINER = "bcc"


Annotation = Tuple[int, int, str]


@dataclass
class Recording:
    """Multichannel signal of shape ``(C, T)``."""

    samples: np.ndarray
    sampling_rate_hz: float
    modality: Modality = Modality.EEG
    annotations: List[Annotation] = field(default_factory=list)
    channel_names: Optional[List[str]] = None
    electrode_groups: Optional[Dict[Union[int, str], int]] = None

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ShapeMismatch(f"samples must be a non-empty (C, T) array, got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise NonFiniteSamples("recording contains NaN or infinite samples")
        if not self.sampling_rate_hz > 0:
            raise ValueError("sampling_rate_hz must be positive")
        self.samples = samples
        self.modality = Modality(self.modality)
        self.annotations = [(int(a), int(b), str(lbl)) for a, b, lbl in self.annotations]
        for onset, offset, _ in self.annotations:
            if not 0 <= onset < offset <= self.n_samples:
                raise ShapeMismatch(f"annotation ({onset}, {offset}) outside [0, {self.n_samples}]")
        if self.channel_names is not None and len(self.channel_names) != self.n_channels:
            raise ShapeMismatch("channel_names length does not match channel count")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz

    def with_samples(self, samples: np.ndarray, **changes) -> "Recording":
        return replace(self, samples=samples, **changes)


@dataclass
class Patch:
    values: np.ndarray
    channel_index: int
    patch_index: int
    sampling_rate_hz: float
    true_length: int = -1

    def __post_init__(self):
        if self.true_length < 0:
            self.true_length = len(self.values)


# ---------------------------------------------------------------------------
# file I/O


def _file_format(fmt: Union[str, FileFormat]) -> FileFormat:
    try:
        return FileFormat(fmt)
    except ValueError:
        raise InvalidConfig(f"unknown file format {fmt!r}; expected one of bcraw, csv, bcc") from None


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_sidecar(path, rec: Recording) -> None:
    """Store annotations, channel names and groups in ``<path>.json``."""
    path = Path(path)
    meta = {}
    if rec.annotations:
        meta["annotations"] = [list(a) for a in rec.annotations]
    if rec.channel_names is not None:
        meta["channel_names"] = list(rec.channel_names)
    if rec.electrode_groups is not None:
        meta["electrode_groups"] = {str(k): int(v) for k, v in rec.electrode_groups.items()}
    side = _sidecar_path(path)
    if meta:
        side.write_text(json.dumps(meta, indent=1, sort_keys=True))
    elif side.exists():
        side.unlink()


def read_sidecar(path: Path) -> dict:
    side = _sidecar_path(path)
    if not side.exists():
        return {}
    try:
        meta = json.loads(side.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UnreadableFile(f"cannot parse sidecar {side}: {exc}") from exc
    groups = meta.get("electrode_groups")
    if groups is not None:
        meta["electrode_groups"] = {
            (int(k) if k.lstrip("-").isdigit() else k): int(v) for k, v in groups.items()
        }
    if "annotations" in meta:
        meta["annotations"] = [tuple(a) for a in meta["annotations"]]
    return meta


def encode_raw(rec: Recording) -> bytes:
    header = _RAW_HEADER.pack(
        RAW_MAGIC, RAW_VERSION, rec.n_channels, rec.n_samples,
        float(rec.sampling_rate_hz), int(rec.modality),
    )
    return header + np.ascontiguousarray(rec.samples, dtype="<f4").tobytes()


def decode_raw(data: bytes) -> Recording:
    if len(data) < _RAW_HEADER.size:
        raise UnreadableFile("file shorter than BCRAW header")
    magic, version, n_ch, n_t, fs, modality = _RAW_HEADER.unpack_from(data)
    if magic != RAW_MAGIC:
        raise UnreadableFile(f"bad magic {magic!r}")
    if version != RAW_VERSION:
        raise UnreadableFile(f"unsupported BCRAW version {version}")
    payload = data[_RAW_HEADER.size:]
    if len(payload) != n_ch * n_t * 4:
        raise ShapeMismatch(
            f"header declares {n_ch}x{n_t} samples but payload holds {len(payload) // 4}"
        )
    try:
        modality = Modality(modality)
    except ValueError as exc:
        raise UnreadableFile(f"unknown modality code {modality}") from exc
    samples = np.frombuffer(payload, dtype="<f4").reshape(n_ch, n_t).astype(np.float32)
    return Recording(samples, fs, modality)


def _read_text(path: Path, sampling_rate_hz: Optional[float], delimiter: str) -> Recording:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            key, _, val = ln[1:].partition(":")
            meta[key.strip()] = val.strip()
        elif ln.strip():
            body.append(ln)
    reader = csv.reader(body, delimiter=delimiter)
    try:
        names = next(reader)
    except StopIteration:
        raise UnreadableFile(f"{path} has no header row") from None
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(names):
            raise ShapeMismatch(f"row {lineno} has {len(row)} columns, header has {len(names)}")
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise UnreadableFile(f"row {lineno}: {exc}") from exc
    fs = sampling_rate_hz or (float(meta["sampling_rate_hz"]) if "sampling_rate_hz" in meta else None)
    if fs is None:
        raise UnreadableFile("delimited text needs a sampling rate (header comment or argument)")
    modality = Modality[meta.get("modality", "EEG")]
    samples = np.asarray(rows, dtype=np.float64).T
    if not np.all(np.isfinite(samples)):
        raise NonFiniteSamples(f"{path} contains non-finite samples")
    return Recording(samples, fs, modality, channel_names=[n.strip() for n in names])


def load_recording(path, format: Union[str, FileFormat, None] = None, *,
                   sampling_rate_hz: Optional[float] = None, delimiter: str = ",",
                   checkpoint=None, force: bool = False) -> Recording:
    """Load a recording from disk.

    ``format`` defaults to the file suffix. Containers (``bcc``) need the
    checkpoint that produced them to be decoded.
    """
    path = Path(path)
    if format is None:
        format = path.suffix.lstrip(".") or "bcraw"
        if format == "txt" or format == "tsv":
            format = "csv"
    fmt = _file_format(format)
    if not path.is_file():
        raise UnreadableFile(f"no such file: {path}")
    try:
        if fmt is FileFormat.RAW:
            rec = decode_raw(path.read_bytes())
        elif fmt is FileFormat.TEXT:
            rec = _read_text(path, sampling_rate_hz, "\t" if path.suffix == ".tsv" else delimiter)
        else:
            if checkpoint is None:
                raise UnreadableFile("decoding a container requires a checkpoint")
            from .pipeline import decompress_bytes

            rec = decompress_bytes(path.read_bytes(), checkpoint, force=force)
    except OSError as exc:
        raise UnreadableFile(str(exc)) from exc
    meta = read_sidecar(path)
    if meta:
        rec = Recording(
            rec.samples, rec.sampling_rate_hz, rec.modality,
            annotations=meta.get("annotations", rec.annotations),
            channel_names=meta.get("channel_names", rec.channel_names),
            electrode_groups=meta.get("electrode_groups", rec.electrode_groups),
        )
    return rec


def save_recording(rec: Recording, path, format: Union[str, FileFormat, None] = None,
                   delimiter: str = ",") -> Path:
    path = Path(path)
    fmt = _file_format(format or (path.suffix.lstrip(".") or "bcraw"))
    if fmt is FileFormat.RAW:
        path.write_bytes(encode_raw(rec))
    elif fmt is FileFormat.TEXT:
        names = rec.channel_names or [f"ch{i}" for i in range(rec.n_channels)]
        buf = io.StringIO()
        buf.write(f"# sampling_rate_hz: {rec.sampling_rate_hz!r}\n")
        buf.write(f"# modality: {rec.modality.name}\n")
        writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        writer.writerow(names)
        for row in rec.samples.T:
            writer.writerow([repr(float(v)) for v in row])
        path.write_text(buf.getvalue())
    else:
        raise ValueError("containers are written by eegcodec.pipeline.compress_recording")
    write_sidecar(path, rec)
    return path


# ---------------------------------------------------------------------------
# referencing and filtering


def _group_ids(rec: Recording) -> List[int]:
    groups = rec.electrode_groups
    ids = []
    for i in range(rec.n_channels):
        if i in groups:
            ids.append(groups[i])
        elif rec.channel_names is not None and rec.channel_names[i] in groups:
            ids.append(groups[rec.channel_names[i]])
        else:
            raise MissingGroups(f"channel {i} has no electrode group")
    return ids


def apply_reference(rec: Recording, scheme: Union[ReferenceScheme, str]) -> Recording:
    scheme = ReferenceScheme(scheme)
    x = rec.samples
    if scheme is ReferenceScheme.NONE:
        return rec
    if scheme is ReferenceScheme.MEDIAN:
        return rec.with_samples(x - np.median(x, axis=0, keepdims=True))
    if scheme is ReferenceScheme.BIPOLAR:
        if rec.n_channels < 2:
            raise TooFewChannels("bipolar referencing needs at least two channels")
        names = None
        if rec.channel_names is not None:
            names = [f"{a}-{b}" for a, b in zip(rec.channel_names[:-1], rec.channel_names[1:])]
        return rec.with_samples(x[:-1] - x[1:], channel_names=names, electrode_groups=None)
    if not rec.electrode_groups:
        raise MissingGroups("Laplacian referencing needs electrode_groups")
    ids = np.asarray(_group_ids(rec))
    out = np.empty_like(x)
    for g in np.unique(ids):
        members = ids == g
        out[members] = x[members] - x[members].mean(axis=0, keepdims=True)
    return rec.with_samples(out)


def bandpass(rec: Recording, low_hz: float = 0.5, high_hz: float = 120.0, order: int = 4) -> Recording:
    """Zero-phase Butterworth band-pass applied channel-wise."""
    nyq = rec.sampling_rate_hz / 2
    if not 0 < low_hz < high_hz < nyq:
        raise InvalidBand(f"need 0 < {low_hz} < {high_hz} < {nyq}")
    sos = signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=rec.sampling_rate_hz, output="sos")
    y = signal.sosfiltfilt(sos, rec.samples.astype(np.float64), axis=-1)
    return rec.with_samples(y.astype(rec.samples.dtype, copy=False))


# ---------------------------------------------------------------------------
# patching


def window_length(patch_seconds: float, sampling_rate_hz: float) -> int:
    w = patch_seconds * sampling_rate_hz
    if w <= 0 or abs(w - round(w)) > 1e-9:
        raise NonIntegerWindow(f"{patch_seconds} s at {sampling_rate_hz} Hz is not a whole number of samples")
    return int(round(w))


def patch_array(samples: np.ndarray, W: int) -> Tuple[np.ndarray, int]:
    """Split ``(C, T)`` into ``(C, P, W)``, zero-padding the tail.

    Returns the patch array and the true length of the last patch.
    """
    C, T = samples.shape
    P = -(-T // W)
    tail = T - (P - 1) * W
    padded = np.zeros((C, P * W), dtype=samples.dtype)
    padded[:, :T] = samples
    return padded.reshape(C, P, W), tail


def unpatch_array(patches: np.ndarray, T: int) -> np.ndarray:
    C, P, W = patches.shape
    return patches.reshape(C, P * W)[:, :T]


def patchify(rec: Recording, patch_seconds: float = 4.0) -> List[Patch]:
    W = window_length(patch_seconds, rec.sampling_rate_hz)
    arr, tail = patch_array(rec.samples, W)
    C, P, _ = arr.shape
    return [
        Patch(arr[c, p].copy(), c, p, rec.sampling_rate_hz, tail if p == P - 1 else W)
        for c in range(C) for p in range(P)
    ]


def depatchify(patches: Sequence[Patch], C: int, T: int) -> np.ndarray:
    if not patches:
        raise MissingPatch("no patches given")
    W = len(patches[0].values)
    P = -(-T // W)
    slots: Dict[Tuple[int, int], Patch] = {}
    for p in patches:
        key = (p.channel_index, p.patch_index)
        if key in slots:
            raise IndexCollision(f"duplicate patch index {key}")
        if len(p.values) != W:
            raise ShapeMismatch("patches have inconsistent lengths")
        slots[key] = p
    out = np.zeros((C, P, W), dtype=np.asarray(patches[0].values).dtype)
    for c in range(C):
        for j in range(P):
            try:
                out[c, j] = slots[(c, j)].values
            except KeyError:
                raise MissingPatch(f"missing patch (channel={c}, patch={j})") from None
    if len(slots) != C * P:
        raise IndexCollision("patch indices fall outside the declared geometry")
    return unpatch_array(out, T)


def data_root() -> Optional[Path]:
    root = os.environ.get("BRAINCODEC_DATA_ROOT")
    return Path(root) if root else None
