"""Downstream-fidelity evaluation.

The harness takes trained checkpoints as inputs and never trains a codec.
It reconstructs recordings through the full container pipeline, runs
pluggable window classifiers on original and reconstructed signals, and
writes rate-distortion and degradation reports as CSV.

Window convention: non-overlapping windows of ``window_seconds``; a window
is positive when at least ``min_overlap`` of it lies inside annotations
whose label is in ``positive_labels``. A trailing partial window is dropped.

Leave-one-seizure-out: every recording of a subject is cut into segments
holding exactly one event, with boundaries at the midpoint of the gap
between consecutive events. Recordings without events only ever serve as
training data. Each segment is held out once; the subject's score is the
mean over its folds and the dataset score weights subjects by event count.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np
import torch
from torch import nn

from .errors import InsufficientEvents, InvalidConfig, NoLabels, UnreadableFile, ZeroReference
from .metrics import MetricReport, aggregate, patch_report
from .pipeline import LoadedModel, ModelLike, as_model, patch_length_for, reconstruct_recording
from .signal_io import Modality, Recording, load_recording, patch_array


class Direction(str, enum.Enum):
    TRAIN_ORIG_TEST_REC = "train_orig_test_rec"
    TRAIN_REC_TEST_ORIG = "train_rec_test_orig"
    TRAIN_REC_TEST_REC = "train_rec_test_rec"


class CrossValidation(str, enum.Enum):
    LEAVE_ONE_SEIZURE_OUT = "leave_one_seizure_out"
    FIXED_SPLIT = "fixed_split"


@dataclass
class ProtocolConfig:
    direction: Direction = Direction.TRAIN_ORIG_TEST_REC
    cv: CrossValidation = CrossValidation.LEAVE_ONE_SEIZURE_OUT
    classifier_epochs: int = 50
    classifier_lr: float = 3e-4
    window_seconds: float = 5.0
    batch_size: int = 128
    metric: str = "f1"
    min_overlap: float = 0.5
    positive_labels: Tuple[str, ...] = ("seizure",)
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        self.direction = Direction(self.direction)
        self.cv = CrossValidation(self.cv)
        self.positive_labels = tuple(self.positive_labels)
        if self.metric not in ("f1", "accuracy"):
            raise InvalidConfig(f"unknown metric {self.metric!r}")
        if self.window_seconds <= 0 or not 0 < self.min_overlap <= 1:
            raise InvalidConfig("window_seconds must be positive and min_overlap in (0, 1]")
        if self.classifier_epochs < 1 or self.batch_size < 1 or self.classifier_lr <= 0:
            raise InvalidConfig("classifier epochs, batch size and learning rate must be positive")
        if not 0 < self.train_fraction < 1:
            raise InvalidConfig("train_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(direction=self.direction.value, cv=self.cv.value, positive_labels=list(self.positive_labels))
        return d


# ---------------------------------------------------------------------------
# windows and labels

def window_samples(rec: Recording, window_seconds: float) -> int:
    n = int(round(window_seconds * rec.sampling_rate_hz))
    if n < 1:
        raise InvalidConfig("window shorter than one sample")
    return n


def event_intervals(rec: Recording, positive_labels: Sequence[str]) -> List[Tuple[int, int]]:
    return sorted((a, b) for a, b, lbl in rec.annotations if lbl in positive_labels)


def _starts(rec: Recording, n: int, hop: Optional[int]) -> np.ndarray:
    return np.arange(0, rec.n_samples - n + 1, hop or n)


def window_labels(rec: Recording, protocol: ProtocolConfig, hop_seconds: Optional[float] = None) -> np.ndarray:
    """Per-window 0/1 labels. ``hop_seconds=None`` means non-overlapping windows."""
    n = window_samples(rec, protocol.window_seconds)
    hop = window_samples(rec, hop_seconds) if hop_seconds else None
    inside = np.zeros(rec.n_samples + 1, dtype=np.int64)
    for a, b in event_intervals(rec, protocol.positive_labels):
        inside[a:b] = 1
    csum = np.concatenate([[0], np.cumsum(inside[:-1])])
    starts = _starts(rec, n, hop)
    covered = csum[starts + n] - csum[starts]
    return (covered >= protocol.min_overlap * n).astype(np.int64)


def windows(rec: Recording, protocol: ProtocolConfig, hop_seconds: Optional[float] = None) -> np.ndarray:
    """``(n_windows, C, window)`` array; windows start every ``hop_seconds`` (default: one window)."""
    n = window_samples(rec, protocol.window_seconds)
    hop = window_samples(rec, hop_seconds) if hop_seconds else None
    starts = _starts(rec, n, hop)
    return np.stack([rec.samples[:, s:s + n] for s in starts]) if len(starts) else \
        np.zeros((0, rec.n_channels, n), dtype=rec.samples.dtype)


def window_dataset(recordings: Sequence[Recording], protocol: ProtocolConfig,
                   hop_seconds: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    xs = [windows(r, protocol, hop_seconds) for r in recordings]
    ys = [window_labels(r, protocol, hop_seconds) for r in recordings]
    return np.concatenate(xs), np.concatenate(ys)


def slice_recording(rec: Recording, start: int, stop: int) -> Recording:
    """Samples ``[start, stop)`` with annotations clipped and shifted."""
    ann = [(max(a, start) - start, min(b, stop) - start, lbl)
           for a, b, lbl in rec.annotations if a < stop and b > start]
    return Recording(rec.samples[:, start:stop], rec.sampling_rate_hz, rec.modality, annotations=ann,
                     channel_names=rec.channel_names, electrode_groups=rec.electrode_groups)


def event_segments(rec: Recording, positive_labels: Sequence[str]) -> List[Tuple[int, int]]:
    """Cut ``rec`` into spans holding one event each; empty if it has none."""
    events = event_intervals(rec, positive_labels)
    if not events:
        return []
    cuts = [0] + [(events[i][1] + events[i + 1][0]) // 2 for i in range(len(events) - 1)] + [rec.n_samples]
    return list(zip(cuts[:-1], cuts[1:]))


# ---------------------------------------------------------------------------
# classifier adapters

@runtime_checkable
class ClassifierAdapter(Protocol):
    """Window classifier plugin. Must be deterministic for a given seed."""

    name: str

    def train(self, recordings: Sequence[Recording], protocol: ProtocolConfig, seed: int) -> Any:
        ...

    def predict(self, handle: Any, recording: Recording, protocol: ProtocolConfig) -> np.ndarray:
        """Scores in [0, 1], one per window; 0.5 is the decision threshold."""
        ...


class OracleAdapter:
    """Returns the ground truth. Degradation is zero by construction."""

    name = "oracle"

    def train(self, recordings, protocol, seed):
        return None

    def predict(self, handle, recording, protocol):
        return window_labels(recording, protocol).astype(np.float64)


class ConstantAdapter:
    name = "constant"

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def train(self, recordings, protocol, seed):
        return self.value

    def predict(self, handle, recording, protocol):
        return np.full(len(window_labels(recording, protocol)), handle)


class _WindowCNN(nn.Module):
    """Learned filter bank, log-energy pooling, channel average, linear head.

    Features are standardised and the head starts at zero, so the few
    optimiser steps of a short protocol go straight into a useful direction.
    """

    def __init__(self, filters: int = 8, kernel: int = 33):
        super().__init__()
        self.filters = nn.Conv1d(1, filters, kernel, padding=kernel // 2)
        self.norm = nn.BatchNorm1d(filters, affine=False)
        self.head = nn.Linear(filters, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        n, C, L = x.shape
        h = self.filters(x.reshape(n * C, 1, L))
        energy = torch.log(h.pow(2).mean(-1) + 1e-6).reshape(n, C, -1).mean(1)
        return self.head(self.norm(energy)).squeeze(1)


@dataclass
class CNNHandle:
    model: _WindowCNN
    scale: float


class ReferenceCNNAdapter:
    """Small convolutional window classifier for synthetic tests.

    Not one of the published downstream models; it exists so the
    degradation protocol can run end to end without external code.
    """

    name = "reference_cnn"

    def __init__(self, filters: int = 8, train_hop_seconds: float = 0.5):
        self.n_filters = filters
        self.train_hop_seconds = train_hop_seconds

    def train(self, recordings, protocol, seed):
        # Overlapping training windows: more optimiser steps per epoch on short data.
        x, y = window_dataset(recordings, protocol, self.train_hop_seconds)
        scale = float(x.std()) or 1.0
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            model = _WindowCNN(self.n_filters)
            xt = torch.as_tensor(x / scale, dtype=torch.float32)
            yt = torch.as_tensor(y, dtype=torch.float32)
            pos = float(yt.sum())
            weight = torch.tensor((len(yt) - pos) / pos if pos else 1.0)
            loss_fn = nn.BCEWithLogitsLoss(pos_weight=weight)
            opt = torch.optim.Adam(model.parameters(), lr=protocol.classifier_lr)
            gen = torch.Generator().manual_seed(seed)
            model.train()
            for _ in range(protocol.classifier_epochs):
                for idx in torch.randperm(len(xt), generator=gen).split(protocol.batch_size):
                    opt.zero_grad()
                    loss_fn(model(xt[idx]), yt[idx]).backward()
                    opt.step()
        return CNNHandle(model.eval(), scale)

    @torch.no_grad()
    def predict(self, handle: CNNHandle, recording, protocol):
        x = torch.as_tensor(windows(recording, protocol) / handle.scale, dtype=torch.float32)
        if len(x) == 0:
            return np.zeros(0)
        return torch.sigmoid(handle.model(x)).double().numpy()


def score(labels: np.ndarray, scores: np.ndarray, metric: str = "f1") -> float:
    """Window-level F1 or accuracy. F1 with no positives on either side is 1."""
    labels = np.asarray(labels, dtype=bool)
    pred = np.asarray(scores) >= 0.5
    if metric == "accuracy":
        return float(np.mean(pred == labels)) if labels.size else float("nan")
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


# ---------------------------------------------------------------------------
# datasets and manifests

@dataclass
class Subject:
    id: str
    recordings: List[Recording]


@dataclass
class Dataset:
    name: str
    subjects: List[Subject]

    @property
    def recordings(self) -> List[Recording]:
        return [r for s in self.subjects for r in s.recordings]


def _resolve(path: str, manifest_dir: Path) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    root = os.environ.get("BRAINCODEC_DATA_ROOT")
    return (Path(root) if root else manifest_dir) / p


def load_manifest(path) -> Dataset:
    """Read a JSON manifest.

    ::

        {"name": "swec", "modality": "iEEG",
         "subjects": [{"id": "ID02", "recordings": [
             {"path": "ID02/rec1.bcraw", "format": "bcraw", "sampling_rate_hz": 512,
              "annotations": [[120.0, 160.5, "seizure"]]}]}]}

    Relative paths resolve against ``BRAINCODEC_DATA_ROOT`` when set, else the
    manifest's directory. Annotation times are in seconds and are merged with
    any annotations stored alongside the recording.
    """
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UnreadableFile(f"cannot read manifest {path}: {exc}") from exc
    modality = spec.get("modality")
    subjects = []
    for subj in spec.get("subjects", []):
        recs = []
        for entry in subj.get("recordings", []):
            kw = {"sampling_rate_hz": entry["sampling_rate_hz"]} if "sampling_rate_hz" in entry else {}
            rec = load_recording(_resolve(entry["path"], path.parent), entry.get("format"), **kw)
            fs = rec.sampling_rate_hz
            extra = [(int(round(a * fs)), min(rec.n_samples, int(round(b * fs))), str(lbl))
                     for a, b, lbl in entry.get("annotations", [])]
            changes = {"annotations": list(rec.annotations) + extra}
            if modality is not None:
                changes["modality"] = Modality[modality] if isinstance(modality, str) else Modality(modality)
            recs.append(rec.with_samples(rec.samples, **changes))
        subjects.append(Subject(str(subj["id"]), recs))
    return Dataset(spec.get("name", path.stem), subjects)


# ---------------------------------------------------------------------------
# reconstruction metrics

class ReconstructionCache:
    """Memoises reconstructions per recording object for one model."""

    def __init__(self, model: ModelLike):
        self.model: LoadedModel = as_model(model)
        self._cache: Dict[int, Tuple[Recording, Recording]] = {}

    def __call__(self, rec: Recording) -> Recording:
        hit = self._cache.get(id(rec))
        if hit is None or hit[0] is not rec:
            hit = (rec, reconstruct_recording(rec, self.model))
            self._cache[id(rec)] = hit
        return hit[1]


def recording_reports(rec: Recording, rec_hat: Recording, W: int, nominal_cr: float) -> List[MetricReport]:
    """Per-patch reports on the codec's own patch grid. All-zero patches are skipped."""
    x, _ = patch_array(rec.samples.astype(np.float64), W)
    y, _ = patch_array(rec_hat.samples.astype(np.float64), W)
    reports = []
    for a, b in zip(x.reshape(-1, W), y.reshape(-1, W)):
        try:
            reports.append(patch_report(a, b, nominal_cr))
        except ZeroReference:
            continue
    return reports


def dataset_report(recordings: Sequence[Recording], model: ModelLike,
                   cache: Optional[ReconstructionCache] = None) -> Dict[str, MetricReport]:
    model = as_model(model)
    cache = cache or ReconstructionCache(model)
    reports: List[MetricReport] = []
    for rec in recordings:
        W = patch_length_for(model, rec.sampling_rate_hz)
        reports += recording_reports(rec, cache(rec), W, model.nominal_cr)
    return {"median": aggregate(reports, "median"), "mean": aggregate(reports, "mean")}


# ---------------------------------------------------------------------------
# degradation protocol

DEGRADATION_COLUMNS = [
    "subject", "n_events", "metric", "score_original", "score_reconstructed", "degradation",
    "direction", "cv", "nominal_cr", "median_prd", "classifier", "classifier_epochs",
    "classifier_lr", "window_seconds", "batch_size", "min_overlap", "seed", "model_hash",
]


@dataclass
class SubjectResult:
    subject: str
    n_events: int
    score_original: float
    score_reconstructed: float
    fold_scores: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def degradation(self) -> float:
        return self.score_original - self.score_reconstructed


@dataclass
class DegradationReport:
    subjects: List[SubjectResult]
    protocol: ProtocolConfig
    classifier: str
    nominal_cr: float
    median_prd: float
    model_hash: str

    @property
    def total_events(self) -> int:
        return sum(s.n_events for s in self.subjects)

    def _weighted(self, attr: str) -> float:
        w = np.array([s.n_events for s in self.subjects], dtype=np.float64)
        v = np.array([getattr(s, attr) for s in self.subjects], dtype=np.float64)
        return float(np.sum(w * v) / np.sum(w))

    @property
    def score_original(self) -> float:
        return self._weighted("score_original")

    @property
    def score_reconstructed(self) -> float:
        return self._weighted("score_reconstructed")

    @property
    def degradation(self) -> float:
        return self.score_original - self.score_reconstructed

    def rows(self) -> List[dict]:
        common = {
            "metric": self.protocol.metric, "direction": self.protocol.direction.value,
            "cv": self.protocol.cv.value, "nominal_cr": self.nominal_cr, "median_prd": self.median_prd,
            "classifier": self.classifier, "classifier_epochs": self.protocol.classifier_epochs,
            "classifier_lr": self.protocol.classifier_lr, "window_seconds": self.protocol.window_seconds,
            "batch_size": self.protocol.batch_size, "min_overlap": self.protocol.min_overlap,
            "seed": self.protocol.seed, "model_hash": self.model_hash,
        }
        out = [dict(common, subject=s.subject, n_events=s.n_events, score_original=s.score_original,
                    score_reconstructed=s.score_reconstructed, degradation=s.degradation)
               for s in self.subjects]
        out.append(dict(common, subject="ALL", n_events=self.total_events,
                        score_original=self.score_original, score_reconstructed=self.score_reconstructed,
                        degradation=self.degradation))
        return out

    def write_csv(self, path) -> Path:
        return write_csv(path, DEGRADATION_COLUMNS, self.rows())


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Sequence[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row.get(c, "")) for c in columns])
    return path


Span = Tuple[Recording, int, int]


def _folds(subject: Subject, protocol: ProtocolConfig):
    """Yield ``(train_spans, test_spans)`` for one subject.

    Spans index the full recordings so that each recording is reconstructed
    once, as a whole, and then cut.
    """
    segments: List[Span] = []
    background: List[Span] = []
    for rec in subject.recordings:
        spans = event_segments(rec, protocol.positive_labels)
        if spans:
            segments += [(rec, a, b) for a, b in spans]
        else:
            background.append((rec, 0, rec.n_samples))
    if not segments:
        raise NoLabels(f"subject {subject.id} has no {'/'.join(protocol.positive_labels)} annotations")
    if len(segments) < 2:
        raise InsufficientEvents(f"subject {subject.id} has {len(segments)} event(s); at least 2 are needed")
    if protocol.cv is CrossValidation.LEAVE_ONE_SEIZURE_OUT:
        for i in range(len(segments)):
            yield background + segments[:i] + segments[i + 1:], [segments[i]]
    else:
        n_train = min(len(segments) - 1, max(1, math.ceil(protocol.train_fraction * len(segments))))
        yield background + segments[:n_train], segments[n_train:]


def _materialise(spans: Sequence[Span], source) -> List[Recording]:
    return [slice_recording(source(rec), a, b) for rec, a, b in spans]


def _identity(rec: Recording) -> Recording:
    return rec


def _evaluate(adapter: ClassifierAdapter, handle, tests: Sequence[Recording], protocol: ProtocolConfig) -> float:
    labels = np.concatenate([window_labels(r, protocol) for r in tests])
    scores = np.concatenate([np.asarray(adapter.predict(handle, r, protocol), dtype=np.float64) for r in tests])
    return score(labels, scores, protocol.metric)


def run_protocol(dataset: Union[Dataset, Sequence[Subject]], adapter: ClassifierAdapter,
                 protocol: Optional[ProtocolConfig], checkpoint: ModelLike) -> DegradationReport:
    """Compare classifier performance on original and reconstructed data.

    The baseline always trains and tests on originals; ``protocol.direction``
    selects which side of the comparison sees reconstructions.
    """
    protocol = protocol or ProtocolConfig()
    subjects = dataset.subjects if isinstance(dataset, Dataset) else list(dataset)
    model = as_model(checkpoint)
    recon = ReconstructionCache(model)
    train_rec = protocol.direction in (Direction.TRAIN_REC_TEST_ORIG, Direction.TRAIN_REC_TEST_REC)
    test_rec = protocol.direction in (Direction.TRAIN_ORIG_TEST_REC, Direction.TRAIN_REC_TEST_REC)

    results, seed = [], protocol.seed
    for subject in subjects:
        folds = []
        for train, test in _folds(subject, protocol):
            handle = adapter.train(_materialise(train, _identity), protocol, seed)
            base = _evaluate(adapter, handle, _materialise(test, _identity), protocol)
            if train_rec:
                handle = adapter.train(_materialise(train, recon), protocol, seed)
            other = _evaluate(adapter, handle, _materialise(test, recon if test_rec else _identity), protocol)
            folds.append((base, other))
            seed += 1
        n_events = sum(len(event_intervals(r, protocol.positive_labels)) for r in subject.recordings)
        results.append(SubjectResult(subject.id, n_events, float(np.mean([f[0] for f in folds])),
                                     float(np.mean([f[1] for f in folds])), folds))

    prd = dataset_report([r for s in subjects for r in s.recordings], model, recon)["median"].prd
    return DegradationReport(results, protocol, adapter.name, model.nominal_cr, prd, model.model_hash.hex())


# ---------------------------------------------------------------------------
# rate-distortion sweep

RD_COLUMNS = [
    "dataset", "model", "train_dataset", "nominal_cr", "median_prd", "mean_prd", "median_prd_spec",
    "mean_rmse", "mean_snr_db", "mean_psnr_db", "n_patches", "model_hash",
]


def rate_distortion_sweep(datasets: Union[Dataset, Mapping[str, Sequence[Recording]]],
                          checkpoints: Sequence[Union[ModelLike, Tuple[str, ModelLike]]],
                          report_path=None) -> List[dict]:
    """One row per (dataset, checkpoint), sorted by nominal CR.

    Any checkpoint can be evaluated on any dataset, so cross-modal tables
    come from the ``train_dataset`` column (read from checkpoint metadata).
    """
    if isinstance(datasets, Dataset):
        datasets = {datasets.name: datasets.recordings}
    rows = []
    for i, item in enumerate(checkpoints):
        label, ckpt = item if isinstance(item, tuple) else (None, item)
        model = as_model(ckpt)
        meta = model.checkpoint.meta
        label = label or meta.get("name") or f"model{i}"
        for name, recs in datasets.items():
            rep = dataset_report(recs, model)
            med, mean = rep["median"], rep["mean"]
            rows.append({
                "dataset": name, "model": label, "train_dataset": meta.get("train_dataset", ""),
                "nominal_cr": model.nominal_cr, "median_prd": med.prd, "mean_prd": mean.prd,
                "median_prd_spec": med.prd_spec, "mean_rmse": med.rmse, "mean_snr_db": med.snr_db,
                "mean_psnr_db": med.psnr_db, "n_patches": med.n_patches, "model_hash": model.model_hash.hex(),
            })
    rows.sort(key=lambda r: r["nominal_cr"])
    if report_path is not None:
        write_csv(report_path, RD_COLUMNS, rows)
    return rows
