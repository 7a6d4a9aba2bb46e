"""Deterministic checkpoint archive.

A checkpoint is a zip file with fixed timestamps and sorted entries:
``meta.json`` (configs, counters, history, optimizer hyper-parameters) plus
one ``.npy`` entry per array. Identical training runs therefore produce
byte-identical files.

The content hash covers the codec configuration and every codec array,
quantizer buffers included. Containers store it to bind themselves to the
model that wrote them.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import torch

from .codec import Codec, CodecConfig, build_codec
from .discriminator import DiscriminatorConfig, MultiScaleSTFTDiscriminator, build_discriminator
from .errors import UnreadableFile

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def state_to_numpy(module: torch.nn.Module) -> Dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def content_hash(config: CodecConfig, codec_state: Dict[str, np.ndarray]) -> bytes:
    h = hashlib.sha256()
    h.update(json.dumps(config.to_dict(), sort_keys=True).encode())
    for name in sorted(codec_state):
        arr = np.ascontiguousarray(codec_state[name])
        h.update(name.encode())
        h.update(arr.dtype.str.encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.digest()


def _optim_to_flat(sd: dict, prefix: str, arrays: Dict[str, np.ndarray]) -> dict:
    for idx, slot in sd["state"].items():
        for key, val in slot.items():
            arrays[f"{prefix}/state/{idx}/{key}"] = (
                val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
            )
    return {"param_groups": sd["param_groups"]}


def _optim_from_flat(meta: dict, prefix: str, arrays: Dict[str, np.ndarray]) -> dict:
    state: Dict[int, Dict[str, torch.Tensor]] = {}
    for name, arr in arrays.items():
        if not name.startswith(prefix + "/state/"):
            continue
        idx, key = name[len(prefix) + 7:].split("/")
        state.setdefault(int(idx), {})[key] = torch.from_numpy(arr.copy())
    groups = []
    for g in meta["param_groups"]:
        g = dict(g)
        if "betas" in g:
            g["betas"] = tuple(g["betas"])
        groups.append(g)
    return {"state": state, "param_groups": groups}


@dataclass
class Checkpoint:
    codec_config: CodecConfig
    codec_state: Dict[str, np.ndarray]
    disc_config: Optional[DiscriminatorConfig] = None
    disc_state: Optional[Dict[str, np.ndarray]] = None
    optimizer_state: Dict[str, dict] = field(default_factory=dict)
    balancer_state: Optional[dict] = None
    train_config: Dict[str, Any] = field(default_factory=dict)
    step: int = 0
    history: list = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def content_hash(self) -> bytes:
        return content_hash(self.codec_config, self.codec_state)

    @classmethod
    def from_codec(cls, codec: Codec, **kw) -> "Checkpoint":
        return cls(codec.config, state_to_numpy(codec), **kw)

    def build_codec(self) -> Codec:
        codec = build_codec(self.codec_config, seed=0)
        codec.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.codec_state.items()})
        return codec.eval()

    def build_discriminator(self) -> Optional[MultiScaleSTFTDiscriminator]:
        if self.disc_config is None:
            return None
        disc = build_discriminator(self.disc_config)
        if self.disc_state is not None:
            disc.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.disc_state.items()})
        return disc

    # -- serialization ----------------------------------------------------

    def to_bytes(self) -> bytes:
        arrays: Dict[str, np.ndarray] = {f"codec/{k}": v for k, v in self.codec_state.items()}
        if self.disc_state is not None:
            arrays.update({f"disc/{k}": v for k, v in self.disc_state.items()})
        optim_meta = {
            name: _optim_to_flat(sd, f"optim/{name}", arrays)
            for name, sd in sorted(self.optimizer_state.items())
        }
        meta = {
            "format_version": FORMAT_VERSION,
            "codec_config": self.codec_config.to_dict(),
            "disc_config": self.disc_config.to_dict() if self.disc_config else None,
            "has_disc_state": self.disc_state is not None,
            "optimizer": optim_meta,
            "balancer_state": self.balancer_state,
            "train_config": self.train_config,
            "step": self.step,
            "history": self.history,
            "meta": self.meta,
            "content_hash": self.content_hash.hex(),
        }
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            _write_entry(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
            for name in sorted(arrays):
                arr_buf = io.BytesIO()
                np.save(arr_buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
                _write_entry(zf, name + ".npy", arr_buf.getvalue())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        try:
            zf = zipfile.ZipFile(io.BytesIO(data))
            meta = json.loads(zf.read("meta.json"))
            arrays = {
                n[:-4]: np.load(io.BytesIO(zf.read(n)), allow_pickle=False)
                for n in zf.namelist() if n.endswith(".npy")
            }
        except (zipfile.BadZipFile, KeyError, ValueError) as exc:
            raise UnreadableFile(f"not a checkpoint archive: {exc}") from exc
        if meta.get("format_version") != FORMAT_VERSION:
            raise UnreadableFile(f"unsupported checkpoint version {meta.get('format_version')}")
        codec_state = {k[6:]: v for k, v in arrays.items() if k.startswith("codec/")}
        disc_state = {k[5:]: v for k, v in arrays.items() if k.startswith("disc/")}
        ckpt = cls(
            codec_config=CodecConfig.from_dict(meta["codec_config"]),
            codec_state=codec_state,
            disc_config=DiscriminatorConfig(**meta["disc_config"]) if meta["disc_config"] else None,
            disc_state=disc_state if meta["has_disc_state"] else None,
            optimizer_state={
                name: _optim_from_flat(om, f"optim/{name}", arrays) for name, om in meta["optimizer"].items()
            },
            balancer_state=meta["balancer_state"],
            train_config=meta["train_config"],
            step=meta["step"],
            history=meta["history"],
            meta=meta["meta"],
        )
        if ckpt.content_hash.hex() != meta["content_hash"]:
            raise UnreadableFile("checkpoint content hash does not match its arrays")
        return ckpt


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.write_bytes(ckpt.to_bytes())
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(f"no such checkpoint: {path}")
    return Checkpoint.from_bytes(path.read_bytes())
