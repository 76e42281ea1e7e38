"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(format version, metadata, block directory), then raw array bytes in
directory order. Writes are atomic (temp file + rename) and loads never
mutate existing state, so a corrupt file cannot leave a half-restored model.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import NormalizationStats
from ..errors import IncompatibleCheckpoint
from .models import Model, build_model
from .optim import Adam

MAGIC = b"SEPKITC\x01"
FORMAT_VERSION = 1
STAGES = ("dc", "joint", "dl")


def write_container(path: str | Path, blocks: dict[str, np.ndarray], meta: dict) -> None:
    directory = []
    payload = []
    offset = 0
    for name in sorted(blocks):
        arr = np.ascontiguousarray(blocks[name])
        raw = arr.tobytes()
        directory.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payload.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "blocks": directory},
        sort_keys=True,
    ).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in payload:
            fh.write(raw)
    os.replace(tmp, path)


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IncompatibleCheckpoint(f"cannot read checkpoint: {exc}") from exc
    try:
        if data[:8] != MAGIC:
            raise IncompatibleCheckpoint(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise IncompatibleCheckpoint(
                f"{path}: unsupported format version {header['format_version']}"
            )
        base = 16 + header_len
        blocks = {}
        for entry in header["blocks"]:
            lo = base + entry["offset"]
            hi = lo + entry["nbytes"]
            if hi > len(data):
                raise IncompatibleCheckpoint(f"{path}: truncated block {entry['name']}")
            arr = np.frombuffer(data[lo:hi], dtype=np.dtype(entry["dtype"]))
            blocks[entry["name"]] = arr.reshape(entry["shape"]).copy()
        return blocks, header["meta"]
    except IncompatibleCheckpoint:
        raise
    except Exception as exc:
        raise IncompatibleCheckpoint(f"{path}: corrupted checkpoint ({exc})") from exc


@dataclass
class Checkpoint:
    """Everything needed to resume or run a model."""

    model_kind: str
    model_config: dict
    stage: str
    params: dict[str, np.ndarray]
    optimizer: dict | None = None  # {"t", "lr", "arrays"}
    norm_stats: NormalizationStats | None = None
    lineage: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def build_model(self) -> Model:
        model = build_model(self.model_kind, self.model_config)
        model.load_param_arrays(self.params)
        return model


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    if ckpt.stage not in STAGES:
        raise IncompatibleCheckpoint(f"unknown stage {ckpt.stage!r}")
    blocks: dict[str, np.ndarray] = {}
    for name, arr in ckpt.params.items():
        blocks[f"param.{name}"] = arr
    meta = {
        "model_kind": ckpt.model_kind,
        "model_config": ckpt.model_config,
        "stage": ckpt.stage,
        "lineage": ckpt.lineage,
        "extra": ckpt.meta,
        "has_optim": ckpt.optimizer is not None,
        "has_norm": ckpt.norm_stats is not None,
    }
    if ckpt.optimizer is not None:
        meta["optim"] = {"t": int(ckpt.optimizer["t"]), "lr": float(ckpt.optimizer["lr"])}
        blocks.update(ckpt.optimizer["arrays"])
    if ckpt.norm_stats is not None:
        blocks["norm.mean"] = ckpt.norm_stats.mean
        blocks["norm.var"] = ckpt.norm_stats.var
        blocks["norm.degenerate"] = ckpt.norm_stats.degenerate_bins.astype(np.uint8)
    write_container(path, blocks, meta)


def load_checkpoint(path: str | Path) -> Checkpoint:
    blocks, meta = read_container(path)
    try:
        params = {
            name[len("param.") :]: arr for name, arr in blocks.items() if name.startswith("param.")
        }
        optimizer = None
        if meta.get("has_optim"):
            optimizer = {
                "t": meta["optim"]["t"],
                "lr": meta["optim"]["lr"],
                "arrays": {n: a for n, a in blocks.items() if n.startswith("optim.")},
            }
        norm_stats = None
        if meta.get("has_norm"):
            norm_stats = NormalizationStats(
                mean=blocks["norm.mean"],
                var=blocks["norm.var"],
                degenerate_bins=blocks["norm.degenerate"].astype(bool),
            )
        stage = meta["stage"]
        if stage not in STAGES:
            raise IncompatibleCheckpoint(f"unknown stage {stage!r}")
        return Checkpoint(
            model_kind=meta["model_kind"],
            model_config=meta["model_config"],
            stage=stage,
            params=params,
            optimizer=optimizer,
            norm_stats=norm_stats,
            lineage=list(meta.get("lineage", [])),
            meta=dict(meta.get("extra", {})),
        )
    except IncompatibleCheckpoint:
        raise
    except Exception as exc:
        raise IncompatibleCheckpoint(f"{path}: malformed checkpoint metadata ({exc})") from exc


def restore_optimizer(ckpt: Checkpoint, model: Model) -> Adam:
    if ckpt.optimizer is None:
        raise IncompatibleCheckpoint("checkpoint carries no optimizer state")
    adam = Adam(model.params, lr=ckpt.optimizer["lr"])
    adam.load_state_arrays(ckpt.optimizer["arrays"], ckpt.optimizer["t"], ckpt.optimizer["lr"])
    return adam


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
