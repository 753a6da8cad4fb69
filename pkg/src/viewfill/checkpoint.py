"""Checkpoint format: single binary file, versioned header, exact round-trip.

Layout: 4-byte magic, uint32 format version, uint64 header length, then a
UTF-8 JSON header followed by raw little-endian array blobs in the order the
header declares them. Model parameters round-trip bitwise. The header embeds
the full resolved config and its hash; loading into a mismatched
architecture fails with the offending parameter names.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from viewfill.config import PipelineConfig, config_from_dict, config_hash, config_to_dict
from viewfill.errors import (
    ConfigError,
    CorruptCheckpointError,
    IncompatibleCheckpointError,
)
from viewfill.model import AblationVariant, CompletionModel

MAGIC = b"VFCP"
FORMAT_VERSION = 1

_DTYPES = {"float32": np.float32, "float64": np.float64, "uint8": np.uint8}


@dataclass
class Checkpoint:
    """In-memory checkpoint: parameters plus optional training state."""

    config: PipelineConfig
    variant: AblationVariant
    epoch: int
    params: dict
    extras: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def checkpoint_from_model(
    model: CompletionModel, epoch: int, extras: dict = None, meta: dict = None
) -> Checkpoint:
    params = {
        name: tensor.detach().cpu().numpy().copy()
        for name, tensor in model.state_dict().items()
    }
    return Checkpoint(
        config=model.config,
        variant=model.variant,
        epoch=epoch,
        params=params,
        extras=dict(extras or {}),
        meta=dict(meta or {}),
    )


def _declare(blobs: dict) -> list:
    entries = []
    for name, arr in blobs.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise CorruptCheckpointError(f"unsupported blob dtype {arr.dtype} ({name})")
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name}
        )
    return entries


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    cfg_dict = config_to_dict(ckpt.config)
    header = {
        "config": cfg_dict,
        "config_hash": config_hash(ckpt.config),
        "variant": ckpt.variant.value,
        "epoch": ckpt.epoch,
        "params": _declare(ckpt.params),
        "extras": _declare(ckpt.extras),
        "meta": ckpt.meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for store in (ckpt.params, ckpt.extras):
            for name in store:
                arr = np.ascontiguousarray(store[name])
                f.write(arr.tobytes())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CorruptCheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(
            f"{path}: unsupported format version {version}"
        )
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + header_len:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header: {exc}") from exc

    try:
        config = config_from_dict(header["config"])
    except (KeyError, ConfigError) as exc:
        raise CorruptCheckpointError(f"{path}: bad embedded config: {exc}") from exc
    if config_hash(config) != header.get("config_hash"):
        raise CorruptCheckpointError(f"{path}: config hash mismatch")

    offset = 16 + header_len
    stores = []
    for section in ("params", "extras"):
        store = {}
        for entry in header.get(section, []):
            dtype = _DTYPES[entry["dtype"]]
            count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
            nbytes = count * dtype().itemsize
            if offset + nbytes > len(blob):
                raise CorruptCheckpointError(
                    f"{path}: truncated blob for {entry['name']}"
                )
            arr = np.frombuffer(
                blob, dtype=dtype, count=count, offset=offset
            ).reshape(entry["shape"])
            store[entry["name"]] = arr.copy()
            offset += nbytes
        stores.append(store)
    if offset != len(blob):
        raise CorruptCheckpointError(f"{path}: trailing bytes after blobs")

    return Checkpoint(
        config=config,
        variant=AblationVariant.from_string(header["variant"]),
        epoch=int(header["epoch"]),
        params=stores[0],
        extras=stores[1],
        meta=header.get("meta", {}),
    )


def load_into_model(model: CompletionModel, ckpt: Checkpoint) -> None:
    """Copy checkpoint parameters into a model, verifying exact compatibility."""
    state = model.state_dict()
    missing = sorted(set(state) - set(ckpt.params))
    unexpected = sorted(set(ckpt.params) - set(state))
    if missing or unexpected:
        parts = []
        if missing:
            parts.append(f"missing parameters: {', '.join(missing)}")
        if unexpected:
            parts.append(f"unexpected parameters: {', '.join(unexpected)}")
        raise IncompatibleCheckpointError("; ".join(parts))
    for name, tensor in state.items():
        arr = ckpt.params[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise IncompatibleCheckpointError(
                f"shape mismatch for {name}: checkpoint {tuple(arr.shape)} "
                f"vs model {tuple(tensor.shape)}"
            )
    with torch.no_grad():
        for name, tensor in state.items():
            tensor.copy_(torch.from_numpy(ckpt.params[name]))


def model_from_checkpoint(ckpt: Checkpoint) -> CompletionModel:
    """Rebuild the architecture recorded in a checkpoint and load its weights."""
    model = CompletionModel(ckpt.config, ckpt.variant)
    load_into_model(model, ckpt)
    return model
