"""Versioned binary checkpoints for trained models.

Layout: magic "BAGE", uint32 LE version (=1), uint64 LE metadata length,
UTF-8 JSON metadata (architecture, training metadata, parameter manifest
with per-entry name/shape/offset), then raw little-endian float32 blobs in
manifest order. Offsets are relative to the start of the blob section.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import FormatError, InputOutputError
from .model import ArchitectureSpec, build_fused_from_spec, build_single_branch

MAGIC = b"BAGE"
VERSION = 1


def _state_entries(model) -> list[tuple[str, np.ndarray]]:
    entries = [(name, p.data) for name, p in model.named_parameters()]
    entries += [(name, buf) for name, buf in model.named_buffers()]
    return entries


def _training_meta(epoch: int | None, best_val_mae: float | None,
                   seed: int | None) -> dict:
    mae = None
    if best_val_mae is not None and np.isfinite(best_val_mae):
        mae = float(best_val_mae)
    return {"epoch": epoch, "best_val_mae": mae, "seed": seed}


def save_checkpoint(model, path: str | os.PathLike, epoch: int | None = None,
                    best_val_mae: float | None = None,
                    seed: int | None = None) -> None:
    spec = model.spec
    entries = _state_entries(model)
    manifest = []
    offset = 0
    for name, arr in entries:
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4

    meta = {
        "architecture": {
            "input_dims": list(spec.input_dims),
            "input_channels": spec.input_channels,
            "base_feature_maps": spec.base_feature_maps,
            "num_blocks": spec.num_blocks,
            "branches": spec.branches,
            "zscore_inputs": spec.zscore_inputs,
        },
        "training": _training_meta(epoch, best_val_mae, seed),
        "manifest": manifest,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<Q", len(meta_bytes)))
            fh.write(meta_bytes)
            for _, arr in entries:
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    except OSError as exc:
        raise InputOutputError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | os.PathLike):
    """Rebuild the model from a checkpoint; returns (model, metadata dict)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputOutputError(f"cannot read checkpoint {path}: {exc}") from exc

    if len(raw) < 16:
        raise FormatError(f"{path}: unexpected end of checkpoint")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    meta_len = struct.unpack("<Q", raw[8:16])[0]
    if len(raw) < 16 + meta_len:
        raise FormatError(f"{path}: unexpected end of checkpoint")
    try:
        meta = json.loads(raw[16: 16 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint metadata: {exc}") from exc

    arch = meta["architecture"]
    spec = ArchitectureSpec(
        input_dims=tuple(arch["input_dims"]),
        input_channels=arch["input_channels"],
        base_feature_maps=arch["base_feature_maps"],
        num_blocks=arch["num_blocks"],
        branches=arch["branches"],
        zscore_inputs=arch.get("zscore_inputs", False),
    )
    rng = np.random.default_rng(0)  # placeholder init, overwritten below
    if spec.branches == 2:
        model = build_fused_from_spec(spec, rng)
    else:
        model = build_single_branch(spec, rng)

    state = dict(_state_entries(model))
    blobs = raw[16 + meta_len:]
    for entry in meta["manifest"]:
        name = entry["name"]
        if name not in state:
            raise FormatError(f"{path}: unknown parameter {name!r} in manifest")
        arr = state[name]
        shape = tuple(entry["shape"])
        if shape != arr.shape:
            raise FormatError(
                f"{path}: shape mismatch for {name}: file {shape}, model {arr.shape}"
            )
        start = entry["offset"]
        end = start + arr.size * 4
        if end > len(blobs):
            raise FormatError(f"{path}: unexpected end of checkpoint")
        arr[...] = np.frombuffer(blobs[start:end], dtype="<f4").reshape(shape)

    return model, meta


__all__ = ["MAGIC", "VERSION", "save_checkpoint", "load_checkpoint"]
