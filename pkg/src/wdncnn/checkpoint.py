"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes   b"WDNCNNCK"
    version      uint32
    config hash  32 bytes  sha256 of the canonical run-config JSON
    manifest_len uint64
    manifest     JSON: {"meta": {...}, "arrays": [{"name", "shape", "offset"}, ...]}
    data         float64 arrays, little-endian, at manifest offsets
    checksum     32 bytes  sha256 of everything above

Each parameter contributes three arrays (``<name>``, ``<name>#adam_m``,
``<name>#adam_v``); ADAM step counts and training progress live in the meta.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import IntegrityError
from .model import WDnCNNConfig, zero_model
from .training import TrainingState

MAGIC = b"WDNCNNCK"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<8sI32sQ")


def config_digest(config: dict) -> str:
    """sha256 over canonical JSON (sorted keys, no whitespace)."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _model_config_dict(config: WDnCNNConfig) -> dict:
    return {
        "channels": config.channels,
        "bnm_depths": list(config.bnm_depths),
        "mapping_depth": config.mapping_depth,
        "feature_width": config.feature_width,
    }


def encode_checkpoint(state: TrainingState, digest: str, extra: dict | None = None) -> bytes:
    params = state.params
    meta = {
        "model": _model_config_dict(params.config),
        "init_seed": params.init_seed,
        "phase": state.phase,
        "epoch": state.epoch,
        "global_epoch": state.global_epoch,
        "pretrain_losses": [float(x).hex() for x in state.pretrain_losses],
        "finished": state.finished,
        "step_counts": {p.name: p.step_count for p in params.parameters()},
        "extra": extra or {},
    }
    arrays, chunks, offset = [], [], 0
    for p in params.parameters():
        for suffix, arr in (("", p.data), ("#adam_m", p.adam_m), ("#adam_v", p.adam_v)):
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            arrays.append({"name": p.name + suffix, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    manifest = json.dumps({"meta": meta, "arrays": arrays}, sort_keys=True).encode()
    body = _HEAD.pack(MAGIC, FORMAT_VERSION, bytes.fromhex(digest), len(manifest)) + manifest + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path: str | os.PathLike, state: TrainingState, digest: str, extra: dict | None = None) -> str:
    """Write atomically (temp file + rename); returns the file's sha256."""
    path = Path(path)
    blob = encode_checkpoint(state, digest, extra)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return hashlib.sha256(blob).hexdigest()


def decode_checkpoint(blob: bytes) -> tuple[TrainingState, str, dict]:
    if len(blob) < _HEAD.size + 32:
        raise IntegrityError("checkpoint is truncated")
    body, checksum = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise IntegrityError("checkpoint checksum mismatch (corrupt or truncated file)")
    magic, version, digest, manifest_len = _HEAD.unpack_from(body)
    if magic != MAGIC:
        raise IntegrityError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise IntegrityError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    start = _HEAD.size
    try:
        manifest = json.loads(body[start : start + manifest_len])
    except ValueError as exc:
        raise IntegrityError(f"unreadable checkpoint manifest: {exc}") from exc
    data = body[start + manifest_len :]
    meta = manifest["meta"]

    stored = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = entry["offset"] + 8 * count
        if end > len(data):
            raise IntegrityError(f"array {entry['name']} runs past the end of the data section")
        stored[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=entry["offset"]).reshape(shape)

    params = zero_model(WDnCNNConfig(**meta["model"]))
    params.init_seed = meta["init_seed"]
    for p in params.parameters():
        try:
            value, m, v = stored[p.name], stored[p.name + "#adam_m"], stored[p.name + "#adam_v"]
        except KeyError as exc:
            raise IntegrityError(f"checkpoint lacks array {exc}") from exc
        if value.shape != p.shape:
            raise IntegrityError(f"{p.name}: stored shape {value.shape}, model expects {p.shape}")
        p.data[...] = value
        p.adam_m[...] = m
        p.adam_v[...] = v
        p.step_count = int(meta["step_counts"][p.name])
    state = TrainingState(
        params=params,
        phase=meta["phase"],
        epoch=meta["epoch"],
        global_epoch=meta["global_epoch"],
        pretrain_losses=[float.fromhex(x) for x in meta["pretrain_losses"]],
        finished=meta["finished"],
    )
    return state, digest.hex(), meta["extra"]


def load_checkpoint(path: str | os.PathLike) -> tuple[TrainingState, str, dict]:
    """Return (state, config digest, extra metadata); raises IntegrityError on any defect."""
    blob = Path(path).read_bytes()
    try:
        return decode_checkpoint(blob)
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"malformed checkpoint metadata: {exc!r}") from exc


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
