"""Self-describing binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic ``b"ODECAST\\0"``
    bytes 8..11   uint32 format version (currently 1)
    bytes 12..19  uint64 byte length of the JSON header
    then          UTF-8 JSON header
    then          raw float64 little-endian arrays, back to back

The header carries the architecture record, feature names, observation
noise, normalization statistics, free-form metadata, and an array
manifest (name, shape, byte offset into the data section). Everything
needed to rebuild the model lives in the file; version mismatches are
rejected rather than guessed at.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import CheckpointFormatError
from .model import Architecture, ModelParams
from .series import NormStats

MAGIC = b"ODECAST\x00"
FORMAT_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    names = sorted(params.weights)
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params.weights[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = {
        "architecture": params.arch.to_dict(),
        "feature_names": list(params.feature_names),
        "obs_noise": [float(x) for x in params.obs_noise],
        "norm_stats": params.norm_stats.to_dict() if params.norm_stats else None,
        "meta": params.meta,
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint64(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    version = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})")
    header_len = int(np.frombuffer(raw[12:20], dtype="<u8")[0])
    try:
        header = json.loads(raw[20:20 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"checkpoint header unreadable: {exc}") from exc
    data = raw[20 + header_len:]
    weights = {}
    for entry in header["arrays"]:
        shape = tuple(int(x) for x in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + 8 * count
        if end > len(data):
            raise CheckpointFormatError(f"array {entry['name']} overruns the data section")
        weights[entry["name"]] = np.frombuffer(data[start:end], dtype="<f8").reshape(shape).copy()
    arch = Architecture.from_dict(header["architecture"])
    stats = NormStats.from_dict(header["norm_stats"]) if header.get("norm_stats") else None
    return ModelParams(arch=arch, weights=weights,
                       obs_noise=np.asarray(header["obs_noise"], dtype=np.float64),
                       feature_names=[str(n) for n in header["feature_names"]],
                       norm_stats=stats, meta=header.get("meta", {}))


def checkpoint_hash(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
