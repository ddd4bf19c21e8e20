"""Binary checkpoint format.

Layout::

    b"DDS1"                 magic
    u32 little-endian       format version
    u64 little-endian       JSON header length in bytes
    JSON header             config, vocabularies, gene list, normalization,
                            seed and a tensor manifest (name, shape, offset)
    payload                 little-endian float32 tensors, back to back
    u32 little-endian       CRC32 of the payload
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .chem import featurizer_vocab
from .data import NormalizationStats
from .net import DeepDDSModel, ModelConfig, init_model

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "CheckpointError",
    "CheckpointIOError",
    "BadMagic",
    "VersionMismatch",
    "CorruptTensor",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"DDS1"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(Exception):
    pass


class CheckpointIOError(CheckpointError, OSError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptTensor(CheckpointError):
    pass


def save_checkpoint(model: DeepDDSModel, path, extra: dict | None = None):
    """Write ``model`` to ``path``; parameters are stored as float32."""
    manifest, chunks, offset = [], [], 0
    for name, t, _ in model.named_parameters():
        buf = t.data.astype("<f4").tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    header = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "featurizer_vocab": featurizer_vocab(),
        "gene_list": list(model.gene_list),
        "normalization": model.normalization.to_dict() if model.normalization else None,
        "metadata": {**model.metadata, **(extra or {})},
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + payload
    blob += struct.pack("<I", zlib.crc32(payload))
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise CheckpointIOError(str(exc)) from exc


def read_header(path) -> dict:
    header, _ = _read(path)
    return header


def _read(path) -> tuple[dict, bytes]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointIOError(str(exc)) from exc
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic(f"{path}: not a checkpoint (bad magic)")
    if len(blob) < _PREFIX.size:
        raise CorruptTensor(f"{path}: truncated prefix")
    _, version, header_len = _PREFIX.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    body_start = _PREFIX.size + header_len
    if len(blob) < body_start + 4:
        raise CorruptTensor(f"{path}: truncated header")
    try:
        header = json.loads(blob[_PREFIX.size:body_start])
    except ValueError as exc:
        raise CorruptTensor(f"{path}: unreadable header ({exc})") from exc
    payload = blob[body_start:-4]
    expected = sum(t["nbytes"] for t in header["tensors"])
    if len(payload) != expected:
        raise CorruptTensor(f"{path}: payload is {len(payload)} bytes, manifest says {expected}")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != zlib.crc32(payload):
        raise CorruptTensor(f"{path}: payload checksum mismatch")
    return header, payload


def load_checkpoint(path) -> DeepDDSModel:
    header, payload = _read(path)
    if header["featurizer_vocab"] != featurizer_vocab():
        raise VersionMismatch(f"{path}: atom feature layout differs from this build")
    config = ModelConfig(**header["config"])
    norm = header.get("normalization")
    model = init_model(
        config, header["gene_list"], header["seed"],
        NormalizationStats.from_dict(norm) if norm else None,
    )
    model.metadata = dict(header.get("metadata", {}))
    state = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if entry["nbytes"] != 4 * n or entry["offset"] + entry["nbytes"] > len(payload):
            raise CorruptTensor(f"{path}: bad extent for tensor {entry['name']}")
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=entry["offset"])
        state[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    missing = {name for name, _, _ in model.named_parameters()} - state.keys()
    if missing:
        raise CorruptTensor(f"{path}: missing tensors {sorted(missing)}")
    model.load_state(state)
    return model
