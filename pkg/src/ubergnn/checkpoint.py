"""Checkpoint container.

Layout (all integers little-endian)::

    b"UBERGNN\\0"          8-byte magic
    header length          uint64
    header                 UTF-8 JSON, sorted keys
    parameter blocks       float64 '<f8', C order, in header order
    sha256                 32-byte digest of everything above
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ItemVocabulary, UserFeatureSchema
from .errors import IntegrityError, UnsupportedVersionError
from .model import ModelParameters, TrainConfig
from .numeric import Parameter

FORMAT_VERSION = "1"
MAGIC = b"UBERGNN\0"
_DIGEST = 32


@dataclass
class Model:
    """Everything needed to score sessions: config, vocabulary, schema, weights."""

    config: TrainConfig
    params: ModelParameters
    vocab: ItemVocabulary
    schema: UserFeatureSchema
    portraits: dict[str, dict[str, str]] = field(default_factory=dict)
    epoch: int = -1
    metrics: dict = field(default_factory=dict)


def to_bytes(model: Model) -> bytes:
    entries, blocks, offset = [], [], 0
    for p in model.params:
        raw = np.ascontiguousarray(p.value, dtype="<f8").tobytes()
        entries.append({"name": p.name, "shape": list(p.value.shape), "offset": offset,
                        "nbytes": len(raw)})
        blocks.append(raw)
        offset += len(raw)
    header = {
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocabulary": model.vocab.items,
        "schema": model.schema.to_json(),
        "portraits": model.portraits,
        "epoch": model.epoch,
        "metrics": model.metrics,
        "params": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blocks)
    return body + hashlib.sha256(body).digest()


def from_bytes(buf: bytes) -> Model:
    if len(buf) < len(MAGIC) + 8 + _DIGEST or not buf.startswith(MAGIC):
        raise IntegrityError("not a checkpoint file (bad magic or truncated)")
    (head_len,) = struct.unpack_from("<Q", buf, len(MAGIC))
    start = len(MAGIC) + 8
    if start + head_len + _DIGEST > len(buf):
        raise IntegrityError("checkpoint header length exceeds file size")
    try:
        header = json.loads(buf[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"corrupted checkpoint header: {exc}") from None
    version = str(header.get("version"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint format version {version!r} is not supported (expected {FORMAT_VERSION!r})")
    body, digest = buf[:-_DIGEST], buf[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint checksum mismatch")
    data = body[start + head_len:]
    params = []
    try:
        for entry in header["params"]:
            lo, n = entry["offset"], entry["nbytes"]
            if lo + n > len(data):
                raise IntegrityError(f"parameter block {entry['name']} runs past end of file")
            arr = np.frombuffer(data[lo:lo + n], dtype="<f8").astype(np.float64)
            params.append(Parameter(entry["name"], arr.reshape(entry["shape"])))
        config = TrainConfig.from_dict(header["config"])
        model = Model(config, ModelParameters(params), ItemVocabulary(header["vocabulary"]),
                      UserFeatureSchema.from_json(header["schema"]), header.get("portraits", {}),
                      header.get("epoch", -1), header.get("metrics", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"malformed checkpoint contents: {exc}") from None
    return model


def save_checkpoint(model: Model, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(model))
    tmp.replace(path)


def load_checkpoint(path) -> Model:
    return from_bytes(Path(path).read_bytes())
