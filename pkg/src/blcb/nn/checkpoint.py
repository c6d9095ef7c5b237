"""Versioned binary checkpoints.

Layout::

    8 bytes   magic  b"BLCBCKPT"
    4 bytes   format version, little-endian uint32
    4 bytes   header length N, little-endian uint32
    N bytes   UTF-8 JSON: {"config": ..., "tensors": [{"name", "shape"}, ...], "meta": ...}
    ...       tensors in header order, little-endian float32, C order

Round trips are bit-exact for float32 models.
"""
import json
import os
import struct

import numpy as np

from ..errors import ConfigError, DecodeError, MissingArtifactError
from .model import ModelConfig, build_model

MAGIC = b"BLCBCKPT"
VERSION = 1
_LE_F32 = np.dtype("<f4")


def save_checkpoint(model, path, meta=None):
    state = model.state_dict()
    names = sorted(state)
    header = {"config": model.cfg.to_dict(),
              "tensors": [{"name": n, "shape": list(state[n].shape)} for n in names],
              "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(state[n], dtype=_LE_F32).tobytes())
    os.replace(tmp, path)


def read_header(path):
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path):
    if fh.read(len(MAGIC)) != MAGIC:
        raise DecodeError(f"{path}: not a model checkpoint (bad magic)")
    raw = fh.read(8)
    if len(raw) != 8:
        raise DecodeError(f"{path}: truncated checkpoint header")
    version, size = struct.unpack("<II", raw)
    if version != VERSION:
        raise DecodeError(f"{path}: checkpoint version {version}, expected {VERSION}")
    try:
        return json.loads(fh.read(size).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"{path}: corrupt checkpoint header") from exc


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns ``(model, meta)``."""
    if not os.path.exists(path):
        raise MissingArtifactError(f"checkpoint not found: {path} (run the 'train' stage)")
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        state = {}
        for t in header["tensors"]:
            count = int(np.prod(t["shape"], dtype=np.int64))
            data = fh.read(count * 4)
            if len(data) != count * 4:
                raise DecodeError(f"{path}: truncated tensor {t['name']}")
            state[t["name"]] = np.frombuffer(data, dtype=_LE_F32).reshape(t["shape"])
        if fh.read(1):
            raise DecodeError(f"{path}: trailing bytes after last tensor")
    try:
        cfg = ModelConfig.from_dict(header["config"])
    except TypeError as exc:
        raise ConfigError(f"{path}: unrecognized model config ({exc})") from exc
    model = build_model(cfg)
    model.load_state_dict(state)
    return model, header.get("meta", {})
