"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic    8 bytes  b"MODFUSE\\0"
    version  u32
    cfg_len  u32, then cfg_len bytes of UTF-8 JSON (model config, classes, vocab, extras)
    count    u32 parameter records, each:
        name_len u16, name (UTF-8)
        ndim     u8,  dims u32 * ndim
        values   float32 * prod(dims)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .fusion import MultimodalModel
from .text import Vocabulary

MAGIC = b"MODFUSE\0"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint."""


@dataclass
class Checkpoint:
    model_config: ModelConfig
    classes: list[str]
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)

    def build_model(self) -> MultimodalModel:
        model = MultimodalModel(self.model_config, len(self.vocab), np.random.default_rng(0))
        model.load_state_dict(self.params)
        return model


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "model": ckpt.model_config.to_dict(),
        "classes": list(ckpt.classes),
        "vocab": list(ckpt.vocab.itos),
        "extra": ckpt.extra,
    }
    cfg = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(ckpt.params))]
    for name, value in ckpt.params.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(value)
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    try:
        version, cfg_len = struct.unpack_from("<II", blob, 8)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 16
        header = json.loads(blob[pos:pos + cfg_len].decode("utf-8"))
        pos += cfg_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            n = int(np.prod(dims)) if ndim else 1
            values = np.frombuffer(blob, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            params[name] = values.astype(np.float64).reshape(dims)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos != len(blob):
        raise CheckpointError("trailing bytes after parameter records")
    return Checkpoint(ModelConfig.from_dict(header["model"]), header["classes"],
                      Vocabulary.from_list(header["vocab"]), params, header.get("extra", {}))


def from_model(model: MultimodalModel, classes, vocab: Vocabulary, extra: dict | None = None) -> Checkpoint:
    return Checkpoint(model.cfg, list(classes), vocab, model.state_dict(), extra or {})


def save(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
