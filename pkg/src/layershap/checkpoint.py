"""Binary checkpoint format.

Layout (all little-endian)::

    b"SVNUP1"                          magic and format version
    7 x uint32                         vocab_size, d_model, n_heads, n_layers,
                                       ffn_hidden, max_seq_len, seed
    float32 arrays, C order            embedding; per layer q, k, v, o, gate, up,
                                       down, attn_norm, ffn_norm; final_norm; head
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, CheckpointVersionError
from .model import INNER_NAMES, NORM_NAMES, LayerWeights, ModelCheckpoint, ModelConfig

MAGIC = b"SVNUP1"
_HEADER = struct.Struct("<7I")


def _layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.ffn_hidden
    return {
        "q_proj": (d, d), "k_proj": (d, d), "v_proj": (d, d), "o_proj": (d, d),
        "gate_proj": (f, d), "up_proj": (f, d), "down_proj": (d, f),
        "attn_norm": (d,), "ffn_norm": (d,),
    }


def to_bytes(model: ModelCheckpoint) -> bytes:
    c = model.config
    parts = [MAGIC, _HEADER.pack(c.vocab_size, c.d_model, c.n_heads, c.n_layers,
                                 c.ffn_hidden, c.max_seq_len, c.seed)]
    for _, arr in model.named_arrays():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> ModelCheckpoint:
    if buf[: len(MAGIC) - 1] != MAGIC[:-1] or len(buf) < len(MAGIC):
        raise CheckpointVersionError(f"not a checkpoint: magic {buf[:len(MAGIC)]!r}", 0)
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointVersionError(f"unsupported checkpoint version {buf[len(MAGIC) - 1:len(MAGIC)]!r}",
                                     len(MAGIC) - 1)
    offset = len(MAGIC)
    if len(buf) < offset + _HEADER.size:
        raise CheckpointFormatError("truncated config block", len(buf))
    try:
        cfg = ModelConfig(*_HEADER.unpack_from(buf, offset))
    except ValueError as exc:
        raise CheckpointFormatError(f"invalid config block: {exc}", offset) from exc
    offset += _HEADER.size

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape)) * 4
        if offset + n > len(buf):
            raise CheckpointFormatError(f"truncated array of shape {shape}", len(buf))
        arr = np.frombuffer(buf, dtype="<f4", count=n // 4, offset=offset).astype(np.float32)
        if not np.isfinite(arr).all():
            raise CheckpointFormatError("non-finite weight", offset)
        offset += n
        return arr.reshape(shape)

    embedding = take((cfg.vocab_size, cfg.d_model))
    shapes = _layer_shapes(cfg)
    layers = [
        LayerWeights(**{name: take(shapes[name]) for name in INNER_NAMES + NORM_NAMES})
        for _ in range(cfg.n_layers)
    ]
    final_norm = take((cfg.d_model,))
    head = take((cfg.vocab_size, cfg.d_model))
    if offset != len(buf):
        raise CheckpointFormatError(f"{len(buf) - offset} trailing bytes", offset)
    return ModelCheckpoint(cfg, embedding, layers, final_norm, head)


def save_checkpoint(model: ModelCheckpoint, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read {path}: {exc}", 0) from exc
    return from_bytes(buf)
