"""Named-tensor checkpoint files.

Layout (all integers little-endian)::

    b"SDCF" | u32 version=1 | u32 entry count
    per entry: u32 name length | UTF-8 name | u32 rank | u64 extent * rank
               | u8 dtype tag (0 = f32) | raw f32 payload
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from shadoc.config import ModelConfig
from shadoc.errors import CheckpointMismatchError, DecodeError, FormatError

MAGIC = b"SDCF"
VERSION = 1
DTYPE_F32 = 0
CONFIG_KEY = "meta.model_config"


@dataclass
class Checkpoint:
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    def add(self, name: str, array) -> None:
        if name in self.entries:
            raise FormatError(f"duplicate checkpoint entry '{name}'")
        self.entries[name] = np.ascontiguousarray(array, dtype=np.float32)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", self.version, len(self.entries))]
        for name, arr in self.entries.items():
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)) + raw)
            parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            parts.append(struct.pack("<B", DTYPE_F32))
            parts.append(arr.astype("<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> Checkpoint:
        if buf[:4] != MAGIC:
            raise FormatError("bad checkpoint magic (expected SDCF)")
        pos = 4

        def take(n: int, what: str) -> bytes:
            nonlocal pos
            if pos + n > len(buf):
                raise DecodeError(f"truncated checkpoint while reading {what}", pos)
            chunk = buf[pos:pos + n]
            pos += n
            return chunk

        version, count = struct.unpack("<II", take(8, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        ckpt = cls(version=version)
        for _ in range(count):
            start = pos
            (nlen,) = struct.unpack("<I", take(4, "name length"))
            try:
                name = take(nlen, "name").decode("utf-8")
            except UnicodeDecodeError:
                raise DecodeError("entry name is not valid UTF-8", start + 4) from None
            (rank,) = struct.unpack("<I", take(4, "rank"))
            shape = struct.unpack(f"<{rank}Q", take(8 * rank, "extents"))
            (tag,) = struct.unpack("<B", take(1, "dtype tag"))
            if tag != DTYPE_F32:
                raise FormatError(f"entry '{name}' has unknown dtype tag {tag}")
            n = int(np.prod(shape, dtype=np.int64))
            payload = take(4 * n, f"payload of '{name}'")
            if name in ckpt.entries:
                raise FormatError(f"duplicate checkpoint entry '{name}'")
            ckpt.entries[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
        if pos != len(buf):
            raise DecodeError("trailing bytes after last entry", pos)
        return ckpt


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def encode_model_config(config: ModelConfig) -> np.ndarray:
    fields = [config.base_channels, config.blocks_per_level, config.heads, config.dgfn_expansion,
              config.std_channels, config.std_blocks, int(config.use_std),
              int(config.use_aggregation), int(config.use_cdgf), *config.spp_scales]
    return np.array(fields, dtype=np.float32)


def decode_model_config(vec: np.ndarray) -> ModelConfig:
    v = [int(x) for x in vec]
    if len(v) < 10:
        raise CheckpointMismatchError(f"{CONFIG_KEY} entry too short ({len(v)} values)")
    return ModelConfig(base_channels=v[0], blocks_per_level=v[1], heads=v[2], dgfn_expansion=v[3],
                       std_channels=v[4], std_blocks=v[5], use_std=bool(v[6]),
                       use_aggregation=bool(v[7]), use_cdgf=bool(v[8]), spp_scales=tuple(v[9:]))


def model_checkpoint(model, extra=()) -> Checkpoint:
    """Model config, parameters, then any extra (name, array) entries."""
    ckpt = Checkpoint()
    ckpt.add(CONFIG_KEY, encode_model_config(model.config))
    for name, p in model.named_parameters():
        ckpt.add(name, p.data)
    for name, arr in extra:
        ckpt.add(name, arr)
    return ckpt


def load_into_model(model, ckpt: Checkpoint) -> None:
    """Copy parameters into ``model``; every parameter must be present with a matching shape."""
    for name, p in model.named_parameters():
        if name not in ckpt:
            raise CheckpointMismatchError(f"checkpoint has no entry for parameter '{name}'")
        arr = ckpt[name]
        if arr.shape != p.shape:
            raise CheckpointMismatchError(f"parameter '{name}': checkpoint shape {arr.shape} != model shape {p.shape}")
    for name, p in model.named_parameters():
        p.data = ckpt[name].astype(p.data.dtype).copy()
