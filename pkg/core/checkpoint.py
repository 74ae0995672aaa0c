"""
Checkpoint Store
BELC binary checkpoints plus a rolling directory of recent ones.

File layout (little-endian):
  "BELC" | version u16 | config length u32 | config JSON
  | tensor count u32
  | per tensor: name length u16, name UTF-8, ndim u8, dims u32[ndim], float64 data
  | CRC32 u32

Directory layout:
  <out>/
    checkpoints/
      step_000500.belc    <- newest `keep` are retained
      step_001000.belc
    final.belc
"""

from __future__ import annotations
import logging
from pathlib import Path

import numpy as np

from core.binio import BinaryReader, BinaryWriter
from core.errors import CheckpointFormatError

logger = logging.getLogger(__name__)

MAGIC = b"BELC"
VERSION = 1


def encode_checkpoint(config: dict, arrays: dict[str, np.ndarray]) -> bytes:
    w = BinaryWriter()
    w.header(MAGIC, VERSION, config)
    w.pack("I", len(arrays))
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        w.pack("H", len(encoded))
        w.raw(encoded)
        w.pack("B", arr.ndim)
        if arr.ndim:
            w.pack(f"{arr.ndim}I", *arr.shape)
        w.array(arr, "<f8")
    return w.finish()


def decode_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = BinaryReader(data, CheckpointFormatError)
    config = r.header(MAGIC, (VERSION,))
    count = r.unpack("I", "tensor count")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.raw(r.unpack("H", "name length"), "tensor name").decode("utf-8", errors="replace")
        ndim = r.unpack("B", f"{name} rank")
        shape = tuple(int(v) for v in np.atleast_1d(r.unpack(f"{ndim}I", f"{name} shape"))) if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = r.array(size, "<f8", f"{name} data").reshape(shape)
    r.verify_trailer()
    return config, arrays


def write_checkpoint(path: Path, config: dict, arrays: dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(config, arrays))
    logger.info(f"[checkpoint] wrote {path.name} ({len(arrays)} tensors)")


def read_checkpoint(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointFormatError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


class CheckpointManager:
    """Writes step checkpoints and keeps only the newest `keep` of them."""

    def __init__(self, out_dir: Path, keep: int = 5):
        self.out_dir = Path(out_dir)
        self.keep = max(1, int(keep))

    @property
    def checkpoint_dir(self) -> Path:
        d = self.out_dir / "checkpoints"
        d.mkdir(parents=True, exist_ok=True)
        return d

    @property
    def final_path(self) -> Path:
        return self.out_dir / "final.belc"

    def save(self, step: int, config: dict, arrays: dict[str, np.ndarray]) -> Path:
        path = self.checkpoint_dir / f"step_{step:06d}.belc"
        write_checkpoint(path, config, arrays)
        self._prune()
        return path

    def save_final(self, config: dict, arrays: dict[str, np.ndarray]) -> Path:
        write_checkpoint(self.final_path, config, arrays)
        return self.final_path

    def entries(self) -> list[Path]:
        """Step checkpoints, oldest first."""
        return sorted(self.checkpoint_dir.glob("step_*.belc"))

    def latest(self) -> Path | None:
        if self.final_path.exists():
            return self.final_path
        entries = self.entries()
        return entries[-1] if entries else None

    def _prune(self):
        entries = self.entries()
        while len(entries) > self.keep:
            oldest = entries.pop(0)
            oldest.unlink()
            logger.debug(f"[checkpoint] pruned {oldest.name}")
