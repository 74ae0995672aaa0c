"""
Token and frame sequence containers shared by the model, corpus and metrics.

Token ids: content tokens occupy [0, V); BOS = V and EOS = V + 1 are reserved.
"""

from __future__ import annotations
from dataclasses import dataclass, field

import numpy as np

from core.errors import DataError


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    vocab_size: int

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        bad = [i for i in self.ids if not 0 <= i < self.vocab_size]
        if bad:
            raise DataError(f"token id(s) {bad} outside content vocabulary [0, {self.vocab_size})")

    @property
    def bos(self) -> int:
        return self.vocab_size

    @property
    def eos(self) -> int:
        return self.vocab_size + 1

    def wrapped(self) -> list[int]:
        return [self.bos, *self.ids, self.eos]

    def __len__(self) -> int:
        return len(self.ids)

    def __add__(self, other: "TokenSequence") -> "TokenSequence":
        return TokenSequence(self.ids + other.ids, self.vocab_size)


@dataclass
class MelSequence:
    frames: np.ndarray
    frame_rate: float = 62.5
    truncated: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise DataError(f"MelSequence: frames must be T x D, got shape {self.frames.shape}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.frame_rate

    def __len__(self) -> int:
        return self.length
