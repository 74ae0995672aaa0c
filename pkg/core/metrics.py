"""
Evaluation metrics: token error rate, frame error, sampling diversity and
stop timing.
"""

from __future__ import annotations
import itertools
import logging
from dataclasses import asdict, dataclass

import jiwer
import numpy as np

from core.errors import DataError
from core.sequences import MelSequence, TokenSequence

logger = logging.getLogger(__name__)

STOP_TOLERANCE = 2


def _words(ids) -> str:
    return " ".join(f"t{i}" for i in ids)


def token_error_rate(ref: TokenSequence, hyp: TokenSequence) -> float:
    """Levenshtein distance between token sequences divided by the reference length."""
    ref_ids = ref.ids if isinstance(ref, TokenSequence) else tuple(ref)
    hyp_ids = hyp.ids if isinstance(hyp, TokenSequence) else tuple(hyp)
    if not ref_ids:
        raise DataError("token_error_rate: empty reference")
    if not hyp_ids:
        return 1.0
    return float(jiwer.wer(_words(ref_ids), _words(hyp_ids)))


def corpus_token_error_rate(pairs: list[tuple[TokenSequence, TokenSequence]]) -> float:
    """Total edits over total reference tokens."""
    if not pairs:
        return float("nan")
    edits = sum(token_error_rate(r, h) * len(r) for r, h in pairs)
    return edits / sum(len(r) for r, _ in pairs)


def _frames(x) -> np.ndarray:
    return x.frames if isinstance(x, MelSequence) else np.asarray(x, dtype=np.float64)


def align_length(ref, hyp) -> tuple[np.ndarray, bool]:
    """hyp truncated or zero-padded to the reference length, plus a mismatch flag."""
    r, h = _frames(ref), _frames(hyp)
    if h.shape[0] == r.shape[0]:
        return h, False
    if h.shape[0] > r.shape[0]:
        return h[:r.shape[0]], True
    pad = np.zeros((r.shape[0] - h.shape[0], r.shape[1]))
    return np.concatenate([h, pad], axis=0), True


def frame_mse(ref, hyp) -> float:
    r = _frames(ref)
    h, _ = align_length(r, hyp)
    return float(np.mean((r - h) ** 2))


def stop_timing(ref_len: int, hyp_len: int) -> int:
    if ref_len < 1 or hyp_len < 1:
        raise DataError("stop_timing: lengths must be >= 1")
    return hyp_len - ref_len


@dataclass
class StopTimingSummary:
    count: int
    within_tolerance: float
    mean_offset: float
    truncation_rate: float


def summarize_stop_timing(records: list[tuple[int, int, bool]],
                          tolerance: int = STOP_TOLERANCE) -> StopTimingSummary:
    """records: (ref_len, hyp_len, truncated); truncated hypotheses only count toward the failure rate."""
    if not records:
        return StopTimingSummary(0, float("nan"), float("nan"), float("nan"))
    kept = [stop_timing(r, h) for r, h, trunc in records if not trunc]
    truncated = sum(1 for *_, trunc in records if trunc)
    within = float(np.mean([abs(o) <= tolerance for o in kept])) if kept else float("nan")
    mean_offset = float(np.mean(kept)) if kept else float("nan")
    return StopTimingSummary(len(records), within, mean_offset, truncated / len(records))


@dataclass
class DiversityReport:
    cosine_mean: float
    cosine_std: float
    l1_mean: float
    l1_std: float
    l2_mean: float
    l2_std: float
    pairs: int

    def as_dict(self) -> dict:
        return asdict(self)


def pooled_embedding(mel) -> np.ndarray:
    """Mean over time, then L2 normalisation."""
    v = _frames(mel).mean(axis=0)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def diversity(groups: list[list]) -> DiversityReport:
    cos, l1, l2 = [], [], []
    for g, group in enumerate(groups):
        if len(group) < 2:
            raise DataError(f"diversity: group {g} has {len(group)} member(s); need at least 2")
        vecs = [pooled_embedding(m) for m in group]
        for a, b in itertools.combinations(vecs, 2):
            cos.append(max(0.0, 1.0 - float(np.dot(a, b))))
            l1.append(float(np.abs(a - b).sum()))
            l2.append(float(np.linalg.norm(a - b)))
    if not cos:
        raise DataError("diversity: no groups")
    return DiversityReport(
        cosine_mean=float(np.mean(cos)), cosine_std=float(np.std(cos)),
        l1_mean=float(np.mean(l1)), l1_std=float(np.std(l1)),
        l2_mean=float(np.mean(l2)), l2_std=float(np.std(l2)),
        pairs=len(cos),
    )
