"""
Streaming
Chunk plans that interleave text and audio, the ratio filter that keeps plans
feasible, the chunk-causal mask, and chunk-by-chunk generation.

Interleaved order for M chunks:
  [x(1) y(1) x(2) y(2) ... x(M) y(M)]
BOS rides with the first text chunk and EOS with the last. Audio chunk m holds
the shifted audio inputs for its frames (the first starts with the
start-of-audio row). Positions run globally across the whole sequence.

Emission contract: on_chunk(chunk_index, frames, is_final, elapsed_ms), where
elapsed_ms is measured from the start of the session, so the first call's
value is the first-packet latency.
"""

from __future__ import annotations
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from core.backbone import BelleModel, GenerationState
from core.errors import ConfigError, DataError, StreamError
from core.sequences import MelSequence, TokenSequence

logger = logging.getLogger(__name__)

DEFAULT_S_TEXT = 20
DEFAULT_S_AUDIO = 50
DEFAULT_MIN_RATIO = 2.5

ChunkCallback = Callable[[int, np.ndarray, bool, float], None]


@dataclass(frozen=True)
class ChunkPlan:
    text_spans: tuple[tuple[int, int], ...]
    audio_spans: tuple[tuple[int, int], ...]
    s_text: int
    s_audio: int

    @property
    def num_chunks(self) -> int:
        return len(self.text_spans)

    @property
    def text_len(self) -> int:
        return self.text_spans[-1][1]

    @property
    def audio_len(self) -> int:
        return self.audio_spans[-1][1]

    def text_sizes(self) -> list[int]:
        return [b - a for a, b in self.text_spans]

    def audio_sizes(self) -> list[int]:
        return [b - a for a, b in self.audio_spans]

    def segments(self) -> list[tuple[str, int, int]]:
        """Interleaved spans over wrapped text rows ([BOS] + content + [EOS]) and audio input rows."""
        out = []
        last = self.num_chunks - 1
        for m, ((ta, tb), (aa, ab)) in enumerate(zip(self.text_spans, self.audio_spans)):
            start = 0 if m == 0 else ta + 1
            end = self.text_len + 2 if m == last else tb + 1
            out.append(("text", start, end))
            out.append(("audio", aa, ab))
        return out

    def roles(self) -> list[tuple[str, int]]:
        """(kind, chunk index) for every position of the interleaved sequence."""
        out = []
        for i, (kind, start, end) in enumerate(self.segments()):
            out.extend([(kind, i // 2)] * (end - start))
        return out

    @property
    def interleaved_length(self) -> int:
        return self.text_len + 2 + self.audio_len


def partition(text_len: int, audio_len: int, s_text: int = DEFAULT_S_TEXT,
              s_audio: int = DEFAULT_S_AUDIO) -> ChunkPlan:
    if text_len < 1:
        raise DataError(f"partition: text_len must be >= 1, got {text_len}")
    if s_text < 1 or s_audio < 1:
        raise DataError("partition: chunk sizes must be positive")
    m = math.ceil(text_len / s_text)
    minimum = (m - 1) * s_audio
    if audio_len <= minimum:
        raise DataError(f"partition: {m} chunk(s) need audio_len > {minimum}, got {audio_len}")
    text_spans = tuple((i * s_text, min((i + 1) * s_text, text_len)) for i in range(m))
    audio_spans = tuple((i * s_audio, (i + 1) * s_audio) for i in range(m - 1)) + ((minimum, audio_len),)
    return ChunkPlan(text_spans, audio_spans, s_text, s_audio)


def ratio_ok(text_len: int, audio_len: int, min_ratio: float = DEFAULT_MIN_RATIO) -> bool:
    return audio_len / text_len >= min_ratio


def ratio_filter(example, min_ratio: float = DEFAULT_MIN_RATIO) -> bool:
    """Keep an example (anything with .text and .target or .mel) whose audio:text ratio is high enough."""
    mel = example.target if hasattr(example, "target") else example.mel
    return ratio_ok(len(example.text), mel.length, min_ratio)


def build_chunk_mask(plan: ChunkPlan) -> np.ndarray:
    """Causal mask over the interleaved order: position i sees j iff j <= i."""
    n = plan.interleaved_length
    return np.tril(np.ones((n, n), dtype=bool))


@dataclass(frozen=True)
class TextChunk:
    tokens: tuple[int, ...]
    is_final: bool = False


def split_text(text: TokenSequence, s_text: int = DEFAULT_S_TEXT) -> list[TextChunk]:
    ids = text.ids
    m = max(1, math.ceil(len(ids) / s_text))
    return [TextChunk(tuple(ids[i * s_text:(i + 1) * s_text]), is_final=(i == m - 1)) for i in range(m)]


@dataclass
class EmittedChunk:
    index: int
    frames: np.ndarray
    is_final: bool
    elapsed_ms: float
    compute_ms: float
    truncated: bool = False


@dataclass
class StreamResult:
    chunks: list[EmittedChunk] = field(default_factory=list)
    frame_rate: float = 62.5

    @property
    def first_packet_ms(self) -> float:
        return self.chunks[0].elapsed_ms if self.chunks else float("nan")

    @property
    def truncated(self) -> bool:
        return bool(self.chunks) and self.chunks[-1].truncated

    def assemble(self) -> MelSequence:
        frames = np.concatenate([c.frames for c in self.chunks], axis=0)
        return MelSequence(frames, self.frame_rate, truncated=self.truncated)


def iter_stream(text_chunks: Iterable[TextChunk], model: BelleModel, rng,
                s_audio: int = DEFAULT_S_AUDIO, max_frames: int = 400,
                beta_scale: float = 1.0, ablate_sampling: bool = False) -> Iterator[EmittedChunk]:
    """
    Consume text chunks lazily and yield one audio chunk per text chunk.
    Non-final chunks hold exactly s_audio frames; the final chunk runs until
    the stop head fires or max_frames frames were produced for it.
    """
    if s_audio < 1 or max_frames < 1:
        raise ConfigError("s_audio and max_frames must be >= 1")
    vocab = model.cfg.vocab_size
    state = GenerationState(model, rng, beta_scale, ablate_sampling)
    t0 = time.perf_counter()
    for m, chunk in enumerate(text_chunks):
        started = time.perf_counter()
        ids = list(TokenSequence(chunk.tokens, vocab).ids)
        if m == 0:
            ids = [vocab] + ids
        if chunk.is_final:
            ids = ids + [vocab + 1]
        state.feed_text(ids)
        if m == 0:
            state.feed_start()
        first = len(state.y1)
        if chunk.is_final:
            stopped = state.run(max_frames)
        else:
            state.run(s_audio, allow_stop=False)
            stopped = True
        frames = model.postnet_refine(np.stack(state.y1[first:])).data
        now = time.perf_counter()
        emitted = EmittedChunk(m, frames, chunk.is_final, (now - t0) * 1000.0,
                               (now - started) * 1000.0, truncated=not stopped)
        logger.debug(f"[stream] chunk {m}: {frames.shape[0]} frame(s) at {emitted.elapsed_ms:.1f} ms")
        yield emitted
        if chunk.is_final:
            return
    raise StreamError("text stream ended before the final chunk was signalled")


def stream_generate(text_chunks: Iterable[TextChunk], model: BelleModel, rng,
                    s_audio: int = DEFAULT_S_AUDIO, max_frames: int = 400,
                    beta_scale: float = 1.0, on_chunk: ChunkCallback | None = None,
                    frame_rate: float = 62.5) -> StreamResult:
    result = StreamResult(frame_rate=frame_rate)
    for chunk in iter_stream(text_chunks, model, rng, s_audio, max_frames, beta_scale):
        result.chunks.append(chunk)
        if on_chunk is not None:
            on_chunk(chunk.index, chunk.frames, chunk.is_final, chunk.elapsed_ms)
    if result.truncated:
        logger.warning(f"[stream] final chunk reached max_frames={max_frames} without a stop decision")
    return result
