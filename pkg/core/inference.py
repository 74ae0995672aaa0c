"""
Inference
Prompted generation, streaming sessions, timing reports and checkpoint
evaluation on held-out procedural texts.

Inference conditions:
  continuation    prompt = first `prompt_tokens` tokens of a record and their
                  frames; the output keeps the prompt frames in front
  cross-sentence  prompt = a whole record of the same speaker (terminal stop
                  frame removed); the output holds only the new frames

Random streams: utterance i of a run draws from STREAM_GENERATE + i, so every
output is a pure function of (seed, inputs).
"""

from __future__ import annotations
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import psutil
from tqdm import tqdm
from tqdm.contrib.logging import logging_redirect_tqdm

from core.backbone import BelleModel
from core.corpus import Corpus, CorpusSpec, Utterance, decode_nearest, render_utterance, sample_texts
from core.errors import ConfigError, DataError
from core.metrics import (
    DiversityReport,
    corpus_token_error_rate,
    diversity,
    frame_mse,
    summarize_stop_timing,
)
from core.sampler import STREAM_GENERATE, RngStream
from core.sequences import MelSequence, TokenSequence
from core.streaming import split_text, stream_generate

logger = logging.getLogger(__name__)

MODES = ("continuation", "cross-sentence")
EVAL_SEED_OFFSET = 7919
DIVERSITY_STREAM = 1 << 16
BETA_SCALES = (1.0, 2.0)


@dataclass(frozen=True)
class Prompt:
    text: TokenSequence
    mel: MelSequence
    speaker_id: int
    keep: bool

    def as_pair(self) -> tuple[TokenSequence, MelSequence]:
        return self.text, self.mel


def build_prompt(corpus: Corpus, record: int, mode: str, prompt_tokens: int = 3) -> Prompt:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if not 0 <= record < len(corpus):
        raise DataError(f"prompt record {record} outside [0, {len(corpus)})")
    u = corpus[record]
    f = corpus.spec.frames_per_token
    if mode == "continuation":
        if not 1 <= prompt_tokens < len(u.text):
            raise DataError(f"prompt_tokens must be in [1, {len(u.text)}) for record {record}")
        text = TokenSequence(u.text.ids[:prompt_tokens], u.text.vocab_size)
        frames = u.mel.frames[:prompt_tokens * f]
        return Prompt(text, MelSequence(frames, u.mel.frame_rate), u.speaker_id, keep=True)
    return Prompt(u.text, MelSequence(u.mel.frames[:-1], u.mel.frame_rate), u.speaker_id, keep=False)


def continuation_text(corpus: Corpus, record: int, prompt_tokens: int) -> TokenSequence:
    u = corpus[record]
    return TokenSequence(u.text.ids[prompt_tokens:], u.text.vocab_size)


def speaker_prompt_record(corpus: Corpus, speaker_id: int, rng: RngStream) -> int:
    """A random record of the given speaker."""
    candidates = [i for i, u in enumerate(corpus) if u.speaker_id == speaker_id]
    if not candidates:
        raise DataError(f"corpus has no record of speaker {speaker_id}")
    return candidates[int(rng.integers(0, len(candidates)))]


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------

class RssMonitor:
    """Tracks the largest resident set size seen at sample points."""

    def __init__(self):
        self.process = psutil.Process()
        self.peak = 0

    def sample(self) -> int:
        self.peak = max(self.peak, self.process.memory_info().rss)
        return self.peak

    @property
    def peak_mb(self) -> float:
        return self.peak / (1024 * 1024)


@dataclass
class UtteranceTiming:
    index: int
    frames: int
    compute_ms: float
    duration_s: float
    truncated: bool
    first_packet_ms: float | None = None
    chunks: list[dict] = field(default_factory=list)

    @property
    def rtf(self) -> float:
        return (self.compute_ms / 1000.0) / self.duration_s if self.duration_s > 0 else float("nan")


@dataclass
class TimingReport:
    utterances: list[UtteranceTiming] = field(default_factory=list)
    peak_rss_mb: float = 0.0
    cpu_seconds: float = 0.0

    @property
    def rtf(self) -> float:
        compute = sum(u.compute_ms for u in self.utterances) / 1000.0
        audio = sum(u.duration_s for u in self.utterances)
        return compute / audio if audio > 0 else float("nan")

    @property
    def summary(self) -> str:
        n = len(self.utterances)
        parts = [f"{n} utterance(s)", f"RTF {self.rtf:.3f}", f"peak RSS {self.peak_rss_mb:.1f} MB"]
        fpl = [u.first_packet_ms for u in self.utterances if u.first_packet_ms is not None]
        if fpl:
            parts.append(f"first packet {np.mean(fpl):.1f} ms")
        truncated = sum(u.truncated for u in self.utterances)
        if truncated:
            parts.append(f"{truncated} truncated")
        return ", ".join(parts)

    def as_dict(self) -> dict:
        return {
            "rtf": self.rtf,
            "peak_rss_mb": self.peak_rss_mb,
            "cpu_seconds": self.cpu_seconds,
            "utterances": [{**asdict(u), "rtf": u.rtf} for u in self.utterances],
        }


# ---------------------------------------------------------------------------
# Generation sessions
# ---------------------------------------------------------------------------

@dataclass
class GenerationRequest:
    text: TokenSequence
    speaker_id: int
    prompt: Prompt | None = None


@dataclass
class GenerationBatch:
    utterances: list[Utterance]
    timing: TimingReport

    def as_corpus(self, spec: CorpusSpec, meta: dict | None = None) -> Corpus:
        return Corpus(spec, list(self.utterances), dict(meta or {}))


def generate_requests(model: BelleModel, requests: list[GenerationRequest], seed: int,
                      beta_scale: float = 1.0, max_frames: int = 400, frame_rate: float = 62.5,
                      progress: bool = False, stream_base: int = STREAM_GENERATE) -> GenerationBatch:
    monitor = RssMonitor()
    cpu0 = sum(psutil.Process().cpu_times()[:2])
    out, timing = [], TimingReport()
    with logging_redirect_tqdm():
        for i, req in enumerate(tqdm(requests, desc="generate", disable=not progress)):
            started = time.perf_counter()
            prompt = req.prompt.as_pair() if req.prompt else None
            keep = req.prompt.keep if req.prompt else False
            mel = model.generate(req.text, prompt, RngStream(seed, stream_base + i), beta_scale,
                                 max_frames, keep_prompt=keep, frame_rate=frame_rate)
            elapsed = (time.perf_counter() - started) * 1000.0
            out.append(Utterance(req.text, mel, req.speaker_id, 0, i))
            timing.utterances.append(UtteranceTiming(i, mel.length, elapsed, mel.duration, mel.truncated))
            monitor.sample()
    timing.peak_rss_mb = monitor.peak_mb
    timing.cpu_seconds = sum(psutil.Process().cpu_times()[:2]) - cpu0
    logger.info(f"[generate] {timing.summary}")
    return GenerationBatch(out, timing)


ChunkLogger = Callable[[int, int, int, bool, float], None]


def stream_requests(model: BelleModel, requests: list[GenerationRequest], seed: int,
                    s_text: int, s_audio: int, beta_scale: float = 1.0, max_frames: int = 400,
                    frame_rate: float = 62.5, on_chunk: ChunkLogger | None = None) -> GenerationBatch:
    """Chunked sessions without prompts; each request is fed to the model one text chunk at a time."""
    monitor = RssMonitor()
    cpu0 = sum(psutil.Process().cpu_times()[:2])
    out, timing = [], TimingReport()
    for i, req in enumerate(requests):
        if req.prompt is not None:
            raise DataError("streaming sessions take no audio prompt")

        def emit(index, frames, is_final, elapsed_ms, i=i):
            if on_chunk is not None:
                on_chunk(i, index, frames.shape[0], is_final, elapsed_ms)

        started = time.perf_counter()
        result = stream_generate(split_text(req.text, s_text), model, RngStream(seed, STREAM_GENERATE + i),
                                 s_audio, max_frames, beta_scale, on_chunk=emit, frame_rate=frame_rate)
        elapsed = (time.perf_counter() - started) * 1000.0
        mel = result.assemble()
        chunks = [{"index": c.index, "frames": int(c.frames.shape[0]), "elapsed_ms": c.elapsed_ms,
                   "compute_ms": c.compute_ms, "is_final": c.is_final} for c in result.chunks]
        out.append(Utterance(req.text, mel, req.speaker_id, 0, i))
        timing.utterances.append(UtteranceTiming(i, mel.length, elapsed, mel.duration, mel.truncated,
                                                 result.first_packet_ms, chunks))
        monitor.sample()
    timing.peak_rss_mb = monitor.peak_mb
    timing.cpu_seconds = sum(psutil.Process().cpu_times()[:2]) - cpu0
    logger.info(f"[stream] {timing.summary}")
    return GenerationBatch(out, timing)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    token_error_rate: float
    stop_within_tolerance: float
    stop_mean_offset: float
    truncation_rate: float
    frame_mse: float
    utterances: int
    diversity: dict[str, dict] = field(default_factory=dict)

    @property
    def summary(self) -> str:
        return (f"TER {self.token_error_rate:.4f}, stop within tolerance {self.stop_within_tolerance:.1%}, "
                f"truncation {self.truncation_rate:.1%}, frame MSE {self.frame_mse:.4f}")

    def as_dict(self) -> dict:
        return asdict(self)


def held_out_texts(spec: CorpusSpec, count: int) -> list[tuple[TokenSequence, int]]:
    """Texts drawn from a seed disjoint from the training corpus."""
    return sample_texts(replace(spec, seed=spec.seed + EVAL_SEED_OFFSET), count)


def _eval_requests(corpus: Corpus, texts, seed: int, stream_offset: int = 0) -> list[GenerationRequest]:
    pick = RngStream(seed, STREAM_GENERATE - 1 - stream_offset)
    return [
        GenerationRequest(text, speaker, build_prompt(corpus, speaker_prompt_record(corpus, speaker, pick),
                                                      "cross-sentence"))
        for text, speaker in texts
    ]


def evaluate_model(model: BelleModel, corpus: Corpus, seed: int, count: int = 200,
                   diversity_prompts: int = 50, diversity_repeats: int = 3, max_frames: int = 400,
                   teacher_id: int = 0, progress: bool = False) -> EvalReport:
    """
    Cross-sentence generation for held-out texts, scored against teacher
    renders with decode_nearest, plus the beta_scale diversity study.
    """
    spec = corpus.spec
    if count < 1:
        raise ConfigError("evaluation needs at least one utterance")
    texts = held_out_texts(spec, count)
    batch = generate_requests(model, _eval_requests(corpus, texts, seed), seed,
                              max_frames=max_frames, frame_rate=spec.frame_rate, progress=progress)
    clean = spec.noiseless()
    pairs, stops, mses = [], [], []
    for i, ((text, speaker), u) in enumerate(zip(texts, batch.utterances)):
        ref = render_utterance(text, speaker, teacher_id, i, clean).mel
        pairs.append((text, decode_nearest(u.mel, spec, speaker)))
        stops.append((ref.length, u.mel.length, u.mel.truncated))
        mses.append(frame_mse(ref, u.mel))
    stop = summarize_stop_timing(stops)
    report = EvalReport(
        token_error_rate=corpus_token_error_rate(pairs),
        stop_within_tolerance=stop.within_tolerance,
        stop_mean_offset=stop.mean_offset,
        truncation_rate=stop.truncation_rate,
        frame_mse=float(np.mean(mses)),
        utterances=count,
    )
    if diversity_prompts > 0 and diversity_repeats > 1:
        for scale in BETA_SCALES:
            report.diversity[f"beta_scale_{scale:g}"] = diversity_study(
                model, corpus, seed, diversity_prompts, diversity_repeats, scale, max_frames, progress,
            ).as_dict()
    logger.info(f"[evaluate] {report.summary}")
    return report


def diversity_study(model: BelleModel, corpus: Corpus, seed: int, prompts: int, repeats: int,
                    beta_scale: float, max_frames: int = 400, progress: bool = False) -> DiversityReport:
    """`repeats` generations of each held-out prompt text with independent streams."""
    texts = held_out_texts(corpus.spec, prompts)
    requests = _eval_requests(corpus, texts, seed, stream_offset=1)
    groups: list[list[MelSequence]] = [[] for _ in texts]
    for r in range(repeats):
        batch = generate_requests(model, requests, seed, beta_scale,
                                  max_frames, corpus.spec.frame_rate, progress,
                                  stream_base=STREAM_GENERATE + DIVERSITY_STREAM * (r + 1))
        for g, u in zip(groups, batch.utterances):
            g.append(u.mel)
    return diversity(groups)


def load_for_inference(checkpoint: Path) -> tuple[BelleModel, CorpusSpec | None, dict]:
    model, config = BelleModel.load(Path(checkpoint))
    spec = CorpusSpec.from_dict(config["corpus"]) if "corpus" in config else None
    logger.info(f"[generate] loaded {checkpoint} ({model.cfg.preset}, head={model.cfg.head})")
    return model, spec, config
