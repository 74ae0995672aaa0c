"""
Procedural Corpus
Deterministic mel-like utterances rendered from token templates, simulated
teacher systems, an exact nearest-template decoder and the BELM file format.

Template for token v, speaker s, frame f, dimension d:
  A * sin(2 pi * ((f + 1/2) / F) * (1 + v mod 7)) * basis[v, d] + offset[s, d]
basis ~ U[-1, 1]^(V x D) and offset ~ U[-0.5, 0.5]^(S x D), both from the
master seed. The half-frame phase keeps every frequency 1..7 non-degenerate
when F = 8.

An utterance is the concatenation of its token templates plus one terminal
stop frame (-A in every dimension). Teacher k > 0 applies a fixed
per-dimension affine map (scale in [0.8, 1.2], bias in [-0.1, 0.1]); every
source adds N(0, noise_k^2) jitter. Frames are rounded to float32 at render
time so files round-trip bit-exactly.

File layout (little-endian):
  "BELM" | version u16 | header length u32 | header JSON | record count u32
  | per record: speaker u16, teacher u16, token count u16, tokens u16[],
                frame count u32, frames f32[frames x D]
  | CRC32 u32
The header JSON carries the CorpusSpec block, free-form meta and the rendering seed
of every record, in record order. The CRC32 is checked before any record is
parsed.
"""

from __future__ import annotations
import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import psutil
from tqdm import tqdm
from tqdm.contrib.logging import logging_redirect_tqdm

from core.binio import BinaryReader, BinaryWriter
from core.errors import ConfigError, CorpusFormatError, DataError
from core.sampler import (
    STREAM_CORPUS_BASIS,
    STREAM_CORPUS_RENDER,
    STREAM_CORPUS_TRANSFORMS,
    RngStream,
)
from core.sequences import MelSequence, TokenSequence

logger = logging.getLogger(__name__)

MAGIC = b"BELM"
VERSION = 1
DEFAULT_NOISE = 0.02


@dataclass(frozen=True)
class CorpusSpec:
    vocab_size: int = 16
    frames_per_token: int = 8
    mel_dim: int = 16
    num_speakers: int = 2
    num_teachers: int = 6
    seed: int = 0
    noise_levels: tuple[float, ...] = ()
    amplitude: float = 2.0
    frame_rate: float = 62.5
    min_tokens: int = 4
    max_tokens: int = 12

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ConfigError(f"vocab_size must be >= 4, got {self.vocab_size}")
        if self.frames_per_token < 2:
            raise ConfigError(f"frames_per_token must be >= 2, got {self.frames_per_token}")
        if self.num_teachers < 0 or self.num_speakers < 1 or self.mel_dim < 1:
            raise ConfigError("num_teachers >= 0, num_speakers >= 1 and mel_dim >= 1 required")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError(f"token range [{self.min_tokens}, {self.max_tokens}] is empty")
        levels = tuple(float(x) for x in self.noise_levels)
        if not levels:
            levels = (DEFAULT_NOISE,) * (self.num_teachers + 1)
        if len(levels) != self.num_teachers + 1 or any(x < 0 for x in levels):
            raise ConfigError(f"noise_levels needs {self.num_teachers + 1} non-negative values")
        object.__setattr__(self, "noise_levels", levels)

    @property
    def sources(self) -> int:
        return self.num_teachers + 1

    def noiseless(self) -> "CorpusSpec":
        return replace(self, noise_levels=(0.0,) * self.sources)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["noise_levels"] = list(self.noise_levels)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusSpec":
        fields = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "noise_levels" in fields:
            fields["noise_levels"] = tuple(fields["noise_levels"])
        return cls(**fields)

    @classmethod
    def from_settings(cls, settings) -> "CorpusSpec":
        return cls(
            vocab_size=settings["vocab_size"],
            frames_per_token=settings["frames_per_token"],
            mel_dim=settings["mel_dim"],
            num_speakers=settings["num_speakers"],
            num_teachers=settings["num_teachers"],
            seed=settings["seed"],
            noise_levels=settings["noise_levels"],
            amplitude=settings["amplitude"],
            frame_rate=settings["frame_rate"],
            min_tokens=settings["min_tokens"],
            max_tokens=settings["max_tokens"],
        )


@dataclass
class Utterance:
    text: TokenSequence
    mel: MelSequence
    speaker_id: int
    teacher_id: int = 0
    seed: int = 0

    @property
    def stop_index(self) -> int:
        return self.mel.length - 1


@dataclass
class Corpus:
    spec: CorpusSpec
    utterances: list[Utterance] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, i) -> Utterance:
        return self.utterances[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus) or self.spec != other.spec or len(self) != len(other):
            return False
        return all(
            a.text == b.text and a.speaker_id == b.speaker_id and a.teacher_id == b.teacher_id
            and a.seed == b.seed and np.array_equal(a.mel.frames, b.mel.frames)
            for a, b in zip(self.utterances, other.utterances)
        )


# ---------------------------------------------------------------------------
# Templates and simulated teachers
# ---------------------------------------------------------------------------

class TemplateBank:
    """All templates and teacher transforms of one spec, computed once."""

    def __init__(self, spec: CorpusSpec):
        self.spec = spec
        v, f, d, s = spec.vocab_size, spec.frames_per_token, spec.mel_dim, spec.num_speakers
        basis_rng = RngStream(spec.seed, STREAM_CORPUS_BASIS)
        self.basis = basis_rng.uniform((v, d)) * 2.0 - 1.0
        self.offsets = basis_rng.uniform((s, d)) - 0.5
        phase = (np.arange(f) + 0.5) / f
        freq = 1.0 + (np.arange(v) % 7)
        waves = spec.amplitude * np.sin(2.0 * np.pi * phase[None, :] * freq[:, None])  # (V, F)
        shapes = waves[:, :, None] * self.basis[:, None, :]  # (V, F, D)
        self.templates = shapes[None, :, :, :] + self.offsets[:, None, None, :]  # (S, V, F, D)

        t_rng = RngStream(spec.seed, STREAM_CORPUS_TRANSFORMS)
        n = spec.num_teachers
        self.scales = np.vstack([np.ones((1, d)), 0.8 + 0.4 * t_rng.uniform((n, d))])
        self.biases = np.vstack([np.zeros((1, d)), 0.2 * t_rng.uniform((n, d)) - 0.1])

        flat = shapes.reshape(v, -1)
        dist = np.sqrt(((flat[:, None, :] - flat[None, :, :]) ** 2).sum(-1))
        self.margin = float(dist[~np.eye(v, dtype=bool)].min())
        if not self.margin > 0:
            raise DataError(f"template margin is {self.margin}; tokens are not separable")
        logger.debug(f"[corpus] template margin m = {self.margin:.4f}")

    @property
    def stop_frame(self) -> np.ndarray:
        return np.full(self.spec.mel_dim, -self.spec.amplitude)


@functools.lru_cache(maxsize=8)
def template_bank(spec: CorpusSpec) -> TemplateBank:
    return TemplateBank(spec)


def _check_ids(spec: CorpusSpec, speaker_id: int, teacher_id: int = 0):
    if not 0 <= speaker_id < spec.num_speakers:
        raise DataError(f"speaker id {speaker_id} outside [0, {spec.num_speakers})")
    if not 0 <= teacher_id <= spec.num_teachers:
        raise DataError(f"teacher id {teacher_id} outside [0, {spec.num_teachers}]")


def make_template(token_id: int, speaker_id: int, spec: CorpusSpec) -> np.ndarray:
    _check_ids(spec, speaker_id)
    if not 0 <= token_id < spec.vocab_size:
        raise DataError(f"token id {token_id} outside [0, {spec.vocab_size})")
    return template_bank(spec).templates[speaker_id, token_id].copy()


def render_utterance(text: TokenSequence, speaker_id: int, teacher_id: int, seed: int,
                     spec: CorpusSpec) -> Utterance:
    _check_ids(spec, speaker_id, teacher_id)
    if text.vocab_size != spec.vocab_size:
        raise DataError(f"text vocabulary {text.vocab_size} != corpus vocabulary {spec.vocab_size}")
    bank = template_bank(spec)
    parts = [bank.templates[speaker_id, list(text.ids)].reshape(-1, spec.mel_dim), bank.stop_frame[None, :]]
    frames = np.concatenate(parts, axis=0)
    if teacher_id:
        frames = frames * bank.scales[teacher_id] + bank.biases[teacher_id]
    noise = spec.noise_levels[teacher_id]
    if noise > 0:
        frames = frames + noise * RngStream(spec.seed, STREAM_CORPUS_RENDER + seed).normal(frames.shape)
    frames = frames.astype(np.float32).astype(np.float64)
    return Utterance(text, MelSequence(frames, spec.frame_rate), speaker_id, teacher_id, seed)


def rendition_seed(index: int, teacher_id: int, spec: CorpusSpec) -> int:
    return index * spec.sources + teacher_id


def render_renditions(index: int, base: Utterance, teachers, spec: CorpusSpec) -> list[Utterance]:
    """The original-source record plus re-rendered teacher versions of its text."""
    out = []
    for k in teachers:
        if k == base.teacher_id:
            out.append(base)
        else:
            out.append(render_utterance(base.text, base.speaker_id, k, rendition_seed(index, k, spec), spec))
    return out


def decode_nearest(mel: MelSequence, spec: CorpusSpec, speaker_id: int) -> TokenSequence:
    """Greedy F-frame windows, each mapped to the closest speaker-matched clean template."""
    _check_ids(spec, speaker_id)
    f = spec.frames_per_token
    frames = np.asarray(mel.frames if isinstance(mel, MelSequence) else mel, dtype=np.float64)
    n = frames.shape[0] // f
    if n == 0:
        return TokenSequence((), spec.vocab_size)
    windows = frames[:n * f].reshape(n, -1)
    templates = template_bank(spec).templates[speaker_id].reshape(spec.vocab_size, -1)
    dist = ((windows[:, None, :] - templates[None, :, :]) ** 2).sum(-1)
    return TokenSequence(tuple(int(i) for i in dist.argmin(axis=1)), spec.vocab_size)


# ---------------------------------------------------------------------------
# Corpus construction
# ---------------------------------------------------------------------------

def default_workers(requested: int = 0) -> int:
    if requested > 0:
        return requested
    return psutil.cpu_count(logical=False) or 1


def sample_texts(spec: CorpusSpec, count: int) -> list[tuple[TokenSequence, int]]:
    """(text, speaker) pairs, a pure function of the master seed."""
    rng = RngStream(spec.seed, 0)
    out = []
    for _ in range(count):
        length = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
        ids = rng.integers(0, spec.vocab_size, size=length)
        speaker = int(rng.integers(0, spec.num_speakers))
        out.append((TokenSequence(tuple(ids.tolist()), spec.vocab_size), speaker))
    return out


def build_corpus(spec: CorpusSpec, count: int, workers: int = 1, teachers=(0,),
                 progress: bool = False) -> Corpus:
    """Render `count` texts, one record per requested source (original only by default)."""
    texts = sample_texts(spec, count)
    template_bank(spec)

    def render(i: int) -> list[Utterance]:
        text, speaker = texts[i]
        return [render_utterance(text, speaker, k, rendition_seed(i, k, spec), spec) for k in teachers]

    n_workers = default_workers(workers)
    with logging_redirect_tqdm():
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(tqdm(pool.map(render, range(count)), total=count,
                                desc="render", disable=not progress))
    utterances = [u for group in results for u in group]
    logger.info(f"[corpus] rendered {len(utterances)} utterance(s) with {n_workers} worker(s)")
    return Corpus(spec, utterances, {"num_texts": count, "teachers": list(teachers)})


# ---------------------------------------------------------------------------
# BELM file format
# ---------------------------------------------------------------------------

def encode_corpus(corpus: Corpus) -> bytes:
    d = corpus.spec.mel_dim
    w = BinaryWriter()
    seeds = [int(u.seed) for u in corpus.utterances]
    w.header(MAGIC, VERSION, {"spec": corpus.spec.to_dict(), "meta": corpus.meta, "seeds": seeds})
    w.pack("I", len(corpus.utterances))
    for u in corpus.utterances:
        if u.mel.dim != d:
            raise DataError(f"utterance frame dim {u.mel.dim} != corpus mel_dim {d}")
        w.pack("HHH", u.speaker_id, u.teacher_id, len(u.text))
        w.array(np.asarray(u.text.ids), "<u2")
        w.pack("I", u.mel.length)
        w.array(u.mel.frames, "<f4")
    return w.finish()


def decode_corpus(data: bytes) -> Corpus:
    r = BinaryReader(data, CorpusFormatError)
    header = r.header(MAGIC, (VERSION,))
    try:
        spec = CorpusSpec.from_dict(header["spec"])
    except (KeyError, TypeError, ConfigError) as e:
        raise CorpusFormatError(f"invalid spec block: {e}", offset=10) from None
    count = r.unpack("I", "record count")
    seeds = header.get("seeds")
    if not isinstance(seeds, list) or len(seeds) != count or not all(isinstance(s, int) for s in seeds):
        raise CorpusFormatError(f"header seed list does not match {count} record(s)", offset=10)
    utterances = []
    for index in range(count):
        start = r.offset
        speaker, teacher, n_tok = r.unpack("HHH", f"record {index} header")
        ids = r.array(n_tok, "<u2", f"record {index} tokens")
        n_frames = r.unpack("I", f"record {index} frame count")
        frames = r.array(n_frames * spec.mel_dim, "<f4", f"record {index} frames")
        try:
            text = TokenSequence(tuple(ids.tolist()), spec.vocab_size)
            _check_ids(spec, speaker, teacher)
        except DataError as e:
            raise CorpusFormatError(f"record {index}: {e}", offset=start) from None
        mel = MelSequence(frames.astype(np.float64).reshape(n_frames, spec.mel_dim), spec.frame_rate)
        utterances.append(Utterance(text, mel, speaker, teacher, seeds[index]))
    r.verify_trailer()
    return Corpus(spec, utterances, header.get("meta", {}))


def write_corpus(corpus: Corpus, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_corpus(corpus))
    logger.info(f"[corpus] wrote {len(corpus)} record(s) to {path}")


def read_corpus(path: Path) -> Corpus:
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"corpus file not found: {path}")
    return decode_corpus(path.read_bytes())
