"""
Backbone
The autoregressive mel generator: token embeddings with BOS/EOS, a dropout-live
prenet for mel frames, a causal pre-LN decoder over [text | audio], and per-frame
heads (NIG or Gaussian sampling head, stop head), followed by a residual MLP
denoiser and a convolutional postnet.

Teacher-forced layout for a text of n tokens and a target of T frames:
  inputs : [BOS x_1 .. x_n EOS] [SOA  y_1 .. y_{T-1}]
  targets:                      [y_1  y_2 .. y_T    ]
The hidden state at the audio input for step t predicts frame t and its stop
score; the stop label sits on the last (terminal) frame.

Generation (no key/value cache) recomputes the decoder over all inputs each
step and keeps only the newest row. GenerationState is shared with the
streaming session so a single-chunk stream reproduces generate() exactly.
"""

from __future__ import annotations
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core import numerics as nx
from core.checkpoint import read_checkpoint, write_checkpoint
from core.errors import ConfigError, DataError, ShapeError
from core.layers import Decoder, Denoiser, LayerNorm, Linear, ParamStore, Postnet, Prenet
from core.model_config import ModelConfig
from core.nig import NIGParams, constrain_raw, constrain_raw_tensor
from core.sampler import (
    STREAM_INIT,
    GaussianHead,
    RngStream,
    sample_gaussian_baseline,
    sample_gaussian_tensor,
    sample_hierarchical,
    sample_hierarchical_tensor,
)
from core.sequences import MelSequence, TokenSequence

logger = logging.getLogger(__name__)


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


@dataclass
class ForwardOutputs:
    """Per-frame tensors of one teacher-forced pass, all aligned with the target."""
    z: nx.Tensor
    y1: nx.Tensor
    y2: nx.Tensor
    stop_scores: nx.Tensor
    location: nx.Tensor                       # gamma (belle) or mu (melle)
    nig: tuple[nx.Tensor, ...] | None = None  # gamma, nu, alpha, beta
    gaussian: tuple[nx.Tensor, nx.Tensor] | None = None  # mu, log_sigma2


class BelleModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = RngStream(seed, STREAM_INIT)
        h = cfg.hidden_dim
        self.params = ParamStore()
        self.params.add("text_embedding", rng.normal((cfg.text_vocab, h)))
        self.params.add("positions", 0.1 * rng.normal((cfg.max_positions, h)))
        self.params.add("start_of_audio", rng.normal((h,)))
        self.prenet = Prenet(self.params, cfg, rng)
        self.decoder = Decoder(self.params, cfg, rng)
        self.head = Linear(self.params, "head", h, cfg.head_width(), rng)
        self.stop_head = Linear(self.params, "stop", h, 1, rng)
        self.denoiser = Denoiser(self.params, cfg, rng)
        self.postnet = Postnet(self.params, cfg, rng)
        logger.debug(f"[model] {cfg.preset} preset, head={cfg.head}, {self.params.count()} parameters")

    # ------------------------------------------------------------------ #
    # Persistence                                                          #
    # ------------------------------------------------------------------ #

    def save(self, path: Path, extra: dict | None = None):
        config = {"model": self.cfg.to_dict(), **(extra or {})}
        write_checkpoint(path, config, self.params.arrays())

    @classmethod
    def load(cls, path: Path) -> tuple["BelleModel", dict]:
        config, arrays = read_checkpoint(path)
        model = cls(ModelConfig.from_dict(config["model"]))
        model.params.load(arrays)
        return model, config

    # ------------------------------------------------------------------ #
    # Embedding                                                            #
    # ------------------------------------------------------------------ #

    def embed_text(self, ids) -> nx.Tensor:
        ids = np.asarray(ids, dtype=int)
        bad = ids[(ids < 0) | (ids >= self.cfg.text_vocab)]
        if bad.size:
            raise DataError(f"token id(s) {bad.tolist()} out of range [0, {self.cfg.text_vocab})")
        return nx.index(self.params["text_embedding"], ids)

    def embed_frames(self, frames, rng) -> nx.Tensor:
        frames = nx.as_tensor(frames)
        if frames.ndim != 2 or frames.shape[1] != self.cfg.mel_dim:
            raise ShapeError("prenet", frames.shape, (None, self.cfg.mel_dim))
        return self.prenet(frames, rng)

    def start_row(self) -> nx.Tensor:
        return nx.reshape(self.params["start_of_audio"], (1, self.cfg.hidden_dim))

    def embed_inputs(self, text, mel, rng) -> nx.Tensor:
        """[BOS text EOS] embeddings followed by prenet(mel) rows; a TokenSequence is wrapped first."""
        ids = text.wrapped() if isinstance(text, TokenSequence) else text
        frames = mel.frames if isinstance(mel, MelSequence) else mel
        parts = [self.embed_text(ids)]
        if frames is not None and len(frames):
            parts.append(self.embed_frames(frames, rng))
        return nx.concat(parts, axis=0)

    def add_positions(self, x: nx.Tensor) -> nx.Tensor:
        t = x.shape[0]
        if t > self.cfg.max_positions:
            raise DataError(f"sequence of {t} positions exceeds max_positions {self.cfg.max_positions}")
        return nx.add(x, nx.index(self.params["positions"], slice(0, t)))

    # ------------------------------------------------------------------ #
    # Decoder and heads                                                    #
    # ------------------------------------------------------------------ #

    def decoder_forward(self, embedded: nx.Tensor, mask: np.ndarray, rng=None,
                        training: bool = False) -> nx.Tensor:
        t = embedded.shape[0]
        if np.shape(mask) != (t, t):
            raise ShapeError("decoder_forward", embedded.shape, np.shape(mask),
                             detail="mask must be (T, T)")
        return self.decoder(embedded, mask, rng, training)

    def nig_head(self, e) -> tuple[nx.Tensor, nx.Tensor, nx.Tensor, nx.Tensor]:
        return constrain_raw_tensor(self.head(e, self.cfg.float32_matmul))

    def nig_params(self, e) -> NIGParams:
        return constrain_raw(self.head(e).data)

    def gaussian_head(self, e) -> tuple[nx.Tensor, nx.Tensor]:
        raw = self.head(e)
        d = self.cfg.mel_dim
        return nx.index(raw, (..., slice(0, d))), nx.index(raw, (..., slice(d, 2 * d)))

    def stop_score(self, e) -> nx.Tensor:
        logit = self.stop_head(e)
        return nx.sigmoid(nx.reshape(logit, logit.shape[:-1]))

    def denoise(self, z) -> nx.Tensor:
        return self.denoiser(z)

    def postnet_refine(self, y1) -> nx.Tensor:
        y1 = nx.as_tensor(y1)
        if y1.ndim != 2 or y1.shape[0] == 0:
            raise DataError(f"postnet needs at least one frame, got shape {y1.shape}")
        return self.postnet(y1)

    # ------------------------------------------------------------------ #
    # Teacher forcing                                                      #
    # ------------------------------------------------------------------ #

    def teacher_forced(self, wrapped_ids, target, rng, training: bool = True,
                       segments: list[tuple[str, int, int]] | None = None,
                       ablate_sampling: bool = False) -> ForwardOutputs:
        """
        One teacher-forced pass. segments, when given, interleaves spans of the
        wrapped text rows and of the shifted audio input rows as
        ("text" | "audio", start, end); otherwise all text precedes all audio.
        """
        target = np.asarray(target, dtype=np.float64)
        n_frames = target.shape[0]
        if n_frames < 1:
            raise DataError("teacher_forced: empty target")
        n_text = len(wrapped_ids)
        inputs = nx.concat([self.embed_inputs(wrapped_ids, target[:-1], rng), self.start_row()], axis=0)
        # audio input 0 is the start row, audio input j > 0 is prenet(target[j - 1])
        rows = {"text": np.arange(n_text),
                "audio": np.concatenate([[n_text + n_frames - 1], n_text + np.arange(n_frames - 1)])}

        if segments is None:
            segments = [("text", 0, n_text), ("audio", 0, n_frames)]
        order, audio_positions = [], []
        for kind, start, end in segments:
            picked = rows[kind][start:end]
            if kind == "audio":
                audio_positions.extend(range(len(order), len(order) + len(picked)))
            order.extend(picked.tolist())
        if len(audio_positions) != n_frames:
            raise ShapeError("teacher_forced", (len(audio_positions),), (n_frames,),
                             detail="segments must cover every audio input once")

        x = self.add_positions(nx.index(inputs, np.asarray(order, dtype=int)))
        e = self.decoder_forward(x, causal_mask(len(order)), rng, training)
        e_audio = nx.index(e, np.asarray(audio_positions, dtype=int))

        if self.cfg.head == "belle":
            gamma, nu, alpha, beta = self.nig_head(e_audio)
            z = gamma if ablate_sampling else sample_hierarchical_tensor(gamma, nu, alpha, beta, rng)
            location, nig, gaussian = gamma, (gamma, nu, alpha, beta), None
        else:
            mu, log_s2 = self.gaussian_head(e_audio)
            z = mu if ablate_sampling else sample_gaussian_tensor(mu, log_s2, rng)
            location, nig, gaussian = mu, None, (mu, log_s2)
        y1 = self.denoise(z)
        y2 = self.postnet_refine(y1)
        return ForwardOutputs(z=z, y1=y1, y2=y2, stop_scores=self.stop_score(e_audio),
                              location=location, nig=nig, gaussian=gaussian)

    # ------------------------------------------------------------------ #
    # Generation                                                           #
    # ------------------------------------------------------------------ #

    def generate(self, text: TokenSequence, prompt: tuple[TokenSequence, MelSequence] | None,
                 rng: RngStream, beta_scale: float = 1.0, max_frames: int = 400,
                 keep_prompt: bool = True, frame_rate: float = 62.5,
                 ablate_sampling: bool = False) -> MelSequence:
        """
        Frame-by-frame decoding until the stop score exceeds the threshold or
        max_frames new frames exist, then one postnet pass over the new frames.
        With a prompt, its text precedes `text` and its frames are fed as
        audio context; keep_prompt prepends those frames to the output.
        """
        if max_frames < 1:
            raise ConfigError(f"generate: max_frames must be >= 1, got {max_frames}")
        state = GenerationState(self, rng, beta_scale, ablate_sampling)
        full_text = (prompt[0] + text) if prompt is not None else text
        state.feed_text(full_text.wrapped())
        state.feed_start()
        if prompt is not None and prompt[1].length:
            state.feed_frames(prompt[1].frames)

        stopped = state.run(max_frames)
        y2 = self.postnet_refine(np.stack(state.y1)).data
        if prompt is not None and keep_prompt and prompt[1].length:
            y2 = np.concatenate([prompt[1].frames, y2], axis=0)
        if not stopped:
            logger.warning(f"[generate] reached max_frames={max_frames} without a stop decision")
        return MelSequence(y2, frame_rate=frame_rate, truncated=not stopped,
                           meta={"stop_scores": list(state.stop_scores)})


class GenerationState:
    """Growing input sequence for incremental decoding."""

    def __init__(self, model: BelleModel, rng, beta_scale: float = 1.0, ablate_sampling: bool = False):
        if beta_scale <= 0:
            raise ConfigError(f"beta_scale must be positive, got {beta_scale}")
        self.model = model
        self.rng = rng
        self.beta_scale = beta_scale
        self.ablate_sampling = ablate_sampling
        self.rows: list[np.ndarray] = []
        self.pending: np.ndarray | None = None
        self.y1: list[np.ndarray] = []
        self.stop_scores: list[float] = []
        self.last_params: NIGParams | GaussianHead | None = None

    @property
    def length(self) -> int:
        return sum(r.shape[0] for r in self.rows)

    def feed_text(self, ids):
        if len(ids):
            self.rows.append(self.model.embed_text(ids).data)

    def feed_start(self):
        self.rows.append(self.model.start_row().data)

    def feed_frames(self, frames):
        self.rows.append(self.model.embed_frames(np.atleast_2d(frames), self.rng).data)

    def step(self) -> tuple[np.ndarray, float]:
        """Produce the next denoised frame and its stop score."""
        if self.pending is not None:
            self.feed_frames(self.pending)
            self.pending = None
        m = self.model
        x = m.add_positions(nx.Tensor(np.concatenate(self.rows, axis=0)))
        e_t = m.decoder_forward(x, causal_mask(x.shape[0])).data[-1]
        if m.cfg.head == "belle":
            p = m.nig_params(e_t)
            z = p.gamma if self.ablate_sampling else sample_hierarchical(p, self.rng, self.beta_scale)
        else:
            mu, log_s2 = m.gaussian_head(e_t)
            p = GaussianHead(mu.data, log_s2.data)
            z = p.mu if self.ablate_sampling else sample_gaussian_baseline(p, self.rng)
        self.last_params = p
        y1 = m.denoise(z).data
        score = float(m.stop_score(e_t).data)
        self.pending = y1
        self.y1.append(y1)
        self.stop_scores.append(score)
        return y1, score

    def run(self, count: int, allow_stop: bool = True) -> bool:
        """Step up to count times; returns True when the stop head fired."""
        threshold = self.model.cfg.stop_threshold
        for _ in range(count):
            _, score = self.step()
            if allow_stop and score > threshold:
                return True
        return False
