"""
Trainer
Composite objective, multi-source weighting, AdamW with warmup/decay and the
training loop.

Per rendition (teacher-forced pass over one target):
  total = reg + lambda_samp * samp + lambda_flux * flux + stop
    reg  : L1 + squared L2 of (y_gt - y1) and (y_gt - y2), summed over D, mean over frames
    samp : EDL loss of y_gt under the per-frame NIG (belle) or KL to N(y_gt, I) (melle)
    flux : -mean over t >= 2 of |gamma_t - y_gt_{t-1}|_1
    stop : BCE with the terminal frame weighted by stop_weight, mean over frames
Per text, renditions from several sources are combined as sum_i w_i * total_i
with weights normalised to 1. A batch averages over its texts.

Outputs in <out>/:
  metrics.jsonl     header record, then one record per step
  checkpoints/      rolling step checkpoints
  final.belc
"""

from __future__ import annotations
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm
from tqdm.contrib.logging import logging_redirect_tqdm

from core import numerics as nx
from core.backbone import BelleModel, ForwardOutputs
from core.checkpoint import CheckpointManager
from core.corpus import Corpus, render_renditions
from core.edl_loss import DEFAULT_LAMBDA, edl_loss_op
from core.errors import ConfigError, DataError, NumericalFailure, ShapeError
from core.model_config import ModelConfig
from core.nig import NIGParams
from core.sampler import STREAM_TRAIN, RngStream, kl_gaussian_tensor
from core.sequences import MelSequence, TokenSequence
from core.streaming import partition, ratio_ok

logger = logging.getLogger(__name__)

STOP_WEIGHT = 500.0
BCE_CLIP = 1e-7


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def _frames(x):
    if isinstance(x, MelSequence):
        return x.frames
    return x


def regression_loss(y_gt, y1, y2) -> nx.Tensor:
    y_gt, y1, y2 = (nx.as_tensor(_frames(v)) for v in (y_gt, y1, y2))
    if not (y_gt.shape == y1.shape == y2.shape):
        raise ShapeError("regression_loss", y_gt.shape, y1.shape, y2.shape)
    frames = y_gt.shape[0] if y_gt.ndim > 1 else 1
    total = None
    for y in (y1, y2):
        diff = nx.sub(y_gt, y)
        term = nx.add(nx.sum_(nx.abs_(diff)), nx.sum_(nx.square(diff)))
        total = term if total is None else nx.add(total, term)
    return nx.mul(total, 1.0 / frames)


def flux_loss(gammas, y_gt, clamp: float | None = None) -> nx.Tensor:
    """
    -mean_{t>=2} |gamma_t - y_gt_{t-1}|_1, zero for fewer than two frames.
    The reduction is a mean over the T-1 transitions, not a sum.
    clamp, when set, floors each frame's term at -clamp.
    """
    gammas = nx.as_tensor(gammas)
    y = np.asarray(_frames(y_gt), dtype=np.float64)
    if gammas.shape != y.shape:
        raise ShapeError("flux_loss", gammas.shape, y.shape)
    t = y.shape[0]
    if t < 2:
        return nx.Tensor(0.0)
    per_frame = nx.neg(nx.sum_(nx.abs_(nx.sub(nx.index(gammas, slice(1, t)), y[:-1])), axis=-1))
    if clamp is not None:
        per_frame = nx.clip(per_frame, -clamp, None)
    return nx.mean(per_frame)


def stop_loss(stop_scores, stop_index: int, weight: float = STOP_WEIGHT) -> nx.Tensor:
    s = nx.as_tensor(stop_scores)
    t = s.shape[0]
    if not 0 <= stop_index < t:
        raise DataError(f"stop_loss: stop index {stop_index} outside [0, {t})")
    target = np.zeros(t)
    target[stop_index] = 1.0
    weights = np.ones(t)
    weights[stop_index] = weight
    s = nx.clip(s, BCE_CLIP, 1.0 - BCE_CLIP)
    bce = nx.neg(nx.add(nx.mul(target, nx.log(s)), nx.mul(1.0 - target, nx.log(nx.sub(1.0, s)))))
    return nx.mean(nx.mul(bce, weights))


def sampling_loss(y_gt, nig, lam: float = DEFAULT_LAMBDA) -> nx.Tensor:
    """Mean over frames of the EDL total; nig is NIGParams or a (gamma, nu, alpha, beta) tensor tuple."""
    y = np.asarray(_frames(y_gt), dtype=np.float64)
    if isinstance(nig, NIGParams):
        nig = tuple(nx.Tensor(a) for a in (nig.gamma, nig.nu, nig.alpha, nig.beta))
    if nig[0].shape != y.shape:
        raise ShapeError("sampling_loss", y.shape, nig[0].shape)
    return edl_loss_op(y, *nig, lam=lam)


@dataclass
class LossReport:
    reg: float = 0.0
    samp: float = 0.0
    flux: float = 0.0
    stop: float = 0.0
    total: float = 0.0
    lambda_samp: float = 0.2
    lambda_flux: float = 0.5
    per_source: dict[int, float] = field(default_factory=dict)
    weights: dict[int, float] = field(default_factory=dict)

    def components(self) -> dict[str, float]:
        return {"reg": self.reg, "samp": self.samp, "flux": self.flux, "stop": self.stop}

    def as_record(self) -> dict:
        data = asdict(self)
        data["per_source"] = {str(k): v for k, v in self.per_source.items()}
        data["weights"] = {str(k): v for k, v in self.weights.items()}
        return data


def total_loss(reg: float, samp: float, flux: float, stop: float,
               lambda_samp: float = 0.2, lambda_flux: float = 0.5) -> LossReport:
    return LossReport(
        reg=reg, samp=samp, flux=flux, stop=stop,
        total=reg + lambda_samp * samp + lambda_flux * flux + stop,
        lambda_samp=lambda_samp, lambda_flux=lambda_flux,
    )


@dataclass(frozen=True)
class Objective:
    lambda_samp: float = 0.2
    lambda_flux: float = 0.5
    lambda_edl: float = DEFAULT_LAMBDA
    stop_weight: float = STOP_WEIGHT
    flux_clamp: float | None = None
    ablate_flux: bool = False
    ablate_sampling: bool = False

    @classmethod
    def from_settings(cls, settings, mel_dim: int) -> "Objective":
        return cls(
            lambda_samp=settings.lambda_samp,
            lambda_flux=settings.lambda_flux,
            lambda_edl=settings["lambda_edl"],
            stop_weight=settings["stop_weight"],
            flux_clamp=10.0 * mel_dim if settings["flux_clamp"] else None,
            ablate_flux=settings["ablate_flux"],
            ablate_sampling=settings["ablate_sampling"],
        )


@dataclass
class TrainingExample:
    text: TokenSequence
    target: MelSequence
    source_id: int = 0
    weight: float = 1.0
    speaker_id: int = 0

    def __post_init__(self):
        if self.weight < 0:
            raise DataError(f"example weight must be >= 0, got {self.weight}")


def _check_finite(name: str, value: float, step: int | None):
    if not np.isfinite(value):
        raise NumericalFailure("non-finite loss", step=step, component=name)


def example_loss(model: BelleModel, example: TrainingExample, rng, objective: Objective,
                 segments=None, step: int | None = None) -> tuple[nx.Tensor, LossReport]:
    """Composite loss of one teacher-forced rendition."""
    y = example.target.frames
    out: ForwardOutputs = model.teacher_forced(
        example.text.wrapped(), y, rng, training=True, segments=segments,
        ablate_sampling=objective.ablate_sampling,
    )
    reg = regression_loss(y, out.y1, out.y2)
    if out.nig is not None:
        samp = sampling_loss(y, out.nig, objective.lambda_edl)
    else:
        samp = kl_gaussian_tensor(*out.gaussian, y)
    flux = nx.Tensor(0.0) if objective.ablate_flux else flux_loss(out.location, y, objective.flux_clamp)
    stop = stop_loss(out.stop_scores, y.shape[0] - 1, objective.stop_weight)

    lam_f = 0.0 if objective.ablate_flux else objective.lambda_flux
    report = total_loss(float(reg), float(samp), float(flux), float(stop), objective.lambda_samp, lam_f)
    for name, value in report.components().items():
        _check_finite(name, value, step)
    total = nx.add(nx.add(reg, nx.mul(samp, objective.lambda_samp)),
                   nx.add(nx.mul(flux, lam_f), stop))
    return total, report


def normalize_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise DataError("weights must be non-negative")
    s = w.sum()
    if s <= 0:
        raise DataError("all source weights are zero")
    return w / s


def multi_teacher_loss(examples: list[TrainingExample], model: BelleModel, rng,
                       objective: Objective | None = None, segments_for=None,
                       step: int | None = None) -> tuple[nx.Tensor, LossReport]:
    """Weighted sum over renditions of one text; weights are normalised to sum to 1."""
    if not examples:
        raise DataError("multi_teacher_loss: no examples")
    objective = objective or Objective()
    weights = normalize_weights([ex.weight for ex in examples])
    total, parts = None, {"reg": 0.0, "samp": 0.0, "flux": 0.0, "stop": 0.0}
    per_source, lam_f = {}, objective.lambda_flux
    for ex, w in zip(examples, weights):
        segments = segments_for(ex) if segments_for is not None else None
        loss, rep = example_loss(model, ex, rng, objective, segments, step)
        lam_f = rep.lambda_flux
        per_source[ex.source_id] = rep.total
        for k in parts:
            parts[k] += w * getattr(rep, k)
        weighted = nx.mul(loss, w)
        total = weighted if total is None else nx.add(total, weighted)
    report = total_loss(parts["reg"], parts["samp"], parts["flux"], parts["stop"],
                        objective.lambda_samp, lam_f)
    report.per_source = per_source
    report.weights = {ex.source_id: float(w) for ex, w in zip(examples, weights)}
    return total, report


def average_reports(reports: list[LossReport]) -> LossReport:
    n = len(reports)
    parts = {k: sum(getattr(r, k) for r in reports) / n for k in ("reg", "samp", "flux", "stop")}
    out = total_loss(**parts, lambda_samp=reports[0].lambda_samp, lambda_flux=reports[0].lambda_flux)
    sources: dict[int, list[float]] = {}
    for r in reports:
        for k, v in r.per_source.items():
            sources.setdefault(k, []).append(v)
    out.per_source = {k: float(np.mean(v)) for k, v in sorted(sources.items())}
    out.weights = dict(reports[0].weights)
    return out


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------

def learning_rate(step: int, total_steps: int, peak: float, warmup_frac: float = 0.1) -> float:
    """Linear warmup from 0 to peak over warmup_frac of the steps, then linear decay to 0."""
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return peak * step / warmup
    span = max(1, total_steps - warmup)
    return peak * max(0.0, (total_steps - step) / span)


class AdamW:
    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads: dict[str, np.ndarray], lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            p = params[name].data
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            m = self.b1 * m + (1.0 - self.b1) * g
            v = self.b2 * v + (1.0 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            params.set(name, p - lr * (update + self.weight_decay * p))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


# ---------------------------------------------------------------------------
# Data selection
# ---------------------------------------------------------------------------

def source_weights(teachers: int, weights, num_teachers: int) -> dict[int, float]:
    """Original plus the first teachers-1 simulated teachers, weights renormalised."""
    if not 1 <= teachers <= num_teachers + 1:
        raise ConfigError(f"teachers must be in [1, {num_teachers + 1}], got {teachers}")
    weights = tuple(weights)
    if len(weights) < teachers:
        raise ConfigError(f"teacher_weights lists {len(weights)} value(s), need {teachers}")
    w = normalize_weights(weights[:teachers])
    return {k: float(w[k]) for k in range(teachers)}


def stream_training_pool(corpus: Corpus, speaker: int, min_ratio: float,
                         s_text: int, s_audio: int) -> list[int]:
    """Record indices usable for interleaved training: one speaker, ratio-filtered, feasible."""
    keep = []
    for i, u in enumerate(corpus):
        if u.speaker_id != speaker or not ratio_ok(len(u.text), u.mel.length, min_ratio):
            continue
        try:
            partition(len(u.text), u.mel.length, s_text, s_audio)
        except DataError:
            continue
        keep.append(i)
    return keep


@dataclass
class TrainResult:
    final_checkpoint: Path
    metrics_path: Path
    reports: list[LossReport]


class Trainer:
    def __init__(self, settings, corpus: Corpus, out_dir: Path):
        self.settings = settings
        self.corpus = corpus
        self.out_dir = Path(out_dir)
        self.spec = corpus.spec
        if len(corpus) == 0:
            raise DataError("training corpus is empty")

        init_from = settings["init_from"]
        if init_from:
            self.model, _ = BelleModel.load(Path(init_from))
            logger.info(f"[trainer] initialised from {init_from}")
        else:
            self.model = BelleModel(ModelConfig.from_settings(settings), seed=settings["seed"])
        cfg = self.model.cfg
        if cfg.mel_dim != self.spec.mel_dim or cfg.vocab_size != self.spec.vocab_size:
            raise ConfigError(
                f"model (D={cfg.mel_dim}, V={cfg.vocab_size}) does not match corpus "
                f"(D={self.spec.mel_dim}, V={self.spec.vocab_size})"
            )
        self.objective = Objective.from_settings(settings, cfg.mel_dim)
        self.weights = source_weights(settings["teachers"], settings["teacher_weights"], self.spec.num_teachers)
        self.optimizer = AdamW(
            lr=settings["peak_lr"],
            betas=(settings["adam_beta1"], settings["adam_beta2"]),
            eps=settings["adam_eps"],
            weight_decay=settings["weight_decay"],
        )
        self.checkpoints = CheckpointManager(self.out_dir, settings["keep_checkpoints"])

        if settings["stream"]:
            self.pool = stream_training_pool(corpus, settings["stream_speaker"], settings["min_ratio"],
                                             settings["s_text"], settings["s_audio"])
            if not self.pool:
                raise DataError("no utterances survive the streaming speaker/ratio filter")
        else:
            self.pool = list(range(len(corpus)))
        logger.info(f"[trainer] {len(self.pool)} training record(s), sources {self.weights}, "
                    f"head={cfg.head}, {self.model.params.count()} parameters")

    # ------------------------------------------------------------------ #

    def _segments_for(self, ex: TrainingExample):
        if not self.settings["stream"]:
            return None
        return partition(len(ex.text), ex.target.length,
                         self.settings["s_text"], self.settings["s_audio"]).segments()

    def examples_for(self, index: int, rng) -> list[TrainingExample]:
        base = self.corpus[index]
        if self.settings["mixing"] == "data_aug":
            sources = [int(rng.integers(0, len(self.weights)))]
            weights = {sources[0]: 1.0}
        elif self.settings["mixing"] == "weighted":
            sources, weights = list(self.weights), self.weights
        else:
            raise ConfigError(f"unknown mixing mode {self.settings['mixing']!r}")
        renditions = render_renditions(index, base, sources, self.spec)
        return [TrainingExample(u.text, u.mel, u.teacher_id, weights[u.teacher_id], u.speaker_id)
                for u in renditions]

    def batch_loss(self, step: int, rng) -> tuple[nx.Tensor, LossReport]:
        picks = rng.integers(0, len(self.pool), size=self.settings["batch_texts"])
        total, reports = None, []
        for p in picks:
            examples = self.examples_for(self.pool[int(p)], rng)
            loss, rep = multi_teacher_loss(examples, self.model, rng, self.objective,
                                           self._segments_for, step)
            reports.append(rep)
            total = loss if total is None else nx.add(total, loss)
        return nx.mul(total, 1.0 / len(picks)), average_reports(reports)

    def train_step(self, step: int, total_steps: int) -> tuple[LossReport, float]:
        rng = RngStream(self.settings["seed"], STREAM_TRAIN + step)
        with nx.GradTape() as tape:
            loss, report = self.batch_loss(step, rng)
        grads = nx.backward(tape, loss)
        named = {name: grads[t] for name, t in self.model.params.items()}
        for name, g in named.items():
            if not np.all(np.isfinite(g)):
                raise NumericalFailure("non-finite gradient", step=step, component=name)
        clip_by_global_norm(named, self.settings["grad_clip"])
        lr = learning_rate(step, total_steps, self.settings["peak_lr"], self.settings["warmup_frac"])
        self.optimizer.step(self.model.params, named, lr)
        return report, lr

    def checkpoint_config(self, step: int) -> dict:
        return {
            "model": self.model.cfg.to_dict(),
            "step": step,
            "run": self.settings.as_dict(),
            "corpus": self.spec.to_dict(),
        }

    def train(self, steps: int | None = None, progress: bool = True) -> TrainResult:
        steps = steps if steps is not None else self.settings["steps"]
        self.out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = self.out_dir / "metrics.jsonl"
        every = self.settings["checkpoint_every"]
        reports: list[LossReport] = []
        with open(metrics_path, "w", encoding="utf-8") as log_file, logging_redirect_tqdm():
            log_file.write(json.dumps({"type": "config", "run": self.settings.as_dict(),
                                       "corpus": self.spec.to_dict()}, sort_keys=True) + "\n")
            bar = tqdm(range(steps), desc="train", disable=not progress)
            for step in bar:
                report, lr = self.train_step(step, steps)
                reports.append(report)
                record = {"type": "step", "step": step, "lr": lr, **report.as_record()}
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                bar.set_postfix(total=f"{report.total:.3f}", reg=f"{report.reg:.3f}")
                if every and (step + 1) % every == 0 and step + 1 < steps:
                    self.checkpoints.save(step + 1, self.checkpoint_config(step + 1),
                                          self.model.params.arrays())
        final = self.checkpoints.save_final(self.checkpoint_config(steps), self.model.params.arrays())
        if reports:
            logger.info(f"[trainer] done: {steps} step(s), last total {reports[-1].total:.4f}")
        return TrainResult(final, metrics_path, reports)


def gradient_check(model: BelleModel, examples: list[TrainingExample], seed: int,
                   objective: Objective | None = None, coords_per_param: int = 2,
                   h: float = 1e-5, tol: float = 1e-4) -> list[tuple[str, nx.GradCheckReport]]:
    """
    Finite-difference check of the full multi-source loss with respect to a
    random sample of coordinates of every parameter. All random draws are
    recorded on the first evaluation and replayed afterwards.
    """
    from core.sampler import ReplayRng

    objective = objective or Objective()
    replay = ReplayRng(RngStream(seed, STREAM_TRAIN))
    pick = RngStream(seed, STREAM_TRAIN - 1)
    results = []
    for name, original in list(model.params.items()):

        def f(x: nx.Tensor, name=name) -> nx.Tensor:
            model.params.bind(name, x)
            replay.rewind()
            loss, _ = multi_teacher_loss(examples, model, replay, objective)
            return loss

        n = min(coords_per_param, original.size)
        coords = pick.integers(0, original.size, size=n)
        report = nx.finite_difference_check(f, original.data, h=h, tol=tol, coords=coords)
        model.params.bind(name, original)
        results.append((name, report))
    return results
