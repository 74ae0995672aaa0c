"""
Run configuration persisted as a flat key = value document.

Every key the program understands is listed in DEFAULT_SETTINGS together with
its type and a one-line description (surfaced by --help). Keys that are not
listed are rejected, whether they come from a file or from the command line.

File format:
  # comment
  preset = desk
  peak_lr = 0.001
  teacher_weights = 0.22, 0.13, 0.13, 0.13, 0.13, 0.13, 0.13
"""

from __future__ import annotations
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from core.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Setting:
    default: Any
    kind: type
    help: str
    optional: bool = False


DEFAULT_TEACHER_WEIGHTS = (0.22, 0.13, 0.13, 0.13, 0.13, 0.13, 0.13)

DEFAULT_SETTINGS: dict[str, Setting] = {
    # --- general ---
    "seed":              Setting(0, int, "master seed; determines every output"),
    "log_level":         Setting("INFO", str, "logging level"),
    "out":               Setting("out", str, "output path (file or directory, per command)"),
    # --- model ---
    "preset":            Setting("desk", str, "model preset: desk | paper | tiny"),
    "num_blocks":        Setting(None, int, "decoder blocks (preset if unset)", True),
    "num_heads":         Setting(None, int, "attention heads (preset if unset)", True),
    "hidden_dim":        Setting(None, int, "decoder width (preset if unset)", True),
    "ffn_dim":           Setting(None, int, "feed-forward width (preset if unset)", True),
    "dropout":           Setting(None, float, "decoder dropout (preset if unset)", True),
    "mel_dim":           Setting(16, int, "frame dimension D"),
    "stop_threshold":    Setting(0.5, float, "stop score threshold in (0,1)"),
    "max_positions":     Setting(None, int, "learned positional table size (preset if unset)", True),
    "head":              Setting("belle", str, "sampling head: belle (NIG) | melle (Gaussian baseline)"),
    "float32_matmul":    Setting(False, bool, "single-precision backbone matmuls"),
    # --- corpus ---
    "vocab_size":        Setting(16, int, "content vocabulary size V (BOS/EOS added)"),
    "frames_per_token":  Setting(8, int, "frames per token template F"),
    "num_speakers":      Setting(2, int, "number of procedural speakers"),
    "num_teachers":      Setting(6, int, "number of simulated teacher systems N"),
    "noise_levels":      Setting((), float, "jitter per source 0..N (comma list; default 0.02 each)"),
    "amplitude":         Setting(2.0, float, "template amplitude A"),
    "frame_rate":        Setting(62.5, float, "frames per second"),
    "num_utterances":    Setting(2000, int, "texts rendered by gen-corpus"),
    "min_tokens":        Setting(4, int, "shortest text"),
    "max_tokens":        Setting(12, int, "longest text"),
    "corpus":            Setting("", str, "corpus file path"),
    "workers":           Setting(0, int, "parallel workers (0 = physical cores)"),
    # --- training ---
    "steps":             Setting(5000, int, "optimizer steps"),
    "peak_lr":           Setting(1e-3, float, "peak learning rate"),
    "warmup_frac":       Setting(0.1, float, "fraction of steps spent warming up"),
    "batch_texts":       Setting(4, int, "texts per batch (each expands to its renditions)"),
    "weight_decay":      Setting(0.01, float, "AdamW weight decay"),
    "adam_beta1":        Setting(0.9, float, "AdamW beta1"),
    "adam_beta2":        Setting(0.999, float, "AdamW beta2"),
    "adam_eps":          Setting(1e-8, float, "AdamW epsilon"),
    "grad_clip":         Setting(1.0, float, "global gradient-norm clip (0 disables)"),
    "lambda_edl":        Setting(0.5, float, "evidence regularizer weight inside the EDL loss"),
    "lambda_samp":       Setting(None, float, "sampling-loss weight (0.2 belle, 0.1 melle)", True),
    "lambda_flux":       Setting(None, float, "flux-loss weight (0.5; 0.1 when streaming)", True),
    "stop_weight":       Setting(500.0, float, "BCE weight on the stop frame"),
    "flux_clamp":        Setting(False, bool, "clamp flux at -10*D per frame"),
    "teachers":          Setting(7, int, "sources used: original + (teachers-1) simulated teachers"),
    "teacher_weights":   Setting(DEFAULT_TEACHER_WEIGHTS, float, "weights for original, teacher 1..N"),
    "mixing":            Setting("weighted", str, "weighted (sum over renditions) | data_aug (one random source)"),
    "ablate_sampling":   Setting(False, bool, "z = gamma passthrough instead of sampling"),
    "ablate_flux":       Setting(False, bool, "drop the flux loss"),
    "checkpoint_every":  Setting(500, int, "steps between checkpoints"),
    "keep_checkpoints":  Setting(5, int, "rolling checkpoints kept"),
    "init_from":         Setting("", str, "checkpoint to initialise from"),
    "stream":            Setting(False, bool, "train on interleaved chunk layouts"),
    "s_text":            Setting(20, int, "text chunk size S_text"),
    "s_audio":           Setting(50, int, "audio chunk size S_audio"),
    "min_ratio":         Setting(2.5, float, "minimum audio:text length ratio for streaming data"),
    "stream_speaker":    Setting(0, int, "single speaker used for stream fine-tuning"),
    # --- generation / evaluation ---
    "checkpoint":        Setting("", str, "checkpoint path"),
    "text":              Setting((), int, "token ids to synthesise (comma list)"),
    "speaker":           Setting(0, int, "speaker id for prompts and decoding"),
    "beta_scale":        Setting(1.0, float, "inference multiplier on beta"),
    "max_frames":        Setting(400, int, "generation frame cap"),
    "mode":              Setting("cross-sentence", str, "continuation | cross-sentence"),
    "prompt_record":     Setting(-1, int, "corpus record used as prompt (-1 = none)"),
    "prompt_tokens":     Setting(3, int, "prompt length in tokens for continuation"),
    "eval_utterances":   Setting(200, int, "utterances scored by evaluate"),
    "diversity_prompts": Setting(50, int, "prompts in the diversity study"),
    "diversity_repeats": Setting(3, int, "generations per prompt"),
    "suite":             Setting("all", str, "verification suite name or 'all'"),
    "verify_scale":      Setting("full", str, "full | quick"),
}


def _parse_scalar(kind: type, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_value(key: str, raw: Any) -> Any:
    """Coerce a raw value (string from file/flag, or Python value) to the key's type."""
    setting = DEFAULT_SETTINGS.get(key)
    if setting is None:
        raise ConfigError(f"Unknown config key: {key!r}")
    if raw is None:
        if setting.optional:
            return None
        raise ConfigError(f"{key}: value required")
    is_list = isinstance(setting.default, tuple)
    if is_list:
        if isinstance(raw, str):
            parts = [p for p in raw.replace(" ", "").split(",") if p]
            return tuple(_parse_scalar(setting.kind, p, key) for p in parts)
        return tuple(setting.kind(v) for v in raw)
    if isinstance(raw, str):
        if setting.optional and raw.strip().lower() in ("", "none"):
            return None
        return _parse_scalar(setting.kind, raw, key)
    if setting.kind is float and isinstance(raw, int) and not isinstance(raw, bool):
        return float(raw)
    if not isinstance(raw, setting.kind):
        raise ConfigError(f"{key}: expected {setting.kind.__name__}, got {type(raw).__name__}")
    return raw


class RunConfig:
    """Dict-backed run configuration with file loading and flag overrides."""

    def __init__(self, config_path: Path | None = None, overrides: dict[str, Any] | None = None):
        self.config_path = Path(config_path) if config_path else None
        self._data: dict[str, Any] = {k: s.default for k, s in DEFAULT_SETTINGS.items()}
        if self.config_path is not None:
            self.load()
        if overrides:
            self.update(overrides)

    def load(self):
        if self.config_path is None:
            return
        if not self.config_path.exists():
            raise ConfigError(f"Config file not found: {self.config_path}")
        text = self.config_path.read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{self.config_path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULT_SETTINGS:
                raise ConfigError(f"{self.config_path}:{lineno}: unknown key {key!r}")
            self._data[key] = parse_value(key, value)
        logger.debug(f"[config] loaded {self.config_path}")

    def save(self, path: Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")

    def dumps(self) -> str:
        lines = []
        for key in DEFAULT_SETTINGS:
            value = self._data[key]
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            elif value is None:
                value = "none"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def update(self, values: dict[str, Any]):
        for key, value in values.items():
            self._data[key] = parse_value(key, value)

    def get(self, key: str, default=None):
        if key not in DEFAULT_SETTINGS:
            raise ConfigError(f"Unknown config key: {key!r}")
        value = self._data.get(key)
        return default if value is None else value

    def set(self, key: str, value):
        self._data[key] = parse_value(key, value)

    def as_dict(self) -> dict[str, Any]:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self._data.items()}

    # ------------------------------------------------------------------ #
    # Derived values                                                       #
    # ------------------------------------------------------------------ #

    @property
    def lambda_samp(self) -> float:
        value = self._data["lambda_samp"]
        if value is not None:
            return value
        return 0.1 if self._data["head"] == "melle" else 0.2

    @property
    def lambda_flux(self) -> float:
        value = self._data["lambda_flux"]
        if value is not None:
            return value
        return 0.1 if self._data["stream"] else 0.5

    def __getitem__(self, key):
        return self._data[key]

    def __setitem__(self, key, value):
        self.set(key, value)

    def __contains__(self, key) -> bool:
        return key in self._data


def describe_settings() -> str:
    """Help text listing every key with its default."""
    rows = []
    for key, s in DEFAULT_SETTINGS.items():
        default = ", ".join(map(str, s.default)) if isinstance(s.default, tuple) else s.default
        rows.append(f"  {key:<18} {s.help} [default: {default}]")
    return "\n".join(rows)
