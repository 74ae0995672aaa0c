"""
Model configuration presets.

  paper: 12 blocks, 16 heads, hidden 1024, ffn 4096, D = 80,
         prenet D-256-256-hidden, postnet 5 x kernel 5 x 256 channels
  desk:  2 blocks, 4 heads, hidden 128, ffn 512, D = 16,
         prenet D-64-64-hidden, postnet 5 x kernel 5 x 64 channels
"""

from __future__ import annotations
import logging
from dataclasses import asdict, dataclass, replace

from core.errors import ConfigError

logger = logging.getLogger(__name__)

HEADS = ("belle", "melle")


@dataclass(frozen=True)
class ModelConfig:
    preset: str = "desk"
    num_blocks: int = 2
    num_heads: int = 4
    hidden_dim: int = 128
    ffn_dim: int = 512
    dropout: float = 0.1
    mel_dim: int = 16
    vocab_size: int = 16
    prenet_sizes: tuple[int, int] = (64, 64)
    prenet_dropout: float = 0.5
    denoiser_layers: int = 3
    denoiser_hidden: int = 128
    postnet_blocks: int = 5
    postnet_kernel: int = 5
    postnet_channels: int = 64
    stop_threshold: float = 0.5
    max_positions: int = 1024
    head: str = "belle"
    float32_matmul: bool = False

    def __post_init__(self):
        object.__setattr__(self, "prenet_sizes", tuple(self.prenet_sizes))
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 < self.stop_threshold < 1.0:
            raise ConfigError(f"stop_threshold must be in (0, 1), got {self.stop_threshold}")
        if self.postnet_kernel % 2 == 0:
            raise ConfigError("postnet_kernel must be odd")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.denoiser_layers < 2:
            raise ConfigError("denoiser needs at least 2 layers")
        if self.vocab_size < 1 or self.mel_dim < 1:
            raise ConfigError("vocab_size and mel_dim must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def text_vocab(self) -> int:
        """Content vocabulary plus BOS and EOS."""
        return self.vocab_size + 2

    @property
    def postnet_receptive_field(self) -> int:
        return 1 + self.postnet_blocks * (self.postnet_kernel - 1)

    def head_width(self) -> int:
        return (4 if self.head == "belle" else 2) * self.mel_dim

    def parameter_count(self) -> int:
        """Closed-form parameter total for this configuration."""
        h, f, d = self.hidden_dim, self.ffn_dim, self.mel_dim
        block = 2 * (2 * h) + 4 * (h * h + h) + (h * f + f) + (f * h + h)
        total = self.num_blocks * block + 2 * h  # final layer norm
        total += self.text_vocab * h + self.max_positions * h + h  # text, positions, start-of-audio
        p1, p2 = self.prenet_sizes
        total += (d * p1 + p1) + (p1 * p2 + p2) + (p2 * h + h)
        dh = self.denoiser_hidden
        total += (d * dh + dh) + (self.denoiser_layers - 2) * (dh * dh + dh) + (dh * d + d)
        k, c = self.postnet_kernel, self.postnet_channels
        total += (k * d * c + c) + (self.postnet_blocks - 2) * (k * c * c + c) + (k * c * d + d)
        total += h * self.head_width() + self.head_width()
        total += h + 1  # stop head
        return total

    def to_dict(self) -> dict:
        data = asdict(self)
        data["prenet_sizes"] = list(self.prenet_sizes)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**known)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "ModelConfig":
        base = PRESETS.get(name)
        if base is None:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return replace(base, **overrides) if overrides else base

    @classmethod
    def from_settings(cls, settings) -> "ModelConfig":
        overrides = {}
        for key in ("num_blocks", "num_heads", "hidden_dim", "ffn_dim", "dropout", "max_positions"):
            value = settings[key]
            if value is not None:
                overrides[key] = value
        if settings["preset"] != "paper":
            # corpus-driven sizes; the full-scale preset keeps its own D and vocabulary
            overrides.update(mel_dim=settings["mel_dim"], vocab_size=settings["vocab_size"])
        overrides.update(
            stop_threshold=settings["stop_threshold"],
            head=settings["head"],
            float32_matmul=settings["float32_matmul"],
        )
        if settings["preset"] == "desk" and "hidden_dim" in overrides:
            overrides.setdefault("denoiser_hidden", overrides["hidden_dim"])
        return cls.from_preset(settings["preset"], **overrides)


PRESETS: dict[str, ModelConfig] = {
    "desk": ModelConfig(),
    "paper": ModelConfig(
        preset="paper",
        num_blocks=12,
        num_heads=16,
        hidden_dim=1024,
        ffn_dim=4096,
        dropout=0.1,
        mel_dim=80,
        vocab_size=512,
        prenet_sizes=(256, 256),
        denoiser_hidden=1024,
        postnet_channels=256,
        max_positions=4096,
    ),
    # smoke-test scale for the verification suites and unit tests
    "tiny": ModelConfig(
        preset="tiny",
        num_blocks=1,
        num_heads=2,
        hidden_dim=16,
        ffn_dim=32,
        mel_dim=4,
        vocab_size=8,
        prenet_sizes=(8, 8),
        denoiser_hidden=16,
        postnet_channels=8,
        max_positions=256,
    ),
}
