"""Shared fixtures: a tiny model and a matching small corpus."""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from core.backbone import BelleModel  # noqa: E402
from core.corpus import CorpusSpec, build_corpus  # noqa: E402
from core.model_config import ModelConfig  # noqa: E402
from core.sampler import RngStream  # noqa: E402


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig.from_preset("tiny")


@pytest.fixture
def tiny_model(tiny_cfg) -> BelleModel:
    return BelleModel(tiny_cfg, seed=0)


@pytest.fixture
def make_model():
    def factory(**overrides) -> BelleModel:
        seed = overrides.pop("seed", 0)
        return BelleModel(ModelConfig.from_preset("tiny", **overrides), seed=seed)
    return factory


@pytest.fixture
def small_spec() -> CorpusSpec:
    """Matches the tiny preset: V = 8, D = 4."""
    return CorpusSpec(vocab_size=8, frames_per_token=4, mel_dim=4, num_speakers=2,
                      num_teachers=2, seed=3, min_tokens=2, max_tokens=4)


@pytest.fixture
def small_corpus(small_spec):
    return build_corpus(small_spec, 12)


@pytest.fixture
def rng() -> RngStream:
    return RngStream(1234, 0)
