import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core import numerics as nx
from core.checkpoint import read_checkpoint
from core.errors import ConfigError, DataError, ShapeError
from core.nig import NIGParams
from core.sampler import RngStream
from core.settings import DEFAULT_TEACHER_WEIGHTS, RunConfig
from core.trainer import (
    AdamW,
    Objective,
    Trainer,
    TrainingExample,
    clip_by_global_norm,
    example_loss,
    flux_loss,
    gradient_check,
    learning_rate,
    multi_teacher_loss,
    normalize_weights,
    regression_loss,
    sampling_loss,
    source_weights,
    stop_loss,
    stream_training_pool,
    total_loss,
)
from suites.gradcheck import within_tolerance


def tiny_settings(**overrides) -> RunConfig:
    values = {
        "preset": "tiny", "mel_dim": 4, "vocab_size": 8, "steps": 3, "batch_texts": 1,
        "teachers": 2, "checkpoint_every": 1, "keep_checkpoints": 5, "seed": 5,
    }
    values.update(overrides)
    return RunConfig(overrides=values)


class TestLossTerms:
    def test_regression_reference(self):
        y = np.zeros((1, 2))
        assert regression_loss(y, np.ones((1, 2)), np.zeros((1, 2))).item() == pytest.approx(4.0)

    def test_regression_mean_over_frames(self):
        y = np.zeros((2, 2))
        y1 = np.array([[1.0, 1.0], [0.0, 0.0]])
        assert regression_loss(y, y1, y).item() == pytest.approx(2.0)

    def test_regression_shape_mismatch(self):
        with pytest.raises(ShapeError):
            regression_loss(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 2)))

    def test_flux_reference(self):
        assert flux_loss(np.array([[0.0], [3.0]]), np.array([[1.0], [5.0]])).item() == pytest.approx(-2.0)

    def test_flux_averages_over_transitions(self):
        gammas = np.array([[0.0], [3.0], [1.0]])
        y = np.array([[1.0], [5.0], [0.0]])
        # transitions: |3 - 1| = 2 and |1 - 5| = 4
        assert flux_loss(gammas, y).item() == pytest.approx(-3.0)

    def test_flux_single_frame_is_zero(self):
        assert flux_loss(np.ones((1, 3)), np.zeros((1, 3))).item() == 0.0

    def test_flux_clamp(self):
        gammas = np.array([[0.0], [100.0]])
        assert flux_loss(gammas, np.zeros((2, 1)), clamp=10.0).item() == pytest.approx(-10.0)

    def test_flux_gradient_touches_only_later_locations(self):
        gammas = nx.Tensor(np.array([[0.5, -0.5], [2.0, -2.0], [1.0, 3.0]]), requires_grad=True)
        y = np.zeros((3, 2))
        with nx.GradTape() as tape:
            out = flux_loss(gammas, y)
        grad = nx.backward(tape, out)[gammas]
        assert_allclose(grad[0], 0.0)
        assert_allclose(grad[1:], -np.sign(gammas.data[1:]) / 2.0)

    def test_stop_uniform_scores(self):
        value = stop_loss(np.full(2, 0.5), 1).item()
        assert value == pytest.approx(501.0 * np.log(2.0) / 2.0)

    def test_stop_frame_gradient_weight(self):
        s = nx.Tensor(np.full(3, 0.5), requires_grad=True)
        with nx.GradTape() as tape:
            out = stop_loss(s, 2)
        grad = nx.backward(tape, out)[s]
        assert grad[2] / grad[0] == pytest.approx(-500.0)

    def test_stop_index_range(self):
        with pytest.raises(DataError):
            stop_loss(np.full(2, 0.5), 2)

    def test_sampling_reference(self):
        p = NIGParams(np.zeros((1, 1)), np.ones((1, 1)), np.full((1, 1), 2.0), np.ones((1, 1)))
        assert sampling_loss(np.zeros((1, 1)), p).item() == pytest.approx(0.980829253011726, rel=1e-10)

    def test_total_composition(self):
        report = total_loss(reg=1.0, samp=2.0, flux=-1.0, stop=0.5)
        assert report.total == pytest.approx(1.0 + 0.4 - 0.5 + 0.5)
        assert report.components() == {"reg": 1.0, "samp": 2.0, "flux": -1.0, "stop": 0.5}


class TestMultiTeacher:
    def examples(self, small_corpus):
        u = small_corpus[0]
        return [TrainingExample(u.text, u.mel, 0, 0.3), TrainingExample(u.text, u.mel, 1, 0.7)]

    def test_weighted_sum_of_renditions(self, tiny_model, small_corpus):
        examples = self.examples(small_corpus)
        total, report = multi_teacher_loss(examples, tiny_model, RngStream(0, 1))
        rng = RngStream(0, 1)
        parts = [example_loss(tiny_model, ex, rng, Objective())[0].item() for ex in examples]
        assert total.item() == pytest.approx(0.3 * parts[0] + 0.7 * parts[1], rel=1e-12)
        assert report.weights == pytest.approx({0: 0.3, 1: 0.7})
        assert report.per_source[0] == pytest.approx(parts[0], rel=1e-12)

    def test_weights_are_normalised(self):
        assert_allclose(normalize_weights([2.0, 6.0]), [0.25, 0.75])

    def test_all_zero_weights(self):
        with pytest.raises(DataError):
            normalize_weights([0.0, 0.0])

    def test_negative_example_weight(self, small_corpus):
        u = small_corpus[0]
        with pytest.raises(DataError):
            TrainingExample(u.text, u.mel, weight=-1.0)

    def test_no_examples(self, tiny_model):
        with pytest.raises(DataError):
            multi_teacher_loss([], tiny_model, RngStream(0))

    def test_source_selection(self):
        weights = source_weights(3, DEFAULT_TEACHER_WEIGHTS, 6)
        assert list(weights) == [0, 1, 2]
        assert sum(weights.values()) == pytest.approx(1.0)
        assert weights[0] == pytest.approx(0.22 / 0.48)

    def test_too_many_sources(self):
        with pytest.raises(ConfigError):
            source_weights(8, DEFAULT_TEACHER_WEIGHTS, 6)


class TestOptimisation:
    def test_schedule(self):
        assert learning_rate(0, 100, 1e-3) == 0.0
        assert learning_rate(10, 100, 1e-3) == pytest.approx(1e-3)
        assert learning_rate(55, 100, 1e-3) == pytest.approx(0.5e-3)
        assert learning_rate(100, 100, 1e-3) == pytest.approx(0.0)

    def test_clip(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert clip_by_global_norm(grads, 1.0) == pytest.approx(5.0)
        assert_allclose([grads["a"][0], grads["b"][0]], [0.6, 0.8], rtol=1e-9)

    def test_adamw_first_step_moves_against_gradient(self, tiny_model):
        name = next(iter(tiny_model.params.arrays()))
        before = tiny_model.params[name].data.copy()
        grad = np.ones_like(before)
        AdamW(lr=0.01, weight_decay=0.0).step(tiny_model.params, {name: grad})
        assert_allclose(tiny_model.params[name].data, before - 0.01, atol=1e-6)


class TestGradientCheck:
    def test_tiny_model_passes(self, make_model, small_corpus):
        model = make_model(seed=2)
        u = small_corpus[1]
        examples = [TrainingExample(u.text, u.mel, 0, 0.6), TrainingExample(u.text, u.mel, 1, 0.4)]
        failures = [name for name, report in gradient_check(model, examples, seed=4)
                    if not within_tolerance(report)]
        assert failures == []


class TestTrainer:
    def test_writes_metrics_and_checkpoints(self, small_corpus, tmp_path):
        result = Trainer(tiny_settings(), small_corpus, tmp_path).train(progress=False)
        lines = [json.loads(line) for line in result.metrics_path.read_text().splitlines()]
        assert lines[0]["type"] == "config"
        assert [r["step"] for r in lines[1:]] == [0, 1, 2]
        assert all(np.isfinite(r["total"]) for r in lines[1:])
        assert result.final_checkpoint == tmp_path / "final.belc"
        assert len(list((tmp_path / "checkpoints").glob("*.belc"))) == 2
        config, _ = read_checkpoint(result.final_checkpoint)
        assert config["step"] == 3 and config["model"]["preset"] == "tiny"

    def test_same_seed_same_weights(self, small_corpus, tmp_path):
        a = Trainer(tiny_settings(steps=2), small_corpus, tmp_path / "a").train(progress=False)
        b = Trainer(tiny_settings(steps=2), small_corpus, tmp_path / "b").train(progress=False)
        _, wa = read_checkpoint(a.final_checkpoint)
        _, wb = read_checkpoint(b.final_checkpoint)
        for name in wa:
            assert_array_equal(wa[name], wb[name])

    def test_model_must_match_corpus(self, small_corpus, tmp_path):
        with pytest.raises(ConfigError):
            Trainer(tiny_settings(mel_dim=5), small_corpus, tmp_path)

    def test_streaming_fine_tune(self, small_corpus, tmp_path):
        settings = tiny_settings(steps=1, stream=True, s_text=2, s_audio=3)
        trainer = Trainer(settings, small_corpus, tmp_path)
        assert all(small_corpus[i].speaker_id == 0 for i in trainer.pool)
        assert trainer.objective.lambda_flux == pytest.approx(0.1)
        result = trainer.train(progress=False)
        assert np.isfinite(result.reports[0].total)

    def test_stream_pool_filters_ratio(self, small_corpus):
        assert stream_training_pool(small_corpus, 0, 100.0, 2, 3) == []

    def test_data_aug_uses_one_source(self, small_corpus, tmp_path):
        trainer = Trainer(tiny_settings(mixing="data_aug"), small_corpus, tmp_path)
        examples = trainer.examples_for(0, RngStream(0, 3))
        assert len(examples) == 1 and examples[0].weight == 1.0

    def test_regression_loss_falls(self, small_corpus, tmp_path):
        settings = tiny_settings(steps=150, teachers=1, peak_lr=1e-2, checkpoint_every=0, seed=11)
        reports = Trainer(settings, small_corpus, tmp_path).train(progress=False).reports
        early = np.mean([r.reg for r in reports[:20]])
        late = np.mean([r.reg for r in reports[-20:]])
        assert np.isfinite(late)
        assert late < early
