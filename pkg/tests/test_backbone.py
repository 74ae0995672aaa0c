import numpy as np
import pytest
from numpy.testing import assert_array_equal

from core import numerics as nx
from core.backbone import BelleModel, GenerationState, causal_mask
from core.errors import CheckpointFormatError, ConfigError, DataError, ShapeError
from core.model_config import ModelConfig
from core.sampler import RngStream
from core.sequences import MelSequence, TokenSequence


def target(frames: int, dim: int = 4, seed: int = 0) -> np.ndarray:
    return RngStream(seed, 77).normal((frames, dim))


class TestModelConfig:
    def test_parameter_count_matches_store(self, tiny_model):
        assert tiny_model.params.count() == tiny_model.cfg.parameter_count()

    def test_desk_parameter_count(self):
        cfg = ModelConfig.from_preset("desk")
        assert BelleModel(cfg).params.count() == cfg.parameter_count()

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            ModelConfig(hidden_dim=30, num_heads=4)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_preset("huge")

    def test_dict_round_trip(self, tiny_cfg):
        assert ModelConfig.from_dict(tiny_cfg.to_dict()) == tiny_cfg

    def test_full_scale_preset_dimensions(self):
        cfg = ModelConfig.from_preset("paper")
        assert (cfg.num_blocks, cfg.num_heads, cfg.hidden_dim, cfg.ffn_dim, cfg.mel_dim) == (12, 16, 1024, 4096, 80)


class TestEmbedding:
    def test_wrapped_ids(self):
        assert TokenSequence((2, 3), 8).wrapped() == [8, 2, 3, 9]

    def test_out_of_range_token(self, tiny_model):
        with pytest.raises(DataError):
            tiny_model.embed_text([10])

    def test_prenet_checks_width(self, tiny_model):
        with pytest.raises(ShapeError):
            tiny_model.embed_frames(np.zeros((3, 5)), RngStream(0))

    def test_embed_inputs_text_only(self, tiny_model, tiny_cfg):
        x = tiny_model.embed_inputs(TokenSequence((1, 2, 3), 8), None, RngStream(0))
        assert x.shape == (5, tiny_cfg.hidden_dim)
        assert_array_equal(x.data, tiny_model.embed_text([8, 1, 2, 3, 9]).data)

    def test_embed_inputs_prenet_dropout_is_live(self, tiny_model):
        text, mel = TokenSequence((1, 2), 8), MelSequence(target(3), 62.5)
        a = tiny_model.embed_inputs(text, mel, RngStream(0, 1)).data
        b = tiny_model.embed_inputs(text, mel, RngStream(0, 1)).data
        c = tiny_model.embed_inputs(text, mel, RngStream(0, 2)).data
        assert a.shape[0] == 4 + 3
        assert_array_equal(a, b)
        assert_array_equal(a[:4], c[:4])
        assert not np.array_equal(a[4:], c[4:])

    def test_positions_limit(self, tiny_model, tiny_cfg):
        too_long = np.zeros((tiny_cfg.max_positions + 1, tiny_cfg.hidden_dim))
        with pytest.raises(DataError):
            tiny_model.add_positions(nx.Tensor(too_long))

    def test_mask_shape_checked(self, tiny_model):
        x = tiny_model.add_positions(tiny_model.embed_text([8, 1, 9]))
        with pytest.raises(ShapeError):
            tiny_model.decoder_forward(x, causal_mask(4))

    def test_decoder_prefix_is_bit_identical(self, tiny_model, tiny_cfg):
        rng = RngStream(0, 8)
        a = rng.normal((12, tiny_cfg.hidden_dim))
        b = a.copy()
        b[9:] += rng.normal((3, tiny_cfg.hidden_dim))
        ea = tiny_model.decoder_forward(tiny_model.add_positions(nx.Tensor(a)), causal_mask(12)).data
        eb = tiny_model.decoder_forward(tiny_model.add_positions(nx.Tensor(b)), causal_mask(12)).data
        assert_array_equal(ea[:9], eb[:9])
        assert not np.array_equal(ea[9:], eb[9:])


class TestTeacherForced:
    def test_output_shapes(self, tiny_model):
        y = target(6)
        out = tiny_model.teacher_forced([8, 1, 2, 9], y, RngStream(0, 1))
        assert out.z.shape == (6, 4)
        assert out.y1.shape == out.y2.shape == (6, 4)
        assert out.stop_scores.shape == (6,)
        assert len(out.nig) == 4 and out.gaussian is None

    def test_initial_refiners_are_identity(self, tiny_model):
        out = tiny_model.teacher_forced([8, 1, 2, 9], target(5), RngStream(0, 2))
        assert_array_equal(out.y1.data, out.z.data)
        assert_array_equal(out.y2.data, out.y1.data)

    def test_constraints_hold(self, tiny_model):
        _, nu, alpha, beta = tiny_model.teacher_forced([8, 3, 9], target(4), RngStream(0, 3)).nig
        assert np.all(nu.data > 0) and np.all(alpha.data > 1) and np.all(beta.data > 0)

    def test_location_is_causal(self, tiny_model):
        a = target(6)
        b = a.copy()
        b[3] += 5.0
        ga = tiny_model.teacher_forced([8, 1, 2, 9], a, RngStream(0, 4), training=False).location.data
        gb = tiny_model.teacher_forced([8, 1, 2, 9], b, RngStream(0, 4), training=False).location.data
        # frame 3 is the audio input of step 4
        assert_array_equal(ga[:4], gb[:4])

    def test_sampling_ablation_passes_location(self, tiny_model):
        out = tiny_model.teacher_forced([8, 1, 9], target(3), RngStream(0, 5), ablate_sampling=True)
        assert out.z is out.location

    def test_gaussian_head(self, make_model):
        model = make_model(head="melle")
        out = model.teacher_forced([8, 1, 9], target(3), RngStream(0, 6))
        assert out.nig is None
        mu, log_s2 = out.gaussian
        assert mu.shape == log_s2.shape == (3, 4)

    def test_interleaved_segments_must_cover_audio(self, tiny_model):
        with pytest.raises(ShapeError):
            tiny_model.teacher_forced([8, 1, 9], target(4), RngStream(0),
                                      segments=[("text", 0, 3), ("audio", 0, 2)])


def randomise(model: BelleModel, prefix: str, scale: float, seed: int = 9):
    rng = RngStream(seed, 1)
    for name, arr in model.params.arrays().items():
        if name.startswith(prefix):
            model.params.set(name, scale * rng.normal(arr.shape))


class TestRefiners:
    def test_postnet_receptive_field(self, make_model):
        model = make_model(postnet_blocks=5, postnet_kernel=5, seed=1)
        field = model.cfg.postnet_receptive_field
        assert field == 21
        randomise(model, "postnet.", 0.3)
        frames = RngStream(2, 0).normal((60, 4))
        moved = frames.copy()
        moved[30] += 1.0
        a = model.postnet_refine(frames).data
        b = model.postnet_refine(moved).data
        changed = np.flatnonzero(np.any(a != b, axis=1))
        assert_array_equal(changed, np.arange(30 - field // 2, 30 + field // 2 + 1))

    def test_postnet_edges_stay_local(self, make_model):
        model = make_model(postnet_blocks=3, postnet_kernel=3, seed=1)
        randomise(model, "postnet.", 0.3)
        frames = RngStream(3, 0).normal((20, 4))
        moved = frames.copy()
        moved[0] -= 2.0
        a = model.postnet_refine(frames).data
        b = model.postnet_refine(moved).data
        half = model.cfg.postnet_receptive_field // 2
        assert_array_equal(a[half + 1:], b[half + 1:])

    @pytest.mark.parametrize("prefix", ["denoiser.", "postnet."])
    def test_refiners_stay_finite_on_large_inputs(self, tiny_model, prefix):
        randomise(tiny_model, prefix, 1.0)
        sweep = np.repeat(np.linspace(-100.0, 100.0, 801)[:, None], 4, axis=1)
        scattered = RngStream(4, 0).uniform((500, 4)) * 200.0 - 100.0
        for z in (sweep, scattered):
            y1 = tiny_model.denoise(z).data
            y2 = tiny_model.postnet_refine(y1).data
            assert np.all(np.isfinite(y1)) and np.all(np.isfinite(y2))

    def test_param_shape_checked(self, tiny_model):
        with pytest.raises(ShapeError):
            tiny_model.params.set("stop.b", np.zeros(3))


class TestGenerate:
    def test_deterministic(self, tiny_model):
        text = TokenSequence((1, 2, 3), 8)
        a = tiny_model.generate(text, None, RngStream(5, 9), max_frames=10)
        b = tiny_model.generate(text, None, RngStream(5, 9), max_frames=10)
        assert_array_equal(a.frames, b.frames)

    def test_length_and_truncation(self, tiny_model):
        mel = tiny_model.generate(TokenSequence((1, 2), 8), None, RngStream(0, 1), max_frames=7)
        assert 1 <= mel.length <= 7
        scores = mel.meta["stop_scores"]
        assert len(scores) == mel.length
        assert mel.truncated == (not scores[-1] > tiny_model.cfg.stop_threshold)

    def test_beta_scale_must_be_positive(self, tiny_model):
        with pytest.raises(ConfigError):
            tiny_model.generate(TokenSequence((1,), 8), None, RngStream(0), beta_scale=0.0)

    def test_max_frames_positive(self, tiny_model):
        with pytest.raises(ConfigError):
            tiny_model.generate(TokenSequence((1,), 8), None, RngStream(0), max_frames=0)

    def test_prompt_frames_kept_in_front(self, tiny_model):
        prompt = (TokenSequence((4,), 8), MelSequence(target(3)))
        kept = tiny_model.generate(TokenSequence((1,), 8), prompt, RngStream(0, 2), max_frames=5)
        dropped = tiny_model.generate(TokenSequence((1,), 8), prompt, RngStream(0, 2), max_frames=5,
                                      keep_prompt=False)
        assert_array_equal(kept.frames[:3], prompt[1].frames)
        assert_array_equal(kept.frames[3:], dropped.frames)

    def test_state_matches_generate(self, tiny_model):
        text = TokenSequence((3, 1), 8)
        state = GenerationState(tiny_model, RngStream(1, 1))
        state.feed_text(text.wrapped())
        state.feed_start()
        stopped = state.run(6)
        mel = tiny_model.generate(text, None, RngStream(1, 1), max_frames=6)
        assert mel.truncated == (not stopped)
        assert_array_equal(tiny_model.postnet_refine(np.stack(state.y1)).data, mel.frames)


class TestPersistence:
    def test_save_and_load(self, tiny_model, tmp_path):
        path = tmp_path / "model.belc"
        tiny_model.save(path, {"step": 3})
        loaded, config = BelleModel.load(path)
        assert config["step"] == 3
        assert loaded.cfg == tiny_model.cfg
        for name, arr in tiny_model.params.arrays().items():
            assert_array_equal(loaded.params[name].data, arr)

    def test_load_rejects_other_shapes(self, tiny_model, make_model):
        other = make_model(hidden_dim=8, num_heads=2)
        with pytest.raises(CheckpointFormatError):
            other.params.load(tiny_model.params.arrays())
