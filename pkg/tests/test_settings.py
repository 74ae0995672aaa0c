import pytest

from core.errors import ConfigError
from core.settings import DEFAULT_SETTINGS, RunConfig, describe_settings, parse_value


class TestParseValue:
    def test_scalars(self):
        assert parse_value("seed", "42") == 42
        assert parse_value("peak_lr", "0.002") == pytest.approx(0.002)
        assert parse_value("stream", "yes") is True
        assert parse_value("flux_clamp", "off") is False

    def test_int_widens_to_float(self):
        assert parse_value("beta_scale", 2) == 2.0

    def test_lists(self):
        assert parse_value("text", "1, 2,3") == (1, 2, 3)
        assert parse_value("teacher_weights", [1, 2]) == (1.0, 2.0)

    def test_optional_none(self):
        assert parse_value("hidden_dim", "none") is None
        assert parse_value("hidden_dim", None) is None

    def test_required_value(self):
        with pytest.raises(ConfigError):
            parse_value("seed", None)

    def test_bad_literal(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            parse_value("steps", "many")

    def test_wrong_python_type(self):
        with pytest.raises(ConfigError):
            parse_value("mode", 3)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="Unknown config key"):
            parse_value("learning_rate", "1")


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg["preset"] == "desk"
        assert cfg["teacher_weights"] == (0.22, 0.13, 0.13, 0.13, 0.13, 0.13, 0.13)

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("# run\npreset = tiny\nsteps = 10  # short\n", encoding="utf-8")
        cfg = RunConfig(path, {"steps": "20"})
        assert cfg["preset"] == "tiny"
        assert cfg["steps"] == 20

    def test_unknown_file_key(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("colour = blue\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="run.conf:1"):
            RunConfig(path)

    def test_line_without_assignment(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("preset\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            RunConfig(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            RunConfig(tmp_path / "absent.conf")

    def test_save_and_reload(self, tmp_path):
        cfg = RunConfig(overrides={"text": "3,1,4", "hidden_dim": 32, "stream": True})
        cfg.save(tmp_path / "saved.conf")
        again = RunConfig(tmp_path / "saved.conf")
        assert again.as_dict() == cfg.as_dict()

    def test_get_and_set(self):
        cfg = RunConfig()
        assert cfg.get("hidden_dim", 64) == 64
        cfg["hidden_dim"] = "48"
        assert cfg.get("hidden_dim") == 48
        with pytest.raises(ConfigError):
            cfg.get("nope")

    def test_loss_weight_defaults(self):
        assert RunConfig().lambda_samp == 0.2
        assert RunConfig(overrides={"head": "melle"}).lambda_samp == 0.1
        assert RunConfig().lambda_flux == 0.5
        assert RunConfig(overrides={"stream": True}).lambda_flux == 0.1
        assert RunConfig(overrides={"lambda_flux": 0.3, "stream": True}).lambda_flux == 0.3

    def test_help_lists_every_key(self):
        text = describe_settings()
        assert all(key in text for key in DEFAULT_SETTINGS)
