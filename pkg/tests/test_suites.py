import numpy as np
import pytest

from core.errors import ConfigError
from core.suite_base import VerifySuite
from core.verifier import Verifier
from suites import SUITE_REGISTRY, get_suite

QUICK = {"scale": "quick", "seed": 0}


class BrokenSuite(VerifySuite):
    id = "broken"
    display_name = "Broken"

    def checks(self):
        return {"ok": lambda: (True, "fine"), "raises": self.explode}

    def explode(self):
        raise RuntimeError("boom")


class TestRegistry:
    def test_order(self):
        assert list(SUITE_REGISTRY) == ["gradcheck", "sampler", "consistency", "corpus", "streaming"]

    def test_unknown_suite(self):
        with pytest.raises(KeyError):
            get_suite("nope")

    def test_options_reach_suite(self):
        suite = get_suite("sampler", QUICK)
        assert suite.quick and suite.seed == 0
        assert suite.size(1000, 10) == 10


class TestSuiteBase:
    def test_exception_becomes_failed_check(self):
        events = []
        result = BrokenSuite().run(lambda *e: events.append(e))
        assert not result.success
        assert result.checks["ok"] == (True, "fine")
        assert result.checks["raises"][0] is False
        assert "RuntimeError: boom" in result.errors[0]
        assert ("broken", "raises", "fail") in events
        assert result.summary == "1 check(s) passed, 1 failed, 1 error(s)"

    def test_as_dict(self):
        data = BrokenSuite().run().as_dict()
        assert data["suite"] == "broken" and data["success"] is False
        assert data["checks"]["ok"] == {"passed": True, "detail": "fine"}


class TestQuickChecks:
    @pytest.mark.parametrize("suite_id, check", [
        ("gradcheck", "toy_network"),
        ("consistency", "constraints_hold"),
        ("consistency", "beta_monotone"),
        ("corpus", "template_margin"),
        ("corpus", "noiseless_decode"),
        ("corpus", "file_round_trip"),
        ("streaming", "partition_examples"),
        ("streaming", "feasibility_closure"),
        ("streaming", "chunk_mask_order"),
        ("sampler", "deterministic_replay"),
        ("sampler", "beta_scale_variance"),
    ])
    def test_check_passes(self, suite_id, check):
        checks = get_suite(suite_id, QUICK).checks()
        passed, detail = checks[check]()
        assert passed, detail

    def test_beta_scales_draw_independently(self):
        suite = get_suite("sampler", QUICK)
        one, two = suite.beta_scale_draws(1.0), suite.beta_scale_draws(2.0)
        assert not np.allclose(two, np.sqrt(2.0) * one)
        assert abs(np.corrcoef(one, two)[0, 1]) < 0.05

    def test_streaming_suite(self):
        result = get_suite("streaming", QUICK).run()
        assert result.success, result.checks


class TestVerifier:
    def test_resolve(self):
        verifier = Verifier(QUICK)
        assert verifier.resolve("all") == list(SUITE_REGISTRY)
        assert verifier.resolve("corpus") == ["corpus"]

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            Verifier().resolve("everything")

    def test_report(self):
        report = Verifier(QUICK).run("streaming")
        assert report.success
        assert report.summary == "1 suite(s) passed"
        assert report.as_dict()["suites"][0]["suite"] == "streaming"
