"""
Verifier
Runs registered verification suites and aggregates their results.
"""

from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Callable

from core.errors import ConfigError
from core.suite_base import SuiteResult
from suites import SUITE_REGISTRY, get_suite

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str, str, str], None]


@dataclass
class VerifyReport:
    results: dict[str, SuiteResult] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return bool(self.results) and all(r.success for r in self.results.values())

    @property
    def summary(self) -> str:
        ok = sum(1 for r in self.results.values() if r.success)
        fail = len(self.results) - ok
        parts = [f"{ok} suite(s) passed"]
        if fail:
            parts.append(f"{fail} failed")
        return ", ".join(parts)

    def as_dict(self) -> dict:
        return {"success": self.success, "suites": [r.as_dict() for r in self.results.values()]}


class Verifier:
    def __init__(self, options: dict | None = None):
        self.options = options or {}

    def resolve(self, name: str) -> list[str]:
        if name == "all":
            return list(SUITE_REGISTRY)
        if name not in SUITE_REGISTRY:
            raise ConfigError(f"unknown suite {name!r}; choose from all, {', '.join(SUITE_REGISTRY)}")
        return [name]

    def run(self, name: str = "all", progress: ProgressCallback | None = None) -> VerifyReport:
        report = VerifyReport()
        for suite_id in self.resolve(name):
            suite = get_suite(suite_id, self.options)
            logger.info(f"[verify] running {suite.display_name}")
            result = suite.run(progress)
            report.results[suite_id] = result
            logger.info(f"[verify:{suite_id}] {result.summary} in {result.seconds:.1f}s")
        return report
