"""
Verification Suite Base Class
Every verification suite (gradcheck, sampler, consistency, ...) implements
this interface. Adding a suite = subclass VerifySuite + register it in
suites/__init__.py.
"""

from __future__ import annotations
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable

logger = logging.getLogger(__name__)

CheckFn = Callable[[], tuple[bool, str]]


@dataclass
class SuiteResult:
    suite_id: str
    success: bool = True
    checks: dict[str, tuple[bool, str]] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def summary(self) -> str:
        ok = sum(1 for passed, _ in self.checks.values() if passed)
        fail = len(self.checks) - ok
        parts = [f"{ok} check(s) passed"]
        if fail:
            parts.append(f"{fail} failed")
        if self.errors:
            parts.append(f"{len(self.errors)} error(s)")
        return ", ".join(parts)

    def as_dict(self) -> dict:
        return {
            "suite": self.suite_id,
            "success": self.success,
            "checks": {k: {"passed": ok, "detail": msg} for k, (ok, msg) in self.checks.items()},
            "errors": self.errors,
            "warnings": self.warnings,
            "seconds": round(self.seconds, 3),
        }


class VerifySuite(ABC):
    """
    A named group of pass/fail checks.

    Subclasses must implement:
      - id, display_name, description (class attributes)
      - checks() -> ordered mapping of check name to a zero-argument callable
        returning (passed, detail)

    options:
      scale   "full" runs oracle-sized samples, "quick" shrinks them
      seed    master seed for every random draw
    """

    id: str = ""
    display_name: str = ""
    description: str = ""

    def __init__(self, options: dict[str, Any] | None = None):
        self.options: dict[str, Any] = options or {}

    @property
    def quick(self) -> bool:
        return self.options.get("scale", "full") == "quick"

    @property
    def seed(self) -> int:
        return int(self.options.get("seed", 0))

    def size(self, full: int, quick: int) -> int:
        return quick if self.quick else full

    @abstractmethod
    def checks(self) -> dict[str, CheckFn]:
        ...

    def run(self, on_check: Callable[[str, str, str], None] | None = None) -> SuiteResult:
        result = SuiteResult(self.id)
        started = time.perf_counter()
        for name, fn in self.checks().items():
            if on_check:
                on_check(self.id, name, "running")
            try:
                passed, detail = fn()
            except Exception as e:
                passed, detail = False, f"{type(e).__name__}: {e}"
                result.errors.append(f"{name}: {detail}")
                logger.error(f"[verify:{self.id}] {name} raised", exc_info=True)
            result.checks[name] = (bool(passed), detail)
            level = logging.INFO if passed else logging.WARNING
            logger.log(level, f"[verify:{self.id}] {'PASS' if passed else 'FAIL'} {name}: {detail}")
            if on_check:
                on_check(self.id, name, "pass" if passed else "fail")
        result.success = all(ok for ok, _ in result.checks.values())
        result.seconds = time.perf_counter() - started
        return result

    def __repr__(self) -> str:
        return f"<VerifySuite {self.id}>"
