"""
Suite Registry
To add a new verification suite:
  1. Create suites/yoursuite.py implementing VerifySuite
  2. Import it here and add to SUITE_REGISTRY
  The verifier and the `verify` command pick it up automatically.
"""

from suites.gradcheck import GradCheckSuite
from suites.sampler import SamplerSuite
from suites.consistency import ConsistencySuite
from suites.corpus import CorpusSuite
from suites.streaming import StreamingSuite

# Ordered -- "all" runs suites in this order
SUITE_REGISTRY: dict[str, type] = {
    GradCheckSuite.id:      GradCheckSuite,
    SamplerSuite.id:        SamplerSuite,
    ConsistencySuite.id:    ConsistencySuite,
    CorpusSuite.id:         CorpusSuite,
    StreamingSuite.id:      StreamingSuite,
}


def get_suite(suite_id: str, options: dict | None = None):
    """Instantiate a suite by ID with optional options dict."""
    cls = SUITE_REGISTRY.get(suite_id)
    if cls is None:
        raise KeyError(f"Unknown suite: {suite_id!r}")
    return cls(options=options)
