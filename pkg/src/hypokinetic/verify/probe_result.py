"""Uniform probe output: estimate, uncertainty, threshold and a derived verdict."""
from __future__ import annotations

from dataclasses import dataclass, field

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"
XFAIL = "XFAIL"  # an expected violation was observed

_RANK = {PASS: 0, XFAIL: 0, INCONCLUSIVE: 1, FAIL: 2}


@dataclass
class ProbeResult:
    probe: str
    estimate: float
    uncertainty: float
    threshold: float
    verdict: str
    table: list = field(default_factory=list)  # rows for the CSV emitter
    details: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.verdict == FAIL

    def summary(self) -> dict:
        return {
            "probe": self.probe,
            "estimate": self.estimate,
            "uncertainty": self.uncertainty,
            "threshold": self.threshold,
            "verdict": self.verdict,
        }


def verdict_from(ok: bool) -> str:
    return PASS if ok else FAIL


def combine(verdicts) -> str:
    """Worst verdict with precedence FAIL > INCONCLUSIVE > PASS."""
    worst = PASS
    for v in verdicts:
        if v not in _RANK:
            raise ValueError(f"unknown verdict {v!r}")
        if _RANK[v] > _RANK[worst]:
            worst = v
    return worst
