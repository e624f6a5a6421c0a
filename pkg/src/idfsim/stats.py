"""Monte Carlo proportion estimates with Wilson score intervals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .gaussmath import std_normal_quantile

_Z95 = std_normal_quantile(0.975)


def wilson_interval(successes, trials, confidence=0.95):
    if trials <= 0:
        return 0.0, 1.0
    z = _Z95 if confidence == 0.95 else std_normal_quantile(0.5 + confidence / 2.0)
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials))
    low = max(0.0, center - half)
    high = min(1.0, center + half)
    # Keep ci_low <= p_hat <= ci_high exact under rounding at p in {0, 1}.
    return min(low, p), max(high, p)


@dataclass(frozen=True)
class ErrorEstimate:
    p_hat: float
    trials: int
    ci_low: float
    ci_high: float
    events: int = 0

    @classmethod
    def from_counts(cls, events, trials):
        events = int(events)
        trials = int(trials)
        low, high = wilson_interval(events, trials)
        return cls(events / trials if trials else 0.0, trials, low, high, events)

    def std_error(self):
        p = self.p_hat
        return math.sqrt(p * (1.0 - p) / self.trials) if self.trials else float("nan")

    def to_dict(self):
        return asdict(self)
