"""Common randomness from one Gaussian feedback sample.

A Gaussian output Y is standardized, pushed through the normal CDF and
binned into L equiprobable cells, giving a symbol that is exactly uniform
on {1..L} and computable by every party that observed Y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .gaussmath import std_normal_quantile


def derive_output_stats(params, state=None):
    """Mean and standard deviation of the output of an all-zero channel use."""
    if state is None:
        return 0.0, math.sqrt(params.sigma2)
    return state.total_mean(), math.sqrt(state.total_variance() + params.sigma2)


@dataclass(frozen=True)
class QuantizerConfig:
    L: int
    mu_y: float = 0.0
    sigma_y: float = 1.0
    boundaries: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise InvalidArgument("L must be an integer >= 2")
        if not (self.sigma_y > 0 and math.isfinite(self.sigma_y)):
            raise InvalidArgument("sigma_y must be positive")
        if not math.isfinite(self.mu_y):
            raise InvalidArgument("mu_y must be finite")
        object.__setattr__(self, "boundaries", _compute_boundaries(self.L, self.mu_y, self.sigma_y))

    @classmethod
    def for_channel(cls, L, params, state=None):
        mu_y, sigma_y = derive_output_stats(params, state)
        return cls(L, mu_y, sigma_y)


def _compute_boundaries(L, mu_y, sigma_y):
    probs = np.arange(L + 1, dtype=float) / L
    b = mu_y + sigma_y * std_normal_quantile(probs)
    b[0] = -np.inf
    b[-1] = np.inf
    if not np.all(np.diff(b) > 0):
        raise InvalidArgument("quantizer boundaries are not strictly increasing; L too large")
    b.flags.writeable = False
    return b


def bin_boundaries(config):
    """The L+1 cell edges mu_y + sigma_y * quantile(l / L), l = 0..L."""
    return config.boundaries


def quantize(y, config):
    """Cell index l in 1..L with boundary[l-1] < y <= boundary[l].

    Accepts a scalar or an array; ties go to the lower cell.
    """
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("quantize requires finite input")
    idx = np.searchsorted(config.boundaries, arr, side="left")
    if arr.ndim == 0:
        return int(idx)
    return idx.astype(np.int64)


def boundaries_to_csv(config, path):
    with open(path, "w") as fh:
        fh.write("l,probability,boundary\n")
        for l, b in enumerate(config.boundaries):
            fh.write(f"{l},{repr(l / config.L)},{repr(float(b))}\n")


@dataclass(frozen=True)
class UniformityReport:
    L: int
    samples: int
    chi2: float
    critical: float
    p_value: float

    @property
    def passed(self):
        return self.chi2 < self.critical


def uniformity_chi2(symbols, L, alpha=0.01):
    """Pearson chi-square test of symbols in 1..L against the uniform PMF."""
    from scipy.stats import chi2 as chi2_dist

    sym = np.asarray(symbols).reshape(-1)
    if sym.size == 0:
        raise InvalidArgument("need at least one symbol")
    if np.any(sym < 1) or np.any(sym > L):
        raise InvalidArgument("symbols outside 1..L")
    counts = np.bincount(sym, minlength=L + 1)[1:]
    expected = sym.size / L
    stat = float(np.sum((counts - expected) ** 2) / expected)
    return UniformityReport(int(L), int(sym.size), stat, float(chi2_dist.ppf(1 - alpha, L - 1)),
                            float(chi2_dist.sf(stat, L - 1)))


def cr_round_outputs(params, rng, samples, state=None):
    """Outputs y_1 of the all-zero common-randomness use."""
    from .channel import draw_disturbance, summed_state

    z, s = draw_disturbance(rng, samples, 1, params, state)
    y = z[:, 0] if s is None else summed_state(s)[:, 0] + z[:, 0]
    return y
