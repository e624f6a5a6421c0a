"""Closed-form bounds and rate calculators for the identification code.

Identity counts are handled as log2 values throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidArgument
from .gaussmath import binary_kl
from .stats import ErrorEstimate


class ScalingKind(enum.Enum):
    EXPONENTIAL = "exponential"              # N = 2^(nR)
    SUPER_EXPONENTIAL = "super-exponential"  # N = n^(nR)
    DOUBLY_EXPONENTIAL = "doubly-exponential"  # N = 2^(2^(nR))

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"phi1": cls.EXPONENTIAL, "phi2": cls.SUPER_EXPONENTIAL,
                   "phi3": cls.DOUBLY_EXPONENTIAL}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise InvalidArgument(f"unknown scaling kind {value!r}") from None


@dataclass(frozen=True)
class BoundReport:
    log2_bound: float
    L: int
    lam: float
    M: int | None = None
    mu: float | None = None
    vacuous: bool = False

    @property
    def bound(self):
        return 2.0 ** self.log2_bound


def chernoff_log2_bound(L, lam, mu):
    """log2 of 2^(-L D(lam||mu)), the tail bound for a sum of L Bernoulli(<=mu)."""
    if not 0.0 < mu < 1.0:
        raise InvalidArgument("mu must lie in (0, 1)")
    if lam < mu or lam > 1.0:
        raise InvalidArgument("need mu <= lambda <= 1")
    return -L * binary_kl(lam, mu)


def corollary_exponent(lam, M):
    return lam * math.log2(M) - 1.0


def corollary_log2_bound(L, lam, M):
    """Weakened bound 2^(-L (lam log2 M - 1)); vacuous when lam log2 M <= 1."""
    if M < 2:
        raise InvalidArgument("M must be >= 2")
    if lam < 1.0 / M:
        raise InvalidArgument("need 1/M <= lambda")
    e = corollary_exponent(lam, M)
    return BoundReport(-L * e, L, lam, M=M, vacuous=e <= 0.0)


@dataclass(frozen=True)
class IdentityCount:
    log2_N: float
    feasible: bool


def max_identities_log2(L, lam, M):
    """log2 of the largest identity count with a positive survival bound."""
    e = corollary_exponent(lam, M)
    if e <= 0.0:
        return IdentityCount(0.0, False)
    return IdentityCount(L * e, True)


@dataclass(frozen=True)
class SurvivalBound:
    log2_bound: float
    positive: bool


def survival_log2_probability(log2_N, L, lam, M):
    """log2 of 1 - (N-1) 2^(-L(lam log2 M - 1)), the union-bound probability
    that no competing identity collides on more than a lam fraction.

    Evaluated without forming N: with d = log2 N - E the bound is
    (1 - 2^d) + 2^-E.
    """
    if log2_N < 0:
        raise InvalidArgument("log2_N must be nonnegative")
    e_total = L * corollary_exponent(lam, M)
    d = log2_N - e_total
    if d > 0:
        # 2^-E - (2^d - 1) with both terms exact enough to compare.
        excess = math.expm1(d * math.log(2.0))
        tiny = 2.0 ** -e_total if e_total < 1074 else 0.0
        if excess >= tiny:
            return SurvivalBound(-math.inf, False)
        return SurvivalBound(math.log2(tiny - excess), True)
    if d == 0:
        return SurvivalBound(-e_total, True)
    head = -math.expm1(d * math.log(2.0))  # 1 - 2^d in (0, 1)
    # N >= 1 keeps the bound at most 1; clamp rounding above it.
    return SurvivalBound(min(0.0, float(np.logaddexp2(math.log2(head), -e_total))), True)


def rate_under_scaling(log2_N, n, kind):
    """Rate R with N = phi(nR) for the chosen scaling function."""
    kind = ScalingKind.parse(kind)
    if not log2_N > 0:
        raise InvalidArgument("log2_N must be positive")
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    if kind is ScalingKind.EXPONENTIAL:
        return log2_N / n
    if kind is ScalingKind.SUPER_EXPONENTIAL:
        if n < 2:
            raise InvalidArgument("super-exponential scaling needs n >= 2")
        return log2_N / (n * math.log2(n))
    if log2_N <= 1:
        raise InvalidArgument("doubly-exponential scaling needs log2_N > 1")
    return math.log2(log2_N) / n


def doubly_exponential_rate_from_log2_L(log2_L, lam, M, n):
    """Doubly-exponential rate of the maximal code when L itself is 2^log2_L.

    log2 log2 N = log2_L + log2(lam log2 M - 1), usable when L is too large
    for a float (e.g. L = 2^(2^n)).
    """
    e = corollary_exponent(lam, M)
    if e <= 0:
        raise InvalidArgument("infeasible regime: lambda log2 M <= 1")
    return (log2_L + math.log2(e)) / n


def tail_threshold(L, lam):
    """Smallest integer count strictly exceeding L * lam (exact for decimal lam)."""
    return math.floor(Fraction(L) * Fraction(str(lam))) + 1


def exact_binomial_tail(L, p, lam):
    """Pr[Bin(L, p) > L*lam] as an exact Fraction; ``p`` may be a Fraction."""
    p = Fraction(p)
    q = 1 - p
    j0 = tail_threshold(L, lam)
    return sum((math.comb(L, j) * p ** j * q ** (L - j) for j in range(j0, L + 1)), Fraction(0))


def log2_fraction(x):
    """log2 of a positive Fraction without float underflow."""
    if x <= 0:
        return -math.inf
    return math.log2(x.numerator) - math.log2(x.denominator)


@dataclass
class PsiTailResult:
    L: int
    lam: float
    M: int
    estimate: ErrorEstimate
    chernoff_bound: float
    corollary_bound: float
    corollary_vacuous: bool


def empirical_psi_tail(L, lam, M, pair_trials, rng, source="bernoulli", master_seed=0,
                       chunk=1 << 22):
    """Frequency of {sum_l Psi_l > L lam} over independent collision experiments.

    ``source="bernoulli"`` draws Psi_l i.i.d. Bernoulli(1/M) directly;
    ``source="family"`` takes Psi_l = [F_a(l) = F_b(l)] for random identity
    pairs of the pseudorandom function family.
    """
    if pair_trials < 1:
        raise InvalidArgument("pair_trials must be positive")
    j0 = tail_threshold(L, lam)
    rows = max(1, chunk // L)
    hits = 0
    if source == "bernoulli":
        for b, start in enumerate(range(0, pair_trials, rows)):
            n = min(rows, pair_trials - start)
            psi = rng.substream(b).gen.random((n, L)) < 1.0 / M
            hits += int(np.count_nonzero(psi.sum(axis=1) >= j0))
    elif source == "family":
        from .funcfam import FamilyConfig, collision_counts, sample_identities

        cfg = FamilyConfig(L, (M,))
        for b, start in enumerate(range(0, pair_trials, rows)):
            n = min(rows, pair_trials - start)
            sub = rng.substream(b)
            a = sample_identities(sub, n)
            c = sample_identities(sub, n)
            hits += int(np.count_nonzero(collision_counts(master_seed, 1, a, c, cfg) >= j0))
    else:
        raise InvalidArgument(f"unknown source {source!r}")
    cor = corollary_log2_bound(L, lam, M)
    return PsiTailResult(L, lam, M, ErrorEstimate.from_counts(hits, pair_trials),
                         2.0 ** chernoff_log2_bound(L, lam, 1.0 / M), cor.bound, cor.vacuous)


def bounds_row(L, lam, M):
    """One row of the bounds sweep, with the ordering check on the exact tail."""
    lam = float(lam)
    row = {"L": L, "lambda": lam, "M": M}
    if lam < 1.0 / M:
        row.update(valid=False)
        return row
    exact = exact_binomial_tail(L, Fraction(1, M), lam)
    log2_exact = log2_fraction(exact)
    ch = chernoff_log2_bound(L, lam, 1.0 / M)
    cor = corollary_log2_bound(L, lam, M)
    ids = max_identities_log2(L, lam, M)
    row.update(
        valid=True,
        log2_exact_tail=log2_exact,
        log2_chernoff=ch,
        log2_corollary=cor.log2_bound,
        corollary_vacuous=cor.vacuous,
        log2_N_max=ids.log2_N,
        feasible=ids.feasible,
        ordering_holds=bool(log2_exact <= ch <= cor.log2_bound),
    )
    return row
