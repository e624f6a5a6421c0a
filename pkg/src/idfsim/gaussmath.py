"""Gaussian numerics: standard normal CDF/quantile, binary divergence,
semidefinite Cholesky and seeded sampling streams."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import InvalidArgument

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Acklam's rational approximation, relative error ~1.15e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def std_normal_cdf(x):
    """Standard normal CDF, scalar or elementwise over an array."""
    arr, scalar = _as_float_array(x, "x")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("std_normal_cdf requires finite input")
    out = 0.5 * special.erfc(-arr / _SQRT2)
    return float(out) if scalar else out


def std_normal_pdf(x):
    arr, scalar = _as_float_array(x, "x")
    out = _INV_SQRT_2PI * np.exp(-0.5 * arr * arr)
    return float(out) if scalar else out


def _acklam_lower(q):
    # q in (0, 0.5]; returns an approximation of the quantile (<= 0).
    out = np.empty_like(q)
    tail = q < _P_LOW
    if np.any(tail):
        r = np.sqrt(-2.0 * np.log(q[tail]))
        num = ((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]
        den = (((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0
        out[tail] = num / den
    mid = ~tail
    if np.any(mid):
        s = q[mid] - 0.5
        r = s * s
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * s
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        out[mid] = num / den
    return out


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf`.

    Rational approximation followed by one Newton step against the CDF.
    Returns -inf at 0 and +inf at 1. The upper half is computed by symmetry
    so that both tails keep full relative precision.
    """
    arr, scalar = _as_float_array(p, "p")
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidArgument("std_normal_quantile requires 0 <= p <= 1")
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    out[arr == 0.0] = -np.inf
    out[arr == 1.0] = np.inf
    inner = (arr > 0.0) & (arr < 1.0)
    if np.any(inner):
        pi = arr[inner]
        upper = pi > 0.5
        q = np.where(upper, 1.0 - pi, pi)
        x = _acklam_lower(q)
        # Newton step on the lower-tail problem Phi(x) = q.
        err = 0.5 * special.erfc(-x / _SQRT2) - q
        x = x - err / (_INV_SQRT_2PI * np.exp(-0.5 * x * x))
        out[inner] = np.where(upper, -x, x)
    return float(out[0]) if scalar else out


def binary_kl(lam, mu, base=2.0):
    """Divergence between Bernoulli(lam) and Bernoulli(mu), in bits by default.

    Pass ``base=math.e`` for nats. Uses the convention 0*log 0 = 0.
    """
    lam = float(lam)
    mu = float(mu)
    if not (0.0 < mu < 1.0):
        raise InvalidArgument("binary_kl requires 0 < mu < 1")
    if not (0.0 <= lam <= 1.0):
        raise InvalidArgument("binary_kl requires 0 <= lambda <= 1")
    total = 0.0
    if lam > 0.0:
        total += lam * math.log(lam / mu)
    if lam < 1.0:
        total += (1.0 - lam) * math.log((1.0 - lam) / (1.0 - mu))
    total /= math.log(base)
    # Rounding can leave a -1e-17 residue at lam == mu.
    return max(total, 0.0)


def validate_covariance(sigma):
    a = np.array(sigma, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise InvalidArgument("covariance must be a non-empty square matrix")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument("covariance has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise InvalidArgument("covariance is not symmetric")
    return a


def cholesky(sigma):
    """Lower-triangular A with A @ A.T == sigma; positive semidefinite allowed.

    Zero pivots give a zero column, so degenerate directions stay
    deterministic when sampling.
    """
    a = validate_covariance(sigma)
    n = a.shape[0]
    trace = float(np.trace(a))
    tol = 1e-12 * max(abs(trace), 1e-300)
    low = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if d < -tol:
            raise InvalidArgument("covariance is not positive semidefinite")
        if d <= tol:
            rest = a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]
            if np.any(np.abs(rest) > 1e-9 * max(abs(trace), 1.0)):
                raise InvalidArgument("covariance is not positive semidefinite")
            continue
        low[j, j] = math.sqrt(d)
        low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


class RngStream:
    """Seeded random stream identified by ``(seed, stream_id)``.

    Child streams from :meth:`substream` depend only on the identifiers,
    never on how much of the parent has been consumed, which is what keeps
    parallel Monte Carlo independent of the worker count.
    """

    def __init__(self, seed, stream_id=0, _path=()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(int(p) for p in _path)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.path)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def substream(self, *ids):
        return RngStream(self.seed, self.stream_id, self.path + tuple(ids))

    def fresh(self):
        """A new stream positioned at the start of this stream's sequence."""
        return RngStream(self.seed, self.stream_id, self.path)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


def sample_std_normal(rng, size=None):
    return rng.gen.standard_normal(size)


def sample_mvn(mu, sigma, rng, size=None):
    """Draws mu + A z with A = cholesky(sigma); ``size`` prepends sample axes."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    a = cholesky(sigma)
    if a.shape[0] != mu.shape[0]:
        raise InvalidArgument("mean and covariance dimensions differ")
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    z = rng.gen.standard_normal(shape + (mu.shape[0],))
    return mu + z @ a.T
