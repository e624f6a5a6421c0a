"""Identification-with-feedback code over the (state-dependent) Gaussian MAC.

Every sender first transmits 0; the resulting output, seen by all parties
through feedback, is quantized into a common cell u in 1..L. Sender k then
sends F_{k,i_k}(u) with the inner code. The decoder, asked about identity
j_k, accepts iff the decoded message equals F_{k,j_k}(u).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams, count_power_violations, check_power, run_feedback_batch
from .crgen import QuantizerConfig, quantize
from .errors import InvalidArgument, PowerViolation
from .funcfam import (FamilyConfig, FamilyKey, collision_counts, family_keys, family_values,
                      sample_identities, split_identities)
from .innercode import _blocks, build_codebook
from .stats import ErrorEstimate

# Substream tags under a caller-supplied stream.
IDENTITY_STREAM = 0
SESSION_STREAM = 1


@dataclass(frozen=True)
class IdfCodeConfig:
    channel: ChannelParams
    power: object
    L: int
    family: FamilyConfig
    inner: object
    lam: float = 0.1
    master_seed: int = 0
    state: object = None
    epsilon_upper: tuple | None = None

    def __post_init__(self):
        if not 0.0 < self.lam < 0.5:
            raise InvalidArgument("lambda must lie in (0, 1/2)")
        K = self.channel.K
        if self.family.K != K or self.inner.K != K:
            raise InvalidArgument("family and inner code must cover all K senders")
        if self.family.L != self.L:
            raise InvalidArgument("family domain size differs from L")
        if tuple(self.family.M) != tuple(self.inner.M):
            raise InvalidArgument("family ranges and inner code sizes differ")
        if self.inner.sigma2 != self.channel.sigma2:
            raise InvalidArgument("inner code noise variance differs from the channel's")
        if self.state is not None and self.state.K != K:
            raise InvalidArgument("state dimension differs from K")
        if self.epsilon_upper is not None:
            object.__setattr__(self, "epsilon_upper", tuple(float(e) for e in self.epsilon_upper))

    @property
    def K(self):
        return self.channel.K

    @property
    def m(self):
        return self.inner.m

    def feasibility_flags(self):
        flags = []
        for k in range(self.K):
            eps = None if self.epsilon_upper is None else self.epsilon_upper[k]
            flags.append({
                "sender": k + 1,
                "one_over_M_le_half_lambda": 1.0 / self.family.M[k] <= self.lam / 2.0,
                "epsilon_le_half_lambda": None if eps is None else eps <= self.lam / 2.0,
                "epsilon_upper": eps,
            })
        return flags


class _BatchEncoder:
    """Vectorized encoder of one sender for run_feedback_batch."""

    def __init__(self, code, sender, identity):
        self.code = code
        self.sender = sender
        lo, hi = split_identities([identity])
        self.key = family_keys(code.config.master_seed, sender, lo, hi)[0]
        self.codewords = None

    def __call__(self, t, past):
        if t == 1:
            return 0.0
        if self.codewords is None:
            u = quantize(past[:, 0], self.code.quantizer)
            w = family_values(self.key, u, self.code.config.family.M[self.sender - 1])
            self.codewords = self.code.codebook.encode_many(w, self.sender)
        return self.codewords[:, t - 2]


class IdfCode:
    def __init__(self, config):
        self.config = config
        self.quantizer = QuantizerConfig.for_channel(config.L, config.channel, config.state)
        self.codebook = build_codebook(config.inner)

    @property
    def K(self):
        return self.config.K

    @property
    def m(self):
        return self.config.m

    def key(self, sender, identity):
        return FamilyKey(self.config.master_seed, sender, int(identity))

    def encode(self, sender, identity, y1):
        """Full length-m codeword: a leading 0, then the inner codeword of F(u(y1))."""
        from .funcfam import eval_family

        u = quantize(y1, self.quantizer)
        w = eval_family(self.key(sender, identity), u, self.config.family)
        cw = np.concatenate([[0.0], self.codebook.encode_many([w], sender)[0]])
        report = check_power(cw, self.config.power)
        if not report.passed:
            raise PowerViolation(f"sender {sender} codeword violates the power constraint: {report}")
        return cw

    def decode(self, y, claimed):
        """Per-sender acceptance of the claimed identity tuple for one block."""
        return tuple(bool(v) for v in self.decode_batch(np.asarray(y, dtype=float)[None, :], claimed)[0])

    def decode_batch(self, Y, claimed):
        """Acceptance matrix (trials, K); ``claimed`` holds one identity per sender,
        or None to skip a sender (reported as False)."""
        Y = np.asarray(Y, dtype=float)
        if Y.shape[1] != self.m:
            raise InvalidArgument("received block length differs from m")
        u = quantize(Y[:, 0], self.quantizer)
        w_hat = self.codebook.decode_many(Y[:, 1:])
        out = np.zeros((Y.shape[0], self.K), dtype=bool)
        for k, ident in enumerate(claimed):
            if ident is None:
                continue
            lo, hi = split_identities([ident])
            key = family_keys(self.config.master_seed, k + 1, lo, hi)[0]
            out[:, k] = family_values(key, u, self.config.family.M[k]) == w_hat[:, k]
        return out

    def encoders(self, identities):
        if len(identities) != self.K:
            raise InvalidArgument("need one identity per sender")
        return [_BatchEncoder(self, k + 1, ident) for k, ident in enumerate(identities)]

    def run_block(self, identities, trials, rng):
        return run_feedback_batch(self.encoders(identities), self.m, self.config.channel, rng,
                                  trials, self.config.state)

    def sessions(self, identities, trials, rng):
        """Yield (BatchTranscript, start) over blocks; block b uses rng.substream(b)."""
        start = 0
        for b, n in _blocks(trials):
            yield self.run_block(identities, n, rng.substream(b)), start
            start += n


def idf_encode(sender, identity, y1, code):
    return code.encode(sender, identity, y1)


def idf_decode(y, claimed, code):
    return code.decode(y, claimed)


def _power_violations(code, batch):
    return sum(count_power_violations(batch.x[:, k, :], code.config.power) for k in range(code.K))


# ---------------------------------------------------------------- type I


@dataclass
class Type1Result:
    aggregate: ErrorEstimate
    per_sender: list
    worst: ErrorEstimate
    rows: list
    power_violations: int
    codewords_checked: int


def _type1_task(args):
    code, p, identities, trials, rng = args
    rejects = np.zeros(code.K, dtype=np.int64)
    any_reject = 0
    violations = 0
    for batch, _ in code.sessions(identities, trials, rng):
        acc = code.decode_batch(batch.y, identities)
        rejects += np.count_nonzero(~acc, axis=0)
        any_reject += int(np.count_nonzero(~acc.all(axis=1)))
        violations += _power_violations(code, batch)
    return p, rejects, any_reject, violations


def _map(fn, tasks, workers):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def sample_identity_tuples(code, n, rng):
    """n identity tuples, one uniformly drawn 128-bit identity per sender."""
    per_sender = [sample_identities(rng, n) for _ in range(code.K)]
    return [tuple(per_sender[k][p] for k in range(code.K)) for p in range(n)]


def estimate_type1(code, identity_sample_size, trials_per_identity, rng, workers=1):
    """Rejection rate of the transmitted identity, sampled over identity tuples.

    Identity tuples come from ``rng.substream(IDENTITY_STREAM)``; tuple p runs
    its sessions on ``rng.substream(SESSION_STREAM, p)``, so results do not
    depend on ``workers``.
    """
    tuples = sample_identity_tuples(code, identity_sample_size, rng.substream(IDENTITY_STREAM))
    tasks = [(code, p, ids, trials_per_identity, rng.substream(SESSION_STREAM, p))
             for p, ids in enumerate(tuples)]
    out = _map(_type1_task, tasks, workers)
    rows = []
    total_rej = np.zeros(code.K, dtype=np.int64)
    total_any = 0
    violations = 0
    for p, rejects, any_reject, viol in out:
        est = ErrorEstimate.from_counts(any_reject, trials_per_identity)
        rows.append({"index": p, "identities": tuples[p], "estimate": est,
                     "per_sender_events": [int(v) for v in rejects]})
        total_rej += rejects
        total_any += any_reject
        violations += viol
    n = identity_sample_size * trials_per_identity
    worst = max((r["estimate"] for r in rows), key=lambda e: (e.p_hat, e.ci_high))
    return Type1Result(
        aggregate=ErrorEstimate.from_counts(total_any, n),
        per_sender=[ErrorEstimate.from_counts(v, n) for v in total_rej],
        worst=worst,
        rows=rows,
        power_violations=violations,
        codewords_checked=n * code.K,
    )


# ---------------------------------------------------------------- type II


@dataclass
class Type2Result:
    rows: list
    summary: dict
    power_violations: int
    codewords_checked: int


def _type2_task(args):
    code, p, identities, sender, alternative, trials, rng = args
    claimed = [None] * code.K
    claimed[sender - 1] = alternative
    accepts = 0
    violations = 0
    for batch, _ in code.sessions(identities, trials, rng):
        accepts += int(np.count_nonzero(code.decode_batch(batch.y, claimed)[:, sender - 1]))
        violations += _power_violations(code, batch)
    return p, accepts, violations


def sample_type2_pairs(code, n, rng, distinguished_sender=None):
    """Transmitted tuples with one alternative identity each.

    The alternative differs from the transmitted identity of its sender;
    senders rotate over pairs unless ``distinguished_sender`` is given.
    """
    tuples = sample_identity_tuples(code, n, rng)
    alternatives = sample_identities(rng, n)
    pairs = []
    for p in range(n):
        sender = distinguished_sender or (p % code.K) + 1
        alt = alternatives[p]
        while alt == tuples[p][sender - 1]:
            alt = sample_identities(rng, 1)[0]
        pairs.append((tuples[p], sender, alt))
    return pairs


def estimate_type2(code, pair_sample_size, trials_per_pair, rng, distinguished_sender=None,
                   workers=1):
    """False-acceptance rate per sampled (transmitted tuple, alternative) pair.

    Each row carries the collision count of the two functions and the
    predicted ceiling collision_count / L + epsilon_upper of that sender.
    """
    cfg = code.config
    if distinguished_sender is not None and not 1 <= distinguished_sender <= code.K:
        raise InvalidArgument("distinguished sender outside 1..K")
    pairs = sample_type2_pairs(code, pair_sample_size, rng.substream(IDENTITY_STREAM),
                               distinguished_sender)
    tasks = [(code, p, ids, s, alt, trials_per_pair, rng.substream(SESSION_STREAM, p))
             for p, (ids, s, alt) in enumerate(pairs)]
    out = _map(_type2_task, tasks, workers)

    collisions = np.zeros(pair_sample_size, dtype=np.int64)
    for s in range(1, code.K + 1):
        idx = [p for p, (_, ps, _) in enumerate(pairs) if ps == s]
        if idx:
            collisions[idx] = collision_counts(cfg.master_seed, s, [pairs[p][0][s - 1] for p in idx],
                                               [pairs[p][2] for p in idx], cfg.family)
    rows = []
    violations = 0
    for p, accepts, viol in out:
        ids, s, alt = pairs[p]
        eps = 0.0 if cfg.epsilon_upper is None else cfg.epsilon_upper[s - 1]
        frac = collisions[p] / cfg.L
        rows.append({"index": p, "sender": s, "identities": ids, "alternative": alt,
                     "estimate": ErrorEstimate.from_counts(accepts, trials_per_pair),
                     "collision_count": int(collisions[p]), "collision_fraction": float(frac),
                     "ceiling": float(frac + eps)})
        violations += viol
    return Type2Result(rows, summarize_type2(rows, cfg), violations,
                       pair_sample_size * trials_per_pair * code.K)


def summarize_type2(rows, cfg):
    if not rows:
        return {"pairs": 0}
    est = np.array([r["estimate"].p_hat for r in rows])
    low = np.array([r["estimate"].ci_low for r in rows])
    ceiling = np.array([r["ceiling"] for r in rows])
    frac = np.array([r["collision_fraction"] for r in rows])
    inv_m = np.array([1.0 / cfg.family.M[r["sender"] - 1] for r in rows])
    return {
        "pairs": len(rows),
        "max": float(est.max()),
        "mean": float(est.mean()),
        "mean_collision_fraction": float(frac.mean()),
        "mean_inverse_M": float(inv_m.mean()),
        "fraction_estimate_above_lambda": float(np.mean(est > cfg.lam)),
        "fraction_significantly_above_lambda": float(np.mean(low > cfg.lam)),
        "ceiling_violations": int(np.count_nonzero(low > ceiling)),
        "fraction_collision_above_lambda": float(np.mean(frac > cfg.lam)),
    }


@dataclass
class PipelineResult:
    type1: Type1Result
    type2: Type2Result
    flags: list = field(default_factory=list)


def run_pipeline(code, identity_sample_size, trials_per_identity, pair_sample_size,
                 trials_per_pair, rng, distinguished_sender=None, workers=1):
    t1 = estimate_type1(code, identity_sample_size, trials_per_identity, rng.substream(1), workers)
    t2 = estimate_type2(code, pair_sample_size, trials_per_pair, rng.substream(2),
                        distinguished_sender, workers)
    return PipelineResult(t1, t2, code.config.feasibility_flags())


def run_sd_pipeline(code, identity_sample_size, trials_per_identity, pair_sample_size,
                    trials_per_pair, rng, distinguished_sender=None, workers=1):
    """Same flow as :func:`run_pipeline`; error rates average over fresh
    state draws in every session."""
    if code.config.state is None:
        raise InvalidArgument("the state-dependent pipeline needs a state law")
    return run_pipeline(code, identity_sample_size, trials_per_identity, pair_sample_size,
                        trials_per_pair, rng, distinguished_sender, workers)


def type1_matches_inner(code, identities, trials, rng):
    """Per-trial check that true-identity rejection is exactly an inner decoding
    error: returns (rejections, inner errors) arrays of shape (trials, K)."""
    from .innercode import inner_error_counts

    rejections = []
    messages = []
    for batch, _ in code.sessions(identities, trials, rng):
        rejections.append(~code.decode_batch(batch.y, identities))
        u = quantize(batch.y[:, 0], code.quantizer)
        ws = np.stack([family_values(family_keys(code.config.master_seed, k + 1,
                                                 *split_identities([identities[k]]))[0],
                                     u, code.config.family.M[k]) for k in range(code.K)], axis=1)
        messages.append(ws)
    rejections = np.concatenate(rejections)
    messages = np.concatenate(messages)
    errors, _ = inner_error_counts(code.codebook, trials, rng, code.config.state, messages)
    return rejections, messages, errors
