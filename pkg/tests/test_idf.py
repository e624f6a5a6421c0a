import math
from dataclasses import replace

import numpy as np
import pytest

from idfsim.channel import ChannelParams, PowerConstraint, StateParams
from idfsim.errors import InvalidArgument, PowerViolation
from idfsim.funcfam import FamilyConfig, FamilyKey, collision_count, eval_family
from idfsim.gaussmath import RngStream
from idfsim.idf import (IdfCode, IdfCodeConfig, estimate_type1, estimate_type2, idf_decode,
                        idf_encode, run_pipeline, run_sd_pipeline, sample_identity_tuples,
                        type1_matches_inner)
from idfsim.innercode import InnerCodeConfig, estimate_inner_error, max_compliant_p_use

POWER = PowerConstraint(10.0)
QUIET = 1e-12  # stands in for a noiseless channel


def make_code(K=2, M=16, L=256, reps=4, sigma2=1.0, state=None, lam=0.1, seed=0, eps=None,
              p_use=None):
    ch = ChannelParams(K, sigma2)
    offset = 0.0 if state is None else state.total_mean()
    inner = InnerCodeConfig(K, (M,) * K, (reps,) * K, 1.0, sigma2, offset=offset)
    inner = replace(inner, p_use=p_use or max_compliant_p_use(inner, POWER))
    cfg = IdfCodeConfig(ch, POWER, L, FamilyConfig(L, (M,) * K), inner, lam, seed, state, eps)
    return IdfCode(cfg)


def test_config_validation():
    code = make_code()
    cfg = code.config
    with pytest.raises(InvalidArgument):
        replace(cfg, lam=0.5)
    with pytest.raises(InvalidArgument):
        replace(cfg, lam=0.0)
    with pytest.raises(InvalidArgument):
        replace(cfg, L=128)
    with pytest.raises(InvalidArgument):
        replace(cfg, channel=ChannelParams(2, 2.0))
    with pytest.raises(InvalidArgument):
        replace(cfg, state=StateParams((0.0,), ((1.0,),)))
    assert code.m == cfg.inner.n_inner + 1


def test_feasibility_flags():
    flags = make_code(M=32, eps=(0.01, 0.2)).config.feasibility_flags()
    assert flags[0]["one_over_M_le_half_lambda"] and flags[0]["epsilon_le_half_lambda"]
    assert not flags[1]["epsilon_le_half_lambda"]
    assert not make_code(M=16).config.feasibility_flags()[0]["one_over_M_le_half_lambda"]


def test_encode_first_symbol_zero_and_deterministic():
    code = make_code()
    for y1 in (-2.0, 0.1, 3.3):
        c = idf_encode(1, 12345, y1, code)
        assert c[0] == 0.0 and c.shape == (code.m,)
        assert np.array_equal(c, idf_encode(1, 12345, y1, code))


def _colliding_identity(code, sender, ident, u, start=1):
    cfg = code.config.family
    target = eval_family(FamilyKey(code.config.master_seed, sender, ident), u, cfg)
    j = start
    while True:
        if j != ident and eval_family(FamilyKey(code.config.master_seed, sender, j), u, cfg) == target:
            return j
        j += 1


def test_colliding_identities_share_codeword_and_fool_decoder():
    code = make_code(sigma2=QUIET)
    y1 = 0.4
    u = int(np.searchsorted(code.quantizer.boundaries, y1))
    i1, i2 = 1001, 2002
    j1 = _colliding_identity(code, 1, i1, u)
    assert np.array_equal(idf_encode(1, i1, y1, code), idf_encode(1, j1, y1, code))
    y = idf_encode(1, i1, y1, code) + idf_encode(2, i2, y1, code)
    y[0] = y1
    assert idf_decode(y, (i1, i2), code) == (True, True)
    assert idf_decode(y, (j1, i2), code)[0] is True
    # A non-colliding alternative is rejected.
    other = next(j for j in range(5000, 6000)
                 if eval_family(FamilyKey(0, 1, j), u, code.config.family)
                 != eval_family(FamilyKey(0, 1, i1), u, code.config.family))
    assert idf_decode(y, (other, i2), code) == (False, True)


def test_encode_raises_on_power_violation():
    code = make_code(p_use=50.0)
    with pytest.raises(PowerViolation):
        idf_encode(1, 3, 0.0, code)


def test_decode_rejects_wrong_length():
    code = make_code()
    with pytest.raises(InvalidArgument):
        code.decode_batch(np.zeros((2, code.m + 1)), (1, 2))


def test_type1_zero_noise_is_zero():
    code = make_code(sigma2=QUIET, reps=1)
    r = estimate_type1(code, 8, 500, RngStream(1))
    assert r.aggregate.events == 0 and r.power_violations == 0
    assert r.codewords_checked == 8 * 500 * 2


def test_type1_equals_inner_error_exactly():
    code = make_code(reps=2)
    ids = sample_identity_tuples(code, 1, RngStream(2))[0]
    rej, msgs, errs = type1_matches_inner(code, ids, 6000, RngStream(3))
    assert rej.shape == (6000, 2)
    assert np.array_equal(rej.sum(axis=0), errs)
    assert errs.sum() > 0


def test_type1_equals_inner_error_exactly_with_state():
    st = StateParams((1.0, -1.0), ((1.0, 0.5), (0.5, 1.0)))
    code = make_code(reps=6, state=st)
    ids = sample_identity_tuples(code, 1, RngStream(4))[0]
    rej, _, errs = type1_matches_inner(code, ids, 5000, RngStream(5))
    assert np.array_equal(rej.sum(axis=0), errs) and errs.sum() > 0


def test_type1_statistically_matches_inner_estimate():
    # Sampled identities see their own mix of edge and inner PAM levels, so
    # this comparison carries a little extra spread; the exact per-trial
    # identity is checked above.
    code = make_code(reps=40)
    t1 = estimate_type1(code, 16, 2000, RngStream(6))
    inner = estimate_inner_error(code.codebook, 32000, RngStream(7))
    for a, b in zip(t1.per_sender, inner):
        assert abs(a.p_hat - b.p_hat) <= 3 * math.hypot(a.std_error(), b.std_error())


def test_single_sender_reduction():
    code = make_code(K=1, reps=8)
    r = estimate_type1(code, 8, 2000, RngStream(8))
    inner = estimate_inner_error(code.codebook, 16000, RngStream(9))[0]
    assert abs(r.aggregate.p_hat - inner.p_hat) <= 3 * math.hypot(r.aggregate.std_error(),
                                                                   inner.std_error())


def test_results_independent_of_workers():
    code = make_code(reps=2)
    a = estimate_type1(code, 6, 300, RngStream(10), workers=1)
    b = estimate_type1(code, 6, 300, RngStream(10), workers=3)
    assert a.aggregate == b.aggregate and a.rows == b.rows
    c = estimate_type2(code, 6, 300, RngStream(11), workers=1)
    d = estimate_type2(code, 6, 300, RngStream(11), workers=2)
    assert c.rows == d.rows


def test_type2_zero_collision_zero_noise():
    code = make_code(sigma2=QUIET, reps=1, L=64, M=256)
    r = estimate_type2(code, 40, 400, RngStream(12))
    zero = [row for row in r.rows if row["collision_count"] == 0]
    assert zero, "expected some pairs without collisions at L=64, M=256"
    assert all(row["estimate"].events == 0 for row in zero)
    for row in r.rows:
        assert row["collision_count"] == collision_count(
            FamilyKey(0, row["sender"], row["identities"][row["sender"] - 1]),
            FamilyKey(0, row["sender"], row["alternative"]), code.config.family)


def test_type2_quiet_estimate_tracks_collision_fraction():
    code = make_code(sigma2=QUIET, reps=1, L=64, M=8)
    r = estimate_type2(code, 30, 4000, RngStream(13))
    for row in r.rows:
        e = row["estimate"]
        assert abs(e.p_hat - row["collision_fraction"]) <= 4 * math.sqrt(
            max(row["collision_fraction"] * (1 - row["collision_fraction"]), 1e-4) / e.trials)


def test_type2_below_ceiling_and_mean():
    code = make_code(reps=6, eps=None)
    inner = estimate_inner_error(code.codebook, 10**5, RngStream(14))
    code = IdfCode(replace(code.config, epsilon_upper=tuple(e.ci_high for e in inner)))
    r = estimate_type2(code, 200, 1000, RngStream(15))
    assert r.summary["ceiling_violations"] == 0
    assert r.power_violations == 0
    mean_eps = np.mean([inner[row["sender"] - 1].p_hat for row in r.rows])
    mean_est = r.summary["mean"]
    se = math.sqrt(mean_est / (200 * 1000)) + 4 * math.sqrt((1 / 16) * (15 / 16) / (256 * 200))
    assert abs(mean_est - (1 / 16 + mean_eps)) <= 3 * se + mean_eps


def test_type2_distinguished_sender():
    code = make_code(reps=2)
    r = estimate_type2(code, 10, 100, RngStream(16), distinguished_sender=2)
    assert all(row["sender"] == 2 for row in r.rows)
    assert all(row["alternative"] != row["identities"][1] for row in r.rows)
    with pytest.raises(InvalidArgument):
        estimate_type2(code, 10, 100, RngStream(16), distinguished_sender=3)


def test_collision_spread_shrinks_with_L():
    spreads = []
    for L in (64, 1024, 16384):
        code = make_code(L=L, reps=1)
        r = estimate_type2(code, 200, 1, RngStream(17))
        spreads.append(np.std([row["collision_fraction"] for row in r.rows]))
    assert spreads[0] > spreads[1] > spreads[2]


def test_deterministic_state_matches_compensated_gmac():
    st = StateParams((0.5, 0.25), ((0.0, 0.0), (0.0, 0.0)))
    sd = make_code(reps=3, state=st)
    plain = make_code(reps=3)
    a = estimate_type1(sd, 6, 2000, RngStream(18))
    b = estimate_type1(plain, 6, 2000, RngStream(18))
    assert abs(a.aggregate.events - b.aggregate.events) <= 2
    assert sd.quantizer.mu_y == 0.75 and sd.quantizer.sigma_y == 1.0


def test_pipelines():
    code = make_code(reps=4)
    res = run_pipeline(code, 4, 200, 8, 200, RngStream(19))
    assert res.type1.aggregate.trials == 800 and res.type2.summary["pairs"] == 8
    with pytest.raises(InvalidArgument):
        run_sd_pipeline(code, 4, 200, 8, 200, RngStream(19))
    st = StateParams((1.0, -1.0), np.eye(2))
    sd = make_code(reps=240, state=st)
    res = run_sd_pipeline(sd, 4, 500, 8, 200, RngStream(20))
    assert res.type1.aggregate.ci_high <= 0.1
    assert res.type1.power_violations == 0 and res.type2.power_violations == 0
