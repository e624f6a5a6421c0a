import io
import math

import numpy as np
import pytest

from idfsim.channel import (BatchTranscript, ChannelParams, PowerConstraint, StateParams,
                            check_power, count_power_violations, draw_disturbance, gmac_step,
                            run_feedback_batch, run_feedback_session, sd_gmac_step)
from idfsim.crgen import derive_output_stats
from idfsim.errors import InvalidArgument, SessionAbort
from idfsim.gaussmath import RngStream

SD_STATE = StateParams((1.0, -1.0), ((1.0, 0.5), (0.5, 1.0)))


def test_params_validation():
    with pytest.raises(InvalidArgument):
        ChannelParams(0, 1.0)
    with pytest.raises(InvalidArgument):
        ChannelParams(2, 0.0)
    with pytest.raises(InvalidArgument):
        PowerConstraint(0.0)
    with pytest.raises(InvalidArgument):
        PowerConstraint(1.0, p_peak=-1.0)
    with pytest.raises(InvalidArgument):
        StateParams((1.0,), ((1.0, 0.0), (0.0, 1.0)))
    assert SD_STATE.total_mean() == 0.0
    assert SD_STATE.total_variance() == 3.0


def test_gmac_step_examples():
    assert gmac_step((1, 2), 0.0) == 3.0
    assert gmac_step((0, 0, 0), 0.25) == 0.25
    with pytest.raises(InvalidArgument):
        gmac_step((1, math.nan), 0.0)


def test_gmac_step_linear():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b, c = rng.standard_normal((3, 3))
        z = float(rng.standard_normal())
        assert math.isclose(gmac_step(a + b, z), gmac_step(a, z) + gmac_step(b, 0.0),
                            rel_tol=1e-12, abs_tol=1e-12)


def test_gmac_output_distribution():
    params = ChannelParams(2, 2.0)
    batch = run_feedback_batch([lambda t, p: 1.0, lambda t, p: -0.5], 1, params, RngStream(1), 10**5)
    y = batch.y[:, 0]
    n = y.size
    assert abs(y.mean() - 0.5) <= 3 * math.sqrt(2.0 / n)
    assert abs(y.var() - 2.0) <= 3 * 2.0 * math.sqrt(2.0 / n)


def test_sd_gmac_step_examples():
    assert sd_gmac_step((1, 1), (0, 0), 0.0) == 2.0
    assert sd_gmac_step((0, 0), (1, -1), 0.0) == 0.0
    with pytest.raises(InvalidArgument):
        sd_gmac_step((0, 0), (1, -1, 3), 0.0)


def test_sd_output_matches_derived_stats():
    params = ChannelParams(2, 1.0)
    state = StateParams((1.0, 0.5), ((1.0, 0.5), (0.5, 2.0)))
    batch = run_feedback_batch([lambda t, p: 0.0] * 2, 1, params, RngStream(2), 10**5, state)
    mu, sd = derive_output_stats(params, state)
    var = sd * sd
    y = batch.y[:, 0]
    n = y.size
    assert abs(y.mean() - mu) <= 3 * math.sqrt(var / n)
    assert abs(y.var() - var) <= 3 * var * math.sqrt(2.0 / n)


def test_state_draws_match_law():
    params = ChannelParams(2, 1.0)
    z, s = draw_disturbance(RngStream(3), 20000, 5, params, SD_STATE)
    flat = s.reshape(-1, 2)
    assert np.allclose(flat.mean(axis=0), SD_STATE.mu, atol=0.02)
    assert np.allclose(np.cov(flat.T), SD_STATE.sigma_array, atol=0.03)
    # Noise is drawn first and is identical with or without a state.
    z0, _ = draw_disturbance(RngStream(3), 20000, 5, params)
    assert np.array_equal(z, z0)


def test_deterministic_state_reduces_to_shift():
    params = ChannelParams(1, 1.0)
    st = StateParams((0.75,), ((0.0,),))
    a = run_feedback_batch([lambda t, p: 0.0], 3, params, RngStream(4), 10, st)
    b = run_feedback_batch([lambda t, p: 0.0], 3, params, RngStream(4), 10)
    assert np.allclose(a.y, b.y + 0.75)


def test_cr_round_is_pure_noise():
    params = ChannelParams(3, 1.5)
    tr = run_feedback_session([lambda t, y: 0.0] * 3, 1, params, RngStream(5))
    assert tr.y[0] == tr.z[0]
    tr = run_feedback_session([lambda t, y: 0.0] * 2, 1, ChannelParams(2, 1.0), RngStream(5),
                              SD_STATE)
    assert tr.y[0] == tr.s[:, 0].sum() + tr.z[0]


def test_echo_encoders_see_feedback():
    params = ChannelParams(2, 1.0)

    def echo(t, y):
        return 0.0 if t == 1 else float(y[t - 2])

    tr = run_feedback_session([echo, echo], 6, params, RngStream(6))
    for t in range(1, 6):
        assert tr.x[0, t] == tr.y[t - 1] and tr.x[1, t] == tr.y[t - 1]
    for t in range(6):
        assert math.isclose(tr.y[t], tr.x[:, t].sum() + tr.z[t], rel_tol=0, abs_tol=1e-12)


def test_feedback_prefix_is_read_only_and_strictly_causal():
    seen = []

    def probe(t, past):
        seen.append(past.shape[1])
        with pytest.raises(ValueError):
            past[...] = 0
        return 0.0

    run_feedback_batch([probe], 4, ChannelParams(1, 1.0), RngStream(7), 3)
    assert seen == [0, 1, 2, 3]


def test_causality_by_transcript_surgery():
    """Replaying with y_t altered leaves all inputs up to t unchanged."""
    params = ChannelParams(2, 1.0)

    def enc(t, y):
        return 0.0 if t == 1 else math.tanh(sum(y))

    m = 8
    base = run_feedback_batch([lambda t, p: np.tanh(p.sum(axis=1)) if t > 1 else 0.0] * 2, m,
                              params, RngStream(8), 1)
    for t_cut in range(m):
        z = base.z.copy()
        z[0, t_cut] += 5.0
        alt = run_feedback_batch([lambda t, p: np.tanh(p.sum(axis=1)) if t > 1 else 0.0] * 2, m,
                                 params, RngStream(8), 1, disturbance=(z, None))
        assert np.array_equal(alt.x[0, :, : t_cut + 1], base.x[0, :, : t_cut + 1])
        if t_cut < m - 1:
            assert not np.array_equal(alt.x[0, :, t_cut + 1], base.x[0, :, t_cut + 1])


def test_session_abort_names_sender_and_time():
    def bad(t, y):
        return math.nan if t == 3 else 0.0

    with pytest.raises(SessionAbort) as err:
        run_feedback_session([lambda t, y: 0.0, bad], 5, ChannelParams(2, 1.0), RngStream(9))
    assert err.value.sender == 2 and err.value.t == 3


def test_session_determinism_and_csv():
    params = ChannelParams(2, 1.0)
    encs = [lambda t, y: 0.5, lambda t, y: -0.25]
    a = run_feedback_session(encs, 4, params, RngStream(10), SD_STATE)
    b = run_feedback_session(encs, 4, params, RngStream(10), SD_STATE)
    fa, fb = io.StringIO(), io.StringIO()
    a.to_csv(fa)
    b.to_csv(fb)
    assert fa.getvalue() == fb.getvalue()
    lines = fa.getvalue().splitlines()
    assert lines[0] == "t,y,x_1,x_2,s_1,s_2"
    assert len(lines) == 5
    row = lines[2].split(",")
    assert float(row[1]) == a.y[1]
    c = run_feedback_session(encs, 2, params, RngStream(10))
    fc = io.StringIO()
    c.to_csv(fc)
    assert fc.getvalue().splitlines()[0] == "t,y,x_1,x_2"


def test_check_power_examples():
    c = PowerConstraint(2.0)
    assert check_power(np.zeros(7), c).passed
    assert check_power(np.full(5, math.sqrt(2.0)), c).passed
    x = np.zeros(4)
    x[2] = math.sqrt(4 * 2.0) + 1
    rep = check_power(x, c)
    assert not rep.passed and rep.violation == "average" and rep.violating_index == 2


def test_check_power_peak():
    c = PowerConstraint(10.0, p_peak=1.5)
    rep = check_power([0.0, 1.0, -1.6, 0.0], c)
    assert not rep.passed and rep.violation == "peak" and rep.violating_index == 2
    assert check_power([0.0, 1.5, -1.5], c).passed


def test_count_power_violations():
    c = PowerConstraint(1.0)
    x = np.array([[0.0, 1.0, 1.0], [0.0, 2.0, 0.0], [0.0, 1.8, 0.0]])
    assert count_power_violations(x, c) == 2
    assert count_power_violations(x, PowerConstraint(1.0, p_peak=1.0)) == 2


def test_batch_session_extraction():
    b = run_feedback_batch([lambda t, p: 1.0], 3, ChannelParams(1, 1.0), RngStream(11), 4,
                           StateParams((0.0,), ((1.0,),)))
    assert isinstance(b, BatchTranscript) and b.trials == 4 and b.m == 3
    s = b.session(2)
    assert s.x.shape == (1, 3) and s.s.shape == (1, 3)
    assert np.allclose(s.y, s.x.sum(axis=0) + s.s.sum(axis=0) + s.z)
