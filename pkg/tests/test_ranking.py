from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsecal.conformal import CalibrationSet, calibration_residuals, split_point
from pulsecal.core import ScoreSeries
from pulsecal.forecast import ForecastModel, horizon_pairs
from pulsecal.ranking import (A_ABOVE, ABSTAIN, B_ABOVE, PairKey, RankDecision, abstain_decision,
                              apply_fdr, benjamini_hochberg, build_leaderboard, conformal_p_value,
                              delta_calibration, difference_setup, false_ranking_rate,
                              pairwise_decisions)
from pulsecal.simgen import StreamSpec, gen_stream


def brute_bh(p, q):
    # largest k with p_(k) <= k q / m, by direct enumeration
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    k_max = 0
    for k in range(1, m + 1):
        if p[order[k - 1]] <= q * k / m:
            k_max = k
    rejected = set(order[:k_max])
    return [i in rejected for i in range(m)]


def series(name, values):
    return ScoreSeries.from_scores(name, np.asarray(values, dtype=float))


# -- calibration of differences ----------------------------------------------

def test_identical_series_zero_residuals():
    x = gen_stream(StreamSpec(length=300, seed=1)).scores
    cal = delta_calibration(series("a", x), series("b", x))
    assert np.all(cal.residuals == 0.0)


def test_constant_offset_zero_residuals():
    x = np.clip(gen_stream(StreamSpec(length=300, seed=2)).scores, 0.0, 0.85)
    cal = delta_calibration(series("a", x + 0.1), series("b", x))
    assert np.allclose(cal.residuals, 0.0, atol=1e-12)


def test_difference_calibration_matches_oracle():
    a = gen_stream(StreamSpec(0.6, 0.02, 0.02, 500, seed=3, agent_id="a"))
    b = gen_stream(StreamSpec(0.4, 0.02, 0.02, 500, seed=4, agent_id="b"))
    h = 6
    # oracle: difference, fit on the first 70%, residuals of forecasts landing after it
    d = a.scores - b.scores
    n_train = int(0.7 * d.size)
    train = d[:n_train]
    model = ForecastModel(0.003, float(np.clip(train.mean(), -1, 1)),
                          float(np.std(np.diff(train), ddof=1)), (-1.0, 1.0))
    origins = np.arange(n_train - h, d.size - h)
    pull = 0.003 * h
    forecasts = np.clip(d[origins] + pull * (model.long_run_mean - d[origins]), -1, 1)
    expected = np.sort(np.abs(d[origins + h] - forecasts))
    got = delta_calibration(a, b, horizon=h)
    assert got.residuals == pytest.approx(expected, abs=1e-15)


def test_misaligned_histories_use_common_timestamps():
    a = ScoreSeries("a", np.arange(0, 100, dtype=float), np.full(100, 0.6))
    b = ScoreSeries("b", np.arange(50, 150, dtype=float), np.full(100, 0.4))
    s = difference_setup(a, b)
    assert s.difference.size == 50 and s.estimate == pytest.approx(0.2)
    c = ScoreSeries("c", np.arange(200, 210, dtype=float), np.full(10, 0.4))
    with pytest.raises(ValueError):
        difference_setup(a, c)


# -- decisions and p-values --------------------------------------------------

def test_zero_delta_abstains():
    cal = CalibrationSet(np.linspace(0.0, 0.05, 200))
    d = abstain_decision(0.0, cal, 0.2)
    assert d.decision == ABSTAIN and d.p_value == 1.0


def test_clear_difference_ranked():
    cal = CalibrationSet(np.linspace(0.0, 0.05, 500))
    d = abstain_decision(0.2, cal, 0.2, PairKey("x", "y"))
    assert d.decision == A_ABOVE and d.winner() == "x"
    assert d.interval.lower > 0.14 and d.interval.upper < 0.26
    assert abstain_decision(-0.2, cal, 0.2, PairKey("x", "y")).decision == B_ABOVE


def test_unbounded_interval_abstains():
    d = abstain_decision(0.5, CalibrationSet([0.01, 0.02]), 0.2)
    assert d.interval.unbounded and d.decision == ABSTAIN


def test_endpoint_zero_abstains():
    cal = CalibrationSet(np.full(50, 0.1))
    assert abstain_decision(0.1, cal, 0.2).decision == ABSTAIN


def test_p_value_examples():
    cal = CalibrationSet(np.arange(1, 10) / 100)
    assert conformal_p_value(0.05, cal) == pytest.approx(0.6)
    assert conformal_p_value(0.0, cal) == 1.0
    assert conformal_p_value(0.5, cal) == pytest.approx(1 / 10)
    with pytest.raises(ValueError):
        conformal_p_value(0.1, CalibrationSet([]))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(-1, 1))
def test_p_value_counting_oracle(res, delta):
    n = len(res)
    expected = (1 + sum(r >= abs(delta) for r in res)) / (n + 1)
    assert conformal_p_value(delta, CalibrationSet(res)) == expected


@settings(max_examples=200)
@given(st.lists(st.floats(0, 0.2), min_size=5, max_size=60), st.floats(-0.3, 0.3), st.floats(0.05, 0.5))
def test_ranked_iff_p_value_at_most_alpha(res, delta, alpha):
    # excluding zero from the interval is the same event as p <= alpha (when bounded),
    # with p kept as an exact ratio and alpha read as its decimal
    cal = CalibrationSet(res)
    d = abstain_decision(delta, cal, alpha)
    exact_p = Fraction(1 + sum(r >= abs(delta) for r in res), len(res) + 1)
    if not d.interval.unbounded and delta != 0:
        assert d.ranked == (exact_p <= Fraction(repr(alpha)))


# -- Benjamini-Hochberg ------------------------------------------------------

def test_bh_example():
    assert benjamini_hochberg([0.01, 0.03, 0.04, 0.50], 0.2).tolist() == [True, True, True, False]


def test_bh_edge_cases():
    assert not benjamini_hochberg([1.0] * 5, 0.2).any()
    assert benjamini_hochberg([0.01] * 10, 0.2).all()
    assert benjamini_hochberg([], 0.2).size == 0
    with pytest.raises(ValueError):
        benjamini_hochberg([0.1], 0.0)


@settings(max_examples=300)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 0.5))
def test_bh_matches_brute_force(p, q):
    assert benjamini_hochberg(p, q).tolist() == brute_bh(p, q)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_bh_monotone_in_q(p):
    small, large = benjamini_hochberg(p, 0.1), benjamini_hochberg(p, 0.3)
    assert np.all(large[small])


# -- pairwise decisions and leaderboards ------------------------------------

@pytest.fixture(scope="module")
def histories():
    means = [0.75, 0.6, 0.45, 0.44, 0.3]
    return {f"m{i}": gen_stream(StreamSpec(mu, 0.05, 0.01, 600, seed=(11, i), agent_id=f"m{i}"))
            for i, mu in enumerate(means)}


def test_pairwise_and_fdr_subset(histories):
    per_pair = pairwise_decisions(histories, 0.2, horizon=6)
    assert len(per_pair) == 10
    fdr = apply_fdr(per_pair, 0.2)
    for p, f in zip(per_pair, fdr):
        assert f.fdr_adjusted and f.pair == p.pair
        if f.ranked:
            assert p.ranked and f.decision == p.decision
    assert per_pair[0].pair == PairKey("m0", "m1") and per_pair[0].decision == A_ABOVE


def test_false_ranking_rate(histories):
    truth = {"m0": 0.75, "m1": 0.6, "m2": 0.45, "m3": 0.44, "m4": 0.3}
    d = pairwise_decisions(histories, 0.2, horizon=6)
    ranked, wrong, rate = false_ranking_rate(d, truth)
    assert ranked >= 6 and rate == wrong / ranked
    assert false_ranking_rate([], truth) == (0, 0, 0.0)


def _decision(a, b, decision):
    return RankDecision(PairKey(a, b), 0.1, None, 0.01, decision)


def test_leaderboard_two_agents():
    lb = build_leaderboard(["a", "b"], [0.4, 0.7], [_decision("a", "b", B_ABOVE)])
    assert [e["agent_id"] for e in lb.entries] == ["b", "a"]
    assert [e["rank"] for e in lb.entries] == [1, 2]
    assert lb.abstention_rate == 0.0


def test_leaderboard_all_abstain():
    agents = [f"x{i}" for i in range(6)]
    ds = [_decision(a, b, ABSTAIN) for a, b in combinations(agents, 2)]
    lb = build_leaderboard(agents, list(range(6)), ds, "fdr")
    assert lb.abstention_rate == 1.0
    assert lb.summary()["abstained"] == 15


def test_leaderboard_missing_pair_rejected():
    with pytest.raises(ValueError):
        build_leaderboard(["a", "b", "c"], [1, 2, 3], [_decision("a", "b", ABSTAIN)])


def test_leaderboard_band_rates():
    agents = [f"y{i:02d}" for i in range(12)]
    ds = [_decision(a, b, ABSTAIN if int(b[1:]) - int(a[1:]) == 1 else A_ABOVE)
          for a, b in combinations(agents, 2)]
    lb = build_leaderboard(agents, [-i for i in range(12)], ds, bands=((1, 3),))
    assert lb.band_rates["1-3"] == pytest.approx(2 / 3)


def test_pair_key_canonical():
    assert PairKey.of("b", "a") == PairKey("a", "b")
    with pytest.raises(ValueError):
        PairKey("b", "a")
    with pytest.raises(ValueError):
        PairKey("a", "a")


def test_null_p_values_super_uniform_small():
    ps = []
    for i in range(150):
        a = gen_stream(StreamSpec(0.5, 0.05, 0.01, 600, seed=(5, i, 0), agent_id="a"))
        b = gen_stream(StreamSpec(0.5, 0.05, 0.01, 600, seed=(5, i, 1), agent_id="b"))
        s = difference_setup(a, b, horizon=24)
        ps.append(conformal_p_value(s.estimate, s.calibration))
    ps = np.array(ps)
    for t in (0.1, 0.2):
        assert (ps <= t).mean() <= t + 0.06


def test_realized_residual_p_values_uniform():
    # the p-value of a fresh residual against the calibration set is super-uniform
    rng = np.random.default_rng(0)
    ps = []
    for i in range(400):
        x = gen_stream(StreamSpec(0.5, 0.05, 0.01, 401, seed=(8, i))).scores
        model = ForecastModel(0.05, 0.5, 0.01)
        n_train = split_point(400, 0.7)
        cal = CalibrationSet(calibration_residuals(x[:400], model, 1, n_train))
        _, f, y = horizon_pairs(x, model, 1, 399)
        ps.append(conformal_p_value(y[0] - f[0], cal))
    ps = np.array(ps)
    assert rng is not None
    for t in (0.05, 0.1, 0.2):
        assert (ps <= t).mean() <= t + 0.04
