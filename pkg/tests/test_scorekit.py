import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kendalltau

from pulsecal.core import Interval, ScoreSeries
from pulsecal.scorekit import (DEFAULT_WEIGHTS, FactorVector, PlatformScoreSet, Weights,
                               bootstrap_score_ci, composite_score, cross_source_divergence,
                               dirichlet_weight_sensitivity, kendall_tau, perturbed_weights,
                               rank_order, score_matrix, single_factor_perturbation)

unit = st.floats(0.0, 1.0, allow_nan=False)


# -- core types --------------------------------------------------------------

def test_score_series_validates():
    ScoreSeries.from_scores("a", [0.1, 0.2])
    with pytest.raises(ValueError):
        ScoreSeries("a", np.array([0.0, 0.0]), np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        ScoreSeries.from_scores("a", [0.1, 1.2])


def test_interval_validates_and_contains():
    iv = Interval(0.5, 0.4, 0.6, 0.8, "split-conformal")
    assert iv.contains(0.4) and iv.contains(0.6) and not iv.contains(0.61)
    assert iv.width == pytest.approx(0.2)
    with pytest.raises(ValueError):
        Interval(0.5, 0.55, 0.6, 0.8, "split-conformal")
    with pytest.raises(ValueError):
        Interval(0.5, 0.4, 0.6, 0.8, "magic")


# -- composite ---------------------------------------------------------------

@pytest.mark.parametrize("factors, expected", [
    ((0.5, 0.5, 0.5, 0.5), 0.5),
    ((1.0, 0.0, 0.0, 0.0), 0.35),
    ((0.8, 0.6, 0.5, 0.4), 0.61),
])
def test_composite_examples(factors, expected):
    assert composite_score(FactorVector(*factors), DEFAULT_WEIGHTS) == pytest.approx(expected, abs=1e-12)


def test_missing_factor_uses_neutral_prior():
    fv = FactorVector(1.0, None, 0.0, None)
    assert fv.missing == (False, True, False, True)
    assert composite_score(fv) == pytest.approx(0.35 + 0.25 * 0.5 + 0.20 * 0.5)


@pytest.mark.parametrize("w", [(0.5, 0.5, 0.5, -0.5), (0.3, 0.3, 0.3, 0.3), (0.25, 0.25, 0.25, 0.25 + 1e-6)])
def test_invalid_weights_rejected(w):
    with pytest.raises(ValueError):
        Weights(*w)


def test_weight_sum_tolerance():
    Weights(0.25, 0.25, 0.25, 0.25 + 5e-10)


def test_factor_out_of_range_rejected():
    with pytest.raises(ValueError):
        FactorVector(1.1, 0.0, 0.0, 0.0)


@given(st.tuples(unit, unit, unit, unit), st.integers(0, 3), st.floats(0.0, 1.0))
def test_composite_monotone_and_bounded(values, j, bump):
    base = composite_score(FactorVector(*values))
    raised = list(values)
    raised[j] = min(1.0, raised[j] + bump)
    assert 0.0 <= base <= 1.0
    assert composite_score(FactorVector(*raised)) >= base - 1e-15


# -- divergence --------------------------------------------------------------

@pytest.mark.parametrize("scores, expected", [
    ([0.5, 0.5, 0.5], 0.0),
    ([0.4, 0.6], 0.1),
    ([0.2, 0.5, 0.8], 0.2449),
])
def test_divergence_examples(scores, expected):
    assert cross_source_divergence(scores) == pytest.approx(expected, abs=1e-4)


def test_divergence_accepts_platform_sets():
    ps = PlatformScoreSet("a", {"x": 0.2, "y": 0.5, "z": 0.8})
    assert cross_source_divergence(ps) == pytest.approx(math.sqrt(0.06))


def test_divergence_needs_two_platforms():
    with pytest.raises(ValueError):
        cross_source_divergence([0.5])


@given(st.lists(st.floats(0.0, 0.5), min_size=2, max_size=12), st.floats(0.0, 0.5), st.randoms())
def test_divergence_permutation_and_translation(values, shift, rnd):
    base = cross_source_divergence(values)
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert cross_source_divergence(shuffled) == pytest.approx(base, abs=1e-12)
    assert cross_source_divergence([v + shift for v in values]) == pytest.approx(base, abs=1e-9)


# -- rankings ----------------------------------------------------------------

def test_kendall_examples():
    assert kendall_tau(["a", "b", "c"], ["a", "b", "c"]) == 1.0
    assert kendall_tau(["a", "b", "c"], ["c", "b", "a"]) == -1.0
    assert kendall_tau(["a", "b", "c"], ["b", "a", "c"]) == pytest.approx(1 / 3)


def test_kendall_rejects_mismatched_items():
    with pytest.raises(ValueError):
        kendall_tau(["a", "b"], ["a", "c"])


@settings(max_examples=60)
@given(st.permutations(list(range(9))), st.permutations(list(range(9))))
def test_kendall_matches_scipy(a, b):
    # scipy correlates the positions each ranking gives the items
    pa = [a.index(i) for i in range(9)]
    pb = [b.index(i) for i in range(9)]
    assert kendall_tau(a, b) == pytest.approx(kendalltau(pa, pb).statistic, abs=1e-12)


@given(st.permutations(list(range(7))))
def test_kendall_identity_and_reverse(a):
    assert kendall_tau(a, a) == 1.0
    assert kendall_tau(a, a[::-1]) == -1.0


def test_rank_order_breaks_ties_by_id():
    assert rank_order([0.5, 0.7, 0.5], ["b", "c", "a"]) == ["c", "a", "b"]


# -- perturbation ------------------------------------------------------------

def test_perturbed_weights_are_renormalised():
    ws = perturbed_weights(DEFAULT_WEIGHTS, 0.10)
    assert len(ws) == 8
    for w in ws:
        assert w.sum() == pytest.approx(1.0) and np.all(w >= 0)
    assert ws[0] == pytest.approx(np.array([0.45, 0.25, 0.20, 0.20]) / 1.1)


def test_u_model_trivial_cases():
    assert single_factor_perturbation([FactorVector(0.3, 0.2, 0.1, 0.9)]).tolist() == [0]
    twin = FactorVector(0.3, 0.2, 0.1, 0.9)
    assert single_factor_perturbation([twin, twin]).tolist() == [0, 0]


def test_u_model_three_agent_enumeration():
    # frozen from an exact-fraction enumeration of the 8 nudged rankings
    agents = [FactorVector(1, 0, 0, 0), FactorVector(0, 1, 0, 0), FactorVector(0.4, 0.4, 0.4, 0.4)]
    assert single_factor_perturbation(agents, DEFAULT_WEIGHTS, 0.10).tolist() == [1, 0, 1]


def _brute_u_model(matrix, weights, delta):
    base = weights.as_array()
    def order(w):
        s = matrix @ w
        return sorted(range(len(s)), key=lambda i: (-s[i], i))
    ref = order(base)
    counts = [0] * len(matrix)
    for j in range(4):
        for sign in (1, -1):
            w = base.copy()
            w[j] = max(0.0, w[j] + sign * delta)
            new = order(w / w.sum())
            for i in range(len(matrix)):
                counts[i] += new.index(i) != ref.index(i)
    return counts


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(unit, unit, unit, unit), min_size=1, max_size=8))
def test_u_model_matches_brute_force(rows):
    agents = [FactorVector(*r) for r in rows]
    got = single_factor_perturbation(agents, DEFAULT_WEIGHTS, 0.10)
    assert got.tolist() == _brute_u_model(score_matrix(agents), DEFAULT_WEIGHTS, 0.10)
    assert np.all((got >= 0) & (got <= 8))


# -- Dirichlet sensitivity ---------------------------------------------------

def test_dominance_gives_tau_one():
    m = np.array([[0.9, 0.9, 0.9, 0.9], [0.1, 0.2, 0.3, 0.4]])
    s = dirichlet_weight_sensitivity(m, DEFAULT_WEIGHTS, 2.0, 200, seed=1)
    assert s.median == 1.0 and s.p05 == 1.0


@pytest.mark.parametrize("k", [2, 5, 10, 20, 50])
def test_rank_invariant_matrix_median_one(k):
    # each row dominates the next on every factor
    m = np.array([[0.9, 0.8, 0.95, 0.7], [0.6, 0.5, 0.7, 0.4], [0.3, 0.2, 0.1, 0.3]])
    assert dirichlet_weight_sensitivity(m, concentration=k, draws=100).median == 1.0


def test_single_agent_rejected():
    with pytest.raises(ValueError):
        dirichlet_weight_sensitivity(np.array([[0.5, 0.5, 0.5, 0.5]]))


def test_dirichlet_is_seeded():
    m = np.random.default_rng(3).random((10, 4))
    a = dirichlet_weight_sensitivity(m, seed=11, draws=50)
    assert a == dirichlet_weight_sensitivity(m, seed=11, draws=50)
    assert a.concentration == 10.0 and a.draws == 50


def test_dirichlet_parameterisation():
    # the same generator call with Dir(3.5, 2.5, 2, 2) reproduces the draws at k = 10
    rng = np.random.default_rng(0)
    w = rng.dirichlet([3.5, 2.5, 2.0, 2.0], size=4000)
    assert w.mean(axis=0) == pytest.approx([0.35, 0.25, 0.20, 0.20], abs=0.01)


# -- bootstrap CI ------------------------------------------------------------

@pytest.mark.parametrize("obs, expected", [([0.5, 0.5, 0.5, 0.5], 0.5), ([0.3], 0.3)])
def test_bootstrap_degenerate(obs, expected):
    iv = bootstrap_score_ci(obs, 200, 0.95, seed=0)
    assert (iv.lower, iv.upper) == (pytest.approx(expected), pytest.approx(expected))
    assert iv.method == "bootstrap"


def test_bootstrap_rejects_bad_input():
    with pytest.raises(ValueError):
        bootstrap_score_ci([], 200)
    with pytest.raises(ValueError):
        bootstrap_score_ci([0.1, 0.2], 50)


def test_bootstrap_coverage_monte_carlo():
    # Beta(2, 5) has mean 2/7; 1000 draws per trial, 200 trials
    rng = np.random.default_rng(42)
    hits = 0
    for trial in range(200):
        obs = rng.beta(2, 5, size=1000)
        hits += bootstrap_score_ci(obs, 200, 0.90, seed=trial).contains(2 / 7)
    assert abs(hits / 200 - 0.90) <= 0.05


@settings(max_examples=25, deadline=None)
@given(st.lists(unit, min_size=2, max_size=40), st.floats(0.5, 0.9), st.floats(0.01, 0.09))
def test_bootstrap_width_shrinks_with_level(obs, level, gap):
    wide = bootstrap_score_ci(obs, 200, level + gap, seed=5)
    narrow = bootstrap_score_ci(obs, 200, level, seed=5)
    assert narrow.width <= wide.width + 1e-12


@given(st.lists(unit, min_size=2, max_size=10))
def test_divergence_zero_iff_equal(values):
    assert (cross_source_divergence(values) == 0.0) == (len(set(values)) == 1)
