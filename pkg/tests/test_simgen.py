import numpy as np
import pytest

from pulsecal.conformal import calibration_residuals
from pulsecal.forecast import estimate_model
from pulsecal.simgen import (PopulationSpec, ShiftEvent, StreamSpec, gen_correlated_errors,
                             gen_population, gen_stream, inject_shift, with_shift)


def test_noiseless_stream_at_mean_is_constant():
    s = gen_stream(StreamSpec(0.4, 0.003, 0.0, 100))
    assert np.all(s.scores == 0.4)


def test_noiseless_stream_decays_geometrically():
    s = gen_stream(StreamSpec(0.5, 0.1, 0.0, 30, initial=0.9))
    expected = 0.5 + 0.4 * 0.9 ** np.arange(30)
    assert s.scores == pytest.approx(expected, abs=1e-12)


def test_long_run_mean():
    # at 10,000 steps the wander (stationary sd ~0.13, correlation time ~300
    # steps) still swamps a 0.02 band, so the check runs long
    s = gen_stream(StreamSpec(0.5, 0.003, 0.01, 200_000, seed=7))
    assert abs(s.scores.mean() - 0.5) <= 0.02


def test_stream_is_seeded_and_bounded():
    spec = StreamSpec(0.9, 0.003, 0.05, 2000, seed=3)
    a, b = gen_stream(spec), gen_stream(spec)
    assert np.array_equal(a.scores, b.scores)
    assert a.scores.min() >= 0.0 and a.scores.max() <= 1.0


def test_student_t_innovations_keep_scale():
    spec = StreamSpec(0.5, 0.0, 0.01, 100_001, seed=1, innovation_df=4)
    d = np.diff(gen_stream(spec).scores)
    assert np.std(d) == pytest.approx(0.01, rel=0.05)
    # heavier tails than a normal with the same std
    assert np.mean(np.abs(d) > 0.03) > 0.003


def test_stream_spec_validates():
    with pytest.raises(ValueError):
        StreamSpec(innovation_std=-1)
    with pytest.raises(ValueError):
        StreamSpec(length=0)
    with pytest.raises(ValueError):
        StreamSpec(innovation_df=2)


def test_identity_event():
    spec = StreamSpec(length=500, seed=2)
    s = gen_stream(spec)
    assert np.array_equal(inject_shift(s, ShiftEvent(100), spec).scores, s.scores)


def test_jump_on_constant_series():
    s = gen_stream(StreamSpec(0.5, 0.003, 0.0, 300))
    out = inject_shift(s, ShiftEvent(100, jump=0.1)).scores
    assert np.all(out[:100] == 0.5) and out[100:] == pytest.approx(0.6)


def test_multiplier_scales_post_event_noise():
    spec = StreamSpec(0.5, 0.003, 0.01, 4000, seed=4)
    base = gen_stream(spec)
    out = inject_shift(base, ShiftEvent(2000, 0.0, 3.0), spec).scores
    assert np.array_equal(out[:2001], base.scores[:2001])
    ratio = np.std(np.diff(out[2000:])) / np.std(np.diff(base.scores[:2000]))
    assert ratio == pytest.approx(3.0, rel=0.1)
    with pytest.raises(ValueError):
        inject_shift(base, ShiftEvent(2000, 0.0, 3.0))


def test_event_time_out_of_range():
    s = gen_stream(StreamSpec(length=50))
    with pytest.raises(ValueError):
        inject_shift(s, ShiftEvent(50, 0.1))


def test_population_classes():
    pop = gen_population(PopulationSpec(length=50, seed=1))
    assert len(pop.series) == 50
    assert pop.labels.count("stable") == 35 and pop.labels.count("volatile") == 15
    sigma = pop.sigma_cross()
    for agent, label in zip(pop.agent_ids, pop.labels):
        assert (sigma[agent] < 0.04) == (label == "stable")
    assert pop.agent_ids[0] == "agent_00" and pop.agent_ids[-1] == "agent_49"


def test_population_zero_divergence():
    pop = gen_population(PopulationSpec(n_stable=5, n_volatile=0, stable_divergence=0.0, length=20))
    assert all(v == 0.0 for v in pop.sigma_cross().values())


def test_population_retry_limit():
    with pytest.raises(ValueError, match="could not draw"):
        gen_population(PopulationSpec(n_stable=3, stable_divergence=0.5, length=20, max_retries=5))


def test_agent_streams_independent_of_population_size():
    small = gen_population(PopulationSpec(n_stable=3, n_volatile=0, length=100, seed=5))
    large = gen_population(PopulationSpec(n_stable=10, n_volatile=0, length=100, seed=5))
    assert np.array_equal(small.series[2].scores, large.series[2].scores)


def test_volatile_residuals_dominate_stable():
    spec = PopulationSpec(n_stable=10, n_volatile=10, volatile_std=0.03, length=2000, seed=2)
    pop = gen_population(spec)
    res = {"stable": [], "volatile": []}
    for s, label in zip(pop.series, pop.labels):
        m = estimate_model(s.scores[:1400])
        res[label].append(calibration_residuals(s.scores, m, 1, 1400))
    stable, volatile = (np.concatenate(res[k]) for k in ("stable", "volatile"))
    # empirical CDF of volatile residuals sits below the stable one at every quantile
    qs = np.linspace(0.05, 0.95, 19)
    assert np.all(np.quantile(volatile, qs) > np.quantile(stable, qs))


def test_with_shift_touches_one_agent():
    pop = gen_population(PopulationSpec(n_stable=3, n_volatile=0, length=400, seed=0))
    out = with_shift(pop, 1, ShiftEvent(200, 0.1, 2.0))
    assert np.array_equal(out.series[0].scores, pop.series[0].scores)
    assert not np.array_equal(out.series[1].scores, pop.series[1].scores)


def test_correlated_errors():
    a, b = gen_correlated_errors(1.0, 2.0, 0.0, 10_000, seed=0)
    assert abs(np.corrcoef(a, b)[0, 1]) <= 0.03
    a, b = gen_correlated_errors(1.0, 2.0, 1.0, 1000, seed=0)
    assert np.allclose(b, 2.0 * a)
    a, b = gen_correlated_errors(0.0, 2.0, 0.5, 100, seed=0)
    assert np.all(a == 0.0)
    with pytest.raises(ValueError):
        gen_correlated_errors(1.0, 1.0, 1.01, 10)
