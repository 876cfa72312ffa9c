import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icilearn.baselines import (ReuseBaseline, ReusePlan, TimescaleBaseline, all_pattern_rates,
                                as_action, backpressure_schedule, csit_only_schedule)
from icilearn.channel import candidate_rates, hex_colors, hex_positions
from icilearn.config import build_scenario, load_config
from icilearn.model import ConfigError, schedule_matrix, validate_action


@pytest.fixture(scope="module")
def macro7():
    return build_scenario(load_config("macro7.cfg"), np.random.default_rng(0))


def test_reuse_plan_is_proper_on_hex_grid():
    xy = hex_positions(19, 1.0)
    adj = np.isclose(np.linalg.norm(xy[:, None] - xy[None], axis=-1), 1.0)
    plan = ReusePlan(hex_colors(19))
    assert plan.is_proper(adj)
    assert not ReusePlan(np.zeros(19, dtype=int)).is_proper(adj)
    mask = plan.interference_mask()
    assert not mask.diagonal().any()
    assert not np.any(mask & adj)


def test_reuse_rates_use_a_third_of_the_band(macro7):
    plan = ReusePlan.for_scenario(macro7)
    s = macro7.system
    h = np.ones((7, 7, 3))
    r = plan.rates(s, h)
    own = candidate_rates(s, h, np.ones(7, dtype=bool), mask=plan.interference_mask(),
                          bandwidth=s.bandwidth / 3)[0]
    assert np.allclose(r, own)
    alone = np.zeros(7, dtype=bool)
    alone[0] = True
    full_band = candidate_rates(s, h, alone)[0][0]
    assert np.all(r[0] < full_band)


def test_selection_rules():
    rates = np.array([[1.0, 3.0, 2.0], [0.0, 0.0, 0.0]])
    q = np.array([[5, 0, 1], [0, 2, 0]])
    assert csit_only_schedule(rates, [True, True]).tolist() == [1, 0]
    assert backpressure_schedule(q, rates, [True, True]).tolist() == [0, 0]
    assert csit_only_schedule(rates, [False, True]).tolist() == [-1, 0]
    # CSIT-only may pick an empty queue; the emitted action drops it
    s = as_action(csit_only_schedule(rates, [True, True]), q)
    assert s.tolist() == [[False, False, False], [False, False, False]]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=6, max_size=6),
       st.lists(st.floats(0, 5), min_size=6, max_size=6))
def test_emitted_actions_are_valid(qs, rs):
    q = np.array(qs).reshape(2, 3)
    r = np.array(rs).reshape(2, 3)
    for choice in (csit_only_schedule(r, [True, True]), backpressure_schedule(q, r, [True, True])):
        assert validate_action([True, True], as_action(choice, q), q) == []
        assert np.all(np.asarray(choice) >= 0)


def test_all_pattern_rates_match_candidate_rates(example_scenario):
    s = example_scenario.system
    h = np.random.default_rng(0).random((2, 2, 2)) * 3
    act = example_scenario.patterns.active
    allr = all_pattern_rates(s, h, act)
    for p in range(len(act)):
        assert np.allclose(allr[p], candidate_rates(s, h, act[p])[0])


def test_reuse_baseline_interface(example_scenario):
    b = ReuseBaseline(example_scenario, "backpressure")
    assert b.select(0, None) == -1
    assert b.active(-1).all()
    with pytest.raises(ConfigError):
        ReuseBaseline(example_scenario, "random")


def test_timescale_switches_only_on_slow_clock(macro7):
    b = TimescaleBaseline(macro7)
    rng = np.random.default_rng(4)
    seen = []
    for t in range(450):
        b.observe_csi(t, rng.exponential(size=(7, 7, 3)))
        seen.append(b.select(t, None))
        b.record_throughput(np.full((7, 3), 1e5))
    changes = [t for t in range(1, 450) if seen[t] != seen[t - 1]]
    assert all(t % b.t_slow == 0 for t in changes)


def test_timescale_ignores_queues(macro7):
    b1, b2 = TimescaleBaseline(macro7), TimescaleBaseline(macro7)
    h = np.random.default_rng(5).exponential(size=(7, 7, 3))
    b1.observe_csi(0, h)
    b2.observe_csi(0, h)
    p = b1.select(0, np.zeros((7, 3)))
    assert p == b2.select(0, np.full((7, 3), 9))
    r = b1.rates(h, p)
    c1 = b1.schedule(0, np.zeros((7, 3)), p, None, r)
    c2 = b2.schedule(0, np.full((7, 3), 9), p, None, r)
    assert np.array_equal(c1, c2)
    assert validate_action(macro7.patterns.active[p], schedule_matrix(c1, 3),
                           np.ones((7, 3))) == []


def test_pf_average_tracks_throughput(macro7):
    b = TimescaleBaseline(macro7)
    start = b.avg.copy()
    for _ in range(5000):
        b.record_throughput(np.full((7, 3), 2.0))
    expected = 2.0 + (start - 2.0) * (1 - b.alpha) ** 5000
    assert np.allclose(b.avg, expected)
