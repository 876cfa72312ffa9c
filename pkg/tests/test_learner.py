import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icilearn.learner import (FixedPointError, LearnerBank, NoiseDiagnostics, StepSizeSchedule,
                              UserKernel, expected_q_targets, expected_value_targets,
                              initial_q_table, initial_value_table, q_fixed_point_from_kernel,
                              q_residual, q_target, record_noise, solve_qfactor_fixed_point,
                              solve_value_fixed_point, update_qfactor, update_value, user_kernel,
                              value_fixed_point_from_kernel, value_residual, value_target)

COST = np.array([0.0, 1.0, 2.0, 3.0])


def test_step_sizes_robbins_monro():
    s = StepSizeSchedule(1.0, 2.0)
    g = np.array([s.gamma(t) for t in range(100000)])
    assert np.all(np.diff(g) < 0) and g[0] == 0.5
    assert g.sum() > 10 and (g ** 2).sum() < 1
    with pytest.raises(ValueError):
        StepSizeSchedule(0.0, 1.0)


def test_initial_tables():
    v = initial_value_table(COST, ref_pattern=1)
    assert np.all(np.diff(v.values) > 0) and v.values[0] == 0
    q = initial_q_table(COST, 3, ref_pattern=1)
    assert q.values.shape == (4, 3) and np.all(q.values == 0)


def test_value_update_touches_one_entry_under_reference_only():
    t = initial_value_table(COST, ref_pattern=1)
    before = t.values.copy()
    update_value(t, 2, 1, 1, pattern=0, gamma=0.5)
    assert np.array_equal(t.values, before)
    update_value(t, 2, 1, 1, pattern=1, gamma=0.5)
    changed = np.flatnonzero(t.values != before)
    assert changed.tolist() == [2]
    target = COST[3] + before[2]
    assert t.values[2] == pytest.approx(before[2] + 0.5 * (target - before[0] - before[2]))
    assert t.visits[2] == 1


def test_q_update_touches_one_cell():
    t = initial_q_table(COST, 3, ref_pattern=0)
    t.values[:] = np.arange(12.0).reshape(4, 3)
    before = t.values.copy()
    update_qfactor(t, 3, 2, arrival=1, service=2, gamma=0.25)
    diff = np.argwhere(t.values != before)
    assert diff.tolist() == [[3, 2]]
    nxt = min(max(3 - 2, 0) + 1, 3)
    target = COST[3] + before[nxt].min()
    assert t.values[3, 2] == pytest.approx(before[3, 2] + 0.25 * (target - before[0, 0] - before[3, 2]))


def test_out_of_range_states_raise():
    v = initial_value_table(COST, 0)
    q = initial_q_table(COST, 2, 0)
    with pytest.raises(IndexError):
        value_target(v, 4, 0, 0)
    with pytest.raises(IndexError):
        q_target(q, -1, 0, 0)


def test_targets_clip_at_buffer():
    v = initial_value_table(COST, 0)
    assert value_target(v, 3, 2, 0) == COST[3] + v.values[3]
    q = initial_q_table(COST, 1, 0)
    q.values[:, 0] = [0, 1, 2, 5]
    assert q_target(q, 3, 3, 0) == COST[3] + 5


def zero_cost_kernel():
    return UserKernel(cost=np.zeros(4), arrival_pmf=np.array([0.7, 0.3, 0, 0]),
                      service=np.array([[0.5, 0.5, 0, 0], [0.2, 0.3, 0.5, 0]]), ref_pattern=1)


def test_zero_cost_fixed_points_are_zero():
    ker = zero_cost_kernel()
    assert np.allclose(value_fixed_point_from_kernel(ker).values, 0.0)
    assert np.allclose(q_fixed_point_from_kernel(ker).values, 0.0)


def test_singular_value_system_raises_with_diagnostics():
    ker = UserKernel(cost=COST, arrival_pmf=np.array([1.0, 0, 0, 0]),
                     service=np.array([[1.0, 0, 0, 0]]), ref_pattern=0)
    with pytest.raises(FixedPointError) as err:
        value_fixed_point_from_kernel(ker)
    assert "condition_number" in err.value.diagnostics


def test_q_solver_reports_nonconvergence():
    with pytest.raises(FixedPointError) as err:
        q_fixed_point_from_kernel(UserKernel(
            cost=COST, arrival_pmf=np.array([0.7, 0.3, 0, 0]),
            service=np.array([[0.5, 0.5, 0, 0]]), ref_pattern=0), tol=1e-30, max_iters=3)
    assert len(err.value.diagnostics["span_history"]) == 3


def test_kernels_are_stochastic(example_scenario):
    ker = user_kernel(example_scenario, 0, 0)
    assert np.allclose(ker.service.sum(axis=1), 1.0)
    assert np.allclose(ker.value_matrix().sum(axis=1), 1.0)
    assert np.allclose(ker.q_matrices().sum(axis=2), 1.0)
    # alone on the link a user gets 2 bits (good fade) or 1 bit (bad fade)
    ref = ker.ref_pattern
    assert np.allclose(ker.service[ref], [0, 0.5, 0.5, 0])


@pytest.mark.parametrize("user", [(0, 0), (0, 1), (1, 0), (1, 1)])
def test_example_fixed_points_satisfy_their_equations(example_scenario, user):
    ker = user_kernel(example_scenario, *user)
    v = solve_value_fixed_point(example_scenario, *user)
    assert np.abs(value_residual(ker, v.values)).max() < 1e-9
    assert np.all(np.diff(v.values) >= 0)
    q = solve_qfactor_fixed_point(example_scenario, *user)
    assert np.abs(q_residual(ker, q.values)).max() < 1e-7
    assert np.all(np.diff(q.values, axis=0) >= -1e-9)
    # with a nonempty queue the pattern with the user alone is the cheapest continuation
    assert np.all(q.values[1:].argmin(axis=1) == ker.ref_pattern)
    assert np.ptp(q.values[0]) == 0.0


def test_expected_targets_match_sampled_means(example_scenario):
    ker = user_kernel(example_scenario, 0, 0)
    v = initial_value_table(ker.cost, ker.ref_pattern)
    rng = np.random.default_rng(2)
    arrivals = rng.choice(4, size=200000, p=ker.arrival_pmf)
    service = rng.choice(4, size=200000, p=ker.service[ker.ref_pattern])
    ev = expected_value_targets(ker, v.values)
    for x in range(4):
        samples = [value_target(v, x, a, u) for a, u in zip(arrivals[:20000], service[:20000])]
        assert np.mean(samples) == pytest.approx(ev[x], abs=0.05)
    eq = expected_q_targets(ker, np.zeros((4, 3)))
    assert np.allclose(eq, ker.cost[:, None])


def test_noise_diagnostics_welford():
    rng = np.random.default_rng(0)
    z = rng.normal(0.2, 2.0, 5000)
    d = NoiseDiagnostics()
    for v in z:
        record_noise(d, v, 0.0)
    assert d.count == 5000
    assert d.mean == pytest.approx(z.mean())
    assert d.variance == pytest.approx(z.var(ddof=1))
    assert d.second_moment == pytest.approx((z ** 2).mean())
    assert d.clt_band() == pytest.approx(3 * np.sqrt(z.var(ddof=1) / 5000))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 1), st.integers(0, 3), st.integers(0, 2)),
                min_size=1, max_size=30), st.booleans())
def test_bank_matches_scalar_rules(steps, per_visit):
    cost = np.stack([[COST, 2 * COST]])  # (1, 2, 4)
    bank = LearnerBank(cost, 3, [1], StepSizeSchedule(1.0, 2.0, per_visit))
    bank.qf[:] = np.random.default_rng(len(steps)).random(bank.qf.shape)
    vt = [bank.value_table(0, k) for k in range(2)]
    qt = [bank.q_table(0, k) for k in range(2)]
    for t, (x, a, u, p) in enumerate(steps):
        q = np.array([[x, 3 - x]])
        arr = np.array([[a, 1 - a]])
        svc = np.array([[u, u]])
        bank.update_values(t, q, arr, svc, p)
        bank.update_qfactors(t, q, p, arr, svc)
        for k in range(2):
            g_v = 1.0 / (2.0 + vt[k].visits[q[0, k]]) if per_visit else 1.0 / (2.0 + t)
            update_value(vt[k], int(q[0, k]), int(arr[0, k]), u, p, g_v)
            g_q = 1.0 / (2.0 + qt[k].visits[q[0, k], p]) if per_visit else 1.0 / (2.0 + t)
            update_qfactor(qt[k], int(q[0, k]), p, int(arr[0, k]), u, g_q)
    for k in range(2):
        assert np.allclose(bank.values[0, k], vt[k].values)
        assert np.allclose(bank.qf[0, k], qt[k].values)


def test_frozen_bank_does_not_move(example_scenario):
    bank = LearnerBank.for_scenario(example_scenario)
    bank.frozen = True
    v, q = bank.snapshot()
    bank.update_values(0, np.ones((2, 2), dtype=int), np.ones((2, 2), dtype=int),
                       np.zeros((2, 2), dtype=int), bank.ref_pattern[0])
    bank.update_qfactors(0, np.ones((2, 2), dtype=int), 0, np.ones((2, 2), dtype=int),
                         np.zeros((2, 2), dtype=int))
    assert np.array_equal(v, bank.values) and np.array_equal(q, bank.qf)
