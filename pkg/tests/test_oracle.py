import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icilearn.config import build_scenario
from icilearn.channel import candidate_rates, deliverable_units
from icilearn.model import per_slot_cost, schedule_matrix, validate_action
from icilearn.oracle import (ConvergenceError, NeverTransmit, OracleModel, UnsupportedInstance,
                             bellman_residual, bellman_rhs, bellman_rhs_enumerated,
                             evaluate_policy, is_monotone, load_oracle, monotone_violations,
                             relative_value_iteration, save_oracle, schedule_options)
from icilearn.stats import replicate_ci

from conftest import tiny_config


def single_bs_two_users():
    return build_scenario(tiny_config(system__num_bs=1, system__buffer_size=2))


def two_bs_fixed_cross():
    return build_scenario(tiny_config(system__users_per_bs=1, system__buffer_size=2,
                                      channel__cross_levels=[[1.2, 1.0]]))


def test_schedule_options_order():
    opts = schedule_options([True, False], 2)
    assert opts.tolist() == [[0, -1], [1, -1], [-1, -1]]
    assert schedule_options([True, True], 1).tolist() == [[0, 0], [0, -1], [-1, 0], [-1, -1]]


@pytest.mark.parametrize("make", [single_bs_two_users, two_bs_fixed_cross])
def test_per_h_minimisation_matches_full_enumeration(make):
    model = OracleModel(make())
    rng = np.random.default_rng(7)
    for V in (rng.normal(size=model.num_q), np.sort(rng.random(model.num_q))):
        for q in model.q_grid:
            fast, _, _ = bellman_rhs(model, q, V)
            assert fast == pytest.approx(bellman_rhs_enumerated(model, q, V), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9))
def test_operator_agrees_with_single_state_rhs(values):
    model = OracleModel(two_bs_fixed_cross())
    V = np.array(values)
    TV, best = model.operator(V)
    for i, q in enumerate(model.q_grid):
        val, p, _ = bellman_rhs(model, q, V)
        assert TV[i] == pytest.approx(val, abs=1e-12)


def test_example_oracle_converges(example_oracle):
    model, table, policy = example_oracle
    assert table.span < 1e-9
    assert np.abs(bellman_residual(model, table)).max() < 1e-7
    assert table.values[table.ref_state] == 0.0
    assert is_monotone(table.values, table.dims)
    assert monotone_violations(table.values, table.dims) == 0
    assert table.theta == pytest.approx(9.559383, abs=1e-5)


def stationary_cost(scenario, policy):
    """Average cost of a tabular policy from its Markov chain, built with plain loops."""
    system = scenario.system
    n = system.buffer_size
    M, K = system.shape
    dims = (n + 1,) * (M * K)
    states = list(np.ndindex(*dims))
    index = {s: i for i, s in enumerate(states)}
    h_all, h_prob = scenario.channel.enumerate_states()
    to_post = np.zeros((len(states), len(states)))
    rates = {}
    for i, s in enumerate(states):
        q = np.array(s).reshape(M, K)
        p = policy.pattern(q)
        for hs, ph in enumerate(h_prob):
            if (p, hs) not in rates:
                r, _, _ = candidate_rates(system, h_all[hs], scenario.patterns.active[p])
                rates[p, hs] = deliverable_units(r, system.slot_len)
            post = q.copy()
            for m, k in enumerate(policy.schedule(q, hs)):
                if k >= 0:
                    post[m, k] = max(q[m, k] - rates[p, hs][m, k], 0)
            to_post[i, index[tuple(post.ravel())]] += ph
    lam = float(scenario.arrivals.rate[0, 0])
    step = np.zeros((n + 1, n + 1))
    for x in range(n + 1):
        step[x, x] += 1 - lam
        step[x, min(x + 1, n)] += lam
    arrive = step
    for _ in range(M * K - 1):
        arrive = np.kron(arrive, step)
    chain = to_post @ arrive
    A = np.vstack([chain.T - np.eye(len(states)), np.ones(len(states))])
    b = np.zeros(len(states) + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    cost = np.array([per_slot_cost(np.array(s).reshape(M, K), scenario.cost) for s in states])
    return float(pi @ cost)


def test_theta_matches_stationary_cost_of_policy(example_oracle, example_scenario):
    _, table, policy = example_oracle
    assert stationary_cost(example_scenario, policy) == pytest.approx(table.theta, abs=1e-7)


@pytest.mark.slow
def test_simulated_cost_is_unbiased_across_seeds(example_oracle, example_scenario):
    # pooling independent seeds checks the simulator against theta without
    # leaning on one batch-means interval, which misses 5% of the time
    model, table, policy = example_oracle
    means = [evaluate_policy(policy, example_scenario, 1_000_000, rng=s, model=model).mean
             for s in range(1, 11)]
    mean, half = replicate_ci(means)
    assert abs(mean - table.theta) <= half


def test_example_oracle_policy_is_valid(example_oracle):
    model, _, policy = example_oracle
    active = model.scenario.patterns.active
    for i, q in enumerate(model.q_grid):
        p = policy.pattern_of[i]
        for s in range(model.num_h):
            choice = policy.schedule_of[i, s]
            assert validate_action(active[p], schedule_matrix(choice, 2), q) == []


def test_oracle_beats_silence(example_oracle, example_scenario):
    model, table, policy = example_oracle
    silent = evaluate_policy(NeverTransmit(2), example_scenario, 20000, rng=3)
    assert silent.mean > table.theta


def test_degenerate_instance_has_zero_cost():
    sc = build_scenario(tiny_config(system__cost_kind="overflow_indicator", arrivals__rate=0.0,
                                    system__buffer_size=1, system__users_per_bs=1))
    model = OracleModel(sc)
    table, policy = relative_value_iteration(model)
    assert table.theta == 0.0
    assert table.values[0] == 0.0
    # nonempty states are transient; a full buffer pays its overflow cost while draining
    assert np.all(table.values >= 0.0)
    assert is_monotone(table.values, table.dims)
    est = evaluate_policy(policy, sc, 2000, rng=1, model=model)
    assert est.mean == 0.0


def test_unsupported_instances():
    with pytest.raises(UnsupportedInstance):
        OracleModel(build_scenario(tiny_config(channel__kind="rayleigh")))
    with pytest.raises(UnsupportedInstance):
        OracleModel(build_scenario(tiny_config(system__buffer_size=9)))


def test_convergence_error_carries_history():
    model = OracleModel(two_bs_fixed_cross())
    with pytest.raises(ConvergenceError) as err:
        relative_value_iteration(model, tol=1e-30, max_iters=5)
    assert len(err.value.span_history) == 5


def test_damping_keeps_fixed_point():
    model = OracleModel(two_bs_fixed_cross())
    a, _ = relative_value_iteration(model)
    b, _ = relative_value_iteration(model, damping=0.5)
    assert b.theta == pytest.approx(a.theta, abs=1e-7)
    assert np.allclose(a.values, b.values, atol=1e-6)


def test_tabular_and_generic_evaluation_agree(example_oracle, example_scenario):
    model, _, policy = example_oracle

    class Wrapped:
        def pattern(self, q):
            return policy.pattern(q)

        def schedule(self, q, h):
            return policy.schedule(q, h)

    fast = evaluate_policy(policy, example_scenario, 5000, rng=11, model=model)
    slow = evaluate_policy(Wrapped(), example_scenario, 5000, rng=11)
    assert np.array_equal(fast.costs, slow.costs)


def test_save_and_load_roundtrip(tmp_path, example_oracle):
    _, table, policy = example_oracle
    path = save_oracle(tmp_path / "o.json", table, policy, {"note": "x"})
    t2, p2, meta = load_oracle(path)
    assert t2.theta == table.theta and np.array_equal(t2.values, table.values)
    assert np.array_equal(p2.schedule_of, policy.schedule_of)
    assert meta == {"note": "x"}
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_oracle(tmp_path / "bad.json")


def test_monotone_helpers_detect_violation():
    dims = (2, 2)
    v = np.array([0.0, 1.0, 2.0, 1.5])
    assert not is_monotone(v, dims)
    assert monotone_violations(v, dims) == 1
