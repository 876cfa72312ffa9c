import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icilearn.config import build_scenario, load_config
from icilearn.learner import solve_qfactor_fixed_point, solve_value_fixed_point
from icilearn.model import ConfigError
from icilearn.sim import (RunSpec, fixed_point_distances, load_metrics, make_streams, noise_study,
                          read_checkpoints, run, run_config, sweep, verify_fixed_points,
                          write_checkpoints, write_metrics)
from icilearn.stats import batch_means, replicate_ci

from conftest import tiny_config

POLICIES = ["proposed", "oracle", "csit", "backpressure", "timescale", "never"]


@pytest.mark.parametrize("policy", POLICIES)
def test_accounting_identity_every_policy(example_cfg, example_oracle, policy):
    rec = run_config(example_cfg, RunSpec(seed=3, horizon=3000, policy=policy),
                     oracle_policy=example_oracle[2])
    assert np.all(rec.accounting_gap() == 0)
    assert rec.slots == 2700 and rec.warmup == 300
    assert 0 <= rec.overall_drop_prob <= 1


@pytest.mark.parametrize("policy", ["proposed", "csit", "backpressure", "timescale"])
def test_packet_mode_accounting_and_determinism(policy):
    cfg = load_config("macro7.cfg")
    spec = RunSpec(seed=2, horizon=600, policy=policy)
    a, b = run_config(cfg, spec), run_config(cfg, spec)
    assert np.all(a.accounting_gap() == 0)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
    assert np.max(a.q_final) <= 9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["proposed", "backpressure", "timescale"]))
def test_accounting_holds_for_any_seed(seed, policy):
    cfg = tiny_config()
    rec = run_config(cfg, RunSpec(seed=seed, horizon=500, policy=policy))
    assert np.all(rec.accounting_gap() == 0)
    assert np.all(np.array(rec.queue_hist).sum(axis=2) == rec.slots)


def test_same_seed_bit_identical_and_seed_sensitive(example_cfg):
    spec = RunSpec(seed=5, horizon=4000, policy="proposed", checkpoints=(1000, 4000))
    a, b = run_config(example_cfg, spec), run_config(example_cfg, spec)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
    for t in a.checkpoints:
        assert all(np.array_equal(x, y) for x, y in zip(a.checkpoints[t], b.checkpoints[t]))
    c = run_config(example_cfg, RunSpec(seed=6, horizon=4000, policy="proposed"))
    assert c.to_json() != a.to_json()


def test_common_random_numbers_across_policies(example_cfg):
    recs = [run_config(example_cfg, RunSpec(seed=9, horizon=2000, policy=p))
            for p in ("proposed", "csit", "never")]
    assert all(r.arrived == recs[0].arrived for r in recs)
    s1, s2 = make_streams(9, 0), make_streams(9, 1)
    assert s1["channel"].random() != s2["channel"].random()


def test_never_transmit_serves_nothing(example_cfg):
    rec = run_config(example_cfg, RunSpec(seed=1, horizon=2000, policy="never"))
    assert np.sum(rec.served) == 0
    assert rec.overall_drop_prob > 0.8


def test_runspec_validation():
    with pytest.raises(ConfigError):
        RunSpec(policy="random")
    with pytest.raises(ConfigError):
        RunSpec(horizon=0)
    with pytest.raises(ConfigError):
        RunSpec(horizon=10, warmup=10)
    assert RunSpec(horizon=1000).warmup == 100


def test_oracle_solved_on_demand_and_refused_when_continuous(example_cfg, example_oracle):
    spec = RunSpec(seed=4, horizon=500, policy="oracle")
    a = run_config(example_cfg, spec)
    b = run_config(example_cfg, spec, oracle_policy=example_oracle[2])
    assert a.to_json() == b.to_json()
    with pytest.raises(ConfigError):
        run_config(tiny_config(channel__kind="rayleigh"), spec)


def test_checkpoint_roundtrip(tmp_path, example_cfg, example_scenario):
    rec = run_config(example_cfg, RunSpec(seed=1, horizon=3000, checkpoints=(1000, 3000)))
    assert sorted(rec.checkpoints) == [1000, 3000]
    path = write_checkpoints(rec.checkpoints, example_scenario, tmp_path)
    header, tables = read_checkpoints(path)
    assert header["reference_patterns"] == [1, 0]
    for t, (v, q) in rec.checkpoints.items():
        assert np.array_equal(tables[t][0], v) and np.array_equal(tables[t][1], q)


def test_metrics_files(tmp_path, example_cfg):
    rec = run_config(example_cfg, RunSpec(seed=1, horizon=2000, policy="backpressure"))
    jpath, cpath = write_metrics(rec, tmp_path, "m")
    doc = load_metrics(jpath)
    assert doc["avg_delay"] == rec.avg_delay and doc["format"].startswith("icilearn-metrics")
    lines = cpath.read_text().splitlines()
    assert lines[0].startswith("policy,seed,replicate,m,k")
    assert len(lines) == 1 + 4


def test_trace_rows(example_cfg, example_scenario):
    rows = []

    class Sink:
        def writerow(self, row):
            rows.append(row)

    spec = RunSpec(seed=1, horizon=50, policy="csit")
    rec = run(spec, example_scenario, trace=Sink())
    assert len(rows) == 50 and len(rows[0]) == 2 + 4 * 4
    arrived = np.sum([r[6:10] for r in rows], axis=0)
    assert arrived.tolist() == np.ravel(rec.arrived).tolist()


def test_sweep_rows_and_parallel_equivalence(example_cfg):
    kw = dict(param="arrivals.rate", values=[0.2, 0.3], policies=["proposed", "csit"], replicates=2,
              horizon=1500)
    serial = sweep(example_cfg, **kw)
    par = sweep(example_cfg, **kw, jobs=2)
    assert [(r["value"], r["policy"]) for r in serial] == [
        (0.2, "proposed"), (0.2, "csit"), (0.3, "proposed"), (0.3, "csit")]
    assert json.dumps(serial) == json.dumps(par)
    assert all(r["replicates"] == 2 for r in serial)
    with pytest.raises(ConfigError):
        sweep(example_cfg, "arrivals.rate", [])


def test_fixed_point_distance_zero_at_fixed_point(example_scenario):
    M, K = example_scenario.shape
    v = np.stack([[solve_value_fixed_point(example_scenario, m, k).values for k in range(K)]
                  for m in range(M)])
    q = np.stack([[solve_qfactor_fixed_point(example_scenario, m, k).values for k in range(K)]
                  for m in range(M)])
    d = fixed_point_distances(example_scenario, {10: (v, q), 20: (v + 1.0, q)})
    assert d[10] == (0.0, 0.0)
    assert d[20][0] > 0 and d[20][1] == 0.0


def test_frozen_learning_fails_verification(example_cfg):
    rep = verify_fixed_points(example_cfg, horizon=3000, checkpoints=(1000, 3000), freeze=True)
    assert not rep["passed"]
    assert rep["value_distance"][0] == rep["value_distance"][1]
    assert rep["q_distance"][0] == rep["q_distance"][1]


def test_verification_refuses_continuous_instances():
    with pytest.raises(ConfigError):
        verify_fixed_points(load_config("macro7.cfg"), horizon=10, checkpoints=(10,))


def test_noise_study_small(example_scenario):
    dv, dq = noise_study(example_scenario, 2000, seed=2)
    assert dv.count == dq.count == 2000
    assert dv.variance > 0 and dq.variance > 0
    assert abs(dv.mean) < 5 * np.sqrt(dv.variance / dv.count)


def test_batch_means_and_replicates():
    rng = np.random.default_rng(0)
    x = rng.normal(1.0, 1.0, 20000)
    m, h = batch_means(x)
    assert m == pytest.approx(x.mean()) and 0 < h < 0.05
    assert batch_means(np.arange(5.0))[1] == np.inf
    assert np.isnan(batch_means([])[0])
    assert replicate_ci([2.0]) == (2.0, 0.0)
    mean, half = replicate_ci([1.0, 2.0, 3.0])
    assert mean == 2.0 and half == pytest.approx(4.303 * 1.0 / np.sqrt(3), rel=1e-3)


def test_hex_placement_follows_seed():
    cfg = load_config("macro7.cfg")
    a = build_scenario(cfg, make_streams(1)["placement"])
    b = build_scenario(cfg, make_streams(1)["placement"])
    c = build_scenario(cfg, make_streams(2)["placement"])
    assert np.array_equal(a.user_xy, b.user_xy) and not np.array_equal(a.user_xy, c.user_xy)
