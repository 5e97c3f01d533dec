import numpy as np
import pytest

from privsum.consensus import Trajectory, initial_state
from privsum.errors import ConfigError, RangeUncovered
from privsum.graph import DirectedGraph, default_demo_graph
from privsum.sim import (
    MODE_ALGORITHM0,
    MODE_ALGORITHM1,
    MODE_ALGORITHM2,
    AdversarySpec,
    ExperimentConfig,
    assemble_weight_matrix,
    error_series,
    fitted_contraction,
    resolve_x0,
    run_experiment,
    theoretical_rate,
    transition_product,
    write_series_csv,
)

def make_config(**overrides):
    base = dict(
        graph=default_demo_graph(),
        x0=[10.0, 15.0, 20.0, 25.0, 30.0],
        big_k=1,
        epsilon=0.01,
        max_rounds=60,
        stop_tol=0.0,
        seed=4,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def test_run_experiment_converges():
    res = run_experiment(make_config(max_rounds=100))
    assert res.metrics.alpha == 20.0
    assert res.metrics.e[-1] < 1e-9
    np.testing.assert_allclose(res.metrics.pi[-1], 20.0, atol=1e-9)


def test_error_series_direct_values():
    states = [
        tuple(initial_state(i, v) for i, v in enumerate((21.0, 19.0))),
    ]
    traj = Trajectory(states=states)
    m = error_series(traj, [21.0, 19.0])
    assert m.alpha == 20.0
    assert m.e[0] == pytest.approx(np.sqrt(2.0), abs=1e-15)
    flat = Trajectory(states=[tuple(initial_state(i, 20.0) for i in range(2))])
    assert error_series(flat, [25.0, 15.0]).e[0] == 0.0


def test_constant_input_modes():
    cfg0 = make_config(x0=[4.0] * 5, mode=MODE_ALGORITHM0, max_rounds=30)
    res0 = run_experiment(cfg0)
    np.testing.assert_allclose(res0.metrics.e, 0.0, atol=1e-12)
    cfg1 = make_config(x0=[4.0] * 5, mode=MODE_ALGORITHM1, max_rounds=30)
    res1 = run_experiment(cfg1)
    assert res1.metrics.e[0] == 0.0  # pi(0) = x0 = alpha


def test_monotone_tail_on_converged_run():
    res = run_experiment(make_config(max_rounds=120))
    e = res.metrics.e
    tail = e[int(len(e) * 0.75) :]
    assert np.all(np.diff(tail) <= 1e-12)


def test_delayed_onset_with_large_k():
    res = run_experiment(make_config(big_k=9, max_rounds=200, phase_a_range=2.0))
    e = res.metrics.e
    assert min(e[:11]) > 1e-3  # nothing contracts during the masking phase
    assert e[-1] < 1e-6


def test_transition_product_oracle_matches_engine():
    cfg = make_config(big_k=2, max_rounds=20)
    res = run_experiment(cfg)
    record = res.record
    n = cfg.graph.n_nodes
    k_mask = cfg.big_k

    # single factor
    p0 = transition_product(record.weight_log, 3, 3, "s", n)
    np.testing.assert_array_equal(
        p0, assemble_weight_matrix(record.weight_log[3], n, "s")
    )
    # masking phase leaves the weight side untouched
    phi_w_mask = transition_product(record.weight_log, 0, k_mask, "w", n)
    np.testing.assert_array_equal(phi_w_mask, np.eye(n))
    # column stochasticity of every prefix product
    for k in range(record.n_rounds):
        phi = transition_product(record.weight_log, 0, k, "s", n)
        np.testing.assert_allclose(phi.sum(axis=0), 1.0, atol=1e-11, rtol=0.0)
    # the matrix route reproduces the message-passing trajectory
    s = record.trajectory.s_array()
    w = record.trajectory.w_array()
    np.testing.assert_allclose(
        transition_product(record.weight_log, 0, k_mask, "s", n) @ s[0],
        s[k_mask + 1],
        rtol=1e-12,
        atol=1e-12 * np.abs(s).max(),
    )
    for k in range(k_mask + 2, record.n_rounds + 1):
        phi_w = transition_product(record.weight_log, k_mask + 1, k - 1, "w", n)
        np.testing.assert_allclose(phi_w @ np.ones(n), w[k], rtol=1e-12, atol=1e-13)


def test_transition_product_range_errors():
    res = run_experiment(make_config(max_rounds=10))
    log = res.record.weight_log
    with pytest.raises(RangeUncovered):
        transition_product(log, 5, 3)
    with pytest.raises(RangeUncovered):
        transition_product(log, 0, 10)
    with pytest.raises(RangeUncovered):
        transition_product(log, -1, 3)


def test_weight_window_product_floor():
    cfg = make_config(big_k=1, max_rounds=20, epsilon=0.05)
    res = run_experiment(cfg)
    n = cfg.graph.n_nodes
    window = transition_product(res.record.weight_log, 2, 2 + n - 1, "w", n)
    assert np.all(window >= cfg.epsilon**n)


def test_config_validation_messages():
    with pytest.raises(ConfigError, match="strongly connected"):
        ExperimentConfig(
            graph=DirectedGraph.from_edge_list(2, [[1, 0]]), x0=[1.0, 2.0]
        ).validate()
    with pytest.raises(ConfigError, match="max out-degree"):
        make_config(epsilon=0.5).validate()
    with pytest.raises(ConfigError, match="K\\+2"):
        make_config(big_k=59).validate()
    with pytest.raises(ConfigError, match="entries"):
        make_config(x0=[1.0, 2.0]).validate()
    with pytest.raises(ConfigError, match="mode"):
        make_config(mode="algorithm9").validate()
    with pytest.raises(ConfigError, match="member"):
        make_config(
            adversary=AdversarySpec(members=(0, 1), target=0)
        ).validate()


def test_config_k_zero_supported():
    res = run_experiment(make_config(big_k=0, max_rounds=80))
    assert res.metrics.e[-1] < 1e-9


def test_resolve_x0_deterministic_and_override():
    cfg = make_config(
        x0={"low": 0.0, "high": 50.0},
        adversary=AdversarySpec(members=(1, 2, 3), target=0),
    )
    a = resolve_x0(cfg)
    b = resolve_x0(cfg)
    assert a == b
    assert all(0.0 <= v <= 50.0 for v in a)
    c = resolve_x0(cfg, target_override=40.0)
    assert c[0] == 40.0
    assert c[1:] == a[1:]


def test_config_dict_roundtrip():
    cfg = make_config(adversary=AdversarySpec(members=(1, 2, 3), target=0, trials=7))
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


def test_csv_outputs_byte_identical(tmp_path):
    for name in ("a.csv", "b.csv"):
        res = run_experiment(make_config(max_rounds=30))
        write_series_csv(tmp_path / name, res.metrics)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_seed_changes_trajectory():
    r1 = run_experiment(make_config(seed=1, max_rounds=20))
    r2 = run_experiment(make_config(seed=2, max_rounds=20))
    assert not np.array_equal(r1.metrics.pi, r2.metrics.pi)


def test_fitted_contraction_bounds():
    res = run_experiment(make_config(max_rounds=100))
    rate = fitted_contraction(res.metrics.e)
    assert 0.0 <= rate < 1.0
    gamma = theoretical_rate(5, 0.01)
    assert rate <= gamma
    # direct formula evaluation
    assert gamma == pytest.approx((1.0 - 1e-8) ** 0.25, abs=1e-15)
    flat = np.full(50, 1e-16)
    assert fitted_contraction(flat) == 0.0


def test_encrypted_mode_close_to_plain():
    plain = run_experiment(make_config(max_rounds=40, mode=MODE_ALGORITHM1))
    enc = run_experiment(
        make_config(max_rounds=40, mode=MODE_ALGORITHM2, key_bits=128)
    )
    assert enc.mean_encrypt_seconds is not None
    np.testing.assert_allclose(
        enc.record.trajectory.pi_array(),
        plain.record.trajectory.pi_array(),
        atol=1e-8,
    )


def test_stop_tol_shortens_run():
    res = run_experiment(make_config(max_rounds=500, stop_tol=1e-12))
    assert res.record.n_rounds < 500
    assert res.metrics.e[-1] < 1e-9
