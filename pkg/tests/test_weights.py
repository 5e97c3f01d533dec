import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privsum.errors import ConfigError, InvalidEpsilon
from privsum.sim import assemble_weight_matrix
from privsum.weights import (
    RoundWeights,
    WeightParams,
    generate_round_weights,
    node_rng,
    phase_b_map,
    simplex_sample,
    validate_round_weights,
)


def test_phase_b_map_direct_evaluations():
    np.testing.assert_allclose(phase_b_map([1.0, 0.0], 0.2), [0.8, 0.2], atol=1e-15)
    np.testing.assert_allclose(
        phase_b_map([0.0, 0.0, 1.0], 0.25), [0.25, 0.25, 0.5], atol=1e-15
    )
    third = [1 / 3, 1 / 3, 1 / 3]
    np.testing.assert_allclose(phase_b_map(third, 0.1), third, atol=1e-15)
    # symmetric midpoint with one out-neighbor
    np.testing.assert_allclose(phase_b_map([0.5, 0.5], 0.25), [0.5, 0.5], atol=1e-15)


def test_phase_b_map_rejects_infeasible_epsilon():
    with pytest.raises(InvalidEpsilon):
        phase_b_map([0.5, 0.5], 0.5)
    with pytest.raises(InvalidEpsilon):
        phase_b_map([0.25] * 4, 0.3)


@settings(max_examples=200, deadline=None)
@given(
    m=st.integers(min_value=1, max_value=6),
    eps_frac=st.floats(min_value=0.01, max_value=0.95),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_phase_b_map_properties(m, eps_frac, seed):
    eps = eps_frac / m
    d = simplex_sample(np.random.default_rng(seed), m)
    out = phase_b_map(d, eps)
    assert abs(out.sum() - 1.0) < 1e-12
    assert np.all(out > eps)
    assert np.all(out < 1.0) or m == 1


def test_masking_round_weights_are_identity_on_w():
    params = WeightParams(big_k=1, epsilon=0.1)
    rng = node_rng(0, 0)
    rw = generate_round_weights(0, 0, [1, 2], params, rng)
    assert rw.w_weights == {0: 1.0, 1: 0.0, 2: 0.0}
    assert sum(rw.s_weights.values()) == pytest.approx(1.0, abs=1e-12)
    validate_round_weights(rw, params)


def test_mixing_round_weights_shared_and_bounded():
    params = WeightParams(big_k=1, epsilon=0.25)
    rng = node_rng(3, 1)
    rw = generate_round_weights(1, 5, [4], params, rng)
    assert rw.s_weights == rw.w_weights
    for v in rw.s_weights.values():
        assert 0.25 < v < 0.75
    assert sum(rw.s_weights.values()) == pytest.approx(1.0, abs=1e-12)
    validate_round_weights(rw, params)


def test_generate_rejects_infeasible_epsilon():
    params = WeightParams(big_k=0, epsilon=0.4)
    with pytest.raises(InvalidEpsilon):
        generate_round_weights(0, 1, [1, 2], params, node_rng(0, 0))


def test_weight_stream_deterministic_per_seed():
    params = WeightParams(big_k=2, epsilon=0.05)
    a = [
        generate_round_weights(1, k, [0, 2], params, node_rng(9, 1)).s_weights
        for k in range(1)
    ]
    for _ in range(3):
        b = [
            generate_round_weights(1, k, [0, 2], params, node_rng(9, 1)).s_weights
            for k in range(1)
        ]
        assert a == b
    # different node id gives a different stream
    c = generate_round_weights(1, 0, [0, 2], params, node_rng(9, 2)).s_weights
    assert c != a[0]


@settings(max_examples=150, deadline=None)
@given(
    round_k=st.integers(min_value=0, max_value=8),
    big_k=st.integers(min_value=0, max_value=6),
    n_out=st.integers(min_value=1, max_value=5),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_round_weights_invariants(round_k, big_k, n_out, seed):
    params = WeightParams(big_k=big_k, epsilon=0.9 / (n_out + 1))
    out = list(range(1, n_out + 1))
    rw = generate_round_weights(0, round_k, out, params, node_rng(seed, 0))
    validate_round_weights(rw, params)
    assert rw.round == round_k
    assert set(rw.s_weights) == set(out) | {0}


def test_column_stochastic_assembly_all_rounds(demo_graph):
    params = WeightParams(big_k=2, epsilon=0.05)
    rngs = {i: node_rng(17, i) for i in demo_graph.nodes()}
    eye = np.eye(demo_graph.n_nodes)
    for k in range(6):
        per_node = {
            i: generate_round_weights(
                i, k, demo_graph.out_neighbors(i), params, rngs[i]
            )
            for i in demo_graph.nodes()
        }
        p_s = assemble_weight_matrix(per_node, demo_graph.n_nodes, "s")
        p_w = assemble_weight_matrix(per_node, demo_graph.n_nodes, "w")
        np.testing.assert_allclose(p_s.sum(axis=0), 1.0, atol=1e-12, rtol=0.0)
        np.testing.assert_allclose(p_w.sum(axis=0), 1.0, atol=1e-12, rtol=0.0)
        if k <= params.big_k:
            assert np.array_equal(p_w, eye)
        else:
            assert np.array_equal(p_s, p_w)
            support = p_s != 0.0
            assert np.all((p_s[support] > params.epsilon) & (p_s[support] < 1.0))


def test_params_validation():
    with pytest.raises(ConfigError):
        WeightParams(big_k=-1, epsilon=0.1)
    with pytest.raises(ConfigError):
        WeightParams(big_k=0, epsilon=1.5)
    with pytest.raises(ConfigError):
        WeightParams(big_k=0, epsilon=0.1, phase_a_range=0.0)


def test_round_weights_targets_order():
    rw = RoundWeights(2, 0, {2: 0.5, 0: 0.25, 4: 0.25}, {2: 1.0, 0: 0.0, 4: 0.0})
    assert rw.targets == [0, 4, 2]
