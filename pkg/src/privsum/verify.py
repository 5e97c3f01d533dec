"""Executable invariant suites behind the ``verify`` command.

Each suite re-derives a protocol guarantee through an independent route
(matrix products, direct sums, replays, crypto roundtrips) and checks the
message-passing engine against it.  A corrupted-weight hook exists so tests
can prove the suites actually bite.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, replace

import numpy as np

from .adversary import (
    adversary_observables,
    build_indistinguishability_witness,
    observables_match,
    replay_with_witness,
)
from .consensus import algorithm1_weight_source, run_rounds
from .errors import PrivsumError
from .paillier import (
    FixedPointCodec,
    add_ciphertexts,
    decrypt,
    encrypt,
    keygen,
    keypair_from_primes,
)
from .sim import (
    ExperimentConfig,
    MODE_ALGORITHM0,
    MODE_ALGORITHM1,
    MODE_ALGORITHM2,
    assemble_weight_matrix,
    resolve_x0,
    run_experiment,
    transition_product,
)
from .weights import derive_seed


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str = ""


def _corrupting_source(source):
    """Distort one outgoing weight per node per round without fixing the
    self-weight, breaking column stochasticity (negative-control hook)."""

    def corrupted(node_id: int, round_k: int):
        rw = source(node_id, round_k)
        s = dict(rw.s_weights)
        first = min(s)
        s[first] += 0.05
        return replace(rw, s_weights=s)

    return corrupted


def _run(config: ExperimentConfig, corrupt_weights: bool = False):
    if not corrupt_weights:
        return run_experiment(config).record
    source = _corrupting_source(
        algorithm1_weight_source(config.graph, config.params, config.seed)
    )
    return run_rounds(
        config.graph,
        resolve_x0(config),
        rounds=config.max_rounds,
        weight_source=source,
        params=config.params,
        mode=MODE_ALGORITHM1,
    )


def suite_mass_conservation(config: ExperimentConfig) -> SuiteResult:
    """sum_i s_i(k) stays at sum_i x_i for every round of every mode."""
    worst = 0.0
    for mode in (MODE_ALGORITHM0, MODE_ALGORITHM1, MODE_ALGORITHM2):
        cfg = replace(config, mode=mode, stop_tol=0.0, max_rounds=min(config.max_rounds, 40))
        res = run_experiment(cfg)
        s = res.record.trajectory.s_array()
        total0 = sum(res.x0)
        drift = np.max(np.abs(s.sum(axis=1) - total0)) / (1.0 + abs(total0))
        worst = max(worst, float(drift))
    ok = worst <= 1e-9
    return SuiteResult("mass-conservation", ok, f"worst relative drift {worst:.3e}")


def suite_weight_floor(config: ExperimentConfig) -> SuiteResult:
    """w_i(k) = 1 exactly through round K+1, then never below epsilon^N."""
    cfg = replace(config, mode=MODE_ALGORITHM1, stop_tol=0.0)
    res = run_experiment(cfg)
    w = res.record.trajectory.w_array()
    big_k = config.big_k
    head_ok = bool(np.all(w[: big_k + 2] == 1.0))
    floor = config.epsilon**config.graph.n_nodes
    tail_min = float(w[big_k + 2 :].min()) if w.shape[0] > big_k + 2 else 1.0
    ok = head_ok and tail_min >= floor
    return SuiteResult(
        "weight-floor",
        ok,
        f"ones through round K+1: {head_ok}, min tail weight {tail_min:.3e} "
        f"vs floor {floor:.3e}",
    )


def suite_column_stochastic(
    config: ExperimentConfig, corrupt_weights: bool = False
) -> SuiteResult:
    """Every round's assembled s and w matrices have unit column sums, the
    w matrix is the identity through round K, and both matrices coincide
    with entries in (epsilon, 1) afterwards."""
    cfg = replace(config, stop_tol=0.0, max_rounds=min(config.max_rounds, 40))
    record = _run(cfg, corrupt_weights)
    n = config.graph.n_nodes
    eps = config.epsilon
    for k, per_node in enumerate(record.weight_log):
        ps = assemble_weight_matrix(per_node, n, "s")
        pw = assemble_weight_matrix(per_node, n, "w")
        if not (
            np.allclose(ps.sum(axis=0), 1.0, rtol=0.0, atol=1e-12)
            and np.allclose(pw.sum(axis=0), 1.0, rtol=0.0, atol=1e-12)
        ):
            return SuiteResult(
                "column-stochastic", False, f"column sums broken at round {k}"
            )
        if k <= config.big_k:
            if not np.array_equal(pw, np.eye(n)):
                return SuiteResult(
                    "column-stochastic", False, f"w matrix not identity at round {k}"
                )
        else:
            if not np.array_equal(ps, pw):
                return SuiteResult(
                    "column-stochastic", False, f"s and w matrices differ at round {k}"
                )
            support = ps != 0.0
            vals = ps[support]
            if not np.all((vals > eps) & (vals < 1.0)):
                return SuiteResult(
                    "column-stochastic",
                    False,
                    f"mixing-phase weights outside ({eps}, 1) at round {k}",
                )
    return SuiteResult("column-stochastic", True, f"{len(record.weight_log)} rounds checked")


def suite_transition_products(config: ExperimentConfig) -> SuiteResult:
    """Matrix-product oracle agrees with the message-passing trajectory:
    s(K+1) = Phi_s(K:0) s(0), w(k) = Phi_w(k-1:K+1) 1, total mass fixed,
    and every entry of Phi_w over a window of N rounds is >= epsilon^N."""
    big_k = config.big_k
    n = config.graph.n_nodes
    rounds = max(big_k + n + 4, 12)
    cfg = replace(config, mode=MODE_ALGORITHM1, stop_tol=0.0, max_rounds=rounds)
    res = run_experiment(cfg)
    record = res.record
    s = record.trajectory.s_array()
    w = record.trajectory.w_array()

    phi_s = transition_product(record.weight_log, 0, big_k, "s", n)
    lhs = phi_s @ s[0]
    if not np.allclose(lhs, s[big_k + 1], rtol=1e-9, atol=1e-9 * (1 + np.abs(s).max())):
        return SuiteResult("transition-products", False, "s(K+1) mismatch")
    if abs(lhs.sum() - s[0].sum()) > 1e-9 * (1.0 + abs(s[0].sum())):
        return SuiteResult("transition-products", False, "mass not conserved by Phi_s")
    for k in range(big_k + 2, rounds + 1):
        phi_w = transition_product(record.weight_log, big_k + 1, k - 1, "w", n)
        if not np.allclose(phi_w @ np.ones(n), w[k], rtol=1e-12, atol=1e-12):
            return SuiteResult("transition-products", False, f"w({k}) mismatch")
    window = transition_product(
        record.weight_log, big_k + 1, big_k + n, "w", n
    )
    if not np.all(window >= config.epsilon**n):
        return SuiteResult(
            "transition-products", False, "window product entries below epsilon^N"
        )
    return SuiteResult("transition-products", True, f"{rounds} rounds checked")


def suite_witness_replay(config: ExperimentConfig) -> SuiteResult:
    """Alternative initial values replay to identical adversary views."""
    cfg = replace(
        config, mode=MODE_ALGORITHM1, stop_tol=0.0, max_rounds=min(config.max_rounds, 30)
    )
    res = run_experiment(cfg)
    record = res.record
    g = config.graph
    rng = random.Random(derive_seed("verify-witness", config.seed))
    checked = 0
    for _ in range(5):
        target = rng.randrange(g.n_nodes)
        neighbors = sorted(set(g.out_neighbors(target)) | set(g.in_neighbors(target)))
        helper = rng.choice(neighbors)
        alt = record.x0[target] + rng.choice([-17.0, -5.0, 3.0, 13.0])
        if alt == 0.0 or record.x0[target] + record.x0[helper] - alt == 0.0:
            continue
        witness = build_indistinguishability_witness(record, target, alt, helper)
        repl = replay_with_witness(record, witness)
        members = [v for v in g.nodes() if v not in (target, helper)]
        if not observables_match(
            adversary_observables(record, members),
            adversary_observables(repl, members),
        ):
            return SuiteResult(
                "witness-replay",
                False,
                f"view changed for target {target}, helper {helper}, alt {alt}",
            )
        checked += 1
    return SuiteResult("witness-replay", checked > 0, f"{checked} witnesses replayed")


def suite_crypto_roundtrip(config: ExperimentConfig) -> SuiteResult:
    """Key generation, encrypt/decrypt identity, homomorphic addition, the
    small reference key vector, and codec roundtrips."""
    toy = keypair_from_primes(5, 7)
    if (toy.public.n, toy.public.g, toy.lam, toy.mu) != (35, 36, 24, 19):
        return SuiteResult("crypto-roundtrip", False, "reference key vector mismatch")
    rng = random.Random(derive_seed("verify-crypto", config.seed))
    kp = keygen(config.key_bits, rng)
    for _ in range(64):
        m = rng.randrange(kp.public.n)
        if decrypt(kp, encrypt(kp.public, m, rng)) != m:
            return SuiteResult("crypto-roundtrip", False, f"roundtrip failed for {m}")
    for _ in range(32):
        m1 = rng.randrange(kp.public.n)
        m2 = rng.randrange(kp.public.n)
        c = encrypt(kp.public, m1, rng)
        d = encrypt(kp.public, m2, rng)
        if decrypt(kp, add_ciphertexts(kp.public, c, d)) != (m1 + m2) % kp.public.n:
            return SuiteResult("crypto-roundtrip", False, "homomorphic add failed")
    codec = FixedPointCodec(kp.public.n, config.fractional_bits)
    for _ in range(200):
        v = rng.uniform(-1e3, 1e3)
        if abs(codec.decode(codec.encode(v)) - v) > 2.0 ** (-config.fractional_bits - 1) * (
            1.0 + abs(v)
        ):
            return SuiteResult("crypto-roundtrip", False, f"codec roundtrip failed for {v}")
    return SuiteResult("crypto-roundtrip", True, "keygen, roundtrip, homomorphism, codec")


def run_all(
    config: ExperimentConfig, corrupt_weights: bool = False
) -> list[SuiteResult]:
    """Run every invariant suite against one configuration."""
    suites = [
        suite_mass_conservation,
        suite_weight_floor,
        lambda cfg: suite_column_stochastic(cfg, corrupt_weights=corrupt_weights),
        suite_transition_products,
        suite_witness_replay,
        suite_crypto_roundtrip,
    ]
    names = [
        "mass-conservation",
        "weight-floor",
        "column-stochastic",
        "transition-products",
        "witness-replay",
        "crypto-roundtrip",
    ]
    results = []
    for name, fn in zip(names, suites):
        try:
            results.append(fn(config))
        except PrivsumError as exc:
            results.append(SuiteResult(name, False, str(exc)))
    return results
