"""Deterministic in-process experiment harness.

Wires graph + weights + consensus (and optionally the Paillier layer)
together from a declarative config, records full traces, computes the
error series against the true average, and exposes the transition-matrix
product oracle that the invariant suites check the message-passing engine
against.
"""
from __future__ import annotations

import csv
import hashlib
import json
import random
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import yaml

from .adversary import (
    AdversaryView,
    EavesdropperLog,
    build_adversary_view,
    build_eavesdropper_log,
)
from .consensus import (
    Channel,
    RunRecord,
    ShareMessage,
    Trajectory,
    algorithm1_weight_source,
    run_algorithm0,
    run_rounds,
)
from .errors import ConfigError, RangeUncovered
from .graph import DirectedGraph, is_strongly_connected, max_out_degree
from .paillier import (
    Ciphertext,
    FixedPointCodec,
    PaillierKeypair,
    decrypt,
    encrypt,
    keygen,
)
from .weights import RoundWeights, WeightParams, derive_seed

MODE_ALGORITHM0 = "algorithm0"
MODE_ALGORITHM1 = "algorithm1"
MODE_ALGORITHM2 = "algorithm2-simulated"
MODES = (MODE_ALGORITHM0, MODE_ALGORITHM1, MODE_ALGORITHM2)

DEFAULT_FRACTIONAL_BITS = 48


@dataclass(frozen=True)
class AdversarySpec:
    """Which nodes collude, whom they attack, and how."""

    members: tuple[int, ...]
    target: int
    attack: str = "least_squares"
    trials: int = 1
    target_x0: tuple[float, ...] = ()


@dataclass
class ExperimentConfig:
    """Declarative description of one run.

    ``x0`` is either an explicit per-node list or ``{"low": a, "high": b}``,
    in which case initial values are drawn uniformly per seed.
    """

    graph: DirectedGraph
    x0: object
    big_k: int = 1
    epsilon: float = 0.01
    phase_a_range: float = 10.0
    max_rounds: int = 100
    stop_tol: float = 1e-12
    seed: int = 1
    mode: str = MODE_ALGORITHM1
    adversary: AdversarySpec | None = None
    key_bits: int = 256
    fractional_bits: int = DEFAULT_FRACTIONAL_BITS

    @property
    def params(self) -> WeightParams:
        return WeightParams(
            big_k=self.big_k,
            epsilon=self.epsilon,
            phase_a_range=self.phase_a_range,
        )

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not is_strongly_connected(self.graph):
            raise ConfigError("graph must be strongly connected")
        bound = 1.0 / (max_out_degree(self.graph) + 1)
        if not 0.0 < self.epsilon < bound:
            raise ConfigError(
                f"epsilon={self.epsilon} must lie in (0, {bound}) "
                f"(1 / (max out-degree + 1)) for this graph"
            )
        if self.max_rounds < self.big_k + 2:
            raise ConfigError(
                f"max_rounds={self.max_rounds} must be at least K+2={self.big_k + 2}"
            )
        self.params  # triggers WeightParams validation
        if isinstance(self.x0, dict):
            if set(self.x0) != {"low", "high"} or not self.x0["low"] < self.x0["high"]:
                raise ConfigError("x0 range must be {'low': a, 'high': b} with a < b")
        elif len(list(self.x0)) != self.graph.n_nodes:
            raise ConfigError(
                f"x0 has {len(list(self.x0))} entries for {self.graph.n_nodes} nodes"
            )
        if self.adversary is not None:
            members = set(self.adversary.members)
            nodes = set(self.graph.nodes())
            if not members <= nodes or self.adversary.target not in nodes:
                raise ConfigError("adversary spec references nodes outside the graph")
            if self.adversary.target in members:
                raise ConfigError("adversary target cannot be a member")

    def to_dict(self) -> dict:
        d: dict = {
            "graph": {"n_nodes": self.graph.n_nodes, "edges": self.graph.edge_list()},
            "x0": self.x0 if isinstance(self.x0, dict) else [float(v) for v in self.x0],
            "big_k": self.big_k,
            "epsilon": self.epsilon,
            "phase_a_range": self.phase_a_range,
            "max_rounds": self.max_rounds,
            "stop_tol": self.stop_tol,
            "seed": self.seed,
            "mode": self.mode,
            "key_bits": self.key_bits,
            "fractional_bits": self.fractional_bits,
        }
        if self.adversary is not None:
            d["adversary"] = {
                "members": list(self.adversary.members),
                "target": self.adversary.target,
                "attack": self.adversary.attack,
                "trials": self.adversary.trials,
                "target_x0": list(self.adversary.target_x0),
            }
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            graph = DirectedGraph.from_edge_list(
                int(raw["graph"]["n_nodes"]), raw["graph"]["edges"]
            )
        except KeyError as exc:
            raise ConfigError(f"config graph section is missing key {exc}") from exc
        adversary = None
        if raw.get("adversary"):
            a = raw["adversary"]
            adversary = AdversarySpec(
                members=tuple(int(m) for m in a["members"]),
                target=int(a["target"]),
                attack=a.get("attack", "least_squares"),
                trials=int(a.get("trials", 1)),
                target_x0=tuple(float(v) for v in a.get("target_x0", ())),
            )
        cfg = cls(
            graph=graph,
            x0=raw["x0"],
            big_k=int(raw.get("big_k", 1)),
            epsilon=float(raw.get("epsilon", 0.01)),
            phase_a_range=float(raw.get("phase_a_range", 10.0)),
            max_rounds=int(raw.get("max_rounds", 100)),
            stop_tol=float(raw.get("stop_tol", 1e-12)),
            seed=int(raw.get("seed", 1)),
            mode=raw.get("mode", MODE_ALGORITHM1),
            adversary=adversary,
            key_bits=int(raw.get("key_bits", 256)),
            fractional_bits=int(raw.get("fractional_bits", DEFAULT_FRACTIONAL_BITS)),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} does not contain a mapping")
        return cls.from_dict(raw)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def resolve_x0(config: ExperimentConfig, target_override: float | None = None) -> list[float]:
    """Materialize the initial-value vector for this seed."""
    if isinstance(config.x0, dict):
        rng = np.random.default_rng(derive_seed("x0", config.seed))
        vals = rng.uniform(
            config.x0["low"], config.x0["high"], size=config.graph.n_nodes
        ).tolist()
    else:
        vals = [float(v) for v in config.x0]
    if target_override is not None:
        if config.adversary is None:
            raise ConfigError("target override requires an adversary spec")
        vals[config.adversary.target] = float(target_override)
    return vals


@dataclass
class MetricsSeries:
    """Per-round distance of the estimate vector from the true average."""

    e: np.ndarray
    pi: np.ndarray
    alpha: float


def error_series(trajectory: Trajectory, x0: Sequence[float]) -> MetricsSeries:
    alpha = float(np.mean(np.asarray(x0, dtype=float)))
    pi = trajectory.pi_array()
    e = np.linalg.norm(pi - alpha, axis=1)
    return MetricsSeries(e=e, pi=pi, alpha=alpha)


@dataclass(frozen=True)
class CipherShareMessage:
    """An encrypted share pair as it travels on a link."""

    sender: int
    receiver: int
    round: int
    s_cipher: Ciphertext
    w_cipher: Ciphertext


class PaillierChannel:
    """Encrypts each share under the receiver's public key in transit.

    Both runs of the protocol (simulated here, networked in ``net``) encode
    reals through the receiver's fixed-point codec first.  Per-encryption
    wall-clock latencies are collected in ``encrypt_seconds``.
    """

    def __init__(
        self,
        keypairs: dict[int, PaillierKeypair],
        fractional_bits: int,
        seed: int,
    ) -> None:
        self.keypairs = keypairs
        self.codecs = {
            i: FixedPointCodec(kp.public.n, fractional_bits)
            for i, kp in keypairs.items()
        }
        self._rngs = {
            i: random.Random(derive_seed("encrypt", seed, i)) for i in keypairs
        }
        self.encrypt_seconds: list[float] = []

    def _encrypt(self, sender: int, receiver: int, value: float) -> Ciphertext:
        pub = self.keypairs[receiver].public
        plain = self.codecs[receiver].encode(value)
        start = time.perf_counter()
        cipher = encrypt(pub, plain, self._rngs[sender])
        self.encrypt_seconds.append(time.perf_counter() - start)
        return cipher

    def transmit(self, msg: ShareMessage) -> CipherShareMessage:
        return CipherShareMessage(
            sender=msg.sender,
            receiver=msg.receiver,
            round=msg.round,
            s_cipher=self._encrypt(msg.sender, msg.receiver, msg.s_share),
            w_cipher=self._encrypt(msg.sender, msg.receiver, msg.w_share),
        )

    def receive(self, wire: CipherShareMessage) -> ShareMessage:
        kp = self.keypairs[wire.receiver]
        codec = self.codecs[wire.receiver]
        return ShareMessage(
            sender=wire.sender,
            receiver=wire.receiver,
            round=wire.round,
            s_share=codec.decode(decrypt(kp, wire.s_cipher)),
            w_share=codec.decode(decrypt(kp, wire.w_cipher)),
        )


def node_keypairs(
    graph: DirectedGraph, key_bits: int, seed: int
) -> dict[int, PaillierKeypair]:
    """Per-node keypairs, deterministically derived from the run seed so the
    simulator and the networked runtime agree."""
    return {
        i: keygen(key_bits, random.Random(derive_seed("keygen", seed, i)))
        for i in graph.nodes()
    }


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    x0: list[float]
    record: RunRecord
    metrics: MetricsSeries
    adversary_view: AdversaryView | None
    eavesdropper_log: EavesdropperLog
    mean_encrypt_seconds: float | None = None


def run_experiment(
    config: ExperimentConfig, target_override: float | None = None
) -> ExperimentResult:
    """Full synchronous execution of the configured protocol.

    Deterministic per seed; the adversary view is populated when the config
    carries an adversary spec, and the eavesdropper log always is.
    """
    config.validate()
    x0 = resolve_x0(config, target_override)
    mean_encrypt = None
    if config.mode == MODE_ALGORITHM0:
        record = run_algorithm0(
            config.graph, x0, rounds=config.max_rounds, stop_tol=config.stop_tol
        )
    else:
        channel: Channel | None = None
        if config.mode == MODE_ALGORITHM2:
            channel = PaillierChannel(
                node_keypairs(config.graph, config.key_bits, config.seed),
                config.fractional_bits,
                config.seed,
            )
        source = algorithm1_weight_source(config.graph, config.params, config.seed)
        record = run_rounds(
            config.graph,
            x0,
            rounds=config.max_rounds,
            weight_source=source,
            params=config.params,
            mode=config.mode,
            channel=channel,
            stop_tol=config.stop_tol,
        )
        if channel is not None and channel.encrypt_seconds:
            mean_encrypt = float(np.mean(channel.encrypt_seconds))
    metrics = error_series(record.trajectory, x0)
    view = None
    if config.adversary is not None:
        view = build_adversary_view(record, config.adversary.members)
    return ExperimentResult(
        config=config,
        x0=x0,
        record=record,
        metrics=metrics,
        adversary_view=view,
        eavesdropper_log=build_eavesdropper_log(record),
        mean_encrypt_seconds=mean_encrypt,
    )


def assemble_weight_matrix(
    per_node: dict[int, RoundWeights], n_nodes: int, which: str = "s"
) -> np.ndarray:
    """N x N coupling matrix for one round: column j holds node j's weights,
    zero where no edge."""
    if which not in ("s", "w"):
        raise ConfigError(f"which must be 's' or 'w', not {which!r}")
    p = np.zeros((n_nodes, n_nodes))
    for j, rw in per_node.items():
        weights = rw.s_weights if which == "s" else rw.w_weights
        for i, v in weights.items():
            p[i, j] = v
    return p


def transition_product(
    weight_log: list[dict[int, RoundWeights]],
    from_round: int,
    to_round: int,
    which: str = "s",
    n_nodes: int | None = None,
) -> np.ndarray:
    """Product P(k) ... P(t) of per-round coupling matrices over rounds
    t..k inclusive.  This is the matrix-side oracle for the message-passing
    engine; the protocol data path never materializes it."""
    if from_round > to_round:
        raise RangeUncovered(f"from_round {from_round} exceeds to_round {to_round}")
    if from_round < 0 or to_round >= len(weight_log):
        raise RangeUncovered(
            f"rounds [{from_round}, {to_round}] not covered by a weight log "
            f"of length {len(weight_log)}"
        )
    if n_nodes is None:
        n_nodes = 1 + max(
            max(i for i in rw.s_weights) for rw in weight_log[from_round].values()
        )
    product = assemble_weight_matrix(weight_log[from_round], n_nodes, which)
    for k in range(from_round + 1, to_round + 1):
        product = assemble_weight_matrix(weight_log[k], n_nodes, which) @ product
    return product


def fitted_contraction(e: np.ndarray, start: int | None = None, floor: float = 1e-14) -> float:
    """Empirical late-stage per-round contraction factor of an error series.

    Log-linear least-squares fit over the decaying part of the tail (second
    half by default).  Once a run converges, the series flattens out on a
    round-off noise floor; those samples say nothing about the contraction,
    so everything within 50x of the tail minimum is excluded.  Returns 0.0
    when the tail sits entirely on the floor (contraction unmeasurably
    fast).
    """
    e = np.asarray(e, dtype=float)
    if start is None:
        start = len(e) // 2
    tail = e[start:]
    rounds = np.arange(start, len(e))
    positive = tail[tail > 0.0]
    if positive.size == 0:
        return 0.0
    cutoff = max(floor, 50.0 * float(positive.min()))
    mask = tail > cutoff
    if mask.sum() < 2:
        return 0.0
    slope = np.polyfit(rounds[mask], np.log(tail[mask]), 1)[0]
    return float(np.exp(slope))


def theoretical_rate(n_nodes: int, epsilon: float) -> float:
    """Guaranteed worst-case per-round contraction factor of the two-phase
    protocol on a strongly connected graph of n nodes."""
    return (1.0 - epsilon ** (n_nodes - 1)) ** (1.0 / (n_nodes - 1))


def write_series_csv(path, metrics: MetricsSeries) -> None:
    """CSV with columns round, e, pi_0..pi_{N-1}; byte-stable per config."""
    n = metrics.pi.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "e"] + [f"pi_{i}" for i in range(n)])
        for k in range(metrics.pi.shape[0]):
            writer.writerow(
                [k, repr(float(metrics.e[k]))]
                + [repr(float(v)) for v in metrics.pi[k]]
            )
