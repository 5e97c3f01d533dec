"""Command-line entry point.

Subcommands:

* ``simulate`` - run the configured protocol, write the error-series CSV(s)
  and a run manifest.  A config whose ``big_k`` is a list produces one CSV
  per value.
* ``attack`` - run the adversary trials from the config's adversary section
  and write (trial, seed, true_x0, estimate) rows.
* ``node`` - run one networked protocol node to completion.
* ``verify`` - execute the invariant suites; exit code 0 iff all pass.

Configs are YAML files; ``--preset`` loads one of the packaged presets
(fig2, fig3, fig7) instead.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .adversary import (
    attack_colluding_full_neighborhood,
    attack_least_squares,
    attack_pushsum_baseline,
    attack_sole_neighbor,
    export_attack_csv,
)
from .errors import ConfigError, PrivsumError
from .net import MODE_ENCRYPTED, MODE_PLAIN, run_networked
from .sim import (
    ExperimentConfig,
    MODES,
    config_hash,
    run_experiment,
    write_series_csv,
)
from .verify import run_all

PRESETS = ("fig2", "fig3", "fig7")


def load_raw_config(args, apply_mode: bool = True) -> dict:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("exactly one of --config or --preset is required")
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choose from {PRESETS}")
        text = (
            resources.files("privsum").joinpath(f"presets/{args.preset}.yaml").read_text()
        )
        raw = yaml.safe_load(text)
    else:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a YAML mapping")
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if apply_mode and getattr(args, "mode", None) is not None:
        raw["mode"] = args.mode
    return raw


def _expand_big_k(raw: dict) -> list[tuple[str, ExperimentConfig]]:
    """A list-valued big_k fans out into one labelled config per value."""
    ks = raw.get("big_k", 1)
    if not isinstance(ks, (list, tuple)):
        return [("", ExperimentConfig.from_dict(raw))]
    out = []
    for k in ks:
        one = dict(raw)
        one["big_k"] = int(k)
        out.append((f"_K{k}", ExperimentConfig.from_dict(one)))
    return out


def _write_manifest(out_dir: Path, name: str, manifest: dict) -> Path:
    path = out_dir / name
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def cmd_simulate(args) -> int:
    raw = load_raw_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    summaries = []
    for suffix, config in _expand_big_k(raw):
        result = run_experiment(config)
        csv_path = out_dir / f"series{suffix or ''}.csv"
        write_series_csv(csv_path, result.metrics)
        outputs.append(str(csv_path))
        summary = {
            "big_k": config.big_k,
            "rounds_run": result.record.n_rounds,
            "alpha": result.metrics.alpha,
            "final_e": float(result.metrics.e[-1]),
            "final_pi": [float(v) for v in result.metrics.pi[-1]],
        }
        if result.mean_encrypt_seconds is not None:
            summary["mean_encrypt_ms"] = result.mean_encrypt_seconds * 1e3
        summaries.append(summary)
        print(
            f"simulate big_k={config.big_k}: rounds={summary['rounds_run']} "
            f"final_e={summary['final_e']:.3e} -> {csv_path}"
        )
    manifest = {
        "command": "simulate",
        "config_hash": config_hash(_expand_big_k(raw)[0][1]),
        "seed": raw.get("seed"),
        "mode": raw.get("mode"),
        "outputs": outputs,
        "runs": summaries,
    }
    path = _write_manifest(out_dir, "manifest.json", manifest)
    print(f"manifest -> {path}")
    return 0


ATTACKS = ("least_squares", "sole_neighbor", "full_neighborhood", "baseline_leak")


def _run_attack(result, spec, m_rounds: int) -> float:
    view = result.adversary_view
    if spec.attack == "least_squares":
        return attack_least_squares(view, spec.target, m_rounds)
    if spec.attack == "sole_neighbor":
        return attack_sole_neighbor(view, spec.target)
    if spec.attack == "full_neighborhood":
        return attack_colluding_full_neighborhood(view, spec.target)
    if spec.attack == "baseline_leak":
        return attack_pushsum_baseline(view)[spec.target]
    raise ConfigError(f"unknown attack {spec.attack!r}; choose from {ATTACKS}")


def cmd_attack(args) -> int:
    raw = load_raw_config(args)
    config = ExperimentConfig.from_dict(raw)
    if config.adversary is None:
        raise ConfigError("attack command needs an adversary section in the config")
    spec = config.adversary
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    m_rounds = config.max_rounds - 1  # equations consume shares up to round m
    rows = []
    targets = spec.target_x0 or (None,)
    trial_no = 0
    for true_x0 in targets:
        for t in range(spec.trials):
            seed = config.seed + t
            cfg = replace(config, seed=seed)
            result = run_experiment(cfg, target_override=true_x0)
            estimate = _run_attack(result, spec, m_rounds)
            rows.append(
                {
                    "trial": trial_no,
                    "seed": seed,
                    "true_x0": result.x0[spec.target],
                    "estimate": estimate,
                }
            )
            trial_no += 1
    csv_path = out_dir / "attack.csv"
    export_attack_csv(csv_path, rows)
    estimates = np.array([r["estimate"] for r in rows])
    manifest = {
        "command": "attack",
        "config_hash": config_hash(config),
        "seed": config.seed,
        "mode": config.mode,
        "outputs": [str(csv_path)],
        "trials": len(rows),
        "estimate_mean": float(estimates.mean()),
        "estimate_std": float(estimates.std(ddof=1)) if len(rows) > 1 else 0.0,
        "estimate_min": float(estimates.min()),
        "estimate_max": float(estimates.max()),
    }
    path = _write_manifest(out_dir, "attack_manifest.json", manifest)
    print(
        f"attack: {len(rows)} trials, estimate std={manifest['estimate_std']:.3f} "
        f"-> {csv_path}\nmanifest -> {path}"
    )
    return 0


def cmd_node(args) -> int:
    # --mode here selects the share transport, not the simulation mode.
    raw = load_raw_config(args, apply_mode=False)
    raw["mode"] = "algorithm1"
    config = ExperimentConfig.from_dict(raw)
    with open(args.peers) as fh:
        peer_raw = json.load(fh)
    peers = {}
    for key, addr in peer_raw.items():
        host, port = addr.rsplit(":", 1)
        peers[int(key)] = (host, int(port))
    host, port = args.listen.rsplit(":", 1)
    mode = MODE_ENCRYPTED if args.mode == "encrypted" else MODE_PLAIN
    out_dir = Path(args.out_dir)
    state, manifest = run_networked(
        args.node_id,
        (host, int(port)),
        peers,
        config,
        mode=mode,
        out_dir=out_dir,
    )
    print(
        f"node {args.node_id}: final pi={state.pi!r}"
        + (
            f", mean encrypt {manifest['mean_encrypt_ms']:.2f} ms"
            if manifest["mean_encrypt_ms"] is not None
            else ""
        )
    )
    return 0


def cmd_verify(args) -> int:
    raw = load_raw_config(args)
    config = ExperimentConfig.from_dict(raw)
    results = run_all(config)
    failed = 0
    for res in results:
        tag = "PASS" if res.passed else "FAIL"
        print(f"{tag} {res.name}: {res.detail}")
        failed += 0 if res.passed else 1
    if failed:
        print(f"{failed} suite(s) failed")
        return 1
    print("all suites passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privsum",
        description="Privacy-preserving average consensus on directed graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_mode=True):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--preset", help=f"packaged preset: {', '.join(PRESETS)}")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", default=".", help="directory for outputs")
        if with_mode:
            p.add_argument("--mode", choices=MODES, default=None, help="override the mode")

    p_sim = sub.add_parser("simulate", help="run the protocol in-process")
    add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_att = sub.add_parser("attack", help="run adversary trials from the config")
    add_common(p_att)
    p_att.set_defaults(func=cmd_attack)

    p_node = sub.add_parser("node", help="run one networked protocol node")
    p_node.add_argument("--node-id", type=int, required=True)
    p_node.add_argument("--listen", required=True, help="host:port to bind")
    p_node.add_argument("--peers", required=True, help="JSON file: node id -> host:port")
    p_node.add_argument("--config", help="YAML config file")
    p_node.add_argument("--preset", help=f"packaged preset: {', '.join(PRESETS)}")
    p_node.add_argument("--seed", type=int, default=None)
    p_node.add_argument("--out-dir", default=".")
    p_node.add_argument(
        "--mode", choices=["plain", "encrypted"], default="plain",
        help="share transport",
    )
    p_node.set_defaults(func=cmd_node)

    p_ver = sub.add_parser("verify", help="run the invariant suites")
    add_common(p_ver, with_mode=False)
    p_ver.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PrivsumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
