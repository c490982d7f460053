"""Command-line workflows: train, profile, run, eval, oracle-check.

Exit codes: 0 success, 1 validation problem (bad flags, missing or
malformed inputs), 2 runtime failure (errors raised mid-computation, or a
failed oracle equivalence check).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import (
    ExperimentConfig,
    config_hash,
    default_config,
    load_config,
)
from .ddpg import load_checkpoint, save_checkpoint, train
from .detectors import (
    NominalProfile,
    bocpd_init,
    bocpd_oracle,
    bocpd_posterior_dense,
    bocpd_update,
)
from .errors import ConfigurationError, CorruptCheckpointError, DriftwatchError
from .gnss import make_constellation
from .harness import (
    DETECTOR_ORDER,
    DetectorBank,
    evaluate,
    profile_pipeline,
    run_episode,
    write_episode_csv,
)
from .report import emit_report, write_training_curve_csv
from .spoofing import AttackConfig


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of exiting the process."""

    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="driftwatch",
        description=(
            "Spoofing-detection workbench: train a navigation agent, "
            "profile its value stream, and score detectors on drift attacks."
        ),
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add_command(name: str, summary: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--config", type=Path, default=None,
                       help="experiment config JSON (defaults built in)")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (default: config master_seed)")
        p.add_argument("--out", type=Path, default=Path("results"),
                       help="artifact directory (default: results)")
        return p

    add_command("train", "train the agent; writes checkpoint + training curve")
    p_profile = add_command(
        "profile",
        "fit the nominal profile and freeze detector thresholds "
        "from attack-free runs",
    )
    p_profile.add_argument("--checkpoint", type=Path, default=None,
                           help="agent checkpoint (default: OUT/checkpoint.npz)")
    p_run = add_command("run", "play one fully logged episode")
    p_run.add_argument("--checkpoint", type=Path, default=None,
                       help="agent checkpoint (default: OUT/checkpoint.npz)")
    p_run.add_argument("--attack", action="store_true",
                       help="enable the configured drift attack")
    p_eval = add_command(
        "eval", "run the nominal + attacked comparison and emit the report"
    )
    p_eval.add_argument("--checkpoint", type=Path, default=None,
                        help="agent checkpoint (default: OUT/checkpoint.npz)")
    add_command(
        "oracle-check",
        "verify the changepoint recursion against the direct-summation "
        "oracle on 50 random streams",
    )
    return parser


def _load_cfg(path: Path | None) -> ExperimentConfig:
    if path is None:
        return default_config()
    if not Path(path).exists():
        raise ConfigurationError(f"config file not found: {path}")
    return load_config(path)


def _constellation(cfg: ExperimentConfig):
    return make_constellation(
        cfg.gnss.n_sats,
        cfg.gnss.radius,
        cfg.gnss.constellation_seed,
        cfg.gnss.min_separation_deg,
    )


def _load_agent(checkpoint: Path | None, out: Path):
    path = checkpoint if checkpoint is not None else out / "checkpoint.npz"
    if not Path(path).exists():
        raise ConfigurationError(
            f"checkpoint not found: {path} (run `driftwatch train` first)"
        )
    return load_checkpoint(path)


def _cmd_train(cfg: ExperimentConfig, seed: int, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    constellation = _constellation(cfg)
    agent, history = train(cfg.env, cfg.train, seed, gnss_cfg=cfg.gnss,
                           constellation=constellation)
    ckpt = out / "checkpoint.npz"
    save_checkpoint(agent, ckpt)
    write_training_curve_csv(history, out / "training_curve.csv")
    tail = history[-10:] if len(history) >= 10 else history
    print(f"trained {len(history)} episodes; "
          f"mean return over final {len(tail)}: {np.mean(tail):.3f}")
    print(f"checkpoint: {ckpt}")
    return 0


def _cmd_profile(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    agent = _load_agent(args.checkpoint, out)
    bank, diag = profile_pipeline(
        agent, cfg.env, cfg.detectors, cfg.eval,
        constellation=_constellation(cfg),
        noise_sigma=cfg.gnss.noise_sigma,
        master_seed=seed,
        config_hash=config_hash(cfg),
    )
    bank.save(out)
    print(f"nominal profile: mu0={bank.profile.mu0!r} "
          f"sigma0={bank.profile.sigma0!r} n={bank.profile.n_samples}")
    print(f"frozen run-length threshold: {bank.tau} "
          f"(nominal false-flag episode rate {diag['calibration_fp']!r})")
    print(f"detector bank: {out / 'bank.json'}")
    return 0


def _cmd_run(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    agent = _load_agent(args.checkpoint, out)
    bank = DetectorBank.load(out) if (out / "bank.json").exists() else None
    attack = None
    if args.attack:
        attack = AttackConfig(
            t_start=cfg.eval.attack_t_start,
            drift_duration=cfg.eval.attack_drift_duration,
            target=cfg.eval.attack_target,
            enabled=True,
        )
    log = run_episode(
        agent, cfg.env, attack, bank, seed,
        constellation=_constellation(cfg),
        noise_sigma=cfg.gnss.noise_sigma,
        config_hash=config_hash(cfg),
    )
    out.mkdir(parents=True, exist_ok=True)
    suffix = "_attacked" if args.attack else ""
    path = out / f"episode_{seed}{suffix}.csv"
    write_episode_csv(log, path)
    detectors_note = "" if bank is not None else " (no detector bank attached)"
    print(f"{log.terminal_event} after {log.n_steps} steps{detectors_note}")
    print(f"log: {path}")
    return 0


def _cmd_eval(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    agent = _load_agent(args.checkpoint, out)
    if not (out / "bank.json").exists():
        raise ConfigurationError(
            f"no detector bank in {out} (run `driftwatch profile` first)"
        )
    bank = DetectorBank.load(out)
    digest = config_hash(cfg)
    metrics, logs = evaluate(
        agent, cfg.env, cfg.eval, bank,
        constellation=_constellation(cfg),
        noise_sigma=cfg.gnss.noise_sigma,
        master_seed=seed,
        config_hash=digest,
    )
    paths = emit_report(metrics, logs, out, config_hash=digest,
                        master_seed=seed)
    for name in DETECTOR_ORDER:
        m = metrics.per_detector[name]
        delay = "never" if m.delay_mean is None else f"{m.delay_mean:.1f}"
        print(f"{name:<10} accuracy {m.accuracy_mean:.3f}±{m.accuracy_std:.3f}"
              f"  fpr {m.fpr_mean:.3f}  fnr {m.fnr_episode_mean:.3f}"
              f"  delay {delay}")
    print(f"report: {paths['summary']}")
    return 0


def _cmd_oracle_check(cfg: ExperimentConfig, seed: int) -> int:
    profile = NominalProfile(mu0=0.0, sigma0_sq=1.0, n_samples=1000)
    rng = np.random.default_rng([seed, 0xC0DE])
    worst = 0.0
    for trial in range(50):
        q = rng.normal(size=30)
        if trial % 2 == 0:
            q[15:] -= 8.0
        hazard = cfg.detectors.bocpd_hazard if trial % 3 else 0.05
        expected = bocpd_oracle(q, profile, hazard)
        state = bocpd_init(profile, hazard)
        for x, target in zip(q, expected):
            state, _ = bocpd_update(state, float(x), prune=0.0)
            dense = bocpd_posterior_dense(state)
            worst = max(worst, 0.5 * float(np.abs(dense - target).sum()))
    print(f"max total variation over 50 streams: {worst!r}")
    ok = worst < 1e-9
    print("PASS" if ok else "FAIL")
    return 0 if ok else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg = _load_cfg(args.config)
        seed = args.seed if args.seed is not None else cfg.master_seed
        out = args.out
        if args.command == "train":
            return _cmd_train(cfg, seed, out)
        if args.command == "profile":
            return _cmd_profile(cfg, seed, out, args)
        if args.command == "run":
            return _cmd_run(cfg, seed, out, args)
        if args.command == "eval":
            return _cmd_eval(cfg, seed, out, args)
        return _cmd_oracle_check(cfg, seed)
    except (ConfigurationError, CorruptCheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DriftwatchError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
