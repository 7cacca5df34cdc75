"""
Neutron Double-Slit Bit Commitment Simulator - Main Orchestrator
=================================================================
Runs Monte Carlo experiments on the commit/unveil protocol and writes
seed-stamped artifacts under out/<runid>/.

Subcommands:
    honest          honest sessions for one bit; accept rate
    cheat-bitflip   commit one bit, unveil the other (optionally sweep N)
    cheat-delayed   defer measurement to --measure-time
    concealing      distance between Bob's b=0 and b=1 views
    calibrate       honest PatternLikelihood quantile table (cached)
    pattern-export  screen patterns as CSV plus fringe diagnostics
    commit / unveil / verify
                    the three protocol phases as separate invocations

Usage:
    python -m qbcsim.main honest --b 0 --sessions 1000 --N 200
    python -m qbcsim.main calibrate --sessions 10000
    python -m qbcsim.main cheat-bitflip --b 1 --sweep-n 25,50,100,200

Exit codes: 0 success, 2 config error, 3 missing calibration, 4 internal error.
"""

# Load .env before any other imports
from dotenv import load_dotenv
load_dotenv()

import argparse
import os
import sys
import warnings
from dataclasses import dataclass
from typing import List, Optional

from .config import DEFAULT_WORKERS, ProtocolConfig, config_hash, config_keys, load_config
from .errors import FarFieldViolation, InvalidParams, QBCError
from .experiments import (
    CALIBRATION_SESSIONS,
    DEFAULT_SWEEP,
    SessionMetrics,
    bitflip_sweep,
    calibrate,
    concealing_probe,
    ensure_quantiles,
    fit_log2_slope,
    pattern_report,
    run_sessions,
    summarize,
)
from .output import (
    print_concealing_report,
    print_metrics_table,
    print_sweep_table,
    print_verdict,
    progress_printer,
    run_directory,
    save_metrics,
    save_patterns,
    save_verdicts,
    verdicts_of,
)
from .protocol import SealedSlitRecord, alice_commit_honest, alice_unveil_honest, bob_prepare_trials
from .rng import SessionStreams
from .serialization import (
    alice_from_dict,
    alice_to_dict,
    load_quantiles,
    quantile_cache_path,
    read_json,
    save_quantiles,
    sealed_from_dict,
    sealed_to_dict,
    transcript_from_dict,
    transcript_to_dict,
    unveil_from_dict,
    unveil_to_dict,
    verdict_to_dict,
    write_json,
)
from .session import build_strategy, unveiled_bit
from .verifier import verify


SUBCOMMANDS = (
    "honest", "cheat-bitflip", "cheat-delayed", "concealing",
    "calibrate", "pattern-export", "commit", "unveil", "verify",
)

DEFAULT_SESSIONS = {
    "honest": 1000,
    "cheat-bitflip": 1000,
    "cheat-delayed": 1000,
    "concealing": 10000,
    "calibrate": CALIBRATION_SESSIONS,
}


@dataclass
class ExperimentOptions:
    sessions: Optional[int] = None
    n_trials: Optional[int] = None
    b: Optional[int] = None
    strategy: Optional[str] = None
    out_dir: str = "out"
    cache_dir: str = ".qbc_cache"
    workers: int = DEFAULT_WORKERS
    quiet: bool = False
    calibrate_missing: bool = False
    force: bool = False
    measure_time: Optional[float] = None
    announce_fraction: float = 1.0
    sweep_n: Optional[List[int]] = None
    same_seeds: bool = False
    session_id: int = 0


def _log(options: ExperimentOptions, message: str) -> None:
    if not options.quiet:
        print(message)


def _quantiles(config: ProtocolConfig, seed: int, options: ExperimentOptions):
    return ensure_quantiles(
        config,
        options.cache_dir,
        calibrate_missing=options.calibrate_missing,
        seed=seed,
        workers=options.workers,
        progress_callback=progress_printer(options.quiet),
    )


def run_experiment(
    config_file: Optional[str],
    subcommand: str,
    seed: int,
    options: Optional[ExperimentOptions] = None,
) -> Optional[SessionMetrics]:
    """
    Run one subcommand and write its artifacts.

    Args:
        config_file: flat key-value config path, or None for defaults
        subcommand: one of SUBCOMMANDS
        seed: master seed; every output is a function of (config, seed, options)
        options: remaining CLI options

    Returns:
        The run's SessionMetrics (None for the commit/unveil/verify phases)
    """
    options = options or ExperimentOptions()
    if subcommand not in SUBCOMMANDS:
        raise InvalidParams(f"unknown subcommand '{subcommand}'")
    if seed < 0:
        raise InvalidParams("seed must be a non-negative integer")

    config = load_config(config_file, n_trials=options.n_trials)
    sessions = options.sessions or DEFAULT_SESSIONS.get(subcommand, 1)
    progress = progress_printer(options.quiet)

    _log(options, "=" * 100)
    _log(options, "NEUTRON DOUBLE-SLIT BIT COMMITMENT SIMULATOR")
    _log(options, "=" * 100)
    _log(options, f"\nSubcommand: {subcommand}    Seed: {seed}    N: {config.n_trials}")
    t = config.timeline
    _log(options, f"Schedule: t0={t.t0:.6g} s, t1={t.t1:.6g} s, commit_end={t.commit_end:.6g} s, T={t.unveil_time:.6g} s")

    if subcommand in ("commit", "unveil", "verify"):
        _run_phase(subcommand, config, seed, options)
        return None

    if subcommand == "pattern-export":
        return _pattern_export(config, seed, options)
    if subcommand == "calibrate":
        return _calibrate(config, seed, sessions, options)
    if subcommand == "concealing":
        return _concealing(config, seed, sessions, options)

    if subcommand == "honest":
        b = 0 if options.b is None else options.b
        strategy = build_strategy("honest", b)
        runid = f"honest-b{b}-seed{seed}"
    elif subcommand == "cheat-bitflip":
        b = 1 if options.b is None else options.b
        name = options.strategy or "bitflip"
        if name not in ("bitflip", "bitflip-random"):
            raise InvalidParams("cheat-bitflip --strategy must be 'bitflip' or 'bitflip-random'")
        strategy = build_strategy(name, b)
        runid = f"cheat-bitflip-b{b}-seed{seed}"
    else:
        b = 1 if options.b is None else options.b
        measure_time = options.measure_time if options.measure_time is not None else t.commit_end
        strategy = build_strategy("delayed", b, measure_time, options.announce_fraction)
        runid = f"cheat-delayed-b{b}-seed{seed}"

    quantiles = _quantiles(config, seed, options) if unveiled_bit(strategy) == 1 else None

    run_dir = run_directory(options.out_dir, runid)
    _log(options, f"\n-> [STEP 1] Running {sessions} sessions ({runid})...")
    outcomes = run_sessions(config, strategy, seed, sessions, quantiles, options.workers, progress)

    _log(options, "\n-> [STEP 2] Summarizing verdicts...")
    metrics = summarize(subcommand, seed, config, outcomes, cheating=(subcommand != "honest"))

    if subcommand == "cheat-bitflip" and options.sweep_n:
        _log(options, f"\n-> [STEP 3] Sweeping N over {options.sweep_n}...")
        points = bitflip_sweep(
            config, b, options.sweep_n, sessions, seed,
            guess_rule=strategy.guess_rule,
            quantiles_for=lambda cfg: _quantiles(cfg, seed, options),
            workers=options.workers,
            progress_callback=progress,
        )
        slope = fit_log2_slope(points)
        metrics.sweep = [vars(p) for p in points]
        metrics.extra["log2_success_slope"] = slope
        if not options.quiet:
            print_sweep_table(points, slope)

    save_verdicts(run_dir, verdicts_of(outcomes))
    save_metrics(run_dir, metrics)
    if not options.quiet:
        print_metrics_table(metrics, runid)
    _log(options, f"\nArtifacts: {run_dir}")
    return metrics


def _pattern_export(config: ProtocolConfig, seed: int, options: ExperimentOptions) -> SessionMetrics:
    runid = f"pattern-export-seed{seed}"
    run_dir = run_directory(options.out_dir, runid)
    _log(options, "\n-> [STEP 1] Propagating apparatus waves...")
    frames, summary = pattern_report(config)
    paths = save_patterns(run_dir, frames)
    metrics = SessionMetrics("pattern-export", seed, config_hash(config), 0, extra=summary)
    save_metrics(run_dir, metrics)
    _log(options, f"   Wrote {len(paths)} pattern files")
    _log(options, f"   Fringe spacing: {summary['fringe_spacing_m']:.6g} m "
                  f"(lambda L / d = {summary['fringe_spacing_expected_m']:.6g} m)")
    _log(options, f"\nArtifacts: {run_dir}")
    return metrics


def _calibrate(config: ProtocolConfig, seed: int, sessions: int, options: ExperimentOptions) -> SessionMetrics:
    path = quantile_cache_path(options.cache_dir, config)
    table = None if options.force else load_quantiles(config, options.cache_dir)
    if table is not None:
        _log(options, f"[CALIBRATE] Using cached table {path} (pass --force to recompute)")
    else:
        _log(options, f"\n-> [STEP 1] Calibrating PatternLikelihood over {sessions} honest b=1 sessions...")
        table = calibrate(config, seed, sessions, options.workers, progress_printer(options.quiet))
        save_quantiles(table, config, options.cache_dir)
        _log(options, f"[CALIBRATE] Saved {path}")

    level = config.epsilon_v / 2
    metrics = SessionMetrics(
        "calibrate", table.seed, table.config_hash, table.sessions,
        extra={"z_threshold": table.threshold(level), "level": level, "cache_file": str(path)},
    )
    save_metrics(run_directory(options.out_dir, f"calibrate-seed{seed}"), metrics)
    return metrics


def _concealing(config: ProtocolConfig, seed: int, sessions: int, options: ExperimentOptions) -> SessionMetrics:
    runid = f"concealing-seed{seed}"
    _log(options, f"\n-> [STEP 1] Running {sessions} paired honest commit phases...")
    report = concealing_probe(
        config, sessions, seed, same_seeds=options.same_seeds,
        workers=options.workers, progress_callback=progress_printer(options.quiet),
    )
    metrics = SessionMetrics(
        "concealing", seed, config_hash(config), sessions,
        tv_distance_estimate=report.tv_distance_estimate,
        tv_ci=report.ci,
        extra={
            "count_tv_raw": report.count_tv.raw,
            "marginal_tv_raw": report.marginal_tv.raw,
            "identical_transcripts": report.identical_transcripts,
            "schema_divergence": report.schema_divergence,
        },
    ).check()
    if not options.quiet:
        print_concealing_report(report)
        print_metrics_table(metrics, runid)
    save_metrics(run_directory(options.out_dir, runid), metrics)
    return metrics


def _run_phase(phase: str, config: ProtocolConfig, seed: int, options: ExperimentOptions) -> None:
    run_dir = run_directory(options.out_dir, f"session-seed{seed}-id{options.session_id}")

    if phase == "commit":
        b = 0 if options.b is None else options.b
        if options.strategy not in (None, "honest"):
            raise InvalidParams("the commit phase runs honest Alice; use cheat-* subcommands for adversaries")
        streams = SessionStreams(seed, options.session_id)
        setups = bob_prepare_trials(config, streams)
        transcript, state = alice_commit_honest(b, setups, config, streams)
        write_json(run_dir / "transcript.json", transcript_to_dict(transcript))
        write_json(run_dir / "sealed.json", sealed_to_dict(SealedSlitRecord.from_setups(streams.session_id, setups)))
        write_json(run_dir / "alice.json", alice_to_dict(state))
        _log(options, f"   Committed b={b}: {transcript.detected_count}/{transcript.n_trials} detections announced")
    elif phase == "unveil":
        state = alice_from_dict(read_json(run_dir / "alice.json"))
        b = state.b if options.b is None else options.b
        unveil = alice_unveil_honest(b, state)
        write_json(run_dir / "unveil.json", unveil_to_dict(unveil))
        _log(options, f"   Unveiled b={b} with {len(unveil.entries)} entries")
    else:
        transcript = transcript_from_dict(read_json(run_dir / "transcript.json"))
        unveil = unveil_from_dict(read_json(run_dir / "unveil.json"))
        sealed = sealed_from_dict(read_json(run_dir / "sealed.json"))
        quantiles = _quantiles(config, seed, options) if unveil.b == 1 else None
        verdict = verify(transcript, unveil, sealed, config, quantiles)
        write_json(run_dir / "verdict.json", verdict_to_dict(verdict))
        if not options.quiet:
            print_verdict(verdict)
    _log(options, f"\nArtifacts: {run_dir}")


def _parse_sweep(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sweep-n expects comma-separated integers, got '{text}'")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("--sweep-n values must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {name} (default: {default})" for name, default in config_keys().items())
    parser = argparse.ArgumentParser(
        prog="qbcsim",
        description="Neutron double-slit quantum bit commitment simulator",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Config file keys (flat `key = value` lines, `#` comments):\n" + keys +
            "\n\nEnvironment: QBC_CONFIG, QBC_OUT_DIR, QBC_CACHE_DIR, QBC_WORKERS"
            "\nExit codes: 0 success, 2 config error, 3 missing calibration, 4 internal error"
        ),
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=os.getenv("QBC_CONFIG"), help="Flat key-value config file")
    parser.add_argument("--seed", type=int, default=0, help="Master seed (u64)")
    parser.add_argument("--sessions", type=int, default=None, help="Monte Carlo sessions")
    parser.add_argument("--N", dest="n_trials", type=int, default=None, help="Trials per session (overrides config)")
    parser.add_argument("--b", type=int, choices=(0, 1), default=None, help="Committed bit (unveiled bit for cheat-delayed)")
    parser.add_argument("--strategy", default=None, help="honest | bitflip | bitflip-random")
    parser.add_argument("--out", dest="out_dir", default=os.getenv("QBC_OUT_DIR", "out"), help="Output root directory")
    parser.add_argument("--cache-dir", default=os.getenv("QBC_CACHE_DIR", ".qbc_cache"), help="Quantile cache directory")
    parser.add_argument("--workers", type=int, default=DEFAULT_WORKERS, help="Worker threads")
    parser.add_argument("--quiet", action="store_true", help="Suppress progress output")
    parser.add_argument("--calibrate-missing", action="store_true", help="Calibrate instead of failing when no quantile table exists")
    parser.add_argument("--force", action="store_true", help="Recompute the quantile table even if cached")
    parser.add_argument("--measure-time", type=float, default=None, help="cheat-delayed measurement time (s); default commit_end")
    parser.add_argument("--announce-fraction", type=float, default=1.0, help="cheat-delayed fraction of transmitted trials announced")
    parser.add_argument("--sweep-n", type=_parse_sweep, default=None, help=f"cheat-bitflip N sweep, e.g. {','.join(map(str, DEFAULT_SWEEP))}")
    parser.add_argument("--same-seeds", action="store_true", help="concealing: reuse one seed per session for both bits")
    parser.add_argument("--session-id", type=int, default=0, help="commit/unveil/verify session id")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    options = ExperimentOptions(
        sessions=args.sessions,
        n_trials=args.n_trials,
        b=args.b,
        strategy=args.strategy,
        out_dir=args.out_dir,
        cache_dir=args.cache_dir,
        workers=args.workers,
        quiet=args.quiet,
        calibrate_missing=args.calibrate_missing,
        force=args.force,
        measure_time=args.measure_time,
        announce_fraction=args.announce_fraction,
        sweep_n=args.sweep_n,
        same_seeds=args.same_seeds,
        session_id=args.session_id,
    )

    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", FarFieldViolation)
            run_experiment(args.config, args.subcommand, args.seed, options)
        for w in caught:
            if issubclass(w.category, FarFieldViolation):
                print(f"[WARN] {w.message}")
        return 0
    except QBCError as e:
        print(f"[ERROR] {type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        print(f"[ERROR] Internal error: {type(e).__name__}: {e}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
