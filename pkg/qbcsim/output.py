"""
Output & Formatting Module
==========================
Console tables and the run artifacts under out/<runid>/:
metrics.json, verdicts.jsonl and patterns/*.csv.

Artifacts carry no wall-clock data, so a fixed seed gives identical bytes.
"""

import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import pandas as pd

from .experiments import ConcealingReport, SessionMetrics, SweepPoint
from .serialization import canonical_dumps, fmt, verdict_to_dict, write_json
from .session import SessionOutcome
from .verifier import Verdict


METRICS_SCHEMA = "qbc-metrics/1"
CSV_FLOAT_FORMAT = "%.17g"


def _encode(value: Any) -> Any:
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        return fmt(value)
    if isinstance(value, dict):
        return {str(k): _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    return fmt(float(value))


def metrics_to_dict(metrics: SessionMetrics) -> Dict[str, Any]:
    payload = _encode(asdict(metrics))
    payload["schema"] = METRICS_SCHEMA
    return payload


def run_directory(out_dir: str, runid: str) -> Path:
    path = Path(out_dir) / runid
    path.mkdir(parents=True, exist_ok=True)
    return path


def save_metrics(run_dir: Path, metrics: SessionMetrics) -> Path:
    return write_json(run_dir / "metrics.json", metrics_to_dict(metrics))


def save_verdicts(run_dir: Path, verdicts: Iterable[Verdict]) -> Path:
    path = run_dir / "verdicts.jsonl"
    lines = [canonical_dumps(verdict_to_dict(v)) for v in verdicts]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def save_patterns(run_dir: Path, frames: Dict[str, pd.DataFrame]) -> Dict[str, Path]:
    pattern_dir = run_dir / "patterns"
    pattern_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in sorted(frames):
        path = pattern_dir / f"{name}.csv"
        frames[name].to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        paths[name] = path
    return paths


def progress_printer(quiet: bool = False):
    """progress_callback(completed, total) that rewrites one console line."""
    if quiet:
        return None

    def report(completed: int, total: int) -> None:
        if completed == total or completed % max(1, total // 20) == 0:
            sys.stdout.write(f"\r   Progress: {completed}/{total} sessions")
            if completed == total:
                sys.stdout.write("\n")
            sys.stdout.flush()

    return report


def print_metrics_table(metrics: SessionMetrics, title: str) -> None:
    print("\n" + "=" * 100)
    print(title.upper())
    print("=" * 100)
    print(f"  Seed: {metrics.seed}    Sessions: {metrics.sessions_run}    Config: {metrics.config_hash[:16]}")
    print("-" * 100)
    print(f"{'STRATEGY / BIT':<30}  {'ACCEPT RATE':>12}")
    print("-" * 100)
    for key, rate in metrics.accept_rate.items():
        print(f"{key:<30}  {rate:>12.4f}")
    print("-" * 100)
    if metrics.detected_fraction is not None:
        print(f"  Detected fraction:     {metrics.detected_fraction:.4f}")
    if metrics.cheat_success_rate is not None:
        print(f"  Cheat success rate:    {metrics.cheat_success_rate:.4f}")
    if metrics.tv_distance_estimate is not None:
        low, high = metrics.tv_ci or (float("nan"), float("nan"))
        print(f"  TV distance estimate:  {metrics.tv_distance_estimate:.4f}  (95% CI [{low:.4f}, {high:.4f}])")
    for reason, count in metrics.rejection_reasons.items():
        print(f"  Rejected ({reason}): {count}")
    for key, value in metrics.extra.items():
        shown = f"{value:.6g}" if isinstance(value, float) else value
        print(f"  {key}: {shown}")
    print("=" * 100)


def print_sweep_table(points: Sequence[SweepPoint], slope: Optional[float]) -> None:
    print("\n" + "-" * 100)
    print(f"{'N':>6}  {'SESSIONS':>9}  {'SUCCESS':>10}  {'REJECT':>10}  {'SINGLE-SLIT DET/N':>18}")
    print("-" * 100)
    for p in points:
        print(f"{p.n_trials:>6}  {p.sessions:>9}  {p.success_rate:>10.5f}  {p.rejection_rate:>10.5f}  {p.single_slit_rate:>18.5f}")
    print("-" * 100)
    if slope is None:
        print("  log2(success) slope: n/a (fewer than two N values with any success)")
    else:
        print(f"  log2(success) vs N slope: {slope:.5f}")


def print_concealing_report(report: ConcealingReport) -> None:
    print(f"\n  Count-histogram TV:   raw {report.count_tv.raw:.5f}  debiased {report.count_tv.estimate:.5f}")
    print(f"  Per-trial marginal TV: raw {report.marginal_tv.raw:.5f}  debiased {report.marginal_tv.estimate:.5f}")
    if report.identical_transcripts is not None:
        print(f"  Identical transcripts across b: {report.identical_transcripts}")
    if report.schema_divergence:
        print(f"[WARN] Schema divergence: {report.schema_divergence}")


def print_verdict(verdict: Verdict) -> None:
    status = "ACCEPT" if verdict.accept else f"REJECT ({verdict.rejection_reason.value})"
    print("\n" + "-" * 100)
    print(f"VERDICT: {status}   (session {verdict.session_id}, b={verdict.b})")
    print("-" * 100)
    for t in verdict.tests:
        mark = "skip" if t.skipped else ("pass" if t.passed else "FAIL")
        p = f"p={t.p_value:.4g}" if t.p_value is not None else ""
        print(f"  {t.name.value:<18} {mark:<5} stat={t.statistic:<12.6g} {p:<14} {t.detail}")
    print("-" * 100)


def verdicts_of(outcomes: Sequence[SessionOutcome]):
    return [o.verdict for o in outcomes]
