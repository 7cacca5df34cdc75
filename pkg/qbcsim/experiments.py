"""
Experiment Harness
==================
Monte Carlo drivers behind the CLI subcommands: batches of seeded
sessions, honest-quantile calibration, the concealing probe, the
bit-flip N sweep and pattern export.

Sessions run on a thread pool; every session owns its seed substreams,
so results are re-sorted by session id and never depend on scheduling.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .apparatus import build_apparatus
from .config import DEFAULT_WORKERS, ProtocolConfig, config_hash
from .errors import InvalidParams, InvariantViolation, UncalibratedQuantiles
from .protocol import SealedSlitRecord, alice_commit_honest, alice_unveil_honest, bob_prepare_trials
from .rng import SessionStreams
from .serialization import load_quantiles, save_quantiles, transcript_to_dict
from .session import SessionOutcome, Strategy, build_strategy, run_session
from .stats import TVEstimate, count_histogram_tv, debiased_tv, fringe_contrast, marginal_tv
from .verifier import QuantileTable, pattern_z_score
from .wavepacket import Slit, SlitChoice, analytic_fraunhofer, fringe_spacing


ProgressCallback = Optional[Callable[[int, int], None]]

CALIBRATION_SESSIONS = 10000
MIN_CONCEALING_SESSIONS = 100
DEFAULT_SWEEP = (25, 50, 100, 200)
FRINGE_WINDOW_LOBES = 0.6   # fringe-analysis half-window in units of lambda L / a


def derive_seed(seed: int, *purpose: int) -> int:
    """Independent 63-bit seed for a sub-experiment."""
    state = np.random.SeedSequence(entropy=seed, spawn_key=purpose).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def _run_pool(task: Callable[[int], Any], count: int, workers: int, progress_callback: ProgressCallback) -> List[Any]:
    results: Dict[int, Any] = {}
    completed = 0
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        future_to_index = {executor.submit(task, i): i for i in range(count)}
        for future in as_completed(future_to_index):
            results[future_to_index[future]] = future.result()
            completed += 1
            if progress_callback:
                progress_callback(completed, count)
    return [results[i] for i in range(count)]


def run_sessions(
    config: ProtocolConfig,
    strategy: Strategy,
    seed: int,
    sessions: int,
    quantiles: Optional[QuantileTable] = None,
    workers: int = DEFAULT_WORKERS,
    progress_callback: ProgressCallback = None,
) -> List[SessionOutcome]:
    """
    Run `sessions` independent sessions of one strategy.

    Args:
        progress_callback: Optional callback(completed, total) for progress tracking

    Returns:
        Outcomes ordered by session id
    """
    if sessions < 1:
        raise InvalidParams("sessions must be >= 1")
    build_apparatus(config)

    def task(i: int) -> SessionOutcome:
        return run_session(config, strategy, SessionStreams(seed, i), quantiles)

    return _run_pool(task, sessions, workers, progress_callback)


# ---- metrics ---------------------------------------------------------------

@dataclass
class SessionMetrics:
    subcommand: str
    seed: int
    config_hash: str
    sessions_run: int
    accept_rate: Dict[str, float] = field(default_factory=dict)
    cheat_success_rate: Optional[float] = None
    detected_fraction: Optional[float] = None
    tv_distance_estimate: Optional[float] = None
    tv_ci: Optional[Tuple[float, float]] = None
    rejection_reasons: Dict[str, int] = field(default_factory=dict)
    sweep: List[Dict[str, float]] = field(default_factory=list)
    extra: Dict[str, Any] = field(default_factory=dict)

    def check(self) -> "SessionMetrics":
        rates = list(self.accept_rate.values()) + [
            r for r in (self.cheat_success_rate, self.detected_fraction) if r is not None
        ]
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise InvariantViolation(f"rate outside [0, 1] in metrics: {rates}")
        if self.tv_distance_estimate is not None and self.tv_distance_estimate < 0:
            raise InvariantViolation("tv_distance_estimate must be >= 0")
        return self


def sessions_frame(outcomes: Sequence[SessionOutcome]) -> pd.DataFrame:
    """One row per session: counts, verdict and adversary metrics."""
    rows = []
    for o in outcomes:
        s = o.stats
        row = {
            "session_id": s.session_id,
            "strategy": s.strategy,
            "committed_b": s.committed_b,
            "unveiled_b": s.unveiled_b,
            "n_trials": s.n_trials,
            "detected": s.detected,
            "single_slit_detected": s.single_slit_detected,
            "supported": s.supported,
            "accept": s.accept,
            "rejection_reason": s.rejection_reason,
        }
        row.update({f"extra_{k}": v for k, v in s.extra.items()})
        rows.append(row)
    return pd.DataFrame(rows).sort_values("session_id").reset_index(drop=True)


def summarize(
    subcommand: str,
    seed: int,
    config: ProtocolConfig,
    outcomes: Sequence[SessionOutcome],
    cheating: bool = False,
) -> SessionMetrics:
    df = sessions_frame(outcomes)
    accept_rate = {
        f"{strategy}/b={int(b)}": float(group["accept"].mean())
        for (strategy, b), group in df.groupby(["strategy", "unveiled_b"], sort=True)
    }
    reasons = df["rejection_reason"].dropna().value_counts().sort_index()
    extra = {
        col[len("extra_"):]: float(df[col].mean())
        for col in sorted(df.columns) if col.startswith("extra_")
    }
    return SessionMetrics(
        subcommand=subcommand,
        seed=seed,
        config_hash=config_hash(config),
        sessions_run=len(df),
        accept_rate=accept_rate,
        cheat_success_rate=float(df["accept"].mean()) if cheating else None,
        detected_fraction=float((df["detected"] / df["n_trials"]).mean()),
        rejection_reasons={str(k): int(v) for k, v in reasons.items()},
        extra=extra,
    ).check()


# ---- calibration -------------------------------------------------------------

def calibrate(
    config: ProtocolConfig,
    seed: int,
    sessions: int = CALIBRATION_SESSIONS,
    workers: int = DEFAULT_WORKERS,
    progress_callback: ProgressCallback = None,
) -> QuantileTable:
    """
    Monte Carlo the PatternLikelihood Z statistic under honest b=1 play.

    Calibration sessions use a seed derived from `seed`, so they never
    coincide with the sessions later checked against the table.
    """
    apparatus = build_apparatus(config)
    calibration_seed = derive_seed(seed, 1)

    def task(i: int) -> float:
        streams = SessionStreams(calibration_seed, i)
        setups = bob_prepare_trials(config, streams)
        sealed = SealedSlitRecord.from_setups(i, setups)
        _, state = alice_commit_honest(1, setups, config, streams)
        unveil = alice_unveil_honest(1, state)
        z, _ = pattern_z_score(list(unveil.entries), sealed, apparatus)
        return z

    samples = _run_pool(task, sessions, workers, progress_callback)
    return QuantileTable(config_hash(config), seed, sessions, np.array(samples))


def ensure_quantiles(
    config: ProtocolConfig,
    cache_dir: Union[str, Path],
    calibrate_missing: bool = False,
    seed: int = 0,
    sessions: int = CALIBRATION_SESSIONS,
    workers: int = DEFAULT_WORKERS,
    progress_callback: ProgressCallback = None,
) -> QuantileTable:
    """Cached quantile table, calibrating on the spot if allowed."""
    table = load_quantiles(config, cache_dir)
    if table is not None:
        return table
    if not calibrate_missing:
        raise UncalibratedQuantiles(
            f"no quantile table for config {config_hash(config)[:16]} in {cache_dir}; "
            f"run `calibrate` or pass --calibrate-missing"
        )
    table = calibrate(config, seed, sessions, workers, progress_callback)
    save_quantiles(table, config, cache_dir)
    return table


# ---- concealing --------------------------------------------------------------

@dataclass
class ConcealingReport:
    sessions: int
    count_tv: TVEstimate
    marginal_tv: TVEstimate
    identical_transcripts: Optional[bool]
    schema_divergence: Optional[str]

    @property
    def tv_distance_estimate(self) -> float:
        return max(self.count_tv.estimate, self.marginal_tv.estimate)

    @property
    def ci(self) -> Tuple[float, float]:
        worst = self.count_tv if self.count_tv.estimate >= self.marginal_tv.estimate else self.marginal_tv
        return worst.ci_low, worst.ci_high


def _transcript_shape(payload: Dict[str, Any]) -> Tuple:
    """Key structure plus the announcement time stamps: what must not depend on b."""
    keys = tuple(sorted(payload))
    item_keys = tuple(sorted({tuple(sorted(a)) for a in payload["announcements"]}))
    stamps = tuple(sorted({a["time"] for a in payload["announcements"]}))
    return keys, item_keys, stamps, payload["schema"]


def concealing_probe(
    config: ProtocolConfig,
    sessions: int,
    seed: int,
    same_seeds: bool = False,
    workers: int = DEFAULT_WORKERS,
    progress_callback: ProgressCallback = None,
) -> ConcealingReport:
    """
    Estimate how far Bob's pre-unveil view for b=0 is from that for b=1.

    Runs `sessions` honest commit phases per bit and compares the
    detection-count histograms and the per-trial detection frequencies.
    With same_seeds, both bits reuse one seed per session and the
    transcripts are also compared byte for byte.
    """
    if sessions < MIN_CONCEALING_SESSIONS:
        raise InvalidParams(f"concealing probe needs >= {MIN_CONCEALING_SESSIONS} sessions")
    config.check_timing_guard()
    build_apparatus(config)
    seeds = (seed, seed) if same_seeds else (derive_seed(seed, 2, 0), derive_seed(seed, 2, 1))

    def task(i: int):
        views = []
        for b in (0, 1):
            streams = SessionStreams(seeds[b], i)
            setups = bob_prepare_trials(config, streams)
            transcript, _ = alice_commit_honest(b, setups, config, streams)
            views.append(transcript_to_dict(transcript))
        return views

    pairs = _run_pool(task, sessions, workers, progress_callback)

    detections = [
        np.array([[a["detected"] for a in pair[b]["announcements"]] for pair in pairs], dtype=bool)
        for b in (0, 1)
    ]
    counts = [d.sum(axis=1) for d in detections]

    shapes = [{_transcript_shape(pair[b]) for pair in pairs} for b in (0, 1)]
    divergence = None
    if shapes[0] != shapes[1]:
        divergence = "transcript structure or announcement time stamps differ between b=0 and b=1"

    identical = None
    if same_seeds:
        identical = all(p[0] == p[1] for p in pairs)

    rng = SessionStreams(seed).session("harness")
    return ConcealingReport(
        sessions=sessions,
        count_tv=debiased_tv(count_histogram_tv, counts[0], counts[1], rng),
        marginal_tv=debiased_tv(marginal_tv, detections[0], detections[1], rng),
        identical_transcripts=identical,
        schema_divergence=divergence,
    )


# ---- bit-flip sweep ----------------------------------------------------------

@dataclass
class SweepPoint:
    n_trials: int
    sessions: int
    success_rate: float
    rejection_rate: float
    single_slit_rate: float


def fit_log2_slope(points: Sequence[SweepPoint]) -> Optional[float]:
    """Slope of log2(success rate) against N over points with any success."""
    usable = [p for p in points if p.success_rate > 0]
    if len(usable) < 2:
        return None
    slope, _ = np.polyfit([p.n_trials for p in usable], np.log2([p.success_rate for p in usable]), 1)
    return float(slope)


def bitflip_sweep(
    config: ProtocolConfig,
    committed_b: int,
    n_values: Sequence[int],
    sessions: int,
    seed: int,
    guess_rule: str = "likelihood",
    quantiles_for: Optional[Callable[[ProtocolConfig], QuantileTable]] = None,
    workers: int = DEFAULT_WORKERS,
    progress_callback: ProgressCallback = None,
) -> List[SweepPoint]:
    """
    Bit-flip success rate per N.

    quantiles_for supplies the honest table for each N when the flip
    unveils b=1.
    """
    name = "bitflip" if guess_rule == "likelihood" else "bitflip-random"
    strategy = build_strategy(name, committed_b)
    points = []
    for n in n_values:
        cfg = config.with_overrides(n_trials=int(n))
        quantiles = quantiles_for(cfg) if (quantiles_for and strategy.unveiled_b == 1) else None
        outcomes = run_sessions(cfg, strategy, derive_seed(seed, 3, int(n)), sessions, quantiles, workers, progress_callback)
        df = sessions_frame(outcomes)
        success = float(df["accept"].mean())
        points.append(SweepPoint(
            n_trials=int(n),
            sessions=sessions,
            success_rate=success,
            rejection_rate=1.0 - success,
            single_slit_rate=float((df["single_slit_detected"] / df["n_trials"]).mean()),
        ))
    return points


# ---- patterns ----------------------------------------------------------------

def fringe_window(config: ProtocolConfig) -> Tuple[float, float]:
    half = FRINGE_WINDOW_LOBES * config.wavelength * config.screen_distance / config.slit_width
    return -half, half


def pattern_report(config: ProtocolConfig) -> Tuple[Dict[str, pd.DataFrame], Dict[str, float]]:
    """
    Screen patterns of the apparatus plus their fringe diagnostics.

    Returns:
        (frames keyed by CSV stem, summary numbers)
    """
    apparatus = build_apparatus(config)
    grid = apparatus.grid
    window = fringe_window(config)

    frames = {
        "screen_both": apparatus.screen[SlitChoice.BOTH].to_frame(),
        "screen_left": apparatus.screen[SlitChoice.LEFT_ONLY].to_frame(),
        "screen_right": apparatus.screen[SlitChoice.RIGHT_ONLY].to_frame(),
        "collapsed_left": apparatus.collapsed_screen[Slit.LEFT].to_frame(),
        "collapsed_right": apparatus.collapsed_screen[Slit.RIGHT].to_frame(),
        "fraunhofer_both": analytic_fraunhofer(
            config.mask(SlitChoice.BOTH), config.wavelength, config.screen_distance, grid
        ).to_frame(),
        "slit_field": apparatus.slit_field.to_frame(),
    }

    expected = config.wavelength * config.screen_distance / config.slit_separation
    measured = fringe_spacing(apparatus.screen[SlitChoice.BOTH], window)
    summary = {
        "fringe_spacing_m": measured,
        "fringe_spacing_expected_m": expected,
        "fringe_spacing_rel_error": abs(measured - expected) / expected,
        "contrast_both": fringe_contrast(apparatus.screen[SlitChoice.BOTH], window),
        "contrast_collapsed": fringe_contrast(apparatus.collapsed_screen[Slit.LEFT], window),
        "alpha_both": apparatus.alpha[SlitChoice.BOTH],
        "alpha_single": apparatus.alpha[SlitChoice.LEFT_ONLY],
        "t0_s": apparatus.timeline.t0,
        "t1_s": apparatus.timeline.t1,
    }
    return frames, summary
