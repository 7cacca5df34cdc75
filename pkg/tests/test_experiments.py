from functools import lru_cache

import numpy as np
import pytest

from qbcsim.adversaries import BitFlipGuess
from qbcsim.config import ProtocolConfig, config_hash
from qbcsim.errors import InvariantViolation
from qbcsim.experiments import (
    SessionMetrics,
    bitflip_sweep,
    calibrate,
    concealing_probe,
    fit_log2_slope,
    run_sessions,
)
from qbcsim.session import HonestStrategy, build_strategy
from qbcsim.verifier import CheckName, RejectionReason


CFG = ProtocolConfig(n_trials=200)


@lru_cache()
def _screen_table():
    return calibrate(CFG, seed=0, sessions=1000)


def _rejection_rate(outcomes, name):
    return sum(1 for o in outcomes if not o.verdict.result(name).passed) / len(outcomes)


def test_honest_screen_sessions_pass_a_calibrated_table():
    table = _screen_table()
    assert table.config_hash == config_hash(CFG)
    outcomes = run_sessions(CFG, HonestStrategy(1), seed=22, sessions=200, quantiles=table)
    accepted = sum(o.verdict.accept for o in outcomes)
    assert accepted >= 196


def test_fabricated_screen_data_rejection_rate():
    # about 21 Both detections at N=200 bound the achievable power near 0.8
    table = _screen_table()
    outcomes = run_sessions(CFG, BitFlipGuess.flipping(0), seed=21, sessions=150, quantiles=table)
    rejected = [o for o in outcomes if not o.verdict.accept]
    assert len(rejected) / len(outcomes) >= 0.6
    assert all(o.verdict.rejection_reason is RejectionReason.PATTERN_MISMATCH for o in rejected)

    threshold = table.threshold(CFG.epsilon_v / 2)
    z = [o.verdict.result(CheckName.PATTERN_LIKELIHOOD).statistic for o in outcomes]
    assert np.median(z) < threshold


def test_statistical_checks_reject_at_their_level():
    cfg = ProtocolConfig(n_trials=80, epsilon_v=0.1)
    level = cfg.epsilon_v / 2
    n_cal, n_run = 500, 500
    table = calibrate(cfg, seed=3, sessions=n_cal)

    screen = run_sessions(cfg, HonestStrategy(1), seed=4, sessions=n_run, quantiles=table)
    slits = run_sessions(cfg, HonestStrategy(0), seed=5, sessions=n_run)

    # the table is itself a sample, so its noise widens the band
    spread = 3.0 * np.sqrt(level * (1 - level) * (1 / n_cal + 1 / n_run))
    assert abs(_rejection_rate(screen, CheckName.PATTERN_LIKELIHOOD) - level) <= spread

    # discrete tests may only undershoot their level
    def ceiling(alpha):
        return alpha + 3.0 * np.sqrt(alpha * (1 - alpha) / n_run)

    assert _rejection_rate(screen, CheckName.PATTERN_GOF) <= ceiling(level)
    # without dark counts BothBalance is the only statistical b=0 check
    assert _rejection_rate(slits, CheckName.BOTH_BALANCE) <= ceiling(cfg.epsilon_v)
    assert _rejection_rate(slits, CheckName.SLIT_CONSISTENCY) == 0.0


def test_concealing_with_independent_seeds():
    report = concealing_probe(ProtocolConfig(n_trials=20), sessions=2000, seed=6)
    assert report.tv_distance_estimate <= 0.02
    assert report.ci[0] <= 0.02
    assert report.schema_divergence is None
    assert report.identical_transcripts is None


def test_concealing_flags_bit_dependent_time_stamps():
    leaky = ProtocolConfig(n_trials=10, announce_at_detection=True)
    report = concealing_probe(leaky, sessions=100, seed=0)
    assert report.schema_divergence is not None


def test_delayed_measurement_at_one_lifetime():
    cfg = ProtocolConfig(n_trials=100)
    strategy = build_strategy("delayed", 0, cfg.tau)
    outcomes = run_sessions(cfg, strategy, seed=8, sessions=300)
    assert not any(o.verdict.accept for o in outcomes)

    announced = sum(o.stats.extra["announced"] for o in outcomes)
    unsupported = sum(o.stats.extra["announced"] - o.stats.extra["supported"] for o in outcomes)
    p = 1.0 - np.exp(-1.0)
    assert abs(unsupported / announced - p) <= 3 * np.sqrt(p * (1 - p) / announced)


def test_random_guess_sweep_tracks_single_slit_rate():
    points = bitflip_sweep(ProtocolConfig(), 1, (25, 50, 100, 200), sessions=400, seed=9, guess_rule="random")
    rejection = [p.rejection_rate for p in points]
    assert rejection == sorted(rejection)
    assert rejection[-1] >= 0.98

    slope = fit_log2_slope(points)
    rate = float(np.mean([p.single_slit_rate for p in points]))
    assert slope is not None and slope < 0
    assert 0.5 * rate <= abs(slope) <= 2.0 * rate


def test_likelihood_guessing_at_two_hundred_trials():
    outcomes = run_sessions(CFG, BitFlipGuess.flipping(1), seed=10, sessions=300)
    rejected = sum(not o.verdict.accept for o in outcomes)
    assert rejected / len(outcomes) >= 0.95


def test_metrics_with_impossible_rates_are_an_internal_error():
    metrics = SessionMetrics("honest", 0, "abc", 1, accept_rate={"honest/b=0": 1.5})
    with pytest.raises(InvariantViolation) as exc:
        metrics.check()
    assert exc.value.exit_code == 4
    with pytest.raises(InvariantViolation):
        SessionMetrics("concealing", 0, "abc", 1, tv_distance_estimate=-0.1).check()
