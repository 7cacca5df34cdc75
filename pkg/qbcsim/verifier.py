"""
Verifier
========
Bob's unveil check, split into named tests:

1. MissingData        every announced detection has data, and nothing else does (exact)
2. b=0  SlitConsistency  claims on single-slit trials name the open slit
                         (exact; binomial on the mismatch count when dark counts are on)
        BothBalance      Left/Right claims on Both trials match the honest claim odds (binomial)
3. b=1  PatternLikelihood  standardized fringe-vs-envelope log-ratio of Both-trial
                           positions vs honest quantile
        PatternGof         chi-square fit of pooled Both-trial positions
4. CountAnomaly       announced count within count_sigma of its expectation

The statistical tests of a bit share epsilon_v equally. The first failing
test decides the rejection reason.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .apparatus import DoubleSlitApparatus, build_apparatus
from .config import ProtocolConfig, config_hash
from .errors import SessionMismatch, UncalibratedQuantiles
from .protocol import CommitTranscript, SealedSlitRecord, UnveilEntry, UnveilMessage
from .stats import binomial_two_sided, binomial_upper_tail, chi_square_gof
from .wavepacket import Slit, SlitChoice


VERDICT_SCHEMA = "qbc-verdict/1"
QUANTILE_SCHEMA = "qbc-quantiles/1"


class RejectionReason(str, Enum):
    SLIT_MISMATCH = "SlitMismatch"
    PATTERN_MISMATCH = "PatternMismatch"
    MISSING_DATA = "MissingData"
    COUNT_ANOMALY = "CountAnomaly"


class CheckName(str, Enum):
    MISSING_DATA = "MissingData"
    SLIT_CONSISTENCY = "SlitConsistency"
    BOTH_BALANCE = "BothBalance"
    PATTERN_LIKELIHOOD = "PatternLikelihood"
    PATTERN_GOF = "PatternGof"
    COUNT_ANOMALY = "CountAnomaly"


REASONS: Dict[CheckName, RejectionReason] = {
    CheckName.MISSING_DATA: RejectionReason.MISSING_DATA,
    CheckName.SLIT_CONSISTENCY: RejectionReason.SLIT_MISMATCH,
    CheckName.BOTH_BALANCE: RejectionReason.SLIT_MISMATCH,
    CheckName.PATTERN_LIKELIHOOD: RejectionReason.PATTERN_MISMATCH,
    CheckName.PATTERN_GOF: RejectionReason.PATTERN_MISMATCH,
    CheckName.COUNT_ANOMALY: RejectionReason.COUNT_ANOMALY,
}


def statistical_checks(b: int, config: ProtocolConfig) -> Tuple[CheckName, ...]:
    """Checks of bit b that spend part of epsilon_v."""
    if b == 1:
        return CheckName.PATTERN_LIKELIHOOD, CheckName.PATTERN_GOF
    if config.dark_count_prob > 0:
        return CheckName.SLIT_CONSISTENCY, CheckName.BOTH_BALANCE
    return (CheckName.BOTH_BALANCE,)


@dataclass(frozen=True)
class CheckResult:
    name: CheckName
    passed: bool
    statistic: float
    p_value: Optional[float] = None
    threshold: Optional[float] = None
    exact: bool = False
    skipped: bool = False
    detail: str = ""


@dataclass(frozen=True)
class Verdict:
    session_id: int
    b: int
    accept: bool
    tests: Tuple[CheckResult, ...]
    rejection_reason: Optional[RejectionReason] = None
    schema: str = VERDICT_SCHEMA

    def result(self, name: CheckName) -> Optional[CheckResult]:
        for t in self.tests:
            if t.name is name:
                return t
        return None


@dataclass(frozen=True)
class QuantileTable:
    """Honest-play distribution of the PatternLikelihood Z statistic for one config."""
    config_hash: str
    seed: int
    sessions: int
    samples: np.ndarray = field(repr=False)
    schema: str = QUANTILE_SCHEMA

    def __post_init__(self):
        object.__setattr__(self, "samples", np.sort(np.asarray(self.samples, dtype=float)))

    def threshold(self, level: float) -> float:
        return float(np.quantile(self.samples, level))

    def p_value(self, z: float) -> float:
        """Smoothed lower-tail frequency of honest Z values at or below z."""
        below = int(np.searchsorted(self.samples, z, side="right"))
        return (below + 1) / (self.samples.size + 1)


def pattern_z_score(
    entries: List[UnveilEntry],
    sealed: SealedSlitRecord,
    apparatus: DoubleSlitApparatus,
) -> Tuple[float, int]:
    """
    Standardized fringe-vs-envelope score of the Both-trial positions.

    Each position scores s(x) = log(F(x) / M(x)), F the honest Both pattern
    and M the mixture of collapsed single-slit envelopes that a which-slit
    measurement leaves behind. Z = sum(s - mean_F) / sqrt(n var_F), so honest
    data sits near 0 and envelope data far below. Single-slit trials look
    the same for both bits and are left out. Returns (0.0, 0) when no Both
    trial was unveiled.
    """
    positions = [
        e.position for e in entries
        if e.position is not None and sealed.choices[e.trial_id] is SlitChoice.BOTH
    ]
    table = apparatus.fringe_score
    n = len(positions)
    if n == 0 or table.variance <= 0:
        return 0.0, n
    total = float(np.sum(table.score(apparatus.grid, positions) - table.mean))
    return total / float(np.sqrt(n * table.variance)), n


def _check_session(
    transcript: CommitTranscript,
    unveil: UnveilMessage,
    sealed: SealedSlitRecord,
    config: ProtocolConfig,
) -> None:
    if not transcript.session_id == unveil.session_id == sealed.session_id:
        raise SessionMismatch(
            f"session ids differ: transcript {transcript.session_id}, unveil {unveil.session_id}, "
            f"sealed record {sealed.session_id}"
        )
    if len(sealed.choices) != transcript.n_trials:
        raise SessionMismatch("sealed record and transcript disagree on the number of trials")
    if transcript.config_hash != config_hash(config):
        raise SessionMismatch("transcript was produced under a different configuration")


def _missing_data(transcript: CommitTranscript, unveil: UnveilMessage) -> Tuple[CheckResult, List[UnveilEntry]]:
    announced = set(transcript.detected_ids())
    seen = set()
    valid, bad = [], 0
    for entry in unveil.entries:
        well_formed = entry.slit is not None if unveil.b == 0 else entry.position is not None
        if entry.trial_id not in announced or entry.trial_id in seen or not well_formed:
            bad += 1
            continue
        seen.add(entry.trial_id)
        valid.append(entry)
    missing = len(announced - seen)
    result = CheckResult(
        CheckName.MISSING_DATA,
        passed=(missing == 0 and bad == 0),
        statistic=float(missing + bad),
        exact=True,
        detail=f"{missing} announced without data, {bad} unexpected or malformed",
    )
    return result, valid


def _slit_tests(entries, sealed, apparatus, level) -> List[CheckResult]:
    open_slit = {SlitChoice.LEFT_ONLY: Slit.LEFT, SlitChoice.RIGHT_ONLY: Slit.RIGHT}
    mismatches = 0
    mismatch_rates = []
    both_claims = []
    for entry in entries:
        choice = sealed.choices[entry.trial_id]
        if choice is SlitChoice.BOTH:
            both_claims.append(entry.slit)
            continue
        mismatch_rates.append(apparatus.slit_mismatch_rate(choice))
        if entry.slit is not open_slit[choice]:
            mismatches += 1

    rate = float(np.mean(mismatch_rates)) if mismatch_rates else 0.0
    if rate == 0.0:
        consistency = CheckResult(
            CheckName.SLIT_CONSISTENCY,
            passed=(mismatches == 0),
            statistic=float(mismatches),
            exact=True,
        )
    else:
        # dark counts claim a coin-flip slit, so honest data carries some mismatches
        p = binomial_upper_tail(mismatches, len(mismatch_rates), rate)
        consistency = CheckResult(
            CheckName.SLIT_CONSISTENCY, p >= level, float(mismatches), p, level,
            detail=f"{mismatches} of {len(mismatch_rates)}, expected rate {rate:.4g}",
        )
    results = [consistency]

    p_left = apparatus.claim_left_probability()
    n = len(both_claims)
    if n == 0 or not 0.0 < p_left < 1.0:
        results.append(CheckResult(CheckName.BOTH_BALANCE, True, 0.0, 1.0, level, skipped=True))
    else:
        lefts = sum(1 for s in both_claims if s is Slit.LEFT)
        p = binomial_two_sided(lefts, n, p_left)
        results.append(CheckResult(CheckName.BOTH_BALANCE, p >= level, float(lefts), p, level))
    return results


def _pattern_tests(entries, sealed, apparatus, quantiles, level) -> List[CheckResult]:
    z, n = pattern_z_score(entries, sealed, apparatus)
    if n == 0:
        likelihood = CheckResult(CheckName.PATTERN_LIKELIHOOD, True, 0.0, 1.0, skipped=True)
    else:
        threshold = quantiles.threshold(level)
        likelihood = CheckResult(
            CheckName.PATTERN_LIKELIHOOD,
            passed=(z >= threshold),
            statistic=z,
            p_value=quantiles.p_value(z),
            threshold=threshold,
        )

    both = np.array([
        e.position for e in entries if sealed.choices[e.trial_id] is SlitChoice.BOTH
    ], dtype=float)
    gof = chi_square_gof(both, apparatus.observed_screen[SlitChoice.BOTH])
    if gof.dof == 0:
        fit = CheckResult(CheckName.PATTERN_GOF, True, 0.0, 1.0, level, skipped=True)
    else:
        fit = CheckResult(
            CheckName.PATTERN_GOF,
            passed=(gof.p_value >= level),
            statistic=gof.statistic,
            p_value=gof.p_value,
            threshold=level,
            detail=f"{gof.bins} classes",
        )
    return [likelihood, fit]


def _count_anomaly(transcript, sealed, apparatus, b, count_sigma) -> CheckResult:
    probs = np.array([apparatus.detection_probability(c, b) for c in sealed.choices])
    expected = float(probs.sum())
    sd = float(np.sqrt(np.sum(probs * (1.0 - probs))))
    count = transcript.detected_count
    deviation = abs(count - expected)
    passed = deviation <= count_sigma * sd if sd > 0 else deviation < 0.5
    return CheckResult(
        CheckName.COUNT_ANOMALY,
        passed=passed,
        statistic=(deviation / sd) if sd > 0 else deviation,
        threshold=count_sigma,
        detail=f"announced {count}, expected {expected:.2f} +/- {sd:.2f}",
    )


def verify(
    transcript: CommitTranscript,
    unveil: UnveilMessage,
    sealed: SealedSlitRecord,
    config: ProtocolConfig,
    quantiles: Optional[QuantileTable] = None,
) -> Verdict:
    """
    Run Bob's checks on an unveiled commitment.

    Args:
        transcript: what Bob saw during the commit phase
        unveil: Alice's revealed bit and data
        sealed: Bob's slit settings
        config: the run configuration (must match the transcript)
        quantiles: honest Z table, required to verify b=1

    Raises:
        SessionMismatch: the three records are not from the same session/config
        UncalibratedQuantiles: b=1 without a table calibrated for this config
    """
    _check_session(transcript, unveil, sealed, config)
    b = unveil.b
    if b == 1 and (quantiles is None or quantiles.config_hash != transcript.config_hash):
        raise UncalibratedQuantiles(
            f"no honest quantile table for config {transcript.config_hash[:16]}; run `calibrate`"
        )

    apparatus = build_apparatus(config)
    level = config.epsilon_v / len(statistical_checks(b, config))

    missing, entries = _missing_data(transcript, unveil)
    tests = [missing]
    if b == 0:
        tests += _slit_tests(entries, sealed, apparatus, level)
    else:
        tests += _pattern_tests(entries, sealed, apparatus, quantiles, level)
    tests.append(_count_anomaly(transcript, sealed, apparatus, b, config.count_sigma))

    failed = [t for t in tests if not t.passed]
    reason = REASONS[failed[0].name] if failed else None
    return Verdict(unveil.session_id, b, not failed, tuple(tests), reason)
