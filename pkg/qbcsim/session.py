"""
Session Runner
==============
One complete commitment: Bob prepares, Alice (honest or cheating) commits
and unveils, Bob verifies.
"""

from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Union

from .adversaries import BitFlipGuess, DelayedMeasurement, cheat_bitflip, cheat_delayed
from .config import ProtocolConfig
from .errors import InvalidParams
from .protocol import (
    CommitTranscript,
    SealedSlitRecord,
    UnveilMessage,
    alice_commit_honest,
    alice_unveil_honest,
    bob_prepare_trials,
    check_bit,
)
from .rng import SessionStreams
from .verifier import QuantileTable, Verdict, verify
from .wavepacket import SlitChoice


@dataclass(frozen=True)
class HonestStrategy:
    b: int

    def __post_init__(self):
        check_bit(self.b)


Strategy = Union[HonestStrategy, BitFlipGuess, DelayedMeasurement]

STRATEGY_NAMES = ("honest", "bitflip", "bitflip-random", "delayed")


def build_strategy(
    name: str,
    b: int,
    measure_time: Optional[float] = None,
    announce_fraction: float = 1.0,
) -> Strategy:
    """
    Strategy from its CLI name.

    b is the committed bit for honest and bit-flip play, and the unveiled
    bit for delayed measurement.
    """
    if name == "honest":
        return HonestStrategy(b)
    if name == "bitflip":
        return BitFlipGuess.flipping(b, "likelihood")
    if name == "bitflip-random":
        return BitFlipGuess.flipping(b, "random")
    if name == "delayed":
        if measure_time is None:
            raise InvalidParams("delayed strategy needs a measure_time")
        return DelayedMeasurement(measure_time, b, announce_fraction)
    raise InvalidParams(f"unknown strategy '{name}' (expected one of {STRATEGY_NAMES})")


def strategy_label(strategy: Strategy) -> str:
    if isinstance(strategy, HonestStrategy):
        return "honest"
    if isinstance(strategy, BitFlipGuess):
        return "bitflip" if strategy.guess_rule == "likelihood" else "bitflip-random"
    return "delayed"


@dataclass
class SessionStats:
    session_id: int
    strategy: str
    committed_b: Optional[int]
    unveiled_b: int
    n_trials: int
    detected: int
    single_slit_detected: int
    supported: int
    accept: bool
    rejection_reason: Optional[str]
    statistics: Dict[str, float] = field(default_factory=dict)
    extra: Dict[str, float] = field(default_factory=dict)


class SessionOutcome(NamedTuple):
    transcript: CommitTranscript
    unveil: UnveilMessage
    verdict: Verdict
    stats: SessionStats


def run_session(
    config: ProtocolConfig,
    strategy: Strategy,
    streams: SessionStreams,
    quantiles: Optional[QuantileTable] = None,
) -> SessionOutcome:
    """
    Run commit, unveil and verification end to end.

    Deterministic in (config, strategy, streams.seed, streams.session_id).
    """
    setups = bob_prepare_trials(config, streams)
    sealed = SealedSlitRecord.from_setups(streams.session_id, setups)

    extra: Dict[str, float] = {}
    if isinstance(strategy, HonestStrategy):
        transcript, state = alice_commit_honest(strategy.b, setups, config, streams)
        unveil = alice_unveil_honest(strategy.b, state)
        committed: Optional[int] = strategy.b
    elif isinstance(strategy, BitFlipGuess):
        transcript, unveil, extra = cheat_bitflip(strategy, setups, config, streams)
        committed = strategy.committed_b
    elif isinstance(strategy, DelayedMeasurement):
        transcript, unveil, extra = cheat_delayed(strategy, setups, config, streams)
        committed = None
    else:
        raise InvalidParams(f"unsupported strategy {strategy!r}")

    verdict = verify(transcript, unveil, sealed, config, quantiles)

    detected = set(transcript.detected_ids())
    stats = SessionStats(
        session_id=streams.session_id,
        strategy=strategy_label(strategy),
        committed_b=committed,
        unveiled_b=unveil.b,
        n_trials=config.n_trials,
        detected=len(detected),
        single_slit_detected=sum(1 for s in setups if s.trial_id in detected and s.choice is not SlitChoice.BOTH),
        supported=len(unveil.entries),
        accept=verdict.accept,
        rejection_reason=verdict.rejection_reason.value if verdict.rejection_reason else None,
        statistics={t.name.value: t.statistic for t in verdict.tests if not t.skipped},
        extra=extra,
    )
    return SessionOutcome(transcript, unveil, verdict, stats)


def unveiled_bit(strategy: Strategy) -> int:
    if isinstance(strategy, HonestStrategy):
        return strategy.b
    if isinstance(strategy, BitFlipGuess):
        return strategy.unveiled_b
    return strategy.unveil_b
