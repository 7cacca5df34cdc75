"""
Cheating Alice
==============
Strategies that try to unveil a bit other than the one the physics
committed them to.

- BitFlipGuess: commit honestly to one bit, then fabricate data for the other.
- DelayedMeasurement: measure nothing during the commit phase, announce
  detections blind, and measure whatever survives at a later time.

Both keep the commit transcript in the honest format; cheating only shows
in Alice's private notebook and the unveil. Fabrication draws from the
adversary's own stream and never looks at Bob's slit settings.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .apparatus import build_apparatus
from .config import ProtocolConfig, config_hash
from .errors import InvalidParams
from .protocol import (
    AlicePrivateState,
    Announcement,
    CommitTranscript,
    TrialSetup,
    UnveilEntry,
    UnveilMessage,
    alice_commit_honest,
    alice_unveil_honest,
    announcement_time,
    check_bit,
)
from .rng import SessionStreams
from .wavepacket import Slit, SlitChoice, sample_position


GUESS_RULES = ("likelihood", "random")


@dataclass(frozen=True)
class BitFlipGuess:
    committed_b: int
    unveiled_b: int
    guess_rule: str = "likelihood"

    def __post_init__(self):
        check_bit(self.committed_b)
        check_bit(self.unveiled_b)
        if self.committed_b == self.unveiled_b:
            raise InvalidParams("BitFlipGuess must unveil the opposite of the committed bit")
        if self.guess_rule not in GUESS_RULES:
            raise InvalidParams(f"unknown guess rule '{self.guess_rule}' (expected {GUESS_RULES})")

    @classmethod
    def flipping(cls, committed_b: int, guess_rule: str = "likelihood") -> "BitFlipGuess":
        return cls(committed_b, 1 - check_bit(committed_b), guess_rule)


@dataclass(frozen=True)
class DelayedMeasurement:
    measure_time: float
    unveil_b: int = 1
    announce_fraction: float = 1.0

    def __post_init__(self):
        check_bit(self.unveil_b)
        if not 0.0 < self.announce_fraction <= 1.0:
            raise InvalidParams(f"announce_fraction must lie in (0, 1], got {self.announce_fraction}")


def _guess_slit(position: float, rule: str, apparatus, rng: np.random.Generator) -> Slit:
    """Best classical guess of the slit from a screen position."""
    coin = Slit.LEFT if rng.random() < 0.5 else Slit.RIGHT
    if rule == "random":
        return coin
    left = float(apparatus.collapsed_screen[Slit.LEFT].density_at(position))
    right = float(apparatus.collapsed_screen[Slit.RIGHT].density_at(position))
    if left == right:
        return coin
    return Slit.LEFT if left > right else Slit.RIGHT


def cheat_bitflip(
    strategy: BitFlipGuess,
    setups: List[TrialSetup],
    config: ProtocolConfig,
    streams: SessionStreams,
) -> Tuple[CommitTranscript, UnveilMessage, Dict[str, float]]:
    """
    Commit honestly to strategy.committed_b and unveil the other bit.

    0 -> 1: each measured slit becomes a position drawn from that slit's
            diffraction envelope (no fringes survive the measurement).
    1 -> 0: each position becomes a slit guess under strategy.guess_rule.
    """
    apparatus = build_apparatus(config)
    transcript, state = alice_commit_honest(strategy.committed_b, setups, config, streams)

    fabricated = {}
    for trial_id in state.announced:
        rng = streams.trial(trial_id, "adversary")
        datum = state.data[trial_id]
        if strategy.committed_b == 0:
            fabricated[trial_id] = apparatus.detect_collapsed(datum, rng)
        else:
            fabricated[trial_id] = _guess_slit(datum, strategy.guess_rule, apparatus, rng)

    forged = AlicePrivateState(
        session_id=state.session_id,
        b=strategy.unveiled_b,
        announced=state.announced,
        data=fabricated,
    )
    unveil = alice_unveil_honest(strategy.unveiled_b, forged)
    metrics = {"detected": float(len(state.announced))}
    return transcript, unveil, metrics


def cheat_delayed(
    strategy: DelayedMeasurement,
    setups: List[TrialSetup],
    config: ProtocolConfig,
    streams: SessionStreams,
) -> Tuple[CommitTranscript, UnveilMessage, Dict[str, float]]:
    """
    Defer every measurement to strategy.measure_time.

    The t1 deadline forces announcements before anything is measured, so
    every transmitted neutron is announced as detected (thinned by
    announce_fraction). Neutrons alive at measure_time yield a position
    from the freely spread wave (b=1) or a coin-flip slit claim (b=0);
    the rest have nothing to unveil.

    Raises:
        InvalidParams: measure_time <= t1
    """
    timeline = config.timeline
    if not strategy.measure_time > timeline.t1:
        raise InvalidParams(f"measure_time must exceed t1 = {timeline.t1:.6g} s")
    config.check_timing_guard()
    apparatus = build_apparatus(config)
    stamp = announcement_time(1, config)

    announcements = []
    entries = []
    for setup in setups:
        world = streams.trial(setup.trial_id, "world")
        rng = streams.trial(setup.trial_id, "adversary")
        transit = apparatus.transit(setup.choice, world)
        announced = transit.transmitted and rng.random() < strategy.announce_fraction
        announcements.append(Announcement(setup.trial_id, announced, stamp))
        if not announced or transit.decay_time <= strategy.measure_time:
            continue
        if strategy.unveil_b == 1:
            pattern = apparatus.delayed_pattern(setup.choice, strategy.measure_time)
            entries.append(UnveilEntry(setup.trial_id, position=sample_position(pattern, rng)))
        else:
            slit = Slit.LEFT if rng.random() < 0.5 else Slit.RIGHT
            entries.append(UnveilEntry(setup.trial_id, slit=slit))

    transcript = CommitTranscript(
        session_id=streams.session_id,
        seed=streams.seed,
        config_hash=config_hash(config),
        n_trials=len(setups),
        announcements=tuple(announcements),
        commit_end=timeline.commit_end,
    )
    unveil = UnveilMessage(streams.session_id, strategy.unveil_b, tuple(entries))

    n_announced = transcript.detected_count
    honest = apparatus.screen[SlitChoice.BOTH]
    spread = apparatus.delayed_pattern(SlitChoice.BOTH, strategy.measure_time)
    metrics = {
        "announced": float(n_announced),
        "supported": float(len(entries)),
        "unsupported_fraction": (1.0 - len(entries) / n_announced) if n_announced else 0.0,
        "pattern_width_ratio": spread.interquantile_width() / honest.interquantile_width(),
        "far_field_ratio": (strategy.measure_time - timeline.t0) / (timeline.t1 - timeline.t0),
    }
    return transcript, unveil, metrics
