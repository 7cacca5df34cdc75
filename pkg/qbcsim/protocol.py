"""
Commit / Unveil Protocol
========================
Honest Alice and Bob for the neutron double-slit bit commitment.

Commit:
1. Bob sends N neutrons through N identical double-slit setups, closing
   one slit at random on about half of them.
2. To commit b=0 Alice finds out which slit each neutron took; for b=1 she
   records where it lands on the screen. By t1 she announces only whether
   each neutron was detected.

Unveil:
1. At T Alice reveals b and, per detected neutron, the slit (b=0) or the
   screen position (b=1).
2. Bob checks the data against his slit settings (see verifier.py).
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple, Union

from .apparatus import build_apparatus
from .config import ProtocolConfig, config_hash
from .errors import InvalidParams, StateMismatch
from .rng import SessionStreams
from .wavepacket import Slit, SlitChoice


TRANSCRIPT_SCHEMA = "qbc-transcript/1"
UNVEIL_SCHEMA = "qbc-unveil/1"

Datum = Union[Slit, float]


def check_bit(b: int) -> int:
    if b not in (0, 1):
        raise InvalidParams(f"committed bit must be 0 or 1, got {b!r}")
    return int(b)


@dataclass(frozen=True)
class TrialSetup:
    trial_id: int
    choice: SlitChoice


@dataclass(frozen=True)
class SealedSlitRecord:
    """Bob's slit settings, fixed at prepare time and opened only by the verifier."""
    session_id: int
    choices: Tuple[SlitChoice, ...]

    @classmethod
    def from_setups(cls, session_id: int, setups: Iterable[TrialSetup]) -> "SealedSlitRecord":
        return cls(session_id, tuple(s.choice for s in sorted(setups, key=lambda s: s.trial_id)))


@dataclass(frozen=True)
class Announcement:
    trial_id: int
    detected: bool
    time: float


@dataclass(frozen=True)
class CommitTranscript:
    """Everything Bob has seen when the commit phase ends."""
    session_id: int
    seed: int
    config_hash: str
    n_trials: int
    announcements: Tuple[Announcement, ...]
    commit_end: float
    schema: str = TRANSCRIPT_SCHEMA

    def detected_ids(self) -> List[int]:
        return [a.trial_id for a in self.announcements if a.detected]

    @property
    def detected_count(self) -> int:
        return sum(1 for a in self.announcements if a.detected)


@dataclass(frozen=True)
class UnveilEntry:
    trial_id: int
    slit: Optional[Slit] = None
    position: Optional[float] = None


@dataclass(frozen=True)
class UnveilMessage:
    session_id: int
    b: int
    entries: Tuple[UnveilEntry, ...]
    schema: str = UNVEIL_SCHEMA

    def __post_init__(self):
        check_bit(self.b)


@dataclass
class AlicePrivateState:
    """Alice's notebook: the bit, what she announced and what she measured."""
    session_id: int
    b: int
    announced: Tuple[int, ...]
    data: Dict[int, Datum] = field(default_factory=dict)


@dataclass(frozen=True)
class TrialRecord:
    """Joint view of one trial across Bob, Alice and nature (harness and tests only)."""
    trial_id: int
    bob_choice: SlitChoice
    detected: bool
    alice_data: Optional[Datum]
    decay_time: float


def draw_slit_choice(u: float, config: ProtocolConfig) -> SlitChoice:
    probs = config.slit_probabilities()
    if u < probs[SlitChoice.BOTH]:
        return SlitChoice.BOTH
    if u < probs[SlitChoice.BOTH] + probs[SlitChoice.LEFT_ONLY]:
        return SlitChoice.LEFT_ONLY
    return SlitChoice.RIGHT_ONLY


def bob_prepare_trials(config: ProtocolConfig, streams: SessionStreams) -> List[TrialSetup]:
    """Draw Bob's slit setting for each of the N trials from his own streams."""
    return [
        TrialSetup(i, draw_slit_choice(streams.trial(i, "bob").random(), config))
        for i in range(config.n_trials)
    ]


def announcement_time(b: int, config: ProtocolConfig) -> float:
    """All announcements are stamped at the t1 deadline unless the leak knob is on."""
    if config.announce_at_detection and b == 0:
        return config.timeline.t0
    return config.timeline.t1


def alice_commit_honest(
    b: int,
    setups: List[TrialSetup],
    config: ProtocolConfig,
    streams: SessionStreams,
) -> Tuple[CommitTranscript, AlicePrivateState]:
    """
    Run the commit phase for an honest Alice.

    Nature draws transmission and decay from the trial's world stream; Alice
    measures with her own stream. A neutron is detected when it passed the
    slits, was still alive at Alice's measurement and the detector fired;
    a dark count can also produce a detection.

    Raises:
        ConfigGuard: t1 is not small compared to tau
    """
    b = check_bit(b)
    config.check_timing_guard()
    apparatus = build_apparatus(config)
    t_measure = apparatus.detection_time(b)
    stamp = announcement_time(b, config)

    announcements = []
    data: Dict[int, Datum] = {}
    for setup in setups:
        world = streams.trial(setup.trial_id, "world")
        alice = streams.trial(setup.trial_id, "alice")
        transit = apparatus.transit(setup.choice, world)
        fired = alice.random() < config.detection_efficiency
        dark = alice.random() < config.dark_count_prob

        datum: Optional[Datum] = None
        if transit.transmitted and transit.decay_time > t_measure and fired:
            if b == 0:
                datum = apparatus.measure_which_slit(setup.choice, alice).slit
            else:
                datum = apparatus.detect_on_screen(setup.choice, alice)
        elif dark:
            if b == 0:
                datum = Slit.LEFT if alice.random() < 0.5 else Slit.RIGHT
            else:
                datum = apparatus.dark_count_position(alice)

        if datum is not None:
            data[setup.trial_id] = datum
        announcements.append(Announcement(setup.trial_id, datum is not None, stamp))

    transcript = CommitTranscript(
        session_id=streams.session_id,
        seed=streams.seed,
        config_hash=config_hash(config),
        n_trials=len(setups),
        announcements=tuple(announcements),
        commit_end=config.timeline.commit_end,
    )
    state = AlicePrivateState(
        session_id=streams.session_id,
        b=b,
        announced=tuple(transcript.detected_ids()),
        data=data,
    )
    return transcript, state


def alice_unveil_honest(b: int, state: AlicePrivateState) -> UnveilMessage:
    """
    Reveal b and the recorded datum of every announced detection.

    Raises:
        StateMismatch: b differs from the notebook, or an announced trial has no datum
    """
    b = check_bit(b)
    if state.b != b:
        raise StateMismatch(f"private state holds b={state.b}, asked to unveil b={b}")

    entries = []
    for trial_id in state.announced:
        if trial_id not in state.data:
            raise StateMismatch(f"no recorded datum for detected trial {trial_id}")
        datum = state.data[trial_id]
        if b == 0:
            if not isinstance(datum, Slit):
                raise StateMismatch(f"trial {trial_id}: expected a slit claim, found {datum!r}")
            entries.append(UnveilEntry(trial_id, slit=datum))
        else:
            if isinstance(datum, Slit):
                raise StateMismatch(f"trial {trial_id}: expected a screen position, found {datum!r}")
            entries.append(UnveilEntry(trial_id, position=float(datum)))
    return UnveilMessage(state.session_id, b, tuple(entries))


def trial_records(
    setups: List[TrialSetup],
    transcript: CommitTranscript,
    state: AlicePrivateState,
    config: ProtocolConfig,
    streams: SessionStreams,
) -> List[TrialRecord]:
    """
    Join Bob's settings, the announcements and Alice's data per trial.

    Decay times never reach Alice; they are redrawn here from each trial's
    world stream, which replays exactly what the commit phase saw.
    """
    apparatus = build_apparatus(config)
    detected = {a.trial_id: a.detected for a in transcript.announcements}
    return [
        TrialRecord(
            trial_id=s.trial_id,
            bob_choice=s.choice,
            detected=detected.get(s.trial_id, False),
            alice_data=state.data.get(s.trial_id),
            decay_time=apparatus.transit(s.choice, streams.trial(s.trial_id, "world")).decay_time,
        )
        for s in setups
    ]
