import numpy as np
import pytest

from qbcsim.apparatus import build_apparatus
from qbcsim.config import ProtocolConfig
from qbcsim.errors import ConfigGuard, InvalidParams, StateMismatch
from qbcsim.protocol import (
    AlicePrivateState,
    SealedSlitRecord,
    UnveilMessage,
    alice_commit_honest,
    alice_unveil_honest,
    announcement_time,
    bob_prepare_trials,
    draw_slit_choice,
    trial_records,
)
from qbcsim.rng import SessionStreams
from qbcsim.serialization import alice_to_dict, canonical_dumps, transcript_to_dict
from qbcsim.stats import chi_square_gof
from qbcsim.wavepacket import Slit, SlitChoice


CFG = ProtocolConfig()


def test_draw_slit_choice_thresholds():
    assert draw_slit_choice(0.0, CFG) is SlitChoice.BOTH
    assert draw_slit_choice(0.49, CFG) is SlitChoice.BOTH
    assert draw_slit_choice(0.6, CFG) is SlitChoice.LEFT_ONLY
    assert draw_slit_choice(0.9, CFG) is SlitChoice.RIGHT_ONLY


def test_prepare_is_deterministic_per_seed_and_session():
    cfg = CFG.with_overrides(n_trials=4)
    a = bob_prepare_trials(cfg, SessionStreams(42))
    assert a == bob_prepare_trials(cfg, SessionStreams(42))
    assert [s.trial_id for s in a] == [0, 1, 2, 3]

    cfg = CFG.with_overrides(n_trials=64)
    assert bob_prepare_trials(cfg, SessionStreams(42, 0)) != bob_prepare_trials(cfg, SessionStreams(42, 1))


def test_prepare_slit_frequencies():
    n = 20_000
    setups = bob_prepare_trials(CFG.with_overrides(n_trials=n), SessionStreams(5))
    choices = [s.choice for s in setups]
    both = choices.count(SlitChoice.BOTH) / n
    left = choices.count(SlitChoice.LEFT_ONLY) / n
    assert abs(both - 0.5) < 4 * np.sqrt(0.25 / n)
    assert abs(left - 0.25) < 4 * np.sqrt(0.25 * 0.75 / n)


def test_unknown_stream_role():
    with pytest.raises(InvalidParams):
        SessionStreams(1).trial(0, "eve")


def test_announcements_are_stamped_at_the_deadline():
    assert announcement_time(0, CFG) == CFG.timeline.t1
    assert announcement_time(1, CFG) == CFG.timeline.t1
    leaky = CFG.with_overrides(announce_at_detection=True)
    assert announcement_time(0, leaky) == leaky.timeline.t0


def test_commit_refuses_slow_apparatus():
    cfg = CFG.with_overrides(tau=1.0, n_trials=5)
    setups = bob_prepare_trials(cfg, SessionStreams(0))
    with pytest.raises(ConfigGuard):
        alice_commit_honest(0, setups, cfg, SessionStreams(0))


def test_commit_rejects_bad_bit():
    setups = bob_prepare_trials(CFG.with_overrides(n_trials=3), SessionStreams(0))
    with pytest.raises(InvalidParams):
        alice_commit_honest(2, setups, CFG.with_overrides(n_trials=3), SessionStreams(0))


def _commit(b, cfg, seed=7, session_id=0):
    streams = SessionStreams(seed, session_id)
    setups = bob_prepare_trials(cfg, streams)
    transcript, state = alice_commit_honest(b, setups, cfg, streams)
    return setups, transcript, state


def test_honest_commit_is_deterministic():
    cfg = CFG.with_overrides(n_trials=50)
    _, t1, s1 = _commit(1, cfg)
    _, t2, s2 = _commit(1, cfg)
    assert canonical_dumps(transcript_to_dict(t1)) == canonical_dumps(transcript_to_dict(t2))
    assert s1.data == s2.data


def test_which_slit_claims_follow_the_open_slit():
    cfg = CFG.with_overrides(n_trials=1000)
    setups, transcript, state = _commit(0, cfg)
    records = trial_records(setups, transcript, state, cfg, SessionStreams(7))
    assert len(records) == 1000
    for record in records:
        if not record.detected:
            assert record.alice_data is None
        elif record.bob_choice is SlitChoice.LEFT_ONLY:
            assert record.alice_data is Slit.LEFT
        elif record.bob_choice is SlitChoice.RIGHT_ONLY:
            assert record.alice_data is Slit.RIGHT


def test_detected_count_matches_detection_probabilities():
    cfg = CFG.with_overrides(n_trials=2000)
    apparatus = build_apparatus(cfg)
    for b in (0, 1):
        setups, transcript, _ = _commit(b, cfg, seed=11)
        probs = np.array([apparatus.detection_probability(s.choice, b) for s in setups])
        sd = np.sqrt(np.sum(probs * (1 - probs)))
        assert abs(transcript.detected_count - probs.sum()) < 4 * sd


def test_screen_positions_follow_the_interference_pattern():
    cfg = CFG.with_overrides(n_trials=3000, p_both=1.0)
    _, _, state = _commit(1, cfg, seed=3)
    positions = np.array(list(state.data.values()))
    assert positions.size > 300
    pattern = build_apparatus(cfg).screen[SlitChoice.BOTH]
    assert chi_square_gof(positions, pattern).p_value > 0.001


def test_transcript_shape_does_not_depend_on_the_bit():
    cfg = CFG.with_overrides(n_trials=30)
    _, t0, _ = _commit(0, cfg)
    _, t1, _ = _commit(1, cfg)
    d0, d1 = transcript_to_dict(t0), transcript_to_dict(t1)
    assert d0.keys() == d1.keys()
    assert [a.keys() for a in d0["announcements"]] == [a.keys() for a in d1["announcements"]]
    assert {a["time"] for a in d0["announcements"]} == {a["time"] for a in d1["announcements"]}


def test_unveil_covers_exactly_the_announced_trials():
    cfg = CFG.with_overrides(n_trials=200)
    for b in (0, 1):
        _, transcript, state = _commit(b, cfg)
        unveil = alice_unveil_honest(b, state)
        assert [e.trial_id for e in unveil.entries] == transcript.detected_ids()
        if b == 0:
            assert all(e.slit is not None and e.position is None for e in unveil.entries)
        else:
            assert all(e.position is not None and e.slit is None for e in unveil.entries)


def test_unveil_with_no_detections_is_empty():
    state = AlicePrivateState(session_id=0, b=1, announced=())
    assert alice_unveil_honest(1, state).entries == ()


def test_unveil_rejects_inconsistent_state():
    cfg = CFG.with_overrides(n_trials=200)
    _, transcript, state = _commit(0, cfg)
    with pytest.raises(StateMismatch):
        alice_unveil_honest(1, state)

    assert transcript.detected_count > 0
    del state.data[state.announced[0]]
    with pytest.raises(StateMismatch):
        alice_unveil_honest(0, state)


def test_unveil_message_validates_bit():
    with pytest.raises(InvalidParams):
        UnveilMessage(0, 3, ())


def test_sealed_record_orders_by_trial():
    setups = list(reversed(bob_prepare_trials(CFG.with_overrides(n_trials=6), SessionStreams(1))))
    sealed = SealedSlitRecord.from_setups(0, setups)
    assert sealed.choices == tuple(s.choice for s in reversed(setups))


def test_decay_times_stay_out_of_alice_notebook():
    cfg = CFG.with_overrides(n_trials=300)
    setups, transcript, state = _commit(1, cfg)
    assert "decay_times" not in alice_to_dict(state)

    records = trial_records(setups, transcript, state, cfg, SessionStreams(7))
    t1 = cfg.timeline.t1
    detected = [r for r in records if r.detected]
    assert detected
    assert all(r.decay_time > t1 for r in detected)
    assert all(r.decay_time > 0 for r in records)
