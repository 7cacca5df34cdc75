import numpy as np
import pytest

from qbcsim.adversaries import BitFlipGuess, DelayedMeasurement, cheat_delayed
from qbcsim.apparatus import build_apparatus
from qbcsim.config import ProtocolConfig, config_hash
from qbcsim.errors import InvalidParams
from qbcsim.experiments import SweepPoint, fit_log2_slope
from qbcsim.protocol import bob_prepare_trials
from qbcsim.rng import SessionStreams
from qbcsim.serialization import transcript_to_dict
from qbcsim.session import HonestStrategy, build_strategy, run_session
from qbcsim.verifier import QuantileTable, RejectionReason
from qbcsim.wavepacket import SlitChoice


def _table(cfg):
    return QuantileTable(config_hash(cfg), seed=0, sessions=1001, samples=np.linspace(-4.0, 4.0, 1001))


def test_bitflip_requires_a_flip():
    with pytest.raises(InvalidParams):
        BitFlipGuess(0, 0)
    with pytest.raises(InvalidParams):
        BitFlipGuess(0, 1, guess_rule="psychic")
    assert BitFlipGuess.flipping(1).unveiled_b == 0


def test_delayed_validates_parameters():
    with pytest.raises(InvalidParams):
        DelayedMeasurement(1.0, announce_fraction=0.0)
    with pytest.raises(InvalidParams):
        DelayedMeasurement(1.0, unveil_b=2)


def test_build_strategy_names():
    assert build_strategy("honest", 1) == HonestStrategy(1)
    assert build_strategy("bitflip-random", 1).guess_rule == "random"
    with pytest.raises(InvalidParams):
        build_strategy("delayed", 1)
    with pytest.raises(InvalidParams):
        build_strategy("teleport", 0)


def test_guessed_slits_are_rejected():
    cfg = ProtocolConfig(n_trials=200)
    strategy = BitFlipGuess.flipping(1, "random")
    outcomes = [run_session(cfg, strategy, SessionStreams(4, i)) for i in range(30)]
    rejected = [o for o in outcomes if not o.verdict.accept]
    assert len(rejected) >= 27
    assert all(o.verdict.rejection_reason is RejectionReason.SLIT_MISMATCH for o in rejected)


def test_cheating_transcript_looks_honest():
    cfg = ProtocolConfig(n_trials=40)
    honest = run_session(cfg, HonestStrategy(1), SessionStreams(3), _table(cfg))
    flip = run_session(cfg, BitFlipGuess.flipping(0), SessionStreams(3), _table(cfg))
    delayed = run_session(cfg, DelayedMeasurement(cfg.timeline.commit_end), SessionStreams(3), _table(cfg))
    shapes = [transcript_to_dict(o.transcript) for o in (honest, flip, delayed)]
    assert all(s.keys() == shapes[0].keys() for s in shapes)
    stamps = [{a["time"] for a in s["announcements"]} for s in shapes]
    assert stamps[0] == stamps[1] == stamps[2]


def test_delayed_measurement_must_wait_past_the_screen():
    cfg = ProtocolConfig(n_trials=5)
    setups = bob_prepare_trials(cfg, SessionStreams(0))
    with pytest.raises(InvalidParams):
        cheat_delayed(DelayedMeasurement(0.9 * cfg.timeline.t1), setups, cfg, SessionStreams(0))


def test_delayed_pattern_keeps_spreading():
    cfg = ProtocolConfig()
    apparatus = build_apparatus(cfg)
    t0, t1 = apparatus.timeline.t0, apparatus.timeline.t1
    later = t0 + 4.0 * (t1 - t0)
    honest = apparatus.screen[SlitChoice.LEFT_ONLY].interquantile_width()
    spread = apparatus.delayed_pattern(SlitChoice.LEFT_ONLY, later).interquantile_width()
    assert spread / honest == pytest.approx(4.0, rel=0.05)


def test_delayed_metrics_report_spreading():
    cfg = ProtocolConfig(n_trials=20)
    later = cfg.timeline.t0 + 3.0 * (cfg.timeline.t1 - cfg.timeline.t0)
    setups = bob_prepare_trials(cfg, SessionStreams(2))
    _, unveil, metrics = cheat_delayed(DelayedMeasurement(later), setups, cfg, SessionStreams(2))
    assert metrics["far_field_ratio"] == pytest.approx(3.0)
    assert metrics["pattern_width_ratio"] > 1.5
    assert unveil.b == 1


def test_log2_slope_fit():
    points = [SweepPoint(n, 100, 2.0 ** (-0.1 * n), 0.0, 0.1) for n in (10, 20, 40)]
    assert fit_log2_slope(points) == pytest.approx(-0.1)
    assert fit_log2_slope(points[:1]) is None
