"""
Double-Slit Apparatus
=====================
The physical side of a trial: the neutron's transverse wave at the slit
plane, the aperture for each slit setting, decay in flight and the
patterns a screen or a which-slit detector would register.

All N setups are identical apart from Bob's slit setting, so the waves
and patterns are computed once per configuration and shared (read-only)
by every trial, session and thread.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .config import ProtocolConfig
from .decay import sample_decay_time, survival_probability
from .wavepacket import (
    ComplexField,
    ScreenPattern,
    Slit,
    SlitChoice,
    SlitMeasurement,
    apply_aperture,
    evolve_free,
    fresnel_propagate,
    intensity,
    make_gaussian_packet,
    sample_position,
    which_slit_measure,
    which_slit_probability,
)


LIKELIHOOD_FLOOR = 1e-12   # relative to the most probable bin


class Transit(NamedTuple):
    """What nature does to one neutron: pass the slits or not, and when it decays."""
    transmitted: bool
    decay_time: float


@dataclass(frozen=True)
class ScoreTable:
    """Per-bin score plus its mean and variance under the null pattern."""
    scores: np.ndarray
    mean: float
    variance: float

    @classmethod
    def log_ratio(cls, null: ScreenPattern, alternative: ScreenPattern) -> "ScoreTable":
        """log(null / alternative) per bin, both floored at LIKELIHOOD_FLOOR of their peak."""
        p = null.bin_weights()
        q = alternative.bin_weights()
        scores = np.log(np.maximum(p, LIKELIHOOD_FLOOR * p.max())) - np.log(np.maximum(q, LIKELIHOOD_FLOOR * q.max()))
        mean = float(np.sum(p * scores))
        variance = float(np.sum(p * (scores - mean) ** 2))
        return cls(scores, mean, variance)

    def score(self, grid, positions) -> np.ndarray:
        """Scores of screen positions; positions off the grid get the lowest score."""
        idx = grid.index_of(positions)
        return np.where(idx >= 0, self.scores[np.maximum(idx, 0)], self.scores.min())


class DoubleSlitApparatus:
    """
    Precomputed waves for one configuration.

    Attributes:
        slit_field: normalized wave arriving at the slit plane at t0
        transmitted: post-aperture wave per slit setting
        alpha: transmission probability per slit setting
        screen: pattern at t1 per slit setting
        collapsed_screen: pattern at t1 after a which-slit measurement found each slit
        observed_screen: distribution of honest b=1 data per slit setting, with
            detector jitter and dark counts folded in
        fringe_score: log-ratio of the observed Both pattern against the
            collapsed-envelope mixture a which-slit measurement leaves behind
    """

    def __init__(self, config: ProtocolConfig):
        self.config = config
        self.grid = config.grid()
        self.timeline = config.timeline
        t0, t1 = self.timeline.t0, self.timeline.t1

        source = make_gaussian_packet(config.packet, self.grid, config.hbar)
        self.slit_field = evolve_free(source, config.mass, t0, config.hbar)

        self.transmitted: Dict[SlitChoice, ComplexField] = {}
        self.alpha: Dict[SlitChoice, float] = {}
        self.screen: Dict[SlitChoice, ScreenPattern] = {}
        self.p_left: Dict[SlitChoice, float] = {}

        for choice in SlitChoice:
            field, fraction = apply_aperture(self.slit_field, config.mask(choice))
            self.transmitted[choice] = field
            self.alpha[choice] = config.alpha_override if config.alpha_override is not None else fraction
            self.screen[choice] = intensity(evolve_free(field, config.mass, t1 - t0, config.hbar))
            self.p_left[choice] = which_slit_probability(field, config.mask(choice))

        self.collapsed_screen: Dict[Slit, ScreenPattern] = {}
        both = self.transmitted[SlitChoice.BOTH]
        mask = config.mask(SlitChoice.BOTH)
        for slit in Slit:
            region = mask.region(self.grid, slit)
            collapsed = ComplexField(self.grid, np.where(region, both.amplitudes, 0.0)).normalized()
            self.collapsed_screen[slit] = intensity(evolve_free(collapsed, config.mass, t1 - t0, config.hbar))

        self.observed_screen: Dict[SlitChoice, ScreenPattern] = {
            choice: self._as_observed(self.screen[choice], choice) for choice in SlitChoice
        }
        p = self.p_left[SlitChoice.BOTH]
        envelopes = ScreenPattern.from_values(
            self.grid,
            p * self.collapsed_screen[Slit.LEFT].intensity + (1.0 - p) * self.collapsed_screen[Slit.RIGHT].intensity,
        )
        self.collapsed_mixture = self._as_observed(envelopes, SlitChoice.BOTH)
        self.fringe_score = ScoreTable.log_ratio(self.observed_screen[SlitChoice.BOTH], self.collapsed_mixture)

    def _as_observed(self, pattern: ScreenPattern, choice: SlitChoice) -> ScreenPattern:
        """Blur by the position jitter and mix in uniform dark-count positions."""
        values = pattern.intensity
        if self.config.position_jitter > 0:
            values = gaussian_filter1d(values, self.config.position_jitter / self.grid.dx, mode="constant")
        blurred = ScreenPattern.from_values(self.grid, values)
        dark = self.dark_fraction(choice, 1)
        if dark == 0.0:
            return blurred
        uniform = 1.0 / (self.grid.n_points * self.grid.dx)
        return ScreenPattern.from_values(self.grid, (1.0 - dark) * blurred.intensity + dark * uniform)

    # ---- nature -----------------------------------------------------------

    def transit(self, choice: SlitChoice, world_rng: np.random.Generator) -> Transit:
        """Draw transmission and decay time; always consumes exactly two draws."""
        transmitted = bool(world_rng.random() < self.alpha[choice])
        decay_time = sample_decay_time(world_rng, self.config.decay)
        return Transit(transmitted, decay_time)

    def detection_time(self, b: int) -> float:
        """Alice's measurement happens at the slits (b=0) or at the screen (b=1)."""
        return self.timeline.t0 if b == 0 else self.timeline.t1

    def real_detection_probability(self, choice: SlitChoice, b: int) -> float:
        cfg = self.config
        return self.alpha[choice] * survival_probability(self.detection_time(b), cfg.decay) * cfg.detection_efficiency

    def detection_probability(self, choice: SlitChoice, b: int) -> float:
        real = self.real_detection_probability(choice, b)
        return real + (1.0 - real) * self.config.dark_count_prob

    def dark_fraction(self, choice: SlitChoice, b: int) -> float:
        """Probability that an honest detection under this setting is a dark count."""
        total = self.detection_probability(choice, b)
        if total <= 0.0:
            return 0.0
        return (total - self.real_detection_probability(choice, b)) / total

    def slit_mismatch_rate(self, choice: SlitChoice) -> float:
        """Chance that an honest b=0 claim on a single-slit trial names the closed slit."""
        return 0.5 * self.dark_fraction(choice, 0)

    def claim_left_probability(self) -> float:
        """Chance that an honest b=0 claim on a Both trial is Left."""
        dark = self.dark_fraction(SlitChoice.BOTH, 0)
        return (1.0 - dark) * self.p_left[SlitChoice.BOTH] + 0.5 * dark

    # ---- detectors --------------------------------------------------------

    def measure_which_slit(self, choice: SlitChoice, rng: np.random.Generator) -> SlitMeasurement:
        return which_slit_measure(self.transmitted[choice], self.config.mask(choice), rng)

    def detect_on_screen(self, choice: SlitChoice, rng: np.random.Generator) -> float:
        position = sample_position(self.screen[choice], rng)
        if self.config.position_jitter > 0:
            position += float(rng.normal(0.0, self.config.position_jitter))
        return position

    def detect_collapsed(self, slit: Slit, rng: np.random.Generator) -> float:
        """Screen position of a neutron already localized to one slit."""
        return sample_position(self.collapsed_screen[slit], rng)

    def delayed_pattern(self, choice: SlitChoice, measure_time: float) -> ScreenPattern:
        """Pattern of a wave left to spread freely until measure_time (s)."""
        return _delayed_pattern(self, choice, float(measure_time))

    def dark_count_position(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.grid.x_min, self.grid.x_max))


@lru_cache(maxsize=32)
def _delayed_pattern(apparatus: DoubleSlitApparatus, choice: SlitChoice, measure_time: float) -> ScreenPattern:
    cfg = apparatus.config
    dt = measure_time - apparatus.timeline.t0
    return intensity(fresnel_propagate(apparatus.transmitted[choice], cfg.mass, dt, cfg.hbar))


@lru_cache(maxsize=8)
def build_apparatus(config: ProtocolConfig) -> DoubleSlitApparatus:
    return DoubleSlitApparatus(config)
