"""
Protocol Configuration
======================
Validated, immutable run configuration shared by every module.

Config files are flat `key = value` lines (`#` starts a comment) read with
python-dotenv; keys are the ProtocolConfig field names. Times, grid extent
and the commit/unveil schedule are derived from the geometry unless given.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Union

import numpy as np
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .decay import NEUTRON_LIFETIME, DecayParams
from .errors import ConfigError, ConfigGuard, InvalidParams
from .wavepacket import (
    HBAR,
    NEUTRON_MASS,
    ApertureMask,
    Grid,
    PacketParams,
    SlitChoice,
    flight_time,
)


DEFAULT_WORKERS = int(os.getenv("QBC_WORKERS", "4"))

GRID_ENVELOPE_LOBES = 16   # default half-width in units of lambda L / a


class Timeline(NamedTuple):
    t0: float
    t1: float
    commit_end: float
    unveil_time: float


class ProtocolConfig(BaseModel):
    """All physical, protocol and verifier parameters of a run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    # protocol
    n_trials: int = 200
    p_both: float = 0.5
    alpha_override: Optional[float] = None

    # apparatus
    wavelength: float = 1.845e-9
    slit_width: float = 2.2e-5
    slit_separation: float = 1.0e-4
    edge_softness: float = 0.0
    screen_distance: float = 5.0
    source_distance: float = 5.0
    packet_sigma: float = 5.0e-5
    packet_x0: float = 0.0
    packet_p0: float = 0.0
    mass: float = NEUTRON_MASS
    hbar: float = HBAR
    grid_points: int = 16384
    grid_half_width: Optional[float] = None

    # schedule
    t0: Optional[float] = None
    t1: Optional[float] = None
    tau: float = NEUTRON_LIFETIME
    commit_end: Optional[float] = None
    unveil_time: Optional[float] = None
    t1_guard_ratio: float = 0.01

    # verifier
    epsilon_v: float = 0.001
    count_sigma: float = 4.0

    # detector
    detection_efficiency: float = 1.0
    position_jitter: float = 0.0
    dark_count_prob: float = 0.0
    announce_at_detection: bool = False

    @model_validator(mode="after")
    def _check_ranges(self) -> "ProtocolConfig":
        if self.n_trials < 1:
            raise InvalidParams(f"n_trials must be >= 1, got {self.n_trials}")
        for name in ("wavelength", "slit_width", "screen_distance", "source_distance",
                     "packet_sigma", "mass", "hbar", "tau", "t1_guard_ratio", "count_sigma"):
            if not getattr(self, name) > 0:
                raise InvalidParams(f"{name} must be positive, got {getattr(self, name)}")
        if not self.slit_separation > self.slit_width:
            raise InvalidParams("slit_separation must exceed slit_width")
        n = self.grid_points
        if n < 2 or n & (n - 1):
            raise InvalidParams(f"grid_points must be a power of two >= 2, got {n}")
        if self.grid_half_width is not None and not self.grid_half_width > 0:
            raise InvalidParams("grid_half_width must be positive")
        if not 0.0 <= self.p_both <= 1.0:
            raise InvalidParams(f"p_both must lie in [0, 1], got {self.p_both}")
        if self.alpha_override is not None and not 0.0 < self.alpha_override <= 1.0:
            raise InvalidParams(f"alpha_override must lie in (0, 1], got {self.alpha_override}")
        if not 0.0 < self.epsilon_v < 1.0:
            raise InvalidParams(f"epsilon_v must lie in (0, 1), got {self.epsilon_v}")
        if not 0.0 < self.detection_efficiency <= 1.0:
            raise InvalidParams("detection_efficiency must lie in (0, 1]")
        if not 0.0 <= self.dark_count_prob < 1.0:
            raise InvalidParams("dark_count_prob must lie in [0, 1)")
        if self.position_jitter < 0 or self.edge_softness < 0:
            raise InvalidParams("position_jitter and edge_softness must be >= 0")

        t0, t1, commit_end, unveil = self.timeline
        if not 0.0 < t0 < t1 < commit_end <= unveil:
            raise InvalidParams(
                f"schedule must satisfy 0 < t0 < t1 < commit_end <= T, got "
                f"t0={t0}, t1={t1}, commit_end={commit_end}, T={unveil}"
            )
        return self

    # ---- derived quantities ---------------------------------------------

    @property
    def timeline(self) -> Timeline:
        t0 = self.t0 if self.t0 is not None else flight_time(
            self.source_distance, self.wavelength, self.mass, self.hbar)
        t1 = self.t1 if self.t1 is not None else t0 + flight_time(
            self.screen_distance, self.wavelength, self.mass, self.hbar)
        commit_end = self.commit_end if self.commit_end is not None else self.tau
        unveil = self.unveil_time if self.unveil_time is not None else commit_end
        return Timeline(t0, t1, commit_end, unveil)

    @property
    def decay(self) -> DecayParams:
        return DecayParams(self.tau)

    @property
    def packet(self) -> PacketParams:
        return PacketParams(self.packet_sigma, self.packet_x0, self.packet_p0, self.mass)

    def mask(self, opening: Union[SlitChoice, str] = SlitChoice.BOTH) -> ApertureMask:
        return ApertureMask(
            slit_width=self.slit_width,
            slit_separation=self.slit_separation,
            open=SlitChoice(opening),
            edge_softness=self.edge_softness,
        )

    def grid(self) -> Grid:
        """
        Transverse grid shared by the slit plane and the screen.

        By default wide enough that the diffraction envelope and every
        representable momentum stay on the grid at t1 (no periodic wrap).
        """
        if self.grid_half_width is not None:
            return Grid.symmetric(self.grid_half_width, self.grid_points)
        scale = self.wavelength * self.screen_distance
        half_width = max(
            GRID_ENVELOPE_LOBES * scale / self.slit_width,
            1.05 * np.sqrt(scale * self.grid_points / 4.0),
        )
        return Grid.symmetric(float(half_width), self.grid_points)

    def slit_probabilities(self) -> Dict[SlitChoice, float]:
        single = 0.5 * (1.0 - self.p_both)
        return {SlitChoice.BOTH: self.p_both, SlitChoice.LEFT_ONLY: single, SlitChoice.RIGHT_ONLY: single}

    def check_timing_guard(self) -> None:
        """Raise ConfigGuard unless t1 <= t1_guard_ratio * tau."""
        t1 = self.timeline.t1
        limit = self.t1_guard_ratio * self.tau
        if t1 > limit:
            raise ConfigGuard(f"t1 = {t1:.4g} s exceeds {self.t1_guard_ratio} * tau = {limit:.4g} s")

    def with_overrides(self, **overrides: Any) -> "ProtocolConfig":
        """Copy with some keys replaced; the result is validated again."""
        values = self.model_dump()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ProtocolConfig(**values)


def config_hash(config: ProtocolConfig) -> str:
    payload = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def config_keys() -> Dict[str, Any]:
    """Key -> default, for --help listings."""
    return {name: field.default for name, field in ProtocolConfig.model_fields.items()}


def load_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> ProtocolConfig:
    """
    Read a flat key-value config file and apply overrides.

    Args:
        path: config file; None means defaults only
        overrides: keys that win over the file (None values are ignored)

    Raises:
        ConfigError: unreadable file, unknown key or unparseable value
        InvalidParams: values parse but violate range/ordering rules
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        raw = dotenv_values(path)
        unknown = sorted(set(raw) - set(ProtocolConfig.model_fields))
        if unknown:
            raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
        values.update({k: v for k, v in raw.items() if v not in (None, "")})

    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ProtocolConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}") from e
