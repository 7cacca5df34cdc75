"""
Wave Packet Engine
==================
Transverse (1D) matter-wave dynamics for the double-slit apparatus.

Builds Gaussian packets, applies exact free-particle evolution in momentum
space, masks the wave with slit apertures, turns amplitudes into screen
patterns and samples detection positions from them.

Units are SI unless a caller passes hbar/mass explicitly (hbar = m = 1
gives the dimensionless mode used by the tests).
"""

import warnings
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import constants
from scipy.signal import find_peaks

from .errors import DegeneratePattern, FarFieldViolation, GridTooNarrow, InvalidParams


HBAR = constants.hbar
NEUTRON_MASS = constants.physical_constants["neutron mass"][0]

BOUNDARY_GUARD = 1e-12   # |psi| at the grid edge, relative to the peak
NORM_TOL = 1e-9


class SlitChoice(str, Enum):
    """Which slits of the apparatus are open."""
    BOTH = "Both"
    LEFT_ONLY = "LeftOnly"
    RIGHT_ONLY = "RightOnly"


class Slit(str, Enum):
    LEFT = "Left"
    RIGHT = "Right"


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid; x_i = center + (i - n/2) * dx."""
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        n = self.n_points
        if n < 2 or n & (n - 1):
            raise InvalidParams(f"n_points must be a power of two >= 2, got {n}")
        if not self.x_max > self.x_min:
            raise InvalidParams(f"x_max ({self.x_max}) must exceed x_min ({self.x_min})")

    @classmethod
    def symmetric(cls, half_width: float, n_points: int) -> "Grid":
        return cls(-half_width, half_width, n_points)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def center(self) -> float:
        return 0.5 * (self.x_min + self.x_max)

    @cached_property
    def x(self) -> np.ndarray:
        # integer offsets keep x_{n-i} == -x_i exactly on a symmetric grid
        return self.center + (np.arange(self.n_points) - self.n_points // 2) * self.dx

    @cached_property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    def index_of(self, positions) -> np.ndarray:
        """Nearest grid index for each position; -1 where it falls off the grid."""
        idx = np.rint((np.asarray(positions, dtype=float) - self.x_min) / self.dx).astype(np.int64)
        return np.where((idx >= 0) & (idx < self.n_points), idx, -1)


def _mirror(values: np.ndarray) -> np.ndarray:
    """Parity map i -> (n - i) mod n, i.e. x -> -x on a symmetric grid."""
    return np.roll(values[::-1], 1)


@dataclass
class ComplexField:
    grid: Grid
    amplitudes: np.ndarray
    all_blocked: bool = False

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (self.grid.n_points,):
            raise InvalidParams(
                f"amplitudes have shape {self.amplitudes.shape}, grid has {self.grid.n_points} points"
            )

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.sum(self.density()) * self.grid.dx)

    def is_normalized(self, tol: float = NORM_TOL) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def normalized(self) -> "ComplexField":
        norm = self.norm()
        if norm <= 0.0:
            raise DegeneratePattern("cannot normalize a field with zero norm")
        return ComplexField(self.grid, self.amplitudes / np.sqrt(norm))

    def centroid(self) -> float:
        rho = self.density()
        return float(np.sum(self.grid.x * rho) / np.sum(rho))

    def width(self) -> float:
        """Standard deviation of |psi|^2."""
        rho = self.density()
        mean = np.sum(self.grid.x * rho) / np.sum(rho)
        return float(np.sqrt(np.sum((self.grid.x - mean) ** 2 * rho) / np.sum(rho)))

    def mirrored(self) -> "ComplexField":
        return ComplexField(self.grid, _mirror(self.amplitudes), self.all_blocked)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "x_m": self.grid.x,
            "re": self.amplitudes.real,
            "im": self.amplitudes.imag,
        })


@dataclass(frozen=True)
class PacketParams:
    sigma0: float
    x0: float = 0.0
    p0: float = 0.0
    mass: float = NEUTRON_MASS

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise InvalidParams(f"sigma0 must be positive, got {self.sigma0}")
        if not self.mass > 0:
            raise InvalidParams(f"mass must be positive, got {self.mass}")


@dataclass(frozen=True)
class ApertureMask:
    """
    Two slits of width a whose centres sit at center -/+ d/2.

    edge_softness > 0 replaces each hard edge by a raised-cosine ramp of that
    total width, centred on the nominal edge.
    """
    slit_width: float
    slit_separation: float
    open: SlitChoice = SlitChoice.BOTH
    edge_softness: float = 0.0
    center: float = 0.0

    def __post_init__(self):
        if not self.slit_width > 0:
            raise InvalidParams(f"slit_width must be positive, got {self.slit_width}")
        if not self.slit_separation > self.slit_width:
            raise InvalidParams("slit_separation must exceed slit_width (slits would overlap)")
        if self.edge_softness < 0:
            raise InvalidParams("edge_softness must be >= 0")
        if self.edge_softness > self.slit_width:
            raise InvalidParams("edge_softness cannot exceed slit_width")
        if self.edge_softness > 0 and self.slit_separation < self.slit_width + self.edge_softness:
            raise InvalidParams("softened slit edges overlap")

    def with_open(self, opening: SlitChoice) -> "ApertureMask":
        return replace(self, open=SlitChoice(opening))

    def slit_center(self, slit: Slit) -> float:
        half = 0.5 * self.slit_separation
        return self.center - half if slit is Slit.LEFT else self.center + half

    def open_slits(self) -> Tuple[Slit, ...]:
        if self.open is SlitChoice.LEFT_ONLY:
            return (Slit.LEFT,)
        if self.open is SlitChoice.RIGHT_ONLY:
            return (Slit.RIGHT,)
        return (Slit.LEFT, Slit.RIGHT)

    def slit_profile(self, grid: Grid, slit: Slit) -> np.ndarray:
        """Transmission of one slit, ignoring whether it is open."""
        u = np.abs(grid.x - self.slit_center(slit))
        half = 0.5 * self.slit_width
        soft = self.edge_softness
        if soft == 0.0:
            return (u <= half).astype(float)
        inner = half - 0.5 * soft
        ramp = 0.5 * (1.0 + np.cos(np.pi * (u - inner) / soft))
        return np.where(u <= inner, 1.0, np.where(u >= inner + soft, 0.0, ramp))

    def region(self, grid: Grid, slit: Slit) -> np.ndarray:
        return self.slit_profile(grid, slit) > 0.0

    def profile(self, grid: Grid) -> np.ndarray:
        values = np.zeros(grid.n_points)
        for slit in self.open_slits():
            values += self.slit_profile(grid, slit)
        return values


@dataclass
class ScreenPattern:
    grid: Grid
    intensity: np.ndarray
    total_weight: float

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=float)
        if self.intensity.shape != (self.grid.n_points,):
            raise InvalidParams("intensity length does not match the grid")
        if np.any(self.intensity < 0):
            raise InvalidParams("intensity must be non-negative")

    @classmethod
    def from_values(cls, grid: Grid, values: np.ndarray) -> "ScreenPattern":
        """Build a normalized pattern from non-negative values (tiny negatives are clipped)."""
        values = np.clip(np.asarray(values, dtype=float), 0.0, None)
        total = float(np.sum(values) * grid.dx)
        if total <= 0.0:
            return cls(grid, values, 0.0)
        return cls(grid, values / total, 1.0)

    def is_normalized(self, tol: float = NORM_TOL) -> bool:
        return abs(float(np.sum(self.intensity) * self.grid.dx) - 1.0) <= tol

    def bin_weights(self) -> np.ndarray:
        """Probability mass of each grid bin."""
        if self.total_weight <= 0.0:
            raise DegeneratePattern("pattern has zero total weight")
        weights = self.intensity * self.grid.dx
        return weights / np.sum(weights)

    @cached_property
    def cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.bin_weights())
        return cdf / cdf[-1]

    def density_at(self, positions) -> np.ndarray:
        idx = self.grid.index_of(positions)
        values = np.where(idx >= 0, self.intensity[np.maximum(idx, 0)], 0.0)
        return values / self.total_weight if self.total_weight > 0 else values

    def quantile(self, q: float) -> float:
        idx = int(np.searchsorted(self.cdf, q, side="left"))
        return float(self.grid.x[min(idx, self.grid.n_points - 1)])

    def interquantile_width(self, low: float = 0.25, high: float = 0.75) -> float:
        return self.quantile(high) - self.quantile(low)

    def centroid(self) -> float:
        w = self.bin_weights()
        return float(np.sum(self.grid.x * w))

    def mirrored(self) -> "ScreenPattern":
        return ScreenPattern(self.grid, _mirror(self.intensity), self.total_weight)

    def window(self, lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
        sel = (self.grid.x >= lo) & (self.grid.x <= hi)
        return self.grid.x[sel], self.intensity[sel]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x_m": self.grid.x, "intensity": self.intensity})


class SlitMeasurement(NamedTuple):
    slit: Slit
    collapsed: ComplexField


def longitudinal_momentum(wavelength: float, hbar: float = HBAR) -> float:
    """de Broglie momentum p = h / lambda."""
    return 2.0 * np.pi * hbar / wavelength


def flight_time(distance: float, wavelength: float, mass: float, hbar: float = HBAR) -> float:
    return distance * mass / longitudinal_momentum(wavelength, hbar)


def gaussian_width(sigma0: float, mass: float, t: float, hbar: float = HBAR) -> float:
    """Analytic width of a free Gaussian packet after time t."""
    return sigma0 * np.sqrt(1.0 + (hbar * t / (2.0 * mass * sigma0 ** 2)) ** 2)


def make_gaussian_packet(params: PacketParams, grid: Grid, hbar: float = HBAR) -> ComplexField:
    """
    Prepare a normalized Gaussian packet exp(-(x-x0)^2 / 4 sigma0^2 + i p0 x / hbar).

    Raises:
        GridTooNarrow: if |psi| at either grid edge exceeds BOUNDARY_GUARD * peak
        InvalidParams: if the grid cannot resolve the phase gradient p0 / hbar
    """
    if abs(params.p0) / hbar >= np.pi / grid.dx:
        raise InvalidParams("grid spacing too coarse for the packet momentum")

    x = grid.x
    envelope = np.exp(-((x - params.x0) ** 2) / (4.0 * params.sigma0 ** 2))
    peak = envelope.max()
    if max(envelope[0], envelope[-1]) >= BOUNDARY_GUARD * peak:
        raise GridTooNarrow(
            f"packet (sigma0={params.sigma0}, x0={params.x0}) does not vanish on "
            f"[{grid.x_min}, {grid.x_max}]"
        )

    psi = envelope * np.exp(1j * params.p0 * x / hbar)
    return ComplexField(grid, psi).normalized()


def evolve_free(field: ComplexField, mass: float, dt: float, hbar: float = HBAR) -> ComplexField:
    """
    Apply exp(-i H dt / hbar) with H = p^2 / 2m exactly in momentum space.

    dt == 0 returns the input object untouched.
    """
    if not mass > 0:
        raise InvalidParams(f"mass must be positive, got {mass}")
    if dt < 0:
        raise InvalidParams(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return field

    k = field.grid.k
    propagator = np.exp(-0.5j * hbar * k ** 2 * dt / mass)
    psi = np.fft.ifft(np.fft.fft(field.amplitudes) * propagator)
    return ComplexField(field.grid, psi, field.all_blocked)


def fresnel_propagate(field: ComplexField, mass: float, dt: float, hbar: float = HBAR) -> ComplexField:
    """
    Free evolution by a single-FFT Fresnel transform onto a time-scaled grid.

    The output grid spacing is 2 pi hbar dt / (m n dx), so the result can be
    arbitrarily wide; use it for long flights where evolve_free would wrap.
    The input must be compactly supported (e.g. post-aperture) so that the
    chirp exp(i m x^2 / 2 hbar dt) is sampled on its support.
    """
    if not mass > 0 or not dt > 0:
        raise InvalidParams("fresnel_propagate needs mass > 0 and dt > 0")

    grid = field.grid
    n, dx = grid.n_points, grid.dx
    beta = mass / (2.0 * hbar * dt)
    x_in = grid.x

    support = np.abs(field.amplitudes) > BOUNDARY_GUARD * np.abs(field.amplitudes).max()
    if np.any(support) and 2.0 * beta * np.abs(x_in[support]).max() * dx > np.pi:
        raise InvalidParams("Fresnel chirp undersampled on the field support; use evolve_free")

    spacing = 2.0 * np.pi * hbar * dt / (mass * n * dx)
    out_grid = Grid.symmetric(0.5 * n * spacing, n)
    x_out = out_grid.x

    chirped = field.amplitudes * np.exp(1j * beta * x_in ** 2)
    # centred DFT: kernel exp(-2 pi i (l - n/2)(j - n/2) / n)
    spectrum = np.fft.fftshift(np.fft.fft(np.fft.ifftshift(chirped)))
    shift = np.exp(-2j * beta * x_out * grid.center)
    prefactor = np.sqrt(mass / (2j * np.pi * hbar * dt))
    psi = prefactor * np.exp(1j * beta * x_out ** 2) * shift * spectrum * dx
    return ComplexField(out_grid, psi, field.all_blocked)


def apply_aperture(
    field: ComplexField,
    mask: Union[ApertureMask, np.ndarray],
) -> Tuple[ComplexField, float]:
    """
    Multiply the field by the aperture transmission.

    Args:
        field: normalized field at the slit plane
        mask: an ApertureMask, or a raw transmission profile with values in [0, 1]

    Returns:
        (renormalized transmitted field, transmitted fraction). The fraction is
        the post-mask norm and realizes the per-trial pass probability alpha.
        A fully blocked field comes back as zeros with all_blocked set.
    """
    grid = field.grid
    if isinstance(mask, ApertureMask):
        transmission = mask.profile(grid)
    else:
        transmission = np.asarray(mask, dtype=float)
        if transmission.shape != (grid.n_points,):
            raise InvalidParams("transmission profile does not match the grid")
    if np.any(transmission < 0) or np.any(transmission > 1):
        raise InvalidParams("mask values must lie in [0, 1]")

    if np.all(transmission == 1.0):
        return field, 1.0

    masked = field.amplitudes * transmission
    fraction = float(np.sum(np.abs(masked) ** 2) * grid.dx)
    fraction = min(max(fraction, 0.0), 1.0)
    if fraction == 0.0:
        return ComplexField(grid, np.zeros(grid.n_points), all_blocked=True), 0.0
    return ComplexField(grid, masked / np.sqrt(fraction)), fraction


def intensity(field: ComplexField) -> ScreenPattern:
    """Born-rule pattern |psi|^2 on the field's grid."""
    return ScreenPattern.from_values(field.grid, field.density())


def analytic_fraunhofer(
    mask: ApertureMask,
    wavelength: float,
    L: float,
    grid: Grid,
) -> ScreenPattern:
    """
    Closed-form far-field pattern used as an oracle for the numeric propagator.

    Both open:   cos^2(pi d x / lambda L) * sinc^2(pi a x / lambda L)
    One open:    the sinc^2 envelope, centred on that slit's projection.
    Fringe spacing is lambda L / d.
    """
    far_field_distance = mask.slit_separation ** 2 / wavelength
    if L <= far_field_distance:
        warnings.warn(
            f"L = {L} m is not >> d^2/lambda = {far_field_distance:.3g} m",
            FarFieldViolation,
            stacklevel=2,
        )

    x = grid.x
    scale = wavelength * L
    if mask.open is SlitChoice.BOTH:
        values = (
            np.cos(np.pi * mask.slit_separation * (x - mask.center) / scale) ** 2
            * np.sinc(mask.slit_width * (x - mask.center) / scale) ** 2
        )
    else:
        slit = mask.open_slits()[0]
        values = np.sinc(mask.slit_width * (x - mask.slit_center(slit)) / scale) ** 2
    return ScreenPattern.from_values(grid, values)


def sample_positions(pattern: ScreenPattern, rng: np.random.Generator, size: Optional[int] = None):
    """Inverse-CDF draws of bin centres; returns a float when size is None."""
    if not pattern.total_weight > 0:
        raise DegeneratePattern("cannot sample from a pattern with zero weight")
    u = rng.random(size)
    idx = np.minimum(np.searchsorted(pattern.cdf, u, side="right"), pattern.grid.n_points - 1)
    positions = pattern.grid.x[idx]
    return float(positions) if size is None else positions


def sample_position(pattern: ScreenPattern, rng: np.random.Generator) -> float:
    return sample_positions(pattern, rng)


def which_slit_probability(field_at_slits: ComplexField, mask: ApertureMask) -> float:
    """Probability that a which-slit measurement finds the particle in the left slit."""
    rho = field_at_slits.density()
    grid = field_at_slits.grid
    w_left = float(np.sum(rho[mask.region(grid, Slit.LEFT)]))
    w_right = float(np.sum(rho[mask.region(grid, Slit.RIGHT)]))
    total = w_left + w_right
    if total <= 0.0:
        raise DegeneratePattern("no amplitude inside either slit")
    return w_left / total


def which_slit_measure(
    field_at_slits: ComplexField,
    mask: ApertureMask,
    rng: np.random.Generator,
) -> SlitMeasurement:
    """
    Projective which-slit measurement at the slit plane.

    Returns the slit found and the collapsed state: the field restricted to
    that slit's support, renormalized.
    """
    p_left = which_slit_probability(field_at_slits, mask)
    slit = Slit.LEFT if rng.random() < p_left else Slit.RIGHT
    region = mask.region(field_at_slits.grid, slit)
    collapsed = ComplexField(field_at_slits.grid, np.where(region, field_at_slits.amplitudes, 0.0))
    return SlitMeasurement(slit, collapsed.normalized())


def fringe_spacing(pattern: ScreenPattern, window: Tuple[float, float]) -> float:
    """
    Mean distance between interference minima inside the window.

    Minima are located by parabolic interpolation and the spacing is the
    slope of a straight-line fit of position against minimum index; minima
    are unbiased by the slowly varying envelope, unlike maxima.
    """
    xs, ys = pattern.window(*window)
    if ys.size < 3 or ys.max() <= 0:
        raise DegeneratePattern("window holds no pattern")
    minima, _ = find_peaks(-ys, prominence=1e-3 * ys.max())
    if minima.size < 2:
        raise DegeneratePattern("fewer than two fringe minima in window")

    dx = pattern.grid.dx
    positions = []
    for i in minima:
        y0, y1, y2 = ys[i - 1], ys[i], ys[i + 1]
        curvature = y0 - 2.0 * y1 + y2
        offset = 0.5 * (y0 - y2) / curvature if curvature != 0 else 0.0
        positions.append(xs[i] + offset * dx)
    slope, _ = np.polyfit(np.arange(len(positions)), positions, 1)
    return float(slope)
