"""
Statistics Toolkit
==================
Tail probabilities, goodness-of-fit and distance estimators used by the
verifier and the experiment harness.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple, Tuple

import numpy as np
from scipy import special
from scipy.signal import find_peaks
from scipy.stats import binom

from .errors import DegeneratePattern, InvalidParams
from .wavepacket import ScreenPattern


BINOMIAL_TIE_TOL = 1e-7    # relative tolerance when collecting outcomes as extreme as the observed one
GOF_MIN_SAMPLES = 10
GOF_MAX_BINS = 10
EXTREMUM_PROMINENCE = 1e-9


def chi_square_sf(x: float, k: float) -> float:
    """Survival function of the chi-square distribution with k degrees of freedom."""
    if x < 0 or k < 1:
        raise InvalidParams(f"chi_square_sf needs x >= 0 and k >= 1, got x={x}, k={k}")
    return float(special.gammaincc(0.5 * k, 0.5 * x))


def binomial_two_sided(successes: int, n: int, p0: float) -> float:
    """
    Exact two-sided binomial p-value: total probability of all outcomes no
    more likely than the observed one.
    """
    if n < 0 or not 0 <= successes <= n:
        raise InvalidParams(f"need 0 <= successes <= n, got {successes} of {n}")
    if not 0.0 < p0 < 1.0:
        raise InvalidParams(f"p0 must lie in (0, 1), got {p0}")
    pmf = binom.pmf(np.arange(n + 1), n, p0)
    observed = pmf[successes]
    return float(min(1.0, pmf[pmf <= observed * (1.0 + BINOMIAL_TIE_TOL)].sum()))


def binomial_upper_tail(successes: int, n: int, p0: float) -> float:
    """P(X >= successes) for X ~ Binomial(n, p0)."""
    if n < 0 or not 0 <= successes <= n:
        raise InvalidParams(f"need 0 <= successes <= n, got {successes} of {n}")
    if not 0.0 <= p0 <= 1.0:
        raise InvalidParams(f"p0 must lie in [0, 1], got {p0}")
    return float(binom.sf(successes - 1, n, p0))


def fringe_contrast(pattern: ScreenPattern, window: Tuple[float, float]) -> float:
    """
    Visibility (max - min) / (max + min) of the fringes inside a window.

    max is the highest local maximum and min the lowest local minimum. A
    window with extrema of one kind only (a single smooth lobe) has no
    fringes and scores 0; so does a flat window.
    """
    lo, hi = window
    if lo >= hi or hi < pattern.grid.x_min or lo > pattern.grid.x_max:
        raise InvalidParams(f"window {window} does not overlap the grid")
    _, values = pattern.window(lo, hi)
    if values.size < 3:
        raise DegeneratePattern("window holds fewer than three grid points")

    top = values.max()
    if top <= 0 or np.ptp(values) <= EXTREMUM_PROMINENCE * top:
        return 0.0

    prominence = EXTREMUM_PROMINENCE * top
    maxima, _ = find_peaks(values, prominence=prominence)
    minima, _ = find_peaks(-values, prominence=prominence)
    if maxima.size == 0 and minima.size == 0:
        raise DegeneratePattern("no local extrema in window")
    if maxima.size == 0 or minima.size == 0:
        return 0.0

    high = values[maxima].max()
    low = values[minima].min()
    return float((high - low) / (high + low))


class GofResult(NamedTuple):
    statistic: float
    dof: int
    p_value: float
    bins: int


def chi_square_gof(positions: np.ndarray, pattern: ScreenPattern) -> GofResult:
    """
    Pearson chi-square test of screen positions against a discrete pattern.

    Grid bins are grouped into K equal-probability classes by their mid-CDF,
    K = clip(n // 10, 2, 10). Returns p_value 1.0 (and dof 0) when there are
    fewer than GOF_MIN_SAMPLES positions.
    """
    positions = np.asarray(positions, dtype=float)
    n = positions.size
    if n < GOF_MIN_SAMPLES:
        return GofResult(0.0, 0, 1.0, 0)

    k = int(np.clip(n // 10, 2, GOF_MAX_BINS))
    weights = pattern.bin_weights()
    mid_cdf = pattern.cdf - 0.5 * weights
    classes = np.minimum((mid_cdf * k).astype(int), k - 1)
    expected_p = np.bincount(classes, weights=weights, minlength=k)

    idx = np.rint((positions - pattern.grid.x_min) / pattern.grid.dx).astype(np.int64)
    idx = np.clip(idx, 0, pattern.grid.n_points - 1)
    observed = np.bincount(classes[idx], minlength=k).astype(float)

    used = expected_p > 0
    if used.sum() < 2:
        raise DegeneratePattern("pattern mass falls in fewer than two classes")
    expected = n * expected_p[used] / expected_p[used].sum()
    statistic = float(np.sum((observed[used] - expected) ** 2 / expected))
    dof = int(used.sum() - 1)
    return GofResult(statistic, dof, chi_square_sf(statistic, dof), int(used.sum()))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """0.5 * sum |p - q| for two distributions on the same support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidParams("distributions must share a support")
    return float(0.5 * np.abs(p - q).sum())


def count_histogram_tv(a: np.ndarray, b: np.ndarray) -> float:
    """TV distance between the empirical distributions of two integer samples."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    size = int(max(a.max(initial=0), b.max(initial=0))) + 1
    return total_variation(np.bincount(a, minlength=size) / a.size, np.bincount(b, minlength=size) / b.size)


def marginal_tv(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over trials of the TV distance between per-trial detection frequencies."""
    return float(np.mean(np.abs(np.mean(a, axis=0) - np.mean(b, axis=0))))


@dataclass
class TVEstimate:
    raw: float
    bias: float
    estimate: float
    ci_low: float
    ci_high: float

    def contains_zero(self) -> bool:
        return self.ci_low <= 0.0


def debiased_tv(
    statistic: Callable[[np.ndarray, np.ndarray], float],
    a: np.ndarray,
    b: np.ndarray,
    rng: np.random.Generator,
    permutations: int = 20,
    bootstrap: int = 200,
    level: float = 0.95,
) -> TVEstimate:
    """
    Plug-in TV distance minus its permutation null mean, clipped at 0.

    The interval takes the bootstrap spread of the raw statistic and centres
    it on the debiased estimate. Rows of a and b are sessions.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if len(a) == 0 or len(b) == 0:
        raise InvalidParams("need at least one session per bit")

    raw = statistic(a, b)
    pooled = np.concatenate([a, b])
    null = []
    for _ in range(permutations):
        order = rng.permutation(len(pooled))
        null.append(statistic(pooled[order[:len(a)]], pooled[order[len(a):]]))
    bias = float(np.mean(null)) if null else 0.0
    estimate = max(0.0, raw - bias)

    boots = np.array([
        statistic(a[rng.integers(0, len(a), len(a))], b[rng.integers(0, len(b), len(b))])
        for _ in range(bootstrap)
    ])
    if boots.size:
        tail = 0.5 * (1.0 - level)
        centre = np.median(boots)
        low = estimate + float(np.quantile(boots, tail) - centre)
        high = estimate + float(np.quantile(boots, 1.0 - tail) - centre)
    else:
        low = high = estimate
    return TVEstimate(raw, bias, estimate, max(0.0, low), max(0.0, high))
