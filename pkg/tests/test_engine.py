import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from qbcsim.apparatus import build_apparatus
from qbcsim.config import ProtocolConfig
from qbcsim.errors import DegeneratePattern, FarFieldViolation, GridTooNarrow, InvalidParams
from qbcsim.experiments import fringe_window
from qbcsim.stats import fringe_contrast
from qbcsim.wavepacket import (
    ApertureMask,
    ComplexField,
    Grid,
    PacketParams,
    ScreenPattern,
    Slit,
    SlitChoice,
    analytic_fraunhofer,
    apply_aperture,
    evolve_free,
    fresnel_propagate,
    fringe_spacing,
    gaussian_width,
    intensity,
    make_gaussian_packet,
    sample_position,
    sample_positions,
    which_slit_measure,
    which_slit_probability,
)

from .oracles import crank_nicolson_evolve


UNIT = 1.0   # hbar = m = 1


def _packet(sigma0=1.0, x0=0.0, p0=0.0, half_width=20.0, n=4096):
    grid = Grid.symmetric(half_width, n)
    return make_gaussian_packet(PacketParams(sigma0, x0, p0, mass=UNIT), grid, hbar=UNIT)


def test_grid_requires_power_of_two():
    with pytest.raises(InvalidParams):
        Grid(-1.0, 1.0, 1000)
    with pytest.raises(InvalidParams):
        Grid(1.0, -1.0, 1024)


def test_grid_is_exactly_mirror_symmetric():
    grid = Grid.symmetric(3.7, 256)
    x = grid.x
    assert x[128] == 0.0
    assert np.array_equal(x[1:][::-1], -x[1:])


def test_gaussian_packet_matches_parameters():
    field = _packet()
    assert field.is_normalized()
    assert abs(field.centroid()) <= field.grid.dx
    assert field.width() == pytest.approx(1.0, rel=0.005)


def test_gaussian_packet_translation():
    field = _packet(x0=3.0)
    assert abs(field.centroid() - 3.0) <= field.grid.dx


def test_gaussian_packet_rejects_narrow_grid():
    with pytest.raises(GridTooNarrow):
        _packet(half_width=3.0, n=256)


def test_packet_params_reject_nonpositive_width():
    with pytest.raises(InvalidParams):
        PacketParams(sigma0=0.0)
    with pytest.raises(InvalidParams):
        PacketParams(sigma0=1.0, mass=-1.0)


def test_momentum_moves_centroid_ehrenfest():
    field = _packet(p0=2.0, half_width=40.0)
    moved = evolve_free(field, UNIT, 0.5, hbar=UNIT)
    assert moved.centroid() - field.centroid() == pytest.approx(1.0, abs=1e-6)


def test_evolve_zero_time_returns_input():
    field = _packet()
    assert evolve_free(field, UNIT, 0.0, hbar=UNIT) is field


def test_evolve_rejects_bad_arguments():
    field = _packet()
    with pytest.raises(InvalidParams):
        evolve_free(field, 0.0, 1.0, hbar=UNIT)
    with pytest.raises(InvalidParams):
        evolve_free(field, UNIT, -1.0, hbar=UNIT)


@pytest.mark.parametrize("t", [0.1, 1.0, 10.0, 100.0])
def test_width_follows_analytic_spreading(t):
    field = _packet(half_width=1024.0, n=8192)
    evolved = evolve_free(field, UNIT, t, hbar=UNIT)
    assert evolved.width() == pytest.approx(gaussian_width(1.0, UNIT, t, hbar=UNIT), rel=1e-3)


def test_width_at_unit_spreading_time():
    evolved = evolve_free(_packet(half_width=40.0), UNIT, 2.0, hbar=UNIT)
    assert evolved.width() == pytest.approx(np.sqrt(2.0), rel=1e-3)


def test_free_evolution_composes():
    field = _packet()
    stepwise = evolve_free(evolve_free(field, UNIT, 0.3, hbar=UNIT), UNIT, 0.7, hbar=UNIT)
    direct = evolve_free(field, UNIT, 1.0, hbar=UNIT)
    assert np.max(np.abs(stepwise.amplitudes - direct.amplitudes)) <= 1e-12


def test_spectral_evolution_agrees_with_finite_difference():
    field = _packet(half_width=30.0, n=2048)
    spectral = evolve_free(field, UNIT, 1.0, hbar=UNIT)
    reference = crank_nicolson_evolve(field.amplitudes, field.grid.dx, 1.0 / 400, 400)
    ref_field = ComplexField(field.grid, reference)
    assert ref_field.width() == pytest.approx(spectral.width(), rel=2e-3)
    assert np.max(np.abs(np.abs(reference) - np.abs(spectral.amplitudes))) < 1e-3


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), dt=st.floats(0.0, 50.0))
def test_free_evolution_is_unitary(seed, dt):
    rng = np.random.default_rng(seed)
    grid = Grid.symmetric(10.0, 256)
    field = ComplexField(grid, rng.normal(size=256) + 1j * rng.normal(size=256)).normalized()
    start = field.norm()
    for _ in range(10):
        nxt = evolve_free(field, UNIT, dt, hbar=UNIT)
        assert abs(nxt.norm() - field.norm()) <= 1e-9
        field = nxt
    assert abs(field.norm() - start) <= 1e-6


def _dimensionless_mask(opening=SlitChoice.BOTH):
    return ApertureMask(slit_width=1.0, slit_separation=4.0, open=opening)


def test_symmetric_double_slit_pattern_is_symmetric():
    field = _packet(sigma0=3.0, half_width=64.0)
    passed, _ = apply_aperture(field, _dimensionless_mask())
    pattern = intensity(evolve_free(passed, UNIT, 5.0, hbar=UNIT))
    assert np.max(np.abs(pattern.intensity - pattern.mirrored().intensity)) <= 1e-10 * pattern.intensity.max()


def test_mirrored_input_gives_mirrored_output():
    field = _packet(sigma0=2.0, x0=1.5, half_width=64.0)
    masked, _ = apply_aperture(field, _dimensionless_mask())
    direct = evolve_free(masked, UNIT, 3.0, hbar=UNIT).mirrored()
    via_mirror = evolve_free(masked.mirrored(), UNIT, 3.0, hbar=UNIT)
    assert np.max(np.abs(direct.amplitudes - via_mirror.amplitudes)) <= 1e-10


def test_aperture_all_open_and_all_closed():
    field = _packet()
    same, fraction = apply_aperture(field, np.ones(field.grid.n_points))
    assert same is field
    assert fraction == 1.0

    blocked, fraction = apply_aperture(field, np.zeros(field.grid.n_points))
    assert fraction == 0.0
    assert blocked.all_blocked


def test_aperture_fraction_matches_geometric_overlap():
    grid = Grid.symmetric(1024.0, 8192)
    width = 100.0
    flat = ComplexField(grid, (np.abs(grid.x) <= width / 2).astype(float)).normalized()
    mask = ApertureMask(slit_width=4.0, slit_separation=20.0)
    _, fraction = apply_aperture(flat, mask)
    assert fraction == pytest.approx(2 * 4.0 / width, abs=4 * grid.dx / width)


def test_aperture_rejects_out_of_range_profile():
    field = _packet()
    with pytest.raises(InvalidParams):
        apply_aperture(field, np.full(field.grid.n_points, 1.5))


def test_mask_validation():
    with pytest.raises(InvalidParams):
        ApertureMask(slit_width=2.0, slit_separation=1.0)
    with pytest.raises(InvalidParams):
        ApertureMask(slit_width=1.0, slit_separation=1.5, edge_softness=0.8)


def test_soft_edges_stay_in_unit_range():
    grid = Grid.symmetric(8.0, 1024)
    profile = ApertureMask(1.0, 4.0, edge_softness=0.4).profile(grid)
    assert profile.min() >= 0.0 and profile.max() <= 1.0
    assert 0.0 < profile[np.argmin(np.abs(grid.x - 2.5))] < 1.0


def test_intensity_is_normalized():
    assert intensity(_packet()).total_weight == pytest.approx(1.0, abs=1e-9)
    assert intensity(_packet()).is_normalized()


def test_fraunhofer_fringe_spacing_default_geometry():
    cfg = ProtocolConfig()
    with pytest.warns(FarFieldViolation):
        pattern = analytic_fraunhofer(cfg.mask(), cfg.wavelength, cfg.screen_distance, cfg.grid())
    assert fringe_spacing(pattern, fringe_window(cfg)) == pytest.approx(9.225e-5, rel=1e-3)
    assert np.argmax(pattern.intensity) == cfg.grid_points // 2


def test_fraunhofer_single_slit_envelopes_are_translates():
    grid = Grid.symmetric(512.0, 4096)
    with warnings.catch_warnings():
        warnings.simplefilter("error", FarFieldViolation)
        left = analytic_fraunhofer(ApertureMask(2.0, 8.0, SlitChoice.LEFT_ONLY), 1.0, 100.0, grid)
        right = analytic_fraunhofer(ApertureMask(2.0, 8.0, SlitChoice.RIGHT_ONLY), 1.0, 100.0, grid)
    shift = int(round(8.0 / grid.dx))
    inner = slice(200, grid.n_points - 200)
    left_shape = np.roll(left.intensity, shift) / left.intensity.max()
    right_shape = right.intensity / right.intensity.max()
    assert np.allclose(left_shape[inner], right_shape[inner], rtol=0, atol=1e-12)


def test_sampling_delta_pattern_hits_its_bin():
    grid = Grid.symmetric(1.0, 64)
    values = np.zeros(64)
    values[17] = 1.0
    pattern = ScreenPattern.from_values(grid, values)
    rng = np.random.default_rng(3)
    assert all(sample_position(pattern, rng) == grid.x[17] for _ in range(200))


def test_sampling_uniform_pattern_mean():
    grid = Grid.symmetric(1.0, 1024)
    pattern = ScreenPattern.from_values(grid, np.ones(1024))
    draws = sample_positions(pattern, np.random.default_rng(5), 100_000)
    standard_error = (2.0 / np.sqrt(12.0)) / np.sqrt(draws.size)
    assert abs(draws.mean() - grid.center) < 3 * standard_error + grid.dx


def test_sampling_is_deterministic():
    pattern = intensity(_packet())
    a = sample_positions(pattern, np.random.default_rng(11), 50)
    b = sample_positions(pattern, np.random.default_rng(11), 50)
    assert np.array_equal(a, b)


def test_sampling_zero_pattern_is_degenerate():
    grid = Grid.symmetric(1.0, 64)
    with pytest.raises(DegeneratePattern):
        sample_position(ScreenPattern.from_values(grid, np.zeros(64)), np.random.default_rng(0))


def test_sampled_histogram_matches_double_slit_pattern():
    grid = Grid.symmetric(512.0, 4096)
    pattern = analytic_fraunhofer(ApertureMask(2.0, 8.0), 1.0, 100.0, grid)
    draws = sample_positions(pattern, np.random.default_rng(21), 1_000_000)

    # central fringe: between the first minima at +-lambda L / 2d
    half = 100.0 / (2 * 8.0)
    inside = np.abs(grid.x) < half
    mass = pattern.bin_weights()[inside].sum()
    observed = np.mean(np.abs(draws) < half)
    sigma = np.sqrt(mass * (1 - mass) / draws.size)
    assert abs(observed - mass) < 3 * sigma

    idx = grid.index_of(draws)
    blocks = 128
    counts = np.bincount(idx // (grid.n_points // blocks), minlength=blocks)
    expected = pattern.bin_weights().reshape(blocks, -1).sum(axis=1) * draws.size
    keep = expected > 5
    f_obs = counts[keep]
    f_exp = expected[keep] * f_obs.sum() / expected[keep].sum()
    assert chisquare(f_obs, f_exp).pvalue > 0.001


def test_which_slit_left_only_always_left():
    grid = Grid.symmetric(32.0, 1024)
    field = make_gaussian_packet(PacketParams(3.0, mass=UNIT), grid, hbar=UNIT)
    mask = _dimensionless_mask(SlitChoice.LEFT_ONLY)
    passed, _ = apply_aperture(field, mask)
    rng = np.random.default_rng(0)
    assert all(which_slit_measure(passed, mask, rng).slit is Slit.LEFT for _ in range(200))


def test_which_slit_symmetric_frequency():
    grid = Grid.symmetric(32.0, 1024)
    field = make_gaussian_packet(PacketParams(3.0, mass=UNIT), grid, hbar=UNIT)
    mask = _dimensionless_mask()
    passed, _ = apply_aperture(field, mask)
    assert which_slit_probability(passed, mask) == pytest.approx(0.5, abs=1e-12)

    rng = np.random.default_rng(8)
    draws = 20_000
    lefts = sum(which_slit_measure(passed, mask, rng).slit is Slit.LEFT for _ in range(draws))
    assert abs(lefts / draws - 0.5) < 3 * np.sqrt(0.25 / draws)


def test_which_slit_collapse_restricts_support():
    grid = Grid.symmetric(32.0, 1024)
    field = make_gaussian_packet(PacketParams(3.0, mass=UNIT), grid, hbar=UNIT)
    mask = _dimensionless_mask()
    passed, _ = apply_aperture(field, mask)
    result = which_slit_measure(passed, mask, np.random.default_rng(1))
    outside = ~mask.region(grid, result.slit)
    assert result.collapsed.is_normalized()
    assert np.all(result.collapsed.amplitudes[outside] == 0)


def test_which_slit_requires_amplitude_in_slits():
    grid = Grid.symmetric(32.0, 1024)
    far = ComplexField(grid, (np.abs(grid.x - 20.0) < 1.0).astype(float)).normalized()
    with pytest.raises(DegeneratePattern):
        which_slit_measure(far, _dimensionless_mask(), np.random.default_rng(0))


def test_numeric_screen_reproduces_fringe_spacing_and_collapse():
    cfg = ProtocolConfig()
    apparatus = build_apparatus(cfg)
    window = fringe_window(cfg)
    expected = cfg.wavelength * cfg.screen_distance / cfg.slit_separation

    assert fringe_spacing(apparatus.screen[SlitChoice.BOTH], window) == pytest.approx(expected, rel=0.01)
    assert fringe_contrast(apparatus.screen[SlitChoice.BOTH], window) > 0.5
    for slit in Slit:
        assert fringe_contrast(apparatus.collapsed_screen[slit], window) < 0.05


def test_fresnel_transform_matches_spectral_screen():
    cfg = ProtocolConfig()
    apparatus = build_apparatus(cfg)
    dt = apparatus.timeline.t1 - apparatus.timeline.t0
    far = fresnel_propagate(apparatus.transmitted[SlitChoice.BOTH], cfg.mass, dt, cfg.hbar)
    assert far.norm() == pytest.approx(1.0, abs=1e-9)
    expected = cfg.wavelength * cfg.screen_distance / cfg.slit_separation
    assert fringe_spacing(intensity(far), fringe_window(cfg)) == pytest.approx(expected, rel=0.01)


def test_fresnel_rejects_unsampled_chirp():
    field = _packet(half_width=20.0, n=256)
    with pytest.raises(InvalidParams):
        fresnel_propagate(field, UNIT, 1e-3, hbar=UNIT)
