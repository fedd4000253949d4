import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quenchlab.geometry import (EstimateReport, GeometryError, ScaleTable, density_ratio, distance_field,
                                extract_free_boundary, gradient_bound_check, gradient_refinement_change,
                                growth_exponent_fit, hausdorff_distance, l1_harnack_check,
                                neighborhood_volume, sample_fb_points, spherical_mean_check,
                                surface_measure_boxcount, tangential_harnack_ratio)
from quenchlab.model import alpha
from quenchlab.solver import Grid, ScalarField
from quenchlab.synthetic import (TINY, halfspace_field, halfspace_suite, profile_coefficient,
                                 slab_disk_area)


@pytest.fixture(scope="module")
def half():
    u = halfspace_field(0.5, 257)
    fb = extract_free_boundary(u, TINY)
    return u, fb, distance_field(fb)


@pytest.mark.parametrize("gamma", [0.25, 0.5, 0.75])
def test_halfspace_suite(gamma):
    checks = halfspace_suite(gamma)
    failed = [c for c in checks if not c.passed]
    assert not failed, failed
    assert len({c.name for c in checks}) == len(checks)


@given(st.floats(0.01, 0.8))
def test_crossing_plane_within_h(level):
    u = halfspace_field(0.5, 65)
    c, a = profile_coefficient(0.5), alpha(0.5)
    t = c * level**a
    fb = extract_free_boundary(u, t)
    assert np.all(np.abs(fb.points[:, 0] - level) <= u.grid.h)


def test_crossing_points_lie_on_straddling_edges(rng):
    g = Grid.square(-1, 1, 65)
    X, Y = g.coords()
    u = ScalarField(g, np.maximum(0.6 - np.hypot(X, Y), 0.0) + 0.01 * rng.random(g.shape))
    fb = extract_free_boundary(u, 0.2)
    # every point sits on a grid line and linear interpolation of u there equals the threshold
    from scipy.interpolate import RegularGridInterpolator
    interp = RegularGridInterpolator(g.axes(), u.values)
    rel = (fb.points - np.array(g.origin)) / g.h
    on_line = np.isclose(rel, np.round(rel), atol=1e-9).any(axis=1)
    assert on_line.all()
    assert np.allclose(interp(fb.points), 0.2, atol=1e-9)
    # consistency: touched nodes straddle the threshold with a neighbour
    assert fb.boundary_cells.any() and not fb.boundary_cells[np.hypot(X, Y) < 0.1].any()


def test_constant_and_zero_fields():
    g = Grid.square(-1, 1, 33)
    const = extract_free_boundary(ScalarField(g, np.full(g.shape, 3.0)), 1.0)
    assert const.empty and const.indicator.all()
    zero = extract_free_boundary(ScalarField(g, np.zeros(g.shape)), 1.0)
    assert zero.empty and not zero.indicator.any()
    with pytest.raises(GeometryError):
        distance_field(zero)
    with pytest.raises(GeometryError):
        extract_free_boundary(ScalarField(g, np.zeros(g.shape)), 0.0)


def test_distance_to_plane_and_point(half):
    u, fb, dist = half
    X, _ = u.grid.coords()
    assert np.allclose(dist.values, np.abs(X), atol=1e-8)
    g = Grid.square(-1, 1, 65)
    c = profile_coefficient(0.5)
    pt = extract_free_boundary(ScalarField(g, c * np.hypot(*g.coords()) ** alpha(0.5)), TINY)
    d = distance_field(pt)
    assert np.allclose(d.values, np.hypot(*g.coords()), atol=g.h)


def test_distance_is_one_lipschitz(half, rng):
    u, _, dist = half
    pts = u.grid.points()
    i, j = rng.integers(0, len(pts), (2, 5000))
    lhs = np.abs(dist.values.ravel()[i] - dist.values.ravel()[j])
    assert np.all(lhs <= np.linalg.norm(pts[i] - pts[j], axis=1) + 1e-12)


def test_growth_fit_rejects_zero_field():
    g = Grid.square(-1, 1, 65)
    u = ScalarField(g, np.zeros(g.shape))
    fb = extract_free_boundary(halfspace_field(0.5, 65), TINY)
    with pytest.raises(GeometryError, match="usable radii"):
        growth_exponent_fit(u, fb, (0.0, 0.0), np.geomspace(0.1, 0.9, 6))


def test_growth_fit_c0(half):
    u, fb, _ = half
    h = u.grid.h
    fit = growth_exponent_fit(u, fb, (0.0, 0.0), h * 2.0 ** np.arange(2, 7), alpha=alpha(0.5))
    assert fit.c0 == pytest.approx(profile_coefficient(0.5), rel=1e-12)


def test_gradient_ratio_of_exact_profile_is_constant():
    g = Grid.interval(0.0, 1.0, 1025)
    gamma = 0.5
    x = g.axes()[0]
    c, a = profile_coefficient(gamma), alpha(gamma)
    u = ScalarField(g, c * x**a)
    sel = x > 16 * g.h
    grad = np.gradient(u.values, g.h)
    ratio = grad[sel] ** 2 / u.values[sel] ** gamma
    assert ratio.max() / ratio.min() - 1 <= 0.01
    assert np.allclose(ratio, c ** (2 - gamma) * a**2, rtol=0.01)
    rep = gradient_bound_check(u, gamma, c * (16 * g.h) ** a)
    assert rep.max_ratio == pytest.approx(c ** (2 - gamma) * a**2, rel=0.01)


def test_gradient_ratio_of_constant_is_zero():
    g = Grid.square(-1, 1, 33)
    rep = gradient_bound_check(ScalarField(g, np.full(g.shape, 2.0)), 0.5, 0.1)
    assert rep.max_ratio == 0.0
    assert gradient_refinement_change(rep, rep) == math.inf


def test_density_rejects_small_or_outside_ball(half):
    _, fb, _ = half
    with pytest.raises(GeometryError):
        density_ratio(fb, (0.0, 0.0), fb.grid.h)
    with pytest.raises(GeometryError):
        density_ratio(fb, (0.9, 0.0), 0.5)


def test_l1_harnack_zero_field_fails(half):
    u, fb, _ = half
    zero = ScalarField(u.grid, np.zeros(u.grid.shape))
    rep = l1_harnack_check(zero, fb, [(0.0, 0.0)], [0.25], alpha(0.5))
    assert rep.minimum == 0.0 and not rep.passed


def test_l1_harnack_doubling_is_scale_free(half):
    u, fb, _ = half
    rep = l1_harnack_check(u, fb, [(0.0, 0.0)], [0.125, 0.25, 0.5], alpha(0.5))
    assert rep.table.spread() <= 1.02


def test_tangential_ratio_constant_field_and_too_close(half):
    u, fb, dist = half
    const = ScalarField(u.grid, np.full(u.grid.shape, 5.0))
    assert tangential_harnack_ratio(const, dist, (0.25, 0.0)) == 1.0
    with pytest.raises(GeometryError):
        tangential_harnack_ratio(u, dist, (2 * u.grid.h, 0.0))


def test_neighborhood_scale_separation(half):
    _, fb, dist = half
    h = fb.grid.h
    with pytest.raises(GeometryError):
        neighborhood_volume(fb, (0.0, 0.0), 0.5, h, dist)
    with pytest.raises(GeometryError):
        neighborhood_volume(fb, (0.0, 0.0), 0.5, 0.2, dist)


def test_neighborhood_of_point_vanishes():
    g = Grid.square(-1, 1, 257)
    pt = extract_free_boundary(ScalarField(g, np.hypot(*g.coords())), TINY)
    for mu in (2 * g.h, 4 * g.h, 8 * g.h):
        # volume ~ pi mu^2, so the ratio is pi mu / rho and vanishes with mu / rho
        ratio = neighborhood_volume(pt, (0, 0), 0.75, mu).ratio
        assert ratio == pytest.approx(math.pi * mu / 0.75, rel=0.1)


def test_planar_neighborhood_limit():
    assert slab_disk_area(1e-6, 1.0) / 1e-6 == pytest.approx(4.0, rel=1e-6)


def test_boxcount_needs_four_scales(half):
    _, fb, _ = half
    with pytest.raises(GeometryError):
        surface_measure_boxcount(fb, (0, 0), 0.5, [0.1, 0.05, 0.025])


def test_boxcount_degenerate_flag(half):
    _, fb, _ = half
    box = surface_measure_boxcount(fb, (0.9, 0.0), 0.05, [0.04, 0.02, 0.01, 0.005])
    assert box.degenerate and math.isnan(box.slope)


def test_boxcount_constants_for_segment(half):
    _, fb, _ = half
    sizes = 2.0 ** -np.arange(2, 7)
    box = surface_measure_boxcount(fb, (0, 0), 0.5, sizes)
    # a segment of length 2 rho needs about 2 rho / mu boxes
    assert np.allclose(box.constants, 2.0, rtol=0.15)


def test_hausdorff_rejects_empty(half):
    _, fb, _ = half
    empty = extract_free_boundary(ScalarField(fb.grid, np.zeros(fb.grid.shape)), 1.0)
    with pytest.raises(GeometryError):
        hausdorff_distance(fb, empty)


def test_spherical_mean_zero_fails(half):
    u, fb, _ = half
    rep = spherical_mean_check(ScalarField(u.grid, np.zeros(u.grid.shape)), fb, (0, 0), [0.125, 0.25], 4 / 3)
    assert rep.minimum == 0.0 and not rep.passed


def test_spherical_mean_one_dimensional():
    g = Grid.interval(-1, 1, 257)
    x = g.axes()[0]
    c, a = profile_coefficient(0.5), alpha(0.5)
    u = ScalarField(g, c * np.maximum(x, 0) ** a)
    fb = extract_free_boundary(u, TINY)
    rep = spherical_mean_check(u, fb, (0.0,), [0.125, 0.25, 0.5], a)
    assert rep.minimum == pytest.approx(c / 2, rel=1e-12) and rep.maximum == pytest.approx(c / 2, rel=1e-12)


def test_sample_points_deterministic(half):
    _, fb, _ = half
    a = sample_fb_points(fb, 8, seed=3)
    b = sample_fb_points(fb, 8, seed=3)
    assert np.array_equal(a, b) and len(a) == 9
    assert np.linalg.norm(a[0] - fb.grid.center) <= fb.grid.h
    with pytest.raises(GeometryError):
        sample_fb_points(fb, admissible=lambda p: False)


def test_report_serialization(tmp_path):
    rep = EstimateReport(provenance={"grid": 33})
    rep.results["x"] = np.float64(1.5)
    rep.tables["t"] = ScaleTable("t", [(0.1, 2.0, 3.0)])
    rep.check("x_positive", 1.5, True, "> 0")
    rep.write_json(tmp_path / "r.json")
    paths = rep.write_tables(tmp_path)
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["passed"] and data["checks"][0]["tolerance"] == "> 0"
    assert open(paths[0]).readline().strip() == "scale,raw,normalized"
