"""Closed-form checks of every geometry estimator on ``u = c (x1)_+^alpha``.

The profile is the exact one-dimensional solution extended as a half-space
field on ``[-1, 1]^2``; its zero set is the plane ``x1 = 0``.  Each check
pairs an estimator output with the value computed independently from the
formula, and the tolerance it is held to.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .geometry import (density_ratio, distance_field, extract_free_boundary, growth_exponent_fit,
                       hausdorff_distance, l1_harnack_check, neighborhood_volume, spherical_mean,
                       surface_measure_boxcount, tangential_harnack_ratio)
from .model import alpha
from .solver import Grid, ScalarField

# threshold so small that the crossing cloud sits on x1 = 0 to ~1e-9
TINY = 1e-12


@dataclass
class SyntheticCheck:
    name: str
    value: float
    expected: float
    tolerance: float
    passed: bool


def profile_coefficient(gamma):
    return ((2.0 - gamma) ** 2 / 2.0) ** (1.0 / (2.0 - gamma))


def halfspace_field(gamma, n=257, shift=0.0):
    grid = Grid.square(-1.0, 1.0, n)
    X, _ = grid.coords()
    c = profile_coefficient(gamma)
    return ScalarField(grid, c * np.maximum(X - shift, 0.0) ** alpha(gamma))


def slab_disk_area(mu, rho):
    """Area of ``{|x1| <= mu} ∩ B_rho``."""
    return 2.0 * (mu * math.sqrt(rho**2 - mu**2) + rho**2 * math.asin(mu / rho))


def halfspace_ball_mean(gamma, rho):
    """Average of ``c (x1)_+^alpha`` over the disk of radius ``rho`` centered on the plane."""
    a, c = alpha(gamma), profile_coefficient(gamma)
    val, _ = integrate.quad(lambda x: x**a * 2.0 * math.sqrt(rho**2 - x**2), 0.0, rho)
    return c * val / (math.pi * rho**2)


def halfspace_circle_mean(gamma, rho):
    """Average of ``c (x1)_+^alpha`` over the circle of radius ``rho`` centered on the plane."""
    a, c = alpha(gamma), profile_coefficient(gamma)
    val, _ = integrate.quad(lambda p: math.cos(p) ** a, -math.pi / 2, math.pi / 2)
    return c * rho**a * val / (2.0 * math.pi)


def _check(out, name, value, expected, tol):
    out.append(SyntheticCheck(name, float(value), float(expected), float(tol),
                              bool(abs(value - expected) <= tol)))


def halfspace_suite(gamma=0.5, n=257):
    """Run every estimator on the half-space profile; returns a list of checks."""
    a, c = alpha(gamma), profile_coefficient(gamma)
    u = halfspace_field(gamma, n)
    g = u.grid
    h = g.h
    out = []

    # crossing plane for a moderate threshold
    t = c * 0.3**a
    fb_t = extract_free_boundary(u, t)
    plane = (t / c) ** (1.0 / a)
    _check(out, "crossing_plane", float(np.max(np.abs(fb_t.points[:, 0] - plane))), 0.0, h)

    fb = extract_free_boundary(u, TINY)
    dist = distance_field(fb)
    origin = np.zeros(2)

    # multiples of h so the node sup equals the continuous sup
    radii = h * 2.0 ** np.arange(2, 7)
    fit = growth_exponent_fit(u, fb, origin, radii)
    _check(out, "growth_slope", fit.slope, a, 0.02)

    for delta in (16 * h, 64 * h):
        _check(out, f"density_half_delta{delta / h:g}h", density_ratio(fb, origin, delta), 0.5, 2 * h / delta)
    _check(out, "density_interior", density_ratio(fb, (0.5, 0.0), 0.25), 1.0, 0.0)

    # the node extremes of B_{d/2} sit within h of x1 = d/2 and 3d/2
    depth = 64 * h
    _check(out, "tangential_ratio", tangential_harnack_ratio(u, dist, (depth, 0.0)), 3.0**a,
           3.0**a * a * 3 * h / depth)

    rho = 0.75
    for mu in (2 * h, 4 * h, rho / 8):
        nv = neighborhood_volume(fb, origin, rho, mu, dist)
        exact = slab_disk_area(mu, rho) / (mu * rho)
        _check(out, f"neighborhood_ratio_mu{mu / h:g}h", nv.ratio, exact, exact * h / (2 * mu))
    nv = neighborhood_volume(fb, origin, rho, 2 * h, dist)
    _check(out, "neighborhood_limit", nv.ratio, 4.0, 0.1)

    sizes = 2.0 ** np.arange(math.ceil(math.log2(2 * h)), math.floor(math.log2(rho / 2)) + 1)
    box = surface_measure_boxcount(fb, origin, rho, sizes)
    _check(out, "boxcount_segment_slope", box.slope, 1.0, 0.05)
    point = extract_free_boundary(ScalarField(g, c * np.hypot(*g.coords()) ** a), TINY)
    box0 = surface_measure_boxcount(point, origin, rho, sizes)
    _check(out, "boxcount_point_slope", box0.slope, 0.0, 0.05)

    shifted = extract_free_boundary(halfspace_field(gamma, n, shift=8 * h), TINY)
    _check(out, "hausdorff_parallel", hausdorff_distance(fb, shifted), 8 * h, 1e-6)
    _check(out, "hausdorff_identical", hausdorff_distance(fb, fb), 0.0, 0.0)

    for r in (0.125, 0.5):
        exact = halfspace_circle_mean(gamma, r)
        _check(out, f"spherical_mean_r{r:g}", spherical_mean(u, origin, r), exact, exact * 0.01)

    for r in (0.125, 0.5):
        rep = l1_harnack_check(u, fb, [origin], [r], a)
        exact = halfspace_ball_mean(gamma, r) / r**a
        _check(out, f"l1_harnack_r{r:g}", rep.minimum, exact, exact * 4 * h / r)
    return out
