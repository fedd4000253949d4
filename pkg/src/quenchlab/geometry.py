"""Free boundary extraction and geometric-measure estimators on grid fields.

Volumes are node (cell) counts times ``h^N``; surface measures are box counts.
Every estimator works on the discrete level set ``{u > threshold}`` and its
subcell-interpolated crossing points.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .solver import Grid, ScalarField


class GeometryError(ValueError):
    pass


@dataclass
class FreeBoundarySet:
    threshold: float
    indicator: np.ndarray      # u > threshold, per node
    points: np.ndarray         # (k, dim) crossing points
    boundary_cells: np.ndarray  # nodes touching a crossing edge
    grid: Grid

    @property
    def empty(self):
        return self.points.shape[0] == 0

    def tree(self):
        if self.empty:
            raise GeometryError("empty free boundary")
        if not hasattr(self, "_tree"):
            self._tree = cKDTree(self.points)
        return self._tree


def extract_free_boundary(u: ScalarField, threshold: float) -> FreeBoundarySet:
    """Level set ``{u > threshold}`` and its linearly interpolated crossings."""
    if not threshold > 0:
        raise GeometryError("threshold must be positive")
    g = u.grid
    v = u.values
    _, _, exterior = g.masks()
    active = ~exterior
    indicator = (v > threshold) & active
    touched = np.zeros(g.shape, dtype=bool)
    coords = g.coords()
    pts = []
    for d in range(g.dim):
        lo = [slice(None)] * g.dim
        hi = [slice(None)] * g.dim
        lo[d], hi[d] = slice(None, -1), slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        a, b = v[lo], v[hi]
        cross = ((a > threshold) != (b > threshold)) & active[lo] & active[hi]
        if not cross.any():
            continue
        s = (threshold - a[cross]) / (b[cross] - a[cross])
        p = np.stack([c[lo][cross] for c in coords], axis=-1)
        p[:, d] += np.clip(s, 0.0, 1.0) * g.h
        pts.append(p)
        touched[lo] |= cross
        touched[hi] |= cross
    points = np.concatenate(pts) if pts else np.empty((0, g.dim))
    return FreeBoundarySet(float(threshold), indicator, points, touched, g)


@dataclass
class DistanceField:
    grid: Grid
    values: np.ndarray
    fb: FreeBoundarySet

    def at(self, X):
        return float(self.fb.tree().query(np.atleast_1d(np.asarray(X, dtype=float)))[0])


def distance_field(fb: FreeBoundarySet) -> DistanceField:
    tree = fb.tree()
    d, _ = tree.query(fb.grid.points())
    return DistanceField(fb.grid, d.reshape(fb.grid.shape), fb)


def sample_fb_points(fb: FreeBoundarySet, count=8, seed=0, admissible=None):
    """Crossing point nearest the domain center plus ``count`` seeded others.

    ``admissible`` optionally filters candidates (a predicate on points).
    """
    pts = fb.points
    if admissible is not None:
        pts = pts[np.array([bool(admissible(p)) for p in pts], dtype=bool)] if len(pts) else pts
    if len(pts) == 0:
        raise GeometryError("no admissible free boundary points")
    k0 = int(np.argmin(np.linalg.norm(pts - fb.grid.center, axis=1)))
    rest = np.delete(np.arange(len(pts)), k0)
    rng = np.random.default_rng(seed)
    pick = rng.choice(rest, size=min(count, rest.size), replace=False) if rest.size else rest
    return pts[np.concatenate([[k0], np.sort(pick)]).astype(int)]


# ---------------------------------------------------------------------------
# helpers

def _node_distances(grid: Grid, X):
    X = np.atleast_1d(np.asarray(X, dtype=float))
    diff = [c - x for c, x in zip(grid.coords(), X)]
    return np.sqrt(sum(d * d for d in diff))


def _active(grid):
    return ~grid.masks()[2]


def _ball(grid, X, r, clip=False):
    if not clip and not grid.contains_ball(X, r):
        raise GeometryError(f"ball of radius {r:g} around {np.round(X, 6)} leaves the domain")
    return (_node_distances(grid, X) <= r) & _active(grid)


def _loglog_fit(x, y):
    lx, ly = np.log(x), np.log(y)
    coef, res, *_ = np.polyfit(lx, ly, 1, full=True)
    resid = float(np.sqrt(res[0] / len(lx))) if len(res) else 0.0
    return float(coef[0]), float(coef[1]), resid


# ---------------------------------------------------------------------------
# estimators

@dataclass
class GrowthFit:
    slope: float
    intercept: float
    residual: float
    c0: float
    radii: np.ndarray
    sups: np.ndarray


def growth_exponent_fit(u: ScalarField, fb: FreeBoundarySet, center, radii, alpha=None,
                        clip=True) -> GrowthFit:
    """Slope of ``log sup_{B_r(center)} u`` against ``log r``.

    Balls are intersected with the domain when ``clip`` is set.  ``c0`` is the
    minimum over radii of ``sup / r^alpha`` (``alpha`` defaults to the slope).
    """
    g = u.grid
    radii = np.asarray(radii, dtype=float)
    dist = _node_distances(g, center)
    act = _active(g)
    extent = (g.n - 1) * g.h * math.sqrt(g.dim)
    use_r, sups = [], []
    for r in radii:
        if r < 4 * g.h * (1 - 1e-12) or r > extent:
            continue
        mask = (dist <= r) & act if clip else _ball(g, center, r)
        s = float(np.max(u.values[mask])) if mask.any() else 0.0
        if s > 0:
            use_r.append(r)
            sups.append(s)
    if len(use_r) < 4:
        raise GeometryError(f"only {len(use_r)} usable radii (need 4 with r >= 4h and positive sup)")
    use_r, sups = np.array(use_r), np.array(sups)
    slope, icpt, resid = _loglog_fit(use_r, sups)
    a = slope if alpha is None else alpha
    return GrowthFit(slope, icpt, resid, float(np.min(sups / use_r**a)), use_r, sups)


@dataclass
class GradientReport:
    max_ratio: float
    location: np.ndarray
    count: int
    floor: float


def gradient_bound_check(u: ScalarField, gamma: float, floor: float) -> GradientReport:
    """``max |grad_h u|^2 / u^gamma`` over interior nodes with ``u > floor``."""
    g = u.grid
    grads = np.gradient(u.values, g.h) if g.dim > 1 else [np.gradient(u.values, g.h)]
    g2 = sum(d * d for d in grads)
    interior, _, _ = g.masks()
    mask = interior & (u.values > floor)
    if not mask.any():
        return GradientReport(0.0, np.full(g.dim, np.nan), 0, floor)
    ratio = np.where(mask, g2 / np.where(mask, u.values, 1.0) ** gamma, -np.inf)
    k = np.unravel_index(int(np.argmax(ratio)), g.shape)
    loc = np.array([c[k] for c in g.coords()])
    return GradientReport(float(ratio[k]), loc, int(mask.sum()), floor)


def gradient_refinement_change(coarse: GradientReport, fine: GradientReport) -> float:
    """Relative change ``|fine/coarse - 1|`` of the gradient ratio."""
    if coarse.max_ratio <= 0:
        return math.inf
    return abs(fine.max_ratio / coarse.max_ratio - 1.0)


def density_ratio(fb: FreeBoundarySet, X, delta) -> float:
    g = fb.grid
    if delta < 4 * g.h * (1 - 1e-12):
        raise GeometryError("delta must be at least 4h")
    ball = _ball(g, X, delta)
    return float(np.count_nonzero(fb.indicator & ball) / np.count_nonzero(ball))


@dataclass
class ScaleTable:
    """Rows of ``(scale, raw, normalized)`` for one estimator at one center."""
    name: str
    rows: list = field(default_factory=list)

    def normalized(self):
        return np.array([r[2] for r in self.rows])

    def spread(self):
        v = self.normalized()
        return float(v.max() / v.min()) if v.size and v.min() > 0 else math.inf


@dataclass
class HarnackReport:
    minimum: float
    passed: bool
    table: ScaleTable
    lower_bound: float


def l1_harnack_check(u: ScalarField, fb: FreeBoundarySet, centers, radii, alpha,
                     lower_bound=0.0) -> HarnackReport:
    """``min`` over centers and radii of ``mean_{B_rho} u / rho^alpha``."""
    g = u.grid
    table = ScaleTable("l1_harnack")
    for X in np.atleast_2d(centers):
        for rho in radii:
            if rho < 4 * g.h * (1 - 1e-12):
                raise GeometryError("radius must be at least 4h")
            ball = _ball(g, X, rho)
            mean = float(u.values[ball].mean())
            table.rows.append((float(rho), mean, mean / rho**alpha))
    m = float(np.min(table.normalized()))
    return HarnackReport(m, m > lower_bound, table, lower_bound)


def tangential_harnack_ratio(u: ScalarField, distance: DistanceField, X0) -> float:
    """``sup / inf`` of ``u`` over the nodes of ``B_{d/2}(X0)``, ``d = dist(X0, FB)``."""
    g = u.grid
    X0 = np.atleast_1d(np.asarray(X0, dtype=float))
    d = distance.at(X0)
    if d < 8 * g.h * (1 - 1e-12):
        raise GeometryError(f"distance {d:g} to the free boundary is below 8h")
    ball = _ball(g, X0, 0.5 * d)
    vals = u.values[ball]
    if vals.min() <= 0:
        raise GeometryError("ball is not inside the positivity set")
    return float(vals.max() / vals.min())


@dataclass
class NeighborhoodVolume:
    volume: float
    ratio: float
    mu: float
    rho: float


def neighborhood_volume(fb: FreeBoundarySet, X0, rho, mu, distance: DistanceField = None) -> NeighborhoodVolume:
    """Cell-counted volume of ``{dist(., FB) <= mu} ∩ B_rho(X0)``."""
    g = fb.grid
    if mu < 2 * g.h * (1 - 1e-12) or mu > rho / 4:
        raise GeometryError(f"need 2h <= mu <= rho/4, got mu={mu:g}, rho={rho:g}, h={g.h:g}")
    distance = distance or distance_field(fb)
    ball = _ball(g, X0, rho)
    vol = np.count_nonzero(ball & (distance.values <= mu)) * g.h**g.dim
    return NeighborhoodVolume(float(vol), float(vol / (mu * rho ** (g.dim - 1))), float(mu), float(rho))


@dataclass
class BoxCount:
    slope: float
    intercept: float
    counts: np.ndarray
    sizes: np.ndarray
    constants: np.ndarray
    degenerate: bool


def surface_measure_boxcount(fb: FreeBoundarySet, X0, rho, box_sizes, shifts=4) -> BoxCount:
    """Boxes of side ``mu`` centered in ``B_rho(X0)`` that meet the crossing cloud.

    Selecting boxes by their center (rather than by the points they hold)
    keeps the ends of the curve from adding a spurious ``+1`` per scale.
    Counts are averaged over ``shifts**N`` lattice offsets.  The slope of
    ``log count`` against ``log(1/mu)`` estimates the dimension;
    ``count mu^(N-1) / rho^(N-1)`` is the two-sided constant per scale.
    """
    sizes = np.asarray(box_sizes, dtype=float)
    if sizes.size < 4:
        raise GeometryError("need at least 4 box scales")
    X0 = np.atleast_1d(np.asarray(X0, dtype=float))
    N = fb.grid.dim
    pts = fb.points
    offsets = np.array(list(itertools.product(np.arange(shifts) / shifts, repeat=N)))
    counts = []
    for mu in sizes:
        near = pts[np.linalg.norm(pts - X0, axis=1) <= rho + mu * math.sqrt(N)] if len(pts) else pts
        tally = 0
        for shift in offsets:
            cells = np.unique(np.floor((near - X0) / mu + shift).astype(np.int64), axis=0)
            centers = (cells + 0.5 - shift) * mu
            tally += np.count_nonzero(np.linalg.norm(centers, axis=1) <= rho)
        counts.append(tally / len(offsets))
    counts = np.array(counts, dtype=float)
    degenerate = bool(np.any(counts == 0))
    if degenerate:
        slope, icpt = math.nan, math.nan
    else:
        slope, icpt, _ = _loglog_fit(1.0 / sizes, counts)
    consts = counts * sizes ** (N - 1) / rho ** (N - 1)
    return BoxCount(slope, icpt, counts, sizes, consts, degenerate)


def hausdorff_distance(a: FreeBoundarySet, b: FreeBoundarySet) -> float:
    if a.empty or b.empty:
        raise GeometryError("empty free boundary")
    dab = a.tree().query(b.points)[0].max()
    dba = b.tree().query(a.points)[0].max()
    return float(max(dab, dba))


@dataclass
class SphericalMeanReport:
    minimum: float
    maximum: float
    table: ScaleTable
    passed: bool


def spherical_mean(u: ScalarField, X0, rho, samples=None) -> float:
    """Mean of ``u`` over the sphere ``∂B_rho(X0)`` (point pair in 1D)."""
    g = u.grid
    X0 = np.atleast_1d(np.asarray(X0, dtype=float))
    if g.dim == 1:
        x = g.axes()[0]
        return float(0.5 * (np.interp(X0[0] - rho, x, u.values) + np.interp(X0[0] + rho, x, u.values)))
    k = samples or max(256, int(8 * math.ceil(2 * math.pi * rho / g.h)))
    phi = 2 * math.pi * np.arange(k) / k
    px = (X0[0] + rho * np.cos(phi) - g.origin[0]) / g.h
    py = (X0[1] + rho * np.sin(phi) - g.origin[1]) / g.h
    vals = ndimage.map_coordinates(u.values, [px, py], order=1, mode="nearest")
    # periodic trapezoid rule = plain average on equispaced angles
    return float(vals.mean())


def spherical_mean_check(u0: ScalarField, fb: FreeBoundarySet, X0, radii, alpha) -> SphericalMeanReport:
    g = u0.grid
    table = ScaleTable("spherical_mean")
    for rho in radii:
        if rho < 4 * g.h * (1 - 1e-12):
            raise GeometryError("radius must be at least 4h")
        if not g.contains_ball(X0, rho):
            raise GeometryError(f"sphere of radius {rho:g} leaves the domain")
        m = spherical_mean(u0, X0, rho)
        table.rows.append((float(rho), m, m / rho**alpha))
    v = table.normalized()
    lo, hi = float(v.min()), float(v.max())
    return SphericalMeanReport(lo, hi, table, lo > 0)


# ---------------------------------------------------------------------------
# reports

@dataclass
class Check:
    name: str
    value: float
    tolerance: str
    passed: bool


@dataclass
class EstimateReport:
    results: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def check(self, name, value, passed, tolerance):
        self.checks.append(Check(name, float(value), str(tolerance), bool(passed)))
        return passed

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return {
            "results": {k: _plain(v) for k, v in sorted(self.results.items())},
            "tables": {k: [list(map(float, r)) for r in t.rows] for k, t in sorted(self.tables.items())},
            "checks": [asdict(c) for c in sorted(self.checks, key=lambda c: c.name)],
            "provenance": _plain(self.provenance),
            "passed": self.passed,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_tables(self, directory):
        paths = []
        for name, table in sorted(self.tables.items()):
            path = f"{directory}/{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["scale", "raw", "normalized"])
                for row in table.rows:
                    w.writerow([repr(float(v)) for v in row])
            paths.append(path)
        return paths


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in sorted(v.items())}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating, float)):
        return None if not math.isfinite(float(v)) else float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v
