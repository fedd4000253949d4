"""Experiment configuration, orchestration and persistence.

A configuration is a flat ``key = value`` text file checked against
:data:`SCHEMA`; every key has a type and a documented default.  A run solves
(or sweeps in ``eps``), runs the selected estimators on the final field and
writes a manifest listing every output with its sha256.  Runs are cached by
the hash of the canonical configuration text.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import geometry as geo
from .model import EllipticOperator, ModelError, SingularityParams, alpha
from .radial import leading_coefficient
from .solver import (Grid, ProblemSpec, ScalarField, SolverError, continuation_sweep, resolution_floor,
                     solve_minimal, write_field)


class ConfigError(ValueError):
    pass


AUTO = "auto"
FLOOR = "floor"

ESTIMATORS = ("growth", "gradient", "density", "l1_harnack", "harnack", "neighborhood", "boxcount", "spherical")

# name -> (kind, default, help).  kind is a python type, a tuple of choices,
# or ("float", sentinel) for a float that also accepts one keyword.
SCHEMA = {
    "name": (str, "run", "label used in reports"),
    "mode": (("solve", "sweep"), "solve", "single solve or eps continuation sweep"),
    "gamma": (float, 0.5, "singularity exponent in (0, 1)"),
    "sigma0": (float, 0.25, "offset of the reaction's support, in (0, 1/2)"),
    "epsilon": (("float", FLOOR), FLOOR, "final eps; 'floor' is 4 h^(1/alpha)"),
    "sweep_stages": (int, 6, "K: a sweep solves eps0 2^-k for k = 0..K"),
    "sweep_eps0": (("float", AUTO), AUTO, "first eps of a sweep; 'auto' is 2^K epsilon"),
    "operator": (("trace", "pucci+", "pucci-", "hessian-iota"), "trace", "operator kind"),
    "lam": (float, 1.0, "Pucci ellipticity lower constant"),
    "Lam": (float, 2.0, "Pucci ellipticity upper constant"),
    "iota": (int, 3, "odd exponent of the hessian-iota family"),
    "domain": (("interval", "square", "disk"), "interval", "grid shape"),
    "lower": (float, 0.0, "lower corner coordinate (disk: bounding box)"),
    "upper": (float, 1.0, "upper corner coordinate (disk: bounding box)"),
    "n": (int, 1025, "nodes per axis"),
    "datum": (("power", "constant"), "power", "boundary datum family"),
    "datum_coef": (("float", AUTO), AUTO, "power datum c (x1 - shift)_+^alpha; 'auto' is the planar profile constant"),
    "datum_shift": (float, 0.0, "power datum shift"),
    "datum_value": (float, 0.3, "constant datum value"),
    "tol": (float, 1e-8, "residual tolerance"),
    "max_iter": (int, 200, "Newton iteration cap"),
    "max_pseudo_steps": (int, 400, "pseudo-time step cap"),
    "threshold_c1": (float, 2.0, "free boundary level C1 eps^alpha"),
    "estimators": (str, AUTO, "comma list; 'auto' picks by dimension"),
    "fb_samples": (int, 8, "extra free boundary points besides the one nearest the center"),
    "seed": (int, 0, "seed for free boundary point sampling"),
    "growth_r_min": (("float", AUTO), AUTO, "smallest growth radius; 'auto' is 0.05 L"),
    "growth_r_max": (("float", AUTO), AUTO, "largest growth radius; 'auto' is 0.9 L"),
    "growth_radii": (int, 8, "number of geometric growth radii"),
    "rho": (("float", AUTO), AUTO, "ball radius for local estimators; 'auto' is 0.15 L"),
    "growth_tol": (float, 0.05, "allowed |slope - alpha|"),
    "density_min": (float, 0.05, "lower bound for density ratios"),
    "spread_max": (float, 2.0, "allowed max/min over a scale table"),
    "boxcount_tol": (float, 0.15, "allowed |box-count slope - (N-1)|"),
    "out": (str, "runs", "output directory"),
}


def _parse_value(key, raw):
    kind = SCHEMA[key][0]
    raw = raw.strip()
    try:
        if kind is str:
            return raw
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if isinstance(kind, tuple) and kind[0] == "float":
            return raw if raw == kind[1] else float(raw)
    except ValueError:
        label = kind.__name__ if isinstance(kind, type) else kind[0]
        raise ConfigError(f"{key}: cannot parse {raw!r} as {label}") from None
    if raw not in kind:
        raise ConfigError(f"{key}: {raw!r} is not one of {', '.join(kind)}")
    return raw


def _format_value(v):
    return repr(v) if isinstance(v, float) else str(v)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in SCHEMA.items()})

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    @classmethod
    def from_text(cls, text, **overrides):
        values = {k: v[1] for k, v in SCHEMA.items()}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw)
        for key, v in overrides.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = _parse_value(key, str(v)) if isinstance(v, str) else v
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, **overrides):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, **overrides)

    def to_text(self):
        return "".join(f"{k} = {_format_value(self.values[k])}\n" for k in SCHEMA)

    def hash(self):
        """sha256 of the canonical text without the output directory."""
        text = "".join(f"{k} = {_format_value(self.values[k])}\n" for k in SCHEMA if k != "out")
        return hashlib.sha256(text.encode()).hexdigest()

    # -- derived objects -------------------------------------------------

    @property
    def dim(self):
        return 1 if self.domain == "interval" else 2

    @property
    def length(self):
        return self.upper - self.lower

    def grid(self) -> Grid:
        if self.domain == "interval":
            return Grid.interval(self.lower, self.upper, self.n)
        if self.domain == "square":
            return Grid.square(self.lower, self.upper, self.n)
        mid = 0.5 * (self.lower + self.upper)
        return Grid.disk((mid, mid), 0.5 * self.length, self.n)

    def operator_obj(self) -> EllipticOperator:
        if self.operator == "trace":
            return EllipticOperator.trace(N=self.dim)
        if self.operator == "pucci+":
            return EllipticOperator.pucci_plus(self.lam, self.Lam)
        if self.operator == "pucci-":
            return EllipticOperator.pucci_minus(self.lam, self.Lam)
        return EllipticOperator.hessian_iota(self.iota, N=self.dim)

    def final_epsilon(self):
        if self.epsilon == FLOOR:
            return resolution_floor(self.grid(), self.gamma)
        return self.epsilon

    def schedule(self):
        if self.mode != "sweep":
            return None
        eps0 = self.sweep_eps0
        if eps0 == AUTO:
            eps0 = self.final_epsilon() * 2.0**self.sweep_stages
        return ProblemSpec.continuation_schedule(eps0, self.sweep_stages)

    def datum_function(self):
        a = alpha(self.gamma)
        if self.values["datum"] == "constant":
            value = self.datum_value
            return lambda *xs: np.full(np.shape(xs[0]), value)
        coef = self.datum_coef
        if coef == AUTO:
            op = self.operator_obj()
            coef = leading_coefficient(self.gamma, op, 1) if op.kind != "hessian-iota" else \
                leading_coefficient(self.gamma, EllipticOperator.trace(N=1), 1)
        shift = self.datum_shift
        return lambda *xs: coef * np.maximum(xs[0] - shift, 0.0) ** a

    def problem(self) -> ProblemSpec:
        params = SingularityParams(self.gamma, self.final_epsilon(), self.sigma0)
        return ProblemSpec(params, self.operator_obj(), self.grid(), self.datum_function(), tol=self.tol,
                           max_iter=self.max_iter, max_pseudo_steps=self.max_pseudo_steps,
                           schedule=self.schedule())

    def estimator_names(self):
        if self.estimators == AUTO:
            base = ["growth", "gradient", "density", "l1_harnack", "harnack"]
            return base + (["neighborhood", "boxcount"] if self.dim == 2 else [])
        names = [s.strip() for s in self.estimators.split(",") if s.strip()]
        return names

    def settings(self, grid: Grid = None, epsilon=None) -> "EstimatorSettings":
        grid = grid or self.grid()
        L = (grid.n - 1) * grid.h
        pick = lambda v, d: d if v == AUTO else v
        return EstimatorSettings(
            gamma=self.gamma, epsilon=epsilon if epsilon is not None else self.final_epsilon(),
            sigma0=self.sigma0, c1=self.threshold_c1, estimators=tuple(self.estimator_names()),
            seed=self.seed, fb_samples=self.fb_samples,
            growth_radii=np.geomspace(pick(self.growth_r_min, 0.05 * L), pick(self.growth_r_max, 0.9 * L),
                                      self.growth_radii),
            rho=pick(self.rho, 0.15 * L), growth_tol=self.growth_tol, density_min=self.density_min,
            spread_max=self.spread_max, boxcount_tol=self.boxcount_tol)

    def validate(self):
        """Schema checks plus everything ProblemSpec would reject, before any solve."""
        v = self.values
        if not 0.0 < v["gamma"] < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if not v["upper"] > v["lower"]:
            raise ConfigError("upper must exceed lower")
        if v["sweep_stages"] < 0:
            raise ConfigError("sweep_stages must be nonnegative")
        if v["threshold_c1"] <= 0:
            raise ConfigError("threshold_c1 must be positive")
        unknown = set(self.estimator_names()) - set(ESTIMATORS)
        if unknown:
            raise ConfigError(f"unknown estimators: {', '.join(sorted(unknown))}")
        try:
            self.problem()
        except (SolverError, ModelError) as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# estimators on one field

@dataclass
class EstimatorSettings:
    gamma: float
    epsilon: float
    sigma0: float = 0.25
    c1: float = 2.0
    estimators: tuple = ("growth", "gradient", "density", "l1_harnack", "harnack")
    seed: int = 0
    fb_samples: int = 8
    growth_radii: Optional[np.ndarray] = None
    rho: Optional[float] = None
    growth_tol: float = 0.05
    density_min: float = 0.05
    spread_max: float = 2.0
    boxcount_tol: float = 0.15

    @classmethod
    def for_grid(cls, grid: Grid, gamma, epsilon=None, **kw):
        L = (grid.n - 1) * grid.h
        eps = resolution_floor(grid, gamma) if epsilon is None else epsilon
        kw.setdefault("growth_radii", np.geomspace(0.05 * L, 0.9 * L, 8))
        kw.setdefault("rho", 0.15 * L)
        return cls(gamma, eps, **kw)


def _dyadic(lo, hi, factor=2.0):
    out = []
    s = lo
    while s <= hi * (1 + 1e-12):
        out.append(s)
        s *= factor
    return out


def _normal(u: ScalarField, P):
    """Unit vector along the discrete gradient at the node nearest ``P``."""
    g = u.grid
    grads = np.gradient(u.values, g.h) if g.dim > 1 else [np.gradient(u.values, g.h)]
    idx = tuple(int(np.clip(round((p - o) / g.h), 0, g.n - 1)) for p, o in zip(P, g.origin))
    v = np.array([d[idx] for d in grads])
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else None


def run_estimators(u: ScalarField, s: EstimatorSettings, provenance=None) -> geo.EstimateReport:
    """Run the selected estimators and their declared checks on ``u``.

    Raises :class:`~quenchlab.geometry.GeometryError` when the level set
    ``{u > C1 eps^alpha}`` has no boundary points.  Density and tangential
    Harnack ratios are measured on ``{u > eps^alpha}`` instead, the other
    local estimators on the ``C1`` level set.  Estimators that have no
    admissible center, or too few dyadic scales between ``2h`` and ``rho``,
    are recorded under ``results["skipped"]``.
    """
    g = u.grid
    a = alpha(s.gamma)
    scale = s.epsilon**a
    fb = geo.extract_free_boundary(u, s.c1 * scale)
    if fb.empty:
        raise geo.GeometryError("empty free boundary")
    rep = geo.EstimateReport(provenance=dict(provenance or {}))
    rep.provenance.update({"gamma": s.gamma, "epsilon": s.epsilon, "alpha": a, "threshold": fb.threshold,
                           "grid": {"dim": g.dim, "n": g.n, "h": g.h, "origin": list(g.origin),
                                    "shape": g.shape_kind}, "seed": s.seed})
    rep.results["fb_points"] = int(len(fb.points))
    skipped = []
    rho = s.rho
    dist = geo.distance_field(fb)
    all_pts = geo.sample_fb_points(fb, s.fb_samples, s.seed)
    try:
        local = geo.sample_fb_points(fb, s.fb_samples, s.seed, admissible=lambda p: g.contains_ball(p, rho))
    except geo.GeometryError:
        local = np.empty((0, g.dim))
    # density and tangential Harnack are stated for {u > eps^alpha}, measured from its own boundary
    pos_level = {}

    def positivity():
        if not pos_level:
            pfb = geo.extract_free_boundary(u, scale)
            pdist, plocal = None, np.empty((0, g.dim))
            if not pfb.empty:
                pdist = geo.distance_field(pfb)
                try:
                    plocal = geo.sample_fb_points(pfb, s.fb_samples, s.seed,
                                                  admissible=lambda p: g.contains_ball(p, rho))
                except geo.GeometryError:
                    pass
            pos_level.update(fb=pfb, dist=pdist, local=plocal)
            rep.provenance["positivity_threshold"] = pfb.threshold
        return pos_level["fb"], pos_level["dist"], pos_level["local"]

    for name in s.estimators:
        if name == "growth":
            slopes, c0 = [], []
            for k, P in enumerate(all_pts):
                fit = geo.growth_exponent_fit(u, fb, P, s.growth_radii, alpha=a)
                slopes.append(fit.slope)
                c0.append(fit.c0)
                rep.tables[f"growth_{k}"] = geo.ScaleTable(
                    f"growth_{k}", [(r, v, v / r**a) for r, v in zip(fit.radii, fit.sups)])
            dev = float(np.max(np.abs(np.array(slopes) - a)))
            rep.results["growth_slopes"] = slopes
            rep.results["growth_c0"] = float(min(c0))
            rep.check("growth_exponent", dev, dev <= s.growth_tol, f"|slope - alpha| <= {s.growth_tol}")
        elif name == "gradient":
            gr = geo.gradient_bound_check(u, s.gamma, s.sigma0 * scale)
            rep.results["gradient_max_ratio"] = gr.max_ratio
            rep.results["gradient_location"] = gr.location
            rep.check("gradient_ratio_finite", gr.max_ratio, math.isfinite(gr.max_ratio), "finite")
        elif not len(local):
            skipped.append(name)
        elif name == "density":
            pfb, _, plocal = positivity()
            if not len(plocal):
                skipped.append(name)
                continue
            vals = []
            for k, P in enumerate(plocal):
                rows = [(d, v, v) for d in _dyadic(4 * g.h, rho) for v in [geo.density_ratio(pfb, P, d)]]
                rep.tables[f"density_{k}"] = geo.ScaleTable(f"density_{k}", rows)
                vals += [r[1] for r in rows]
            m = float(min(vals))
            rep.results["density_min"] = m
            rep.check("density_ratio", m, m >= s.density_min, f">= {s.density_min}")
        elif name == "l1_harnack":
            hr = geo.l1_harnack_check(u, fb, local, _dyadic(4 * g.h, rho), a)
            rep.tables["l1_harnack"] = hr.table
            rep.results["l1_harnack_min"] = hr.minimum
            rep.check("l1_harnack", hr.minimum, hr.passed, "> 0")
        elif name == "harnack":
            _, pdist, plocal = positivity()
            if not len(plocal):
                skipped.append(name)
                continue
            spreads = []
            for k, P in enumerate(plocal):
                n = _normal(u, P)
                if n is None:
                    continue
                rows = []
                # depths below eps sit in the transition layer, outside the estimate's hypothesis;
                # half-octave steps keep two depths in [eps, rho] when eps is near rho
                for d in _dyadic(max(8 * g.h, s.epsilon), rho, math.sqrt(2.0)):
                    X = P + d * n
                    if not g.contains_ball(X, 0.5 * pdist.at(X)):
                        break
                    try:
                        r = geo.tangential_harnack_ratio(u, pdist, X)
                    except geo.GeometryError:
                        continue
                    rows.append((d, r, r))
                if len(rows) >= 2:
                    t = geo.ScaleTable(f"harnack_{k}", rows)
                    rep.tables[t.name] = t
                    spreads.append(t.spread())
            if spreads:
                m = float(max(spreads))
                rep.results["harnack_spread"] = m
                rep.check("harnack_spread", m, m <= s.spread_max, f"max/min <= {s.spread_max}")
            else:
                skipped.append(name)
        elif name == "neighborhood" and not _dyadic(2 * g.h, rho / 8):
            skipped.append(name)
        elif name == "boxcount" and len(_dyadic(2 * g.h, rho / 2)) < 4:
            skipped.append(name)
        elif name == "neighborhood":
            spreads = []
            for k, P in enumerate(local):
                rows = []
                for mu in _dyadic(2 * g.h, rho / 8):
                    nv = geo.neighborhood_volume(fb, P, rho, mu, dist)
                    rows.append((mu, nv.volume, nv.ratio))
                t = geo.ScaleTable(f"neighborhood_{k}", rows)
                rep.tables[t.name] = t
                spreads.append(t.spread())
            m = float(max(spreads))
            rep.results["neighborhood_spread"] = m
            rep.check("neighborhood_spread", m, m <= s.spread_max, f"max/min <= {s.spread_max}")
        elif name == "boxcount":
            sizes = _dyadic(2 * g.h, rho / 2)
            devs = []
            for k, P in enumerate(local):
                bc = geo.surface_measure_boxcount(fb, P, rho, sizes)
                rep.tables[f"boxcount_{k}"] = geo.ScaleTable(
                    f"boxcount_{k}", list(zip(bc.sizes, bc.counts, bc.constants)))
                devs.append(math.inf if bc.degenerate else abs(bc.slope - (g.dim - 1)))
            m = float(max(devs))
            rep.results["boxcount_slope_deviation"] = m
            rep.check("boxcount_slope", m, m <= s.boxcount_tol, f"|slope - (N-1)| <= {s.boxcount_tol}")
        elif name == "spherical":
            lo, hi = math.inf, 0.0
            for P in local:
                sm = geo.spherical_mean_check(u, fb, P, _dyadic(4 * g.h, rho), a)
                lo, hi = min(lo, sm.minimum), max(hi, sm.maximum)
            rep.results["spherical_mean_range"] = [lo, hi]
            rep.check("spherical_mean", lo, lo > 0, "> 0")
    rep.results["skipped"] = skipped
    return rep


# ---------------------------------------------------------------------------
# runs

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def module_versions():
    try:
        own = version("artifact")
    except PackageNotFoundError:
        own = "unknown"
    return {"quenchlab": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


@dataclass
class RunManifest:
    config_hash: str
    versions: dict
    stages: dict = field(default_factory=dict)     # stage -> seconds
    files: dict = field(default_factory=dict)      # relative path -> sha256
    flags: list = field(default_factory=list)
    status: str = "ok"
    checks_passed: Optional[bool] = None
    cached: bool = False

    def to_dict(self):
        return {"config_hash": self.config_hash, "versions": self.versions, "stages": self.stages,
                "files": dict(sorted(self.files.items())), "flags": self.flags, "status": self.status,
                "checks_passed": self.checks_passed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["config_hash"], d["versions"], d["stages"], d["files"], d["flags"], d["status"],
                   d["checks_passed"])

    def verify(self, out):
        return all((Path(out) / name).is_file() and sha256_file(Path(out) / name) == digest
                   for name, digest in self.files.items())


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(geo._plain(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def profile_error(config: ExperimentConfig, u: ScalarField):
    """Relative sup distance to the planar profile ``c (x1 - shift)_+^alpha``.

    Only defined for the power datum with the automatic coefficient and a
    Trace or Pucci operator, where that profile is the exact limit solution.
    """
    if config.values["datum"] != "power" or config.datum_coef != AUTO or config.operator == "hessian-iota":
        return None
    exact = config.datum_function()(*u.grid.coords())
    mask = ~u.grid.masks()[2]
    return float(np.max(np.abs(u.values - exact)[mask]) / np.max(np.abs(exact)[mask]))


def run_experiment(config: ExperimentConfig, out=None, use_cache=True) -> RunManifest:
    """Solve or sweep, estimate on the final field, and write a manifest.

    Reuses a previous run in ``out`` whose manifest carries the same config
    hash and whose files still match their recorded hashes.  A failing stage
    keeps what earlier stages wrote and marks the manifest ``degraded``.
    """
    out = Path(out or config.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = config.hash()
    mpath = out / "manifest.json"
    if use_cache and mpath.is_file():
        old = RunManifest.from_dict(json.loads(mpath.read_text()))
        if old.config_hash == digest and old.verify(out):
            old.cached = True
            return old

    man = RunManifest(digest, module_versions())

    def record(path):
        man.files[str(Path(path).relative_to(out))] = sha256_file(path)

    cfg_path = out / "config.cfg"
    cfg_path.write_text(config.to_text())
    record(cfg_path)
    spec = config.problem()
    run_checks = geo.EstimateReport(provenance={"config_hash": digest, "name": config.name})
    final = None
    t0 = time.perf_counter()
    if config.mode == "sweep":
        sweep = continuation_sweep(spec)
        man.stages["sweep"] = time.perf_counter() - t0
        a = alpha(config.gamma)
        rows, fbs = [], []
        for k, res in enumerate(sweep.results):
            path = out / f"field_k{k}.fld"
            write_field(path, res.u)
            record(path)
            man.flags += [f"k{k}:{f}" for f in res.flags]
            fbs.append(geo.extract_free_boundary(res.u, config.threshold_c1 * res.epsilon**a))
        for k in range(1, len(sweep.results)):
            try:
                hd = geo.hausdorff_distance(fbs[k - 1], fbs[k])
            except geo.GeometryError:
                hd = math.nan
            rows.append((k, sweep.results[k].epsilon, sweep.differences[k - 1], hd))
        table = out / "hausdorff.csv"
        _write_rows(table, ["k", "epsilon", "sup_difference", "hausdorff"], rows)
        record(table)
        for col, label in ((2, "sup_differences_decreasing"), (3, "hausdorff_decreasing")):
            seq = np.array([r[col] for r in rows])
            ok = bool(len(seq) and np.all(np.isfinite(seq)) and np.all(np.diff(seq) < 0))
            ratio = float(np.max(seq[1:] / seq[:-1])) if len(seq) > 1 else math.nan
            run_checks.check(label, ratio, ok, "strictly decreasing in k (value: max ratio)")
        if not sweep.completed:
            man.status = "degraded"
            man.flags.append(f"sweep: {sweep.error}")
        elif sweep.results:
            final = sweep.results[-1]
    else:
        try:
            res = solve_minimal(spec)
        except SolverError as exc:
            man.status = "degraded"
            man.flags.append(f"solve: {exc}")
            res = None
        man.stages["solve"] = time.perf_counter() - t0
        if res is not None:
            path = out / "field.fld"
            write_field(path, res.u)
            record(path)
            man.flags += res.flags
            summary = {"converged": res.converged, "residual": res.residual, "tol": res.tol,
                       "epsilon": res.epsilon, "iterations": res.iterations}
            _write_json(out / "solve.json", summary)
            record(out / "solve.json")
            run_checks.check("converged", res.residual, res.converged, f"residual <= {res.tol:.3e}")
            if res.converged:
                final = res
            else:
                man.status = "degraded"
                man.flags.append(f"solve: residual {res.residual:.3e} above {res.tol:.3e}")

    if final is not None:
        err = profile_error(config, final.u)
        if err is not None:
            run_checks.check("profile_error", err, err <= 0.02, "relative sup error <= 0.02")
    if run_checks.checks:
        run_checks.write_json(out / "run_checks.json")
        record(out / "run_checks.json")
        man.checks_passed = run_checks.passed

    if final is not None and config.estimator_names():
        t0 = time.perf_counter()
        tables = out / "tables"
        tables.mkdir(exist_ok=True)
        try:
            rep = run_estimators(final.u, config.settings(epsilon=final.epsilon),
                                 provenance={"config_hash": digest, "name": config.name})
            rep.write_json(out / "estimates.json")
            record(out / "estimates.json")
            for p in rep.write_tables(tables):
                record(p)
            man.checks_passed = rep.passed and man.checks_passed is not False
        except geo.GeometryError as exc:
            man.status = "degraded"
            man.flags.append(f"estimate: {exc}")
            man.checks_passed = False
        man.stages["estimate"] = time.perf_counter() - t0
    _write_json(mpath, man.to_dict())
    return man


# ---------------------------------------------------------------------------
# collation

def collect_reports(directory):
    """One summary row per check found in the JSON reports under ``directory``."""
    rows = []
    for path in sorted(Path(directory).rglob("*.json")):
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            continue
        rel = str(path.relative_to(directory))
        if "checks" in data:
            for c in data["checks"]:
                rows.append((rel, c["name"], c["value"], c["tolerance"], c["passed"]))
        elif "certificate" in data:
            cert = data["certificate"]
            worst = min(v for v in cert["worst_margin"].values() if v is not None)
            rows.append((rel, "supersolution", worst, "margin >= 1e-08", cert["passed"]))
        elif "config_hash" in data and "status" in data:
            rows.append((rel, "run_status", None, "ok", data["status"] == "ok"))
    return rows


def write_summary(rows, path):
    _write_rows(path, ["report", "check", "value", "tolerance", "passed"], rows)
