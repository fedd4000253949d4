"""Finite-difference solver for ``F(D^2 u) = beta_eps(u)`` with Dirichlet data.

Unknowns live on a uniform grid (1D interval, 2D square, or a disk masked out
of a square).  The minimal solution is approached from the harmonic envelope
``u_upper`` by a monotone, linearly implicit pseudo-time descent and finished
with a damped Newton iteration.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import (DEFAULT_MOLLIFIER, EllipticOperator, Mollifier, SingularityParams,
                    beta_eps, beta_eps_prime, beta_lipschitz, beta_sup, operator_gradient)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message, trace=None, partial=None):
        super().__init__(message)
        self.trace = trace or []
        self.partial = partial


# ---------------------------------------------------------------------------
# grids and fields

@dataclass(frozen=True)
class Grid:
    """Uniform grid with ``n`` nodes per axis, node ``i`` at ``origin + i*h``.

    Arrays are indexed ``[i]`` in 1D and ``[i, j]`` (x index first) in 2D.
    """
    dim: int
    n: int
    h: float
    origin: tuple
    shape_kind: str = "square"

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise SolverError("only 1D and 2D grids are supported")
        if self.n < 33 or self.n % 2 == 0:
            raise SolverError(f"nodes per axis must be odd and at least 33, got {self.n}")
        if self.shape_kind not in ("interval", "square", "disk"):
            raise SolverError(f"unknown domain shape {self.shape_kind!r}")
        if (self.shape_kind == "interval") != (self.dim == 1):
            raise SolverError("'interval' is the only 1D shape and is 1D only")

    @classmethod
    def interval(cls, lower=0.0, upper=1.0, n=1025):
        return cls(1, n, (upper - lower) / (n - 1), (float(lower),), "interval")

    @classmethod
    def square(cls, lower=-1.0, upper=1.0, n=257):
        return cls(2, n, (upper - lower) / (n - 1), (float(lower), float(lower)), "square")

    @classmethod
    def disk(cls, center=(0.0, 0.0), radius=1.0, n=257):
        h = 2.0 * radius / (n - 1)
        return cls(2, n, h, (center[0] - radius, center[1] - radius), "disk")

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n**self.dim

    def axes(self):
        return [self.origin[d] + self.h * np.arange(self.n) for d in range(self.dim)]

    def coords(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self):
        """Node positions, shape ``(size, dim)`` in flat (C) order."""
        return np.stack([c.ravel() for c in self.coords()], axis=-1)

    @property
    def center(self):
        return np.array([o + 0.5 * (self.n - 1) * self.h for o in self.origin])

    def _inside(self):
        if self.shape_kind != "disk":
            return np.ones(self.shape, dtype=bool)
        X, Y = self.coords()
        c = self.center
        R = 0.5 * (self.n - 1) * self.h
        return (X - c[0]) ** 2 + (Y - c[1]) ** 2 <= R**2 * (1.0 + 1e-12)

    def masks(self):
        """``(interior, boundary, exterior)`` boolean arrays partitioning the nodes."""
        inside = self._inside()
        interior = np.zeros(self.shape, dtype=bool)
        core = (slice(1, -1),) * self.dim
        interior[core] = True
        if self.shape_kind == "disk":
            ok = inside.copy()
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ok &= np.roll(np.roll(inside, di, 0), dj, 1)
            interior &= ok
        boundary = inside & ~interior
        return interior, boundary, ~inside

    def contains_ball(self, X, r):
        """Whether the closed ball ``B_r(X)`` lies in the (bounding box of the) domain."""
        X = np.atleast_1d(np.asarray(X, dtype=float))
        if self.shape_kind == "disk":
            R = 0.5 * (self.n - 1) * self.h
            return np.linalg.norm(X - self.center) + r <= R + 1e-12
        lo = np.array(self.origin)
        hi = lo + (self.n - 1) * self.h
        return bool(np.all(X - r >= lo - 1e-12) and np.all(X + r <= hi + 1e-12))


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    @property
    def flat(self):
        return self.values.ravel()

    def copy(self):
        return ScalarField(self.grid, self.values.copy())


def resolution_floor(grid: Grid, gamma: float) -> float:
    """Smallest admissible ``eps``: ``4 h^(1/alpha)``."""
    from .model import alpha
    return 4.0 * grid.h ** (1.0 / alpha(gamma))


# ---------------------------------------------------------------------------
# field files

def write_field(path, u: ScalarField):
    g = u.grid
    ny = g.n if g.dim == 2 else 1
    y0 = g.origin[1] if g.dim == 2 else 0.0
    rows = u.values[:, None] if g.dim == 1 else u.values
    with open(path, "w") as fh:
        fh.write(f"{g.dim} {g.n} {ny} {g.h!r} {g.origin[0]!r} {y0!r}\n")
        # row-major: one line per y index, x varying along the line
        for row in rows.T:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_field(path) -> ScalarField:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 6:
            raise SolverError(f"{path}: malformed field header")
        dim, nx, ny = (int(v) for v in header[:3])
        h, x0, y0 = (float(v) for v in header[3:])
        data = np.loadtxt(fh, ndmin=2)
    if dim == 1:
        if ny != 1 or data.size != nx:
            raise SolverError(f"{path}: expected {nx} values")
        return ScalarField(Grid(1, nx, h, (x0,), "interval"), data.ravel())
    if nx != ny or data.shape != (ny, nx):
        raise SolverError(f"{path}: expected a {nx} x {nx} block")
    return ScalarField(Grid(2, nx, h, (x0, y0), "square"), data.T)


# ---------------------------------------------------------------------------
# discretization

def discrete_hessian(u: ScalarField, node) -> np.ndarray:
    """Second-difference Hessian at one interior node (exact on quadratics)."""
    g = u.grid
    node = tuple(np.atleast_1d(node).astype(int))
    interior, _, _ = g.masks()
    if len(node) != g.dim or not interior[node]:
        raise SolverError(f"node {node} is not interior")
    v, h2 = u.values, g.h**2
    if g.dim == 1:
        i, = node
        return np.array([[(v[i - 1] - 2 * v[i] + v[i + 1]) / h2]])
    i, j = node
    dxx = (v[i - 1, j] - 2 * v[i, j] + v[i + 1, j]) / h2
    dyy = (v[i, j - 1] - 2 * v[i, j] + v[i, j + 1]) / h2
    dxy = (v[i + 1, j + 1] + v[i - 1, j - 1] - v[i + 1, j - 1] - v[i - 1, j + 1]) / (4 * h2)
    return np.array([[dxx, dxy], [dxy, dyy]])


class Discretization:
    """Sparse second-difference matrices restricted to interior rows.

    The mixed derivative is the centered four-point difference, i.e. the
    average of the two seven-point diagonal forms.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        interior, boundary, exterior = grid.masks()
        self.interior = interior.ravel()
        self.fixed = ~self.interior
        self.idx = np.flatnonzero(self.interior)
        n, size, h2 = grid.n, grid.size, grid.h**2
        strides = (n, 1) if grid.dim == 2 else (1,)
        rows = np.arange(self.idx.size)

        def stencil(entries):
            r, c, w = [], [], []
            for offset, weight in entries:
                r.append(rows)
                c.append(self.idx + offset)
                w.append(np.full(rows.size, weight / h2))
            return sp.csr_matrix((np.concatenate(w), (np.concatenate(r), np.concatenate(c))),
                                 shape=(rows.size, size))

        s0 = strides[0]
        self.D = {(0, 0): stencil([(-s0, 1.0), (0, -2.0), (s0, 1.0)])}
        if grid.dim == 2:
            s1 = strides[1]
            self.D[(1, 1)] = stencil([(-s1, 1.0), (0, -2.0), (s1, 1.0)])
            self.D[(0, 1)] = stencil([(s0 + s1, 0.25), (-s0 - s1, 0.25),
                                      (s0 - s1, -0.25), (-s0 + s1, -0.25)])
        self.n_int = self.idx.size

    def hessian(self, u_flat):
        N = self.grid.dim
        H = np.empty((self.n_int, N, N))
        H[:, 0, 0] = self.D[(0, 0)] @ u_flat
        if N == 2:
            H[:, 1, 1] = self.D[(1, 1)] @ u_flat
            H[:, 0, 1] = H[:, 1, 0] = self.D[(0, 1)] @ u_flat
        return H

    def linearization(self, grad):
        """Sparse matrix of ``v -> sum_ij a_ij D_ij v`` on interior unknowns."""
        A = sp.diags(grad[:, 0, 0]) @ self.D[(0, 0)]
        if self.grid.dim == 2:
            A = A + sp.diags(grad[:, 1, 1]) @ self.D[(1, 1)] + sp.diags(2.0 * grad[:, 0, 1]) @ self.D[(0, 1)]
        return A.tocsc()[:, self.idx].tocsc()

    def operator(self, op: EllipticOperator, u_flat, jacobian=False):
        H = self.hessian(u_flat)
        val, grad = operator_gradient(op, H)
        return (val, self.linearization(grad)) if jacobian else (val, None)


# ---------------------------------------------------------------------------
# problem definition

@dataclass
class ProblemSpec:
    params: SingularityParams
    operator: EllipticOperator
    grid: Grid
    datum: Callable
    mollifier: Mollifier = DEFAULT_MOLLIFIER
    tol: float = 1e-8
    max_iter: int = 200
    max_pseudo_steps: int = 400
    schedule: Optional[Sequence[float]] = None
    enforce_floor: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise SolverError("tol must be positive")
        if self.operator.kind == "hessian-iota":
            # F(0) = N and F'(0) = 0: no zero envelope, singular linearization at flat states
            raise SolverError("the solver needs F(0) = 0 and uniform ellipticity; "
                              "hessian-iota has F(0) = N and a degenerate derivative at 0")
        if self.schedule is not None:
            sched = [float(e) for e in self.schedule]
            if not sched or any(e <= 0 for e in sched) or any(b > a for a, b in zip(sched, sched[1:])):
                raise SolverError("schedule must be a nonempty nonincreasing list of positive eps")
            self.schedule = sched
        if self.enforce_floor:
            floor = resolution_floor(self.grid, self.params.gamma)
            smallest = min(self.schedule) if self.schedule else self.params.epsilon
            if smallest < floor * (1 - 1e-12):
                raise SolverError(f"eps = {smallest:g} is below the resolution floor 4h^(1/alpha) = {floor:g}")
        f = self.boundary_values()
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise SolverError("boundary datum must be finite and nonnegative")

    @staticmethod
    def continuation_schedule(eps0, K):
        return [eps0 * 2.0**-k for k in range(K + 1)]

    def with_epsilon(self, eps):
        return replace(self, params=self.params.with_epsilon(eps), schedule=None)

    def datum_field(self) -> np.ndarray:
        vals = np.asarray(self.datum(*self.grid.coords()), dtype=float)
        return np.broadcast_to(vals, self.grid.shape).ravel().copy()

    def boundary_values(self):
        _, boundary, _ = self.grid.masks()
        return self.datum_field()[boundary.ravel()]


@dataclass
class SolveResult:
    u: ScalarField
    residual: float
    iterations: dict
    u_star: ScalarField
    u_upper: ScalarField
    converged: bool
    epsilon: float
    flags: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    seconds: float = 0.0
    tol: float = 0.0


class _System:
    """``G(u) = F(D_h^2 u) - beta_eps(u)`` on interior nodes, boundary values frozen."""

    def __init__(self, spec: ProblemSpec, disc: Discretization = None):
        self.spec = spec
        self.disc = disc or Discretization(spec.grid)
        self.datum = spec.datum_field()

    def beta(self, u_int):
        return beta_eps(self.spec.params, self.spec.mollifier, u_int)

    def beta_prime(self, u_int):
        return beta_eps_prime(self.spec.params, self.spec.mollifier, u_int)

    def full(self, u_int):
        u = self.datum.copy()
        u[self.disc.idx] = u_int
        return u

    def residual(self, u_int, jacobian=False):
        val, A = self.disc.operator(self.spec.operator, self.full(u_int), jacobian)
        G = val - self.beta(u_int)
        if not jacobian:
            return G, None
        return G, (A - sp.diags(self.beta_prime(u_int))).tocsc()


def residual(spec: ProblemSpec, u: ScalarField) -> ScalarField:
    """``F(D_h^2 u) - beta_eps(u)`` on interior nodes (zero elsewhere)."""
    disc = Discretization(spec.grid)
    val, _ = disc.operator(spec.operator, u.flat)
    out = np.zeros(spec.grid.size)
    out[disc.idx] = val - beta_eps(spec.params, spec.mollifier, u.flat[disc.idx])
    return ScalarField(spec.grid, out)


def effective_tol(spec: "ProblemSpec", scale: float) -> float:
    """``spec.tol`` raised to the rounding floor of second differences."""
    return max(spec.tol, 8.0 * np.finfo(float).eps * max(1.0, scale) / spec.grid.h**2)


def _newton(fun, x0, tol, max_iter, trace, label, fixed_step=False):
    """Damped Newton on ``fun(x) -> (G, J)`` with Armijo backtracking on ``|G|_2``."""
    x = x0.copy()
    G, J = fun(x, True)
    for k in range(max_iter):
        gnorm = float(np.max(np.abs(G))) if G.size else 0.0
        trace.append((label, k, gnorm))
        if gnorm <= tol:
            return x, gnorm, k, True
        if not np.all(np.isfinite(G)):
            break
        try:
            dx = spla.spsolve(J, -G)
        except RuntimeError:
            break
        if not np.all(np.isfinite(dx)):
            break
        merit = float(G @ G)
        t = 1.0
        for _ in range(40):
            xt = x + t * dx
            Gt, _ = fun(xt, False)
            if fixed_step or float(Gt @ Gt) <= (1.0 - 1e-4 * t) * merit:
                break
            t *= 0.5
        else:
            break
        x = xt
        G, J = fun(x, True)
    gnorm = float(np.max(np.abs(G))) if G.size else 0.0
    return x, gnorm, max_iter, gnorm <= tol


def _solve_constant_rhs(spec, disc, rhs, u0, trace, label):
    """``F(D_h^2 u) = rhs`` with the boundary datum of ``spec`` (policy/Newton iteration)."""
    datum = spec.datum_field()

    def fun(x, jac):
        u = datum.copy()
        u[disc.idx] = x
        val, A = disc.operator(spec.operator, u, jac)
        return val - rhs, A

    diam2 = spec.grid.dim * ((spec.grid.n - 1) * spec.grid.h) ** 2
    tol = effective_tol(spec, float(np.max(np.abs(datum))) + abs(rhs) * diam2 / 8.0)
    x, res, its, ok = _newton(fun, u0[disc.idx], tol, spec.max_iter, trace, label)
    if not ok:
        raise ConvergenceError(f"{label}: envelope solve did not converge (residual {res:.3e})", trace)
    u = datum.copy()
    u[disc.idx] = x
    return ScalarField(spec.grid, u)


def solve_envelopes(spec: ProblemSpec, disc: Discretization = None, trace=None):
    """Subsolution ``F(D^2 u) = zeta`` and supersolution ``F(D^2 u) = 0``."""
    disc = disc or Discretization(spec.grid)
    trace = [] if trace is None else trace
    start = spec.datum_field()
    u_upper = _solve_constant_rhs(spec, disc, 0.0, start, trace, "u_upper")
    zeta = beta_sup(spec.params, spec.mollifier)
    u_star = _solve_constant_rhs(spec, disc, zeta, u_upper.flat, trace, "u_star")
    return u_star, u_upper


def _pseudo_time(system: _System, x0, steps, tau, trace, direction=-1, stop=1e-10):
    """Monotone semi-implicit descent ``(I/tau - A) dx = G(x)``.

    The operator part is linearized implicitly, beta explicitly; with
    ``tau * max beta' <= 1`` the map is order preserving, so iterates started
    at a supersolution decrease monotonically.  A step moving against
    ``direction`` halves ``tau`` and is retried while the iterate is still a
    supersolution.  For a convex operator the frozen linearization can step
    past the supersolution set (``G > 0`` somewhere); no ``tau`` undoes that,
    so the step is taken and logged as ``monotonicity_relaxed``.
    """
    x = x0.copy()
    n = x.size
    I = sp.identity(n, format="csc")
    lu = None
    halvings = 0
    k = 0
    for k in range(1, steps + 1):
        linear = system.spec.operator.kind == "trace"
        val, Aop = system.disc.operator(system.spec.operator, system.full(x), lu is None or not linear)
        G = val - system.beta(x)
        if lu is None or not linear:
            lu = spla.splu((I / tau - Aop).tocsc())
        dx = lu.solve(G)
        scale = max(1.0, float(np.max(np.abs(x))))
        if direction and np.any(direction * dx < -1e-12 * scale):
            if np.any(direction * G < 0):
                trace.append(("monotonicity_relaxed", k, float(np.max(-direction * G))))
                x = x + dx
                continue
            tau *= 0.5
            halvings += 1
            log.info("pseudo-time: non-monotone step, tau halved to %.3e", tau)
            trace.append(("cfl_halved", k, tau))
            lu = None
            if halvings > 30:
                raise ConvergenceError("pseudo-time: cannot restore monotonicity", trace)
            continue
        x = x + dx
        inc = float(np.max(np.abs(dx))) if n else 0.0
        trace.append(("pseudo_time", k, inc))
        if inc <= stop * scale:
            break
    return x, k, tau, halvings


def solve_minimal(spec: ProblemSpec, initial: Optional[ScalarField] = None,
                  envelopes=None, disc: Discretization = None) -> SolveResult:
    """Minimal discrete solution between the envelopes.

    Cold start: monotone pseudo-time descent from ``u_upper`` followed by a
    damped Newton polish.  With ``initial`` (a warm start from a neighbouring
    eps) Newton is tried first and the cold path is the fallback.
    """
    t0 = time.perf_counter()
    disc = disc or Discretization(spec.grid)
    trace, flags = [], []
    if envelopes is None:
        envelopes = solve_envelopes(spec, disc, trace)
    u_star, u_upper = envelopes
    system = _System(spec, disc)
    fun = lambda x, jac: system.residual(x, jac)
    tol = effective_tol(spec, float(np.max(np.abs(u_upper.flat))))
    iters = {"pseudo_time": 0, "newton": 0}

    x = None
    if initial is not None:
        x, res, its, ok = _newton(fun, initial.flat[disc.idx], tol, spec.max_iter, trace, "newton_warm")
        iters["newton"] += its
        if not ok:
            flags.append("warm_start_failed")
            x = None
    if x is None:
        lip = beta_lipschitz(spec.params, spec.mollifier)
        tau = 1.0 / max(lip, 1e-12)
        x, steps, tau, halvings = _pseudo_time(system, u_upper.flat[disc.idx], spec.max_pseudo_steps,
                                               tau, trace, direction=-1, stop=1e-4)
        iters["pseudo_time"] += steps
        if halvings:
            flags.append("cfl_halved")
        if any(t[0] == "monotonicity_relaxed" for t in trace):
            flags.append("monotonicity_relaxed")
        x_pt = x
        x, res, its, ok = _newton(fun, x_pt, tol, spec.max_iter, trace, "newton_polish")
        iters["newton"] += its
        if not ok:
            flags.append("newton_fallback")
            log.warning("Newton polish failed (residual %.3e); continuing pseudo-time", res)
            x, steps, tau, _ = _pseudo_time(system, x_pt, 50 * spec.max_pseudo_steps, tau, trace,
                                            direction=-1, stop=1e-14)
            iters["pseudo_time"] += steps
    G, _ = system.residual(x)
    res = float(np.max(np.abs(G))) if G.size else 0.0
    u = ScalarField(spec.grid, system.full(x))
    converged = res <= tol
    if converged:
        lo = np.min(u.flat - u_star.flat)
        hi = np.max(u.flat - u_upper.flat)
        if lo < -tol or hi > tol:
            flags.append("sandwich_violated")
    return SolveResult(u, res, iters, u_star, u_upper, converged, spec.params.epsilon,
                       flags, trace, time.perf_counter() - t0, tol)


@dataclass
class SweepResult:
    results: list
    differences: list
    completed: bool
    error: Optional[str] = None

    @property
    def epsilons(self):
        return [r.epsilon for r in self.results]


def continuation_sweep(spec: ProblemSpec) -> SweepResult:
    """Solve along ``spec.schedule`` with warm starts; sup-norm Cauchy monitor."""
    schedule = spec.schedule or [spec.params.epsilon]
    disc = Discretization(spec.grid)
    results, diffs = [], []
    prev = None
    for eps in schedule:
        stage = spec.with_epsilon(eps)
        try:
            res = solve_minimal(stage, initial=prev.u if prev is not None else None, disc=disc)
        except SolverError as exc:
            return SweepResult(results, diffs, False, f"eps={eps:g}: {exc}")
        if not res.converged:
            results.append(res)
            return SweepResult(results, diffs, False, f"eps={eps:g}: residual {res.residual:.3e}")
        if prev is not None:
            diffs.append(float(np.max(np.abs(res.u.flat - prev.u.flat))))
        results.append(res)
        prev = res
    return SweepResult(results, diffs, True)
