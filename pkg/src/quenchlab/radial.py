"""Reference radial solutions of ``F(D^2 u) = gamma u^(gamma-1)`` in ``{u > 0}``.

The closed-form one-dimensional power law and outward shooting profiles for
rotation invariant operators.  For a radial function the Hessian eigenvalues
are ``u''`` (once) and ``u'/r`` (``N - 1`` times), so the PDE becomes

    f(u'') + (N - 1) f(u'/r) = gamma u^(gamma - 1)

with ``f`` the operator's eigenvalue function, which is strictly increasing
and hence invertible for ``u''``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .model import EllipticOperator, ModelError, alpha


@dataclass
class RadialProfile:
    gamma: float
    operator: EllipticOperator
    N: int
    alpha: float
    c_star: float
    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    dense: Callable = field(default=None, repr=False)
    log: list = field(default_factory=list)

    @property
    def kind(self):
        return self.operator.kind

    def __call__(self, r):
        return np.interp(r, self.r, self.u)

    def exponent_fit(self):
        """Least-squares log-log slope of ``u`` against ``r``."""
        slope, _ = np.polyfit(np.log(self.r[1:]), np.log(self.u[1:]), 1)
        return float(slope)

    def rescaled(self, s):
        """The profile ``r -> u(s r) / s^alpha`` on the radii ``r / s``."""
        a = self.alpha
        base = self.dense

        def dense(r):
            u, du = base(np.asarray(r) * s)
            return u / s**a, du / s ** (a - 1.0)

        return RadialProfile(self.gamma, self.operator, self.N, a, self.c_star,
                             self.r / s, self.u / s**a, self.du / s ** (a - 1.0), dense)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# gamma={self.gamma!r} operator={self.kind} lam={self.operator.lam!r} "
                     f"Lam={self.operator.Lam!r} N={self.N} alpha={self.alpha!r} c_star={self.c_star!r}\n")
            w = csv.writer(fh)
            w.writerow(["r", "u", "du"])
            for row in zip(self.r, self.u, self.du):
                w.writerow([repr(float(x)) for x in row])


def read_profile_csv(path):
    """Return ``(header dict, r, u, du)`` from a profile CSV."""
    with open(path) as fh:
        head = fh.readline().lstrip("# ").split()
        meta = dict(item.split("=", 1) for item in head)
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float)
    return meta, data[:, 0], data[:, 1], data[:, 2]


def _radius_grid(r_lo, r_hi, samples):
    return np.concatenate([[0.0], np.geomspace(r_lo, r_hi, samples)])


def exact_power_profile(gamma, r_max=1.0, samples=200) -> RadialProfile:
    """``u(x) = c x^alpha`` with ``c^(2-gamma) = (2-gamma)^2/2`` solving ``u'' = gamma u^(gamma-1)``."""
    if not 0.0 < gamma < 1.0:
        raise ModelError("gamma must lie in (0, 1)")
    a = alpha(gamma)
    c = ((2.0 - gamma) ** 2 / 2.0) ** (1.0 / (2.0 - gamma))
    r = _radius_grid(1e-6 * r_max, r_max, samples)

    def dense(x):
        x = np.asarray(x, dtype=float)
        return c * x**a, c * a * x ** (a - 1.0)

    return RadialProfile(gamma, EllipticOperator.trace(N=1), 1, a, c, r, *dense(r), dense)


def leading_coefficient(gamma, op: EllipticOperator, N):
    """``c`` in ``u ~ c r^alpha``: both radial eigenvalues are positive, so each
    enters with weight ``f(1)``."""
    a = alpha(gamma)
    weight = float(op.f(1.0))
    return (gamma / (weight * a * (a + N - 2.0))) ** (1.0 / (2.0 - gamma))


def radial_shoot(gamma, op: EllipticOperator, N, r_max=1.0, samples=200, rtol=1e-10,
                 attempts=4) -> RadialProfile:
    """Integrate the radial equation outward from ``r0 = 1e-6 r_max``.

    Initial data come from the one-term asymptotics ``u ~ c r^alpha``.  When
    the integrator fails, ``r0`` is shrunk tenfold (up to ``attempts`` times);
    every attempt is recorded in ``profile.log``.
    """
    if not 0.0 < gamma < 1.0:
        raise ModelError("gamma must lie in (0, 1)")
    if op.kind not in ("trace", "pucci+", "pucci-"):
        raise ModelError(f"radial shooting needs a Trace or Pucci operator, got {op.kind!r}")
    if N not in (1, 2, 3):
        raise ModelError("N must be 1, 2 or 3")
    a = alpha(gamma)
    c = leading_coefficient(gamma, op, N)

    def rhs(r, y):
        u, du = y
        src = gamma * max(u, 1e-300) ** (gamma - 1.0)
        if N > 1:
            src -= (N - 1) * float(op.f(du / r))
        return [du, float(op.inverse_f(src))]

    log = []
    r0 = 1e-6 * r_max
    for _ in range(attempts):
        r = _radius_grid(r0, r_max, samples)
        y0 = [c * r0**a, c * a * r0 ** (a - 1.0)]
        sol = solve_ivp(rhs, (r0, r_max), y0, method="DOP853", t_eval=r[1:],
                        rtol=rtol, atol=1e-14 * c * r_max**a, dense_output=True)
        log.append({"r0": r0, "status": int(sol.status), "message": sol.message})
        if sol.success:
            u = np.concatenate([[0.0], sol.y[0]])
            du = np.concatenate([[0.0], sol.y[1]])
            return RadialProfile(gamma, op, N, a, c, r, u, du, sol.sol, log)
        r0 /= 10.0
    raise ModelError(f"radial shooting failed after {attempts} attempts: {log[-1]['message']}")


def ode_residual(profile: RadialProfile, rel_step=1e-3):
    """Relative residual ``|F(D^2 u) - gamma u^(gamma-1)| / (gamma u^(gamma-1))``
    at every sampled radius > 0.

    ``u''`` comes from a five-point difference of the continuous ``u'`` (the
    integrator's dense output, or the closed form), not from the equation.
    """
    op, N, g = profile.operator, profile.N, profile.gamma
    r = profile.r[1:]
    r = r[(r * (1 + 2 * rel_step) <= profile.r[-1]) & (r * (1 - 2 * rel_step) >= profile.r[1])]
    d = rel_step * r
    du = lambda x: profile.dense(x)[1]
    d2u = (-du(r + 2 * d) + 8 * du(r + d) - 8 * du(r - d) + du(r - 2 * d)) / (12 * d)
    u, first = profile.dense(r)
    lhs = op.f(d2u)
    if N > 1:
        lhs = lhs + (N - 1) * op.f(first / r)
    src = g * u ** (g - 1.0)
    return np.abs(lhs - src) / src
