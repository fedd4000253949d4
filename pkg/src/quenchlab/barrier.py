"""Explicit radial supersolution with a flat core and its epsilon rescaling.

    theta(r) = 2 sigma0                                   r <= c1 eta
             = (A alpha^2 / 2) eta^(alpha-2) (r - c1 eta)^2 + 2 sigma0
                                                          c1 eta < r < eta
             = A r^alpha + 2 sigma0 - (A/2) eta^alpha      r >= eta

with ``c1 = gamma/2`` so that ``alpha = 1/(1 - c1)`` and the pieces glue in
value and slope.  Certification is by dense radial sampling plus a 10x
refinement re-check; it is a reproducible numerical certificate, not an
interval-arithmetic proof.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import (DEFAULT_MOLLIFIER, EllipticOperator, Mollifier, ModelError, SingularityParams,
                    alpha, beta_eps, eval_operator)

MARGIN = 1e-8


class BarrierError(ModelError):
    pass


@dataclass
class BarrierSpec:
    gamma: float
    sigma0: float
    eta: float
    A: float
    operator: EllipticOperator
    M: float
    N: int = 2
    mollifier: Mollifier = DEFAULT_MOLLIFIER
    tuning_log: list = field(default_factory=list)

    @property
    def alpha(self):
        return alpha(self.gamma)

    @property
    def c1(self):
        return self.gamma / 2.0

    @property
    def a0(self):
        return self.A * self.alpha**2 * self.eta ** (self.alpha - 2.0) / 2.0

    @property
    def B(self):
        return 2.0 * self.sigma0 - 0.5 * self.A * self.eta**self.alpha

    @property
    def c2(self):
        """``min_{r >= eta} theta / eta^alpha``, attained at ``r = eta``."""
        return float(self.theta(self.eta)) / self.eta**self.alpha

    def with_amplitude(self, A):
        return BarrierSpec(self.gamma, self.sigma0, self.eta, A, self.operator, self.M, self.N,
                           self.mollifier, self.tuning_log)

    def pieces(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.c1 * self.eta, 0, np.where(r < self.eta, 1, 2))

    def theta(self, r):
        r = np.asarray(r, dtype=float)
        a, s0, eta = self.alpha, self.sigma0, self.eta
        ann = self.a0 * (r - self.c1 * eta) ** 2 + 2.0 * s0
        out = self.A * np.maximum(r, eta) ** a + self.B
        return np.select([r <= self.c1 * eta, r < eta], [2.0 * s0, ann], out)

    def dtheta(self, r):
        r = np.asarray(r, dtype=float)
        a, eta = self.alpha, self.eta
        ann = 2.0 * self.a0 * (r - self.c1 * eta)
        out = self.A * a * np.maximum(r, eta) ** (a - 1.0)
        return np.select([r <= self.c1 * eta, r < eta], [0.0, ann], out)

    def radial_eigenvalues(self, r):
        """``(theta'', theta'/r)`` from the closed forms on each piece."""
        r = np.asarray(r, dtype=float)
        a, eta, A = self.alpha, self.eta, self.A
        k = A * a**2 * eta ** (a - 2.0)
        rr = np.maximum(r, eta)
        safe = np.where(r > 0, r, 1.0)
        first = np.select([r <= self.c1 * eta, r < eta], [0.0, k], A * a * (a - 1.0) * rr ** (a - 2.0))
        second = np.select([r <= self.c1 * eta, r < eta], [0.0, k * (1.0 - self.c1 * eta / safe)],
                           A * a * rr ** (a - 2.0))
        return first, second

    def operator_values(self, r, scale=1.0):
        """``F(D^2 theta)`` at radii ``r`` with the Hessian multiplied by ``scale``."""
        first, second = self.radial_eigenvalues(r)
        diag = np.zeros(np.shape(first) + (self.N, self.N))
        diag[..., 0, 0] = scale * first
        for i in range(1, self.N):
            diag[..., i, i] = scale * second
        return np.asarray(eval_operator(self.operator, diag), dtype=float)

    def reaction(self, r):
        unit = SingularityParams(self.gamma, 1.0, self.sigma0)
        return np.asarray(beta_eps(unit, self.mollifier, self.theta(r)), dtype=float)

    def matching_errors(self):
        """Jumps of value and slope where the pieces meet, formula against formula."""
        a, eta, s0, c1 = self.alpha, self.eta, self.sigma0, self.c1
        ann = lambda r: (self.a0 * (r - c1 * eta) ** 2 + 2 * s0, 2 * self.a0 * (r - c1 * eta))
        out = lambda r: (self.A * r**a + self.B, self.A * a * r ** (a - 1))
        v0, d0 = ann(c1 * eta)
        v1, d1 = ann(eta)
        v2, d2 = out(eta)
        return {"core": (abs(v0 - 2 * s0), abs(d0)), "outer": (abs(v1 - v2), abs(d1 - d2))}


def radial_mesh(M, samples=10_000):
    return np.linspace(0.0, M, samples)


@dataclass
class Certificate:
    passed: bool
    samples: int
    refined_samples: int
    worst_margin: dict
    violations: list
    annulus_envelope_ok: bool
    outer_envelope_ok: bool
    monotone: bool

    def to_dict(self):
        return {
            "passed": self.passed,
            "samples": self.samples,
            "refined_samples": self.refined_samples,
            "worst_margin": self.worst_margin,
            "violations": self.violations,
            "annulus_envelope_ok": self.annulus_envelope_ok,
            "outer_envelope_ok": self.outer_envelope_ok,
            "monotone": self.monotone,
        }


def _check_mesh(spec: BarrierSpec, r, margin):
    lhs = spec.operator_values(r)
    rhs = spec.reaction(r)
    gap = rhs - lhs
    piece = spec.pieces(r)
    worst = {}
    for k, name in enumerate(("inner", "annulus", "outer")):
        sel = piece == k
        worst[name] = float(gap[sel].min()) if sel.any() else None
    bad = np.flatnonzero(gap < margin)
    violations = [{"r": float(r[i]), "F": float(lhs[i]), "beta": float(rhs[i])} for i in bad[:50]]
    # upper envelopes for the two nontrivial pieces
    a, eta, A, lam_max = spec.alpha, spec.eta, spec.A, spec.operator.Lam
    tol = 1e-12 * (1.0 + A)
    ann = lhs[piece == 1]
    out = lhs[piece == 2]
    env_ann = bool(np.all(ann <= lam_max * spec.N * A * a**2 * eta ** (a - 2.0) + tol))
    env_out = bool(np.all(out <= lam_max * spec.N * A * a * eta ** (a - 2.0) + tol))
    return worst, violations, len(bad), env_ann, env_out


def certify_supersolution(spec: BarrierSpec, samples=None, margin=MARGIN, refine=10) -> Certificate:
    """Check ``F(D^2 theta) <= beta_1(theta) - margin`` on a radial mesh of
    ``[0, M]`` and again on a ``refine``-times finer mesh."""
    r = radial_mesh(spec.M) if samples is None else np.asarray(samples, dtype=float)
    worst, viol, nbad, env_a, env_o = _check_mesh(spec, r, margin)
    fine = np.linspace(r.min(), r.max(), refine * r.size) if refine else r
    n_fine = 0
    if refine:
        worst_f, viol_f, nbad_f, env_af, env_of = _check_mesh(spec, fine, margin)
        worst = {k: min(v for v in (worst[k], worst_f[k]) if v is not None)
                 if (worst[k] is not None or worst_f[k] is not None) else None for k in worst}
        viol += viol_f
        nbad += nbad_f
        env_a &= env_af
        env_o &= env_of
        n_fine = fine.size
    monotone = bool(np.all(np.diff(spec.theta(fine)) >= -1e-15))
    return Certificate(nbad == 0, int(r.size), n_fine, worst, viol, env_a, env_o, monotone)


def tune_amplitude(spec: BarrierSpec, iterations=60, rel_tol=1e-6, samples=None):
    """Bisection for the largest certified ``A`` in ``(0, 2 sigma0 / M^alpha]``.

    Returns half the found boundary; every probe is appended to
    ``spec.tuning_log`` as ``(A, passed, worst margin)``.
    """
    a_max = 2.0 * spec.sigma0 / spec.M**spec.alpha
    log = spec.tuning_log
    log.clear()

    def probe(A):
        cert = certify_supersolution(spec.with_amplitude(A), samples, refine=0)
        worst = min(v for v in cert.worst_margin.values() if v is not None)
        log.append({"A": A, "passed": cert.passed, "worst_margin": worst})
        return cert.passed

    if probe(a_max):
        return a_max / 2.0
    lo, hi = 0.0, a_max
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
        if lo > 0 and hi - lo <= rel_tol * hi:
            break
    if lo <= 0.0:
        raise BarrierError(f"empty bracket: no certified amplitude in (0, {a_max:g}]; "
                           f"smallest probe A={hi:g} violated F(D^2 theta) <= beta(theta)")
    return lo / 2.0


def build_barrier(gamma, sigma0=0.25, eta=1.0, op: EllipticOperator = None, M=None, N=2,
                  mollifier: Mollifier = DEFAULT_MOLLIFIER) -> BarrierSpec:
    if not 0.0 < gamma < 1.0:
        raise BarrierError("gamma must lie in (0, 1)")
    if not eta > 0:
        raise BarrierError("eta must be positive")
    M = 2.0 * eta if M is None else float(M)
    if M < eta:
        raise BarrierError(f"domain bound M={M:g} must be at least eta={eta:g}")
    op = op or EllipticOperator.trace(N=N)
    spec = BarrierSpec(gamma, sigma0, eta, 0.0, op, M, N, mollifier)
    spec.A = tune_amplitude(spec)
    return spec


@dataclass
class RescaledBarrier:
    base: BarrierSpec
    epsilon: float

    def theta(self, r):
        e, a = self.epsilon, self.base.alpha
        return e**a * self.base.theta(np.asarray(r, dtype=float) / e)

    def certify(self, samples=10_000, margin=MARGIN):
        """Check ``F(D^2 theta_eps) <= beta_eps(theta_eps)`` on ``[0, eps M]``.

        Both sides carry the factor ``eps^(alpha-2)``; the margin is applied
        after dividing it out, which is the unit-scale check for the
        rescaled operator ``eps^(2-alpha) F(eps^(alpha-2) .)``.
        """
        b, e = self.base, self.epsilon
        a = b.alpha
        r = np.linspace(0.0, e * b.M, samples)
        lhs = b.operator_values(r / e, scale=e ** (a - 2.0))
        params = SingularityParams(b.gamma, e, b.sigma0)
        rhs = np.asarray(beta_eps(params, b.mollifier, self.theta(r)), dtype=float)
        gap = (rhs - lhs) * e ** (2.0 - a)
        return bool(np.all(gap >= margin)), float(gap.min())


def rescale_barrier(spec: BarrierSpec, epsilon) -> RescaledBarrier:
    if not epsilon > 0:
        raise BarrierError("epsilon must be positive")
    return RescaledBarrier(spec, float(epsilon))


def barrier_report(spec: BarrierSpec, cert: Certificate) -> dict:
    op = spec.operator
    return {
        "inputs": {"gamma": spec.gamma, "sigma0": spec.sigma0, "eta": spec.eta, "M": spec.M, "N": spec.N,
                   "operator": {"kind": op.kind, "lam": op.lam, "Lam": op.Lam}},
        "A": spec.A,
        "A_max": 2.0 * spec.sigma0 / spec.M**spec.alpha,
        "alpha": spec.alpha,
        "c1": spec.c1,
        "a0": spec.a0,
        "B": spec.B,
        "c2": spec.c2,
        "certificate": cert.to_dict(),
        "bisection": list(spec.tuning_log),
    }


def write_report(path, report: dict):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
