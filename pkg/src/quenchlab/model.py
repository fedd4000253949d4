"""Scalar ingredients of the regularized quenching problem.

The regularized equation reads ``F(D^2 u) = beta_eps(u)`` where

    alpha        = 1 + gamma / (2 - gamma)
    B_eps(t)     = int_0^{(t - sigma0 eps^alpha) / eps^alpha} rho(s) ds
    beta_eps(t)  = gamma t^(gamma - 1) B_eps(t)

and ``F`` is one of a small catalogue of uniformly elliptic operators acting on
symmetric matrices through their eigenvalues.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SingularityParams:
    gamma: float
    epsilon: float
    sigma0: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ModelError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.sigma0 < 0.5:
            raise ModelError(f"sigma0 must lie in (0, 1/2), got {self.sigma0}")
        if not self.epsilon > 0.0:
            raise ModelError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def alpha(self) -> float:
        return alpha(self)

    @property
    def scale(self) -> float:
        """Height ``eps^alpha`` of the transition layer."""
        return self.epsilon ** self.alpha

    def with_epsilon(self, epsilon: float) -> "SingularityParams":
        return SingularityParams(self.gamma, epsilon, self.sigma0)


def alpha(params) -> float:
    """Sharp growth exponent ``1 + gamma/(2 - gamma)``.

    Accepts either a :class:`SingularityParams` or a bare ``gamma``.
    """
    gamma = params.gamma if isinstance(params, SingularityParams) else float(params)
    return 1.0 + gamma / (2.0 - gamma)


@dataclass(frozen=True)
class Mollifier:
    """Bump ``rho(s) = 30 s^2 (1 - s)^2`` on [0, 1] with unit mass.

    The antiderivative is the quintic smoothstep ``10 s^3 - 15 s^4 + 6 s^5``.
    """

    def density(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s > 0.0) & (s < 1.0)
        return np.where(inside, 30.0 * s**2 * (1.0 - s) ** 2, 0.0)

    def density_derivative(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s > 0.0) & (s < 1.0)
        return np.where(inside, 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s), 0.0)

    def cumulative(self, s):
        """``int_0^s rho``, clipped to the support so the result is in [0, 1]."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        return s**3 * (10.0 + s * (-15.0 + 6.0 * s))


DEFAULT_MOLLIFIER = Mollifier()


def big_b_eps(params: SingularityParams, mollifier: Mollifier, t):
    scale = params.scale
    return mollifier.cumulative((np.asarray(t, dtype=float) - params.sigma0 * scale) / scale)


def beta_eps(params: SingularityParams, mollifier: Mollifier, t):
    """Regularized reaction, identically zero for ``t <= sigma0 eps^alpha``."""
    t = np.asarray(t, dtype=float)
    active = t > params.sigma0 * params.scale
    # the placeholder keeps the power finite where the branch is discarded
    tt = np.where(active, t, 1.0)
    out = np.where(active, params.gamma * tt ** (params.gamma - 1.0) * big_b_eps(params, mollifier, tt), 0.0)
    return out if out.ndim else float(out)


def beta_eps_prime(params: SingularityParams, mollifier: Mollifier, t):
    t = np.asarray(t, dtype=float)
    g = params.gamma
    scale = params.scale
    active = t > params.sigma0 * scale
    tt = np.where(active, t, 1.0)
    s = (tt - params.sigma0 * scale) / scale
    d = (g * (g - 1.0) * tt ** (g - 2.0) * mollifier.cumulative(s)
         + g * tt ** (g - 1.0) * mollifier.density(s) / scale)
    out = np.where(active, d, 0.0)
    return out if out.ndim else float(out)


def _unit_profile_extrema(params: SingularityParams, mollifier: Mollifier):
    # beta_eps(eps^alpha s) = eps^(alpha-2) beta_1(s); the extrema of beta_1 and
    # beta_1' sit in the transition window s in [sigma0, 1 + sigma0].
    unit = SingularityParams(params.gamma, 1.0, params.sigma0)
    lo, hi = params.sigma0, 1.0 + params.sigma0
    s = np.linspace(lo, hi, 4001)
    out = []
    for fn in (beta_eps, beta_eps_prime):
        vals = fn(unit, mollifier, s)
        k = int(np.argmax(vals))
        a, b = s[max(k - 1, 0)], s[min(k + 1, s.size - 1)]
        res = optimize.minimize_scalar(lambda x: -fn(unit, mollifier, x), bounds=(a, b),
                                       method="bounded", options={"xatol": 1e-13})
        out.append(max(float(-res.fun), float(vals[k])))
    return out


def beta_sup(params: SingularityParams, mollifier: Mollifier = DEFAULT_MOLLIFIER) -> float:
    """``zeta = sup beta_eps``, found by 1D maximization of the unit-scale profile."""
    sup1, _ = _unit_profile_extrema(params, mollifier)
    return params.epsilon ** (params.alpha - 2.0) * sup1


def beta_lipschitz(params: SingularityParams, mollifier: Mollifier = DEFAULT_MOLLIFIER) -> float:
    """Upper bound for the positive part of ``beta_eps'``."""
    _, lip1 = _unit_profile_extrema(params, mollifier)
    return params.epsilon ** (params.alpha - 2.0) / params.scale * lip1


# ---------------------------------------------------------------------------
# operators

KINDS = ("trace", "pucci+", "pucci-", "hessian-iota")


def _check_symmetric(M):
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ModelError(f"expected square matrices, got shape {M.shape}")
    if M.shape[-1] not in (1, 2, 3):
        raise ModelError("matrix size must be 1, 2 or 3")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if not np.allclose(M, np.swapaxes(M, -1, -2), rtol=0.0, atol=1e-12 * scale):
        raise ModelError("matrix is not symmetric")
    return M


def sym_eig(M):
    """Eigenvalues (ascending) and eigenvectors of stacked symmetric matrices.

    Closed form for sizes 1 and 2, LAPACK for size 3.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    if n == 1:
        return M[..., 0, :].copy(), np.ones(M.shape)
    if n == 2:
        a, b, c = M[..., 0, 0], M[..., 0, 1], M[..., 1, 1]
        mean = 0.5 * (a + c)
        half = 0.5 * (a - c)
        rad = np.hypot(half, b)
        lam = np.stack([mean - rad, mean + rad], axis=-1)
        # eigenvector of the larger eigenvalue: angle phi with tan(2 phi) = 2b/(a-c)
        phi = 0.5 * np.arctan2(b, half)
        cs, sn = np.cos(phi), np.sin(phi)
        vec = np.empty(M.shape)
        vec[..., 0, 1], vec[..., 1, 1] = cs, sn
        vec[..., 0, 0], vec[..., 1, 0] = -sn, cs
        return lam, vec
    return np.linalg.eigh(M)


@dataclass(frozen=True)
class ConcavityCertificate:
    matrix: np.ndarray
    constant: float


@dataclass(frozen=True)
class EllipticOperator:
    """Rotation invariant operator ``F(M) = sum_j f(lambda_j(M))``.

    ``hessian-iota`` is ``sum_j (1 + lambda_j^iota)^(1/iota)`` for odd ``iota``.
    It is only degenerate elliptic (``f'(0) = 0``); its stored ``lam`` is 0 and
    ``Lam`` is the sharp constant in ``F(M) - F(0) <= Lam * sum lambda_j^+``.
    """
    kind: str = "trace"
    lam: float = 1.0
    Lam: float = 1.0
    iota: int = 3
    concavity: Optional[ConcavityCertificate] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown operator kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "hessian-iota":
            if self.iota < 1 or self.iota % 2 == 0:
                raise ModelError("iota must be an odd natural number")
        elif not (self.lam > 0.0 and self.Lam >= self.lam):
            raise ModelError(f"need 0 < lambda <= Lambda, got {self.lam}, {self.Lam}")

    @property
    def homogeneous(self) -> bool:
        return self.kind != "hessian-iota"

    def f(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "trace":
            return x
        if self.kind == "pucci+":
            return np.where(x > 0, self.Lam * x, self.lam * x)
        if self.kind == "pucci-":
            return np.where(x > 0, self.lam * x, self.Lam * x)
        return np.cbrt(1.0 + x**3) if self.iota == 3 else _odd_root(1.0 + x**self.iota, self.iota)

    def fprime(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "trace":
            return np.ones_like(x)
        if self.kind == "pucci+":
            return np.where(x > 0, self.Lam, self.lam)
        if self.kind == "pucci-":
            return np.where(x > 0, self.lam, self.Lam)
        k = self.iota
        inner = 1.0 + x**k
        with np.errstate(divide="ignore", invalid="ignore"):
            d = x ** (k - 1) * np.abs(inner) ** (1.0 / k - 1.0)
        # singular at eigenvalue -1; capped so linearizations stay finite
        return np.nan_to_num(np.minimum(d, 1e6), nan=1e6, posinf=1e6)

    def inverse_f(self, y):
        """Solve ``f(x) = y`` (``f`` is strictly increasing for every kind)."""
        y = np.asarray(y, dtype=float)
        if self.kind == "trace":
            return y
        if self.kind == "pucci+":
            return np.where(y > 0, y / self.Lam, y / self.lam)
        if self.kind == "pucci-":
            return np.where(y > 0, y / self.lam, y / self.Lam)
        return _odd_root(y**self.iota - 1.0, self.iota)

    @classmethod
    def trace(cls, with_certificate=True, N=2):
        cert = ConcavityCertificate(np.eye(N), 0.0) if with_certificate else None
        return cls("trace", 1.0, 1.0, concavity=cert)

    @classmethod
    def pucci_plus(cls, lam=1.0, Lam=2.0):
        return cls("pucci+", lam, Lam)

    @classmethod
    def pucci_minus(cls, lam=1.0, Lam=2.0):
        return cls("pucci-", lam, Lam)

    @classmethod
    def hessian_iota(cls, iota=3, N=2, with_certificate=True):
        # min over x of x - (1 + x^iota)^(1/iota), attained at x^iota = -1/2 with value -2^(1 - 1/iota)
        cert = ConcavityCertificate(np.eye(N), N * 2.0 ** (1.0 - 1.0 / iota)) if with_certificate else None
        return cls("hessian-iota", 0.0, _iota_upper_constant(iota), iota=iota, concavity=cert)


def _odd_root(x, k):
    return np.sign(x) * np.abs(x) ** (1.0 / k)


def _iota_upper_constant(iota):
    # sup over x of (f(x) - f(0)) / x; for x > 0 the ratio stays below 1, for
    # x < 0 it peaks once on (-inf, -1).
    op = EllipticOperator("hessian-iota", 0.0, 1.0, iota=iota)
    g = lambda x: float((op.f(x) - 1.0) / x)
    res = optimize.minimize_scalar(lambda s: -g(-s), bounds=(1.0, 10.0), method="bounded",
                                   options={"xatol": 1e-12})
    return max(1.0, -float(res.fun))


def eval_operator(op: EllipticOperator, M):
    """``F(M)`` for one symmetric matrix or a stack of them (shape ``(..., N, N)``)."""
    M = _check_symmetric(M)
    lam, _ = sym_eig(M)
    val = np.sum(op.f(lam), axis=-1)
    return val if val.ndim else float(val)


def operator_gradient(op: EllipticOperator, M):
    """Value and derivative ``dF/dM_ij`` (symmetric) for stacked matrices."""
    M = np.asarray(M, dtype=float)
    lam, vec = sym_eig(M)
    val = np.sum(op.f(lam), axis=-1)
    w = op.fprime(lam)
    grad = np.einsum("...ik,...k,...jk->...ij", vec, w, vec)
    return val, grad


def recession(op: EllipticOperator, M, mu_sequence: Sequence[float] = None, tol=1e-6):
    """Extrapolated limit of ``mu F(M / mu)`` as ``mu -> 0``.

    Richardson extrapolation on the tail of ``mu_sequence`` (default
    ``2**-k, k = 4..12``), assuming an error expansion in integer powers of mu.
    Raises ``ModelError`` if the last two extrapolants differ by more than
    ``tol`` (relative to ``max(1, |limit|)``).
    """
    M = _check_symmetric(M)
    if mu_sequence is None:
        mu_sequence = 2.0 ** -np.arange(4, 13)
    mu = np.asarray(mu_sequence, dtype=float)
    if mu.size < 3 or np.any(np.diff(mu) >= 0) or np.any(mu <= 0):
        raise ModelError("mu_sequence must be positive, strictly decreasing, length >= 3")
    vals = np.array([m * eval_operator(op, M / m) for m in mu])
    # Neville table at mu = 0 on the last few samples
    k = min(mu.size, 5)
    x, table = mu[-k:], list(vals[-k:])
    extrap = [table[-1]]
    for order in range(1, k):
        table = [(x[i] * table[i + 1] - x[i + order] * table[i]) / (x[i] - x[i + order])
                 for i in range(len(table) - 1)]
        extrap.append(table[-1])
    limit = extrap[-1]
    if abs(extrap[-1] - extrap[-2]) > tol * max(1.0, abs(limit)):
        raise ModelError(f"recession limit not converged: {extrap[-2]} vs {extrap[-1]}")
    return float(limit)


@dataclass
class ConcavityReport:
    minimum: float
    constant: float
    passed: bool
    argmin: np.ndarray
    tolerance: float


def concavity_certificate_check(op: EllipticOperator, samples, tolerance=1e-10) -> ConcavityReport:
    """Minimum of ``f_ij M_ij - F(M)`` over samples against ``-C_F``."""
    if op.concavity is None:
        raise ModelError(f"operator {op.kind!r} carries no concavity certificate")
    samples = _check_symmetric(np.asarray(samples, dtype=float))
    fmat = op.concavity.matrix
    if fmat.shape != samples.shape[-2:]:
        raise ModelError("certificate matrix size does not match the samples")
    defect = np.einsum("ij,...ij->...", fmat, samples) - eval_operator(op, samples)
    defect = np.atleast_1d(defect)
    k = int(np.argmin(defect))
    m = float(defect[k])
    return ConcavityReport(m, op.concavity.constant, m >= -op.concavity.constant - tolerance,
                           samples.reshape(-1, *fmat.shape)[k], tolerance)


def random_symmetric(rng, count, N, scale=1.0):
    A = rng.normal(scale=scale, size=(count, N, N))
    return 0.5 * (A + np.swapaxes(A, -1, -2))
