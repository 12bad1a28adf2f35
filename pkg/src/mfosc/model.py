"""Mean-field model family: local drifts, interaction/noise scales, and the
Gaussian-smoothed effective drift of the slow reduced dynamics.

A model couples a local drift F with a linear attraction toward the
population mean (diagonal rate matrix K) and additive noise (diagonal
intensity sigma), with the local part scaled by a small parameter delta.
The zero-delta stationary profile is the centered Gaussian with variance
sigma^2/K; averaging F against that profile yields the drift that governs
the slow motion of the mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .hermite import gauss_hermite_nodes


class InvalidParameterError(ValueError):
    pass


_FD_STEP = float(np.cbrt(np.finfo(float).eps))


def fhn_drift(x, a: float, b: float, c: float):
    """FitzHugh-Nagumo vector field (x1 - x1^3/3 - x2, (x1 + a - b*x2)/c).

    x has shape (..., 2); c must be nonzero.
    """
    if c == 0:
        raise InvalidParameterError("FitzHugh-Nagumo timescale c must be nonzero")
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    out[..., 0] = x[..., 0] - x[..., 0] ** 3 / 3.0 - x[..., 1]
    out[..., 1] = (x[..., 0] + a - b * x[..., 1]) / c
    return out


def _fhn_jacobian(x, b: float, c: float):
    x = np.asarray(x, dtype=float)
    J = np.zeros(x.shape[:-1] + (2, 2))
    J[..., 0, 0] = 1.0 - x[..., 0] ** 2
    J[..., 0, 1] = -1.0
    J[..., 1, 0] = 1.0 / c
    J[..., 1, 1] = -b / c
    return J


def _fhn_hessian(x):
    x = np.asarray(x, dtype=float)
    H = np.zeros(x.shape[:-1] + (2, 2, 2))
    H[..., 0, 0, 0] = -2.0 * x[..., 0]
    return H


def smooth_cutoff_profile(t):
    """C^2 bump: 1 for t <= 1, 0 for t >= 2, quintic transition in between.

    The transition polynomial interpolates (1, 0) with zero first and second
    derivatives at both junctions.
    """
    t = np.asarray(t, dtype=float)
    s = np.clip(t - 1.0, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


def _cutoff_profile_deriv(t):
    t = np.asarray(t, dtype=float)
    s = np.clip(t - 1.0, 0.0, 1.0)
    return -30.0 * s ** 2 * (1.0 - s) ** 2


@dataclass
class DriftField:
    """Local drift with optional analytic derivatives.

    fun maps points of shape (..., d) to drift vectors of the same shape.
    Missing Jacobians/Hessians fall back to central finite differences with
    step h = cbrt(machine eps) * (1 + |x|).
    """

    kind: str
    fun: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    bounded_with_derivatives: bool = False
    params: dict = field(default_factory=dict)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.jac is not None:
            return self.jac(x)
        return _fd_jacobian(self.fun, x)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        if self.hess is not None:
            return self.hess(x)
        return _fd_hessian(self.fun, x)


def _fd_jacobian(fun, x):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = _FD_STEP * (1.0 + np.sqrt(np.sum(x ** 2, axis=-1)))
    J = np.empty(x.shape[:-1] + (d, d))
    for i in range(d):
        dx = np.zeros_like(x)
        dx[..., i] = h
        J[..., :, i] = (fun(x + dx) - fun(x - dx)) / (2.0 * h[..., None])
    return J


def _fd_hessian(fun, x):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = _FD_STEP ** 0.75 * (1.0 + np.sqrt(np.sum(x ** 2, axis=-1)))
    H = np.empty(x.shape[:-1] + (d, d, d))
    for i in range(d):
        for j in range(i, d):
            di = np.zeros_like(x)
            dj = np.zeros_like(x)
            di[..., i] = h
            dj[..., j] = h
            val = (
                fun(x + di + dj) - fun(x + di - dj) - fun(x - di + dj) + fun(x - di - dj)
            ) / (4.0 * h[..., None] ** 2)
            H[..., :, i, j] = val
            H[..., :, j, i] = val
    return H


def fhn_field(a: float, b: float, c: float) -> DriftField:
    if c == 0:
        raise InvalidParameterError("FitzHugh-Nagumo timescale c must be nonzero")
    return DriftField(
        kind="fhn",
        fun=lambda x: fhn_drift(x, a, b, c),
        jac=lambda x: _fhn_jacobian(x, b, c),
        hess=_fhn_hessian,
        bounded_with_derivatives=False,
        params={"a": a, "b": b, "c": c},
    )


def custom_field(fun, jac=None, hess=None, bounded_with_derivatives=False, params=None) -> DriftField:
    return DriftField(
        kind="custom",
        fun=fun,
        jac=jac,
        hess=hess,
        bounded_with_derivatives=bounded_with_derivatives,
        params=params or {},
    )


def cutoff_drift(F: DriftField, epsilon: float) -> DriftField:
    """Multiply a drift by the radial bump: x -> F(x) * profile(eps*|x|).

    The result equals F inside radius 1/eps, vanishes outside 2/eps, and is
    flagged bounded with bounded derivatives.
    """
    if epsilon <= 0:
        raise InvalidParameterError("cutoff radius parameter must be positive")

    def fun(x):
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x ** 2, axis=-1))
        return F.fun(x) * smooth_cutoff_profile(epsilon * r)[..., None]

    def jac(x):
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x ** 2, axis=-1))
        psi = smooth_cutoff_profile(epsilon * r)
        dpsi = _cutoff_profile_deriv(epsilon * r) * epsilon
        # gradient of psi(eps |x|); zero wherever dpsi vanishes, so the
        # division at r = 0 never contributes
        safe_r = np.where(r > 0, r, 1.0)
        grad = dpsi[..., None] * x / safe_r[..., None]
        base = F.jacobian(x)
        return base * psi[..., None, None] + F.fun(x)[..., :, None] * grad[..., None, :]

    return DriftField(
        kind=f"cutoff({F.kind})",
        fun=fun,
        jac=jac if F.jac is not None else None,
        hess=None,
        bounded_with_derivatives=True,
        params=dict(F.params, epsilon=epsilon),
    )


@dataclass
class ModelSpec:
    """Full model: dimension, rates k, noise sigma (diagonals), delta, drift."""

    d: int
    k: np.ndarray
    sigma: np.ndarray
    delta: float
    drift: DriftField

    def __post_init__(self):
        self.k = np.atleast_1d(np.asarray(self.k, dtype=float))
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if self.d < 1:
            raise InvalidParameterError("dimension must be >= 1")
        if self.delta < 0:
            raise InvalidParameterError("delta must be nonnegative")
        for name, arr in (("k", self.k), ("sigma", self.sigma)):
            if arr.shape != (self.d,):
                raise InvalidParameterError(f"{name} must have length d={self.d}")
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError(f"{name} entries must be finite")
        if np.any(self.k <= 0):
            raise InvalidParameterError("k entries must be strictly positive")
        # sigma = 0 entries describe degenerate smoothing; the reduced and
        # particle dynamics accept them, the spectral machinery rejects them
        # at basis construction
        if np.any(self.sigma < 0):
            raise InvalidParameterError("sigma entries must be nonnegative")

    @property
    def ratio(self) -> np.ndarray:
        """Per-coordinate stationary variance sigma_i^2 / k_i."""
        return self.sigma ** 2 / self.k


def fhn_model(a=1.0 / 3.0, b=1.0, c=10.0, ratio1=0.2, ratio2=0.2, k=(1.0, 1.0), delta=0.05) -> ModelSpec:
    """Two-dimensional FitzHugh-Nagumo model with noise chosen to hit the
    requested variance ratios sigma_i^2/k_i.

    The second ratio never enters the closed-form effective drift; it is a
    free parameter, default 0.2, and is echoed in output metadata.
    """
    k = np.asarray(k, dtype=float)
    sigma = np.sqrt(np.array([ratio1, ratio2]) * k)
    return ModelSpec(d=2, k=k, sigma=sigma, delta=delta, drift=fhn_field(a, b, c))


@dataclass
class GaussianRef:
    """Centered Gaussian stationary profile: variance sigma^2/k per coordinate."""

    variance: np.ndarray
    normalization: float

    def density(self, x):
        x = np.asarray(x, dtype=float)
        q = np.sum(x ** 2 / self.variance, axis=-1)
        return np.exp(-0.5 * q) / self.normalization

    def mass_quadrature(self, order: int) -> float:
        """Integrate the density with a deliberately mismatched Gaussian rule.

        Uses nodes adapted to 1.5x the profile variance so the check is a
        genuine quadrature of a non-polynomial integrand rather than an
        identity.
        """
        y, w = gauss_hermite_nodes(order)
        mism = 1.25
        total = 1.0
        for v in self.variance:
            nodes = y * np.sqrt(mism * v)
            # marginal density sampled on the mismatched grid, divided by the
            # mismatched reference density the rule integrates against
            vals = np.exp(-0.5 * nodes ** 2 / v) / np.sqrt(2.0 * np.pi * v)
            factor = np.sqrt(2.0 * np.pi * mism * v) * np.exp(0.5 * y ** 2)
            total *= float(np.sum(w * vals * factor))
        return total


def gaussian_ref(model: ModelSpec) -> GaussianRef:
    if np.any(model.sigma == 0):
        raise InvalidParameterError("the Gaussian profile degenerates when sigma has zero entries")
    variance = model.sigma ** 2 / model.k
    Z = float(np.prod(np.sqrt(2.0 * np.pi * variance)))
    return GaussianRef(variance=variance, normalization=Z)


def _gaussian_grid(model: ModelSpec, quad_order: int):
    """Tensor nodes/weights of the reference Gaussian (weights sum to 1)."""
    y, w = gauss_hermite_nodes(quad_order)
    std = np.sqrt(model.sigma ** 2 / model.k)
    axes = [y * s for s in std]
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.ones(nodes.shape[0])
    for g in np.meshgrid(*[w] * model.d, indexing="ij"):
        weights *= g.ravel()
    return nodes, weights


def effective_drift(z, model: ModelSpec, quad_order: int = 20) -> np.ndarray:
    """Gaussian-smoothed drift: the average of F(x + z) over the stationary
    profile, by tensorized Gauss-Hermite quadrature.

    Exact for polynomial drifts of per-coordinate degree <= 2*quad_order - 1.
    z may be a single point (d,) or a batch (..., d).
    """
    if quad_order < 1:
        raise InvalidParameterError("quad_order must be >= 1")
    z = np.asarray(z, dtype=float)
    nodes, weights = _gaussian_grid(model, quad_order)
    pts = z[..., None, :] + nodes
    vals = model.drift.fun(pts)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("drift overflow inside smoothing quadrature")
    return np.einsum("q,...qj->...j", weights, vals)


def effective_drift_fhn_closed(z, a: float, b: float, c: float, ratio1: float) -> np.ndarray:
    """Closed form of the smoothed FitzHugh-Nagumo drift:
    ((1 - ratio1) z1 - z1^3/3 - z2, (z1 + a - b z2)/c)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    out[..., 0] = (1.0 - ratio1) * z[..., 0] - z[..., 0] ** 3 / 3.0 - z[..., 1]
    out[..., 1] = (z[..., 0] + a - b * z[..., 1]) / c
    return out


def effective_jacobian(z, model: ModelSpec, quad_order: int = 20) -> np.ndarray:
    """Derivative of the smoothed drift: quadrature of DF(x + z) against the
    stationary profile."""
    z = np.asarray(z, dtype=float)
    nodes, weights = _gaussian_grid(model, quad_order)
    pts = z[..., None, :] + nodes
    J = model.drift.jacobian(pts)
    if not np.all(np.isfinite(J)):
        raise FloatingPointError("drift Jacobian overflow inside smoothing quadrature")
    return np.einsum("q,...qjl->...jl", weights, J)
