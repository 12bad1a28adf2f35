"""Weighted Hermite spectral calculus.

Everything here lives on the Gaussian-weighted line/space with weight
w_theta(x) = exp(-theta/2 * sum_i k_i x_i^2 / sigma_i^2).  The tensorized
normalized Hermite polynomials form an orthonormal basis of the weighted
L^2 space and diagonalize the Ornstein-Uhlenbeck generator, which makes
norms, derivatives, semigroups and cross-weight generator matrices cheap
finite-dimensional objects once a total-degree truncation is fixed.

Conventions:
  * h_n is the probabilists' Hermite polynomial normalized so that
    integral h_n h_m exp(-x^2/2) dx = delta_{nm}; h_0 = (2*pi)**-0.25.
  * basis functions carry the normalization constant prod (theta k_i /
    sigma_i^2)**0.25 so the tensor basis is orthonormal in L^2_theta for
    every admissible (theta, K, sigma), not just the unit case.
  * multi-indices are enumerated in graded lexicographic order (total
    degree major, lexicographic minor).
  * "function side" coefficients expand f = sum f_l psi_l; "distribution
    side" coefficients are flat pairings c_l = <u, psi_l>, equivalently
    the expansion u = sum c_l psi_l w_theta.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal, expm

TWO_PI_QUARTER = (2.0 * np.pi) ** 0.25


class WeightMismatchError(ValueError):
    """Raised when coefficient objects with incompatible weights are mixed."""


class UnsupportedRegimeError(ValueError):
    """Raised for parameter regimes outside the supported theta <= theta' range."""


def hermite_eval(n: int, x):
    """Evaluate the n-th normalized Hermite polynomial h_n at x.

    Uses the stable three-term recurrence
    x*h_{n-1} = sqrt(n)*h_n + sqrt(n-1)*h_{n-2}.
    """
    if n < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    h_prev = np.zeros_like(x)
    h = np.full_like(x, 1.0 / TWO_PI_QUARTER)
    for m in range(1, n + 1):
        h, h_prev = (x * h - np.sqrt(m - 1.0) * h_prev) / np.sqrt(m), h
    return h if np.ndim(x) else float(h)


def hermite_table(nmax: int, x: np.ndarray) -> np.ndarray:
    """Values h_0..h_nmax at the points x, shape (len(x), nmax+1)."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (nmax + 1,))
    out[..., 0] = 1.0 / TWO_PI_QUARTER
    if nmax >= 1:
        out[..., 1] = x / TWO_PI_QUARTER
    for n in range(2, nmax + 1):
        out[..., n] = (x * out[..., n - 1] - np.sqrt(n - 1.0) * out[..., n - 2]) / np.sqrt(n)
    return out


@lru_cache(maxsize=64)
def gauss_hermite_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for the normalized Gaussian weight exp(-y^2/2)/sqrt(2 pi).

    Golub-Welsch on the symmetric tridiagonal Jacobi matrix of the
    normalized Hermite recurrence (off-diagonal sqrt(n)); weights sum to 1.
    Nodes are symmetrized so odd moments vanish exactly.
    """
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    if order == 1:
        return np.array([0.0]), np.array([1.0])
    offdiag = np.sqrt(np.arange(1, order, dtype=float))
    nodes, vecs = eigh_tridiagonal(np.zeros(order), offdiag)
    weights = vecs[0, :] ** 2
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / weights.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def multi_indices(d: int, nmax: int) -> np.ndarray:
    """All multi-indices with total degree <= nmax, graded-lex order, shape (n, d)."""
    rows = []

    def compositions(total, dim):
        if dim == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in compositions(total - first, dim - 1):
                yield (first,) + rest

    for deg in range(nmax + 1):
        rows.extend(sorted(compositions(deg, d)))
    return np.array(rows, dtype=np.int64)


def num_coefficients(d: int, nmax: int) -> int:
    from math import comb

    return comb(nmax + d, d)


class HermiteBasis:
    """Truncated tensor basis psi_l for one choice of (theta, K, sigma, nmax).

    Owns the multi-index table, the OU eigenvalues lambda_l = theta sum k_i l_i,
    and evaluation/derivative/quadrature machinery.  Immutable after
    construction and safe to share across threads.
    """

    def __init__(self, d: int, theta: float, k, sigma, nmax: int = 24):
        if not 0 < theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        self.d = int(d)
        self.theta = float(theta)
        self.k = np.asarray(k, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        if self.k.shape != (self.d,) or self.sigma.shape != (self.d,):
            raise ValueError("k and sigma must have length d")
        if np.any(self.k <= 0) or np.any(self.sigma <= 0):
            raise ValueError("k and sigma entries must be positive")
        self.nmax = int(nmax)
        self.indices = multi_indices(self.d, self.nmax)
        self.n_coeff = len(self.indices)
        # argument scaling per coordinate and L^2_theta normalization
        self.scale = np.sqrt(self.theta * self.k / self.sigma ** 2)
        self.norm_const = float(np.prod(np.sqrt(self.scale)))
        self.lam = self.theta * (self.indices @ self.k)
        self.a_theta = self.theta * float(np.sum(self.k))
        self._pos = {tuple(l): i for i, l in enumerate(self.indices)}
        # lowering table: lower[i, j] = index of l - e_j, or -1 at degree 0
        lower = np.full((self.n_coeff, self.d), -1, dtype=np.int64)
        for i, l in enumerate(self.indices):
            for j in range(self.d):
                if l[j] > 0:
                    down = list(l)
                    down[j] -= 1
                    lower[i, j] = self._pos[tuple(down)]
        self.lower = lower

    def index_of(self, l) -> int:
        return self._pos[tuple(int(v) for v in l)]

    def constant_value(self) -> float:
        """Value of psi_0 (a constant function)."""
        return self.norm_const / TWO_PI_QUARTER ** self.d

    # --- evaluation ---------------------------------------------------

    def eval_matrix(self, points: np.ndarray) -> np.ndarray:
        """B[q, i] = psi_{l_i}(points[q]), points shape (n, d)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tables = [hermite_table(self.nmax, self.scale[j] * points[:, j]) for j in range(self.d)]
        B = np.full((points.shape[0], self.n_coeff), self.norm_const)
        for i, l in enumerate(self.indices):
            for j in range(self.d):
                B[:, i] *= tables[j][:, l[j]]
        return B

    def deriv_matrices(self, points: np.ndarray) -> list[np.ndarray]:
        """Per-coordinate derivative tables D_j[q, i] = d_j psi_{l_i}(points[q])."""
        B = self.eval_matrix(points)
        out = []
        for j in range(self.d):
            Dj = np.zeros_like(B)
            has = self.lower[:, j] >= 0
            coef = np.sqrt(self.indices[has, j].astype(float)) * self.scale[j]
            Dj[:, has] = B[:, self.lower[has, j]] * coef
            out.append(Dj)
        return out

    def basis_eval(self, l, x) -> float:
        """psi_l at a single point x."""
        x = np.asarray(x, dtype=float).reshape(self.d)
        val = self.norm_const
        for j in range(self.d):
            val *= hermite_eval(int(l[j]), self.scale[j] * x[j])
        return float(val)

    # --- quadrature ----------------------------------------------------

    def quadrature(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Tensor nodes/weights for integrals against the weight w_theta.

        sum_q W_q g(x_q) ~= integral g(x) w_theta(x) dx, exact for g of
        per-coordinate degree <= 2*order - 1.
        """
        y, w = gauss_hermite_nodes(order)
        axes_nodes = [y / s for s in self.scale]
        axes_weights = [w * np.sqrt(2.0 * np.pi) / s for s in self.scale]
        grids = np.meshgrid(*axes_nodes, indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        weights = np.ones(nodes.shape[0])
        for g in np.meshgrid(*axes_weights, indexing="ij"):
            weights *= g.ravel()
        return nodes, weights


def gh_quadrature(g, theta: float, k, sigma, order: int) -> float:
    """Integrate g against w_theta by a tensorized Gauss-Hermite rule.

    g takes points of shape (n, d) and returns shape (n,).  Raises if any
    sampled value is non-finite, reporting the offending node.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    basis = HermiteBasis(len(k), theta, k, sigma, 0)
    nodes, weights = basis.quadrature(order)
    vals = np.asarray(g(nodes), dtype=float).reshape(-1)
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise FloatingPointError(f"non-finite integrand value at node {nodes[bad]}")
    return float(weights @ vals)


# --- coefficient containers ------------------------------------------------

FUNCTION_SIDE = "function"
DISTRIBUTION_SIDE = "distribution"


@dataclass
class SpectralCoeffs:
    """Coefficient vector over a truncated Hermite basis.

    side selects the meaning: 'function' stores f_l with f = sum f_l psi_l,
    'distribution' stores flat pairings c_l = <u, psi_l>.
    """

    basis: HermiteBasis
    side: str
    coeffs: np.ndarray
    truncated_tail: bool = field(default=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.basis.n_coeff,):
            raise ValueError("coefficient length does not match truncation")
        if self.side not in (FUNCTION_SIDE, DISTRIBUTION_SIDE):
            raise ValueError(f"unknown side {self.side!r}")

    def copy(self) -> "SpectralCoeffs":
        return SpectralCoeffs(self.basis, self.side, self.coeffs.copy(), self.truncated_tail)


@dataclass
class SobolevParams:
    """Smoothness order r and weight theta; the shift a_theta is derived."""

    r: float
    theta: float
    a_theta: float = field(init=False, default=0.0)

    def bind(self, basis: HermiteBasis) -> "SobolevParams":
        if abs(self.theta - basis.theta) > 1e-14:
            raise WeightMismatchError("theta of norm parameters does not match basis")
        self.a_theta = basis.a_theta
        return self


def ou_eigenvalue(l, theta: float, k) -> float:
    """Decay rate theta * sum_i k_i l_i of the OU mode with index l."""
    l = np.asarray(l, dtype=float)
    k = np.asarray(k, dtype=float)
    return float(theta * np.dot(k, l))


def sobolev_norm(c: SpectralCoeffs, params: SobolevParams) -> float:
    """Truncated weighted Sobolev norm of the coefficient vector.

    Function side uses weights (a_theta + lambda_l)^r, the distribution
    (dual) side uses (a_theta + lambda_l)^(-r); both are justified by the
    flat-pairing identification of the dual space.
    """
    params.bind(c.basis)
    w = (c.basis.a_theta + c.basis.lam) ** (params.r if c.side == FUNCTION_SIDE else -params.r)
    return float(np.sqrt(np.sum(w * c.coeffs ** 2)))


def derivative_shift(c: SpectralCoeffs, i: int) -> SpectralCoeffs:
    """Coefficients of d/dx_i f for a function-side vector.

    Top-degree content leaves the truncation exactly (the derivative lowers
    degree), so no information is lost; the flag records that the inverse
    operation would not be exact.
    """
    if c.side != FUNCTION_SIDE:
        raise ValueError("derivative_shift acts on function-side coefficients")
    basis = c.basis
    out = np.zeros_like(c.coeffs)
    for pos, l in enumerate(basis.indices):
        if l[i] > 0:
            target = basis.lower[pos, i]
            out[target] += np.sqrt(l[i] * basis.theta * basis.k[i] / basis.sigma[i] ** 2) * c.coeffs[pos]
    return SpectralCoeffs(basis, FUNCTION_SIDE, out, truncated_tail=c.truncated_tail)


@dataclass
class GeneratorMatrix:
    """Matrix of the weight-theta' OU generator on the weight-theta basis.

    Column l of `matrix` holds the expansion of L*_{theta'} psi_{l,theta}:
    diagonal entry -lambda_{theta',l}, plus entries coupling to indices with
    one coordinate lowered by two.  Upper triangular in graded order, so the
    spectrum is exactly the diagonal.
    """

    theta: float
    theta_prime: float
    trunc: int
    matrix: np.ndarray
    basis: HermiteBasis

    @property
    def eigenvalues(self) -> np.ndarray:
        """Spectrum of the truncated operator; the diagonal, by triangularity."""
        return np.diag(self.matrix).copy()


def cross_weight_generator(theta: float, theta_prime: float, trunc: int, k, sigma) -> GeneratorMatrix:
    """Assemble L*_{theta'} on the psi_{l,theta} basis up to total degree trunc.

    Requires 0 < theta <= theta'; the mixed-weight recurrence couples l only
    to l and to l with one coordinate lowered by 2.
    """
    if theta > theta_prime:
        raise UnsupportedRegimeError("only theta <= theta_prime is supported")
    k = np.asarray(k, dtype=float)
    basis = HermiteBasis(len(k), theta, k, sigma, trunc)
    n = basis.n_coeff
    M = np.zeros((n, n))
    for col, l in enumerate(basis.indices):
        M[col, col] = -theta_prime * float(np.dot(k, l))
        for j in range(basis.d):
            if l[j] >= 2:
                down = list(l)
                down[j] -= 2
                row = basis.index_of(down)
                M[row, col] = -(theta_prime - theta) * k[j] * np.sqrt(l[j] * (l[j] - 1.0))
    return GeneratorMatrix(theta, theta_prime, trunc, M, basis)


def semigroup_apply(c: SpectralCoeffs, t: float, gen: GeneratorMatrix | None = None) -> SpectralCoeffs:
    """Apply the OU semigroup for time t >= 0 to a coefficient vector.

    Matched weights (gen is None, or gen.theta == gen.theta_prime == basis
    weight): each mode is scaled by exp(-lambda_l t).  Mismatched weights:
    dense matrix exponential; function-side vectors evolve by exp(t M),
    distribution-side flat pairings by exp(t M)^T.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if gen is None or gen.theta == gen.theta_prime:
        theta_prime = c.basis.theta if gen is None else gen.theta_prime
        lam = theta_prime / c.basis.theta * c.basis.lam
        return SpectralCoeffs(c.basis, c.side, np.exp(-lam * t) * c.coeffs, c.truncated_tail)
    if gen.basis.n_coeff != c.basis.n_coeff or abs(gen.theta - c.basis.theta) > 1e-14:
        raise WeightMismatchError("generator truncation/weight does not match coefficients")
    E = expm(t * gen.matrix)
    new = E @ c.coeffs if c.side == FUNCTION_SIDE else E.T @ c.coeffs
    return SpectralCoeffs(c.basis, c.side, new, c.truncated_tail)


def reweight_distribution(c: SpectralCoeffs, theta_target: float, order: int | None = None) -> SpectralCoeffs:
    """Re-express distribution-side coefficients in a different weight.

    The flat pairings against the target basis are quadratures of products
    of two polynomial families against the source weight, so the change of
    basis is exact once the rule clears twice the truncation degree.
    """
    if c.side != DISTRIBUTION_SIDE:
        raise ValueError("reweighting is defined for distribution-side coefficients")
    src = c.basis
    if abs(theta_target - src.theta) < 1e-15:
        return c.copy()
    tgt = HermiteBasis(src.d, theta_target, src.k, src.sigma, src.nmax)
    order = order or (src.nmax + 2)
    nodes, weights = src.quadrature(order)
    Bs = src.eval_matrix(nodes)
    Bt = tgt.eval_matrix(nodes)
    T = Bt.T @ (weights[:, None] * Bs)
    return SpectralCoeffs(tgt, DISTRIBUTION_SIDE, T @ c.coeffs, c.truncated_tail)


def calibrate_contraction_order(
    k,
    sigma,
    thetas=(0.25, 0.5, 1.0),
    trunc: int = 12,
    trial_max: int = 10,
    n_vectors: int = 100,
    seed: int = 0,
) -> int:
    """Smallest integer r for which mean-zero distribution vectors decay at
    the expected rate under the weight-1 semigroup, in every H^{-r}_theta of
    the grid.

    The fitted decay rate over t in [1, 5] must reach 0.99 * min(k).  The
    smoothing order below which the mixed-weight transient spoils the rate
    is not known in closed form, so it is measured once per configuration.
    """
    k = np.asarray(k, dtype=float)
    kmin = float(np.min(k))
    rng = np.random.default_rng(seed)
    ts = np.linspace(0.0, 5.0, 11)[1:]
    fit_mask = ts >= 1.0
    for r in range(1, trial_max + 1):
        ok = True
        for theta in thetas:
            gen = cross_weight_generator(theta, 1.0, trunc, k, sigma)
            basis = gen.basis
            wts = (basis.a_theta + basis.lam) ** (-r)
            props = [expm(t * gen.matrix).T for t in ts]
            for _ in range(n_vectors):
                c = rng.standard_normal(basis.n_coeff)
                c[0] = 0.0
                norms = np.array([np.sqrt(np.sum(wts * (P @ c) ** 2)) for P in props])
                slope = np.polyfit(ts[fit_mask], np.log(norms[fit_mask]), 1)[0]
                if -slope < 0.99 * kmin:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return r
    raise RuntimeError(f"no r <= {trial_max} reaches the mean-zero contraction rate")


# --- serialization ----------------------------------------------------------


def coeffs_to_csv(c: SpectralCoeffs) -> str:
    """One row per multi-index: l_1..l_d, re, im (always 0)."""
    basis = c.basis
    buf = io.StringIO()
    kv = ",".join(f"{v:.11e}" for v in basis.k)
    sv = ",".join(f"{v:.11e}" for v in basis.sigma)
    buf.write(f"# theta={basis.theta:.11e} nmax={basis.nmax} side={c.side} K=[{kv}] sigma=[{sv}]\n")
    buf.write(",".join(f"l_{j + 1}" for j in range(basis.d)) + ",re,im\n")
    for l, v in zip(basis.indices, c.coeffs):
        buf.write(",".join(str(int(x)) for x in l) + f",{v:.11e},0\n")
    return buf.getvalue()


def coeffs_from_csv(text: str) -> SpectralCoeffs:
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = lines[0]
    if not header.startswith("#"):
        raise ValueError("missing coefficient header line")
    meta = {}
    for part in header[1:].split():
        key, _, val = part.partition("=")
        meta[key] = val
    theta = float(meta["theta"])
    nmax = int(meta["nmax"])
    side = meta["side"]
    k = np.array([float(v) for v in meta["K"].strip("[]").split(",")])
    sigma = np.array([float(v) for v in meta["sigma"].strip("[]").split(",")])
    basis = HermiteBasis(len(k), theta, k, sigma, nmax)
    rows = [ln.split(",") for ln in lines[2:]]
    coeffs = np.zeros(basis.n_coeff)
    for row in rows:
        l = tuple(int(v) for v in row[: basis.d])
        coeffs[basis.index_of(l)] = float(row[basis.d])
    return SpectralCoeffs(basis, side, coeffs)
