"""Spectral Galerkin solver for the centered mean-field dynamics.

The state is a pair (p, m): the recentered density p expanded against the
weighted Hermite modes psi_l * w_1 (so the stiff linear Ornstein-Uhlenbeck
part is diagonal and the Gaussian stationary profile is exactly the l = 0
mode) plus the mean vector m.  The drift coupling enters through

    mean rate      : integral of F(x + m) against p,
    density rate   : minus the divergence of p * (F(x + m) - mean rate),

projected on the basis by Gauss-Hermite quadrature; for polynomial drifts
the projections are exact once the quadrature order clears the dealiasing
bound.  Time stepping is a two-stage exponential integrator: the linear
part is applied exactly, the nonlinear contribution enters through the
phi1 correction at the predictor stage and a phi2 correction at the final
stage (second order on this semilinear split).  First and second
variational flows integrate the exact derivative of the discrete step map.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .hermite import (
    DISTRIBUTION_SIDE,
    HermiteBasis,
    SobolevParams,
    SpectralCoeffs,
    sobolev_norm,
)
from .model import ModelSpec


class NumericalInstabilityError(RuntimeError):
    pass


class ContractViolationError(ValueError):
    pass


MASS_TOL = 1e-10


@dataclass
class SolverConfig:
    """Discretization knobs for the spectral solver."""

    dt: float = 0.05
    trunc: int = 16
    quad_order: int | None = None  # default: dealiasing bound ceil(1.5 * trunc)
    theta: float = 1.0
    r_norm: float = 2.0
    sample_stride: int = 1
    instability_threshold: float = 1e12

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.theta != 1.0:
            raise ValueError(
                "time stepping is defined for weight theta = 1; smaller theta "
                "is supported only for norm evaluation"
            )

    @property
    def resolved_quad_order(self) -> int:
        if self.quad_order is not None:
            return self.quad_order
        return max(int(np.ceil(1.5 * self.trunc)), 12)


@dataclass
class CenteredState:
    """Recentered density coefficients plus mean; mass is the l=0 coefficient
    divided by the constant-mode value and must equal 1."""

    coeffs: np.ndarray
    mean: np.ndarray
    t: float = 0.0

    def copy(self) -> "CenteredState":
        return CenteredState(self.coeffs.copy(), self.mean.copy(), self.t)


@dataclass
class TangentState:
    """Linearization direction (eta, n); eta carries zero total mass."""

    eta: np.ndarray
    n: np.ndarray

    def copy(self) -> "TangentState":
        return TangentState(self.eta.copy(), self.n.copy())


class GalerkinContext:
    """Precomputed tables tying one model to one discretization.

    Immutable after construction; one context may serve many independent
    trajectories.
    """

    def __init__(self, model: ModelSpec, cfg: SolverConfig):
        self.model = model
        self.cfg = cfg
        self.basis = HermiteBasis(model.d, cfg.theta, model.k, model.sigma, cfg.trunc)
        self.n_coeff = self.basis.n_coeff
        order = cfg.resolved_quad_order
        self.nodes, self.weights = self.basis.quadrature(order)
        self.B = self.basis.eval_matrix(self.nodes)
        self.D = self.basis.deriv_matrices(self.nodes)
        self.lam = self.basis.lam
        self.psi0 = self.basis.constant_value()
        # weight function values at the nodes, for pointwise density readout
        q = np.einsum("qj,j->q", self.nodes ** 2, model.k / model.sigma ** 2)
        self.node_weight = np.exp(-0.5 * cfg.theta * q)
        self._phi = {}

    # --- states ---------------------------------------------------------

    def stationary_coeffs(self) -> np.ndarray:
        c = np.zeros(self.n_coeff)
        c[0] = self.psi0
        return c

    def stationary_state(self, mean, t: float = 0.0) -> CenteredState:
        return CenteredState(self.stationary_coeffs(), np.asarray(mean, dtype=float).copy(), t)

    def mass(self, coeffs: np.ndarray) -> float:
        return float(coeffs[0] / self.psi0)

    def require_state(self, state: CenteredState):
        if abs(self.mass(state.coeffs) - 1.0) > MASS_TOL:
            raise ContractViolationError("state mass must equal 1")
        if not np.all(np.isfinite(state.coeffs)):
            raise NumericalInstabilityError("non-finite density coefficients")

    def require_tangent(self, tan: TangentState):
        scale = max(1.0, float(np.max(np.abs(tan.eta), initial=0.0)))
        if abs(tan.eta[0]) > MASS_TOL * scale:
            raise ContractViolationError("tangent density must carry zero mass")

    def spectral(self, coeffs: np.ndarray) -> SpectralCoeffs:
        return SpectralCoeffs(self.basis, DISTRIBUTION_SIDE, np.asarray(coeffs, dtype=float))

    # --- norms ------------------------------------------------------------

    def dual_weights(self, r: float | None = None) -> np.ndarray:
        r = self.cfg.r_norm if r is None else r
        return (self.basis.a_theta + self.lam) ** (-r)

    def density_norm(self, coeffs: np.ndarray, r: float | None = None) -> float:
        r = self.cfg.r_norm if r is None else r
        return sobolev_norm(self.spectral(coeffs), SobolevParams(r, self.cfg.theta))

    def state_norm(self, coeffs, mean, r: float | None = None) -> float:
        return float(np.hypot(self.density_norm(coeffs, r), np.linalg.norm(mean)))

    def distance(self, s1: CenteredState, s2: CenteredState, r: float | None = None) -> float:
        return self.state_norm(s1.coeffs - s2.coeffs, s1.mean - s2.mean, r)

    def density_values(self, coeffs: np.ndarray) -> np.ndarray:
        """Pointwise density at the quadrature nodes (may expose negativity)."""
        return (self.B @ coeffs) * self.node_weight

    def positivity_report(self, state: CenteredState) -> float:
        """Smallest density value over the quadrature grid; reported, never enforced."""
        return float(np.min(self.density_values(state.coeffs)))

    # --- right-hand sides -------------------------------------------------

    def rhs(self, C: np.ndarray, M: np.ndarray):
        """Drift-coupling rates for batched states.

        C has shape (n_coeff, ns), M has shape (d, ns); returns the density
        rate (same shape as C, zero l=0 row by construction) and mean rate.
        The delta factor is NOT included.
        """
        single = C.ndim == 1
        C2 = C[:, None] if single else C
        M2 = M[:, None] if single else M
        P = self.B @ C2
        pts = self.nodes[:, None, :] + M2.T[None, :, :]
        F = self.model.drift.fun(pts)
        WP = self.weights[:, None] * P
        G2 = np.einsum("qs,qsj->js", WP, F)
        G1 = np.zeros_like(C2)
        for j in range(self.model.d):
            vj = F[:, :, j] - G2[j][None, :]
            G1 += self.D[j].T @ (WP * vj)
        if single:
            return G1[:, 0], G2[:, 0]
        return G1, G2

    def _base_tables(self, c: np.ndarray, m: np.ndarray):
        P = self.B @ c
        pts = self.nodes + m
        F = self.model.drift.fun(pts)
        J = self.model.drift.jacobian(pts)
        G2 = np.einsum("q,qj->j", self.weights * P, F)
        v = F - G2
        return P, F, J, G2, v

    def linearized_rhs(self, c: np.ndarray, m: np.ndarray, H: np.ndarray, N: np.ndarray, tables=None):
        """Derivative of the drift coupling at base (c, m) applied to tangent
        columns (H, N); shapes (n_coeff, nc) and (d, nc)."""
        single = H.ndim == 1
        H2 = H[:, None] if single else H
        N2 = N[:, None] if single else N
        P, F, J, _, v = tables if tables is not None else self._base_tables(c, m)
        PH = self.B @ H2
        DFn = np.einsum("qji,ic->qjc", J, N2)
        int_F_eta = np.einsum("q,qc,qj->jc", self.weights, PH, F)
        int_DFn_p = np.einsum("q,qjc->jc", self.weights * P, DFn)
        DG2 = int_F_eta + int_DFn_p
        DG1 = np.zeros_like(H2)
        for j in range(self.model.d):
            term = PH * v[:, j][:, None] + P[:, None] * (DFn[:, j, :] - DG2[j][None, :])
            DG1 += self.D[j].T @ (self.weights[:, None] * term)
        if single:
            return DG1[:, 0], DG2[:, 0]
        return DG1, DG2

    def second_rhs(self, c, m, h1, n1, h2, n2, tables=None):
        """Symmetric bilinear second derivative of the drift coupling."""
        P, F, J, _, v = tables if tables is not None else self._base_tables(c, m)
        Hess = self.model.drift.hessian(self.nodes + m)
        P1 = self.B @ h1
        P2 = self.B @ h2
        DFn1 = np.einsum("qji,i->qj", J, n1)
        DFn2 = np.einsum("qji,i->qj", J, n2)
        D2Fnn = np.einsum("qjil,i,l->qj", Hess, n1, n2)
        wP = self.weights * P
        int_F_eta1 = np.einsum("q,qj->j", self.weights * P1, F)
        int_F_eta2 = np.einsum("q,qj->j", self.weights * P2, F)
        int_DF1_p = np.einsum("q,qj->j", wP, DFn1)
        int_DF2_p = np.einsum("q,qj->j", wP, DFn2)
        int_DF1_eta2 = np.einsum("q,qj->j", self.weights * P2, DFn1)
        int_DF2_eta1 = np.einsum("q,qj->j", self.weights * P1, DFn2)
        int_D2F_p = np.einsum("q,qj->j", wP, D2Fnn)
        D2G2 = int_DF1_eta2 + int_DF2_eta1 + int_D2F_p
        D2G1 = np.zeros(self.n_coeff)
        for j in range(self.model.d):
            term = (
                P1 * (DFn2[:, j] - int_F_eta2[j] - int_DF2_p[j])
                + P2 * (DFn1[:, j] - int_F_eta1[j] - int_DF1_p[j])
                + P * (D2Fnn[:, j] - int_DF1_eta2[j] - int_DF2_eta1[j] - int_D2F_p[j])
            )
            D2G1 += self.D[j].T @ (self.weights * term)
        return D2G1, D2G2

    # --- exponential integrator -------------------------------------------

    def _phi_coeffs(self, dt: float):
        key = round(dt, 15)
        hit = self._phi.get(key)
        if hit is not None:
            return hit
        z = -self.lam * dt
        E = np.exp(z)
        small = np.abs(z) < 1e-7
        with np.errstate(divide="ignore", invalid="ignore"):
            phi1 = np.where(small, 1.0 + z / 2.0 + z ** 2 / 6.0, np.expm1(z) / np.where(small, 1.0, z))
            phi2 = np.where(small, 0.5 + z / 6.0 + z ** 2 / 24.0, (np.expm1(z) - z) / np.where(small, 1.0, z) ** 2)
        out = (E, dt * phi1, dt * phi2)
        if len(self._phi) < 64:
            self._phi[key] = out
        return out


def step(state: CenteredState, ctx: GalerkinContext, dt: float | None = None) -> CenteredState:
    """One exponential two-stage step; the l=0 coefficient is untouched
    exactly, so mass is conserved to the bit."""
    dt = ctx.cfg.dt if dt is None else dt
    delta = ctx.model.delta
    E, P1, P2 = ctx._phi_coeffs(dt)
    if delta == 0.0:
        # the coupling enters only through delta, so the step is exactly the
        # diagonal linear propagator
        c = E * state.coeffs
        return CenteredState(c, state.mean.copy(), state.t + dt)
    G1, G2 = ctx.rhs(state.coeffs, state.mean)
    ca = E * state.coeffs + P1 * (delta * G1)
    ma = state.mean + dt * delta * G2
    G1a, G2a = ctx.rhs(ca, ma)
    c = ca + P2 * (delta * (G1a - G1))
    m = ma + 0.5 * dt * delta * (G2a - G2)
    if np.max(np.abs(c)) > ctx.cfg.instability_threshold:
        raise NumericalInstabilityError(
            "density coefficients exceeded the stability threshold; reduce dt"
        )
    return CenteredState(c, m, state.t + dt)


@dataclass
class Trajectory:
    """Sampled solver output: times, means, masses, distance of p to the
    stationary profile in the truncated dual norm."""

    t: np.ndarray
    mean: np.ndarray
    mass: np.ndarray
    dual_dist: np.ndarray
    coeffs: np.ndarray | None = None


def flow(
    state: CenteredState,
    T: float,
    ctx: GalerkinContext,
    record: bool = False,
    keep_coeffs: bool = False,
) -> tuple[CenteredState, Trajectory | None]:
    """Advance by horizon T >= 0 with repeated steps and one final partial
    step; optionally record samples every cfg.sample_stride steps."""
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    ctx.require_state(state)
    dt = ctx.cfg.dt
    n_full = int(np.floor(T / dt + 1e-12))
    rem = T - n_full * dt
    rho = ctx.stationary_coeffs()
    samples = []

    def snap(s):
        samples.append(
            (
                s.t,
                s.mean.copy(),
                ctx.mass(s.coeffs),
                ctx.density_norm(s.coeffs - rho),
                s.coeffs.copy() if keep_coeffs else None,
            )
        )

    cur = state.copy()
    if record:
        snap(cur)
    for i in range(n_full):
        cur = step(cur, ctx)
        if record and (i + 1) % ctx.cfg.sample_stride == 0:
            snap(cur)
    if rem > 1e-14:
        cur = step(cur, ctx, rem)
        if record:
            snap(cur)
    traj = None
    if record:
        traj = Trajectory(
            t=np.array([s[0] for s in samples]),
            mean=np.array([s[1] for s in samples]),
            mass=np.array([s[2] for s in samples]),
            dual_dist=np.array([s[3] for s in samples]),
            coeffs=np.array([s[4] for s in samples]) if keep_coeffs else None,
        )
    return cur, traj


def flow_many(C: np.ndarray, M: np.ndarray, T: float, ctx: GalerkinContext):
    """Nonlinear flow of several independent states held as columns.

    Equivalent to looping `flow` over columns, but shares the quadrature
    tables and BLAS calls.
    """
    dt = ctx.cfg.dt
    delta = ctx.model.delta
    n_full = int(np.floor(T / dt + 1e-12))
    rem = T - n_full * dt
    C = C.copy()
    M = M.copy()

    def advance(C, M, h):
        E, P1, P2 = ctx._phi_coeffs(h)
        G1, G2 = ctx.rhs(C, M)
        Ca = E[:, None] * C + P1[:, None] * (delta * G1)
        Ma = M + h * delta * G2
        G1a, G2a = ctx.rhs(Ca, Ma)
        Cn = Ca + P2[:, None] * (delta * (G1a - G1))
        Mn = Ma + 0.5 * h * delta * (G2a - G2)
        if np.max(np.abs(Cn)) > ctx.cfg.instability_threshold:
            raise NumericalInstabilityError("batched flow became unstable; reduce dt")
        return Cn, Mn

    for _ in range(n_full):
        C, M = advance(C, M, dt)
    if rem > 1e-14:
        C, M = advance(C, M, rem)
    return C, M


def _tangent_step(ctx, state, H, N, dt):
    """Exact derivative of the discrete step map applied to tangent columns.

    Returns (new base state, new tangent columns).
    """
    delta = ctx.model.delta
    E, P1, P2 = ctx._phi_coeffs(dt)
    tab = ctx._base_tables(state.coeffs, state.mean)
    G1, G2 = ctx.rhs(state.coeffs, state.mean)
    DG1, DG2 = ctx.linearized_rhs(state.coeffs, state.mean, H, N, tables=tab)
    ca = E * state.coeffs + P1 * (delta * G1)
    ma = state.mean + dt * delta * G2
    Ha = E[:, None] * H + P1[:, None] * (delta * DG1)
    Na = N + dt * delta * DG2
    tab_a = ctx._base_tables(ca, ma)
    G1a, G2a = ctx.rhs(ca, ma)
    DG1a, DG2a = ctx.linearized_rhs(ca, ma, Ha, Na, tables=tab_a)
    c = ca + P2 * (delta * (G1a - G1))
    m = ma + 0.5 * dt * delta * (G2a - G2)
    Hn = Ha + P2[:, None] * (delta * (DG1a - DG1))
    Nn = Na + 0.5 * dt * delta * (DG2a - DG2)
    if np.max(np.abs(c)) > ctx.cfg.instability_threshold:
        raise NumericalInstabilityError("tangent flow base became unstable; reduce dt")
    return CenteredState(c, m, state.t + dt), Hn, Nn


def tangent_flow(
    state0: CenteredState,
    tangent0: TangentState,
    T: float,
    ctx: GalerkinContext,
) -> TangentState:
    """Co-integrate the base trajectory and one linearization direction."""
    ctx.require_tangent(tangent0)
    H, N = tangent_flow_matrix(state0, tangent0.eta[:, None], tangent0.n[:, None], T, ctx)
    return TangentState(H[:, 0], N[:, 0])


def tangent_flow_matrix(state0, H0, N0, T, ctx):
    """Tangent flow of many columns along one base trajectory."""
    ctx.require_state(state0)
    dt = ctx.cfg.dt
    n_full = int(np.floor(T / dt + 1e-12))
    rem = T - n_full * dt
    cur = state0.copy()
    H, N = H0.copy(), N0.copy()
    for _ in range(n_full):
        cur, H, N = _tangent_step(ctx, cur, H, N, dt)
    if rem > 1e-14:
        cur, H, N = _tangent_step(ctx, cur, H, N, rem)
    return H, N


def second_variation(
    state0: CenteredState,
    t1: TangentState,
    t2: TangentState,
    T: float,
    ctx: GalerkinContext,
) -> TangentState:
    """Second derivative of the flow map in directions (t1, t2), integrated
    with the same two-stage exponential scheme; symmetric in its arguments."""
    ctx.require_state(state0)
    ctx.require_tangent(t1)
    ctx.require_tangent(t2)
    delta = ctx.model.delta
    dt = ctx.cfg.dt
    n_full = int(np.floor(T / dt + 1e-12))
    rem = T - n_full * dt
    steps = [dt] * n_full + ([rem] if rem > 1e-14 else [])
    cur = state0.copy()
    H = np.stack([t1.eta, t2.eta], axis=1)
    N = np.stack([t1.n, t2.n], axis=1)
    X = np.zeros(ctx.n_coeff)
    Y = np.zeros(ctx.model.d)
    for h in steps:
        E, P1, P2 = ctx._phi_coeffs(h)
        tab = ctx._base_tables(cur.coeffs, cur.mean)
        G1, G2 = ctx.rhs(cur.coeffs, cur.mean)
        DG1, DG2 = ctx.linearized_rhs(cur.coeffs, cur.mean, H, N, tables=tab)
        DG1x, DG2x = ctx.linearized_rhs(cur.coeffs, cur.mean, X, Y, tables=tab)
        D2G1, D2G2 = ctx.second_rhs(cur.coeffs, cur.mean, H[:, 0], N[:, 0], H[:, 1], N[:, 1], tables=tab)
        R1, R2 = DG1x + D2G1, DG2x + D2G2

        ca = E * cur.coeffs + P1 * (delta * G1)
        ma = cur.mean + h * delta * G2
        Ha = E[:, None] * H + P1[:, None] * (delta * DG1)
        Na = N + h * delta * DG2
        Xa = E * X + P1 * (delta * R1)
        Ya = Y + h * delta * R2

        tab_a = ctx._base_tables(ca, ma)
        G1a, G2a = ctx.rhs(ca, ma)
        DG1a, DG2a = ctx.linearized_rhs(ca, ma, Ha, Na, tables=tab_a)
        DG1xa, DG2xa = ctx.linearized_rhs(ca, ma, Xa, Ya, tables=tab_a)
        D2G1a, D2G2a = ctx.second_rhs(ca, ma, Ha[:, 0], Na[:, 0], Ha[:, 1], Na[:, 1], tables=tab_a)
        R1a, R2a = DG1xa + D2G1a, DG2xa + D2G2a

        cur = CenteredState(
            ca + P2 * (delta * (G1a - G1)),
            ma + 0.5 * h * delta * (G2a - G2),
            cur.t + h,
        )
        H = Ha + P2[:, None] * (delta * (DG1a - DG1))
        N = Na + 0.5 * h * delta * (DG2a - DG2)
        X = Xa + P2 * (delta * (R1a - R1))
        Y = Ya + 0.5 * h * delta * (R2a - R2)
        if np.max(np.abs(cur.coeffs)) > ctx.cfg.instability_threshold:
            raise NumericalInstabilityError("second variation base became unstable; reduce dt")
    return TangentState(X, Y)


# --- artifacts ---------------------------------------------------------------


def trajectory_csv(traj: Trajectory, d: int, meta: str = "") -> str:
    buf = io.StringIO()
    if meta:
        for line in meta.strip().splitlines():
            buf.write(f"# {line}\n")
    cols = ["t"] + [f"m_{j + 1}" for j in range(d)] + ["mass", "dualnorm_p_minus_rho"]
    n_extra = 0
    if traj.coeffs is not None:
        n_extra = traj.coeffs.shape[1]
        cols += [f"c_{i}" for i in range(n_extra)]
    buf.write(",".join(cols) + "\n")
    for i in range(len(traj.t)):
        row = [traj.t[i], *traj.mean[i], traj.mass[i], traj.dual_dist[i]]
        if n_extra:
            row += list(traj.coeffs[i])
        buf.write(",".join(f"{v:.11e}" for v in row) + "\n")
    return buf.getvalue()


def checkpoint_csv(state: CenteredState, ctx: GalerkinContext, meta: str = "") -> str:
    from .hermite import coeffs_to_csv

    buf = io.StringIO()
    buf.write(f"# checkpoint t={state.t:.11e} mean=[{','.join(f'{v:.11e}' for v in state.mean)}]\n")
    if meta:
        for line in meta.strip().splitlines():
            buf.write(f"# {line}\n")
    buf.write(coeffs_to_csv(ctx.spectral(state.coeffs)))
    return buf.getvalue()


def checkpoint_load(text: str) -> tuple[CenteredState, SpectralCoeffs]:
    from .hermite import coeffs_from_csv

    lines = text.strip().splitlines()
    head = lines[0]
    assert head.startswith("# checkpoint")
    fields = dict(part.split("=", 1) for part in head[2:].split() if "=" in part)
    t = float(fields["t"])
    mean = np.array([float(v) for v in fields["mean"].strip("[]").split(",")])
    start = next(i for i, ln in enumerate(lines) if ln.startswith("# theta="))
    sc = coeffs_from_csv("\n".join(lines[start:]))
    return CenteredState(sc.coeffs, mean, t), sc
