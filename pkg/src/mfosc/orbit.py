"""Limit-cycle machinery for the reduced mean dynamics and the spectral PDE.

The reduced system is the Gaussian-smoothed mean ODE; since the scale
parameter delta only stretches time, cycles are located in rescaled (slow)
time where the drift is the plain smoothed field, and the rescaling is
recorded in the cycle metadata.  Cycles are found by a Poincare section
through the point of largest first-coordinate speed, with a damped Newton
iteration on the one-dimensional return map.  Floquet data (monodromy,
multipliers, tangent/stable spectral projections, decay rate) comes from
the principal matrix solution of the variational equation along the cycle.

The PDE side reuses the spectral solver: the periodic solution is located
by section returns on the mean, the monodromy is assembled column by
column with the exact tangent flow of the discrete scheme, and the
approximate-invariance report quantifies how the frozen-profile manifold
(stationary profile x reduced cycle) fails to be invariant, with the
delta-scaling of the defect and of the tangent/stable block couplings.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ModelSpec, effective_drift, effective_jacobian
from .pde import CenteredState, GalerkinContext, SolverConfig, flow, flow_many, tangent_flow_matrix


class CycleQualityError(RuntimeError):
    pass


class CycleSearchError(RuntimeError):
    pass


REDUCED_SPACE = "reduced"
PDE_SPACE = "pde-spectral"


# --- reduced flow -------------------------------------------------------------


class ReducedFlow:
    """Fixed-step RK4 integrator for the smoothed mean dynamics.

    rescaled=True integrates in slow time (unit drift); otherwise the drift
    carries the model's delta factor.  Accepts batched states of shape
    (..., d).
    """

    def __init__(self, model: ModelSpec, quad_order: int = 8, rescaled: bool = True, dt: float = 1e-3):
        from .model import _gaussian_grid

        self.model = model
        self.quad_order = quad_order
        self.rescaled = rescaled
        self.dt = dt
        self.nodes, self.weights = _gaussian_grid(model, quad_order)
        self.scale = 1.0 if rescaled else model.delta

    def rhs(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        vals = self.model.drift.fun(z[..., None, :] + self.nodes)
        return self.scale * np.einsum("q,...qj->...j", self.weights, vals)

    def jac(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        J = self.model.drift.jacobian(z[..., None, :] + self.nodes)
        return self.scale * np.einsum("q,...qjl->...jl", self.weights, J)

    def step(self, z: np.ndarray, dt: float) -> np.ndarray:
        k1 = self.rhs(z)
        k2 = self.rhs(z + 0.5 * dt * k1)
        k3 = self.rhs(z + 0.5 * dt * k2)
        k4 = self.rhs(z + dt * k3)
        out = z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.max(np.abs(out)) > 1e6:
            raise CycleSearchError("reduced trajectory blew up")
        return out

    def integrate(self, z: np.ndarray, T: float, dt: float | None = None) -> np.ndarray:
        dt = self.dt if dt is None else dt
        n = int(np.floor(T / dt + 1e-12))
        rem = T - n * dt
        z = np.asarray(z, dtype=float).copy()
        for _ in range(n):
            z = self.step(z, dt)
        if rem > 1e-14:
            z = self.step(z, rem)
        return z

    def trajectory(self, z: np.ndarray, T: float, dt: float | None = None, stride: int = 1):
        dt = self.dt if dt is None else dt
        n = int(round(T / dt))
        ts = [0.0]
        zs = [np.asarray(z, dtype=float).copy()]
        cur = zs[0]
        for i in range(n):
            cur = self.step(cur, dt)
            if (i + 1) % stride == 0:
                ts.append((i + 1) * dt)
                zs.append(cur.copy())
        return np.array(ts), np.array(zs)


def find_fixed_point(z0, model: ModelSpec, quad_order: int = 20, tol: float = 1e-12, max_iter: int = 60):
    """Newton iteration for a zero of the smoothed drift."""
    z = np.asarray(z0, dtype=float).copy()
    for _ in range(max_iter):
        g = effective_drift(z, model, quad_order)
        if np.linalg.norm(g) < tol:
            return z
        J = effective_jacobian(z, model, quad_order)
        z = z - np.linalg.solve(J, g)
    raise CycleSearchError("fixed-point Newton did not converge")


# --- cycles --------------------------------------------------------------------


@dataclass
class LimitCycle:
    """Sampled periodic orbit on a uniform phase grid.

    For reduced cycles `means` are the orbit points and `coeffs` is None;
    for spectral cycles both the density coefficients and the means are
    stored.  Reduced periods are in slow time when meta['rescaled_time'].
    """

    space: str
    period: float
    phases: np.ndarray
    means: np.ndarray
    coeffs: np.ndarray | None
    section_point: np.ndarray
    section_normal: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.phases)


@dataclass
class ReducedCycleSearch:
    """Outcome of a reduced cycle hunt; absence of a cycle is a valid answer."""

    cycle: LimitCycle | None
    fixed_point: np.ndarray | None
    message: str

    @property
    def found(self) -> bool:
        return self.cycle is not None


ARM_BAND = 1e-3  # section value must dip below -ARM_BAND before a return counts


def _section_crossing_time(rf: ReducedFlow, z, normal, anchor, dt, t_max):
    """First upcrossing of the section after a genuine excursion below it."""
    g = float(normal @ (z - anchor))
    armed = g < -ARM_BAND
    t = 0.0
    while t < t_max:
        z_new = rf.step(z, dt)
        g_new = float(normal @ (z_new - anchor))
        if armed and g < 0 <= g_new:
            # Newton on the partial step from z
            h = dt * g / (g - g_new) if g != g_new else 0.5 * dt
            for _ in range(8):
                z_hit = rf.step(z, h)
                gh = float(normal @ (z_hit - anchor))
                dgh = float(normal @ rf.rhs(z_hit))
                if abs(gh) < 1e-13 or dgh == 0:
                    break
                h -= gh / dgh
                h = min(max(h, 0.0), dt)
            return t + h, rf.step(z, h)
        if g_new < -ARM_BAND:
            armed = True
        z, g = z_new, g_new
        t += dt
    raise CycleSearchError("no section return within the time budget")


def find_cycle_reduced(
    z0,
    model: ModelSpec,
    tol: float = 1e-10,
    dt: float = 1e-3,
    quad_order: int = 8,
    transient: float = 250.0,
    probe: float = 80.0,
    n_samples: int = 256,
    max_newton: int = 50,
) -> ReducedCycleSearch:
    """Hunt for a stable cycle of the reduced dynamics starting from z0.

    Runs a long transient, detects convergence to a fixed point (reported,
    not an error), otherwise places a Poincare section at the orbit point
    of largest first-coordinate speed and Newton-iterates the return map.
    The result is sampled at n_samples uniform phases with phase 0 at the
    section crossing (first coordinate increasing there).
    """
    rf = ReducedFlow(model, quad_order=quad_order, rescaled=True, dt=dt)
    z = rf.integrate(np.asarray(z0, dtype=float), transient)
    ts, orbit = rf.trajectory(z, probe, stride=max(1, int(round(0.01 / dt))))
    diam = float(np.max(orbit.max(axis=0) - orbit.min(axis=0)))
    if diam < 0.02:
        # shrinking orbit: confirm a nearby stable rest point rather than
        # waiting out an arbitrarily slow spiral
        fp = find_fixed_point(orbit[-1], model, quad_order=max(quad_order, 20))
        eigs = np.linalg.eigvals(effective_jacobian(fp, model, max(quad_order, 20)))
        if np.all(np.real(eigs) < 0):
            return ReducedCycleSearch(None, fp, "trajectory contracted to a stable fixed point")
        raise CycleSearchError("orbit shrank onto an unstable rest point; no attractor found")

    speeds = rf.rhs(orbit)
    i_anchor = int(np.argmax(speeds[:, 0]))
    anchor = orbit[i_anchor]
    normal = speeds[i_anchor] / np.linalg.norm(speeds[i_anchor])
    tangential = np.array([-normal[1], normal[0]]) if model.d == 2 else None
    if tangential is None:
        raise CycleSearchError("section coordinates are implemented for d = 2")

    t_budget = probe * 4.0

    def return_map(xi: float):
        start = anchor + xi * tangential
        t_cross, z_cross = _section_crossing_time(rf, start, normal, anchor, dt, t_budget)
        return float(tangential @ (z_cross - anchor)), t_cross

    xi, period = 0.0, None
    r_val, period = return_map(xi)
    res = abs(r_val - xi)
    for it in range(max_newton):
        if res < tol:
            break
        h = 1e-7 * max(1.0, abs(xi))
        r_plus, _ = return_map(xi + h)
        slope = (r_plus - r_val) / h
        dxi = -(r_val - xi) / (slope - 1.0)
        # damped update: halve until the residual decreases
        lam = 1.0
        for _ in range(20):
            cand = xi + lam * dxi
            r_cand, p_cand = return_map(cand)
            if abs(r_cand - cand) < res:
                xi, r_val, period, res = cand, r_cand, p_cand, abs(r_cand - cand)
                break
            lam *= 0.5
        else:
            raise CycleSearchError("return-map Newton stagnated")
    else:
        raise CycleSearchError(f"return-map Newton did not reach tol={tol:g} in {max_newton} iterations")

    z_star = anchor + xi * tangential
    phases, samples = _sample_uniform(rf, z_star, period, n_samples)
    cycle = LimitCycle(
        space=REDUCED_SPACE,
        period=period,
        phases=phases,
        means=samples,
        coeffs=None,
        section_point=z_star.copy(),
        section_normal=normal,
        meta={
            "rescaled_time": True,
            "dt": dt,
            "quad_order": quad_order,
            "shooting_tol": tol,
            "shooting_residual": res,
            "delta": model.delta,
            "drift": model.drift.kind,
            "drift_params": ",".join(f"{k}={v}" for k, v in model.drift.params.items()),
            "k": ",".join(str(v) for v in model.k),
            "sigma": ",".join(str(v) for v in model.sigma),
        },
    )
    return ReducedCycleSearch(cycle, None, "cycle located")


def _sample_uniform(rf: ReducedFlow, z_start, period: float, n_samples: int):
    leg = period / n_samples
    n_sub = max(1, int(np.ceil(leg / rf.dt)))
    dt_leg = leg / n_sub
    phases = np.arange(n_samples) * leg
    samples = np.empty((n_samples,) + np.shape(z_start))
    cur = np.asarray(z_start, dtype=float).copy()
    for i in range(n_samples):
        samples[i] = cur
        for _ in range(n_sub):
            cur = rf.step(cur, dt_leg)
    return phases, samples


def reduced_state_at(cycle: LimitCycle, u: float, rf: ReducedFlow) -> np.ndarray:
    """Orbit point at phase u, by integrating from the nearest stored sample."""
    u = float(u) % cycle.period
    leg = cycle.period / cycle.n_samples
    j = int(u / leg)
    rem = u - j * leg
    z = cycle.means[j].copy()
    if rem > 1e-14:
        n_sub = max(1, int(np.ceil(rem / rf.dt)))
        for _ in range(n_sub):
            z = rf.step(z, rem / n_sub)
    return z


# --- Floquet analysis (reduced) -------------------------------------------------


@dataclass
class FloquetData:
    """Monodromy spectrum and the tangent/stable spectral projections."""

    monodromy: np.ndarray
    multipliers: np.ndarray
    Pc: np.ndarray
    Ps: np.ndarray
    rate: float
    extras: dict = field(default_factory=dict)


def principal_matrix(cycle: LimitCycle, u: float, t: float, model: ModelSpec, rf: ReducedFlow | None = None):
    """Fundamental solution of the linearization along the cycle from phase
    u over a phase interval t (slow time for rescaled cycles)."""
    rf = rf or _rf_from_cycle(cycle, model)
    z = reduced_state_at(cycle, u, rf)
    pi, _, _ = _joint_variational(rf, z, t)
    return pi


def _rf_from_cycle(cycle: LimitCycle, model: ModelSpec) -> ReducedFlow:
    meta = cycle.meta
    return ReducedFlow(
        model,
        quad_order=meta.get("quad_order", 8),
        rescaled=meta.get("rescaled_time", True),
        dt=meta.get("dt", 1e-3),
    )


def _joint_variational(rf: ReducedFlow, z0, T: float, store_at: np.ndarray | None = None):
    """RK4 on the joint system (orbit, fundamental matrix, trace integral).

    Optionally stores the fundamental matrix at the requested times (which
    must be multiples of the step within rounding).
    """
    d = rf.model.d

    def joint_rhs(state):
        z = state[:d]
        Pi = state[d : d + d * d].reshape(d, d)
        f = rf.rhs(z)
        J = rf.jac(z)
        return np.concatenate([f, (J @ Pi).ravel(), [np.trace(J)]])

    state = np.concatenate([np.asarray(z0, dtype=float), np.eye(d).ravel(), [0.0]])
    dt = rf.dt
    stored = []
    targets = list(store_at) if store_at is not None else []
    next_target = 0
    t = 0.0

    def maybe_store(t, state):
        nonlocal next_target
        while next_target < len(targets) and targets[next_target] <= t + 1e-12:
            stored.append(state[d : d + d * d].reshape(d, d).copy())
            next_target += 1

    maybe_store(t, state)

    def rk4(state, h):
        k1 = joint_rhs(state)
        k2 = joint_rhs(state + 0.5 * h * k1)
        k3 = joint_rhs(state + 0.5 * h * k2)
        k4 = joint_rhs(state + h * k3)
        return state + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    # step sizes shrink to land exactly on every storage target
    while t < T - 1e-12:
        h = min(dt, T - t)
        if next_target < len(targets) and t < targets[next_target] < t + h - 1e-12:
            h = targets[next_target] - t
        state = rk4(state, h)
        t += h
        maybe_store(t, state)
    Pi = state[d : d + d * d].reshape(d, d)
    return Pi, float(state[-1]), stored


def _split_multiplier_one(Mono: np.ndarray, tol: float):
    """Eigen-split of a monodromy matrix at the multiplier closest to 1."""
    evals, evecs = np.linalg.eig(Mono)
    order = np.argsort(-np.abs(evals))
    evals = evals[order]
    evecs = evecs[:, order]
    i1 = int(np.argmin(np.abs(evals - 1.0)))
    if abs(evals[i1] - 1.0) > tol:
        raise CycleQualityError(
            f"no Floquet multiplier within {tol:g} of 1 (closest: {evals[i1]:.6g})"
        )
    v = evecs[:, i1]
    v = np.real(v / v[np.argmax(np.abs(v))])
    v = v / np.linalg.norm(v)
    wl, wvecs = np.linalg.eig(Mono.T)
    j1 = int(np.argmin(np.abs(wl - 1.0)))
    w = wvecs[:, j1]
    w = np.real(w / w[np.argmax(np.abs(w))])
    # power-iteration polish (valid because the unit multiplier dominates a
    # stable cycle): error along the other eigendirections contracts by
    # their modulus, which sharpens the projection algebra
    if i1 == 0:
        for _ in range(3):
            v_new = Mono @ v
            v = v_new / np.linalg.norm(v_new)
            w_new = Mono.T @ w
            w = w_new / np.linalg.norm(w_new)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    w = w / (w @ v)
    Pc = np.outer(v, w)
    return evals, i1, v, w, Pc


def floquet_reduced(cycle: LimitCycle, model: ModelSpec, rf: ReducedFlow | None = None) -> FloquetData:
    """Monodromy over one period from phase 0, multiplier split, and the
    tangent/stable projections; rate is the stable exponent in slow time."""
    rf = rf or _rf_from_cycle(cycle, model)
    Mono, trace_int, _ = _joint_variational(rf, cycle.means[0], cycle.period)
    evals, i1, v, w, Pc = _split_multiplier_one(Mono, tol=1e-3)
    tangent = rf.rhs(cycle.means[0])
    tangent_unit = tangent / np.linalg.norm(tangent)
    angle = float(np.arccos(min(1.0, abs(tangent_unit @ v))))
    if angle > 1e-4:
        raise CycleQualityError(f"multiplier-1 eigenvector misaligned with the flow ({angle:.2e} rad)")
    others = np.delete(evals, i1)
    mu2 = others[np.argmax(np.abs(others))] if len(others) else 0.0
    rate = float(-np.log(np.abs(mu2)) / cycle.period) if np.abs(mu2) > 0 else np.inf
    Ps = np.eye(model.d) - Pc
    return FloquetData(
        monodromy=Mono,
        multipliers=evals,
        Pc=Pc,
        Ps=Ps,
        rate=rate,
        extras={
            "liouville_exponent": trace_int,
            "det_monodromy": float(np.linalg.det(Mono)),
            "tangent": tangent,
            "tangent_angle": angle,
            "period": cycle.period,
        },
    )


@dataclass
class FloquetFrames:
    """Phase-resolved Floquet frames along a reduced cycle.

    transition[j] is the fundamental matrix from phase 0 to phases[j]; the
    tangent/stable projections at each phase follow by conjugation.  The
    constants (c_tangent, C_bound, rate) quantify the contraction display:
    the stable block decays like C_bound * exp(-rate * t) while the tangent
    block stays within [c_tangent, C_bound] relative to its start.
    """

    cycle: LimitCycle
    phases: np.ndarray
    transition: np.ndarray
    tangents: np.ndarray
    Pc: np.ndarray
    Ps: np.ndarray
    monodromy: FloquetData
    c_tangent: float
    C_bound: float
    rate: float

    def frame_index(self, u: float) -> int:
        j = int(round((u % self.cycle.period) / (self.cycle.period / len(self.phases))))
        return j % len(self.phases)


def floquet_frames(cycle: LimitCycle, model: ModelSpec, rf: ReducedFlow | None = None) -> FloquetFrames:
    rf = rf or _rf_from_cycle(cycle, model)
    fd = floquet_reduced(cycle, model, rf)
    _, _, stored = _joint_variational(rf, cycle.means[0], cycle.period, store_at=cycle.phases)
    transition = np.array(stored)
    tangents = rf.rhs(cycle.means)
    K = len(cycle.phases)
    Pc = np.empty((K, model.d, model.d))
    Ps = np.empty_like(Pc)
    for j in range(K):
        Pi = transition[j]
        Pi_inv = np.linalg.inv(Pi)
        Pc[j] = Pi @ fd.Pc @ Pi_inv
        Ps[j] = Pi @ fd.Ps @ Pi_inv
    # contraction constants measured on a phase x time grid
    stride = max(1, K // 32)
    rate = fd.rate
    c_tan, C_all = np.inf, 0.0
    speeds = np.linalg.norm(tangents, axis=1)
    for i in range(0, K, stride):
        for j in range(0, K, stride):
            t = cycle.phases[j]
            pi = transition_pair(transition, fd.monodromy, cycle.period, cycle.phases, i, t)
            s_norm = np.linalg.norm(pi @ Ps[i], 2) * np.exp(rate * t)
            i_t = (i + j) % K
            ratio = speeds[i_t] / speeds[i]
            c_tan = min(c_tan, ratio)
            C_all = max(C_all, s_norm, ratio)
    return FloquetFrames(
        cycle=cycle,
        phases=cycle.phases,
        transition=transition,
        tangents=tangents,
        Pc=Pc,
        Ps=Ps,
        monodromy=fd,
        c_tangent=float(c_tan),
        C_bound=float(C_all),
        rate=rate,
    )


def transition_pair(transition, M0, period, phases, i, t):
    """pi_{u_i + t, u_i} for a grid phase u_i and a grid offset t."""
    K = len(phases)
    u = phases[i]
    total = u + t
    wraps = int(np.floor(total / period + 1e-12))
    j = int(round((total - wraps * period) / (period / K))) % K
    return transition[j] @ np.linalg.matrix_power(M0, wraps) @ np.linalg.inv(transition[i])


# --- PDE cycle -------------------------------------------------------------------


def _pde_section_cross(ctx: GalerkinContext, state: CenteredState, normal, anchor, t_budget: float):
    """Advance to the next upcrossing of the mean-space section; returns the
    refined crossing state and the elapsed time."""
    from .pde import step as pde_step

    dt = ctx.cfg.dt
    g = float(normal @ (state.mean - anchor))
    armed = g < -ARM_BAND
    t = 0.0
    while t < t_budget:
        nxt = pde_step(state, ctx)
        g_new = float(normal @ (nxt.mean - anchor))
        if armed and g < 0 <= g_new:
            h = dt * g / (g - g_new) if g != g_new else 0.5 * dt
            hit = None
            for _ in range(8):
                hit = pde_step(state, ctx, h) if h > 1e-14 else state.copy()
                gh = float(normal @ (hit.mean - anchor))
                _, G2 = ctx.rhs(hit.coeffs, hit.mean)
                dgh = float(normal @ (ctx.model.delta * G2))
                if abs(gh) < 1e-13 or dgh == 0:
                    break
                h = min(max(h - gh / dgh, 0.0), dt)
            return hit, t + h
        if g_new < -ARM_BAND:
            armed = True
        state, g = nxt, g_new
        t += dt
    raise CycleSearchError("no PDE section return within the time budget")


def find_cycle_pde(
    ctx: GalerkinContext,
    reduced_cycle: LimitCycle,
    tol: float = 1e-6,
    max_periods: int = 16,
    n_samples: int = 64,
) -> LimitCycle:
    """Locate the periodic solution of the spectral system at the model's
    delta by Poincare returns on the mean, starting from the stationary
    profile placed on the reduced cycle.

    Successive section returns must differ by at most tol in the combined
    (truncated dual norm, euclidean mean) metric; failure to converge within
    the period budget raises with the residual history attached.
    """
    delta = ctx.model.delta
    if delta <= 0:
        raise ValueError("the spectral cycle search needs delta > 0")
    anchor = reduced_cycle.section_point
    normal = reduced_cycle.section_normal
    t_budget = 3.0 * reduced_cycle.period / delta
    state = ctx.stationary_state(reduced_cycle.means[0])
    # move off the section before hunting for the first return
    state, _ = _pde_section_cross(ctx, state, normal, anchor, t_budget)
    history = []
    prev = state
    period = None
    for _ in range(max_periods):
        nxt, lap = _pde_section_cross(ctx, prev, normal, anchor, t_budget)
        res = ctx.distance(nxt, prev)
        history.append(res)
        period = lap
        prev = nxt
        if res <= tol:
            break
    else:
        raise CycleSearchError(
            f"PDE cycle search did not converge below {tol:g}; residuals: "
            + ", ".join(f"{r:.3e}" for r in history)
        )

    # sample one period on a uniform phase grid
    leg = period / n_samples
    dt = ctx.cfg.dt
    n_sub = max(1, int(np.ceil(leg / dt)))
    coeffs = np.empty((n_samples, ctx.n_coeff))
    means = np.empty((n_samples, ctx.model.d))
    cur = prev.copy()
    for i in range(n_samples):
        coeffs[i] = cur.coeffs
        means[i] = cur.mean
        cur, _ = flow(cur, leg, ctx)
    closure = ctx.distance(cur, prev)
    return LimitCycle(
        space=PDE_SPACE,
        period=period,
        phases=np.arange(n_samples) * leg,
        means=means,
        coeffs=coeffs,
        section_point=anchor.copy(),
        section_normal=normal.copy(),
        meta={
            "delta": delta,
            "tol": tol,
            "dt": ctx.cfg.dt,
            "trunc": ctx.cfg.trunc,
            "r_norm": ctx.cfg.r_norm,
            "residual_history": history,
            "closure_residual": closure,
            "reduced_period": reduced_cycle.period,
            "drift": ctx.model.drift.kind,
            "drift_params": ",".join(f"{k}={v}" for k, v in ctx.model.drift.params.items()),
            "k": ",".join(str(v) for v in ctx.model.k),
            "sigma": ",".join(str(v) for v in ctx.model.sigma),
        },
    )


def pde_state_at(cycle: LimitCycle, u: float, ctx: GalerkinContext) -> CenteredState:
    u = float(u) % cycle.period
    leg = cycle.period / cycle.n_samples
    j = int(u / leg)
    rem = u - j * leg
    state = CenteredState(cycle.coeffs[j].copy(), cycle.means[j].copy(), 0.0)
    if rem > 1e-12:
        state, _ = flow(state, rem, ctx)
    return state


def pde_time_derivative(ctx: GalerkinContext, state: CenteredState):
    """Time derivative of the spectral state (linear part plus drift coupling)."""
    G1, G2 = ctx.rhs(state.coeffs, state.mean)
    dc = -ctx.lam * state.coeffs + ctx.model.delta * G1
    dm = ctx.model.delta * G2
    return dc, dm


def pde_monodromy(cycle: LimitCycle, ctx: GalerkinContext, tol_mult_one: float = 1e-4) -> FloquetData:
    """Monodromy of the spectral cycle assembled by tangent-flowing every
    mass-zero coefficient direction and every mean direction over one period."""
    if cycle.space != PDE_SPACE:
        raise ValueError("pde_monodromy needs a spectral cycle")
    n_p, d = ctx.n_coeff, ctx.model.d
    n_dir = (n_p - 1) + d
    H0 = np.zeros((n_p, n_dir))
    N0 = np.zeros((d, n_dir))
    H0[1:, : n_p - 1] = np.eye(n_p - 1)
    N0[:, n_p - 1 :] = np.eye(d)
    base = CenteredState(cycle.coeffs[0].copy(), cycle.means[0].copy(), 0.0)
    H, N = tangent_flow_matrix(base, H0, N0, cycle.period, ctx)
    Mono = np.zeros((n_dir, n_dir))
    Mono[: n_p - 1, :] = H[1:, :]
    Mono[n_p - 1 :, :] = N
    evals, i1, v, w, Pc = _split_multiplier_one(Mono, tol=tol_mult_one)
    # weighted angle between the unit eigenvector and the cycle's time derivative
    dc, dm = pde_time_derivative(ctx, base)
    dgamma = np.concatenate([dc[1:], dm])
    wvec = np.concatenate([ctx.dual_weights()[1:], np.ones(d)])
    dot = float(np.sum(wvec * v * dgamma))
    na = np.sqrt(float(np.sum(wvec * v * v)))
    nb = np.sqrt(float(np.sum(wvec * dgamma * dgamma)))
    angle = float(np.arccos(min(1.0, abs(dot) / (na * nb))))
    if angle > 1e-2:
        raise CycleQualityError(f"spectral multiplier-1 eigenvector misaligned with the flow ({angle:.2e} rad)")
    others = np.delete(evals, i1)
    mu2 = others[np.argmax(np.abs(others))]
    rate = float(-np.log(np.abs(mu2)) / cycle.period)
    Ps = np.eye(n_dir) - Pc
    return FloquetData(
        monodromy=Mono,
        multipliers=evals,
        Pc=Pc,
        Ps=Ps,
        rate=rate,
        extras={"tangent_angle": angle, "period": cycle.period, "second_multiplier": mu2},
    )


# --- approximate invariance report ------------------------------------------------


@dataclass
class InvarianceReport:
    """Measured approximate-invariance quantities and their delta-scaling.

    defect: worst distance between the time-tau/delta image of a frozen
    profile on the reduced cycle and the rotated frozen profile.
    cross_tangent_from_stable / cross_stable_from_tangent: coupling norms
    between the approximate tangent and stable blocks of the linearized
    flow.  stable_norm and center_lower are the item-(4) bounds.
    """

    deltas: np.ndarray
    tau: float
    defect: np.ndarray
    defect_by_phase: np.ndarray
    cross_tangent_from_stable: np.ndarray
    cross_stable_from_tangent: np.ndarray
    stable_norm: np.ndarray
    center_lower: np.ndarray
    c_tangent: float
    C_bound: float
    rate: float
    stable_limit: float
    center_limit: float

    def slope(self, values: np.ndarray) -> float:
        return float(np.polyfit(np.log(self.deltas), np.log(values), 1)[0])

    @property
    def defect_slope(self) -> float:
        return self.slope(self.defect)

    @property
    def cross_slopes(self) -> tuple[float, float]:
        return (
            self.slope(self.cross_tangent_from_stable),
            self.slope(self.cross_stable_from_tangent),
        )


def spectral_gap_horizon(frames: FloquetFrames, safety: float = 1.0) -> float:
    """Smallest slow-time horizon satisfying the stable-gap margin
    exp(-rate * tau) <= c_tangent / (8 C_bound)."""
    return safety * float(np.log(8.0 * frames.C_bound / frames.c_tangent) / frames.rate)


def check_approximate_invariance(
    model: ModelSpec,
    cfg: SolverConfig,
    deltas,
    tau: float | None = None,
    frames: FloquetFrames | None = None,
    reduced_cycle: LimitCycle | None = None,
    n_phases_defect: int = 8,
    n_phases_blocks: int = 2,
) -> InvarianceReport:
    """Quantify how the frozen-profile manifold fails to be invariant and
    how the linearized flow couples its tangent and stable blocks.

    tau is a slow-time horizon and must satisfy the spectral-gap margin
    exp(-rate*tau) <= c_tangent/(8 C_bound) measured on the reduced cycle.
    For each delta the report records the worst invariance defect over
    n_phases_defect equispaced phases (the flows run for real time
    tau/delta) and the block-coupling norms at n_phases_blocks phases.
    """
    deltas = np.asarray(sorted(deltas, reverse=True), dtype=float)
    if reduced_cycle is None:
        search = find_cycle_reduced((0.0, 1.0), model)
        if not search.found:
            raise CycleSearchError("reduced dynamics has no cycle; nothing to check")
        reduced_cycle = search.cycle
    if frames is None:
        frames = floquet_frames(reduced_cycle, model)
    if tau is None:
        tau = spectral_gap_horizon(frames)
    margin = frames.c_tangent / (8.0 * frames.C_bound)
    if np.exp(-frames.rate * tau) > margin * (1.0 + 1e-9):
        raise ValueError(
            f"tau={tau:g} violates the spectral-gap margin (needs exp(-rate*tau) <= {margin:.3e})"
        )
    T = reduced_cycle.period
    K = reduced_cycle.n_samples
    rf = _rf_from_cycle(reduced_cycle, model)

    phase_idx_defect = [int(round(j * K / n_phases_defect)) % K for j in range(n_phases_defect)]
    phase_idx_blocks = [int(round(j * K / n_phases_blocks)) % K for j in range(n_phases_blocks)]

    defect = np.empty(len(deltas))
    defect_by_phase = np.empty((len(deltas), n_phases_defect))
    cross_cs = np.empty(len(deltas))
    cross_sc = np.empty(len(deltas))
    stable_norm = np.empty(len(deltas))
    center_lower = np.empty(len(deltas))

    for i_d, delta in enumerate(deltas):
        model_d = replace(model, delta=float(delta))
        ctx = GalerkinContext(model_d, cfg)
        horizon = tau / delta
        wvec = ctx.dual_weights()

        # item (1): invariance defect, all phases in one batched flow
        C0 = np.tile(ctx.stationary_coeffs()[:, None], (1, n_phases_defect))
        M0 = np.stack([reduced_cycle.means[j] for j in phase_idx_defect], axis=1)
        C1, M1 = flow_many(C0, M0, horizon, ctx)
        for j, idx in enumerate(phase_idx_defect):
            target_mean = reduced_state_at(reduced_cycle, reduced_cycle.phases[idx] + tau, rf)
            dcoef = C1[:, j] - ctx.stationary_coeffs()
            defect_by_phase[i_d, j] = ctx.state_norm(dcoef, M1[:, j] - target_mean)
        defect[i_d] = defect_by_phase[i_d].max()

        # items (3) and (4): block norms of the linearized flow
        worst_cs, worst_sc, worst_stable, worst_center = 0.0, 0.0, 0.0, np.inf
        n_p, d = ctx.n_coeff, model.d
        for idx in phase_idx_blocks:
            u = reduced_cycle.phases[idx]
            i_out = frames.frame_index(u + tau)
            e_c_in = frames.tangents[idx] / np.linalg.norm(frames.tangents[idx])
            # unit stable direction at the input phase
            sdir = frames.Ps[idx] @ _stable_seed(frames, idx)
            sdir = sdir / np.linalg.norm(sdir)
            e_c_out = frames.tangents[i_out] / np.linalg.norm(frames.tangents[i_out])
            sout = frames.Ps[i_out] @ _stable_seed(frames, i_out)
            sout = sout / np.linalg.norm(sout)

            # input columns: mass-zero coefficient directions, then the
            # stable mean direction, then the tangent mean direction
            n_dir = (n_p - 1) + 2
            H0 = np.zeros((n_p, n_dir))
            N0 = np.zeros((d, n_dir))
            # orthonormal inputs in the weighted metric: unit-norm coefficient bumps
            in_scale = wvec[1:] ** -0.5
            H0[1:, : n_p - 1] = np.diag(in_scale)
            N0[:, n_p - 1] = sdir
            N0[:, n_p - 1 + 1] = e_c_in
            base = ctx.stationary_state(reduced_cycle.means[idx])
            H, N = tangent_flow_matrix(base, H0, N0, horizon, ctx)

            Pc_out = frames.Pc[i_out]
            Ps_out = frames.Ps[i_out]
            # columns of Pc_out @ N are parallel to the output tangent;
            # coord_c is the coordinate of each along it
            coord_c = (Pc_out @ N).T @ e_c_out
            mean_s = Ps_out @ N
            eta_w = np.sqrt(wvec[:, None]) * H  # weighted coefficient coordinates

            # item (3a): tangent output from the stable block (all columns but the last)
            worst_cs = max(worst_cs, float(np.linalg.norm(coord_c[: n_dir - 1], 2)))
            # item (3b): stable output from the tangent column (the last one)
            sc = np.hypot(np.linalg.norm(eta_w[:, -1]), np.linalg.norm(mean_s[:, -1]))
            worst_sc = max(worst_sc, float(sc))
            # item (4a): stable-block operator norm in the weighted metric
            A = np.vstack([eta_w[:, : n_dir - 1], (sout @ mean_s[:, : n_dir - 1])[None, :]])
            worst_stable = max(worst_stable, float(np.linalg.norm(A, 2)))
            # item (4b): tangent-block lower bound (1x1 block)
            worst_center = min(worst_center, float(abs(coord_c[-1])))
        cross_cs[i_d] = worst_cs
        cross_sc[i_d] = worst_sc
        stable_norm[i_d] = worst_stable
        center_lower[i_d] = worst_center

    return InvarianceReport(
        deltas=deltas,
        tau=float(tau),
        defect=defect,
        defect_by_phase=defect_by_phase,
        cross_tangent_from_stable=cross_cs,
        cross_stable_from_tangent=cross_sc,
        stable_norm=stable_norm,
        center_lower=center_lower,
        c_tangent=frames.c_tangent,
        C_bound=frames.C_bound,
        rate=frames.rate,
        stable_limit=float(2.0 * frames.C_bound * np.exp(-frames.rate * tau)),
        center_limit=float(frames.c_tangent / 4.0),
    )


def _stable_seed(frames: FloquetFrames, idx: int) -> np.ndarray:
    """A vector with a healthy component in the stable direction at phase idx."""
    t = frames.tangents[idx] / np.linalg.norm(frames.tangents[idx])
    seed = np.array([-t[1], t[0]])
    return seed


# --- artifacts ---------------------------------------------------------------------


def cycle_csv(cycle: LimitCycle) -> str:
    buf = io.StringIO()
    buf.write(
        f"# cycle space={cycle.space} period={cycle.period:.11e} "
        f"section=[{','.join(f'{v:.11e}' for v in cycle.section_point)}] "
        f"normal=[{','.join(f'{v:.11e}' for v in cycle.section_normal)}]\n"
    )
    for key, val in sorted(cycle.meta.items()):
        if isinstance(val, (int, float, bool, str)):
            buf.write(f"# {key}={val}\n")
    d = cycle.means.shape[1]
    cols = ["phase"] + [f"m_{j + 1}" for j in range(d)]
    if cycle.coeffs is not None:
        cols += [f"c_{i}" for i in range(cycle.coeffs.shape[1])]
    buf.write(",".join(cols) + "\n")
    for i in range(cycle.n_samples):
        row = [cycle.phases[i], *cycle.means[i]]
        if cycle.coeffs is not None:
            row += list(cycle.coeffs[i])
        buf.write(",".join(f"{v:.11e}" for v in row) + "\n")
    return buf.getvalue()


def floquet_report_json(fd: FloquetData) -> str:
    payload = {
        "multipliers": [[float(np.real(m)), float(np.imag(m))] for m in fd.multipliers],
        "rate": fd.rate,
        "Pc": np.asarray(fd.Pc).tolist(),
        "Ps": np.asarray(fd.Ps).tolist(),
        "monodromy": np.asarray(fd.monodromy).tolist(),
        "extras": {
            k: (float(np.real(v)) if np.isscalar(v) and np.isrealobj(np.asarray(v)) else str(v))
            for k, v in fd.extras.items()
            if not isinstance(v, np.ndarray)
        },
    }
    return json.dumps(payload, indent=2)
