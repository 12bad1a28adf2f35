"""Asymptotic phase (isochron) maps around stable limit cycles.

The phase of a state is defined through the long-time limit: flow the
state an integer number of periods until it has collapsed onto the cycle,
then read the phase of the landing point.  Because flowing a whole period
leaves the phase unchanged, the landing phase IS the phase of the initial
state.  The phase of the landing point is resolved below the sample
spacing by quadratic interpolation of the squared distance over the three
nearest stored phases followed by tangent-projection Newton corrections.

The phase derivative at a cycle point is the left Floquet eigenvector of
the monodromy at that phase, normalized to give 1 on the cycle's velocity;
its kernel is the stable subspace.  A finite-difference construction of
the same derivative provides an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .orbit import (
    REDUCED_SPACE,
    FloquetData,
    LimitCycle,
    ReducedFlow,
    _split_multiplier_one,
    pde_state_at,
    pde_time_derivative,
    reduced_state_at,
)
from .pde import CenteredState, GalerkinContext, flow, flow_many


class OutsideBasinError(RuntimeError):
    pass


class PhaseGradientMismatchError(RuntimeError):
    pass


MAX_PERIODS = 200


@dataclass
class PhaseResult:
    phase: float
    landing_distance: float
    n_periods: int


@dataclass
class PhaseMap:
    """Asymptotic-phase evaluator attached to one cycle.

    match_tol is the basin certificate: evaluations whose landing point
    stays farther than this from the cycle raise OutsideBasinError.
    converge_horizon caps the number of periods spent collapsing onto the
    cycle; the actual number is chosen per state from the Floquet rate.
    """

    cycle: LimitCycle
    floquet: FloquetData
    match_tol: float
    converge_horizon: int = MAX_PERIODS
    backend: object = None  # ReducedFlow or GalerkinContext
    _grad_cache: dict = field(default_factory=dict, repr=False)

    # -- metric helpers -------------------------------------------------

    def _distances_to_samples(self, x) -> np.ndarray:
        if self.cycle.space == REDUCED_SPACE:
            return np.linalg.norm(self.cycle.means - x, axis=1)
        ctx: GalerkinContext = self.backend
        w = ctx.dual_weights()
        dc = self.cycle.coeffs - x.coeffs
        dm = self.cycle.means - x.mean
        return np.sqrt((dc * dc) @ w + np.sum(dm * dm, axis=1))

    def _state_at(self, u: float):
        if self.cycle.space == REDUCED_SPACE:
            return reduced_state_at(self.cycle, u, self.backend)
        return pde_state_at(self.cycle, u, self.backend)

    def _distance_state(self, a, b) -> float:
        if self.cycle.space == REDUCED_SPACE:
            return float(np.linalg.norm(a - b))
        ctx: GalerkinContext = self.backend
        return ctx.distance(a, b)

    def n_periods_for(self, d0: float) -> int:
        rate = self.floquet.rate
        T = self.cycle.period
        if d0 <= self.match_tol / 10.0:
            return 1
        n = int(np.ceil(np.log(10.0 * d0 / self.match_tol) / max(rate * T, 1e-12)))
        return int(np.clip(n, 1, self.converge_horizon))


def reduced_phase_map(cycle, model, floquet, match_tol: float = 1e-8, rf: ReducedFlow | None = None) -> PhaseMap:
    from .orbit import _rf_from_cycle

    return PhaseMap(cycle, floquet, match_tol, backend=rf or _rf_from_cycle(cycle, model))


def pde_phase_map(cycle, ctx: GalerkinContext, floquet, match_tol: float = 1e-4) -> PhaseMap:
    return PhaseMap(cycle, floquet, match_tol, backend=ctx)


# -- landing-phase refinement ---------------------------------------------------


def _quadratic_vertex(dm, d0, dp) -> float:
    """Vertex offset in sample units from three consecutive squared distances."""
    denom = dm - 2.0 * d0 + dp
    if denom <= 0:
        return 0.0
    return float(np.clip(0.5 * (dm - dp) / denom, -1.0, 1.0))


def _landing_phase(pm: PhaseMap, x) -> tuple[float, float]:
    """Phase of the cycle point nearest to x, resolved below the grid."""
    cyc = pm.cycle
    K = cyc.n_samples
    leg = cyc.period / K
    d = pm._distances_to_samples(x)
    j = int(np.argmin(d))
    d2 = d ** 2
    off = _quadratic_vertex(d2[(j - 1) % K], d2[j], d2[(j + 1) % K])
    u = (cyc.phases[j] + off * leg) % cyc.period

    if cyc.space == REDUCED_SPACE:
        rf: ReducedFlow = pm.backend
        # tangent-projection Newton: project the residual on the local
        # velocity; two passes push the phase error to integrator level
        ref = reduced_state_at(cyc, u, rf)
        for _ in range(2):
            vel = rf.rhs(ref)
            du = float((x - ref) @ vel / (vel @ vel))
            u = (u + np.clip(du, -leg, leg)) % cyc.period
            ref = reduced_state_at(cyc, u, rf)
        return u, float(np.linalg.norm(x - ref))

    # spectral cycle: tangent-projection corrections in the weighted metric
    ctx: GalerkinContext = pm.backend
    w = ctx.dual_weights()
    ref = pm._state_at(u)
    for _ in range(3):
        dc_dir, dm_dir = pde_time_derivative(ctx, ref)
        num = float(((x.coeffs - ref.coeffs) * dc_dir) @ w + (x.mean - ref.mean) @ dm_dir)
        den = float((dc_dir * dc_dir) @ w + dm_dir @ dm_dir)
        du = float(np.clip(num / den, -leg, leg))
        u = (u + du) % cyc.period
        ref = pm._state_at(u)
        if abs(du) < 1e-10 * cyc.period:
            break
    return u, pm._distance_state(x, ref)


# -- public evaluations ------------------------------------------------------------


def phase(pm: PhaseMap, state) -> PhaseResult:
    """Asymptotic phase of a state in the cycle's basin.

    Flows the state an integer number of periods (seeded by the Floquet
    rate, doubled while the landing point is still off the cycle), then
    reads the phase of the landing point.  States that never collapse onto
    the cycle within the period cap raise OutsideBasinError.
    """
    d0 = float(np.min(pm._distances_to_samples(state)))
    n = pm.n_periods_for(d0)
    T = pm.cycle.period
    cur = np.asarray(state, dtype=float).copy() if pm.cycle.space == REDUCED_SPACE else state
    total = 0
    prev_dist = np.inf
    while True:
        if pm.cycle.space == REDUCED_SPACE:
            cur = pm.backend.integrate(cur, n * T)
        else:
            cur, _ = flow(cur, n * T, pm.backend)
        total += n
        u, dist = _landing_phase(pm, cur)
        if dist <= pm.match_tol:
            return PhaseResult(phase=float(u % T), landing_distance=dist, n_periods=total)
        stalled = dist > 1e3 * pm.match_tol and dist > prev_dist * (1.0 - 1e-6)
        if total >= pm.converge_horizon or stalled:
            # in the basin the distance shrinks geometrically per period; a
            # large stalled distance marks an invariant set off the cycle
            raise OutsideBasinError(
                f"landing distance {dist:.3e} exceeds the basin certificate "
                f"{pm.match_tol:.3e} after {total} periods"
            )
        prev_dist = dist
        n = min(max(n, 1) * 2, pm.converge_horizon - total)


def phase_many(pm: PhaseMap, states) -> list[PhaseResult]:
    """Batch phase evaluation; unconverged states get doubled budgets while
    the rest wait, so the whole batch shares its integration steps."""
    T = pm.cycle.period
    if pm.cycle.space == REDUCED_SPACE:
        cur = np.asarray(states, dtype=float).copy()
        n_states = len(cur)
    else:
        C = np.stack([s.coeffs for s in states], axis=1)
        M = np.stack([s.mean for s in states], axis=1)
        n_states = C.shape[1]
    results: list[PhaseResult | None] = [None] * n_states
    active = np.arange(n_states)
    prev_dist = np.full(n_states, np.inf)
    n = max(
        pm.n_periods_for(float(np.min(pm._distances_to_samples(s))))
        for s in (states if pm.cycle.space != REDUCED_SPACE else list(np.asarray(states, dtype=float)))
    )
    total = 0
    while len(active):
        if pm.cycle.space == REDUCED_SPACE:
            cur[active] = pm.backend.integrate(cur[active], n * T)
        else:
            C[:, active], M[:, active] = flow_many(C[:, active], M[:, active], n * T, pm.backend)
        total += n
        still = []
        for i in active:
            landed = cur[i] if pm.cycle.space == REDUCED_SPACE else CenteredState(C[:, i], M[:, i])
            u, dist = _landing_phase(pm, landed)
            if dist <= pm.match_tol:
                results[i] = PhaseResult(float(u % T), dist, total)
            else:
                if dist > 1e3 * pm.match_tol and dist > prev_dist[i] * (1.0 - 1e-6):
                    raise OutsideBasinError(
                        f"state {i} stalled at landing distance {dist:.3e} after {total} periods"
                    )
                prev_dist[i] = dist
                still.append(i)
        if still and total >= pm.converge_horizon:
            raise OutsideBasinError(
                f"{len(still)} state(s) failed to land on the cycle within {total} periods"
            )
        active = np.array(still, dtype=int)
        n = min(max(n, 1) * 2, max(pm.converge_horizon - total, 1))
    return results


@dataclass
class RateFit:
    slope: float
    intercept: float
    skipped: bool
    times: np.ndarray
    distances: np.ndarray


def phase_convergence_rate(pm: PhaseMap, state, n_points: int = 16) -> RateFit:
    """Fit the exponential collapse rate onto the cycle.

    Tracks the distance to the co-rotating cycle point over the transient
    and returns the slope of log-distance against time.  States already on
    the cycle (distance below the certificate) skip the fit.
    """
    res = phase(pm, state)
    T = pm.cycle.period
    d0 = float(pm._distance_state(state, pm._state_at(res.phase)) if pm.cycle.space != REDUCED_SPACE
               else np.linalg.norm(np.asarray(state, dtype=float) - pm._state_at(res.phase)))
    if d0 <= pm.match_tol:
        return RateFit(np.nan, np.nan, True, np.array([]), np.array([]))
    horizon = res.n_periods * T
    ts = np.linspace(0.0, horizon, n_points + 1)[1:]
    dists = []
    cur = state
    prev_t = 0.0
    for t in ts:
        if pm.cycle.space == REDUCED_SPACE:
            cur = pm.backend.integrate(np.asarray(cur, dtype=float), t - prev_t)
            ref = pm._state_at(res.phase + t)
            dists.append(np.linalg.norm(cur - ref))
        else:
            cur, _ = flow(cur, t - prev_t, pm.backend)
            ref = pm._state_at(res.phase + t)
            dists.append(pm._distance_state(cur, ref))
        prev_t = t
    dists = np.array(dists)
    keep = dists > 1e-14
    slope, intercept = np.polyfit(ts[keep], np.log(dists[keep]), 1)
    return RateFit(float(slope), float(intercept), False, ts[keep], dists[keep])


# -- phase gradient ------------------------------------------------------------------


@dataclass
class GradientResult:
    """Phase derivative at a cycle point, built two ways.

    functional: left Floquet eigenvector normalized against the cycle
    velocity (reduced: length-d vector; spectral: weights for (coeffs[1:],
    mean) coordinates).  fd_values/floquet_values pair up the
    finite-difference and structural values on the checked directions.
    """

    phase_anchor: float
    functional: np.ndarray
    directions: np.ndarray
    fd_values: np.ndarray
    floquet_values: np.ndarray

    @property
    def max_rel_mismatch(self) -> float:
        scale = max(np.max(np.abs(self.floquet_values)), 1e-12)
        return float(np.max(np.abs(self.fd_values - self.floquet_values)) / scale)


def _monodromy_at_phase(pm: PhaseMap, u: float):
    """Monodromy anchored at phase u (assembled on demand and cached)."""
    from .orbit import _joint_variational, pde_monodromy

    key = round(float(u) % pm.cycle.period, 12)
    if key in pm._grad_cache:
        return pm._grad_cache[key]
    if pm.cycle.space == REDUCED_SPACE:
        rf: ReducedFlow = pm.backend
        z = reduced_state_at(pm.cycle, u, rf)
        Mono, _, _ = _joint_variational(rf, z, pm.cycle.period)
    else:
        if abs(key) < 1e-12:
            Mono = pm.floquet.monodromy
        else:
            shifted = _shifted_pde_cycle(pm.cycle, u, pm.backend)
            Mono = pde_monodromy(shifted, pm.backend).monodromy
    pm._grad_cache[key] = Mono
    return Mono


def _shifted_pde_cycle(cycle: LimitCycle, u: float, ctx) -> LimitCycle:
    K = cycle.n_samples
    shift = int(round((u % cycle.period) / (cycle.period / K))) % K
    return LimitCycle(
        space=cycle.space,
        period=cycle.period,
        phases=cycle.phases,
        means=np.roll(cycle.means, -shift, axis=0),
        coeffs=np.roll(cycle.coeffs, -shift, axis=0),
        section_point=cycle.section_point,
        section_normal=cycle.section_normal,
        meta=cycle.meta,
    )


def phase_gradient(pm: PhaseMap, u: float, n_fd_directions: int | None = None, fd_step: float = 1e-3) -> GradientResult:
    """Phase derivative at the cycle point of phase u.

    Built from the Floquet structure (left unit-multiplier eigenvector,
    kernel = stable subspace, value 1 on the velocity) and cross-checked
    against central finite differences of the phase along coordinate
    directions.  For spectral cycles the finite-difference check is run on
    a capped subset of directions (they each cost a full phase evaluation);
    n_fd_directions=None checks every direction for reduced cycles and 8
    random mass-zero directions plus the means for spectral ones.
    A relative mismatch beyond 5e-3 raises PhaseGradientMismatchError.
    """
    Mono = _monodromy_at_phase(pm, u)
    _, _, v, w, _ = _split_multiplier_one(Mono, tol=1e-3)

    if pm.cycle.space == REDUCED_SPACE:
        rf: ReducedFlow = pm.backend
        z_u = reduced_state_at(pm.cycle, u, rf)
        velocity = rf.rhs(z_u)
        w = w / (w @ velocity)
        d = len(z_u)
        dirs = np.eye(d) if n_fd_directions is None else np.eye(d)[:n_fd_directions]
        fd_vals = np.empty(len(dirs))
        fq_vals = np.empty(len(dirs))
        T = pm.cycle.period
        for i, e in enumerate(dirs):
            pp = phase(pm, z_u + fd_step * e).phase
            mm = phase(pm, z_u - fd_step * e).phase
            diff = (pp - mm + T / 2.0) % T - T / 2.0
            fd_vals[i] = diff / (2.0 * fd_step)
            fq_vals[i] = w @ e
        grad = GradientResult(u, w, dirs, fd_vals, fq_vals)
    else:
        ctx: GalerkinContext = pm.backend
        base = pm._state_at(u)
        dc, dm = pde_time_derivative(ctx, base)
        vel = np.concatenate([dc[1:], dm])
        w = w / (w @ vel)
        n_p, d = ctx.n_coeff, ctx.model.d
        rng = np.random.default_rng(1234)
        n_fd = 8 if n_fd_directions is None else n_fd_directions
        dirs = []
        for _ in range(n_fd):
            e = rng.standard_normal(n_p - 1 + d)
            e[: n_p - 1] *= ctx.dual_weights()[1:] ** -0.5  # comparable weighted size
            dirs.append(e / np.linalg.norm(e))
        for j in range(d):
            e = np.zeros(n_p - 1 + d)
            e[n_p - 1 + j] = 1.0
            dirs.append(e)
        dirs = np.array(dirs)
        T = pm.cycle.period
        fd_vals = np.empty(len(dirs))
        fq_vals = np.empty(len(dirs))
        for i, e in enumerate(dirs):
            pert_c = np.concatenate([[0.0], e[: n_p - 1]])
            pert_m = e[n_p - 1 :]
            sp = CenteredState(base.coeffs + fd_step * pert_c, base.mean + fd_step * pert_m)
            sm = CenteredState(base.coeffs - fd_step * pert_c, base.mean - fd_step * pert_m)
            pp = phase(pm, sp).phase
            mm = phase(pm, sm).phase
            diff = (pp - mm + T / 2.0) % T - T / 2.0
            fd_vals[i] = diff / (2.0 * fd_step)
            fq_vals[i] = w @ e
        grad = GradientResult(u, w, dirs, fd_vals, fq_vals)

    if grad.max_rel_mismatch > 5e-3:
        raise PhaseGradientMismatchError(
            f"finite-difference and Floquet phase gradients disagree by {grad.max_rel_mismatch:.3e}"
        )
    return grad


# -- artifacts ------------------------------------------------------------------------


def phase_scan_csv(pm: PhaseMap, states) -> str:
    import io

    buf = io.StringIO()
    if pm.cycle.space == REDUCED_SPACE:
        d = pm.cycle.means.shape[1]
        buf.write(",".join([f"x_{j + 1}" for j in range(d)] + ["phase", "landing_distance", "n_periods"]) + "\n")
        for z in states:
            try:
                r = phase(pm, np.asarray(z, dtype=float))
                buf.write(
                    ",".join(f"{v:.11e}" for v in z)
                    + f",{r.phase:.11e},{r.landing_distance:.11e},{r.n_periods}\n"
                )
            except OutsideBasinError:
                buf.write(",".join(f"{v:.11e}" for v in z) + ",nan,nan,0\n")
    else:
        buf.write("mean_offset_norm,phase,landing_distance,n_periods\n")
        for s in states:
            r = phase(pm, s)
            buf.write(f"{np.linalg.norm(s.mean):.11e},{r.phase:.11e},{r.landing_distance:.11e},{r.n_periods}\n")
    return buf.getvalue()


def isochron_grid_csv(pm: PhaseMap, x_bounds, y_bounds, shape=(41, 41)) -> str:
    """Phase raster over a rectangle for a reduced planar cycle; points
    outside the basin give NaN."""
    import io

    assert pm.cycle.space == REDUCED_SPACE and pm.cycle.means.shape[1] == 2
    xs = np.linspace(*x_bounds, shape[0])
    ys = np.linspace(*y_bounds, shape[1])
    buf = io.StringIO()
    buf.write("x,y,phase\n")
    for x in xs:
        for y in ys:
            try:
                r = phase(pm, np.array([x, y]))
                val = f"{r.phase:.11e}"
            except OutsideBasinError:
                val = "nan"
            buf.write(f"{x:.11e},{y:.11e},{val}\n")
    return buf.getvalue()
