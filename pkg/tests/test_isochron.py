import numpy as np
import pytest

from mfosc.isochron import (
    OutsideBasinError,
    isochron_grid_csv,
    pde_phase_map,
    phase,
    phase_convergence_rate,
    phase_gradient,
    phase_many,
    phase_scan_csv,
    reduced_phase_map,
)
from mfosc.model import fhn_model
from mfosc.orbit import (
    ReducedFlow,
    find_cycle_pde,
    find_cycle_reduced,
    find_fixed_point,
    floquet_reduced,
    pde_monodromy,
)
from mfosc.pde import CenteredState, GalerkinContext, SolverConfig


@pytest.fixture(scope="module")
def model():
    return fhn_model(delta=0.05)


@pytest.fixture(scope="module")
def cycle(model):
    return find_cycle_reduced((0.0, 1.0), model, dt=2e-3, transient=200.0, probe=80.0).cycle


@pytest.fixture(scope="module")
def pm(cycle, model):
    fd = floquet_reduced(cycle, model)
    rf = ReducedFlow(model, quad_order=8, rescaled=True, dt=4e-3)
    return reduced_phase_map(cycle, model, fd, match_tol=1e-7, rf=rf)


@pytest.fixture(scope="module")
def pde_pm(cycle, model):
    ctx = GalerkinContext(model, SolverConfig(dt=0.1, trunc=8, r_norm=2.0))
    pcyc = find_cycle_pde(ctx, cycle, tol=1e-6, n_samples=32)
    fd = pde_monodromy(pcyc, ctx)
    return pde_phase_map(pcyc, ctx, fd, match_tol=2e-3)


def _wrapped_gap(a, b, T):
    return abs((a - b + T / 2.0) % T - T / 2.0)


def test_phase_identity_on_the_cycle(pm):
    cyc = pm.cycle
    for j in range(0, cyc.n_samples, 41):
        r = phase(pm, cyc.means[j])
        assert _wrapped_gap(r.phase, cyc.phases[j], cyc.period) <= cyc.period / cyc.n_samples
        assert r.landing_distance <= pm.match_tol


def test_phase_flow_identity_sample(pm):
    rng = np.random.default_rng(0)
    cyc = pm.cycle
    T = cyc.period
    states = np.array(
        [cyc.means[rng.integers(cyc.n_samples)] + 0.03 * rng.standard_normal(2) for _ in range(10)]
    )
    base = phase_many(pm, states)
    for s in (0.2 * T, 0.71 * T):
        moved = pm.backend.integrate(states.copy(), s)
        shifted = phase_many(pm, moved)
        for r0, r1 in zip(base, shifted):
            drift = _wrapped_gap(r1.phase, r0.phase + s, T)
            assert drift <= 1e-4 * T


def test_unstable_rest_point_is_outside_the_basin(pm, model):
    fp = find_fixed_point((-0.8, -0.47), model)
    with pytest.raises(OutsideBasinError):
        phase(pm, fp)


def test_convergence_rate_matches_floquet_gap(pm):
    fd = pm.floquet
    sdir = fd.Ps @ np.array([1.0, 0.3])
    sdir /= np.linalg.norm(sdir)
    fit = phase_convergence_rate(pm, pm.cycle.means[0] + 1e-3 * sdir)
    assert not fit.skipped
    assert fit.slope <= -0.5 * fd.rate
    assert 0.7 <= -fit.slope / fd.rate <= 1.3
    # doubling the perturbation shifts the intercept, not the slope
    fit2 = phase_convergence_rate(pm, pm.cycle.means[0] + 2e-3 * sdir)
    assert abs(fit2.slope - fit.slope) <= 0.2 * abs(fit.slope)
    assert fit2.intercept > fit.intercept


def test_on_cycle_rate_fit_is_skipped(pm):
    fit = phase_convergence_rate(pm, pm.cycle.means[0])
    assert fit.skipped


def test_phase_gradient_structure_and_adjoint_oracle(pm, model):
    grad = phase_gradient(pm, 0.0)
    assert grad.max_rel_mismatch <= 5e-3
    rf = pm.backend
    vel = rf.rhs(pm.cycle.means[0])
    assert abs(grad.functional @ vel - 1.0) <= 1e-3
    sdir = pm.floquet.Ps @ np.array([1.0, 0.3])
    sdir /= np.linalg.norm(sdir)
    assert abs(grad.functional @ sdir) <= 1e-3

    # independent oracle: integrate the adjoint variational equation
    # backward over one period; its unit-multiplier eigenvector is the
    # classical phase-response direction
    T = pm.cycle.period
    dt = 1e-3
    n = int(round(T / dt))
    W = np.eye(2)
    z = pm.cycle.means[0].copy()
    # forward orbit stored, then the adjoint runs backward along it
    zs = [z.copy()]
    for _ in range(n):
        z = rf.step(z, T / n)
        zs.append(z.copy())
    for i in range(n, 0, -1):
        # implicit-free RK4 on dW/ds = +J(z(s))^T W for s = T - t
        def rhs(W_, zz):
            return rf.jac(zz).T @ W_

        h = T / n
        k1 = rhs(W, zs[i])
        k2 = rhs(W + 0.5 * h * k1, 0.5 * (zs[i] + zs[i - 1]))
        k3 = rhs(W + 0.5 * h * k2, 0.5 * (zs[i] + zs[i - 1]))
        k4 = rhs(W + h * k3, zs[i - 1])
        W = W + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    evals, evecs = np.linalg.eig(W)
    i1 = int(np.argmin(np.abs(evals - 1.0)))
    w_adj = np.real(evecs[:, i1])
    w_adj = w_adj / (w_adj @ vel)
    assert np.abs(w_adj - grad.functional).max() <= 1e-3


def test_phase_scan_and_grid_artifacts(pm):
    rng = np.random.default_rng(1)
    states = pm.cycle.means[::64] + 0.02 * rng.standard_normal((4, 2))
    text = phase_scan_csv(pm, states)
    lines = text.splitlines()
    assert lines[0] == "x_1,x_2,phase,landing_distance,n_periods"
    assert len(lines) == 5

    grid = isochron_grid_csv(pm, (-2.2, -1.8), (-0.8, -0.4), shape=(3, 3))
    glines = grid.splitlines()
    assert glines[0] == "x,y,phase"
    assert len(glines) == 10


def test_pde_phase_identity(pde_pm):
    ctx = pde_pm.backend
    pcyc = pde_pm.cycle
    T = pcyc.period
    rng = np.random.default_rng(2)
    states = []
    for j in (0, 11, 23):
        c = pcyc.coeffs[j].copy()
        c[1:] *= 1.0 + 0.004 * rng.standard_normal(len(c) - 1)
        states.append(CenteredState(c, pcyc.means[j] + 0.004 * rng.standard_normal(2)))
    base = phase_many(pde_pm, states)
    from mfosc.pde import flow_many

    s = 0.37 * T
    C = np.stack([st.coeffs for st in states], axis=1)
    M = np.stack([st.mean for st in states], axis=1)
    C1, M1 = flow_many(C, M, s, ctx)
    shifted = phase_many(pde_pm, [CenteredState(C1[:, i], M1[:, i]) for i in range(3)])
    for r0, r1 in zip(base, shifted):
        assert _wrapped_gap(r1.phase, r0.phase + s, T) <= 1e-2 * T


def test_pde_phase_gradient_normalization(pde_pm):
    grad = phase_gradient(pde_pm, 0.0, n_fd_directions=2)
    ctx = pde_pm.backend
    from mfosc.orbit import pde_time_derivative

    base = CenteredState(pde_pm.cycle.coeffs[0].copy(), pde_pm.cycle.means[0].copy())
    dc, dm = pde_time_derivative(ctx, base)
    vel = np.concatenate([dc[1:], dm])
    assert abs(grad.functional @ vel - 1.0) <= 1e-3
    assert grad.max_rel_mismatch <= 5e-3
