import numpy as np
import pytest

from mfosc.hermite import reweight_distribution, SobolevParams, sobolev_norm
from mfosc.model import effective_drift_fhn_closed, effective_jacobian, fhn_model
from mfosc.orbit import ReducedFlow
from mfosc.pde import (
    CenteredState,
    ContractViolationError,
    GalerkinContext,
    NumericalInstabilityError,
    SolverConfig,
    TangentState,
    checkpoint_csv,
    checkpoint_load,
    flow,
    flow_many,
    second_variation,
    step,
    tangent_flow,
    trajectory_csv,
)

A, B, C = 1.0 / 3.0, 1.0, 10.0


@pytest.fixture(scope="module")
def ctx():
    return GalerkinContext(fhn_model(delta=0.05), SolverConfig(dt=0.02, trunc=8))


@pytest.fixture(scope="module")
def ctx0():
    return GalerkinContext(fhn_model(delta=0.0), SolverConfig(dt=0.02, trunc=8))


def random_state(ctx, rng, mean_scale=0.5, amp=0.02):
    c = ctx.stationary_coeffs()
    c[1:] += amp * rng.standard_normal(ctx.n_coeff - 1)
    return CenteredState(c, mean_scale * rng.standard_normal(2))


def random_tangent(ctx, rng, amp=0.02):
    eta = amp * rng.standard_normal(ctx.n_coeff)
    eta[0] = 0.0
    return TangentState(eta, 0.1 * rng.standard_normal(2))


def test_mean_rate_at_stationary_profile_matches_closed_form(ctx):
    for mean in ([0.0, 0.0], [-0.8, -0.47], [1.2, 0.3]):
        st = ctx.stationary_state(mean)
        _, G2 = ctx.rhs(st.coeffs, st.mean)
        closed = effective_drift_fhn_closed(np.asarray(mean), A, B, C, 0.2)
        assert np.abs(G2 - closed).max() <= 1e-12


def test_density_rate_is_mass_free(ctx):
    rng = np.random.default_rng(0)
    st = random_state(ctx, rng)
    G1, _ = ctx.rhs(st.coeffs, st.mean)
    assert G1[0] == 0.0


def test_zero_drift_gives_zero_coupling(ctx):
    from mfosc.model import ModelSpec, custom_field

    m = ctx.model
    zero = ModelSpec(d=2, k=m.k, sigma=m.sigma, delta=0.05,
                     drift=custom_field(lambda x: np.zeros_like(x)))
    zctx = GalerkinContext(zero, ctx.cfg)
    st = zctx.stationary_state([0.4, -0.1])
    G1, G2 = zctx.rhs(st.coeffs, st.mean)
    assert np.all(G1 == 0.0) and np.all(G2 == 0.0)


def test_stationary_profile_is_a_rest_state_without_coupling(ctx0):
    st = ctx0.stationary_state([0.3, -0.2])
    out, _ = flow(st, 1.5, ctx0)
    assert np.abs(out.coeffs - st.coeffs).max() <= 1e-14
    assert np.array_equal(out.mean, st.mean)


def test_single_mode_decays_at_its_exponent(ctx0):
    idx = ctx0.basis.index_of((2, 1))
    c = ctx0.stationary_coeffs()
    c[idx] = 0.5
    out = step(CenteredState(c, np.zeros(2)), ctx0, 0.02)
    assert abs(out.coeffs[idx] - 0.5 * np.exp(-ctx0.lam[idx] * 0.02)) <= 1e-12


def test_step_richardson_order(ctx):
    rng = np.random.default_rng(1)
    st = random_state(ctx, rng)
    diffs = []
    for dt in (0.08, 0.04, 0.02):
        one = step(st.copy(), ctx, dt)
        half = step(step(st.copy(), ctx, dt / 2), ctx, dt / 2)
        diffs.append(np.abs(one.coeffs - half.coeffs).max() + np.abs(one.mean - half.mean).max())
    orders = np.log2(np.array(diffs[:-1]) / np.array(diffs[1:]))
    assert np.all(orders >= 1.9)


def test_flow_zero_horizon_is_identity(ctx):
    rng = np.random.default_rng(2)
    st = random_state(ctx, rng)
    out, _ = flow(st, 0.0, ctx)
    assert np.array_equal(out.coeffs, st.coeffs)


def test_flow_temporal_self_convergence_order():
    m = fhn_model(delta=0.05)
    rng = np.random.default_rng(3)
    base = GalerkinContext(m, SolverConfig(dt=0.00125, trunc=8))
    st = random_state(base, rng)
    ref, _ = flow(st.copy(), 2.0, base)
    errs = []
    for dt in (0.04, 0.02, 0.01):
        c = GalerkinContext(m, SolverConfig(dt=dt, trunc=8))
        out, _ = flow(st.copy(), 2.0, c)
        errs.append(np.abs(out.coeffs - ref.coeffs).max() + np.abs(out.mean - ref.mean).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 1.8) & (orders <= 2.2))


def test_relaxation_to_profile_without_coupling(ctx0):
    # generic mass-one start collapses onto the stationary profile at least
    # at the slowest mode rate
    rng = np.random.default_rng(4)
    st = random_state(ctx0, rng, amp=0.05)
    rho = ctx0.stationary_coeffs()
    d0 = ctx0.density_norm(st.coeffs - rho)
    kmin = float(np.min(ctx0.model.k))
    for T in (1.0, 2.0, 4.0):
        out, _ = flow(st.copy(), T, ctx0)
        dT = ctx0.density_norm(out.coeffs - rho)
        assert dT <= 1.05 * np.exp(-0.99 * kmin * T) * d0


def test_mass_conserved_over_long_run(ctx):
    rng = np.random.default_rng(5)
    st = random_state(ctx, rng)
    for _ in range(2000):
        st = step(st, ctx)
    assert abs(ctx.mass(st.coeffs) - 1.0) == 0.0


def test_mean_tracks_reduced_dynamics_for_small_delta():
    # FROZEN C = 2.5: sup-difference per delta measured ~0.9 * delta
    m = fhn_model(delta=0.05)
    ctx = GalerkinContext(m, SolverConfig(dt=0.02, trunc=10, sample_stride=100))
    rf = ReducedFlow(m, quad_order=8, rescaled=False, dt=0.02)
    m0 = np.array([0.5, 0.0])
    _, traj = flow(ctx.stationary_state(m0), 120.0, ctx, record=True)
    z = m0.copy()
    prev = 0.0
    worst = 0.0
    for t, mean in zip(traj.t, traj.mean):
        if t > prev:
            z = rf.integrate(z, t - prev)
            prev = t
        worst = max(worst, float(np.max(np.abs(mean - z))))
    assert worst <= 2.5 * m.delta


def test_tangent_flow_matches_directional_difference(ctx):
    rng = np.random.default_rng(6)
    st = random_state(ctx, rng)
    tan = random_tangent(ctx, rng)
    h = 1e-5
    plus, _ = flow(CenteredState(st.coeffs + h * tan.eta, st.mean + h * tan.n), 1.0, ctx)
    minus, _ = flow(CenteredState(st.coeffs - h * tan.eta, st.mean - h * tan.n), 1.0, ctx)
    out = tangent_flow(st, tan, 1.0, ctx)
    assert np.abs((plus.coeffs - minus.coeffs) / (2 * h) - out.eta).max() <= 1e-5
    assert np.abs((plus.mean - minus.mean) / (2 * h) - out.n).max() <= 1e-5
    assert abs(out.eta[0]) <= 1e-13


def test_tangent_zero_stays_zero(ctx):
    rng = np.random.default_rng(7)
    st = random_state(ctx, rng)
    out = tangent_flow(st, TangentState(np.zeros(ctx.n_coeff), np.zeros(2)), 0.5, ctx)
    assert np.all(out.eta == 0.0) and np.all(out.n == 0.0)


def test_tangent_mass_contract_enforced(ctx):
    st = ctx.stationary_state([0.0, 0.0])
    bad = TangentState(np.ones(ctx.n_coeff), np.zeros(2))
    with pytest.raises(ContractViolationError):
        tangent_flow(st, bad, 0.1, ctx)


def test_pure_density_tangent_decays_without_coupling(ctx0):
    idx = ctx0.basis.index_of((1, 1))
    eta = np.zeros(ctx0.n_coeff)
    eta[idx] = 1.0
    st = ctx0.stationary_state([0.0, 0.0])
    out = tangent_flow(st, TangentState(eta, np.zeros(2)), 0.8, ctx0)
    assert out.eta[idx] == pytest.approx(np.exp(-ctx0.lam[idx] * 0.8), rel=1e-12)
    assert np.all(out.n == 0.0)


def test_second_variation_symmetry_and_bilinearity(ctx):
    rng = np.random.default_rng(8)
    st = random_state(ctx, rng)
    t1 = random_tangent(ctx, rng)
    t2 = random_tangent(ctx, rng)
    a = second_variation(st, t1, t2, 0.5, ctx)
    b = second_variation(st, t2, t1, 0.5, ctx)
    assert np.abs(a.eta - b.eta).max() <= 1e-12
    assert np.abs(a.n - b.n).max() <= 1e-12
    zero = second_variation(st, TangentState(np.zeros(ctx.n_coeff), np.zeros(2)), t2, 0.5, ctx)
    assert np.all(zero.eta == 0.0) and np.all(zero.n == 0.0)


def test_second_variation_matches_four_point_stencil(ctx):
    rng = np.random.default_rng(9)
    st = random_state(ctx, rng)
    t1 = random_tangent(ctx, rng)
    t2 = random_tangent(ctx, rng)
    h = 1e-3
    T = 1.0

    def fl(sc, sm):
        out, _ = flow(CenteredState(st.coeffs + sc, st.mean + sm), T, ctx)
        return out

    pp = fl(h * (t1.eta + t2.eta), h * (t1.n + t2.n))
    pm = fl(h * (t1.eta - t2.eta), h * (t1.n - t2.n))
    mp = fl(-h * (t1.eta - t2.eta), -h * (t1.n - t2.n))
    mm = fl(-h * (t1.eta + t2.eta), -h * (t1.n + t2.n))
    d2c = (pp.coeffs - pm.coeffs - mp.coeffs + mm.coeffs) / (4 * h * h)
    d2m = (pp.mean - pm.mean - mp.mean + mm.mean) / (4 * h * h)
    out = second_variation(st, t1, t2, T, ctx)
    assert np.abs(d2c - out.eta).max() <= 1e-4
    assert np.abs(d2m - out.n).max() <= 1e-4


def test_derivative_couplings_match_differences_many_states(ctx):
    rng = np.random.default_rng(10)
    h = 1e-5
    hh = 1e-3
    for _ in range(50):
        st = random_state(ctx, rng)
        t1 = random_tangent(ctx, rng)
        t2 = random_tangent(ctx, rng)
        G1p, G2p = ctx.rhs(st.coeffs + h * t1.eta, st.mean + h * t1.n)
        G1m, G2m = ctx.rhs(st.coeffs - h * t1.eta, st.mean - h * t1.n)
        DG1, DG2 = ctx.linearized_rhs(st.coeffs, st.mean, t1.eta, t1.n)
        assert np.abs((G1p - G1m) / (2 * h) - DG1).max() <= 1e-6
        assert np.abs((G2p - G2m) / (2 * h) - DG2).max() <= 1e-6
        Gpp = ctx.rhs(st.coeffs + hh * (t1.eta + t2.eta), st.mean + hh * (t1.n + t2.n))
        Gpm = ctx.rhs(st.coeffs + hh * (t1.eta - t2.eta), st.mean + hh * (t1.n - t2.n))
        Gmp = ctx.rhs(st.coeffs - hh * (t1.eta - t2.eta), st.mean - hh * (t1.n - t2.n))
        Gmm = ctx.rhs(st.coeffs - hh * (t1.eta + t2.eta), st.mean - hh * (t1.n + t2.n))
        D2G1, D2G2 = ctx.second_rhs(st.coeffs, st.mean, t1.eta, t1.n, t2.eta, t2.n)
        assert np.abs((Gpp[0] - Gpm[0] - Gmp[0] + Gmm[0]) / (4 * hh * hh) - D2G1).max() <= 1e-4
        assert np.abs((Gpp[1] - Gpm[1] - Gmp[1] + Gmm[1]) / (4 * hh * hh) - D2G2).max() <= 1e-4


def test_linearized_mean_rate_at_profile_is_effective_jacobian(ctx):
    mvec = np.array([-0.8, -0.47])
    for n in (np.array([1.0, 0.0]), np.array([0.3, -1.2])):
        _, DG2 = ctx.linearized_rhs(ctx.stationary_coeffs(), mvec, np.zeros(ctx.n_coeff), n)
        J = effective_jacobian(mvec, ctx.model, 20)
        assert np.abs(DG2 - J @ n).max() <= 1e-12


def test_local_lipschitz_constant_stable_under_refinement():
    # ||G(mu) - G(mu')||_{-(r+1)} <= L ||mu - mu'||_{-r} on a bounded set;
    # the fitted L varies mildly with the truncation
    m = fhn_model(delta=0.05)
    rng = np.random.default_rng(11)

    def fit_L(trunc):
        c = GalerkinContext(m, SolverConfig(dt=0.02, trunc=trunc))
        r = c.cfg.r_norm
        worst = 0.0
        for _ in range(40):
            s1 = random_state(c, rng, amp=0.05)
            s2 = random_state(c, rng, amp=0.05)
            if c.state_norm(s1.coeffs, s1.mean, r) > 2 or c.state_norm(s2.coeffs, s2.mean, r) > 2:
                continue
            G1a, G2a = c.rhs(s1.coeffs, s1.mean)
            G1b, G2b = c.rhs(s2.coeffs, s2.mean)
            dG = c.state_norm(G1a - G1b, G2a - G2b, r + 1.0)
            dmu = c.state_norm(s1.coeffs - s2.coeffs, s1.mean - s2.mean, r)
            if dmu > 1e-12:
                worst = max(worst, dG / dmu)
        return worst

    L8 = fit_L(8)
    L12 = fit_L(12)
    assert L8 > 0 and L12 > 0
    assert 0.5 <= L12 / L8 <= 2.0


def test_instability_guard_raises(ctx):
    c = ctx.stationary_coeffs()
    c[1:] += 1e11
    with pytest.raises(NumericalInstabilityError, match="dt"):
        st = CenteredState(c, np.array([50.0, 0.0]))
        for _ in range(50):
            st = step(st, ctx, 0.5)


def test_flow_many_matches_individual_flows(ctx):
    rng = np.random.default_rng(12)
    states = [random_state(ctx, rng) for _ in range(3)]
    C = np.stack([s.coeffs for s in states], axis=1)
    M = np.stack([s.mean for s in states], axis=1)
    C1, M1 = flow_many(C, M, 0.7, ctx)
    for i, s in enumerate(states):
        out, _ = flow(s, 0.7, ctx)
        assert np.abs(out.coeffs - C1[:, i]).max() <= 1e-13
        assert np.abs(out.mean - M1[:, i]).max() <= 1e-13


def test_positivity_report_on_profile(ctx):
    st = ctx.stationary_state([0.0, 0.0])
    assert ctx.positivity_report(st) >= 0.0


def test_state_norm_in_weaker_weight(ctx):
    # the solver's weight-1 coefficients re-expressed at theta = 0.5 give a
    # finite dual norm computable by the generic machinery
    st = ctx.stationary_state([0.0, 0.0])
    sc = ctx.spectral(st.coeffs)
    re = reweight_distribution(sc, 0.5)
    val = sobolev_norm(re, SobolevParams(2.0, 0.5))
    assert np.isfinite(val) and val > 0


def test_trajectory_and_checkpoint_artifacts(ctx):
    rng = np.random.default_rng(13)
    st = random_state(ctx, rng)
    out, traj = flow(st, 0.2, ctx, record=True, keep_coeffs=True)
    text = trajectory_csv(traj, 2, meta="run=test")
    header = [ln for ln in text.splitlines() if not ln.startswith("#")][0]
    assert header.startswith("t,m_1,m_2,mass,dualnorm_p_minus_rho,c_0")
    assert "# run=test" in text

    chk = checkpoint_csv(out, ctx, meta="run=test")
    state2, sc = checkpoint_load(chk)
    assert state2.t == pytest.approx(out.t, abs=1e-12)
    assert np.allclose(state2.coeffs, out.coeffs, atol=1e-12)
    assert np.allclose(state2.mean, out.mean, atol=1e-12)
