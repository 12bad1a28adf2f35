import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfosc.model import fhn_model
from mfosc.particles import (
    Ensemble,
    ParticleBlowupError,
    SimConfig,
    center,
    em_step,
    empirical_mean,
    empirical_spectral,
    init_ensemble,
    metadata_sidecar,
    simulate,
    trajectory_csv,
)

C0 = (2.0 * np.pi) ** -0.25


def stub_model(k, sigma, delta, fun):
    """Duck-typed stand-in allowing degenerate k/sigma in update-rule tests."""
    return SimpleNamespace(
        d=1, k=np.asarray(k, float), sigma=np.asarray(sigma, float), delta=delta,
        drift=SimpleNamespace(fun=fun),
    )


def test_pure_mean_reversion_step():
    # delta = 0, no noise, unit rate: positions contract toward the mean
    m = stub_model([1.0], [0.0], 0.0, lambda x: np.zeros_like(x))
    e = Ensemble(np.array([[1.0], [-1.0]]), 0.0, seed=0, counter=1)
    out = em_step(e, m, 0.01)
    assert np.allclose(out.positions, [[0.99], [-0.99]], atol=1e-15)


def test_decoupled_step_is_plain_euler():
    m = stub_model([0.0], [0.0], 1.0, lambda x: -(x ** 3))
    e = Ensemble(np.array([[2.0], [0.5]]), 0.0, seed=0, counter=1)
    out = em_step(e, m, 0.1)
    assert np.allclose(out.positions, e.positions + 0.1 * -(e.positions ** 3), atol=1e-15)


def test_single_particle_feels_no_interaction():
    m = stub_model([5.0], [0.0], 0.0, lambda x: np.zeros_like(x))
    e = Ensemble(np.array([[3.0]]), 0.0, seed=0, counter=1)
    out = em_step(e, m, 0.05)
    assert np.array_equal(out.positions, e.positions)


def test_empirical_mean_basics():
    e = Ensemble(np.array([[1.0, 2.0], [-1.0, -2.0]]), 0.0, 0, 0)
    assert np.array_equal(empirical_mean(e), [0.0, 0.0])
    single = Ensemble(np.array([[0.3, -0.7]]), 0.0, 0, 0)
    assert np.array_equal(empirical_mean(single), [0.3, -0.7])


def test_empirical_mean_clt_band():
    model = fhn_model(ratio1=1.0, ratio2=1.0)
    e = init_ensemble(model, 10 ** 6, seed=3)
    assert np.abs(empirical_mean(e)).max() <= 5.0 / np.sqrt(10 ** 6)


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 40))
@settings(max_examples=25, deadline=None)
def test_center_properties(seed, n):
    rng = np.random.default_rng(seed)
    e = Ensemble(rng.standard_normal((n, 2)) * 3.0, 0.0, 0, 0)
    c = center(e)
    assert np.abs(empirical_mean(c)).max() <= 1e-13
    cc = center(c)
    assert np.abs(cc.positions - c.positions).max() <= 1e-13


def test_center_exact_example():
    e = Ensemble(np.array([[2.0], [4.0]]), 0.0, 0, 0)
    assert np.array_equal(center(e).positions, [[-1.0], [1.0]])


def test_bitwise_determinism():
    model = fhn_model(delta=0.05)
    sim = SimConfig(N=400, h=0.01, seed=99, horizon=2.0)
    e1, t1 = simulate(model, sim)
    e2, t2 = simulate(model, sim)
    assert np.array_equal(e1.positions, e2.positions)
    assert np.array_equal(t1.mean, t2.mean)
    # a different seed decorrelates
    e3, _ = simulate(model, SimConfig(N=400, h=0.01, seed=100, horizon=2.0))
    assert not np.array_equal(e1.positions, e3.positions)


def test_centered_variance_equilibrates_without_coupling():
    model = fhn_model(delta=0.0, ratio1=0.2, ratio2=0.3)
    _, traj = simulate(model, SimConfig(N=20000, h=0.01, seed=7, horizon=5.0), record_stride=100)
    target = model.ratio
    band = 3.0 * target * np.sqrt(2.0 / 20000)
    assert np.all(np.abs(traj.variance[-1] - target) <= band + 5e-3)


def test_weak_euler_bias_below_statistical_noise():
    model = fhn_model(delta=0.05)
    means_h, means_h2 = [], []
    for seed in range(6):
        e1, _ = simulate(model, SimConfig(N=2000, h=0.02, seed=seed, horizon=5.0))
        e2, _ = simulate(model, SimConfig(N=2000, h=0.01, seed=seed + 100, horizon=5.0))
        means_h.append(empirical_mean(e1))
        means_h2.append(empirical_mean(e2))
    gap = np.linalg.norm(np.mean(means_h, axis=0) - np.mean(means_h2, axis=0))
    spread = np.std(means_h, axis=0).max() / np.sqrt(6)
    assert gap <= 5.0 * spread + 1e-3


def test_empirical_spectral_single_particle_at_origin():
    model = fhn_model(ratio1=1.0, ratio2=1.0)
    e = Ensemble(np.zeros((1, 2)), 0.0, 0, 0)
    sc = empirical_spectral(e, 1.0, 4, model)
    b = sc.basis
    assert sc.coeffs[b.index_of((1, 0))] == 0.0
    assert sc.coeffs[b.index_of((2, 0))] == pytest.approx(-C0 ** 2 / np.sqrt(2.0), abs=1e-15)
    assert sc.coeffs[b.index_of((0, 0))] == pytest.approx(C0 ** 2, abs=1e-15)


def test_empirical_spectral_of_stationary_samples():
    model = fhn_model(delta=0.0, ratio1=0.2, ratio2=0.2)
    e = init_ensemble(model, 200000, seed=11)
    sc = empirical_spectral(center(e), 1.0, 6, model)
    assert sc.coeffs[0] == pytest.approx(sc.basis.constant_value(), abs=1e-12)
    # higher pairings vanish at Monte-Carlo rate
    assert np.abs(sc.coeffs[1:]).max() <= 6.0 / np.sqrt(200000)


def test_empirical_spectral_matches_quadrature_moments():
    # the sampled pairings approach the analytic profile pairings
    model = fhn_model(delta=0.0, ratio1=0.2, ratio2=0.2)
    e = init_ensemble(model, 10 ** 6, seed=13)
    sc = empirical_spectral(center(e), 0.5, 4, model)
    from mfosc.hermite import gauss_hermite_nodes, hermite_eval

    y, w = gauss_hermite_nodes(40)
    b = sc.basis
    std = np.sqrt(model.ratio)
    for pos, l in enumerate(b.indices):
        exact = b.norm_const
        for j in range(2):
            exact *= np.sum(w * hermite_eval(int(l[j]), b.scale[j] * std[j] * y))
        assert abs(sc.coeffs[pos] - exact) <= 1e-2


def test_blowup_reports_particle_index():
    m = stub_model([0.0], [0.0], 1.0, lambda x: x ** 3)
    e = Ensemble(np.array([[1.0], [300.0]]), 0.0, 0, 1)
    with pytest.raises(ParticleBlowupError) as exc:
        out = e
        for _ in range(40):
            out = em_step(out, m, 0.5)
    assert exc.value.index == 1


def test_trajectory_csv_and_sidecar():
    model = fhn_model(delta=0.05)
    sim = SimConfig(N=50, h=0.01, seed=5, horizon=0.1)
    _, traj = simulate(model, sim, record_stride=5)
    text = trajectory_csv(traj, 2, meta="case=x")
    lines = text.splitlines()
    assert lines[0] == "# case=x"
    assert lines[1] == "t,m_1,m_2,var_1,var_2"
    meta = json.loads(metadata_sidecar(model, sim))
    assert meta["seed"] == 5 and meta["N"] == 50
    assert "philox" in meta["rng_algorithm"]
