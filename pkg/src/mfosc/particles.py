"""Euler-Maruyama simulator for the N-particle mean-field system.

Each particle feels the local drift scaled by delta, a linear pull toward
the instantaneous empirical mean with rate matrix K, and additive noise of
intensity sqrt(2) sigma.  Randomness comes from a counter-based generator
(Philox 4x64) keyed by the seed with the step index placed in the counter
block, and Gaussians are produced by Box-Muller on the uniform stream, so
trajectories are bit-reproducible across platforms and independent of any
worker pool.  Mean reductions use numpy's fixed-order pairwise summation.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .hermite import DISTRIBUTION_SIDE, HermiteBasis, SpectralCoeffs
from .model import ModelSpec

RNG_ALGORITHM = "philox4x64+box-muller"


class ParticleBlowupError(RuntimeError):
    def __init__(self, index: int, t: float):
        super().__init__(f"particle {index} exceeded the position guard at t={t:.6g}")
        self.index = index
        self.t = t


@dataclass
class SimConfig:
    N: int
    h: float
    seed: int
    horizon: float

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("step size h must be positive")
        if self.N < 1:
            raise ValueError("need at least one particle")


@dataclass
class Ensemble:
    """Particle positions plus the deterministic RNG cursor."""

    positions: np.ndarray
    t: float
    seed: int
    counter: int
    algorithm: str = RNG_ALGORITHM

    def copy(self) -> "Ensemble":
        return Ensemble(self.positions.copy(), self.t, self.seed, self.counter, self.algorithm)


def _step_gaussians(seed: int, counter: int, shape) -> np.ndarray:
    """Standard normals for one step: fresh Philox counter block + Box-Muller."""
    bits = np.random.Philox(key=seed, counter=[0, 0, counter, 0])
    gen = np.random.Generator(bits)
    u1 = 1.0 - gen.random(shape)  # in (0, 1], keeps the log finite
    u2 = gen.random(shape)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def init_ensemble(model: ModelSpec, N: int, seed: int, mean=None) -> Ensemble:
    """Particles drawn from the stationary Gaussian profile around `mean`.

    The draw consumes counter block 0; stepping starts at block 1.
    """
    mean = np.zeros(model.d) if mean is None else np.asarray(mean, dtype=float)
    z = _step_gaussians(seed, 0, (N, model.d))
    std = np.sqrt(model.sigma ** 2 / model.k)
    return Ensemble(mean + z * std, 0.0, seed, 1)


def empirical_mean(e: Ensemble) -> np.ndarray:
    """Arithmetic mean of the particle positions (pairwise summation)."""
    return np.mean(e.positions, axis=0)


def center(e: Ensemble) -> Ensemble:
    """Subtract the empirical mean from every particle."""
    out = e.copy()
    out.positions = out.positions - empirical_mean(e)
    return out


def em_step(e: Ensemble, model: ModelSpec, h: float) -> Ensemble:
    """One Euler-Maruyama step; the empirical mean is recomputed once from
    the pre-step positions."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    m = empirical_mean(e)
    noise = _step_gaussians(e.seed, e.counter, e.positions.shape)
    drift = model.delta * model.drift.fun(e.positions) - (e.positions - m) * model.k
    new = e.positions + h * drift + np.sqrt(2.0 * h) * model.sigma * noise
    bad = np.abs(new) > 1e8
    if bad.any():
        idx = int(np.flatnonzero(bad.any(axis=1))[0])
        raise ParticleBlowupError(idx, e.t + h)
    return Ensemble(new, e.t + h, e.seed, e.counter + 1, e.algorithm)


@dataclass
class ParticleTrajectory:
    t: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    snapshots: list | None = None


def simulate(
    model: ModelSpec,
    sim: SimConfig,
    init_mean=None,
    record_stride: int = 1,
    keep_snapshots: bool = False,
) -> tuple[Ensemble, ParticleTrajectory]:
    """Run the particle system to the horizon, recording empirical summary
    statistics every record_stride steps."""
    e = init_ensemble(model, sim.N, sim.seed, init_mean)
    n_steps = int(round(sim.horizon / sim.h))
    ts, means, variances, snaps = [], [], [], []

    def record(e):
        ts.append(e.t)
        means.append(empirical_mean(e))
        variances.append(np.var(e.positions, axis=0))
        if keep_snapshots:
            snaps.append(e.positions.copy())

    record(e)
    for i in range(n_steps):
        e = em_step(e, model, sim.h)
        if (i + 1) % record_stride == 0:
            record(e)
    traj = ParticleTrajectory(
        np.array(ts), np.array(means), np.array(variances), snaps if keep_snapshots else None
    )
    return e, traj


def empirical_spectral(e_centered: Ensemble, theta: float, trunc: int, model: ModelSpec) -> SpectralCoeffs:
    """Flat pairing of the empirical measure with the weighted Hermite basis:
    c_l = (1/N) sum_i psi_l(Y_i).

    Evaluation is chunked so million-particle ensembles stay in memory.
    """
    basis = HermiteBasis(model.d, theta, model.k, model.sigma, trunc)
    Y = e_centered.positions
    acc = np.zeros(basis.n_coeff)
    chunk = 65536
    for start in range(0, len(Y), chunk):
        block = basis.eval_matrix(Y[start : start + chunk])
        acc += block.sum(axis=0)
    return SpectralCoeffs(basis, DISTRIBUTION_SIDE, acc / len(Y))


def trajectory_csv(traj: ParticleTrajectory, d: int, meta: str = "") -> str:
    buf = io.StringIO()
    if meta:
        for line in meta.strip().splitlines():
            buf.write(f"# {line}\n")
    cols = ["t"] + [f"m_{j + 1}" for j in range(d)] + [f"var_{j + 1}" for j in range(d)]
    buf.write(",".join(cols) + "\n")
    for i in range(len(traj.t)):
        row = [traj.t[i], *traj.mean[i], *traj.variance[i]]
        buf.write(",".join(f"{v:.11e}" for v in row) + "\n")
    return buf.getvalue()


def snapshots_csv(traj: ParticleTrajectory, d: int) -> str:
    """Per-particle dump at the sampled times (one row per particle)."""
    if traj.snapshots is None:
        raise ValueError("trajectory was recorded without snapshots")
    buf = io.StringIO()
    buf.write("t,particle," + ",".join(f"x_{j + 1}" for j in range(d)) + "\n")
    for t, snap in zip(traj.t, traj.snapshots):
        for i, row in enumerate(snap):
            buf.write(f"{t:.11e},{i}," + ",".join(f"{v:.11e}" for v in row) + "\n")
    return buf.getvalue()


def metadata_sidecar(model: ModelSpec, sim: SimConfig) -> str:
    return json.dumps(
        {
            "rng_algorithm": RNG_ALGORITHM,
            "seed": sim.seed,
            "N": sim.N,
            "h": sim.h,
            "horizon": sim.horizon,
            "delta": model.delta,
            "k": list(model.k),
            "sigma": list(model.sigma),
            "drift": model.drift.kind,
            "drift_params": {k: v for k, v in model.drift.params.items()},
        },
        indent=2,
        sort_keys=True,
    )
