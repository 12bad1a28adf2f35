"""Acceptance verification suite.

Each criterion is a self-contained check with pinned tolerances; the suite
caches the expensive shared artifacts (reduced cycle, Floquet frames, the
spectral cycle and its monodromy) so a full run stays within the stated
budgets.  The physics always runs at the standard excitable parameter set
(a = 1/3, b = 1, c = 10, variance ratio 0.2, delta = 0.05); the supplied
configuration only steers output handling.

Frozen constants: a handful of checks compare against fitted constants
(marked FROZEN below) that were measured once with the independent oracle
of the corresponding test and then fixed with headroom.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .model import (
    effective_drift,
    effective_drift_fhn_closed,
    effective_jacobian,
    fhn_model,
)
from .orbit import (
    FloquetData,
    LimitCycle,
    ReducedFlow,
    check_approximate_invariance,
    find_cycle_pde,
    find_cycle_reduced,
    find_fixed_point,
    floquet_frames,
    floquet_reduced,
    pde_monodromy,
    pde_time_derivative,
    spectral_gap_horizon,
)
from .pde import CenteredState, GalerkinContext, SolverConfig, flow, step

PAPER_A, PAPER_B, PAPER_C, PAPER_RATIO = 1.0 / 3.0, 1.0, 10.0, 0.2
STANDARD_DELTA = 0.05

# FROZEN: measured 7.5 at delta = 0.05 and 7.9 at 0.025 (pde-vs-reduced sup
# mean error over one full period, divided by delta; the transit through the
# fast segments dominates); asserted with headroom
THREE_WAY_C = 12.0
# FROZEN: measured 0.38 (Hausdorff distance of spectral-cycle means to the
# reduced cycle, divided by delta, truncation 16); asserted with headroom
CYCLE_DISTANCE_C = 2.0


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    runtime_s: float
    measured: dict
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        bits = []
        for k, v in self.measured.items():
            if isinstance(v, float):
                bits.append(f"{k}={v:.3e}")
            else:
                bits.append(f"{k}={v}")
        extra = f" [{self.detail}]" if self.detail else ""
        return f"[{status}] criterion {self.number} ({self.name}): " + ", ".join(bits) + \
               f" ({self.runtime_s:.1f} s){extra}"


def _wrap(number, name, budget_s):
    def deco(fn):
        def run(self) -> CriterionResult:
            t0 = time.time()
            measured, passed, detail = fn(self)
            dt = time.time() - t0
            measured["runtime_budget_s"] = budget_s
            if dt >= budget_s:
                passed = False
                detail = (detail + "; " if detail else "") + f"runtime {dt:.1f}s over budget {budget_s}s"
            return CriterionResult(number, name, passed, dt, measured, detail)

        run._criterion = number
        return run

    return deco


class VerificationSuite:
    """Runs the acceptance criteria against the standard excitable model."""

    def __init__(self, cfg: RunConfig | None = None, seed: int = 2024):
        self.cfg = cfg or RunConfig()
        self.seed = seed
        self.model = fhn_model(a=PAPER_A, b=PAPER_B, c=PAPER_C, ratio1=PAPER_RATIO,
                               ratio2=PAPER_RATIO, delta=STANDARD_DELTA)
        self._cache: dict = {}

    # --- shared artifacts -------------------------------------------------

    def reduced_cycle(self) -> LimitCycle:
        if "cycle" not in self._cache:
            search = find_cycle_reduced((0.0, 1.0), self.model, dt=2e-3, transient=200.0, probe=80.0)
            if not search.found:
                raise RuntimeError("standard parameters unexpectedly produced no cycle")
            self._cache["cycle"] = search.cycle
        return self._cache["cycle"]

    def reduced_floquet(self) -> FloquetData:
        if "floquet" not in self._cache:
            self._cache["floquet"] = floquet_reduced(self.reduced_cycle(), self.model)
        return self._cache["floquet"]

    def frames(self):
        if "frames" not in self._cache:
            self._cache["frames"] = floquet_frames(self.reduced_cycle(), self.model)
        return self._cache["frames"]

    def pde_cycle16(self):
        if "pde16" not in self._cache:
            ctx = GalerkinContext(self.model, SolverConfig(dt=0.05, trunc=16, r_norm=2.0))
            cycle = find_cycle_pde(ctx, self.reduced_cycle(), tol=1e-6, n_samples=64)
            self._cache["pde16"] = (ctx, cycle)
        return self._cache["pde16"]

    def pde_cycle12(self):
        if "pde12" not in self._cache:
            ctx = GalerkinContext(self.model, SolverConfig(dt=0.1, trunc=12, r_norm=2.0))
            cycle = find_cycle_pde(ctx, self.reduced_cycle(), tol=1e-6, n_samples=64)
            fd = pde_monodromy(cycle, ctx)
            self._cache["pde12"] = (ctx, cycle, fd)
        return self._cache["pde12"]

    # --- criteria ----------------------------------------------------------

    @_wrap(1, "effective-drift-oracle", 5.0)
    def criterion_1(self):
        grid = np.linspace(-3.0, 3.0, 101)
        Z = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1).reshape(-1, 2)
        quad = effective_drift(Z, self.model, quad_order=20)
        closed = effective_drift_fhn_closed(Z, PAPER_A, PAPER_B, PAPER_C, PAPER_RATIO)
        err = float(np.max(np.abs(quad - closed)))
        return {"max_abs_err": err, "tol": 1e-10}, err <= 1e-10, ""

    @_wrap(2, "excitability-dichotomy", 30.0)
    def criterion_2(self):
        measured = {}
        ok = True
        # no noise in the first coordinate: unique stable rest point
        m0 = fhn_model(a=PAPER_A, b=PAPER_B, c=PAPER_C, ratio1=0.0, ratio2=PAPER_RATIO,
                       delta=STANDARD_DELTA)
        s0 = find_cycle_reduced((0.0, 1.0), m0, dt=2e-3, transient=150.0, probe=40.0)
        ok &= not s0.found and s0.fixed_point is not None
        if s0.fixed_point is not None:
            fp_err = float(np.max(np.abs(s0.fixed_point - np.array([-1.0, -2.0 / 3.0]))))
            J = effective_jacobian(s0.fixed_point, m0, 20)
            measured["fp0_err"] = fp_err
            measured["fp0_trace"] = float(np.trace(J))
            measured["fp0_det"] = float(np.linalg.det(J))
            ok &= fp_err <= 1e-6
            ok &= abs(np.trace(J) + 0.1) <= 1e-6 and abs(np.linalg.det(J) - 0.1) <= 1e-6
        # standard ratio: a cycle surrounds an unstable interior rest point
        cycle = self.reduced_cycle()
        measured["period"] = cycle.period
        # oracle: the real root of z^3 + 0.6 z + 1 = 0 and the closed-form jacobian
        roots = np.roots([1.0, 0.0, 3.0 * PAPER_RATIO, 1.0])
        z1 = float(np.real(roots[np.argmin(np.abs(np.imag(roots)))]))
        fp_oracle = np.array([z1, z1 + PAPER_A])
        fp = find_fixed_point(fp_oracle + 0.01, self.model)
        J = effective_jacobian(fp, self.model, 20)
        measured["fp_int_err"] = float(np.max(np.abs(fp - fp_oracle)))
        measured["fp_int_trace"] = float(np.trace(J))
        ok &= measured["fp_int_err"] <= 1e-6
        ok &= abs(np.trace(J) - 0.0549) <= 1e-3 and np.trace(J) > 0
        return measured, bool(ok), ""

    @_wrap(3, "floquet-structure", 30.0)
    def criterion_3(self):
        fd = self.reduced_floquet()
        mults = fd.multipliers
        i1 = int(np.argmin(np.abs(mults - 1.0)))
        mu2 = np.abs(np.delete(mults, i1)).max()
        I = np.eye(2)
        res_proj = max(
            float(np.abs(fd.Pc @ fd.Pc - fd.Pc).max()),
            float(np.abs(fd.Ps @ fd.Ps - fd.Ps).max()),
            float(np.abs(fd.Pc + fd.Ps - I).max()),
        )
        res_comm = float(np.abs(fd.Pc @ fd.monodromy - fd.monodromy @ fd.Pc).max())
        liouville = abs(fd.extras["det_monodromy"] - np.exp(fd.extras["liouville_exponent"]))
        measured = {
            "mult1_err": float(abs(mults[i1] - 1.0)),
            "mult2_mod": float(mu2),
            "projection_residual": res_proj,
            "commutation_residual": res_comm,
            "liouville_err": float(liouville),
        }
        ok = (
            measured["mult1_err"] <= 1e-6
            and mu2 < 1.0
            and res_proj <= 1e-8
            and res_comm <= 1e-8
            and liouville <= 1e-6
        )
        return measured, bool(ok), ""

    @_wrap(4, "spectral-ou-calculus", 60.0)
    def criterion_4(self):
        from scipy.linalg import expm

        from .hermite import HermiteBasis, cross_weight_generator

        k = self.model.k
        sigma = self.model.sigma
        measured = {}
        ok = True
        # orthonormal Gram up to total degree 8 (use a generic weight)
        basis = HermiteBasis(2, 0.5, k, sigma, 8)
        nodes, w = basis.quadrature(12)
        B = basis.eval_matrix(nodes)
        gram_err = float(np.abs(B.T @ (w[:, None] * B) - np.eye(basis.n_coeff)).max())
        measured["gram_err"] = gram_err
        ok &= gram_err <= 1e-9
        # triangular cross-weight generators with exact spectra
        tri_ok, eig_ok = True, True
        for theta in (0.25, 0.5, 1.0):
            gen = cross_weight_generator(theta, 1.0, 8, k, sigma)
            M = gen.matrix
            tri_ok &= bool(np.all(M[np.tril_indices_from(M, -1)] == 0.0))
            expected = -np.array([1.0 * float(np.dot(k, l)) for l in gen.basis.indices])
            eig_ok &= bool(np.all(gen.eigenvalues == expected))
        measured["generator_triangular"] = tri_ok
        measured["spectrum_exact"] = eig_ok
        ok &= tri_ok and eig_ok
        # mean-zero decay rate of the weight-1 semigroup in weaker weights
        kmin = float(np.min(k))
        rng = np.random.default_rng(self.seed)
        ts = np.linspace(0.0, 5.0, 11)[1:]
        fit = ts >= 1.0
        worst_rate = np.inf
        r = 10.0
        for theta in (0.25, 0.5, 1.0):
            gen = cross_weight_generator(theta, 1.0, 12, k, sigma)
            wts = (gen.basis.a_theta + gen.basis.lam) ** (-r)
            props = [expm(t * gen.matrix).T for t in ts]
            for _ in range(100):
                c = rng.standard_normal(gen.basis.n_coeff)
                c[0] = 0.0
                norms = np.array([np.sqrt(np.sum(wts * (P @ c) ** 2)) for P in props])
                slope = np.polyfit(ts[fit], np.log(norms[fit]), 1)[0]
                worst_rate = min(worst_rate, -slope)
        measured["min_fitted_rate"] = float(worst_rate)
        measured["rate_floor"] = 0.99 * kmin
        ok &= worst_rate >= 0.99 * kmin
        return measured, bool(ok), ""

    @_wrap(5, "pde-solver", 300.0)
    def criterion_5(self):
        measured = {}
        ok = True
        ctx = GalerkinContext(self.model, SolverConfig(dt=1e-2, trunc=24))
        rng = np.random.default_rng(self.seed)
        # mass conservation over 1e4 steps from a perturbed profile
        c = ctx.stationary_coeffs()
        c[1:] += 1e-3 * rng.standard_normal(ctx.n_coeff - 1)
        state = CenteredState(c, np.array([0.0, 0.5]))
        for _ in range(10000):
            state = step(state, ctx)
        measured["mass_drift"] = float(abs(ctx.mass(state.coeffs) - 1.0))
        ok &= measured["mass_drift"] <= 1e-12
        # zero-coupling decay rates against the diagonal exponents
        m0 = replace(self.model, delta=0.0)
        ctx0 = GalerkinContext(m0, SolverConfig(dt=1e-3, trunc=24))
        c = ctx0.stationary_coeffs()
        c[1:] = 1.0
        st = CenteredState(c, np.zeros(2))
        times = [0.0]
        coeffs = [st.coeffs.copy()]
        for i in range(5000):
            st = step(st, ctx0)
            if (i + 1) % 250 == 0:
                times.append(st.t)
                coeffs.append(st.coeffs.copy())
        times = np.array(times)
        coeffs = np.abs(np.array(coeffs))
        rate_err = 0.0
        for idx in range(1, ctx0.n_coeff):
            lam = ctx0.lam[idx]
            keep = coeffs[:, idx] > 1e-250
            if keep.sum() < 3:
                continue
            slope = np.polyfit(times[keep], np.log(coeffs[keep, idx]), 1)[0]
            rate_err = max(rate_err, abs(-slope - lam) / lam)
        measured["decay_rate_rel_err"] = float(rate_err)
        ok &= rate_err <= 1e-3
        # derivative couplings against finite differences at full truncation
        dg_err, d2g_err = 0.0, 0.0
        for _ in range(5):
            c = ctx.stationary_coeffs()
            c[1:] += 0.01 * rng.standard_normal(ctx.n_coeff - 1)
            mvec = rng.standard_normal(2) * 0.5
            eta = 0.01 * rng.standard_normal(ctx.n_coeff)
            eta[0] = 0.0
            nv = 0.1 * rng.standard_normal(2)
            h = 1e-5
            G1p, G2p = ctx.rhs(c + h * eta, mvec + h * nv)
            G1m, G2m = ctx.rhs(c - h * eta, mvec - h * nv)
            DG1, DG2 = ctx.linearized_rhs(c, mvec, eta, nv)
            dg_err = max(
                dg_err,
                float(np.abs((G1p - G1m) / (2 * h) - DG1).max()),
                float(np.abs((G2p - G2m) / (2 * h) - DG2).max()),
            )
            eta2 = 0.01 * rng.standard_normal(ctx.n_coeff)
            eta2[0] = 0.0
            nv2 = 0.1 * rng.standard_normal(2)
            hh = 1e-3
            Gpp = ctx.rhs(c + hh * (eta + eta2), mvec + hh * (nv + nv2))
            Gpm = ctx.rhs(c + hh * (eta - eta2), mvec + hh * (nv - nv2))
            Gmp = ctx.rhs(c - hh * (eta - eta2), mvec - hh * (nv - nv2))
            Gmm = ctx.rhs(c - hh * (eta + eta2), mvec - hh * (nv + nv2))
            D2G1, D2G2 = ctx.second_rhs(c, mvec, eta, nv, eta2, nv2)
            d2g_err = max(
                d2g_err,
                float(np.abs((Gpp[0] - Gpm[0] - Gmp[0] + Gmm[0]) / (4 * hh * hh) - D2G1).max()),
                float(np.abs((Gpp[1] - Gpm[1] - Gmp[1] + Gmm[1]) / (4 * hh * hh) - D2G2).max()),
            )
        measured["dg_fd_err"] = dg_err
        measured["d2g_fd_err"] = d2g_err
        ok &= dg_err <= 1e-6 and d2g_err <= 1e-4
        return measured, bool(ok), "trunc=24"

    @_wrap(6, "three-way-consistency", 1200.0)
    def criterion_6(self):
        from .particles import SimConfig, empirical_mean, simulate

        measured = {}
        ok = True
        cycle = self.reduced_cycle()
        m0 = cycle.means[0].copy()
        errs = {}
        pde_mean_at_20 = None
        for delta in (STANDARD_DELTA, STANDARD_DELTA / 2.0):
            model_d = replace(self.model, delta=delta)
            ctx = GalerkinContext(model_d, SolverConfig(dt=0.02, trunc=12, sample_stride=50))
            horizon = cycle.period / delta

            rf = ReducedFlow(model_d, quad_order=8, rescaled=False, dt=0.02)
            state = ctx.stationary_state(m0)
            _, traj = flow(state, horizon, ctx, record=True)
            sup_err = 0.0
            z = m0.copy()
            prev_t = 0.0
            for i, t in enumerate(traj.t):
                if t > prev_t:
                    z = rf.integrate(z, t - prev_t)
                    prev_t = t
                sup_err = max(sup_err, float(np.max(np.abs(traj.mean[i] - z))))
                if delta == STANDARD_DELTA and pde_mean_at_20 is None and abs(t - 20.0) < 1e-9:
                    pde_mean_at_20 = traj.mean[i].copy()
            errs[delta] = sup_err
        slope = float(np.log2(errs[STANDARD_DELTA] / errs[STANDARD_DELTA / 2.0]))
        measured["sup_err_d05"] = errs[STANDARD_DELTA]
        measured["sup_err_d025"] = errs[STANDARD_DELTA / 2.0]
        measured["pde_reduced_slope"] = slope
        measured["C_bound"] = THREE_WAY_C
        ok &= errs[STANDARD_DELTA] <= THREE_WAY_C * STANDARD_DELTA
        ok &= errs[STANDARD_DELTA / 2.0] <= THREE_WAY_C * STANDARD_DELTA / 2.0
        ok &= 0.7 <= slope <= 1.3

        # particle means against the spectral mean at t = 20
        Ns = [1000, 4000, 16000]
        mean_errs = []
        for N in Ns:
            per_seed = []
            for s in range(8):
                sim = SimConfig(N=N, h=0.01, seed=self.seed + s, horizon=20.0)
                e, _ = simulate(self.model, sim, init_mean=m0, record_stride=10 ** 9)
                per_seed.append(np.linalg.norm(empirical_mean(e) - pde_mean_at_20))
            mean_errs.append(float(np.mean(per_seed)))
        slope_N = float(np.polyfit(np.log(Ns), np.log(mean_errs), 1)[0])
        measured["particle_errs"] = [round(float(v), 6) for v in mean_errs]
        measured["particle_slope"] = slope_N
        ok &= -0.65 <= slope_N <= -0.35
        return measured, bool(ok), ""

    @_wrap(7, "approximate-invariance", 1200.0)
    def criterion_7(self):
        frames = self.frames()
        tau = spectral_gap_horizon(frames)
        rep = check_approximate_invariance(
            self.model,
            SolverConfig(dt=0.05, trunc=10, r_norm=2.0),
            deltas=[0.1, 0.05, 0.025],
            tau=tau,
            frames=frames,
            reduced_cycle=self.reduced_cycle(),
            n_phases_defect=8,
            n_phases_blocks=2,
        )
        slope_cs, slope_sc = rep.cross_slopes
        measured = {
            "tau": rep.tau,
            "defect_slope": rep.defect_slope,
            "cross_cs_slope": slope_cs,
            "cross_sc_slope": slope_sc,
            "defects": [round(float(v), 6) for v in rep.defect],
        }
        ok = 0.8 <= rep.defect_slope <= 1.2 and 0.8 <= slope_cs <= 1.2 and 0.8 <= slope_sc <= 1.2
        self._cache["invariance"] = rep
        return measured, bool(ok), ""

    @_wrap(8, "pde-periodic-solution", 1800.0)
    def criterion_8(self):
        measured = {}
        ok = True
        ctx, cycle = self.pde_cycle16()
        tol = cycle.meta["tol"]
        # periodicity residual at stored phases
        res = 0.0
        for j in range(0, cycle.n_samples, cycle.n_samples // 8):
            st = CenteredState(cycle.coeffs[j].copy(), cycle.means[j].copy())
            out, _ = flow(st, cycle.period, ctx)
            res = max(res, ctx.distance(out, st))
        measured["periodicity_residual"] = float(res)
        ok &= res <= 10.0 * tol
        # means stay delta-close to the reduced cycle (segment Hausdorff)
        measured["means_hausdorff"] = _hausdorff_to_polyline(cycle.means, self.reduced_cycle().means)
        ok &= measured["means_hausdorff"] <= CYCLE_DISTANCE_C * STANDARD_DELTA
        # slow-time period consistency
        ratio = cycle.period * STANDARD_DELTA / self.reduced_cycle().period
        measured["period_ratio"] = float(ratio)
        ok &= abs(ratio - 1.0) <= 0.10
        # monodromy spectrum
        fd = pde_monodromy(cycle, ctx)
        mults = fd.multipliers
        i1 = int(np.argmin(np.abs(mults - 1.0)))
        others = np.abs(np.delete(mults, i1))
        measured["mult1_err"] = float(abs(mults[i1] - 1.0))
        measured["max_other_mult"] = float(others.max())
        measured["rate"] = fd.rate
        ok &= measured["mult1_err"] <= 1e-4 and bool(np.all(others < 1.0))
        # the cycle's density stays essentially nonnegative
        min_density = min(
            ctx.positivity_report(CenteredState(cycle.coeffs[j].copy(), cycle.means[j].copy()))
            for j in range(cycle.n_samples)
        )
        measured["min_density"] = float(min_density)
        ok &= min_density >= -1e-8
        self._cache["pde16_floquet"] = fd
        return measured, bool(ok), "trunc=16"

    @_wrap(9, "isochron-phase-map", 1200.0)
    def criterion_9(self):
        from .isochron import pde_phase_map, phase_gradient, phase_many, phase_convergence_rate, reduced_phase_map
        from .orbit import _split_multiplier_one

        measured = {}
        ok = True
        cycle = self.reduced_cycle()
        fdr = self.reduced_floquet()
        model = self.model
        rf_fast = ReducedFlow(model, quad_order=8, rescaled=True, dt=4e-3)
        pm = reduced_phase_map(cycle, model, fdr, match_tol=1e-7, rf=rf_fast)
        T = cycle.period
        rng = np.random.default_rng(self.seed)
        states = np.array(
            [cycle.means[rng.integers(cycle.n_samples)] + 0.03 * rng.standard_normal(2) for _ in range(100)]
        )
        base = phase_many(pm, states)
        worst = 0.0
        for s_off in rng.uniform(0.1 * T, 0.9 * T, 5):
            moved = rf_fast.integrate(states.copy(), float(s_off))
            shifted = phase_many(pm, moved)
            for r0, r1 in zip(base, shifted):
                diff = (r1.phase - r0.phase - s_off + T / 2.0) % T - T / 2.0
                worst = max(worst, abs(float(diff)))
        measured["reduced_identity_err"] = worst
        measured["reduced_identity_tol"] = 1e-4 * T
        ok &= worst <= 1e-4 * T

        # convergence rate against the Floquet gap (stable perturbations)
        sdir = fdr.Ps @ np.array([1.0, 0.3])
        sdir /= np.linalg.norm(sdir)
        fit = phase_convergence_rate(pm, cycle.means[0] + 1e-3 * sdir)
        measured["reduced_rate_ratio"] = float(-fit.slope / fdr.rate)
        ok &= not fit.skipped and 0.7 <= -fit.slope / fdr.rate <= 1.3

        # phase gradient structure at the anchor
        grad = phase_gradient(pm, 0.0)
        vel = rf_fast.rhs(cycle.means[0])
        measured["reduced_grad_on_velocity"] = float(grad.functional @ vel)
        measured["reduced_grad_on_stable"] = float(abs(grad.functional @ sdir))
        ok &= abs(grad.functional @ vel - 1.0) <= 1e-3
        ok &= abs(grad.functional @ sdir) <= 1e-3

        # spectral side: identity on 10 states, gradient structure at the anchor
        ctx, pcyc, fdp = self.pde_cycle12()
        pmp = pde_phase_map(pcyc, ctx, fdp, match_tol=2e-3)
        Tp = pcyc.period
        pstates = []
        for _ in range(10):
            j = rng.integers(pcyc.n_samples)
            c = pcyc.coeffs[j].copy()
            c[1:] *= 1.0 + 0.005 * rng.standard_normal(len(c) - 1)
            pstates.append(CenteredState(c, pcyc.means[j] + 0.005 * rng.standard_normal(2)))
        pbase = phase_many(pmp, pstates)
        worst_p = 0.0
        from .pde import flow_many

        for s_off in rng.uniform(0.1 * Tp, 0.9 * Tp, 5):
            C = np.stack([s.coeffs for s in pstates], axis=1)
            M = np.stack([s.mean for s in pstates], axis=1)
            C1, M1 = flow_many(C, M, float(s_off), ctx)
            moved = [CenteredState(C1[:, i], M1[:, i]) for i in range(len(pstates))]
            shifted = phase_many(pmp, moved)
            for r0, r1 in zip(pbase, shifted):
                diff = (r1.phase - r0.phase - s_off + Tp / 2.0) % Tp - Tp / 2.0
                worst_p = max(worst_p, abs(float(diff)))
        measured["pde_identity_err"] = worst_p
        measured["pde_identity_tol"] = 1e-2 * Tp
        ok &= worst_p <= 1e-2 * Tp

        # spectral convergence rate and gradient structure
        c = pcyc.coeffs[0].copy()
        base_state = CenteredState(c, pcyc.means[0].copy())
        _, _, v, w, _ = _split_multiplier_one(fdp.monodromy, 1e-4)
        dc, dm = pde_time_derivative(ctx, base_state)
        vel_p = np.concatenate([dc[1:], dm])
        w_norm = w / (w @ vel_p)
        measured["pde_grad_on_velocity"] = float(w_norm @ vel_p)
        # stable eigenvector of largest remaining multiplier
        evals, evecs = np.linalg.eig(fdp.monodromy)
        i1 = int(np.argmin(np.abs(evals - 1.0)))
        j2 = int(np.argmax(np.where(np.arange(len(evals)) == i1, -np.inf, np.abs(evals))))
        v2 = np.real(evecs[:, j2])
        v2 /= np.linalg.norm(v2)
        measured["pde_grad_on_stable"] = float(abs(w_norm @ v2) / np.linalg.norm(w_norm))
        ok &= abs(measured["pde_grad_on_velocity"] - 1.0) <= 1e-3
        ok &= measured["pde_grad_on_stable"] <= 1e-3

        # transient collapse at least half the Floquet rate (the decay is
        # strongly nonuniform along a relaxation cycle, so only the
        # inequality is meaningful here)
        mean_dir = v2[-2:] / max(np.linalg.norm(v2[-2:]), 1e-9) if np.linalg.norm(v2[-2:]) > 1e-6 else np.array([1.0, 0.0])
        pert = CenteredState(base_state.coeffs.copy(), base_state.mean + 2e-2 * mean_dir)
        fitp = phase_convergence_rate(pmp, pert, n_points=8)
        measured["pde_rate_slope"] = float(fitp.slope)
        measured["pde_rate_floor"] = float(-0.5 * fdp.rate)
        ok &= not fitp.skipped and fitp.slope <= -0.5 * fdp.rate
        return measured, bool(ok), ""

    # --- driver -----------------------------------------------------------

    def run(self, criteria=None) -> list[CriterionResult]:
        methods = sorted(
            (getattr(self, name) for name in dir(self) if name.startswith("criterion_")),
            key=lambda m: m._criterion,
        )
        results = []
        for m in methods:
            if criteria and m._criterion not in criteria:
                continue
            results.append(m())
        return results


def _hausdorff_to_polyline(points: np.ndarray, polyline: np.ndarray) -> float:
    """Largest distance from a point set to a closed polyline."""
    A = polyline
    B = np.roll(polyline, -1, axis=0)
    seg = B - A
    seg_len2 = np.sum(seg ** 2, axis=1)
    worst = 0.0
    for p in points:
        t = np.clip(np.sum((p - A) * seg, axis=1) / np.maximum(seg_len2, 1e-30), 0.0, 1.0)
        proj = A + t[:, None] * seg
        worst = max(worst, float(np.min(np.linalg.norm(proj - p, axis=1))))
    return worst


def three_way_compare_csv(cfg: RunConfig) -> str:
    """Mean trajectories of the three descriptions from a common start,
    with pairwise errors, over one slow period."""
    import io

    from .config import config_echo
    from .particles import SimConfig, simulate

    model = cfg.to_model()
    if model.delta <= 0:
        raise ValueError("compare needs delta > 0")
    search = find_cycle_reduced(tuple(cfg.orbit.z0), model, dt=cfg.orbit.dt,
                                quad_order=cfg.orbit.quad_order,
                                transient=cfg.orbit.transient, probe=cfg.orbit.probe)
    if not search.found:
        raise RuntimeError("no reduced cycle at these parameters; nothing to compare")
    cycle = search.cycle
    m0 = cycle.means[0].copy()
    horizon = cycle.period / model.delta
    dt = cfg.solver.dt
    stride = max(1, int(round(1.0 / dt)))
    ctx = GalerkinContext(model, replace(cfg.to_solver_config(), sample_stride=stride))
    _, traj = flow(ctx.stationary_state(m0), horizon, ctx, record=True)

    rf = ReducedFlow(model, quad_order=cfg.orbit.quad_order, rescaled=False, dt=dt)
    sim = SimConfig(N=cfg.particles.n, h=cfg.particles.h, seed=cfg.particles.seed, horizon=horizon)
    _, ptraj = simulate(model, sim, init_mean=m0, record_stride=max(1, int(round(1.0 / cfg.particles.h))))

    buf = io.StringIO()
    buf.write("# " + config_echo(cfg) + "\n")
    buf.write(
        "t,m1_reduced,m2_reduced,m1_pde,m2_pde,m1_particles,m2_particles,"
        "err_pde_reduced,err_particles_pde\n"
    )
    z = m0.copy()
    prev_t = 0.0
    for i, t in enumerate(traj.t):
        if t > prev_t:
            z = rf.integrate(z, t - prev_t)
            prev_t = t
        ip = int(np.argmin(np.abs(ptraj.t - t)))
        mp = ptraj.mean[ip]
        e1 = float(np.max(np.abs(traj.mean[i] - z)))
        e2 = float(np.max(np.abs(mp - traj.mean[i])))
        buf.write(
            ",".join(
                f"{v:.11e}"
                for v in (t, z[0], z[1], traj.mean[i][0], traj.mean[i][1], mp[0], mp[1], e1, e2)
            )
            + "\n"
        )
    return buf.getvalue()
