"""Command-line front end.

Parses a configuration (TOML subset), dispatches simulations and
verification runs, and writes CSV artifacts plus standalone matplotlib
plot scripts next to them.  Heavy imports happen inside the command
handlers so --threads can cap the BLAS pools before numpy loads.

Exit codes: 0 success or a valid negative result, 1 validation error,
2 numerical failure, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_VERIFICATION = 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfosc", description="Mean-field oscillation toolkit")
    p.add_argument("--config", default="", help="configuration file (TOML subset); empty uses defaults")
    p.add_argument("--out-dir", default="", help="output directory (overrides [output] and MFOSC_OUT)")
    p.add_argument("--threads", type=int, default=0, help="cap BLAS worker threads (0 leaves the default)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("reduced", help="integrate the reduced mean dynamics")
    sp.add_argument("--horizon", type=float, default=0.0, help="slow-time horizon (0: three default periods)")

    sp = sub.add_parser("pde", help="integrate the spectral density/mean system")
    sp.add_argument("--horizon", type=float, default=100.0, help="time horizon")

    sub.add_parser("particles", help="simulate the interacting particle system")

    sp = sub.add_parser("cycle", help="locate limit cycles")
    sp.add_argument("--space", choices=["reduced", "pde"], default="reduced")
    sp.add_argument("--ratio1", type=float, default=None, help="override sigma_1^2/k_1")

    sp = sub.add_parser("floquet", help="monodromy, multipliers and projections")
    sp.add_argument("--space", choices=["reduced", "pde"], default="reduced")

    sp = sub.add_parser("isochron", help="asymptotic phase scans")
    sp.add_argument("--space", choices=["reduced", "pde"], default="reduced")
    sp.add_argument("--grid", action="store_true", help="also raster the phase over a rectangle (reduced)")

    sub.add_parser("compare", help="three-way mean-trajectory comparison")

    sp = sub.add_parser("verify", help="run the acceptance suite")
    sp.add_argument("--criteria", default="", help="comma-separated criterion numbers (default: all)")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .config import ConfigError, parse_config, RunConfig

    try:
        cfg = parse_config(args.config) if args.config else RunConfig().validate()
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    out_dir = Path(args.out_dir or cfg.output_dir())
    out_dir.mkdir(parents=True, exist_ok=True)

    handler = {
        "reduced": _cmd_reduced,
        "pde": _cmd_pde,
        "particles": _cmd_particles,
        "cycle": _cmd_cycle,
        "floquet": _cmd_floquet,
        "isochron": _cmd_isochron,
        "compare": _cmd_compare,
        "verify": _cmd_verify,
    }[args.command]
    try:
        return handler(args, cfg, out_dir)
    except (ConfigError, ValueError) as exc:
        print(f"invalid request: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # numerical failures surface as one-liners
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}")


# --- commands ------------------------------------------------------------------


def _cmd_reduced(args, cfg, out_dir):
    import numpy as np

    from .config import config_echo
    from .orbit import ReducedFlow

    model = cfg.to_model()
    rf = ReducedFlow(model, quad_order=cfg.orbit.quad_order, rescaled=True, dt=cfg.orbit.dt)
    horizon = args.horizon or 100.0
    ts, zs = rf.trajectory(np.asarray(cfg.orbit.z0, dtype=float), horizon, stride=max(1, int(0.05 / cfg.orbit.dt)))
    lines = ["# " + config_echo(cfg), "t," + ",".join(f"m_{j+1}" for j in range(model.d))]
    for t, z in zip(ts, zs):
        lines.append(",".join(f"{v:.11e}" for v in (t, *z)))
    _write(out_dir / "reduced_trajectory.csv", "\n".join(lines) + "\n")
    if cfg.output.emit_plots:
        _write(out_dir / "plot_reduced_trajectory.py", emit_plot_script("trajectory", "reduced_trajectory.csv"))
    return EXIT_OK


def _cmd_pde(args, cfg, out_dir):
    import numpy as np

    from .config import config_echo
    from .pde import GalerkinContext, checkpoint_csv, flow, trajectory_csv

    model = cfg.to_model()
    ctx = GalerkinContext(model, cfg.to_solver_config())
    state = ctx.stationary_state(np.asarray(cfg.orbit.z0, dtype=float))
    final, traj = flow(state, args.horizon, ctx, record=True)
    _write(out_dir / "pde_trajectory.csv", trajectory_csv(traj, model.d, meta=config_echo(cfg)))
    _write(out_dir / "pde_checkpoint.csv", checkpoint_csv(final, ctx, meta=config_echo(cfg)))
    if cfg.output.emit_plots:
        _write(out_dir / "plot_pde_trajectory.py", emit_plot_script("trajectory", "pde_trajectory.csv"))
    return EXIT_OK


def _cmd_particles(args, cfg, out_dir):
    import numpy as np

    from .config import config_echo
    from .particles import SimConfig, metadata_sidecar, simulate, trajectory_csv

    model = cfg.to_model()
    sim = SimConfig(N=cfg.particles.n, h=cfg.particles.h, seed=cfg.particles.seed, horizon=cfg.particles.horizon)
    _, traj = simulate(model, sim, init_mean=np.asarray(cfg.orbit.z0, dtype=float),
                       record_stride=max(1, int(0.1 / sim.h)))
    _write(out_dir / "particles_trajectory.csv", trajectory_csv(traj, model.d, meta=config_echo(cfg)))
    _write(out_dir / "particles_metadata.json", metadata_sidecar(model, sim))
    if cfg.output.emit_plots:
        _write(out_dir / "plot_particles_trajectory.py", emit_plot_script("trajectory", "particles_trajectory.csv"))
    return EXIT_OK


def _find_reduced_cycle(cfg, model):
    from .orbit import find_cycle_reduced

    return find_cycle_reduced(
        tuple(cfg.orbit.z0),
        model,
        tol=cfg.orbit.tol_reduced,
        dt=cfg.orbit.dt,
        quad_order=cfg.orbit.quad_order,
        transient=cfg.orbit.transient,
        probe=cfg.orbit.probe,
        n_samples=cfg.orbit.samples_reduced,
    )


def _cmd_cycle(args, cfg, out_dir):
    from .orbit import cycle_csv, find_cycle_pde
    from .pde import GalerkinContext

    if args.ratio1 is not None:
        cfg.model.ratio1 = args.ratio1
        cfg.validate()
    model = cfg.to_model()
    search = _find_reduced_cycle(cfg, model)
    if args.space == "reduced":
        if not search.found:
            fp = ", ".join(f"{v:.6f}" for v in search.fixed_point)
            print(f"no cycle: {search.message} at ({fp})")
            return EXIT_OK
        _write(out_dir / "cycle_reduced.csv", cycle_csv(search.cycle))
        print(f"reduced cycle period (slow time): {search.cycle.period:.6f}")
        return EXIT_OK
    if not search.found:
        print("no reduced cycle; the spectral search has no seed", file=sys.stderr)
        return EXIT_NUMERICAL
    ctx = GalerkinContext(model, cfg.to_solver_config())
    cycle = find_cycle_pde(ctx, search.cycle, tol=cfg.orbit.tol_pde, n_samples=cfg.orbit.samples_pde)
    _write(out_dir / "cycle_pde.csv", cycle_csv(cycle))
    print(f"spectral cycle period: {cycle.period:.6f} (x delta = {cycle.period * model.delta:.6f})")
    return EXIT_OK


def _cmd_floquet(args, cfg, out_dir):
    from .orbit import find_cycle_pde, floquet_reduced, floquet_report_json, pde_monodromy
    from .pde import GalerkinContext

    model = cfg.to_model()
    search = _find_reduced_cycle(cfg, model)
    if not search.found:
        print("no cycle; nothing to analyze", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.space == "reduced":
        fd = floquet_reduced(search.cycle, model)
        name = "floquet_reduced.json"
    else:
        ctx = GalerkinContext(model, cfg.to_solver_config())
        cycle = find_cycle_pde(ctx, search.cycle, tol=cfg.orbit.tol_pde, n_samples=cfg.orbit.samples_pde)
        fd = pde_monodromy(cycle, ctx)
        name = "floquet_pde.json"
    _write(out_dir / name, floquet_report_json(fd))
    if cfg.output.emit_plots:
        _write(out_dir / f"plot_{name.removesuffix('.json')}.py", emit_plot_script("floquet", name))
    return EXIT_OK


def _cmd_isochron(args, cfg, out_dir):
    import numpy as np

    from .isochron import isochron_grid_csv, pde_phase_map, phase_scan_csv, reduced_phase_map
    from .orbit import find_cycle_pde, floquet_reduced, pde_monodromy
    from .pde import CenteredState, GalerkinContext

    model = cfg.to_model()
    search = _find_reduced_cycle(cfg, model)
    if not search.found:
        print("no cycle; the phase map is undefined", file=sys.stderr)
        return EXIT_NUMERICAL
    rng = np.random.default_rng(cfg.particles.seed)
    if args.space == "reduced":
        fd = floquet_reduced(search.cycle, model)
        pm = reduced_phase_map(search.cycle, model, fd, match_tol=cfg.isochron.match_tol_reduced)
        states = search.cycle.means[:: max(1, search.cycle.n_samples // 16)] + 0.02 * rng.standard_normal((16, 2))
        _write(out_dir / "phase_scan_reduced.csv", phase_scan_csv(pm, states))
        if args.grid:
            lo = search.cycle.means.min(axis=0) - 0.5
            hi = search.cycle.means.max(axis=0) + 0.5
            grid = isochron_grid_csv(pm, (lo[0], hi[0]), (lo[1], hi[1]),
                                     (cfg.isochron.grid_nx, cfg.isochron.grid_ny))
            _write(out_dir / "isochron_grid.csv", grid)
            if cfg.output.emit_plots:
                _write(out_dir / "plot_isochron_grid.py", emit_plot_script("isochron", "isochron_grid.csv"))
        return EXIT_OK
    ctx = GalerkinContext(model, cfg.to_solver_config())
    cycle = find_cycle_pde(ctx, search.cycle, tol=cfg.orbit.tol_pde, n_samples=cfg.orbit.samples_pde)
    fd = pde_monodromy(cycle, ctx)
    pm = pde_phase_map(cycle, ctx, fd, match_tol=cfg.isochron.match_tol_pde)
    states = []
    for j in range(0, cycle.n_samples, max(1, cycle.n_samples // 8)):
        c = cycle.coeffs[j].copy()
        c[1:] *= 1.0 + 0.01 * rng.standard_normal(len(c) - 1)
        states.append(CenteredState(c, cycle.means[j] + 0.01 * rng.standard_normal(model.d)))
    _write(out_dir / "phase_scan_pde.csv", phase_scan_csv(pm, states))
    return EXIT_OK


def _cmd_compare(args, cfg, out_dir):
    from .verify import three_way_compare_csv

    _write(out_dir / "compare.csv", three_way_compare_csv(cfg))
    if cfg.output.emit_plots:
        _write(out_dir / "plot_compare.py", emit_plot_script("compare", "compare.csv"))
    return EXIT_OK


def _cmd_verify(args, cfg, out_dir):
    from .verify import VerificationSuite

    wanted = None
    if args.criteria:
        wanted = [int(x) for x in args.criteria.split(",") if x.strip()]
    suite = VerificationSuite(cfg)
    results = suite.run(wanted)
    for r in results:
        print(r.line())
    report = {
        "all_passed": all(r.passed for r in results),
        "criteria": [
            {
                "number": r.number,
                "name": r.name,
                "passed": r.passed,
                "runtime_s": r.runtime_s,
                "measured": r.measured,
            }
            for r in results
        ],
    }
    _write(out_dir / "verification_report.json", json.dumps(report, indent=2, default=float))
    return EXIT_OK if report["all_passed"] else EXIT_VERIFICATION


# --- plot script emission ----------------------------------------------------------


def emit_plot_script(kind: str, csv_name: str) -> str:
    """Standalone matplotlib script sourcing only the named CSV artifact."""
    header = (
        "#!/usr/bin/env python3\n"
        f"# plots {csv_name}; run from the directory containing it\n"
        "import numpy as np\n"
        "import matplotlib.pyplot as plt\n\n"
        f"data = np.genfromtxt({csv_name!r}, delimiter=',', names=True, comments='#')\n"
    )
    if kind == "trajectory":
        body = (
            "fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))\n"
            "ax1.plot(data['m_1'], data['m_2'], lw=0.8)\n"
            "ax1.set_xlabel('m_1'); ax1.set_ylabel('m_2'); ax1.set_title('phase portrait')\n"
            "ax2.plot(data['t'], data['m_1'], label='m_1')\n"
            "ax2.plot(data['t'], data['m_2'], label='m_2')\n"
            "ax2.set_xlabel('t'); ax2.legend(); ax2.set_title('mean components')\n"
        )
    elif kind == "floquet":
        header = (
            "#!/usr/bin/env python3\n"
            f"# plots the multiplier spectrum from {csv_name}\n"
            "import json\n"
            "import numpy as np\n"
            "import matplotlib.pyplot as plt\n\n"
            f"report = json.load(open({csv_name!r}))\n"
            "mults = np.array(report['multipliers'])\n"
        )
        body = (
            "fig, ax = plt.subplots(figsize=(5, 5))\n"
            "circle = np.exp(1j * np.linspace(0, 2 * np.pi, 256))\n"
            "ax.plot(circle.real, circle.imag, 'k--', lw=0.6)\n"
            "ax.plot(mults[:, 0], mults[:, 1], 'o')\n"
            "ax.set_aspect('equal'); ax.set_title('Floquet multipliers')\n"
        )
    elif kind == "isochron":
        body = (
            "n = int(np.sqrt(len(data)))\n"
            "X = data['x'].reshape(n, -1); Y = data['y'].reshape(n, -1)\n"
            "P = data['phase'].reshape(n, -1)\n"
            "fig, ax = plt.subplots(figsize=(6, 5))\n"
            "cs = ax.contourf(X, Y, P, levels=24, cmap='twilight')\n"
            "fig.colorbar(cs, ax=ax, label='phase')\n"
            "ax.set_xlabel('m_1'); ax.set_ylabel('m_2'); ax.set_title('isochrons')\n"
        )
    elif kind == "compare":
        body = (
            "fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))\n"
            "ax1.plot(data['t'], data['m1_reduced'], label='reduced')\n"
            "ax1.plot(data['t'], data['m1_pde'], label='pde')\n"
            "if 'm1_particles' in data.dtype.names:\n"
            "    ax1.plot(data['t'], data['m1_particles'], label='particles', alpha=0.7)\n"
            "ax1.set_xlabel('t'); ax1.legend(); ax1.set_title('first mean component')\n"
            "ax2.semilogy(data['t'], data['err_pde_reduced'], label='|pde - reduced|')\n"
            "if 'err_particles_pde' in data.dtype.names:\n"
            "    ax2.semilogy(data['t'], data['err_particles_pde'], label='|particles - pde|')\n"
            "ax2.set_xlabel('t'); ax2.legend(); ax2.set_title('pairwise errors')\n"
        )
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    return header + body + "plt.tight_layout()\nplt.savefig(" + repr(csv_name.rsplit(".", 1)[0] + ".png") + ", dpi=160)\n"


if __name__ == "__main__":
    sys.exit(main())
