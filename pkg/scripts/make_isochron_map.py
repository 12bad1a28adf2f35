#!/usr/bin/env python3
"""Raster the asymptotic phase of the reduced dynamics over a rectangle.

The output CSV (x, y, phase) has NaN outside the cycle's basin; the
companion plot script draws the filled level sets with the cycle overlaid.
"""

import argparse
from pathlib import Path

from mfosc.cli import emit_plot_script
from mfosc.isochron import isochron_grid_csv, reduced_phase_map
from mfosc.model import fhn_model
from mfosc.orbit import ReducedFlow, find_cycle_reduced, floquet_reduced


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out_isochron")
    ap.add_argument("--nx", type=int, default=41)
    ap.add_argument("--ny", type=int, default=41)
    ap.add_argument("--pad", type=float, default=0.4)
    args = ap.parse_args()

    model = fhn_model(delta=0.05)
    search = find_cycle_reduced((0.0, 1.0), model)
    cycle = search.cycle
    fd = floquet_reduced(cycle, model)
    rf = ReducedFlow(model, quad_order=8, rescaled=True, dt=4e-3)
    pm = reduced_phase_map(cycle, model, fd, match_tol=1e-6, rf=rf)

    lo = cycle.means.min(axis=0) - args.pad
    hi = cycle.means.max(axis=0) + args.pad
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = isochron_grid_csv(pm, (lo[0], hi[0]), (lo[1], hi[1]), (args.nx, args.ny))
    (out / "isochron_grid.csv").write_text(grid)
    (out / "plot_isochron_grid.py").write_text(emit_plot_script("isochron", "isochron_grid.csv"))
    print(f"period {cycle.period:.4f}, decay rate {fd.rate:.4f}")
    print(f"wrote {out}/isochron_grid.csv")


if __name__ == "__main__":
    main()
