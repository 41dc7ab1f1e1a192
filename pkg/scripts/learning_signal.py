"""Train the linear and graph steppers on the 32x32 synthetic grid and
compare validation one-step RMSE with persistence."""

import argparse
import time

from ensemblecast.config import DESK_TRAIN
from ensemblecast.griddata import DatasetSplit, DayRange, compute_norm_stats, make_synthetic_dataset, domain_grid
from ensemblecast.mesh import build_hier_mesh
from ensemblecast.stepper import GraphStepper, LinearStencil, Persistence, StepContext, one_step_rmse
from ensemblecast.stepper.core import one_step_samples
from ensemblecast.stepper.train import train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--skip-graph", action="store_true")
    args = ap.parse_args()

    split = DatasetSplit(DayRange(0, 120), DayRange(120, 150), DayRange(150, 200))
    series = make_synthetic_dataset(domain_grid(args.size, args.size), 200, seed=args.seed)
    stats = compute_norm_stats(series, split)
    bathy = series.values("bathymetry")[0]
    ctx = StepContext(series.grid, stats, bathy)
    val = one_step_samples(series, split.val)
    base = one_step_rmse(Persistence(), ctx, val)
    print(f"{'model':<12}{'val RMSE (K)':>14}{'vs persistence':>16}{'seconds':>10}")
    print(f"{'persistence':<12}{base:>14.5f}{'':>16}{'':>10}")

    runs = [("linear", LinearStencil.init(args.seed), ctx)]
    if not args.skip_graph:
        gctx = StepContext(series.grid, stats, bathy, build_hier_mesh(series.grid, (16, 4)))
        runs.append(("graph", GraphStepper.init(args.seed, width=16), gctx))
    for name, model, c in runs:
        t0 = time.perf_counter()
        trained = train(model, c, series, split, DESK_TRAIN[name], seed=args.seed)
        rmse = one_step_rmse(trained, c, val)
        print(f"{name:<12}{rmse:>14.5f}{1 - rmse / base:>15.1%} {time.perf_counter() - t0:>9.1f}")


if __name__ == "__main__":
    main()
