"""RMSE increase of Gaussian-noise ensemble means over the deterministic
forecast at leads 1, 5 and 15, for sigma 0.01, 0.05 and 0.1."""

import argparse

import numpy as np

from ensemblecast.config import DESK_TRAIN
from ensemblecast.ensemble import EnsembleConfig, run_ensemble
from ensemblecast.griddata import DatasetSplit, DayRange, compute_norm_stats, make_synthetic_dataset, domain_grid
from ensemblecast.noise import Gaussian
from ensemblecast.stepper import LinearStencil, StepContext, forecast_inputs, rollout
from ensemblecast.stepper.train import train
from ensemblecast.verify import evaluate_deterministic, rmse_increase_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--members", type=int, default=5)
    ap.add_argument("--horizon", type=int, default=15)
    args = ap.parse_args()

    split = DatasetSplit(DayRange(0, 120), DayRange(120, 150), DayRange(150, 200))
    series = make_synthetic_dataset(domain_grid(32, 32), 200, seed=args.seed)
    ctx = StepContext(series.grid, compute_norm_stats(series, split), series.values("bathymetry")[0])
    model = train(LinearStencil.init(args.seed), ctx, series, split, DESK_TRAIN["linear"], seed=args.seed)
    sea = series.grid.sea_mask
    days = range(split.test.start + 1, split.test.stop - args.horizon - 1, 5)
    sst = series.values("sst")

    def metrics(trajs):
        pred = np.stack([t.values[:, sea] for t in trajs])
        obs = np.stack([sst[series.index_of(t.start_day + 1) :][: args.horizon][:, sea] for t in trajs])
        return evaluate_deterministic(pred, obs)

    det, means = [], {s: [] for s in (0.01, 0.05, 0.1)}
    for day in days:
        init, forcing = forecast_inputs(series, day, args.horizon)
        det.append(rollout(model, ctx, init, forcing, args.horizon, day))
        for sigma in means:
            cfg = EnsembleConfig(args.members, Gaussian(0.0, sigma), base_seed=args.seed, horizon=args.horizon)
            means[sigma].append(run_ensemble(model, ctx, init, forcing, cfg, day).mean)
    cands = {f"Gaussian sigma {s}": metrics(m) for s, m in means.items()}
    print(rmse_increase_report(metrics(det), cands, (1, 5, 15)).format(), end="")


if __name__ == "__main__":
    main()
