"""Command line pipeline: synth, stats, train, forecast, ensemble, verify, report.

Every subcommand writes ``manifest_<command>.json`` next to its outputs with
the full configuration, the seeds, input checksums and the toolkit version.
Usage errors exit with status 2, operational errors with status 1.
"""

import argparse
import hashlib
import json
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import NOISE_PRESETS, ExperimentConfig, noise_to_dict, parse_config
from .ensemble import EnsembleConfig, EnsembleForecast, run_ensemble, thread_cap
from .errors import EnsembleCastError
from .griddata import (
    TimeSeries,
    compute_norm_stats,
    load_series,
    make_synthetic_dataset,
    domain_grid,
    save_series,
)
from .mesh import build_hier_mesh
from .noise import noise_for_states
from .seeding import mix
from .stepper import GraphStepper, LinearStencil, Persistence, StepContext, Trajectory, one_step_rmse
from .stepper.core import forecast_inputs, one_step_samples, rollout
from .stepper.modelio import load_model, save_model
from .stepper.train import train
from .verify import MetricSeries, bias_map, build_verification_input, evaluate, evaluate_deterministic, rmse_increase_report

log = logging.getLogger("ensemblecast")

DEFAULT_PRESET = "gauss_0.01"
_FORECAST = re.compile(r"^forecast_d(\d+)\.ofs$")
_ENSEMBLE = re.compile(r"^ensemble_(.+)_d(\d+)\.ofs$")


class UsageError(EnsembleCastError):
    pass


# ---------------------------------------------------------------- helpers


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_config(args):
    cfg = parse_config(args.config) if args.config else ExperimentConfig(NOISE_PRESETS[DEFAULT_PRESET])
    preset = getattr(args, "preset", None)
    if preset:
        if preset not in NOISE_PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {', '.join(NOISE_PRESETS)}")
        cfg = ExperimentConfig(
            NOISE_PRESETS[preset], cfg.data, cfg.split, cfg.stepper, cfg.train, cfg.ensemble, cfg.output
        )
    return cfg


def _out_dir(args, cfg):
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, command, args, cfg, seeds, inputs=(), outputs=(), extra=None):
    manifest = {
        "command": command,
        "version": __version__,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "config": cfg.to_dict(),
        "seeds": seeds,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        manifest.update(extra)
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _parse_leads(text):
    if text is None:
        return None
    try:
        leads = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise UsageError(f"--leads expects comma separated integers, got {text!r}") from None
    if not leads:
        raise UsageError("--leads is empty")
    return leads


def _context(series, cfg, model=None):
    stats = compute_norm_stats(series, cfg.split)
    mesh = None
    if model is not None and model.kind == "graph":
        mesh = build_hier_mesh(series.grid, model.level_res)
    elif model is None and cfg.stepper.kind == "graph":
        mesh = build_hier_mesh(series.grid, cfg.stepper.level_res)
    return StepContext(series.grid, stats, series.values("bathymetry")[0], mesh)


def _start_days(args, cfg):
    first = args.start_day if args.start_day is not None else cfg.split.test.start + 1
    if args.n_starts < 1 or args.stride < 1:
        raise UsageError("--n-starts and --stride must be >= 1")
    return [first + k * args.stride for k in range(args.n_starts)]


def _horizon(args, cfg):
    h = args.horizon if args.horizon is not None else cfg.ensemble.horizon
    if h < 1:
        raise UsageError("--horizon must be >= 1")
    return h


def _save_trajectories(path, grid, start_day, names, stack):
    """Write (V, T, n_lat, n_lon) trajectories as one OFS1 series starting at start_day + 1."""
    data = np.moveaxis(np.asarray(stack), 0, 1).astype(np.float32)
    save_series(TimeSeries(grid, tuple(names), start_day + 1, data), path)


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    seed = cfg.data.seed if args.seed is None else args.seed
    grid = domain_grid(cfg.data.n_lat, cfg.data.n_lon)
    series = make_synthetic_dataset(grid, cfg.data.n_days, seed, epoch=cfg.data.epoch)
    path = out / "data.ofs"
    save_series(series, path)
    _write_manifest(out, "synth", args, cfg, {"data": seed}, outputs=[path])
    print(f"wrote {path} ({series.n_time} days, {grid.n_lat}x{grid.n_lon}, {grid.n_sea} sea cells)")


def cmd_stats(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    series = load_series(args.data)
    stats = compute_norm_stats(series, cfg.split)
    path = out / "stats.json"
    path.write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "stats", args, cfg, {}, inputs=[args.data], outputs=[path])
    for var, s in stats.vars.items():
        print(f"{var}: mean {s.state_mean:.6g} std {s.state_std:.6g} diff_mean {s.diff_mean:.6g} diff_std {s.diff_std:.6g}")


def _init_model(cfg, seed):
    sc = cfg.stepper
    if sc.kind == "persistence":
        return Persistence()
    if sc.kind == "linear":
        return LinearStencil.init(seed, std=sc.init_std)
    return GraphStepper.init(seed, width=sc.width, n_layers=sc.n_layers, level_res=sc.level_res)


def cmd_train(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    seed = cfg.stepper.seed if args.seed is None else args.seed
    series = load_series(args.data)
    ctx = _context(series, cfg)
    model = _init_model(cfg, seed)
    history = []
    t0 = time.perf_counter()
    model = train(model, ctx, series, cfg.split, cfg.train, mix(seed, 1), history)
    elapsed = time.perf_counter() - t0
    path = Path(args.model) if args.model else out / "model.omp"
    save_model(model, path)
    hist_path = out / "train_history.csv"
    with open(hist_path, "w") as fh:
        fh.write("epoch,train_loss,lr\n")
        for h in history:
            fh.write(f"{h['epoch']},{h['train_loss']!r},{h['lr']!r}\n")
    val = one_step_samples(series, cfg.split.val)
    # reload so the reported score matches the stored f32 weights
    trained = one_step_rmse(load_model(path), ctx, val)
    persist = one_step_rmse(Persistence(), ctx, val)
    scores = {"val_rmse": trained, "val_rmse_persistence": persist, "train_seconds": elapsed}
    _write_manifest(
        out, "train", args, cfg, {"init": seed, "shuffle": mix(seed, 1)},
        inputs=[args.data], outputs=[path, hist_path], extra={"scores": scores},
    )
    gain = 100.0 * (1.0 - trained / persist)
    print(f"wrote {path}: val one-step RMSE {trained:.5f} K vs persistence {persist:.5f} K ({gain:.1f}% better)")


def cmd_forecast(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    series = load_series(args.data)
    model = load_model(args.model)
    ctx = _context(series, cfg, model)
    horizon = _horizon(args, cfg)
    written = []
    for day in _start_days(args, cfg):
        init, forcing = forecast_inputs(series, day, horizon)
        traj = rollout(model, ctx, init, forcing, horizon, day)
        path = out / f"forecast_d{day}.ofs"
        _save_trajectories(path, series.grid, day, ["sst"], traj.values[None])
        written.append(path)
    _write_manifest(out, "forecast", args, cfg, {}, inputs=[args.data, args.model], outputs=written)
    print(f"wrote {len(written)} forecast(s) of {horizon} days to {out}")


def cmd_ensemble(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    series = load_series(args.data)
    model = load_model(args.model)
    ctx = _context(series, cfg, model)
    horizon = _horizon(args, cfg)
    members = cfg.ensemble.members if args.members is None else args.members
    base_seed = cfg.ensemble.base_seed if args.seed is None else args.seed
    ens_cfg = EnsembleConfig(members, cfg.noise, base_seed, horizon)
    tag = args.tag or args.preset or "custom"
    if not re.fullmatch(r"[A-Za-z0-9_.\-]+", tag):
        raise UsageError(f"--tag {tag!r} must be alphanumeric with _ . -")
    names = [f"member_{m:03d}" for m in range(members)] + ["mean"]
    written = []
    for day in _start_days(args, cfg):
        init, forcing = forecast_inputs(series, day, horizon)
        ens = run_ensemble(model, ctx, init, forcing, ens_cfg, day)
        path = out / f"ensemble_{tag}_d{day}.ofs"
        _save_trajectories(path, series.grid, day, names, np.concatenate([ens.members, ens.mean.values[None]]))
        written.append(path)
        if args.split_members:
            for m in range(members):
                mpath = out / f"member_{tag}_d{day}_m{m:03d}.ofs"
                _save_trajectories(mpath, series.grid, day, ["sst"], ens.members[m][None])
                written.append(mpath)
        if args.dump_noise:
            noise = np.stack([noise_for_states(cfg.noise, series.grid.shape, ens_cfg.member_seed(m)) for m in range(members)])
            npath = out / f"noise_{tag}_d{day}.ofs"
            sea = series.grid.sea_mask
            noise = np.where(sea, noise, np.nan).astype(np.float32)
            save_series(TimeSeries(series.grid, tuple(names[:-1]), day - 1, np.moveaxis(noise, 0, 1)), npath)
            written.append(npath)
    seeds = {"base_seed": base_seed, "members": [ens_cfg.member_seed(m) for m in range(members)]}
    _write_manifest(
        out, f"ensemble_{tag}", args, cfg, seeds, inputs=[args.data, args.model], outputs=written,
        extra={"noise": noise_to_dict(cfg.noise), "threads": thread_cap()},
    )
    print(f"wrote {len(written)} file(s) for ensemble {tag!r} ({members} members, {horizon} days) to {out}")


def _ensemble_from_file(path, day, truth_grid):
    s = load_series(path)
    if s.grid != truth_grid:
        raise EnsembleCastError(f"{path}: grid differs from the truth grid")
    members = np.stack([s.values(v) for v in s.vars if v != "mean"])
    mean = Trajectory(s.grid, day, s.values("mean"))
    return EnsembleForecast(s.grid, day, members, mean, None)


def cmd_verify(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    src = Path(args.input or out)
    truth = load_series(args.data)
    sea = truth.grid.sea_mask
    leads = _parse_leads(args.leads)
    written, inputs = [], [args.data]

    det = sorted((int(m.group(1)), src / p.name) for p in src.iterdir() if (m := _FORECAST.match(p.name)))
    groups = {}
    for p in src.iterdir():
        m = _ENSEMBLE.match(p.name)
        if m:
            groups.setdefault(m.group(1), []).append((int(m.group(2)), src / p.name))
    if not det and not groups:
        raise EnsembleCastError(f"no forecast_d*.ofs or ensemble_*_d*.ofs files in {src}")

    weights = None
    if args.weighted:
        lat, _ = truth.grid.mesh()
        weights = np.cos(np.deg2rad(lat[sea]))
    truth_sst = truth.values("sst")

    if det:
        trajs = []
        for day, path in det:
            s = load_series(path)
            trajs.append(Trajectory(s.grid, day, s.values("sst")))
            inputs.append(path)
        horizon = trajs[0].horizon
        sel = leads or tuple(range(1, horizon + 1))
        if any(not 1 <= l <= horizon for l in sel) or any(t.horizon != horizon for t in trajs):
            raise EnsembleCastError(f"leads {sel} not available in every forecast (horizon {horizon})")
        preds = np.stack([t.values[[l - 1 for l in sel]][:, sea] for t in trajs])
        obs = np.stack([truth_sst[[truth.index_of(t.start_day + l) for l in sel]][:, sea] for t in trajs])
        metrics = evaluate_deterministic(preds, obs, sel, weights)
        path = out / "metrics_deterministic.csv"
        metrics.to_csv(path)
        written.append(path)
        bpath = out / f"bias_deterministic_d{trajs[0].start_day}_l{sel[0]}.ofs"
        bias = bias_map(trajs[0], truth, sel[0])
        save_series(TimeSeries(truth.grid, ("bias",), trajs[0].start_day + sel[0], bias.values[None, None].astype(np.float32)), bpath)
        written.append(bpath)

    for tag, files in sorted(groups.items()):
        ens = []
        for day, path in sorted(files):
            ens.append(_ensemble_from_file(path, day, truth.grid))
            inputs.append(path)
        inp = build_verification_input(ens, truth, leads, weighted=args.weighted)
        metrics = evaluate(inp, corrected=args.corrected)
        path = out / f"metrics_{tag}.csv"
        metrics.to_csv(path)
        written.append(path)
        for w in metrics.warnings:
            print(f"warning [{tag}]: {w}", file=sys.stderr)
        first = ens[0]
        lead = inp.leads[0]
        bias = bias_map(first.mean, truth, lead)
        bpath = out / f"bias_{tag}_d{first.start_day}_l{lead}.ofs"
        save_series(TimeSeries(truth.grid, ("bias",), first.start_day + lead, bias.values[None, None].astype(np.float32)), bpath)
        written.append(bpath)

    _write_manifest(out, "verify", args, cfg, {}, inputs=inputs, outputs=written)
    print(f"wrote {len(written)} verification file(s) to {out}")


GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set xlabel 'lead (days)'
set ylabel 'RMSE (K)'
set terminal pngcairo size 900,600
set output '{png}'
plot {plots}
"""


def cmd_report(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    leads = _parse_leads(args.leads) or (1, 5, 15)
    reference = MetricSeries.from_csv(args.reference)
    candidates, inputs = {}, [args.reference]
    for item in args.candidate:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem.removeprefix("metrics_"), item
        candidates[name] = MetricSeries.from_csv(path)
        inputs.append(path)
    report = rmse_increase_report(reference, candidates, leads)
    text = report.format()
    (out / "report.txt").write_text(text)
    report.to_csv(out / "report.csv")
    written = [out / "report.txt", out / "report.csv"]
    if args.gnuplot:
        files = [("reference", args.reference)] + [(n, p) for n, p in zip(candidates, inputs[1:])]
        plots = ", \\\n     ".join(
            f"'{Path(p).resolve()}' using 'lead':'rmse' with linespoints title '{n}'" for n, p in files
        )
        gp = out / "report.gp"
        gp.write_text(GNUPLOT.format(png=out.resolve() / "rmse.png", plots=plots))
        written.append(gp)
    _write_manifest(out, "report", args, cfg, {}, inputs=inputs, outputs=written)
    print(text, end="")


# ---------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="ensemblecast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    def add(name, func, help_text, data=True, model=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--out", help="output directory (default: [output] directory)")
        if data:
            p.add_argument("--data", required=True, help="OFS1 dataset")
        if model:
            p.add_argument("--model", required=True, help="OMP1 model file")
        p.set_defaults(func=func)
        return p

    def add_starts(p):
        p.add_argument("--start-day", type=int, help="first start day (default: first test day + 1)")
        p.add_argument("--n-starts", type=int, default=1, help="number of start days")
        p.add_argument("--stride", type=int, default=1, help="days between start days")
        p.add_argument("--horizon", type=int, help="forecast length in days")

    p = add("synth", cmd_synth, "generate the synthetic dataset", data=False)
    p.add_argument("--seed", type=int)
    add("stats", cmd_stats, "normalization statistics over the train range")
    p = add("train", cmd_train, "train the configured stepper")
    p.add_argument("--model", help="output model path (default: <out>/model.omp)")
    p.add_argument("--seed", type=int)
    p = add("forecast", cmd_forecast, "deterministic rollout", model=True)
    add_starts(p)
    p = add("ensemble", cmd_ensemble, "perturbed-initial-state ensemble", model=True)
    add_starts(p)
    p.add_argument("--preset", help=f"noise preset ({', '.join(NOISE_PRESETS)})")
    p.add_argument("--members", type=int)
    p.add_argument("--seed", type=int, help="ensemble base seed")
    p.add_argument("--tag", help="output name (default: preset name)")
    p.add_argument("--dump-noise", action="store_true", help="also write the perturbation fields")
    p.add_argument("--split-members", action="store_true", help="also write one file per member")
    p = add("verify", cmd_verify, "metrics for every forecast and ensemble in a directory")
    p.add_argument("--in", dest="input", help="directory with forecast/ensemble files (default: --out)")
    p.add_argument("--leads", help="comma separated leads (default: all)")
    p.add_argument("--weighted", action="store_true", help="cos-latitude cell weights")
    p.add_argument("--corrected", action="store_true", help="finite-ensemble spread correction")
    p = add("report", cmd_report, "RMSE increase table", data=False)
    p.add_argument("--reference", required=True, help="reference metrics CSV")
    p.add_argument("--candidate", action="append", default=[], help="NAME=metrics.csv (repeatable)")
    p.add_argument("--leads", default="1,5,15", help="comma separated leads")
    p.add_argument("--gnuplot", action="store_true", help="emit a gnuplot script")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ensemblecast: error: {exc}", file=sys.stderr)
        return 2
    except (EnsembleCastError, OSError) as exc:
        print(f"ensemblecast: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
