"""Stepper contract: input features, residual step, rollout, loss.

Every stepper maps a feature stack ``(B, C, n_lat, n_lon)`` to a normalized
SST increment ``(B, n_lat, n_lon)``; :func:`step` turns that into a physical
state via ``X^{t-1} + increment * diff_std + diff_mean``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import HorizonMismatch, InsufficientForcing, ShapeMismatch
from ..griddata import Field

FORCING_VARS = ("u10", "v10")
CHANNELS = (
    "sst_prev",  # X^{t-1}, state-normalized
    "sst_tendency",  # X^{t-1} - X^{t-2}, diff-normalized
    "u10",
    "v10",
    "bathymetry",
    "sin_lat",
    "cos_lat",
    "sin_lon",
    "cos_lon",
    "sin_doy",
    "cos_doy",
)
N_CHANNELS = len(CHANNELS)
DAYS_PER_YEAR = 365.25


@dataclass(frozen=True, eq=False)
class StepContext:
    """Everything a stepper needs besides the dynamic inputs."""

    grid: object
    stats: object
    bathymetry: np.ndarray
    mesh: object = None
    var: str = "sst"

    @cached_property
    def static_features(self):
        lat, lon = np.deg2rad(self.grid.mesh())
        b = self.stats["bathymetry"]
        bathy = (np.asarray(self.bathymetry, dtype=np.float64) - b.state_mean) / b.state_std
        return np.stack([bathy, np.sin(lat), np.cos(lat), np.sin(lon), np.cos(lon)])

    @cached_property
    def area_weights(self):
        """cos(latitude) per sea cell."""
        lat, _ = self.grid.mesh()
        return np.cos(np.deg2rad(lat[self.grid.sea_mask]))

    @cached_property
    def topology(self):
        from .graph import GraphTopology

        if self.mesh is None:
            raise ShapeMismatch("graph stepper needs a mesh in its context")
        return GraphTopology(self.grid, self.mesh)

    def sst_stats(self):
        return self.stats[self.var]


def make_features(ctx, prev2, prev1, forcing, days):
    """Feature stack for a batch.

    ``prev2``/``prev1``: (B, n_lat, n_lon) physical SST; ``forcing``:
    (B, 2, n_lat, n_lon) physical winds; ``days``: (B,) target day indices.
    Land cells are zero in every channel.
    """
    prev2 = np.asarray(prev2, dtype=np.float64)
    prev1 = np.asarray(prev1, dtype=np.float64)
    forcing = np.asarray(forcing, dtype=np.float64)
    days = np.atleast_1d(np.asarray(days, dtype=np.float64))
    B = prev1.shape[0]
    shape = ctx.grid.shape
    if prev1.shape != (B, *shape) or prev2.shape != prev1.shape or forcing.shape != (B, 2, *shape):
        raise ShapeMismatch(
            f"inputs {prev2.shape}, {prev1.shape}, {forcing.shape} do not match grid {shape}"
        )
    s = ctx.sst_stats()
    u, v = ctx.stats["u10"], ctx.stats["v10"]
    x = np.empty((B, N_CHANNELS, *shape))
    x[:, 0] = (prev1 - s.state_mean) / s.state_std
    x[:, 1] = (prev1 - prev2 - s.diff_mean) / s.diff_std
    x[:, 2] = (forcing[:, 0] - u.state_mean) / u.state_std
    x[:, 3] = (forcing[:, 1] - v.state_mean) / v.state_std
    x[:, 4:9] = ctx.static_features
    phase = 2 * np.pi * days / DAYS_PER_YEAR
    x[:, 9] = np.sin(phase)[:, None, None]
    x[:, 10] = np.cos(phase)[:, None, None]
    x[:, :, ~ctx.grid.sea_mask] = 0.0
    return x


@dataclass(frozen=True, eq=False)
class StepInput:
    """Two previous SST states, the forcing of the target day, and the target day."""

    ctx: StepContext
    prev2: np.ndarray
    prev1: np.ndarray
    forcing: np.ndarray  # (2, n_lat, n_lon)
    day: int

    def features(self):
        return make_features(self.ctx, self.prev2[None], self.prev1[None], self.forcing[None], [self.day])


def apply_increment(ctx, prev1, inc, residual=True):
    """Residual update on sea cells; land becomes NaN.

    ``residual=False`` (persistence) returns ``prev1`` untouched on sea cells.
    """
    s = ctx.sst_stats()
    if residual:
        out = prev1 + inc * s.diff_std + s.diff_mean
    else:
        out = np.array(prev1, dtype=np.float64)
    out[..., ~ctx.grid.sea_mask] = np.nan
    return out


def step(model, inp):
    prev1 = np.asarray(inp.prev1, dtype=np.float64)
    inc, _ = model.forward(inp.ctx, inp.features())
    return Field(inp.ctx.grid, inp.ctx.var, apply_increment(inp.ctx, prev1[None], inc, model.residual)[0])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Forecast states X^1..X^T (physical units); ``values`` is (T, n_lat, n_lon)."""

    grid: object
    start_day: int
    values: np.ndarray

    @property
    def horizon(self):
        return self.values.shape[0]

    def field(self, lead):
        return Field(self.grid, "sst", self.values[lead - 1])


def _as_array(state):
    return np.asarray(getattr(state, "values", state), dtype=np.float64)


def rollout(model, ctx, init, forcings, horizon, start_day):
    """Autoregressive forecast from ``init = (X^-1, X^0)``.

    ``forcings`` holds F^1..F^T as (T, 2, n_lat, n_lon); step ``t`` targets
    day ``start_day + t``.
    """
    if horizon < 1:
        raise InsufficientForcing(f"horizon must be >= 1, got {horizon}")
    forcings = np.asarray(forcings, dtype=np.float64)
    if forcings.ndim != 4 or forcings.shape[0] < horizon:
        raise InsufficientForcing(f"need {horizon} forcing steps, got {forcings.shape[:1]}")
    prev2, prev1 = (_as_array(s) for s in init)
    out = np.empty((horizon, *ctx.grid.shape))
    for t in range(horizon):
        x = make_features(ctx, prev2[None], prev1[None], forcings[t][None], [start_day + t + 1])
        inc, _ = model.forward(ctx, x)
        nxt = apply_increment(ctx, prev1[None], inc, model.residual)[0]
        out[t] = nxt
        prev2, prev1 = prev1, nxt
    return Trajectory(ctx.grid, int(start_day), out)


def forecast_inputs(series, start_day, horizon, var="sst"):
    """Initial states (X^-1, X^0) at days start_day-1, start_day and the
    forcings F^1..F^T of the following ``horizon`` days."""
    days = range(start_day - 1, start_day + horizon + 1)
    if days[0] < series.epoch or days[-1] >= series.epoch + series.n_time:
        raise InsufficientForcing(
            f"start day {start_day} with horizon {horizon} needs days {days[0]}..{days[-1]}, "
            f"series covers {series.epoch}..{series.epoch + series.n_time - 1}"
        )
    init = (series.field(start_day - 1, var), series.field(start_day, var))
    lo = series.index_of(start_day + 1)
    forcing = np.stack([series.values(v)[lo : lo + horizon] for v in FORCING_VARS], axis=1)
    return init, forcing


def loss_weighted_mse(preds, targets, stats, var="sst"):
    """Cos-latitude and inverse-difference-variance weighted MSE over sea cells."""
    p = _as_array(preds)
    t = _as_array(targets)
    if p.shape != t.shape:
        raise HorizonMismatch(f"prediction shape {p.shape} != target shape {t.shape}")
    grid = preds.grid
    if grid != targets.grid:
        raise ShapeMismatch("predictions and targets are on different grids")
    lat, _ = grid.mesh()
    sea = grid.sea_mask
    a = np.cos(np.deg2rad(lat[sea]))
    err = p[:, sea] - t[:, sea]
    per_step = (a * stats[var].lam * err**2).sum(axis=1) / sea.sum()
    return float(per_step.mean())


# ------------------------------------------------------- one-step samples


@dataclass(frozen=True, eq=False)
class Samples:
    """One-step training examples; physical arrays indexed by sample."""

    days: np.ndarray
    prev2: np.ndarray
    prev1: np.ndarray
    forcing: np.ndarray
    target: np.ndarray

    def __len__(self):
        return len(self.days)

    def subset(self, idx):
        return Samples(self.days[idx], self.prev2[idx], self.prev1[idx], self.forcing[idx], self.target[idx])

    def features(self, ctx):
        return make_features(ctx, self.prev2, self.prev1, self.forcing, self.days)


def one_step_samples(series, days, var="sst"):
    """Samples for every target day whose (t-2, t-1, t) window lies inside ``days``."""
    targets = [t for t in days if (t - 2) in days and (t - 1) in days]
    idx = np.array([series.index_of(t) for t in targets], dtype=int)
    sst = series.values(var)
    forcing = np.stack([series.values(v) for v in FORCING_VARS], axis=1)
    return Samples(np.array(targets), sst[idx - 2], sst[idx - 1], forcing[idx], sst[idx])


def batch_loss(model, ctx, x, prev1, target, want_grad=True):
    """Weighted MSE of one-step predictions, averaged over the batch, and its gradient."""
    inc, cache = model.forward(ctx, x)
    s = ctx.sst_stats()
    sea = ctx.grid.sea_mask
    a = ctx.area_weights
    n = sea.sum()
    B = x.shape[0]
    offset = s.diff_mean if model.residual else 0.0
    err = (prev1[:, sea] + inc[:, sea] * s.diff_std + offset) - target[:, sea]
    loss = float((a * s.lam * err**2).sum() / (n * B))
    if not want_grad:
        return loss, None
    d_inc = np.zeros_like(inc)
    d_inc[:, sea] = 2.0 * a * s.lam * err * s.diff_std / (n * B)
    return loss, model.backward(ctx, cache, d_inc)


def gradient_check(model, ctx, sample, epsilon=1e-5, params=None):
    """Max relative deviation between analytic and central-difference gradients.

    ``sample`` is a :class:`Samples`; ``params`` optionally restricts the
    check to ``{name: flat indices}``. The relative error of each entry is
    ``|a - n| / max(|a|, |n|, floor)`` with ``floor = 1e-3 * max |a|``:
    components a thousand times smaller than the largest one sit below the
    round-off floor of a central difference and are compared on that scale.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-6, 1e-3], got {epsilon}")
    if not model.params:
        return 0.0
    x = sample.features(ctx)
    _, grads = batch_loss(model, ctx, x, sample.prev1, sample.target)
    scale = max(np.abs(g).max() for g in grads.values())
    floor = 1e-3 * scale if scale > 0 else 1e-30
    worst = 0.0
    for name, value in model.params.items():
        flat = value.reshape(-1)
        picks = range(flat.size) if params is None else params.get(name, ())
        g = grads[name].reshape(-1)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + epsilon
            up, _ = batch_loss(model, ctx, x, sample.prev1, sample.target, want_grad=False)
            flat[i] = orig - epsilon
            down, _ = batch_loss(model, ctx, x, sample.prev1, sample.target, want_grad=False)
            flat[i] = orig
            num = (up - down) / (2 * epsilon)
            rel = abs(g[i] - num) / max(abs(g[i]), abs(num), floor)
            worst = max(worst, rel)
    return worst


def one_step_rmse(model, ctx, samples, batch=32):
    """Unweighted RMSE of one-step forecasts over sea cells and samples."""
    sea = ctx.grid.sea_mask
    total, count = 0.0, 0
    for i in range(0, len(samples), batch):
        sub = samples.subset(slice(i, i + batch))
        inc, _ = model.forward(ctx, sub.features(ctx))
        pred = apply_increment(ctx, sub.prev1, inc, model.residual)
        err = pred[:, sea] - sub.target[:, sea]
        total += float((err**2).sum())
        count += err.size
    return float(np.sqrt(total / count))
