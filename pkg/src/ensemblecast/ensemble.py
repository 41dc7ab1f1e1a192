"""Ensembles from perturbed initial states.

Member ``m`` perturbs (X^-1, X^0) with seed ``mix(base_seed, m)`` and rolls the
same stepper forward; only the initial ocean states are perturbed.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import seeding
from .errors import EnsembleCastError
from .noise import perturb_initial_states
from .stepper.core import Trajectory, rollout

THREADS_ENV = "ENSEMBLECAST_THREADS"


@dataclass(frozen=True)
class EnsembleConfig:
    members: int
    noise: object
    base_seed: int = 0
    horizon: int = 15

    def __post_init__(self):
        if self.members < 2:
            raise EnsembleCastError(f"an ensemble needs at least 2 members, got {self.members}")
        if self.horizon < 1:
            raise EnsembleCastError(f"horizon must be >= 1, got {self.horizon}")

    def member_seed(self, m):
        return seeding.mix(self.base_seed, m)


@dataclass(frozen=True, eq=False)
class EnsembleForecast:
    """``members`` is (M, T, n_lat, n_lon); ``mean`` a :class:`Trajectory`."""

    grid: object
    start_day: int
    members: np.ndarray
    mean: Trajectory
    config: EnsembleConfig

    @property
    def n_members(self):
        return self.members.shape[0]

    @property
    def horizon(self):
        return self.members.shape[1]

    def member(self, m):
        return Trajectory(self.grid, self.start_day, self.members[m])


def thread_cap(default=None):
    raw = os.environ.get(THREADS_ENV)
    if raw:
        return max(1, int(raw))
    return default or min(8, os.cpu_count() or 1)


def member_mean(stack):
    """Mean over axis 0, computed as ``first + mean(x - first)``.

    Identical members therefore average to themselves bit for bit.
    """
    stack = np.asarray(stack, dtype=np.float64)
    first = stack[0]
    return first + (stack - first).mean(axis=0)


def ensemble_mean(forecast):
    return Trajectory(forecast.grid, forecast.start_day, member_mean(forecast.members))


def run_ensemble(model, ctx, init, forcings, cfg, start_day, threads=None):
    """Perturb, roll out and average ``cfg.members`` members.

    Members run on up to ``threads`` worker threads (default: the
    ``ENSEMBLECAST_THREADS`` cap); results do not depend on the thread count.
    """

    def one(m):
        states = perturb_initial_states(init, cfg.noise, cfg.member_seed(m))
        return rollout(model, ctx, states, forcings, cfg.horizon, start_day).values

    workers = threads or thread_cap()
    if workers == 1:
        outs = [one(m) for m in range(cfg.members)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(one, range(cfg.members)))
    members = np.stack(outs)
    mean = Trajectory(ctx.grid, int(start_day), member_mean(members))
    return EnsembleForecast(ctx.grid, int(start_day), members, mean, cfg)
