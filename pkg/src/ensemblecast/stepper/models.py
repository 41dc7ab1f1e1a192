"""Persistence and linear-stencil steppers."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import seeding
from ..errors import ShapeMismatch
from .core import N_CHANNELS


class Persistence:
    """Zero increment: X^t = X^{t-1} exactly (the residual offset is skipped)."""

    kind = "persistence"
    residual = False

    def __init__(self, params=None):
        self.params = {}

    @property
    def meta(self):
        return {}

    def replace(self, params):
        return self

    def forward(self, ctx, x):
        return np.zeros((x.shape[0], *x.shape[2:])), None

    def backward(self, ctx, cache, d_inc):
        return {}


def _patches(x):
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(padded, (3, 3), axis=(2, 3))  # (B, C, H, W, 3, 3)


class LinearStencil:
    """Increment = 3x3 correlation of every input channel plus a bias.

    The stencil sees zero outside the grid and on land.
    """

    kind = "linear"
    residual = True

    def __init__(self, params):
        w = np.asarray(params["weight"], dtype=np.float64)
        b = np.asarray(params["bias"], dtype=np.float64).reshape(1)
        if w.shape != (N_CHANNELS, 3, 3):
            raise ShapeMismatch(f"stencil weight shape {w.shape} != {(N_CHANNELS, 3, 3)}")
        self.params = {"weight": w.copy(), "bias": b.copy()}

    @classmethod
    def zeros(cls):
        return cls({"weight": np.zeros((N_CHANNELS, 3, 3)), "bias": np.zeros(1)})

    @classmethod
    def init(cls, seed, std=1e-3):
        gen = seeding.rng(seed)
        return cls({"weight": std * gen.standard_normal((N_CHANNELS, 3, 3)), "bias": np.zeros(1)})

    @property
    def meta(self):
        return {}

    def replace(self, params):
        return LinearStencil(params)

    def forward(self, ctx, x):
        p = _patches(x)
        inc = np.einsum("bchwij,cij->bhw", p, self.params["weight"]) + self.params["bias"][0]
        inc[:, ~ctx.grid.sea_mask] = 0.0
        return inc, p

    def backward(self, ctx, p, d_inc):
        d = np.where(ctx.grid.sea_mask, d_inc, 0.0)
        return {
            "weight": np.einsum("bchwij,bhw->cij", p, d),
            "bias": np.array([d.sum()]),
        }
