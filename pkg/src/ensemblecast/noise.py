"""Seeded Gaussian, Perlin and fractal Perlin perturbation fields.

Perlin noise here is the lattice-gradient form: a random unit gradient sits
at every lattice point, each sample dots the gradients of its cell corners
with its offsets from them, and the dots are blended with the quintic fade
``6u^5 - 15u^4 + 10u^3``. The field is therefore exactly 0 on lattice
points. Shapes that the lattice resolution does not divide are generated on
the next divisible shape and cropped (``strict=True`` refuses instead).
"""

import itertools
from dataclasses import dataclass

import numpy as np

from . import seeding
from .errors import BadOctaves, GridMismatch, NegativeSigma, ResolutionMismatch
from .griddata import Field


@dataclass(frozen=True)
class Gaussian:
    mu: float = 0.0
    sigma: float = 0.1

    kind = "gaussian"

    def __post_init__(self):
        if not self.sigma >= 0:
            raise NegativeSigma(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class Perlin:
    res: tuple
    tileable: tuple = (True, False, False)
    shape: tuple = None

    kind = "perlin"

    def __post_init__(self):
        _check_res(self.res, self.tileable)
        object.__setattr__(self, "res", tuple(int(r) for r in self.res))
        object.__setattr__(self, "tileable", tuple(bool(t) for t in self.tileable))


@dataclass(frozen=True)
class FractalPerlin:
    res: tuple
    tileable: tuple = (False, True)
    octaves: int = 3
    persistence: float = 0.5
    lacunarity: float = 2.0
    scale: float = 0.2
    shape: tuple = None

    kind = "fractal"

    def __post_init__(self):
        _check_res(self.res, self.tileable)
        if int(self.octaves) != self.octaves or self.octaves < 1:
            raise BadOctaves(f"octaves must be an integer >= 1, got {self.octaves}")
        if float(self.lacunarity) != int(self.lacunarity) or self.lacunarity < 1:
            raise ResolutionMismatch(f"lacunarity must be a positive integer, got {self.lacunarity}")
        object.__setattr__(self, "res", tuple(int(r) for r in self.res))
        object.__setattr__(self, "tileable", tuple(bool(t) for t in self.tileable))
        object.__setattr__(self, "octaves", int(self.octaves))
        object.__setattr__(self, "lacunarity", int(self.lacunarity))

    def final_res(self):
        return tuple(r * self.lacunarity ** (self.octaves - 1) for r in self.res)


def _check_res(res, tileable):
    if len(res) != len(tileable):
        raise ResolutionMismatch(f"res {res} and tileable {tileable} differ in rank")
    if any(int(r) != r or r < 1 for r in res):
        raise ResolutionMismatch(f"resolution components must be positive integers, got {res}")


@dataclass(frozen=True, eq=False)
class NoiseField:
    values: np.ndarray
    kind: str
    seed: int


def padded_shape(shape, res, strict=False):
    """Smallest shape >= ``shape`` that ``res`` divides componentwise."""
    if len(shape) != len(res):
        raise ResolutionMismatch(f"shape {shape} and res {res} differ in rank")
    out = []
    for s, r in zip(shape, res):
        if r < 1 or s < 1:
            raise ResolutionMismatch(f"bad shape/res pair {s}/{r}")
        if s % r:
            if strict:
                raise ResolutionMismatch(f"res {r} does not divide shape component {s}")
            s = -(-s // r) * r
        out.append(s)
    return tuple(out)


def gaussian_field(shape, mu, sigma, seed):
    if not sigma >= 0:
        raise NegativeSigma(f"sigma must be >= 0, got {sigma}")
    z = seeding.rng(seed).standard_normal(shape)
    return NoiseField(mu + sigma * z, "gaussian", seed)


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _lattice_gradients(gen, res, tileable):
    ndim = len(res)
    g = gen.standard_normal((*(r + 1 for r in res), ndim))
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    for axis, tile in enumerate(tileable):
        if tile:
            src = [slice(None)] * ndim
            dst = [slice(None)] * ndim
            src[axis], dst[axis] = 0, -1
            g[tuple(dst)] = g[tuple(src)]
    return g


def _evaluate(grads, res, cells, counts):
    """Gradient noise at sample indices 0..counts-1 with ``cells`` samples per lattice cell."""
    ndim = len(res)
    idx, frac = [], []
    for r, d, n in zip(res, cells, counts):
        i = np.arange(n)
        c = np.minimum(i // d, r - 1)
        idx.append(c)
        frac.append((i - c * d) / d)
    fades = [_fade(f) for f in frac]
    out = np.zeros(tuple(counts))
    for corner in itertools.product((0, 1), repeat=ndim):
        g = grads[np.ix_(*[c + k for c, k in zip(idx, corner)])]
        dot = np.zeros(tuple(counts))
        weight = np.ones(tuple(counts))
        for axis, k in enumerate(corner):
            view = [1] * ndim
            view[axis] = counts[axis]
            dot = dot + g[..., axis] * (frac[axis] - k).reshape(view)
            w = fades[axis] if k else 1.0 - fades[axis]
            weight = weight * w.reshape(view)
        out += weight * dot
    return out


def perlin_field(shape, res, tileable, seed, strict=False, wrap=False):
    """Lattice-gradient Perlin noise on ``shape`` with ``res`` lattice cells per axis.

    With ``wrap=True`` every tileable axis gets one extra closing sample, which
    equals the first one exactly.
    """
    shape = tuple(int(s) for s in shape)
    _check_res(res, tileable)
    res = tuple(int(r) for r in res)
    full = padded_shape(shape, res, strict=strict)
    grads = _lattice_gradients(seeding.rng(seed), res, tileable)
    cells = [s // r for s, r in zip(full, res)]
    counts = [s + 1 if (wrap and t) else s for s, t in zip(full, tileable)]
    values = _evaluate(grads, res, cells, counts)
    crop = tuple(slice(0, s + 1 if (wrap and t and s == f) else s) for s, f, t in zip(shape, full, tileable))
    return NoiseField(values[crop], "perlin", seed)


def fractal_perlin_field(shape, cfg, seed, strict=False):
    """Sum of ``cfg.octaves`` Perlin layers, scaled by ``cfg.scale``.

    Octave ``i`` runs at ``res * lacunarity**i`` with amplitude
    ``persistence**i`` and its own sub-seed ``mix(seed, i)``.
    """
    shape = tuple(int(s) for s in shape)
    full = padded_shape(shape, cfg.final_res(), strict=strict)
    total = np.zeros(full)
    amp = 1.0
    for i in range(cfg.octaves):
        res = tuple(r * cfg.lacunarity**i for r in cfg.res)
        total += amp * perlin_field(full, res, cfg.tileable, seeding.mix(seed, i), strict=True).values
        amp *= cfg.persistence
    values = cfg.scale * total
    return NoiseField(values[tuple(slice(0, s) for s in shape)], "fractal", seed)


def noise_for_states(cfg, grid_shape, seed):
    """Perturbation for the two initial states, shape (2, n_lat, n_lon)."""
    n_lat, n_lon = grid_shape
    if isinstance(cfg, Gaussian):
        return gaussian_field((2, n_lat, n_lon), cfg.mu, cfg.sigma, seed).values
    if isinstance(cfg, Perlin):
        shape = (2, n_lat, n_lon)
        if cfg.shape is not None and tuple(cfg.shape) != shape:
            raise GridMismatch(f"Perlin shape {cfg.shape} != states shape {shape}")
        if len(cfg.res) != 3:
            raise ResolutionMismatch("Perlin perturbations need a 3-D (t, y, x) resolution")
        return perlin_field(shape, cfg.res, cfg.tileable, seed).values
    if isinstance(cfg, FractalPerlin):
        if cfg.shape is not None and tuple(cfg.shape) != (n_lat, n_lon):
            raise GridMismatch(f"fractal shape {cfg.shape} != grid shape {(n_lat, n_lon)}")
        if len(cfg.res) != 2:
            raise ResolutionMismatch("fractal perturbations need a 2-D (y, x) resolution")
        return np.stack([fractal_perlin_field((n_lat, n_lon), cfg, seeding.mix(seed, k)).values for k in (0, 1)])
    raise TypeError(f"unknown noise config {cfg!r}")


def perturb_initial_states(states, cfg, seed):
    """Add seeded noise (physical units) to the sea cells of (X^-1, X^0)."""
    prev, cur = states
    if prev.grid != cur.grid:
        raise GridMismatch("initial states live on different grids")
    sea = cur.grid.sea_mask
    noise = noise_for_states(cfg, cur.grid.shape, seed)
    out = []
    for k, state in enumerate((prev, cur)):
        values = np.array(state.values, dtype=np.float64)
        values[sea] = values[sea] + noise[k][sea]
        out.append(Field(state.grid, state.var, values))
    return tuple(out)


def lag1_autocorrelation(values, axis=-1):
    """Pearson correlation between neighbours along ``axis``."""
    a = np.moveaxis(np.asarray(values, dtype=np.float64), axis, -1)
    x, y = a[..., :-1].ravel(), a[..., 1:].ravel()
    return float(np.corrcoef(x, y)[0, 1])


def sign_changes(transect):
    s = np.sign(np.asarray(transect))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))

