"""Grids, fields, daily time series and the OFS1 file format.

OFS1 layout (little-endian)::

    "OFS1" | u32 n_time, n_lat, n_lon, n_var | i64 epoch_day
    f64 lats[n_lat] | f64 lons[n_lon] | u8 sea_mask[n_lat*n_lon]
    n_var x 32-byte NUL-padded ASCII variable names
    f32 payload [time][var][lat][lon]

Land cells hold the quiet-NaN pattern 0x7FC00000, except for ``bathymetry``
whose land cells hold 0.0.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, shift
from scipy.spatial import cKDTree

from . import seeding
from .errors import (
    BadMagic,
    CadenceMismatch,
    DegenerateVariance,
    EmptyOverlap,
    EnsembleCastError,
    GridMismatch,
    MaskMismatch,
    NonMonotoneAxis,
    TruncatedFile,
)

MAGIC = b"OFS1"
NAME_BYTES = 32
LAND_BITS = 0x7FC00000
LAND_F32 = np.array([LAND_BITS], dtype="<u4").view("<f4")[0]

UNITS = {"sst": "K", "u10": "m/s", "v10": "m/s", "bathymetry": "m"}
STATIC_VARS = frozenset({"bathymetry"})

# bounds of the Canary upwelling domain
DOMAIN_BOUNDS = (19.55, 34.525, -20.97, -5.975)


def units_of(var):
    return UNITS.get(var, "1")


def land_value(var):
    return 0.0 if var in STATIC_VARS else np.nan


@dataclass(frozen=True, eq=False)
class GridSpec:
    lats: np.ndarray
    lons: np.ndarray
    sea_mask: np.ndarray

    def __post_init__(self):
        lats = np.asarray(self.lats, dtype=np.float64)
        lons = np.asarray(self.lons, dtype=np.float64)
        mask = np.asarray(self.sea_mask, dtype=bool)
        if lats.ndim != 1 or lons.ndim != 1 or lats.size == 0 or lons.size == 0:
            raise GridMismatch("lats and lons must be non-empty 1-D arrays")
        if np.any(np.diff(lats) <= 0) or np.any(np.diff(lons) <= 0):
            raise NonMonotoneAxis("lats and lons must be strictly increasing")
        if mask.shape != (lats.size, lons.size):
            raise GridMismatch(f"sea mask shape {mask.shape} != {(lats.size, lons.size)}")
        if not mask.any():
            raise MaskMismatch("grid has no sea cell")
        for name, arr in (("lats", lats), ("lons", lons), ("sea_mask", mask)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_lat(self):
        return self.lats.size

    @property
    def n_lon(self):
        return self.lons.size

    @property
    def shape(self):
        return (self.n_lat, self.n_lon)

    @property
    def n_sea(self):
        return int(self.sea_mask.sum())

    @property
    def bounds(self):
        return (self.lats[0], self.lats[-1], self.lons[0], self.lons[-1])

    def mesh(self):
        """Cell-center coordinates as two (n_lat, n_lon) arrays."""
        return np.meshgrid(self.lats, self.lons, indexing="ij")

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (
            np.array_equal(self.lats, other.lats)
            and np.array_equal(self.lons, other.lons)
            and np.array_equal(self.sea_mask, other.sea_mask)
        )

    __hash__ = None


def regular_grid(n_lat, n_lon, bounds=DOMAIN_BOUNDS, sea_mask=None):
    lat0, lat1, lon0, lon1 = bounds
    lats = np.linspace(lat0, lat1, n_lat)
    lons = np.linspace(lon0, lon1, n_lon)
    if sea_mask is None:
        sea_mask = np.ones((n_lat, n_lon), dtype=bool)
    return GridSpec(lats, lons, sea_mask)


def domain_grid(n_lat=300, n_lon=300):
    """Grid over the Canary upwelling domain with a schematic African coast and islands."""
    grid = regular_grid(n_lat, n_lon)
    lat, lon = grid.mesh()
    return GridSpec(grid.lats, grid.lons, _coast_sea_mask(lat, lon))


def _coast_lon(lat):
    # straight-line stand-in for the Moroccan/Saharan coast
    return -17.0 + (lat - 19.55) * (11.0 / 14.975)


def _coast_sea_mask(lat, lon):
    sea = lon < _coast_lon(lat)
    for clat, clon, rad in ((28.3, -16.6, 0.35), (28.1, -15.5, 0.3), (28.8, -13.8, 0.3)):
        sea &= (lat - clat) ** 2 + (lon - clon) ** 2 > rad**2
    return sea


def _check_sea_values(grid, var, values):
    mask = grid.sea_mask
    if not np.all(np.isfinite(values[..., mask])):
        raise MaskMismatch(f"{var}: non-finite value on a sea cell")
    land = values[..., ~mask]
    if var in STATIC_VARS:
        if np.any(land != 0.0):
            raise MaskMismatch(f"{var}: land cells must be 0")
    elif np.any(np.isfinite(land)):
        raise MaskMismatch(f"{var}: finite value on a land cell")


@dataclass(frozen=True, eq=False)
class Field:
    grid: GridSpec
    var: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != self.grid.shape:
            raise GridMismatch(f"field shape {values.shape} != grid {self.grid.shape}")
        _check_sea_values(self.grid, self.var, values)
        object.__setattr__(self, "values", values)

    @property
    def units(self):
        return units_of(self.var)

    @classmethod
    def masked(cls, grid, var, values):
        """Build a field, forcing land cells to the variable's missing marker."""
        values = np.array(values, dtype=np.float64)
        values[~grid.sea_mask] = land_value(var)
        return cls(grid, var, values)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Daily stack of fields; ``data`` is indexed [time][var][lat][lon]."""

    grid: GridSpec
    vars: tuple
    epoch: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        vars_ = tuple(self.vars)
        if data.ndim != 4 or data.shape[1:] != (len(vars_), *self.grid.shape):
            raise GridMismatch(
                f"data shape {data.shape} inconsistent with {len(vars_)} vars on {self.grid.shape}"
            )
        if len(set(vars_)) != len(vars_):
            raise EnsembleCastError(f"duplicate variable names in {vars_}")
        for k, var in enumerate(vars_):
            _check_sea_values(self.grid, var, data[:, k])
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "vars", vars_)
        object.__setattr__(self, "epoch", int(self.epoch))

    @property
    def n_time(self):
        return self.data.shape[0]

    @property
    def days(self):
        return np.arange(self.epoch, self.epoch + self.n_time)

    def var_index(self, var):
        try:
            return self.vars.index(var)
        except ValueError:
            raise EnsembleCastError(f"variable {var!r} not in series {self.vars}") from None

    def index_of(self, day):
        idx = int(day) - self.epoch
        if not 0 <= idx < self.n_time:
            raise EnsembleCastError(f"day {day} outside series [{self.epoch}, {self.epoch + self.n_time})")
        return idx

    def values(self, var):
        """All time steps of one variable as float64, shape (T, n_lat, n_lon)."""
        return self.data[:, self.var_index(var)].astype(np.float64)

    def field(self, day, var):
        return Field(self.grid, var, self.data[self.index_of(day), self.var_index(var)].astype(np.float64))


@dataclass(frozen=True)
class DayRange:
    """Half-open range of absolute day indices."""

    start: int
    stop: int

    def __post_init__(self):
        if self.stop <= self.start:
            raise EnsembleCastError(f"empty day range [{self.start}, {self.stop})")

    def __len__(self):
        return self.stop - self.start

    def __contains__(self, day):
        return self.start <= day < self.stop

    def __iter__(self):
        return iter(range(self.start, self.stop))

    @classmethod
    def parse(cls, text):
        a, b = text.split(":")
        return cls(int(a), int(b))

    def __str__(self):
        return f"{self.start}:{self.stop}"


@dataclass(frozen=True)
class DatasetSplit:
    train: DayRange
    val: DayRange
    test: DayRange

    def __post_init__(self):
        if not (self.train.stop <= self.val.start and self.val.stop <= self.test.start):
            raise EnsembleCastError("split ranges must be disjoint and ordered train < val < test")


# ---------------------------------------------------------------- file I/O


def save_series(series, path):
    grid = series.grid
    header = MAGIC + struct.pack(
        "<IIIIq", series.n_time, grid.n_lat, grid.n_lon, len(series.vars), series.epoch
    )
    parts = [
        header,
        grid.lats.astype("<f8").tobytes(),
        grid.lons.astype("<f8").tobytes(),
        grid.sea_mask.astype("u1").tobytes(),
    ]
    for var in series.vars:
        raw = var.encode("ascii")
        if len(raw) > NAME_BYTES:
            raise EnsembleCastError(f"variable name {var!r} longer than {NAME_BYTES} bytes")
        parts.append(raw.ljust(NAME_BYTES, b"\0"))
    payload = np.array(series.data, dtype="<f4")
    land = ~grid.sea_mask
    for k, var in enumerate(series.vars):
        payload[:, k][:, land] = 0.0 if var in STATIC_VARS else LAND_F32
    parts.append(payload.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_series(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, got {buf[:4]!r}")
    pos = 4
    need = struct.calcsize("<IIIIq")
    if len(buf) < pos + need:
        raise TruncatedFile(f"{path}: header truncated")
    n_time, n_lat, n_lon, n_var, epoch = struct.unpack_from("<IIIIq", buf, pos)
    pos += need
    body = 8 * n_lat + 8 * n_lon + n_lat * n_lon + NAME_BYTES * n_var
    payload_bytes = 4 * n_time * n_var * n_lat * n_lon
    if len(buf) < pos + body + payload_bytes:
        raise TruncatedFile(f"{path}: expected {pos + body + payload_bytes} bytes, got {len(buf)}")
    if len(buf) > pos + body + payload_bytes:
        raise EnsembleCastError(f"{path}: trailing bytes after payload")
    lats = np.frombuffer(buf, "<f8", n_lat, pos).astype(np.float64)
    pos += 8 * n_lat
    lons = np.frombuffer(buf, "<f8", n_lon, pos).astype(np.float64)
    pos += 8 * n_lon
    if np.any(np.diff(lats) <= 0) or np.any(np.diff(lons) <= 0):
        raise NonMonotoneAxis(f"{path}: coordinate axes must be strictly increasing")
    raw_mask = np.frombuffer(buf, "u1", n_lat * n_lon, pos).reshape(n_lat, n_lon)
    pos += n_lat * n_lon
    if np.any(raw_mask > 1):
        raise MaskMismatch(f"{path}: sea mask bytes must be 0 or 1")
    names = []
    for _ in range(n_var):
        names.append(buf[pos : pos + NAME_BYTES].rstrip(b"\0").decode("ascii"))
        pos += NAME_BYTES
    data = np.frombuffer(buf, "<f4", n_time * n_var * n_lat * n_lon, pos)
    data = data.reshape(n_time, n_var, n_lat, n_lon).astype(np.float32)
    grid = GridSpec(lats, lons, raw_mask.astype(bool))
    return TimeSeries(grid, tuple(names), epoch, data)


# ------------------------------------------------------------ statistics


@dataclass(frozen=True)
class VarStats:
    state_mean: float
    state_std: float
    diff_mean: float = 0.0
    diff_std: float = 1.0

    @property
    def lam(self):
        """Loss weight: inverse variance of one-day differences."""
        return 1.0 / self.diff_std**2


@dataclass(frozen=True)
class NormStats:
    vars: dict

    def __getitem__(self, var):
        return self.vars[var]

    def to_dict(self):
        return {
            var: {
                "state_mean": s.state_mean,
                "state_std": s.state_std,
                "diff_mean": s.diff_mean,
                "diff_std": s.diff_std,
                "lambda": s.lam,
            }
            for var, s in self.vars.items()
        }


def compute_norm_stats(series, split):
    """Per-variable state and one-day-difference moments over train days.

    Population moments over sea cells. Static variables only get state
    moments (their difference stats are fixed at mean 0, std 1).
    """
    days = split.train if isinstance(split, DatasetSplit) else split
    i0, i1 = series.index_of(days.start), series.index_of(days.stop - 1) + 1
    if i1 - i0 < 2:
        raise EnsembleCastError("train range must contain at least 2 days")
    mask = series.grid.sea_mask
    out, bad = {}, []
    for k, var in enumerate(series.vars):
        x = series.data[i0:i1, k][:, mask].astype(np.float64)
        stats = dict(state_mean=float(x.mean()), state_std=float(x.std()))
        if var not in STATIC_VARS:
            d = np.diff(x, axis=0)
            stats.update(diff_mean=float(d.mean()), diff_std=float(d.std()))
            if stats["diff_std"] == 0.0:
                bad.append(f"{var}.diff_std")
        if stats["state_std"] == 0.0:
            bad.append(f"{var}.state_std")
        out[var] = VarStats(**stats)
    result = NormStats(out)
    if bad:
        raise DegenerateVariance("zero standard deviation: " + ", ".join(bad), stats=result)
    return result


# ------------------------------------------------------------ regridding


def regrid_nearest(field, target):
    """Nearest-cell-center resampling in plain lat/lon distance.

    Only source sea cells are candidates (every cell for bathymetry, whose
    land is a valid 0).
    """
    src = field.grid
    lat0, lat1, lon0, lon1 = src.bounds
    hlat = (lat1 - lat0) / max(src.n_lat - 1, 1) / 2 if src.n_lat > 1 else 0.5
    hlon = (lon1 - lon0) / max(src.n_lon - 1, 1) / 2 if src.n_lon > 1 else 0.5
    t0, t1, u0, u1 = target.bounds
    if t1 < lat0 - hlat or t0 > lat1 + hlat or u1 < lon0 - hlon or u0 > lon1 + hlon:
        raise EmptyOverlap("source and target grids do not overlap")

    slat, slon = src.mesh()
    cand = np.ones(src.shape, bool) if field.var in STATIC_VARS else src.sea_mask.copy()
    cand &= np.isfinite(field.values)
    if not cand.any():
        raise EmptyOverlap("source field has no usable cells")
    tree = cKDTree(np.column_stack([slat[cand], slon[cand]]))
    tlat, tlon = target.mesh()
    sea = target.sea_mask
    _, idx = tree.query(np.column_stack([tlat[sea], tlon[sea]]))
    out = np.full(target.shape, land_value(field.var))
    out[sea] = field.values[cand][idx]
    return Field(target, field.var, out)


def aggregate_daily(values, k):
    """Mean over consecutive blocks of ``k`` sub-daily steps along axis 0."""
    values = np.asarray(values, dtype=np.float64)
    if k < 1 or values.shape[0] % k:
        raise CadenceMismatch(f"{values.shape[0]} steps is not a multiple of {k} per day")
    return values.reshape(values.shape[0] // k, k, *values.shape[1:]).mean(axis=1)


# ---------------------------------------------------- synthetic dataset


@dataclass(frozen=True)
class SynthParams:
    """Knobs of the synthetic generator; defaults give ~0.1 K daily changes."""

    base_sst: float = 291.0
    meridional_gradient: float = -0.35  # K per degree latitude
    seasonal_amplitude: float = 2.0
    seasonal_phase_day: float = 110.0
    anomaly_std: float = 0.8
    anomaly_damping: float = 0.96
    advection: tuple = (0.3, 0.45)  # cells per day (lat, lon)
    wind_coupling: float = 0.025  # K per (m/s) of zonal wind anomaly
    innovation_std: float = 0.015
    wind_mean: tuple = (-4.0, -3.0)
    wind_std: tuple = (2.5, 2.0)
    wind_memory: float = 0.8
    length_scale: float = 0.125  # fraction of the grid extent


def _smooth_noise(gen, shape, sigma):
    z = gaussian_filter(gen.standard_normal(shape), sigma=sigma, mode="wrap")
    return z / z.std()


def make_synthetic_dataset(grid, n_days, seed, epoch=0, params=None):
    """Deterministic desk-scale stand-in for the SST/wind/bathymetry data.

    SST is a seasonal sinusoid plus a meridional gradient plus a smooth
    anomaly that is advected, damped, pushed by the zonal wind and nudged
    by a small smooth innovation each day. Winds are smooth AR(1) fields
    around trade-wind means. Bathymetry deepens away from the coast.
    """
    if n_days < 3:
        raise EnsembleCastError(f"n_days must be >= 3, got {n_days}")
    p = params or SynthParams()
    gen = seeding.rng(seed)
    shape = grid.shape
    sigma = max(1.5, p.length_scale * max(shape))
    lat, lon = grid.mesh()
    mask = grid.sea_mask

    wu = _smooth_noise(gen, shape, sigma)
    wv = _smooth_noise(gen, shape, sigma)
    anom = p.anomaly_std * _smooth_noise(gen, shape, sigma)
    depth = np.clip(_coast_lon(lat) - lon, 0.0, None)
    bathy = 4000.0 * (1.0 - np.exp(-depth / 3.0)) + 150.0 * _smooth_noise(gen, shape, sigma)
    bathy = np.where(mask, np.clip(bathy, 10.0, None), 0.0)

    rho = p.wind_memory
    lat_c = 0.5 * (grid.lats[0] + grid.lats[-1])
    out = np.empty((n_days, 4, *shape), dtype=np.float64)
    for t in range(n_days):
        if t > 0:
            wu = rho * wu + np.sqrt(1 - rho**2) * _smooth_noise(gen, shape, sigma)
            wv = rho * wv + np.sqrt(1 - rho**2) * _smooth_noise(gen, shape, sigma)
            anom = p.anomaly_damping * shift(anom, p.advection, order=1, mode="nearest")
            anom += p.wind_coupling * p.wind_std[0] * wu
            anom += p.innovation_std * _smooth_noise(gen, shape, sigma)
        day = epoch + t
        season = p.seasonal_amplitude * np.sin(2 * np.pi * (day - p.seasonal_phase_day) / 365.25)
        sst = p.base_sst + p.meridional_gradient * (lat - lat_c) + season + anom
        out[t, 0] = sst
        out[t, 1] = p.wind_mean[0] + p.wind_std[0] * wu
        out[t, 2] = p.wind_mean[1] + p.wind_std[1] * wv
        out[t, 3] = bathy
    out[:, :3, ~mask] = np.nan
    return TimeSeries(grid, ("sst", "u10", "v10", "bathymetry"), epoch, out.astype(np.float32))
