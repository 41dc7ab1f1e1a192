"""Probabilistic and deterministic verification per lead time.

All spatial means are over sea cells, unweighted unless cell weights are
given; per-lead statistics pool every start day before any square root.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .ensemble import member_mean
from .errors import GridMismatch, LeadMismatch, LeadOutOfRange, SingleMember
from .griddata import Field, TimeSeries

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "lead",
    "crps",
    "crps_skill",
    "crps_spread",
    "spread",
    "rmse",
    "bias",
    "rmse_debiased",
    "ssr",
    "members",
    "start_days",
)


@dataclass(frozen=True, eq=False)
class VerificationInput:
    """Members ``forecasts`` (S, M, L, N) and observations ``obs`` (S, L, N).

    S start days, M members, L leads, N sea cells. ``weights`` (N,) are
    optional cell weights; they are normalized to sum to one.
    """

    forecasts: np.ndarray
    obs: np.ndarray
    leads: tuple = None
    weights: np.ndarray = None
    variable: str = "sst"

    def __post_init__(self):
        f = np.asarray(self.forecasts, dtype=np.float64)
        o = np.asarray(self.obs, dtype=np.float64)
        if f.ndim != 4 or o.shape != (f.shape[0], f.shape[2], f.shape[3]):
            raise GridMismatch(f"forecasts {f.shape} and obs {o.shape} are not (S,M,L,N)/(S,L,N)")
        object.__setattr__(self, "forecasts", f)
        object.__setattr__(self, "obs", o)
        leads = tuple(range(1, f.shape[2] + 1)) if self.leads is None else tuple(int(x) for x in self.leads)
        if len(leads) != f.shape[2]:
            raise LeadMismatch(f"{len(leads)} lead labels for {f.shape[2]} leads")
        object.__setattr__(self, "leads", leads)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (f.shape[3],) or np.any(w < 0) or w.sum() <= 0:
                raise GridMismatch("cell weights must be non-negative with shape (N,)")
            object.__setattr__(self, "weights", w / w.sum())

    @property
    def n_members(self):
        return self.forecasts.shape[1]

    @property
    def n_starts(self):
        return self.forecasts.shape[0]

    def cell_mean(self, x):
        """Mean over start days and cells of a (S, L, N) array -> (L,)."""
        if self.weights is None:
            return x.mean(axis=(0, 2))
        return (x * self.weights).sum(axis=2).mean(axis=0)


def build_verification_input(ensembles, truth, leads=None, weighted=False, var="sst"):
    """Collect ensemble members and matching truth over sea cells.

    ``ensembles``: EnsembleForecast objects sharing grid and horizon;
    ``truth``: TimeSeries covering every start day + lead.
    """
    grid = truth.grid
    sea = grid.sea_mask
    horizon = ensembles[0].horizon
    leads = tuple(range(1, horizon + 1)) if leads is None else tuple(leads)
    if any(not 1 <= l <= horizon for l in leads):
        raise LeadOutOfRange(f"leads {leads} outside 1..{horizon}")
    vals = truth.values(var)
    fc, ob = [], []
    for ens in ensembles:
        if ens.grid != grid or ens.horizon != horizon:
            raise GridMismatch("ensembles must share the truth grid and one horizon")
        idx = [truth.index_of(ens.start_day + l) for l in leads]
        fc.append(ens.members[:, [l - 1 for l in leads]][..., sea])
        ob.append(vals[idx][:, sea])
    weights = None
    if weighted:
        lat, _ = grid.mesh()
        weights = np.cos(np.deg2rad(lat[sea]))
    return VerificationInput(np.stack(fc), np.stack(ob), leads, weights, var)


def _require_members(inp):
    if inp.n_members < 2:
        raise SingleMember(f"need at least 2 members, got {inp.n_members}")


def _centered(inp):
    """Members minus their mean; exactly zero when all members agree."""
    f = inp.forecasts
    return f - member_mean(np.moveaxis(f, 1, 0))[:, None]


def crps_fair(inp):
    """Fair CRPS per lead and its two terms.

    Returns ``(crps, crps_skill, crps_spread)`` with ``crps_skill`` the mean
    absolute member error and ``crps_spread = sum_{m != n} |f_m - f_n| / (M(M-1))``
    so that ``crps = crps_skill - crps_spread / 2``.
    """
    _require_members(inp)
    M = inp.n_members
    skill = np.abs(inp.forecasts - inp.obs[:, None]).mean(axis=1)
    d = np.sort(_centered(inp), axis=1)
    coef = (2.0 * np.arange(M) - M + 1.0).reshape(1, M, 1, 1)
    # sum over ordered pairs m != n of |f_m - f_n|
    pair_sum = 2.0 * (coef * d).sum(axis=1)
    half_spread = pair_sum / (2.0 * M * (M - 1))
    skill_l = inp.cell_mean(skill)
    half_l = inp.cell_mean(half_spread)
    return skill_l - half_l, skill_l, 2.0 * half_l


def spread(inp):
    """Root of the pooled Bessel-corrected member variance, per lead."""
    _require_members(inp)
    d = _centered(inp)
    var = (d * d).sum(axis=1) / (inp.n_members - 1)
    return np.sqrt(inp.cell_mean(var))


def rmse_and_bias(pred, obs, weights=None):
    """Per-lead (rmse, bias, rmse_debiased) of a (S, L, N) forecast."""
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise GridMismatch(f"prediction {pred.shape} and truth {obs.shape} differ")
    if weights is None:
        def mean(x):
            return x.mean(axis=(0, 2))
    else:
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()

        def mean(x):
            return (x * w).sum(axis=2).mean(axis=0)

    err = pred - obs
    bias = mean(err)
    rmse = np.sqrt(mean(err * err))
    centered = err - bias[None, :, None]
    return rmse, bias, np.sqrt(mean(centered * centered))


def _ratio(num, den, warnings, lead):
    if num == 0.0:
        if den == 0.0:
            warnings.append(f"lead {lead}: spread and debiased RMSE are both 0; ratio set to 0")
        return 0.0
    if den == 0.0:
        return float("inf")
    return float(num / den)


def spread_skill_ratio(inp, corrected=False, warnings=None):
    """Spread over the debiased RMSE of the ensemble mean, per lead.

    ``corrected`` multiplies the spread by sqrt((M+1)/M). A zero spread gives
    0; a zero debiased RMSE with positive spread gives +inf.
    """
    _require_members(inp)
    warnings = [] if warnings is None else warnings
    sp = spread(inp)
    if corrected:
        sp = sp * np.sqrt((inp.n_members + 1) / inp.n_members)
    mean = member_mean(np.moveaxis(inp.forecasts, 1, 0))
    _, _, deb = rmse_and_bias(mean, inp.obs, inp.weights)
    out = np.array([_ratio(s, d, warnings, l) for s, d, l in zip(sp, deb, inp.leads)])
    for w in warnings:
        log.warning(w)
    return out


@dataclass(frozen=True, eq=False)
class MetricSeries:
    leads: tuple
    crps: np.ndarray
    crps_skill: np.ndarray
    crps_spread: np.ndarray
    spread: np.ndarray
    rmse: np.ndarray
    bias: np.ndarray
    rmse_debiased: np.ndarray
    spread_skill_ratio: np.ndarray
    members: int
    start_days: int
    variable: str = "sst"
    warnings: list = field(default_factory=list)

    def at(self, lead):
        try:
            return self.leads.index(lead)
        except ValueError:
            raise LeadMismatch(f"lead {lead} not in {self.leads}") from None

    def rows(self):
        cols = (
            self.crps,
            self.crps_skill,
            self.crps_spread,
            self.spread,
            self.rmse,
            self.bias,
            self.rmse_debiased,
            self.spread_skill_ratio,
        )
        for i, lead in enumerate(self.leads):
            yield [lead, *(float(c[i]) for c in cols), self.members, self.start_days]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in self.rows():
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])

    def select(self, leads):
        idx = [self.at(l) for l in leads]
        arrays = {
            name: np.asarray(getattr(self, name))[idx]
            for name in (
                "crps",
                "crps_skill",
                "crps_spread",
                "spread",
                "rmse",
                "bias",
                "rmse_debiased",
                "spread_skill_ratio",
            )
        }
        return MetricSeries(tuple(leads), **arrays, members=self.members, start_days=self.start_days, variable=self.variable)

    @classmethod
    def from_csv(cls, path, variable="sst"):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_COLUMNS:
                raise LeadMismatch(f"{path}: unexpected metrics header {header}")
            rows = [r for r in reader if r]
        cols = list(zip(*rows))
        arr = [np.array([float(v) for v in c]) for c in cols[1:9]]
        return cls(
            tuple(int(v) for v in cols[0]),
            *arr,
            members=int(cols[9][0]),
            start_days=int(cols[10][0]),
            variable=variable,
        )


def evaluate(inp, corrected=False):
    """Every per-lead metric of an ensemble; RMSE/bias refer to the ensemble mean."""
    warnings = []
    crps, skill, spr_term = crps_fair(inp)
    sp = spread(inp)
    ratio = spread_skill_ratio(inp, corrected=corrected, warnings=warnings)
    mean = member_mean(np.moveaxis(inp.forecasts, 1, 0))
    rmse, bias, deb = rmse_and_bias(mean, inp.obs, inp.weights)
    return MetricSeries(
        inp.leads, crps, skill, spr_term, sp, rmse, bias, deb, ratio,
        inp.n_members, inp.n_starts, inp.variable, warnings,
    )


def evaluate_deterministic(pred, obs, leads=None, weights=None, variable="sst"):
    """Metrics of a single forecast (S, L, N); its CRPS is the absolute error."""
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    rmse, bias, deb = rmse_and_bias(pred, obs, weights)
    inp = VerificationInput(pred[:, None], obs, leads, weights, variable)
    mae = inp.cell_mean(np.abs(pred - obs))
    zeros = np.zeros_like(mae)
    return MetricSeries(inp.leads, mae, mae.copy(), zeros, zeros.copy(), rmse, bias, deb, zeros.copy(), 1, pred.shape[0], variable)


def bias_map(pred, truth, lead):
    """Signed error (pred - truth) per cell at one lead; land is NaN.

    ``truth`` is a TimeSeries (looked up by day) or a Trajectory aligned with
    ``pred``.
    """
    if not 1 <= lead <= pred.horizon:
        raise LeadOutOfRange(f"lead {lead} outside 1..{pred.horizon}")
    if isinstance(truth, TimeSeries):
        if truth.grid != pred.grid:
            raise GridMismatch("prediction and truth grids differ")
        ref = truth.values("sst")[truth.index_of(pred.start_day + lead)]
    else:
        if truth.grid != pred.grid:
            raise GridMismatch("prediction and truth grids differ")
        ref = np.asarray(truth.values)[lead - 1]
    diff = np.asarray(pred.values[lead - 1], dtype=np.float64) - ref
    return Field.masked(pred.grid, "sst", diff)


@dataclass(frozen=True)
class IncreaseReport:
    leads: tuple
    reference: tuple  # reference RMSE per lead
    rows: tuple  # (name, percentages rounded to 2 decimals)

    def format(self, ref_name="Deterministic (ref)"):
        heads = ["Configuration"] + [f"{l} day" if l == 1 else f"{l} days" for l in self.leads]
        lines = [heads, [ref_name] + [f"{v:.3f}" for v in self.reference]]
        lines += [[name] + [f"{p:.2f}%" for p in pct] for name, pct in self.rows]
        width = [max(len(r[i]) for r in lines) for i in range(len(heads))]
        text = []
        for k, row in enumerate(lines):
            text.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, width))))
            if k == 0:
                text.append("-" * len(text[0]))
        return "\n".join(text) + "\n"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["configuration", *(f"lead_{l}" for l in self.leads)])
            writer.writerow(["reference_rmse", *(repr(float(v)) for v in self.reference)])
            for name, pct in self.rows:
                writer.writerow([name, *(f"{p:.2f}" for p in pct)])


def rmse_increase_report(reference, candidates, leads):
    """Percentage RMSE change of each candidate relative to the reference.

    ``candidates`` maps names to MetricSeries (a list gets names c1, c2, ...).
    """
    if not isinstance(candidates, dict):
        candidates = {f"c{i + 1}": c for i, c in enumerate(candidates)}
    leads = tuple(int(l) for l in leads)
    ref = np.array([reference.rmse[reference.at(l)] for l in leads])
    rows = []
    for name, cand in candidates.items():
        vals = np.array([cand.rmse[cand.at(l)] for l in leads])
        pct = 100.0 * (vals - ref) / ref
        rows.append((name, tuple(round(float(p), 2) + 0.0 for p in pct)))
    return IncreaseReport(leads, tuple(float(v) for v in ref), tuple(rows))
