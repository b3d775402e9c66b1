"""Vital-sign records: ingestion, cleaning, scaling, corruption and simulation.

Times are minutes since admission. The model window is ``[0, 360)``; the
seventh hour ``[360, 420)`` is kept separately and only feeds the extrema
labels.
"""
import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .seeding import as_generator

log = logging.getLogger(__name__)

VARIABLES = ("SBP", "DBP", "HR", "TEMP", "SPO2", "RR")
VAR_INDEX = {v: i for i, v in enumerate(VARIABLES)}
# direction of the seventh-hour extreme used as auxiliary label
EXTREMA_KIND = ("min", "min", "max", "max", "min", "max")

WINDOW_END = 360.0
SEVENTH_END = 420.0
CSV_HEADER = ("encounter_id", "variable", "t_minutes", "value")


@dataclass
class IrregularSeries:
    variable: str
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        if self.t.shape != self.x.shape:
            raise ValueError(f"{self.variable}: {self.t.size} times but {self.x.size} values")

    def __len__(self):
        return self.t.size

    def __eq__(self, other):
        return (isinstance(other, IrregularSeries) and self.variable == other.variable
                and np.array_equal(self.t, other.t) and np.array_equal(self.x, other.x))

    @property
    def points(self):
        return list(zip(self.t.tolist(), self.x.tolist()))


def empty_series():
    return tuple(IrregularSeries(v) for v in VARIABLES)


@dataclass
class Encounter:
    id: str
    series: tuple
    seventh_hour: tuple = None
    planted_label: int = None
    is_fake: bool = False

    def __post_init__(self):
        self.series = tuple(self.series)
        if [s.variable for s in self.series] != list(VARIABLES):
            raise ValueError(f"encounter {self.id}: series must follow order {VARIABLES}")
        if self.seventh_hour is not None:
            self.seventh_hour = tuple(self.seventh_hour)
        if self.is_fake and self.seventh_hour is not None:
            raise ValueError(f"encounter {self.id}: fake encounters carry no seventh-hour data")

    def __getitem__(self, variable):
        return self.series[VAR_INDEX[variable]]

    @property
    def n_obs(self):
        return sum(len(s) for s in self.series)


# ---------------------------------------------------------------------------
# Ranges and scaling statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariableRange:
    lo: float
    hi: float
    lo_open: bool
    hi_open: bool
    impute_mean: float
    expected_freq_per_hour: float = 2.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"range requires lo < hi, got ({self.lo}, {self.hi})")
        if not self.contains(self.impute_mean):
            raise ValueError(f"impute mean {self.impute_mean} outside ({self.lo}, {self.hi})")

    def contains(self, x):
        x = np.asarray(x)
        lo_ok = x > self.lo if self.lo_open else x >= self.lo
        hi_ok = x < self.hi if self.hi_open else x <= self.hi
        return lo_ok & hi_ok

    def as_dict(self):
        return {"lo": self.lo, "hi": self.hi, "lo_open": self.lo_open, "hi_open": self.hi_open,
                "impute_mean": self.impute_mean, "expected_freq_per_hour": self.expected_freq_per_hour}


def ranges_from_dict(data):
    missing = [v for v in VARIABLES if v not in data]
    if missing:
        raise ValueError(f"ranges missing variables: {missing}")
    unknown = sorted(set(data) - set(VARIABLES))
    if unknown:
        raise ValueError(f"ranges for unknown variables: {unknown}")
    return {v: VariableRange(**data[v]) for v in VARIABLES}


def load_ranges(path=None):
    """Ranges from a JSON file; the shipped default when ``path`` is None."""
    if path is None:
        text = resources.files("dtic").joinpath("data/vital_ranges.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return ranges_from_dict(json.loads(text))


@dataclass
class ScalerStats:
    min_obs: np.ndarray
    max_obs: np.ndarray

    def __post_init__(self):
        self.min_obs = np.asarray(self.min_obs, dtype=np.float64)
        self.max_obs = np.asarray(self.max_obs, dtype=np.float64)
        if np.any(self.min_obs > self.max_obs):
            raise ValueError("scaler requires min_obs <= max_obs")

    def as_dict(self):
        return {v: {"min_obs": float(lo), "max_obs": float(hi)}
                for v, lo, hi in zip(VARIABLES, self.min_obs, self.max_obs)}

    @classmethod
    def from_dict(cls, data):
        return cls([data[v]["min_obs"] for v in VARIABLES], [data[v]["max_obs"] for v in VARIABLES])


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RowError:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


class CohortParseError(ValueError):
    def __init__(self, errors, n_rows):
        self.errors = list(errors)
        self.n_rows = n_rows
        shown = "; ".join(str(e) for e in self.errors[:5])
        more = f" (+{len(self.errors) - 5} more)" if len(self.errors) > 5 else ""
        super().__init__(f"{len(self.errors)} of {n_rows} rows failed: {shown}{more}")


def _parse_row(row):
    if len(row) != 4:
        raise ValueError(f"expected 4 columns, got {len(row)}")
    enc, var, t_raw, x_raw = (c.strip() for c in row)
    if not enc:
        raise ValueError("empty encounter_id")
    if var not in VAR_INDEX:
        raise ValueError(f"unknown variable {var!r}")
    try:
        t = float(t_raw)
    except ValueError:
        raise ValueError(f"unparseable t_minutes {t_raw!r}") from None
    try:
        x = float(x_raw)
    except ValueError:
        raise ValueError(f"unparseable value {x_raw!r}") from None
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"t_minutes must be finite and non-negative, got {t_raw!r}")
    if not math.isfinite(x):
        raise ValueError(f"value must be finite, got {x_raw!r}")
    return enc, var, t, x


def parse_cohort(stream, max_error_fraction=0.01):
    """Read the long-format CSV into encounters, in order of first appearance.

    Bad rows are skipped with a warning unless they exceed
    ``max_error_fraction`` of all data rows, in which case
    :class:`CohortParseError` is raised. Duplicate (encounter, variable, t)
    rows keep the last value.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip().lstrip("﻿") for h in header) != CSV_HEADER:
        raise CohortParseError([RowError(1, f"header must be {','.join(CSV_HEADER)}")], 0)
    groups = {}
    errors = []
    n_rows = 0
    duplicates = 0
    for line, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        n_rows += 1
        try:
            enc, var, t, x = _parse_row(row)
        except ValueError as exc:
            errors.append(RowError(line, str(exc)))
            continue
        bucket = groups.setdefault(enc, {}).setdefault(var, {})
        if t in bucket:
            duplicates += 1
        bucket[t] = x
    if errors and len(errors) > max_error_fraction * max(n_rows, 1):
        raise CohortParseError(errors, n_rows)
    for err in errors:
        log.warning("skipped %s", err)
    if duplicates:
        log.warning("%d duplicate (encounter, variable, t) rows; kept the last value", duplicates)
        warnings.warn(f"{duplicates} duplicate rows collapsed (last value kept)", stacklevel=2)
    return [_build_encounter(enc, by_var) for enc, by_var in groups.items()]


def _build_encounter(enc_id, by_var):
    window, seventh = [], []
    has_seventh = False
    for v in VARIABLES:
        pts = sorted(by_var.get(v, {}).items())
        t = np.array([p[0] for p in pts], dtype=np.float64)
        x = np.array([p[1] for p in pts], dtype=np.float64)
        early = t < WINDOW_END
        late = (t >= WINDOW_END) & (t < SEVENTH_END)
        has_seventh |= bool(late.any())
        window.append(IrregularSeries(v, t[early], x[early]))
        seventh.append(IrregularSeries(v, t[late], x[late]))
    return Encounter(enc_id, window, seventh if has_seventh else None)


def write_cohort(encounters, stream):
    """Inverse of :func:`parse_cohort` (floats written with ``repr``)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for enc in encounters:
        parts = [enc.series] + ([enc.seventh_hour] if enc.seventh_hour is not None else [])
        for group in parts:
            for s in group:
                for t, x in zip(s.t.tolist(), s.x.tolist()):
                    writer.writerow((enc.id, s.variable, repr(t), repr(x)))


def read_labels(stream, column="label"):
    """``encounter_id,<column>`` CSV to a dict; integer-valued cells become ints."""
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or "encounter_id" not in reader.fieldnames or column not in reader.fieldnames:
        raise ValueError(f"labels file needs columns encounter_id,{column}")
    out = {}
    for row in reader:
        value = row[column].strip()
        try:
            out[row["encounter_id"].strip()] = int(value)
        except ValueError:
            out[row["encounter_id"].strip()] = value
    return out


# ---------------------------------------------------------------------------
# Cleaning, eligibility, imputation, scaling
# ---------------------------------------------------------------------------


def clean(series, ranges):
    keep = ranges[series.variable].contains(series.x)
    return IrregularSeries(series.variable, series.t[keep], series.x[keep])


def clean_encounter(enc, ranges):
    seventh = None if enc.seventh_hour is None else tuple(clean(s, ranges) for s in enc.seventh_hour)
    return replace(enc, series=tuple(clean(s, ranges) for s in enc.series), seventh_hour=seventh)


def eligibility(enc):
    """False when two or more of the six series are empty over the window."""
    empty = sum(1 for s in enc.series if np.count_nonzero(s.t < WINDOW_END) == 0)
    return empty < 2


def impute_missing(enc, ranges):
    series = tuple(
        s if len(s) else IrregularSeries(s.variable, [0.0], [ranges[s.variable].impute_mean])
        for s in enc.series
    )
    return replace(enc, series=series)


def fit_scaler(cohort):
    lo = np.full(len(VARIABLES), np.inf)
    hi = np.full(len(VARIABLES), -np.inf)
    for enc in cohort:
        for d, s in enumerate(enc.series):
            if len(s):
                lo[d] = min(lo[d], s.x.min())
                hi[d] = max(hi[d], s.x.max())
    unseen = ~np.isfinite(lo)
    if unseen.any():
        warnings.warn(f"no observations for {[VARIABLES[d] for d in np.flatnonzero(unseen)]}; scaler set to 0",
                      stacklevel=2)
        lo[unseen] = 0.0
        hi[unseen] = 0.0
    return ScalerStats(lo, hi)


def _scale_values(x, d, stats):
    lo, hi = stats.min_obs[d], stats.max_obs[d]
    if hi == lo:
        return np.zeros_like(x)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def scale(enc, stats):
    """Min-max scale into [0, 1]; values outside the fitted range are clipped."""
    degenerate = [VARIABLES[d] for d in range(len(VARIABLES)) if stats.max_obs[d] == stats.min_obs[d]]
    if degenerate:
        warnings.warn(f"constant scaler for {degenerate}; scaled values set to 0", stacklevel=2)

    def conv(group):
        return tuple(IrregularSeries(s.variable, s.t, _scale_values(s.x, d, stats)) for d, s in enumerate(group))

    seventh = None if enc.seventh_hour is None else conv(enc.seventh_hour)
    return replace(enc, series=conv(enc.series), seventh_hour=seventh)


def inverse_scale(enc, stats):
    def conv(group):
        return tuple(
            IrregularSeries(s.variable, s.t, stats.min_obs[d] + s.x * (stats.max_obs[d] - stats.min_obs[d]))
            for d, s in enumerate(group)
        )

    seventh = None if enc.seventh_hour is None else conv(enc.seventh_hour)
    return replace(enc, series=conv(enc.series), seventh_hour=seventh)


@dataclass
class PreprocessReport:
    n_input: int
    n_eligible: int
    excluded: list
    dropped_outliers: dict

    def as_dict(self):
        return {"n_input": self.n_input, "n_eligible": self.n_eligible,
                "n_excluded": len(self.excluded), "excluded": list(self.excluded),
                "dropped_outliers": dict(self.dropped_outliers)}


def preprocess(encounters, ranges, scaler=None):
    """clean -> eligibility -> scaler fit (cleaned, pre-imputation) -> impute -> scale.

    Pass ``scaler`` to reuse training statistics on held-out data.
    Returns ``(scaled encounters, scaler, report)``.
    """
    dropped = {v: 0 for v in VARIABLES}
    cleaned, excluded = [], []
    for enc in encounters:
        c = clean_encounter(enc, ranges)
        for d, v in enumerate(VARIABLES):
            dropped[v] += len(enc.series[d]) - len(c.series[d])
            if enc.seventh_hour is not None:
                dropped[v] += len(enc.seventh_hour[d]) - len(c.seventh_hour[d])
        if eligibility(c):
            cleaned.append(c)
        else:
            excluded.append(enc.id)
    if scaler is None:
        scaler = fit_scaler(cleaned)
    out = [scale(impute_missing(c, ranges), scaler) for c in cleaned]
    return out, scaler, PreprocessReport(len(encounters), len(out), excluded, dropped)


# ---------------------------------------------------------------------------
# Fake series and auxiliary labels
# ---------------------------------------------------------------------------


def fake_mask_padded(cnt, width, rng, fraction=0.5):
    """Boolean ``(B, V, width)`` mask selecting floor(fraction * n) distinct
    valid slots per row, uniformly without replacement."""
    valid = np.arange(width)[None, None, :] < cnt[:, :, None]
    keys = rng.random(valid.shape)
    keys[~valid] = 2.0
    ranks = np.argsort(np.argsort(keys, axis=-1, kind="stable"), axis=-1, kind="stable")
    n_replace = np.floor(cnt * fraction).astype(np.int64)
    return ranks < n_replace[:, :, None]


def make_fake(enc, fraction=0.5, seed=0):
    """Copy of ``enc`` with floor(fraction * I) values per series replaced by U[0, 1] draws."""
    rng = as_generator(seed, "fake")
    cnt = np.array([[len(s) for s in enc.series]])
    width = max(1, int(cnt.max()))
    mask = fake_mask_padded(cnt, width, rng, fraction)[0]
    draws = rng.random(mask.shape)
    series = []
    for d, s in enumerate(enc.series):
        x = s.x.copy()
        m = mask[d, :len(s)]
        x[m] = draws[d, :len(s)][m]
        series.append(IrregularSeries(s.variable, s.t.copy(), x))
    return Encounter(enc.id + "#fake", series, None, enc.planted_label, True)


def extrema_labels(enc):
    """Seventh-hour extremes in canonical variable order; NaN where absent."""
    out = np.full(len(VARIABLES), np.nan)
    if enc.seventh_hour is None:
        return out
    for d, s in enumerate(enc.seventh_hour):
        sel = (s.t >= WINDOW_END) & (s.t < SEVENTH_END)
        if sel.any():
            out[d] = s.x[sel].min() if EXTREMA_KIND[d] == "min" else s.x[sel].max()
    return out


# ---------------------------------------------------------------------------
# Synthetic cohorts
# ---------------------------------------------------------------------------


@dataclass
class Archetype:
    """Piecewise-linear mean trajectory per variable (native units)."""

    name: str
    knots: tuple
    values: dict

    def mean(self, variable, t):
        return np.interp(t, self.knots, self.values[variable])


DEFAULT_NOISE_SD = {"SBP": 9.0, "DBP": 7.0, "HR": 7.0, "TEMP": 0.35, "SPO2": 1.2, "RR": 2.5}
DEFAULT_OFFSET_SD = {"SBP": 6.0, "DBP": 4.0, "HR": 5.0, "TEMP": 0.2, "SPO2": 0.8, "RR": 1.5}
# kept strictly inside the non-outlier ranges
_SIM_BOUNDS = {"SBP": (40.0, 260.0), "DBP": (20.0, 180.0), "HR": (25.0, 220.0),
               "TEMP": (33.0, 42.0), "SPO2": (60.0, 100.0), "RR": (4.0, 50.0)}

_KNOTS = (0.0, 180.0, 420.0)
DEFAULT_ARCHETYPES = (
    Archetype("hypertensive-tachycardic", _KNOTS, {
        "SBP": (166, 158, 150), "DBP": (95, 92, 88), "HR": (98, 95, 92),
        "TEMP": (37.0, 37.0, 37.0), "SPO2": (95.5, 95.5, 96.0), "RR": (20, 20, 19)}),
    Archetype("persistent-elevated-bp", _KNOTS, {
        "SBP": (142, 141, 140), "DBP": (80, 80, 80), "HR": (78, 78, 78),
        "TEMP": (36.7, 36.7, 36.7), "SPO2": (97.5, 97.5, 97.5), "RR": (16, 16, 16)}),
    Archetype("low-derangement", _KNOTS, {
        "SBP": (122, 122, 122), "DBP": (70, 70, 70), "HR": (72, 72, 72),
        "TEMP": (36.6, 36.6, 36.6), "SPO2": (98.5, 98.5, 98.5), "RR": (14, 14, 14)}),
    Archetype("early-hypotension", _KNOTS, {
        "SBP": (88, 96, 105), "DBP": (48, 53, 58), "HR": (112, 106, 100),
        "TEMP": (38.3, 38.0, 37.8), "SPO2": (93.5, 94.3, 95.0), "RR": (23, 21.5, 20)}),
)


@dataclass
class SyntheticSpec:
    archetypes: tuple = DEFAULT_ARCHETYPES
    n_per_archetype: int = 500
    rate_per_hour: float = 2.0
    noise_sd: dict = field(default_factory=lambda: dict(DEFAULT_NOISE_SD))
    offset_sd: dict = field(default_factory=lambda: dict(DEFAULT_OFFSET_SD))
    missing_prob: float = 0.0
    horizon: float = SEVENTH_END

    def validate(self):
        if not self.archetypes:
            raise ValueError("synthetic spec needs at least one archetype")
        if self.n_per_archetype <= 0:
            raise ValueError("n_per_archetype must be positive")
        rates = self.rate_per_hour.values() if isinstance(self.rate_per_hour, dict) else [self.rate_per_hour]
        if any(not r > 0 for r in rates):
            raise ValueError("sampling rate must be positive")
        if not 0.0 <= self.missing_prob < 1.0:
            raise ValueError("missing_prob must lie in [0, 1)")


def generate_synthetic_cohort(spec=None, seed=0):
    """Planted-label cohort; observation times follow a homogeneous Poisson process."""
    spec = spec or SyntheticSpec()
    spec.validate()
    rng = as_generator(seed, "synthetic")
    labels = np.repeat(np.arange(len(spec.archetypes)), spec.n_per_archetype)
    labels = labels[rng.permutation(labels.size)]
    width = len(str(labels.size))
    out = []
    for idx, lab in enumerate(labels):
        arch = spec.archetypes[lab]
        window, seventh = [], []
        for v in VARIABLES:
            rate = spec.rate_per_hour[v] if isinstance(spec.rate_per_hour, dict) else spec.rate_per_hour
            n = rng.poisson(rate * spec.horizon / 60.0)
            t = np.unique(np.round(rng.uniform(0.0, spec.horizon, size=n), 2))
            t = t[t < spec.horizon]
            offset = rng.normal(0.0, spec.offset_sd[v])
            x = arch.mean(v, t) + offset + rng.normal(0.0, spec.noise_sd[v], size=t.size)
            x = np.round(np.clip(x, *_SIM_BOUNDS[v]), 2)
            if rng.random() < spec.missing_prob:
                late = t >= WINDOW_END
                t, x = t[late], x[late]
            early = t < WINDOW_END
            window.append(IrregularSeries(v, t[early], x[early]))
            seventh.append(IrregularSeries(v, t[~early], x[~early]))
        out.append(Encounter(f"S{idx:0{width}d}", window, seventh, int(lab)))
    return out


# ---------------------------------------------------------------------------
# Line-plot export
# ---------------------------------------------------------------------------

PLOT_HEADER = ("phenotype", "variable", "bin_start_min", "mean", "ci_lo", "ci_hi", "n")


@dataclass(frozen=True)
class PlotRow:
    phenotype: object
    variable: str
    bin_start_min: float
    mean: float
    ci_lo: float
    ci_hi: float
    n: int


def resample_5min(cohort, labels, bin_minutes=5.0, horizon=WINDOW_END):
    """Per-phenotype mean and 95% CI at regular bins.

    Each encounter is first averaged within a bin; the CI is
    ``mean +/- 1.96 sd / sqrt(n)`` over encounters (sd with ddof=1, 0 for n=1).
    Bins without data carry ``None`` statistics and ``n = 0``.
    """
    ids = {enc.id for enc in cohort}
    unknown = sorted(set(labels) - ids, key=str)
    if unknown:
        raise ValueError(f"unknown label ids: {unknown[:5]}")
    unlabeled = [enc.id for enc in cohort if enc.id not in labels]
    if unlabeled:
        raise ValueError(f"encounters without label: {unlabeled[:5]}")
    n_bins = int(round(horizon / bin_minutes))
    phenos = sorted(set(labels[enc.id] for enc in cohort), key=lambda p: (str(type(p)), p))
    # per phenotype / variable / bin: list of encounter-level means
    acc = {(p, v): [[] for _ in range(n_bins)] for p in phenos for v in VARIABLES}
    for enc in cohort:
        p = labels[enc.id]
        for s in enc.series:
            sel = (s.t >= 0) & (s.t < horizon)
            if not sel.any():
                continue
            bins = np.floor(s.t[sel] / bin_minutes).astype(np.int64)
            sums = np.bincount(bins, weights=s.x[sel], minlength=n_bins)
            counts = np.bincount(bins, minlength=n_bins)
            for b in np.flatnonzero(counts):
                acc[(p, s.variable)][b].append(sums[b] / counts[b])
    rows = []
    for p in phenos:
        for v in VARIABLES:
            for b, vals in enumerate(acc[(p, v)]):
                start = b * bin_minutes
                if not vals:
                    rows.append(PlotRow(p, v, start, None, None, None, 0))
                    continue
                arr = np.asarray(vals)
                m = float(arr.mean())
                half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(arr.size) if arr.size > 1 else 0.0
                rows.append(PlotRow(p, v, start, m, m - half, m + half, int(arr.size)))
    return rows


def write_plot_csv(rows, stream):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(PLOT_HEADER)
    for r in rows:
        fmt = lambda z: "" if z is None else repr(float(z))
        writer.writerow((r.phenotype, r.variable, repr(float(r.bin_start_min)), fmt(r.mean),
                         fmt(r.ci_lo), fmt(r.ci_hi), r.n))
