"""Input data model: raw count rows to a masked logit-rate tensor.

The pipeline consumes a 4-way tensor of logit death probabilities
(sex x age x country x year) with a country-by-year observation mask.
This module owns the way raw rows become that tensor: pooling counts
into temporal bins, converting central rates to probabilities, clamping
and transforming, and laying out a dense year axis.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logit

from .errors import (
    CsvFormatError,
    DataError,
    DegenerateExposureError,
    MissingDataError,
    ShapeMismatchError,
)

SEXES = ("f", "m")

# probabilities are clamped into (QX_EPS, 1 - QX_EPS) before the logit
QX_EPS = 1e-7

# default top of the age grid; observed ages above it are dropped
MAX_AGES = 110


@dataclass
class RawSeries:
    """One observation row: a (country, sex, age, year) cell.

    Either ``deaths`` and ``exposure`` are both set, or ``mx`` is.
    """

    country: str
    sex: str
    age: int
    year: int
    deaths: Optional[float] = None
    exposure: Optional[float] = None
    mx: Optional[float] = None


@dataclass
class RateSchedule:
    """Single-age rates for one country and one temporal bin.

    Arrays are (2, A) with the female row first; missing cells are NaN.
    ``years`` is the inclusive bin span.
    """

    country: str
    ages: np.ndarray
    mx: np.ndarray
    qx: np.ndarray
    logit_qx: np.ndarray
    years: tuple


@dataclass
class MortalityTensor:
    """Dense logit-qx tensor (S, A, C, T) plus the (C, T) observation mask.

    The year axis is a dense integer range; mask is true exactly where a
    complete both-sex schedule exists.  Unmasked cells may hold NaN.
    """

    values: np.ndarray
    mask: np.ndarray
    countries: tuple
    years: np.ndarray
    ages: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    def year_index(self, year):
        idx = int(year) - int(self.years[0])
        if idx < 0 or idx >= self.years.size:
            raise IndexError(f"year {year} outside tensor range")
        return idx

    def country_index(self, country):
        try:
            return self.countries.index(country)
        except ValueError:
            raise IndexError(f"unknown country {country!r}") from None


def mx_to_qx(mx):
    """Central rate to death probability under constant hazard in the year."""
    mx = np.asarray(mx, dtype=float)
    out = mx / (1.0 + mx / 2.0)
    return out if out.ndim else float(out)


def qx_to_mx(qx):
    """Inverse of mx_to_qx."""
    qx = np.asarray(qx, dtype=float)
    out = qx / (1.0 - qx / 2.0)
    return out if out.ndim else float(out)


def clamp_qx(qx):
    return np.clip(qx, QX_EPS, 1.0 - QX_EPS)


def pool_and_convert(rows, bin_plan=None, n_ages=None):
    """Pool rows into temporal bins and convert to logit probabilities.

    Parameters
    ----------
    rows : iterable of RawSeries
    bin_plan : list of (start, end) inclusive year pairs, optional
        Defaults to one bin per observed year.  A bin matching no rows at
        all raises MissingDataError; a country simply absent from a bin
        yields no schedule there.
    n_ages : int, optional
        Top of the age grid.  Defaults to the highest observed age plus
        one, capped at 110.  Higher ages are dropped.

    Returns
    -------
    dict mapping (country, year) -> RateSchedule
        Multi-year bins replicate their pooled schedule at every year of
        the bin, keeping the downstream year axis dense.

    Notes
    -----
    Count input pools as sum(deaths) / sum(exposure); rate input pools as
    the unweighted mean of mx.  qx = mx / (1 + mx/2), clamped away from
    {0, 1} before the logit.
    """
    rows = list(rows)
    if not rows:
        raise MissingDataError("no rows supplied")
    for r in rows:
        if r.mx is None and (r.deaths is None or r.exposure is None):
            raise DataError(f"row {r} carries neither mx nor deaths/exposure")
        if (r.mx is not None and r.mx < 0) or \
           (r.deaths is not None and r.deaths < 0) or \
           (r.exposure is not None and r.exposure < 0):
            raise DataError(f"negative count or rate in row {r}")

    if n_ages is None:
        n_ages = min(max(r.age for r in rows) + 1, MAX_AGES)
    ages = np.arange(n_ages)

    if bin_plan is None:
        bin_plan = [(y, y) for y in sorted({r.year for r in rows})]

    by_bin = {span: [] for span in bin_plan}
    for r in rows:
        if r.age >= n_ages:
            continue
        for span in bin_plan:
            if span[0] <= r.year <= span[1]:
                by_bin[span].append(r)
                break

    schedules = {}
    for span in bin_plan:
        members = by_bin[span]
        if not members:
            raise MissingDataError(f"bin {span} contains no observations")
        countries = sorted({r.country for r in members})
        for country in countries:
            deaths = np.zeros((2, n_ages))
            exposure = np.zeros((2, n_ages))
            mx_sum = np.zeros((2, n_ages))
            mx_cnt = np.zeros((2, n_ages))
            have_counts = np.zeros((2, n_ages), dtype=bool)
            for r in members:
                if r.country != country:
                    continue
                s = SEXES.index(r.sex)
                if r.mx is not None:
                    mx_sum[s, r.age] += r.mx
                    mx_cnt[s, r.age] += 1
                else:
                    deaths[s, r.age] += r.deaths
                    exposure[s, r.age] += r.exposure
                    have_counts[s, r.age] = True
            if np.any(have_counts & (mx_cnt > 0)):
                raise DataError(
                    f"{country} bin {span}: cell mixes mx and deaths/exposure rows"
                )
            if np.any(have_counts & (exposure == 0)):
                raise DegenerateExposureError(
                    f"{country} bin {span}: zero total exposure"
                )
            mx = np.full((2, n_ages), np.nan)
            with np.errstate(invalid="ignore", divide="ignore"):
                mx = np.where(have_counts, deaths / np.where(exposure > 0, exposure, 1.0), mx)
                mx = np.where(mx_cnt > 0, mx_sum / np.where(mx_cnt > 0, mx_cnt, 1.0), mx)
            if not np.any(np.isfinite(mx)):
                continue
            qx = np.where(np.isfinite(mx), clamp_qx(mx_to_qx(mx)), np.nan)
            with np.errstate(invalid="ignore"):
                lq = logit(qx)
            sched = RateSchedule(country=country, ages=ages, mx=mx, qx=qx,
                                 logit_qx=lq, years=(int(span[0]), int(span[1])))
            for year in range(span[0], span[1] + 1):
                schedules[(country, year)] = sched
    return schedules


def build_tensor(schedules):
    """Assemble keyed schedules into a MortalityTensor.

    The year axis is densified to the full observed range; the mask is
    true only where a schedule exists and is complete for both sexes.
    Insertion order of the mapping does not matter.
    """
    if not schedules:
        raise MissingDataError("no schedules supplied")
    items = sorted(schedules.items(), key=lambda kv: (kv[0][0], kv[0][1]))
    ages = items[0][1].ages
    for _, sched in items:
        if not np.array_equal(sched.ages, ages):
            raise ShapeMismatchError("schedules disagree on the age grid")
    countries = tuple(sorted({c for (c, _), _ in items}))
    all_years = [y for (_, y), _ in items]
    years = np.arange(min(all_years), max(all_years) + 1)
    values = np.full((2, ages.size, len(countries), years.size), np.nan)
    mask = np.zeros((len(countries), years.size), dtype=bool)
    for (country, year), sched in items:
        c = countries.index(country)
        t = year - int(years[0])
        values[:, :, c, t] = sched.logit_qx
        mask[c, t] = bool(np.isfinite(sched.logit_qx).all())
    return MortalityTensor(values=values, mask=mask, countries=countries,
                           years=years, ages=ages)


def truncate_tensor(tensor, origin):
    """Tensor restricted to years at or before the origin."""
    keep = tensor.years <= int(origin)
    if not np.any(keep):
        raise MissingDataError(f"no tensor years at or before {origin}")
    return MortalityTensor(values=tensor.values[:, :, :, keep],
                           mask=tensor.mask[:, keep],
                           countries=tensor.countries,
                           years=tensor.years[keep],
                           ages=tensor.ages)


def drop_country(tensor, country):
    """Tensor with one country's column removed."""
    c = tensor.country_index(country)
    keep = np.arange(len(tensor.countries)) != c
    return MortalityTensor(values=tensor.values[:, :, keep],
                           mask=tensor.mask[keep],
                           countries=tensor.countries[:c] + tensor.countries[c + 1:],
                           years=tensor.years,
                           ages=tensor.ages)


def tensor_from_rows(rows, bin_plan=None, n_ages=None):
    return build_tensor(pool_and_convert(rows, bin_plan=bin_plan, n_ages=n_ages))


def tensor_from_csv(path, bin_plan=None, n_ages=None):
    return tensor_from_rows(read_csv(path), bin_plan=bin_plan, n_ages=n_ages)


def read_csv(path):
    """Read observation rows from either accepted CSV layout.

    Layouts (UTF-8, header required):
        country,sex,age,year,deaths,exposure
        country,sex,age,year,mx
    Sex is coded f/m.  Parse failures raise CsvFormatError carrying the
    1-based line number.
    """
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CsvFormatError("empty file", line=1)
        cols = [c.strip() for c in reader.fieldnames]
        base = {"country", "sex", "age", "year"}
        if not base.issubset(cols):
            raise CsvFormatError(
                f"missing required columns {sorted(base - set(cols))}", line=1)
        has_mx = "mx" in cols
        has_counts = "deaths" in cols and "exposure" in cols
        if has_mx == has_counts:
            raise CsvFormatError(
                "need either an mx column or deaths+exposure columns", line=1)
        for rec in reader:
            line = reader.line_num
            try:
                sex = rec["sex"].strip().lower()
                if sex not in SEXES:
                    raise ValueError(f"sex must be f or m, got {rec['sex']!r}")
                kwargs = dict(
                    country=rec["country"].strip(),
                    sex=sex,
                    age=int(rec["age"]),
                    year=int(rec["year"]),
                )
                if has_mx:
                    kwargs["mx"] = float(rec["mx"])
                    if kwargs["mx"] < 0:
                        raise ValueError("mx must be non-negative")
                else:
                    kwargs["deaths"] = float(rec["deaths"])
                    kwargs["exposure"] = float(rec["exposure"])
                    if kwargs["deaths"] < 0 or kwargs["exposure"] < 0:
                        raise ValueError("counts must be non-negative")
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise CsvFormatError(str(exc), line=line) from exc
            rows.append(RawSeries(**kwargs))
    if not rows:
        raise CsvFormatError("no data rows", line=1)
    return rows


def suggest_bins(rows, min_deaths=50):
    """Merge consecutive years until each bin holds at least min_deaths.

    Deaths are pooled across all provided rows, so pass one country's rows
    for a per-country plan.  A trailing shortfall merges into the previous
    bin when one exists.  Rows without death counts contribute nothing.
    """
    deaths_by_year = {}
    for r in rows:
        deaths_by_year.setdefault(r.year, 0.0)
        if r.deaths is not None:
            deaths_by_year[r.year] += r.deaths
    years = sorted(deaths_by_year)
    if not years:
        raise MissingDataError("no rows supplied")
    plan = []
    start, acc = None, 0.0
    for y in years:
        if start is None:
            start, acc = y, 0.0
        acc += deaths_by_year[y]
        if acc >= min_deaths:
            plan.append((start, y))
            start = None
    if start is not None:
        if plan:
            prev = plan.pop()
            plan.append((prev[0], years[-1]))
        else:
            plan.append((start, years[-1]))
    return plan
