import math

import numpy as np
import pytest

from mortflow.data import (
    QX_EPS,
    RawSeries,
    build_tensor,
    mx_to_qx,
    pool_and_convert,
    qx_to_mx,
    read_csv,
    suggest_bins,
    tensor_from_csv,
    tensor_from_rows,
)
from mortflow.errors import (
    CsvFormatError,
    DegenerateExposureError,
    MissingDataError,
    ShapeMismatchError,
)


def rows_for(country, year, mx_f, mx_m):
    out = []
    for sex, mxs in (("f", mx_f), ("m", mx_m)):
        for age, mx in enumerate(mxs):
            out.append(RawSeries(country=country, sex=sex, age=age, year=year, mx=mx))
    return out


# ----------------------------------------------------------------------
# Conversions
# ----------------------------------------------------------------------

def test_mx_to_qx_arithmetic():
    assert mx_to_qx(0.02) == pytest.approx(0.02 / 1.01, abs=1e-15)
    assert mx_to_qx(0.0) == 0.0
    # inverse round trip
    for mx in (1e-6, 0.01, 0.5, 1.9):
        assert qx_to_mx(mx_to_qx(mx)) == pytest.approx(mx, rel=1e-12)


def test_pooled_logit_value():
    # deaths 20 on exposure 1000: mx = .02, qx = mx/(1+mx/2), and the
    # odds collapse to mx/(1-mx/2), so logit(qx) = ln(.02/.99)
    rows = [
        RawSeries(country="X", sex=s, age=a, year=2000, deaths=20.0, exposure=1000.0)
        for s in ("f", "m") for a in range(3)
    ]
    schedules = pool_and_convert(rows)
    sched = schedules[("X", 2000)]
    expected = math.log(0.02 / 0.99)
    np.testing.assert_allclose(sched.logit_qx, expected, atol=1e-12)
    assert expected == pytest.approx(-3.901973, abs=1e-6)


def test_pooling_sums_deaths_and_exposure():
    rows = [
        RawSeries(country="X", sex="f", age=0, year=2000, deaths=20.0, exposure=1000.0),
        RawSeries(country="X", sex="f", age=0, year=2000, deaths=10.0, exposure=500.0),
        RawSeries(country="X", sex="m", age=0, year=2000, deaths=30.0, exposure=1500.0),
    ]
    sched = pool_and_convert(rows)[("X", 2000)]
    assert sched.mx[0, 0] == pytest.approx(30.0 / 1500.0)
    assert sched.mx[1, 0] == pytest.approx(0.02)


def test_zero_deaths_clamped():
    rows = [
        RawSeries(country="X", sex=s, age=0, year=2000, deaths=0.0, exposure=1000.0)
        for s in ("f", "m")
    ]
    sched = pool_and_convert(rows)[("X", 2000)]
    expected = math.log(QX_EPS / (1.0 - QX_EPS))
    assert sched.logit_qx[0, 0] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-16.118096, abs=1e-5)


def test_huge_rate_clamped_below_one():
    rows = [
        RawSeries(country="X", sex=s, age=0, year=2000, deaths=5000.0, exposure=100.0)
        for s in ("f", "m")
    ]
    sched = pool_and_convert(rows)[("X", 2000)]
    assert sched.qx[0, 0] == 1.0 - QX_EPS


def test_zero_exposure_raises():
    rows = [RawSeries(country="X", sex="f", age=0, year=2000, deaths=1.0, exposure=0.0)]
    with pytest.raises(DegenerateExposureError):
        pool_and_convert(rows)


def test_explicit_empty_bin_raises():
    rows = rows_for("X", 2000, [0.01], [0.02])
    with pytest.raises(MissingDataError):
        pool_and_convert(rows, bin_plan=[(2000, 2000), (2005, 2006)])


def test_multi_year_bin_replicates_schedule():
    rows = rows_for("X", 2000, [0.010], [0.020]) + rows_for("X", 2001, [0.030], [0.040])
    schedules = pool_and_convert(rows, bin_plan=[(2000, 2001)])
    a, b = schedules[("X", 2000)], schedules[("X", 2001)]
    np.testing.assert_array_equal(a.mx, b.mx)
    # mx input pools by unweighted mean within the bin
    assert a.mx[0, 0] == pytest.approx(0.020)
    assert a.mx[1, 0] == pytest.approx(0.030)
    assert a.years == (2000, 2001)


def test_deaths_input_pools_by_ratio_of_sums():
    rows = [
        RawSeries(country="X", sex="f", age=0, year=2000, deaths=10.0, exposure=100.0),
        RawSeries(country="X", sex="f", age=0, year=2001, deaths=0.0, exposure=900.0),
        RawSeries(country="X", sex="m", age=0, year=2000, deaths=5.0, exposure=100.0),
        RawSeries(country="X", sex="m", age=0, year=2001, deaths=5.0, exposure=900.0),
    ]
    sched = pool_and_convert(rows, bin_plan=[(2000, 2001)])[("X", 2000)]
    assert sched.mx[0, 0] == pytest.approx(10.0 / 1000.0)
    assert sched.mx[1, 0] == pytest.approx(10.0 / 1000.0)


# ----------------------------------------------------------------------
# Tensor assembly
# ----------------------------------------------------------------------

def test_tensor_dense_years_and_mask():
    rows = (rows_for("A", 2000, [0.01, 0.02], [0.02, 0.03])
            + rows_for("A", 2003, [0.01, 0.02], [0.02, 0.03])
            + rows_for("B", 2001, [0.05, 0.06], [0.07, 0.08]))
    tensor = tensor_from_rows(rows)
    assert tensor.countries == ("A", "B")
    np.testing.assert_array_equal(tensor.years, [2000, 2001, 2002, 2003])
    assert tensor.values.shape == (2, 2, 2, 4)
    expected_mask = np.array([[True, False, False, True],
                              [False, True, False, False]])
    np.testing.assert_array_equal(tensor.mask, expected_mask)
    assert np.all(np.isnan(tensor.values[:, :, 0, 1]))
    assert np.all(np.isfinite(tensor.values[:, :, 1, 1]))


def test_incomplete_schedule_masked_out():
    rows = rows_for("A", 2000, [0.01, 0.02], [0.02, 0.03])
    # year 2001 lacks age 1 for males
    rows += rows_for("A", 2001, [0.01, 0.02], [0.02, 0.03])
    rows = [r for r in rows if not (r.year == 2001 and r.sex == "m" and r.age == 1)]
    tensor = tensor_from_rows(rows)
    np.testing.assert_array_equal(tensor.mask[0], [True, False])


def test_mismatched_age_grids_raise():
    s1 = pool_and_convert(rows_for("A", 2000, [0.01, 0.02], [0.02, 0.03]))
    s2 = pool_and_convert(rows_for("B", 2000, [0.01], [0.02]))
    with pytest.raises(ShapeMismatchError):
        build_tensor({**s1, **s2})


def test_row_order_does_not_matter():
    rows = (rows_for("A", 2000, [0.01, 0.02], [0.02, 0.03])
            + rows_for("B", 2001, [0.05, 0.06], [0.07, 0.08]))
    t1 = tensor_from_rows(rows)
    t2 = tensor_from_rows(rows[::-1])
    np.testing.assert_array_equal(t1.mask, t2.mask)
    np.testing.assert_array_equal(t1.values[np.isfinite(t1.values)],
                                  t2.values[np.isfinite(t2.values)])
    assert t1.countries == t2.countries


def test_age_grid_truncation():
    rows = rows_for("A", 2000, [0.01, 0.02, 0.03], [0.02, 0.03, 0.04])
    tensor = tensor_from_rows(rows, n_ages=2)
    assert tensor.values.shape[1] == 2


# ----------------------------------------------------------------------
# CSV ingest
# ----------------------------------------------------------------------

def test_read_csv_both_formats(tmp_path):
    p1 = tmp_path / "rates.csv"
    p1.write_text(
        "country,sex,age,year,mx\n"
        "SWE,f,0,2000,0.004\n"
        "SWE,m,0,2000,0.005\n"
    )
    rows = read_csv(p1)
    assert len(rows) == 2 and rows[0].mx == 0.004 and rows[0].deaths is None

    p2 = tmp_path / "counts.csv"
    p2.write_text(
        "country,sex,age,year,deaths,exposure\n"
        "SWE,f,0,2000,12,3000\n"
    )
    rows = read_csv(p2)
    assert rows[0].deaths == 12.0 and rows[0].exposure == 3000.0 and rows[0].mx is None


def test_read_csv_reports_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text(
        "country,sex,age,year,mx\n"
        "SWE,f,0,2000,0.004\n"
        "SWE,x,1,2000,0.004\n"
    )
    with pytest.raises(CsvFormatError) as err:
        read_csv(p)
    assert err.value.line == 3

    p.write_text("country,sex,age,year,mx\nSWE,f,zero,2000,0.004\n")
    with pytest.raises(CsvFormatError) as err:
        read_csv(p)
    assert err.value.line == 2


def test_read_csv_rejects_missing_columns(tmp_path):
    p = tmp_path / "cols.csv"
    p.write_text("country,sex,age,year\nSWE,f,0,2000\n")
    with pytest.raises(CsvFormatError):
        read_csv(p)


def test_tensor_from_csv_round_trip(tmp_path):
    rows = (rows_for("A", 2000, [0.01, 0.02], [0.02, 0.03])
            + rows_for("B", 2000, [0.05, 0.06], [0.07, 0.08]))
    p = tmp_path / "data.csv"
    lines = ["country,sex,age,year,mx"]
    for r in rows:
        lines.append(f"{r.country},{r.sex},{r.age},{r.year},{r.mx}")
    p.write_text("\n".join(lines) + "\n")
    t1 = tensor_from_csv(p)
    t2 = tensor_from_rows(rows)
    np.testing.assert_array_equal(t1.values[np.isfinite(t1.values)],
                                  t2.values[np.isfinite(t2.values)])


# ----------------------------------------------------------------------
# Adaptive binning helper
# ----------------------------------------------------------------------

def make_death_rows(yearly_deaths, start=2000):
    return [
        RawSeries(country="X", sex="f", age=0, year=start + i,
                  deaths=float(d), exposure=1000.0)
        for i, d in enumerate(yearly_deaths)
    ]


def test_suggest_bins_accumulates_to_threshold():
    plan = suggest_bins(make_death_rows([30, 30, 30, 100]), min_deaths=50)
    assert plan == [(2000, 2001), (2002, 2003)]


def test_suggest_bins_trailing_shortfall_merges_back():
    plan = suggest_bins(make_death_rows([100, 30]), min_deaths=50)
    assert plan == [(2000, 2001)]
    # no earlier bin to absorb the shortfall: keep the leftover bin
    plan = suggest_bins(make_death_rows([30, 10]), min_deaths=50)
    assert plan == [(2000, 2001)]


def test_suggest_bins_rich_years_stay_single():
    plan = suggest_bins(make_death_rows([80, 90, 100]), min_deaths=50)
    assert plan == [(2000, 2000), (2001, 2001), (2002, 2002)]
