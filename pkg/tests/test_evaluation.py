import json
import random

import numpy as np
import pytest

from mortflow.data import MortalityTensor
from mortflow.errors import DataError, InsufficientDataError
from mortflow.evaluation import (
    CVConfig,
    CVRecord,
    GridResult,
    _effective_jobs,
    _schedule_errors,
    calibrate_pi,
    candidate_origins,
    grid_search,
    metric_report,
    read_records_csv,
    run_inclusive_cv,
    run_loco_cv,
    write_grid_csv,
    write_metrics_json,
    write_records_csv,
)
from mortflow.synth import SyntheticSpec, generate


def make_records(errs, horizons, country="X", origin=2000):
    return [CVRecord(country=country, origin=origin, horizon=int(h),
                     e0_hat=80.0 + e, e0_obs=80.0, err=float(e))
            for e, h in zip(errs, horizons)]


# ---------------------------------------------------------------- records


def test_record_validates_horizon_and_error():
    with pytest.raises(DataError):
        CVRecord(country="X", origin=2000, horizon=0,
                 e0_hat=80.0, e0_obs=80.0, err=0.0)
    with pytest.raises(DataError):
        CVRecord(country="X", origin=2000, horizon=1,
                 e0_hat=np.nan, e0_obs=80.0, err=np.nan)


def test_config_validation():
    with pytest.raises(DataError):
        CVConfig(horizon=0)
    with pytest.raises(DataError):
        CVConfig(w=1.5)
    with pytest.raises(DataError):
        CVConfig(truth="oracle")


# ------------------------------------------------------- origin placement


def origin_tensor(observed_per_country, n_years=60):
    """Tensor with crafted masks; values are valid logits throughout."""
    C = len(observed_per_country)
    rng = np.random.default_rng(0)
    values = rng.normal(-5.0, 0.5, size=(2, 4, C, n_years))
    mask = np.zeros((C, n_years), dtype=bool)
    for c, n_obs in enumerate(observed_per_country):
        mask[c, :n_obs] = True
    return MortalityTensor(values=values, mask=mask,
                           countries=tuple(f"C{c}" for c in range(C)),
                           years=np.arange(1950, 1950 + n_years),
                           ages=np.arange(4))


def test_origins_every_spacing_from_twentieth_observed():
    tensor = origin_tensor([45])
    got = candidate_origins(tensor, 0, CVConfig(horizon=50))
    assert got == [19, 29, 39]


def test_origin_needs_min_train_and_future_truth():
    tensor = origin_tensor([45])
    assert candidate_origins(tensor, 0, CVConfig(min_train=25)) == [29, 39]
    # 15 observed years: never reaches the 20th observation
    short = origin_tensor([15])
    assert candidate_origins(short, 0, CVConfig()) == []
    # origin on the last observed year has no truth ahead of it
    exact = origin_tensor([20])
    assert candidate_origins(exact, 0, CVConfig()) == []


def test_origin_requires_truth_within_horizon():
    tensor = origin_tensor([45], n_years=60)
    tensor.mask[0, 20:40] = False  # gap right after the first origin
    got = candidate_origins(tensor, 0, CVConfig(horizon=5))
    # observations resume at index 40: beyond h=5 from origin index 19
    assert 19 not in got


# ----------------------------------------------------------- calibration


def gaussian_records(n_per_h=200, horizons=range(1, 51), seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for h in horizons:
        errs = rng.normal(0.0, np.sqrt(h), size=n_per_h)
        records.extend(make_records(errs, [h] * n_per_h))
    return records


def test_calibration_recovers_gaussian_scales():
    records = gaussian_records()
    assert len(records) == 10_000
    cal = calibrate_pi(records)
    hs = np.arange(1.0, 51.0)
    assert np.max(np.abs(cal.bias(hs))) < 0.5
    assert abs(np.mean(cal.bias(hs))) < 0.1
    assert abs(cal.sigma1 - 1.0) < 0.1
    assert abs(cal.kappa - 1.0) < 0.1


def test_calibration_set_coverage_near_nominal():
    records = gaussian_records(seed=1)
    cal = calibrate_pi(records)
    errs = np.array([r.err for r in records])
    hs = np.array([r.horizon for r in records], dtype=float)
    resid = errs - cal.bias(hs)
    scale = cal.kappa * cal.sigma1 * np.sqrt(hs)
    covered = np.mean(np.abs(resid) <= 1.96 * scale)
    assert 0.93 <= covered <= 0.97


def test_constant_errors_floor_sigma_with_warning():
    records = make_records([0.7] * 40, [1] * 20 + [2] * 20)
    with pytest.warns(UserWarning, match="floored"):
        cal = calibrate_pi(records)
    assert np.allclose(cal.bias(np.array([1.0, 2.0])), 0.7)
    assert cal.sigma1 == 1e-6
    assert cal.kappa > 0


def test_calibration_needs_two_populated_horizons():
    records = make_records(np.linspace(-1, 1, 15), [1] * 15)
    records += make_records([0.1] * 5, [2] * 5)
    with pytest.raises(InsufficientDataError):
        calibrate_pi(records)
    with pytest.raises(InsufficientDataError):
        calibrate_pi([])


# ---------------------------------------------------------------- metrics


def schedule_record(eps, lx, horizon=1, country="X", err=0.0):
    rec = CVRecord(country=country, origin=2000, horizon=horizon,
                   e0_hat=80.0 + err, e0_obs=80.0, err=err)
    rec.log_mx_err = np.asarray(eps, dtype=float)
    rec.lx_obs = np.asarray(lx, dtype=float)
    return rec


def test_lx_weighted_mae_hand_example():
    # two ages with lx 1.0 and 0.5 and |errors| 0.3 and 0.6 in each sex
    rec = schedule_record([[0.3, 0.6], [0.3, 0.6]],
                          [[1.0, 0.5], [1.0, 0.5]])
    report = metric_report([rec])
    assert np.isclose(report.log_mx["mae_lx"], 0.4, rtol=1e-12)
    assert np.isclose(report.log_mx["mae"], 0.45, rtol=1e-12)


def test_uniform_weights_collapse_to_unweighted():
    rng = np.random.default_rng(3)
    recs = [schedule_record(rng.normal(size=(2, 6)),
                            rng.uniform(0.1, 1.0, size=(2, 6)),
                            horizon=h) for h in range(1, 9)]
    report = metric_report(recs, weights="uniform")
    assert np.isclose(report.log_mx["mae_lx"], report.log_mx["mae"],
                      rtol=1e-12)
    assert np.isclose(report.log_mx["bias_lx"], report.log_mx["bias"],
                      rtol=1e-12)
    assert np.isclose(report.sex_diff["mae_lx"], report.sex_diff["mae"],
                      rtol=1e-12)


def test_perfect_forecast_reports_zero_everywhere():
    recs = [schedule_record(np.zeros((2, 5)), np.ones((2, 5)), horizon=h)
            for h in (1, 7, 20, 30)]
    report = metric_report(recs)
    assert report.e0 == {"mae": 0.0, "rmse": 0.0, "bias": 0.0, "n": 4}
    for key in ("mae", "mae_lx", "bias", "bias_lx"):
        assert report.log_mx[key] == 0.0
        assert report.sex_diff[key] == 0.0
    assert len(report.by_horizon_band) == 4
    assert all(row["mae"] == 0.0 for row in report.by_horizon_band)


def test_metrics_are_order_invariant():
    rng = np.random.default_rng(4)
    recs = [schedule_record(rng.normal(size=(2, 6)),
                            rng.uniform(0.1, 1.0, size=(2, 6)),
                            horizon=h, country=c, err=float(rng.normal()))
            for h in (1, 5, 12, 30) for c in ("A", "B", "C")]
    shuffled = recs.copy()
    random.Random(9).shuffle(shuffled)
    assert metric_report(recs).to_dict() == metric_report(shuffled).to_dict()


def test_sex_differential_uses_mean_lx_weights():
    eps = np.array([[0.1, 0.2], [0.4, 0.8]])
    lx = np.array([[1.0, 0.5], [0.8, 0.3]])
    report = metric_report([schedule_record(eps, lx)])
    delta = eps[1] - eps[0]
    w = 0.5 * (lx[0] + lx[1])
    assert np.isclose(report.sex_diff["mae_lx"],
                      np.sum(w * np.abs(delta)) / np.sum(w), rtol=1e-12)
    assert report.sex_diff["n"] == 2


def test_age_bands_intersect_the_age_grid():
    rec = schedule_record(np.full((2, 30), 0.2), np.ones((2, 30)))
    report = metric_report([rec], ages=np.arange(30))
    labels = [row["band"] for row in report.by_age_band]
    assert labels == ["0", "1-14", "15-29"]
    assert all(np.isclose(row["mae"], 0.2) for row in report.by_age_band)
    with pytest.raises(DataError):
        metric_report([rec], ages=np.arange(7))


def test_zero_observed_mx_excluded_and_tallied():
    obs = np.full((2, 5), -2.0)
    obs[1, 3] = -800.0  # expit underflows to exactly zero
    pred = np.full((2, 5), -2.1)
    eps, lx, excluded = _schedule_errors(pred, obs)
    assert excluded == 1
    assert np.isnan(eps[1, 3]) and np.isfinite(eps[0, 3])
    assert lx.shape == (2, 5)
    rec = CVRecord(country="X", origin=2000, horizon=1, e0_hat=80.0,
                   e0_obs=80.0, err=0.0)
    rec.log_mx_err, rec.lx_obs, rec.excluded = eps, lx, excluded
    report = metric_report([rec])
    assert report.excluded == 1
    assert report.log_mx["n"] == 9


def test_metric_report_rejects_bad_weight_source():
    with pytest.raises(DataError):
        metric_report(make_records([0.1], [1]), weights="exposure")
    with pytest.raises(InsufficientDataError):
        metric_report([])


# ------------------------------------------------------------- strict CV


@pytest.fixture(scope="module")
def cv_world():
    return generate(SyntheticSpec(n_countries=4, n_ages=16, n_years=48,
                                  stagger=3, obs_noise=0.005, seed=3))


@pytest.fixture(scope="module")
def cv_records(cv_world):
    fits = []

    def on_fit(country, origin_year, fitted):
        fits.append((country, origin_year, fitted))

    config = CVConfig(horizon=20, origin_spacing=10, seed=3)
    records = run_loco_cv(cv_world.tensor, config, on_fit=on_fit)
    return records, fits, config


def test_loco_produces_sorted_finite_records(cv_world, cv_records):
    records, _, config = cv_records
    assert records
    keys = [(r.country, r.origin, r.horizon) for r in records]
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)
    tensor = cv_world.tensor
    for r in records:
        assert 1 <= r.horizon <= config.horizon
        c = tensor.country_index(r.country)
        t = tensor.year_index(r.origin + r.horizon)
        assert tensor.mask[c, t]
        assert np.isclose(r.err, r.e0_hat - r.e0_obs)
        assert r.log_mx_err.shape == (2, 16)
        assert r.lx_obs.shape == (2, 16)


def test_loco_isolation_of_held_out_country(cv_world, cv_records):
    _, fits, _ = cv_records
    assert fits
    seen = set()
    for country, origin_year, fitted in fits:
        seen.add(country)
        assert country not in fitted.model.countries
        assert country not in fitted.flowfield.countries
        assert int(fitted.model.years[-1]) <= origin_year
        assert fitted.origin == origin_year
    assert seen == set(cv_world.tensor.countries)


def test_loco_covers_expected_origins(cv_world, cv_records):
    records, _, config = cv_records
    tensor = cv_world.tensor
    expected = set()
    for c, country in enumerate(tensor.countries):
        for t0 in candidate_origins(tensor, c, config):
            expected.add((country, int(tensor.years[t0])))
    assert {(r.country, r.origin) for r in records} == expected


def test_loco_tracks_truth_on_self_consistent_world(cv_records):
    records, _, _ = cv_records
    errs = np.array([abs(r.err) for r in records])
    assert np.mean(errs) < 1.0


def test_loco_needs_two_countries(cv_world):
    from mortflow.data import drop_country

    lone = cv_world.tensor
    for country in lone.countries[1:]:
        lone = drop_country(lone, country)
    with pytest.raises(InsufficientDataError):
        run_loco_cv(lone, CVConfig())


def test_loco_skips_country_without_origins(cv_world):
    tensor = cv_world.tensor
    values = tensor.values.copy()
    mask = tensor.mask.copy()
    mask[0, 15:] = False  # too short to reach the 20th observation
    crippled = MortalityTensor(values=values, mask=mask,
                               countries=tensor.countries,
                               years=tensor.years, ages=tensor.ages)
    config = CVConfig(horizon=5, seed=3, schedules=False)
    with pytest.warns(UserWarning, match="skipped"):
        records = run_loco_cv(crippled, config)
    assert tensor.countries[0] not in {r.country for r in records}


def test_truth_flag_switches_ground_truth(cv_world):
    # a deliberately low age rank so the basis cannot span raw schedules
    config = CVConfig(ranks=(2, 5, 3, 20), horizon=3, schedules=False,
                      seed=3)
    raw = run_loco_cv(cv_world.tensor, config)
    tucker = run_loco_cv(cv_world.tensor, replace_truth(config, "tucker"))
    assert [r.e0_hat for r in raw] == [r.e0_hat for r in tucker]
    assert any(not np.isclose(a.e0_obs, b.e0_obs, rtol=1e-12)
               for a, b in zip(raw, tucker))


def replace_truth(config, truth):
    from dataclasses import replace

    return replace(config, truth=truth)


def test_inclusive_cv_covers_same_points_without_isolation(cv_world,
                                                           cv_records):
    strict, _, config = cv_records
    inclusive = run_inclusive_cv(cv_world.tensor, config)
    assert {(r.country, r.origin, r.horizon) for r in inclusive} == \
           {(r.country, r.origin, r.horizon) for r in strict}
    keys = [(r.country, r.origin, r.horizon) for r in inclusive]
    assert keys == sorted(keys)
    # in-basis entries see their own history, so the forecasts differ
    assert any(a.e0_hat != b.e0_hat for a, b in zip(strict, inclusive))


# ------------------------------------------------------------ parallelism


def test_parallel_cv_matches_serial(cv_world, cv_records):
    serial, _, config = cv_records
    parallel = run_loco_cv(cv_world.tensor, replace_jobs(config, 3))
    assert len(parallel) == len(serial)
    for a, b in zip(serial, parallel):
        assert (a.country, a.origin, a.horizon) == (b.country, b.origin,
                                                    b.horizon)
        assert a.e0_hat == b.e0_hat
        assert a.e0_obs == b.e0_obs
        assert np.array_equal(a.log_mx_err, b.log_mx_err, equal_nan=True)


def replace_jobs(config, jobs):
    from dataclasses import replace

    return replace(config, jobs=jobs)


def test_thread_cap_from_environment(monkeypatch):
    monkeypatch.setenv("MORTFLOW_THREADS", "2")
    assert _effective_jobs(8) == 2
    assert _effective_jobs(1) == 1
    monkeypatch.setenv("MORTFLOW_THREADS", "banana")
    with pytest.raises(DataError):
        _effective_jobs(4)
    monkeypatch.delenv("MORTFLOW_THREADS")
    assert _effective_jobs(8) == 8


# ------------------------------------------------------------ grid search


def test_grid_search_table_and_best(cv_world):
    config = CVConfig(horizon=10, schedules=False, seed=3)
    result = grid_search(cv_world.tensor, grid_w=(0.5, 1.0),
                         grid_tau=(12.0, 20.0), config=config)
    assert isinstance(result, GridResult)
    assert len(result.table) == 4
    assert len({row["n"] for row in result.table}) == 1
    assert result.table[0]["n"] > 0
    maes = [row["mae"] for row in result.table]
    assert all(np.isfinite(maes))
    assert result.best["mae"] == min(maes)
    assert result.best in result.table


def test_grid_search_needs_countries_and_origins(cv_world):
    from mortflow.data import drop_country

    lone = cv_world.tensor
    for country in lone.countries[1:]:
        lone = drop_country(lone, country)
    with pytest.raises(InsufficientDataError):
        grid_search(lone)
    short = origin_tensor([12, 12])
    with pytest.raises(InsufficientDataError):
        grid_search(short, config=CVConfig(schedules=False))


# ---------------------------------------------------------------- output


def test_records_csv_round_trip(tmp_path):
    records = make_records([0.25, -0.5, 1.0], [1, 2, 3], country="SWE")
    path = tmp_path / "cv.csv"
    write_records_csv(records, path)
    text = path.read_text()
    assert text.splitlines()[0] == "country,origin,h,e0_hat,e0_obs,err"
    back = read_records_csv(path)
    assert [(r.country, r.origin, r.horizon, r.e0_hat, r.e0_obs, r.err)
            for r in back] == \
           [(r.country, r.origin, r.horizon, r.e0_hat, r.e0_obs, r.err)
            for r in records]


def test_records_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("country,origin,h\nX,2000,1\n")
    with pytest.raises(DataError, match="header"):
        read_records_csv(path)


def test_grid_csv_and_metrics_json(tmp_path):
    table = [{"w": 1.0, "tau": 12.0, "mae": 0.5, "n": 10},
             {"w": 0.5, "tau": 20.0, "mae": 0.75, "n": 10}]
    grid_path = tmp_path / "grid.csv"
    write_grid_csv(GridResult(best=table[0], table=table), grid_path)
    lines = grid_path.read_text().splitlines()
    assert lines[0] == "w,tau,mae,n"
    assert len(lines) == 3

    report = metric_report(make_records([0.1, -0.2], [1, 2]))
    json_path = tmp_path / "metrics.json"
    write_metrics_json(report, json_path)
    assert json.loads(json_path.read_text()) == report.to_dict()
