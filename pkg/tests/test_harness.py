import json
import math

import numpy as np
import pytest

from mpclr.field import make_params
from mpclr.harness import (
    RunReport,
    ScalingParams,
    ScenarioConfig,
    drowsiness_index,
    export_csv,
    ingest_csv,
    label_response_times,
    load_reports,
    read_csv_rows,
    rmse,
    run_scenario,
    smooth_moving_average,
    synthesize_dataset,
)
from mpclr.regression import design_matrix, solve_normal_equations
from mpclr.transport import SessionRoster

P = make_params(20, 40)


# -- labeling -------------------------------------------------------------


def test_drowsiness_index_at_threshold_is_zero():
    assert drowsiness_index(1.0, 1.0) == 0.0


def test_drowsiness_index_clamps_fast_responses():
    assert drowsiness_index(0.5, 1.0) == 0.0
    assert drowsiness_index(0.0, 1.0) == 0.0


def test_drowsiness_index_one_second_late():
    # (1 - e^-1) / (1 + e^-1), frozen from direct evaluation
    assert drowsiness_index(2.0, 1.0) == pytest.approx(0.4621171572600098,
                                                       abs=1e-12)


def test_drowsiness_index_monotone_and_bounded():
    taus = np.linspace(0.0, 10.0, 101)
    values = [drowsiness_index(t) for t in taus]
    assert all(0.0 <= v < 1.0 for v in values)
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert values[-1] > 0.99


def test_drowsiness_index_validation():
    with pytest.raises(ValueError):
        drowsiness_index(-0.1)
    with pytest.raises(ValueError):
        drowsiness_index(1.0, 0.0)


def test_smoothing_constant_series_unchanged():
    series = np.full(40, 0.7)
    assert np.allclose(smooth_moving_average(series, 90.0, 1.0), 0.7)


def test_smoothing_impulse_spreads_to_plateau():
    series = np.zeros(21)
    series[10] = 1.0
    out = smooth_moving_average(series, 10.0, 1.0)  # half window 5
    assert out[10] == pytest.approx(1.0 / 11.0)
    assert out[5] == pytest.approx(1.0 / 11.0)
    assert out[15] == pytest.approx(1.0 / 11.0)
    assert out[4] == 0.0
    assert out[16] == 0.0


def test_smoothing_window_below_period_is_identity():
    series = np.arange(8, dtype=float)
    assert np.array_equal(smooth_moving_average(series, 0.5, 1.0), series)


def test_smoothing_truncates_at_the_ends():
    series = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    out = smooth_moving_average(series, 4.0, 1.0)  # half window 2
    assert out[0] == 1.0                 # radius 0 at the edge
    assert out[1] == pytest.approx(1 / 3)
    assert out[2] == pytest.approx(1 / 5)


def test_smoothing_rejects_empty_and_bad_window():
    with pytest.raises(ValueError):
        smooth_moving_average([], 90.0)
    with pytest.raises(ValueError):
        smooth_moving_average([1.0], 0.0)


def test_label_response_times_pipeline():
    taus = [1.0] * 10 + [3.0] * 10
    out = label_response_times(taus, window=4.0, sample_period=1.0)
    plateau = drowsiness_index(3.0)
    assert out[0] == 0.0
    assert out[-1] == pytest.approx(plateau)
    assert np.all(np.diff(out) >= -1e-12)


# -- synthetic data and csv -----------------------------------------------


def test_synthesize_deterministic_and_shaped():
    a = synthesize_dataset(11, m=3, rows=50, k=4)
    b = synthesize_dataset(11, m=3, rows=50, k=4)
    assert a.weights.shape == (5,)
    assert len(a.party_features) == 3
    assert a.party_features[0].shape == (50, 4)
    assert a.target_features.shape == (50, 4)
    for x, y in zip(a.party_features, b.party_features):
        assert np.array_equal(x, y)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.target_responses, b.target_responses)


def test_synthesize_default_shape_matches_experiment_dims():
    data = synthesize_dataset(0)
    assert len(data.party_features) == 14
    assert data.party_features[0].shape == (1200, 30)


def test_synthesize_noiseless_plant_recovers_exactly():
    data = synthesize_dataset(5, m=2, rows=60, k=4, noise=0.0)
    x = np.vstack(data.party_features)
    y = np.concatenate(data.party_responses)
    beta = solve_normal_equations(design_matrix(x, True), y)
    assert np.max(np.abs(beta - data.weights)) < 1e-10


def test_synthesize_rejects_bad_shapes():
    with pytest.raises(ValueError):
        synthesize_dataset(0, rows=3, k=3)
    with pytest.raises(ValueError):
        synthesize_dataset(0, k=3, weights=np.ones(3))


def test_csv_round_trip_lossless(tmp_path):
    data = synthesize_dataset(2, m=1, rows=25, k=3)
    path = tmp_path / "rows.csv"
    export_csv(path, data.party_features[0], data.party_responses[0])
    x, y = read_csv_rows(path)
    assert np.array_equal(x, data.party_features[0])
    assert np.array_equal(y, data.party_responses[0])


def test_csv_ragged_row_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,2.0,3.0\n1.0,2.0\n")
    with pytest.raises(ValueError, match="line 2"):
        read_csv_rows(path)


def test_csv_non_numeric_named(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,2.0\n1.0,oops\n")
    with pytest.raises(ValueError, match="line 2"):
        read_csv_rows(path)


def test_csv_header_skipped(tmp_path):
    path = tmp_path / "rows.csv"
    path.write_text("alpha,beta,label\n0.5,-0.25,0.75\n")
    x, y = read_csv_rows(path)
    assert x.tolist() == [[0.5, -0.25]]
    assert y.tolist() == [0.75]


def test_ingest_fit_scaling_and_reuse(tmp_path):
    train = tmp_path / "train.csv"
    train.write_text("0.0,10.0,0.5\n2.0,20.0,0.6\n4.0,30.0,0.7\n")
    dataset, scaling = ingest_csv(train, P)
    plain_x, _ = dataset.plain()
    assert plain_x.min() >= -1.0 and plain_x.max() <= 1.0
    assert np.allclose(scaling.centers, [2.0, 20.0])
    # held-out row outside the training range clamps into [-1, 1]
    held = scaling.apply(np.array([[9.0, 5.0]]))
    assert held.tolist() == [[1.0, -1.0]]


def test_ingest_none_scaling_rejects_out_of_range(tmp_path):
    path = tmp_path / "rows.csv"
    path.write_text("1.5,0.2\n")
    with pytest.raises(ValueError, match="outside"):
        ingest_csv(path, P, scaling="none")


def test_scaling_params_round_trip(tmp_path):
    scaling = ScalingParams.fit(np.array([[0.0, -2.0], [4.0, 2.0]]))
    path = tmp_path / "scale.json"
    scaling.save(path)
    loaded = ScalingParams.load(path)
    assert np.array_equal(loaded.centers, scaling.centers)
    assert np.array_equal(loaded.halves, scaling.halves)


def test_scaling_constant_column_survives():
    scaling = ScalingParams.fit(np.array([[3.0], [3.0]]))
    assert scaling.apply(np.array([[3.0]])).tolist() == [[0.0]]


# -- configuration and reports --------------------------------------------


def test_scenario_config_validation():
    with pytest.raises(ValueError, match="scenario"):
        ScenarioConfig(scenario="x").validate()
    with pytest.raises(ValueError, match="mode"):
        ScenarioConfig(mode="x").validate()
    with pytest.raises(ValueError, match="party count"):
        ScenarioConfig(m=1).validate()
    with pytest.raises(ValueError, match="party count"):
        ScenarioConfig(m=65).validate()
    with pytest.raises(ValueError, match="calibration"):
        ScenarioConfig(scenario="tc", calibration_rows=0).validate()
    with pytest.raises(ValueError, match="rows"):
        ScenarioConfig(k=10, rows=10).validate()
    with pytest.raises(ValueError, match="trace bound"):
        ScenarioConfig(m=2, k=3, rows=50, trace_bound=10.0).validate()


def test_roster_duplicate_party_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        SessionRoster(session_id=bytes(16), scenario="ti-lr",
                      ba_host="127.0.0.1", ba_port=1, party_ids=(1, 2, 1),
                      params=make_params(1, 1), kappa=0)


def test_run_report_json_round_trip():
    report = RunReport(scenario="ti", mode="threads", m=2, k=3,
                       rows_per_party=10, test_rows=5,
                       train_seconds_clear=0.1, train_seconds_smc=1.0,
                       infer_seconds_clear=0.01, infer_seconds_smc=0.1,
                       rmse_clear=0.5, rmse_smc=0.5, messages=10,
                       bytes_total=100, rounds=4)
    again = RunReport.from_json(report.to_json())
    assert again == report
    table = RunReport.table([report])
    assert "rmse clear" in table and "threads" in table


def test_rmse_helper():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))


# -- full scenario runs ----------------------------------------------------


def small_config(**kw):
    base = dict(m=2, k=3, rows=40, calibration_rows=10, test_rows=8,
                e=20, f=40, iterations=16, seed=9, data_seed=9, timeout=60.0)
    base.update(kw)
    return ScenarioConfig(**base)


def test_run_scenario_threads_ti_parity(tmp_path):
    config = small_config(scenario="ti", run_dir=str(tmp_path))
    report = run_scenario(config)
    assert report.rmse_clear is not None
    assert abs(report.rmse_smc - report.rmse_clear) <= 1e-6
    assert report.test_rows == 8
    assert report.messages > 0 and report.rounds > 0
    loaded = load_reports(tmp_path / "report.jsonl")
    assert loaded == [report]
    assert "ti" in (tmp_path / "report.txt").read_text()


def test_run_scenario_threads_tc_parity():
    report = run_scenario(small_config(scenario="tc", m=3))
    assert abs(report.rmse_smc - report.rmse_clear) <= 1e-6


def test_run_scenario_threads_tc_ensemble_matches_oracle():
    config = small_config(scenario="tc", m=2, noise=0.0)
    report = run_scenario(config)
    # noiseless plant: both paths sit on the plant, so both errors vanish
    assert report.rmse_clear <= 1e-6
    assert report.rmse_smc <= 1e-6


def test_run_scenario_spawn_ti(tmp_path):
    config = small_config(scenario="ti", mode="spawn",
                          run_dir=str(tmp_path / "run"))
    report = run_scenario(config)
    assert abs(report.rmse_smc - report.rmse_clear) <= 1e-6
    run = tmp_path / "run"
    assert (run / "ba_stats.json").exists()
    assert (run / "models" / "party1.model").exists()
    assert (run / "transcripts" / "party2.jsonl").exists()
    stats = json.loads((run / "ba_stats.json").read_text())
    assert stats["peak_sockets"] <= config.m + 3


def test_run_scenario_spawn_tc(tmp_path):
    config = small_config(scenario="tc", mode="spawn", m=2, test_rows=5,
                          run_dir=str(tmp_path / "run"))
    report = run_scenario(config)
    assert abs(report.rmse_smc - report.rmse_clear) <= 1e-6
    run = tmp_path / "run"
    assert (run / "roster_s1.ini").exists()
    assert (run / "roster_mask.ini").exists()
    assert (run / "models" / "target_s2.model").exists()


def test_spawn_matches_threads_predictions(tmp_path):
    # different randomness material per mode, so agreement holds at
    # protocol precision rather than bitwise
    threads = run_scenario(small_config(scenario="ti"))
    spawned = run_scenario(small_config(
        scenario="ti", mode="spawn", run_dir=str(tmp_path / "run")))
    assert spawned.rmse_smc == pytest.approx(threads.rmse_smc, abs=1e-6)


def test_run_scenario_rejects_bad_data_paths(tmp_path):
    config = small_config(data_paths=[str(tmp_path / "only.csv")])
    data = synthesize_dataset(0, m=1, rows=40, k=3)
    export_csv(tmp_path / "only.csv", data.party_features[0],
               data.party_responses[0])
    with pytest.raises(ValueError, match="one csv per party"):
        run_scenario(config)
