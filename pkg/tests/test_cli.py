import json
import subprocess
import sys
import time

import numpy as np
import pytest

from mpclr.cli import main
from mpclr.field import make_params
from mpclr.harness import ScenarioConfig, run_scenario, synthesize_dataset
from mpclr.randomness import CorrelatedBundle
from mpclr.regression import design_matrix, solve_normal_equations
from mpclr.transport import SessionRoster


def run_cli(capsys, *argv):
    code = main(list(argv))
    assert code == 0
    return capsys.readouterr().out


def test_params_prints_field(capsys):
    out = json.loads(run_cli(capsys, "params", "--e", "20", "--f", "40"))
    assert out["q"] == str(make_params(20, 40).q)
    assert out["kappa_effective"] == 0
    assert out["element_bytes"] == 13


def test_config_file_overrides_flags(capsys, tmp_path, monkeypatch):
    config = tmp_path / "mpclr.ini"
    config.write_text("[params]\ne = 1\nf = 1\n")
    monkeypatch.setenv("MPCLR_CONFIG", str(config))
    out = json.loads(run_cli(capsys, "params", "--e", "20", "--f", "40"))
    assert out["e"] == 1 and out["f"] == 1
    assert out["q"] == "17"


def test_config_file_unknown_key_rejected(tmp_path, monkeypatch):
    config = tmp_path / "mpclr.ini"
    config.write_text("[params]\nbogus = 1\n")
    monkeypatch.setenv("MPCLR_CONFIG", str(config))
    with pytest.raises(SystemExit, match="bogus"):
        main(["params"])


def test_synth_data_writes_files(capsys, tmp_path):
    out = json.loads(run_cli(
        capsys, "synth-data", "--out", str(tmp_path), "--m", "2",
        "--rows", "20", "--k", "3", "--seed", "6"))
    assert len(out["files"]) == 3
    assert (tmp_path / "party1.csv").exists()
    assert (tmp_path / "target.csv").exists()
    data = synthesize_dataset(6, m=2, rows=20, k=3)
    assert out["weights"] == data.weights.tolist()


def test_label_stdout_and_file(capsys, tmp_path):
    log = tmp_path / "taus.txt"
    log.write_text("1.0\n2.0\n1.0\n")
    out = run_cli(capsys, "label", "--input", str(log), "--window", "1.0")
    lines = out.strip().splitlines()
    assert lines[0] == "response_seconds,drowsiness"
    assert len(lines) == 4
    assert float(lines[1].split(",")[1]) == 0.0
    target = tmp_path / "labeled.csv"
    run_cli(capsys, "label", "--input", str(log), "--window", "1.0",
            "--out", str(target))
    assert target.read_text().strip() == out.strip()


def test_ti_gen_writes_loadable_bundles(capsys, tmp_path):
    session = "ab" * 16
    out = json.loads(run_cli(
        capsys, "ti-gen", "--out", str(tmp_path), "--group", "1 2",
        "--session", session, "--features", "3", "--iterations", "4",
        "--inference-rows", "2", "--e", "8", "--f", "8", "--seed", "5"))
    assert out["session"] == session
    bundle = CorrelatedBundle.load(tmp_path / "party1.bundle")
    assert bundle.party == 1
    assert bundle.group == (1, 2)
    assert bundle.session_id == bytes.fromhex(session)
    assert len(bundle.triples[(3, 3, 3)]) == 8
    assert len(bundle.triples[(1, 3, 1)]) == 2


def test_ti_gen_deterministic_given_seed(capsys, tmp_path):
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
        run_cli(capsys, "ti-gen", "--out", str(tmp_path / sub),
                "--group", "1 2", "--session", "cd" * 16,
                "--features", "2", "--iterations", "2",
                "--e", "8", "--f", "8", "--seed", "5", "--scope", "x")
    a = (tmp_path / "a" / "party2.bundle").read_bytes()
    b = (tmp_path / "b" / "party2.bundle").read_bytes()
    assert a == b


def test_report_and_plot_from_run_dir(capsys, tmp_path):
    run_dir = tmp_path / "run"
    run_scenario(ScenarioConfig(
        scenario="ti", m=2, k=3, rows=40, test_rows=6, e=20, f=40,
        iterations=16, seed=1, data_seed=1, run_dir=str(run_dir)))
    out = run_cli(capsys, "report", str(run_dir))
    assert "rmse clear" in out and "threads" in out
    plots = tmp_path / "plots"
    run_cli(capsys, "plot", str(run_dir), "--out", str(plots))
    assert (plots / "runtime_vs_m.png").stat().st_size > 0
    assert (plots / "rmse.png").stat().st_size > 0


def test_serve_party_roster_count_enforced(tmp_path):
    with pytest.raises(SystemExit, match="exactly one"):
        main(["serve-party", "--roster", "a", "--roster", "b",
              "--party", "1", "--data", str(tmp_path / "x.csv")])


def test_run_scenario_subcommand(capsys):
    out = run_cli(capsys, "run-scenario", "--scenario", "ti", "--m", "2",
                  "--k", "3", "--rows", "40", "--test-rows", "6",
                  "--e", "20", "--f", "40", "--iterations", "16",
                  "--seed", "2")
    assert "rmse smc" in out


def cli(*args):
    return [sys.executable, "-m", "mpclr", *map(str, args)]


def test_manual_pipeline_matches_plaintext(tmp_path):
    """The documented by-hand flow: synth-data, ti-gen, serve-ba,
    serve-party per data holder, then run-client."""
    params = make_params(20, 40)
    k, rows, test_rows, iterations = 2, 30, 4, 12
    subprocess.run(cli("synth-data", "--out", tmp_path, "--m", 2,
                       "--rows", rows, "--k", k, "--seed", 4,
                       "--noise", 0.02), check=True, capture_output=True)
    session = "5a" * 16
    subprocess.run(cli("ti-gen", "--out", tmp_path / "bundles",
                       "--group", "1 2", "--session", session,
                       "--features", k + 1, "--iterations", iterations,
                       "--inference-rows", test_rows, "--e", 20, "--f", 40,
                       "--seed", 4, "--scope", "demo"),
                   check=True, capture_output=True)

    port_file = tmp_path / "ba.port"
    ba = subprocess.Popen(cli("serve-ba", "--port", 0, "--parties", "1 2",
                              "--port-file", port_file),
                          stdout=subprocess.DEVNULL,
                          stderr=subprocess.STDOUT)
    procs = [ba]
    try:
        deadline = time.monotonic() + 20
        while not port_file.exists() or not port_file.read_text().strip():
            assert time.monotonic() < deadline, "relay never came up"
            time.sleep(0.05)
        port = int(port_file.read_text())

        roster = SessionRoster(
            session_id=bytes.fromhex(session), scenario="ti-lr",
            ba_host="127.0.0.1", ba_port=port, party_ids=(1, 2),
            params=params, kappa=48, secret=b"pipeline-test", timeout=60.0,
            extra={"iterations": iterations, "trace_bound": 60 * (k + 1),
                   "serve_rows": test_rows, "intercept": 1,
                   "bundle_1": "bundles/party1.bundle",
                   "bundle_2": "bundles/party2.bundle"})
        roster_path = tmp_path / "roster.ini"
        roster.save(roster_path)

        for pid in (1, 2):
            procs.append(subprocess.Popen(
                cli("serve-party", "--roster", roster_path, "--party", pid,
                    "--data", tmp_path / f"party{pid}.csv",
                    "--out", tmp_path),
                stdout=subprocess.DEVNULL, stderr=subprocess.STDOUT))
        test_csv = tmp_path / "queries.csv"
        data = synthesize_dataset(4, m=2, rows=rows, k=k, noise=0.02)
        from mpclr.harness import export_csv
        export_csv(test_csv, data.target_features[:test_rows],
                   data.target_responses[:test_rows])
        client = subprocess.run(
            cli("run-client", "--roster", roster_path, "--test", test_csv,
                "--out", tmp_path / "predictions.json", "--seed", 4),
            capture_output=True, text=True, timeout=120)
        assert client.returncode == 0, client.stderr
        for proc in procs:
            assert proc.wait(60) == 0
    finally:
        for proc in procs:
            if proc.poll() is None:
                proc.kill()

    with open(tmp_path / "predictions.json") as fh:
        predictions = np.asarray(json.load(fh)["predictions"])
    beta = solve_normal_equations(
        design_matrix(np.vstack(data.party_features), True),
        np.concatenate(data.party_responses))
    oracle = design_matrix(data.target_features[:test_rows], True) @ beta
    assert np.max(np.abs(predictions - oracle)) <= 1e-6
