"""Experiment tooling: dataset synthesis and ingestion, the response-time
labeling pipeline, scenario orchestration in two modes (threads in one
process, or one OS process per role on localhost), and run reports.

A scenario run always computes two paths over the same data: the plaintext
baseline (normal equations in floating point) and the shared-data path.
The report carries both RMSE columns so their parity is visible.
"""

from __future__ import annotations

import csv
import json
import math
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from mpclr.field import (
    DEFAULT_E,
    DEFAULT_F,
    FieldParams,
    FixedPointCodec,
    make_params,
)
from mpclr.protocols import DEFAULT_INVERT_ITERATIONS, PartyEngine
from mpclr.randomness import (
    DEFAULT_KAPPA,
    CorrelatedBundle,
    generate,
    plan_requirements,
)
from mpclr.regression import (
    LocalDataset,
    RunObserver,
    WorkflowConfig,
    derived_rng,
    design_matrix,
    infer_tc,
    infer_ti,
    inference_client,
    inference_party,
    save_model_fragment,
    solve_normal_equations,
    tc_source_serve,
    tc_target_combine,
    tc_target_session_serve,
    train_tc,
    train_ti,
    training_party,
)
from mpclr.transport import (
    CLIENT_ID,
    BAServer,
    SessionRoster,
    Transcript,
)

RESPONSE_THRESHOLD_SECONDS = 1.0


# -- labeling ------------------------------------------------------------------


def drowsiness_index(tau: float, tau0: float = RESPONSE_THRESHOLD_SECONDS) -> float:
    """Map a response time to [0, 1): slow responses saturate toward 1,
    responses at or below the threshold count as fully alert (0)."""
    if tau < 0:
        raise ValueError("response time must be nonnegative")
    if tau0 <= 0:
        raise ValueError("threshold must be positive")
    z = math.exp(-(tau - tau0))
    return max(0.0, (1.0 - z) / (1.0 + z))


def smooth_moving_average(series, window: float = 90.0,
                          sample_period: float = 1.0) -> np.ndarray:
    """Centered square moving average, truncated symmetrically at the ends
    so the window never reaches outside the series."""
    values = np.asarray(series, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("series must be a nonempty vector")
    if window <= 0 or sample_period <= 0:
        raise ValueError("window and sample period must be positive")
    half = int(round(window / (2.0 * sample_period)))
    if half == 0:
        return values.copy()
    n = len(values)
    out = np.empty(n)
    for i in range(n):
        r = min(half, i, n - 1 - i)
        out[i] = values[i - r:i + r + 1].mean()
    return out


def label_response_times(taus, tau0: float = RESPONSE_THRESHOLD_SECONDS,
                         window: float = 90.0,
                         sample_period: float = 1.0) -> np.ndarray:
    """Response-time log to smoothed drowsiness series."""
    indexed = np.array([drowsiness_index(t, tau0) for t in taus])
    return smooth_moving_average(indexed, window, sample_period)


# -- data ----------------------------------------------------------------------


@dataclass
class ScalingParams:
    """Per-feature affine map onto [-1, 1]; reusable on held-out rows,
    which are clamped into range."""

    centers: np.ndarray
    halves: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "ScalingParams":
        x = np.asarray(features, dtype=float)
        lo, hi = x.min(axis=0), x.max(axis=0)
        halves = (hi - lo) / 2.0
        halves[halves == 0] = 1.0
        return cls((hi + lo) / 2.0, halves)

    def apply(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        return np.clip((x - self.centers) / self.halves, -1.0, 1.0)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"centers": self.centers.tolist(),
                       "halves": self.halves.tolist()}, fh)

    @classmethod
    def load(cls, path) -> "ScalingParams":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(np.asarray(raw["centers"]), np.asarray(raw["halves"]))


@dataclass
class SyntheticData:
    """Planted-model data for m sources plus a held-out target set."""

    weights: np.ndarray  # k feature weights then the intercept
    party_features: list
    party_responses: list
    target_features: np.ndarray
    target_responses: np.ndarray

    def party_datasets(self, params: FieldParams,
                       intercept: bool = True) -> list[LocalDataset]:
        return [LocalDataset.from_plain(x, y, params, intercept)
                for x, y in zip(self.party_features, self.party_responses)]


def synthesize_dataset(seed, m: int = 14, rows: int = 1200, k: int = 30,
                       noise: float = 0.05, weights=None) -> SyntheticData:
    """Uniform features in [-1, 1]; responses follow a planted affine model
    plus Gaussian noise, clamped into [0, 1] like a drowsiness index."""
    if k < 1:
        raise ValueError("at least one feature required")
    if rows < k + 1:
        raise ValueError("need more rows than features")
    rng = np.random.default_rng(seed)
    if weights is None:
        raw = rng.uniform(-1.0, 1.0, size=k)
        weights = np.append(0.4 * raw / np.abs(raw).sum(), 0.5)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (k + 1,):
            raise ValueError("weights must cover k features plus intercept")

    def draw(n):
        x = rng.uniform(-1.0, 1.0, size=(n, k))
        y = x @ weights[:-1] + weights[-1]
        if noise:
            y = y + rng.normal(0.0, noise, size=n)
        return x, np.clip(y, 0.0, 1.0)

    party_features, party_responses = [], []
    for _ in range(m):
        x, y = draw(rows)
        party_features.append(x)
        party_responses.append(y)
    tx, ty = draw(rows)
    return SyntheticData(np.asarray(weights, dtype=float), party_features,
                         party_responses, tx, ty)


def export_csv(path, features: np.ndarray, responses: np.ndarray) -> None:
    """One row per sample: the features then the response, full precision."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(responses, dtype=float).reshape(-1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row, response in zip(x, y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(response))])


def read_csv_rows(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw float rows: features matrix and response vector. Rejects ragged
    and non-numeric rows, naming the offending line."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if width is None and any(_not_float(c) for c in row):
                continue  # header line
            try:
                parsed = [float(c) for c in row]
            except ValueError:
                raise ValueError(f"{path}: non-numeric value on line {lineno}")
            if width is None:
                width = len(parsed)
            elif len(parsed) != width:
                raise ValueError(f"{path}: ragged row on line {lineno}")
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if len(rows[0]) < 2:
        raise ValueError(f"{path}: rows need at least one feature and a response")
    data = np.asarray(rows, dtype=float)
    return data[:, :-1], data[:, -1]


def _not_float(cell: str) -> bool:
    try:
        float(cell)
        return False
    except ValueError:
        return True


def ingest_csv(path, params: FieldParams, *, intercept: bool = True,
               scaling="fit"):
    """Load, scale, and encode a party's rows.

    scaling: "fit" learns the [-1, 1] map from this file and returns it for
    reuse at inference; "none" trusts that the file is already scaled; or
    pass a ScalingParams to reuse one (held-out values get clamped into
    range). Returns (LocalDataset, ScalingParams or None).
    """
    features, responses = read_csv_rows(path)
    if isinstance(scaling, ScalingParams):
        features = scaling.apply(features)
    elif scaling == "fit":
        scaling = ScalingParams.fit(features)
        features = scaling.apply(features)
    elif scaling == "none":
        scaling = None
        if np.abs(features).max() > 1.0 + 1e-9:
            raise ValueError(f"{path}: unscaled feature outside [-1, 1]")
    else:
        raise ValueError("scaling must be 'fit', 'none', or ScalingParams")
    return LocalDataset.from_plain(features, responses, params, intercept), scaling


# -- scenario configuration and reports ----------------------------------------


@dataclass
class ScenarioConfig:
    scenario: str = "ti"          # "ti" or "tc"
    mode: str = "threads"         # "threads" or "spawn"
    m: int = 2
    k: int = 30
    rows: int = 1200              # per source party
    calibration_rows: int = 100   # TC: leading target rows held for calibration
    test_rows: int | None = None  # cap on inference rows (None: all)
    e: int = DEFAULT_E
    f: int = DEFAULT_F
    kappa: int = DEFAULT_KAPPA
    iterations: int = DEFAULT_INVERT_ITERATIONS
    trace_bound: float | None = None
    intercept: bool = True
    noise: float = 0.05
    seed: int | None = 0
    data_seed: int = 0
    data_paths: list | None = None  # per-party CSVs, target file last
    encrypt: bool = True            # spawn-mode wire encryption
    host: str = "127.0.0.1"
    timeout: float = 120.0
    run_dir: str | None = None

    def validate(self) -> None:
        if self.scenario not in ("ti", "tc"):
            raise ValueError("scenario must be 'ti' or 'tc'")
        if self.mode not in ("threads", "spawn"):
            raise ValueError("mode must be 'threads' or 'spawn'")
        if not 2 <= self.m <= 64:
            raise ValueError("party count must lie in [2, 64]")
        if self.scenario == "tc" and self.calibration_rows < 1:
            raise ValueError("calibration needs at least one row")
        if self.k < 1 or self.rows < self.k + 1:
            raise ValueError("need k >= 1 and rows > k")
        if self.trace_bound is not None:
            total = self.m * self.rows + (self.calibration_rows
                                          if self.scenario == "tc" else 0)
            if self.trace_bound < total * (self.k + int(self.intercept)):
                raise ValueError("trace bound below the rows * columns contract")

    def params(self) -> FieldParams:
        return make_params(self.e, self.f)

    def workflow(self) -> WorkflowConfig:
        return WorkflowConfig(params=self.params(), kappa=self.kappa,
                              iterations=self.iterations,
                              trace_bound=self.trace_bound,
                              timeout=self.timeout, seed=self.seed)


@dataclass
class RunReport:
    scenario: str
    mode: str
    m: int
    k: int
    rows_per_party: int
    test_rows: int
    train_seconds_clear: float
    train_seconds_smc: float
    infer_seconds_clear: float
    infer_seconds_smc: float
    rmse_clear: float | None
    rmse_smc: float | None
    messages: int
    bytes_total: int
    rounds: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunReport":
        return cls(**json.loads(line))

    COLUMNS = (
        ("scenario", "scenario"), ("mode", "mode"), ("m", "m"), ("k", "k"),
        ("train clear s", "train_seconds_clear"),
        ("train smc s", "train_seconds_smc"),
        ("infer clear s", "infer_seconds_clear"),
        ("infer smc s", "infer_seconds_smc"),
        ("rmse clear", "rmse_clear"), ("rmse smc", "rmse_smc"),
        ("messages", "messages"), ("bytes", "bytes_total"),
    )

    @staticmethod
    def table(reports) -> str:
        def fmt(value):
            if value is None:
                return "-"
            if isinstance(value, float):
                return f"{value:.6f}" if abs(value) < 1000 else f"{value:.1f}"
            return str(value)

        rows = [[fmt(getattr(r, attr)) for _, attr in RunReport.COLUMNS]
                for r in reports]
        headers = [h for h, _ in RunReport.COLUMNS]
        widths = [
            max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
            for i, h in enumerate(headers)
        ]
        lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths)),
                 "  ".join("-" * w for w in widths)]
        for row in rows:
            lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        return "\n".join(lines)


def load_reports(path) -> list[RunReport]:
    reports = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                reports.append(RunReport.from_json(line))
    return reports


def rmse(predictions, truth) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean((p - t) ** 2)))


# -- shared scenario plumbing ---------------------------------------------------


def _scenario_data(config: ScenarioConfig):
    """Per-party float rows plus the target's rows, synthetic or from
    files (one CSV per source, target file last)."""
    if config.data_paths:
        paths = list(config.data_paths)
        if len(paths) != config.m + 1:
            raise ValueError("expected one csv per party plus the target file")
        loaded = [read_csv_rows(p) for p in paths]
        widths = {x.shape[1] for x, _ in loaded}
        if len(widths) != 1:
            raise ValueError("feature counts differ between files")
        tx, ty = loaded[-1]
        return ([x for x, _ in loaded[:-1]], [y for _, y in loaded[:-1]],
                tx, ty)
    data = synthesize_dataset(config.data_seed, config.m, config.rows,
                              config.k, config.noise)
    return (data.party_features, data.party_responses,
            data.target_features, data.target_responses)


def _split_target(config: ScenarioConfig, tx, ty):
    """TI treats the whole target set as test rows; TC holds out the
    leading rows for calibration."""
    if config.scenario == "tc":
        nc = config.calibration_rows
        if len(tx) <= nc:
            raise ValueError("target set not larger than the calibration split")
        calibration = (tx[:nc], ty[:nc])
        test_x, test_y = tx[nc:], ty[nc:]
    else:
        calibration = None
        test_x, test_y = tx, ty
    limit = config.test_rows or len(test_x)
    return calibration, test_x[:limit], test_y[:limit]


def _clear_path_ti(px, py, test_x, test_y, intercept):
    t0 = time.perf_counter()
    beta = solve_normal_equations(
        design_matrix(np.vstack(px), intercept), np.concatenate(py))
    train_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    predictions = design_matrix(test_x, intercept) @ beta
    infer_s = time.perf_counter() - t0
    return predictions, rmse(predictions, test_y), train_s, infer_s


def _clear_path_tc(px, py, calibration, test_x, test_y, intercept):
    calib_x, calib_y = calibration
    t0 = time.perf_counter()
    betas = [
        solve_normal_equations(
            design_matrix(np.vstack([x, calib_x]), intercept),
            np.concatenate([y, calib_y]))
        for x, y in zip(px, py)
    ]
    train_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    design = design_matrix(test_x, intercept)
    predictions = np.mean([design @ b for b in betas], axis=0)
    infer_s = time.perf_counter() - t0
    return predictions, rmse(predictions, test_y), train_s, infer_s


def _report(config, test_rows, clear, smc, wire) -> RunReport:
    return RunReport(
        scenario=config.scenario, mode=config.mode, m=config.m, k=config.k,
        rows_per_party=config.rows, test_rows=test_rows,
        train_seconds_clear=clear["train_s"], train_seconds_smc=smc["train_s"],
        infer_seconds_clear=clear["infer_s"], infer_seconds_smc=smc["infer_s"],
        rmse_clear=clear["rmse"], rmse_smc=smc["rmse"],
        messages=wire["messages"], bytes_total=wire["bytes"],
        rounds=wire["rounds"])


# -- threaded execution ---------------------------------------------------------


def _run_scenario_threads(config: ScenarioConfig) -> RunReport:
    params = config.params()
    workflow = config.workflow()
    px, py, tx, ty = _scenario_data(config)
    calibration, test_x, test_y = _split_target(config, tx, ty)
    datasets = [LocalDataset.from_plain(x, y, params, config.intercept)
                for x, y in zip(px, py)]
    observer = RunObserver()

    if config.scenario == "ti":
        predictions_clear, rmse_clear, tcl, icl = _clear_path_ti(
            px, py, test_x, test_y, config.intercept)
        t0 = time.perf_counter()
        model = train_ti(datasets, workflow, observer)
        train_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        predictions = infer_ti(model, test_x, workflow, observer)
        infer_s = time.perf_counter() - t0
    else:
        predictions_clear, rmse_clear, tcl, icl = _clear_path_tc(
            px, py, calibration, test_x, test_y, config.intercept)
        calibration_set = LocalDataset.from_plain(*calibration, params,
                                                  config.intercept)
        t0 = time.perf_counter()
        model = train_tc(datasets, calibration_set, workflow, observer)
        train_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        predictions = infer_tc(model, test_x, workflow, observer)
        infer_s = time.perf_counter() - t0

    stats = observer.stats()
    return _report(
        config, len(test_x),
        {"train_s": tcl, "infer_s": icl, "rmse": rmse_clear},
        {"train_s": train_s, "infer_s": infer_s,
         "rmse": rmse(predictions, test_y)},
        {"messages": stats["messages"], "bytes": stats["bytes"],
         "rounds": stats["rounds"]})


# -- process-per-role execution --------------------------------------------------


def _module_cmd(*args) -> list:
    return [sys.executable, "-m", "mpclr", *map(str, args)]


def _wait_port_file(path: Path, timeout: float = 30.0) -> int:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if path.exists():
            text = path.read_text().strip()
            if text:
                return int(text)
        time.sleep(0.02)
    raise TimeoutError(f"broadcast agent never published its port at {path}")


def _spawn(cmd, log_path: Path) -> subprocess.Popen:
    log = open(log_path, "w")
    return subprocess.Popen(cmd, stdout=log, stderr=subprocess.STDOUT)


def _drain(procs: dict, timeout: float) -> None:
    deadline = time.monotonic() + timeout
    failures = []
    for name, proc in procs.items():
        remaining = max(0.1, deadline - time.monotonic())
        try:
            code = proc.wait(remaining)
        except subprocess.TimeoutExpired:
            proc.kill()
            failures.append(f"{name} timed out")
            continue
        if code != 0:
            failures.append(f"{name} exited {code}")
    if failures:
        raise RuntimeError("scenario processes failed: " + ", ".join(failures))


def _count_rounds(relay_paths) -> int:
    seen = set()
    for path in relay_paths:
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                seen.add((rec["instance"], rec["round"]))
    return len(seen)


def _sum_stats(stats_paths) -> tuple[int, int]:
    messages = total = 0
    for path in stats_paths:
        with open(path) as fh:
            stats = json.load(fh)
        messages += stats["messages"]
        total += stats["bytes"]
    return messages, total


def _session_roster(config, session_id, scenario, port, party_ids, params,
                    secret, extra) -> SessionRoster:
    return SessionRoster(
        session_id=session_id, scenario=scenario, ba_host=config.host,
        ba_port=port, party_ids=tuple(party_ids), params=params,
        kappa=config.kappa, secret=secret, encrypt=config.encrypt,
        timeout=config.timeout, extra=extra)


def _run_scenario_spawn(config: ScenarioConfig) -> RunReport:
    params = config.params()
    run_dir = Path(config.run_dir or tempfile.mkdtemp(prefix="mpclr-run-"))
    for sub in ("bundles", "transcripts", "models", "timings", "logs"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)

    px, py, tx, ty = _scenario_data(config)
    calibration, test_x, test_y = _split_target(config, tx, ty)
    for i, (x, y) in enumerate(zip(px, py), start=1):
        export_csv(run_dir / f"party{i}.csv", x, y)
    export_csv(run_dir / "target.csv", test_x, test_y)
    if calibration is not None:
        export_csv(run_dir / "calibration.csv", *calibration)

    secret = bytes(derived_rng(config.seed, "wire", "secret").randbytes(32))
    k_design = config.k + int(config.intercept)
    if config.scenario == "ti":
        smc = _spawn_ti(config, params, run_dir, secret, k_design,
                        len(test_x))
        clear = _clear_path_ti(px, py, test_x, test_y, config.intercept)
    else:
        smc = _spawn_tc(config, params, run_dir, secret, k_design,
                        len(test_x))
        clear = _clear_path_tc(px, py, calibration, test_x, test_y,
                               config.intercept)
    predictions_clear, rmse_clear, tcl, icl = clear
    report = _report(
        config, len(test_x),
        {"train_s": tcl, "infer_s": icl, "rmse": rmse_clear},
        {"train_s": smc["train_s"], "infer_s": smc["infer_s"],
         "rmse": rmse(smc["predictions"], test_y)},
        smc["wire"])
    _write_report(run_dir, report)
    return report


def _spawn_ti(config, params, run_dir: Path, secret, k_design, test_rows):
    group = tuple(range(1, config.m + 1))
    session_id = bytes(derived_rng(config.seed, "ti", "session").randbytes(16))
    total_rows = config.m * config.rows
    trace_bound = config.trace_bound or total_rows * k_design

    # offline phase: the initializer is its own process and then goes away
    gen = subprocess.run(
        _module_cmd("ti-gen", "--out", run_dir / "bundles",
                    "--group", " ".join(map(str, group)),
                    "--session", session_id.hex(),
                    "--features", k_design,
                    "--iterations", config.iterations,
                    "--inference-rows", test_rows,
                    "--e", config.e, "--f", config.f,
                    "--kappa", config.kappa,
                    *(() if config.seed is None
                      else ("--seed", config.seed, "--scope", "ti/material"))),
        capture_output=True, text=True)
    if gen.returncode != 0:
        raise RuntimeError(f"ti-gen failed: {gen.stderr}")

    port_file = run_dir / "ba.port"
    ba = _spawn(
        _module_cmd("serve-ba", "--host", config.host, "--port", 0,
                    "--parties", " ".join(map(str, group)),
                    "--port-file", port_file,
                    "--stats", run_dir / "ba_stats.json",
                    "--relay-log", run_dir / "ba_relay.jsonl"),
        run_dir / "logs" / "ba.log")
    procs = {"ba": ba}
    try:
        port = _wait_port_file(port_file)
        extra = {
            "iterations": config.iterations,
            "trace_bound": trace_bound,
            "serve_rows": test_rows,
            "intercept": int(config.intercept),
        }
        for pid in group:
            extra[f"bundle_{pid}"] = f"bundles/party{pid}.bundle"
        roster = _session_roster(config, session_id, "ti-lr", port, group,
                                 params, secret, extra)
        roster_path = run_dir / "roster.ini"
        roster.save(roster_path)

        for pid in group:
            procs[f"party{pid}"] = _spawn(
                _module_cmd("serve-party", "--roster", roster_path,
                            "--party", pid,
                            "--data", run_dir / f"party{pid}.csv",
                            "--out", run_dir),
                run_dir / "logs" / f"party{pid}.log")
        client = subprocess.run(
            _module_cmd("run-client", "--roster", roster_path,
                        "--test", run_dir / "target.csv",
                        "--out", run_dir / "predictions.json",
                        *(() if config.seed is None
                          else ("--seed", config.seed))),
            capture_output=True, text=True, timeout=config.timeout * 4)
        if client.returncode != 0:
            raise RuntimeError(f"client failed: {client.stderr}")
        _drain(procs, config.timeout * 4)
    except BaseException:
        for proc in procs.values():
            proc.kill()
        raise

    with open(run_dir / "predictions.json") as fh:
        outcome = json.load(fh)
    timings = []
    for pid in group:
        with open(run_dir / "timings" / f"party{pid}.json") as fh:
            timings.append(json.load(fh))
    messages, total_bytes = _sum_stats([run_dir / "ba_stats.json"])
    # the client's own span covers the parties' training wait, so the
    # serving span on the party side is the honest inference cost
    return {
        "predictions": np.asarray(outcome["predictions"]),
        "train_s": max(t["train_seconds"] for t in timings),
        "infer_s": max(t["infer_seconds"] for t in timings),
        "wire": {"messages": messages, "bytes": total_bytes,
                 "rounds": _count_rounds([run_dir / "ba_relay.jsonl"])},
    }


def _spawn_tc(config, params, run_dir: Path, secret, k_design, test_rows):
    m = config.m
    target_id = m + 1
    sources = tuple(range(1, m + 1))
    aggregator = min(sources)
    calibration_rows = config.calibration_rows
    trace = config.trace_bound or (config.rows + calibration_rows) * k_design

    session_rosters = []
    procs: dict = {}
    stats_paths, relay_paths = [], []
    try:
        # one bundle set and one relay per pairwise session
        for i in sources:
            session_id = bytes(
                derived_rng(config.seed, "tc", i, "session").randbytes(16))
            pair = (i, target_id)
            gen = subprocess.run(
                _module_cmd("ti-gen", "--out", run_dir / "bundles",
                            "--prefix", f"s{i}_",
                            "--group", " ".join(map(str, pair)),
                            "--session", session_id.hex(),
                            "--features", k_design,
                            "--iterations", config.iterations,
                            "--inference-rows", test_rows,
                            "--e", config.e, "--f", config.f,
                            "--kappa", config.kappa,
                            *(() if config.seed is None
                              else ("--seed", config.seed,
                                    "--scope", f"tc/{i}/material"))),
                capture_output=True, text=True)
            if gen.returncode != 0:
                raise RuntimeError(f"ti-gen failed: {gen.stderr}")
            port_file = run_dir / f"ba_s{i}.port"
            procs[f"ba_s{i}"] = _spawn(
                _module_cmd("serve-ba", "--host", config.host, "--port", 0,
                            "--parties", " ".join(map(str, pair)),
                            "--port-file", port_file,
                            "--stats", run_dir / f"ba_s{i}_stats.json",
                            "--relay-log", run_dir / f"ba_s{i}_relay.jsonl"),
                run_dir / "logs" / f"ba_s{i}.log")
            stats_paths.append(run_dir / f"ba_s{i}_stats.json")
            relay_paths.append(run_dir / f"ba_s{i}_relay.jsonl")
            port = _wait_port_file(port_file)
            extra = {
                "iterations": config.iterations,
                "trace_bound": trace,
                "serve_rows": test_rows,
                "intercept": int(config.intercept),
                "source": i,
                "aggregator": aggregator,
                "sources": " ".join(map(str, sources)),
                f"bundle_{i}": f"bundles/s{i}_party{i}.bundle",
                f"bundle_{target_id}": f"bundles/s{i}_party{target_id}.bundle",
            }
            roster = _session_roster(config, session_id, "tc-lr", port, pair,
                                     params, secret, extra)
            roster.save(run_dir / f"roster_s{i}.ini")
            session_rosters.append(run_dir / f"roster_s{i}.ini")

        # the mask relay spans all sources plus the target
        mask_port_file = run_dir / "ba_mask.port"
        procs["ba_mask"] = _spawn(
            _module_cmd("serve-ba", "--host", config.host, "--port", 0,
                        "--parties", " ".join(map(str, (*sources, target_id))),
                        "--port-file", mask_port_file,
                        "--stats", run_dir / "ba_mask_stats.json",
                        "--relay-log", run_dir / "ba_mask_relay.jsonl"),
            run_dir / "logs" / "ba_mask.log")
        stats_paths.append(run_dir / "ba_mask_stats.json")
        relay_paths.append(run_dir / "ba_mask_relay.jsonl")
        mask_session = bytes(
            derived_rng(config.seed, "tcinfer", "masks").randbytes(16))
        mask_roster = _session_roster(
            config, mask_session, "tc-lr",
            _wait_port_file(mask_port_file), (*sources, target_id), params,
            secret, {"aggregator": aggregator, "target": target_id,
                     "sources": " ".join(map(str, sources))})
        mask_roster.save(run_dir / "roster_mask.ini")

        for i in sources:
            procs[f"source{i}"] = _spawn(
                _module_cmd("serve-party",
                            "--roster", run_dir / f"roster_s{i}.ini",
                            "--mask-roster", run_dir / "roster_mask.ini",
                            "--party", i,
                            "--data", run_dir / f"party{i}.csv",
                            "--out", run_dir,
                            *(() if config.seed is None
                              else ("--seed", config.seed))),
                run_dir / "logs" / f"source{i}.log")
        target_cmd = _module_cmd(
            "serve-party", "--party", target_id,
            "--mask-roster", run_dir / "roster_mask.ini",
            "--data", run_dir / "calibration.csv",
            "--test", run_dir / "target.csv",
            "--out", run_dir,
            *(() if config.seed is None else ("--seed", config.seed)))
        for roster_path in session_rosters:
            target_cmd += ["--roster", str(roster_path)]
        target = subprocess.run(target_cmd, capture_output=True, text=True,
                                timeout=config.timeout * 4)
        if target.returncode != 0:
            raise RuntimeError(f"target failed: {target.stderr}")
        _drain(procs, config.timeout * 4)
    except BaseException:
        for proc in procs.values():
            proc.kill()
        raise

    with open(run_dir / "predictions.json") as fh:
        outcome = json.load(fh)
    train_candidates = [outcome["train_seconds"]]
    for i in sources:
        with open(run_dir / "timings" / f"party{i}.json") as fh:
            train_candidates.append(json.load(fh)["train_seconds"])
    messages, total_bytes = _sum_stats(stats_paths)
    return {
        "predictions": np.asarray(outcome["predictions"]),
        "train_s": max(train_candidates),
        "infer_s": outcome["infer_seconds"],
        "wire": {"messages": messages, "bytes": total_bytes,
                 "rounds": _count_rounds(relay_paths)},
    }


def _write_report(run_dir: Path, report: RunReport) -> None:
    with open(run_dir / "report.jsonl", "a") as fh:
        fh.write(report.to_json() + "\n")
    with open(run_dir / "report.txt", "w") as fh:
        fh.write(RunReport.table([report]) + "\n")


def run_scenario(config: ScenarioConfig) -> RunReport:
    """Offline phase, training, inference over the test rows, and both
    report paths; see ScenarioConfig for the knobs."""
    config.validate()
    if config.mode == "threads":
        report = _run_scenario_threads(config)
        if config.run_dir:
            run_dir = Path(config.run_dir)
            run_dir.mkdir(parents=True, exist_ok=True)
            _write_report(run_dir, report)
        return report
    return _run_scenario_spawn(config)


# -- process entry points (used by the command line) ----------------------------


def ba_main(host: str, port: int, parties, port_file=None, stats_path=None,
            relay_log_path=None) -> int:
    server = BAServer(host, port, parties, stats_path=stats_path,
                      transcript_path=relay_log_path).start()
    if port_file:
        Path(port_file).write_text(str(server.port))
    server.wait(None)
    return 0


def ti_gen_main(out_dir, group, session_hex: str, features: int,
                iterations: int, inference_rows: int, e: int, f: int,
                kappa: int, seed=None, scope: str = "", prefix: str = "") -> int:
    params = make_params(e, f)
    requirements = plan_requirements(features, iterations, inference_rows)
    rng = (derived_rng(seed, *scope.split("/")) if seed is not None
           else None)
    bundles = generate(requirements, bytes.fromhex(session_hex), group,
                       params, kappa=kappa, rng=rng)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for bundle in bundles:
        bundle.save(out_dir / f"{prefix}party{bundle.party}.bundle")
    return 0


def _roster_extra_int(roster: SessionRoster, key: str) -> int:
    return int(float(roster.extra[key]))


def _load_bundle(roster_path, roster: SessionRoster, party: int):
    rel = roster.extra[f"bundle_{party}"]
    return CorrelatedBundle.load(Path(roster_path).parent / rel)


def _role_dirs(out_dir) -> Path:
    out = Path(out_dir)
    for sub in ("models", "timings", "transcripts"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    return out


def ti_party_main(roster_path, party: int, data_path, out_dir) -> int:
    roster = SessionRoster.load(roster_path)
    iterations = _roster_extra_int(roster, "iterations")
    trace_bound = float(roster.extra["trace_bound"])
    serve_rows = _roster_extra_int(roster, "serve_rows")
    intercept = bool(_roster_extra_int(roster, "intercept"))
    dataset, _ = ingest_csv(data_path, roster.params, intercept=intercept,
                            scaling="none")
    bundle = _load_bundle(roster_path, roster, party)
    out = _role_dirs(out_dir)
    transcript = Transcript()
    channel = roster.connect(party, transcript=transcript)
    try:
        engine = PartyEngine(channel, party, roster.party_ids, bundle)
        t0 = time.perf_counter()
        fragment = training_party(engine, dataset, trace_bound, iterations)
        train_s = time.perf_counter() - t0
        save_model_fragment(
            out / "models" / f"party{party}.model", fragment, roster.params,
            {"scenario": roster.scenario, "party": party,
             "group": list(roster.party_ids), "intercept": intercept})
        t0 = time.perf_counter()
        inference_party(engine, fragment, serve_rows)
        infer_s = time.perf_counter() - t0
    finally:
        channel.close()
    with open(out / "timings" / f"party{party}.json", "w") as fh:
        json.dump({"train_seconds": train_s, "infer_seconds": infer_s}, fh)
    transcript.dump(out / "transcripts" / f"party{party}.jsonl")
    return 0


def ti_client_main(roster_path, test_path, out_path, seed=None,
                   transcript_path=None) -> int:
    roster = SessionRoster.load(roster_path)
    intercept = bool(_roster_extra_int(roster, "intercept"))
    features, _ = read_csv_rows(test_path)
    codec = FixedPointCodec(roster.params)
    queries = codec.encode_matrix(design_matrix(features, intercept))
    transcript = Transcript()
    channel = roster.connect(CLIENT_ID, transcript=transcript)
    try:
        t0 = time.perf_counter()
        predictions = inference_client(
            channel, roster.party_ids, roster.params, queries,
            derived_rng(seed, "infer", "client"))
        seconds = time.perf_counter() - t0
    finally:
        channel.close()
    with open(out_path, "w") as fh:
        json.dump({"seconds": seconds,
                   "predictions": [float(p) for p in predictions]}, fh)
    if transcript_path:
        transcript.dump(transcript_path)
    return 0


def tc_source_main(roster_path, mask_roster_path, party: int, data_path,
                   out_dir, seed=None) -> int:
    roster = SessionRoster.load(roster_path)
    mask_roster = SessionRoster.load(mask_roster_path)
    iterations = _roster_extra_int(roster, "iterations")
    trace_bound = float(roster.extra["trace_bound"])
    serve_rows = _roster_extra_int(roster, "serve_rows")
    intercept = bool(_roster_extra_int(roster, "intercept"))
    aggregator = _roster_extra_int(roster, "aggregator")
    sources = [int(t) for t in roster.extra["sources"].split()]
    dataset, _ = ingest_csv(data_path, roster.params, intercept=intercept,
                            scaling="none")
    bundle = _load_bundle(roster_path, roster, party)
    out = _role_dirs(out_dir)
    transcript = Transcript()
    channel = roster.connect(party, transcript=transcript)
    mask_channel = mask_roster.connect(party)
    try:
        engine = PartyEngine(channel, party, roster.party_ids, bundle,
                             scope=f"s{party}/")
        t0 = time.perf_counter()
        fragment = training_party(engine, dataset, trace_bound, iterations)
        train_s = time.perf_counter() - t0
        save_model_fragment(
            out / "models" / f"party{party}.model", fragment, roster.params,
            {"scenario": roster.scenario, "party": party,
             "group": list(roster.party_ids), "intercept": intercept})
        t0 = time.perf_counter()
        tc_source_serve(engine, mask_channel, fragment, serve_rows, sources,
                        aggregator,
                        derived_rng(seed, "tcinfer", party, "mask-values"))
        infer_s = time.perf_counter() - t0
    finally:
        channel.close()
        mask_channel.close()
    with open(out / "timings" / f"party{party}.json", "w") as fh:
        json.dump({"train_seconds": train_s, "infer_seconds": infer_s}, fh)
    transcript.dump(out / "transcripts" / f"party{party}.jsonl")
    return 0


def tc_target_main(roster_paths, mask_roster_path, party: int,
                   calibration_path, test_path, out_dir, seed=None) -> int:
    mask_roster = SessionRoster.load(mask_roster_path)
    rosters = [SessionRoster.load(p) for p in roster_paths]
    params = rosters[0].params
    intercept = bool(_roster_extra_int(rosters[0], "intercept"))
    aggregator = _roster_extra_int(mask_roster, "aggregator")
    sources = [int(t) for t in mask_roster.extra["sources"].split()]
    calibration, _ = ingest_csv(calibration_path, params, intercept=intercept,
                                scaling="none")
    features, _ = read_csv_rows(test_path)
    codec = FixedPointCodec(params)
    queries = codec.encode_matrix(design_matrix(features, intercept))
    out = _role_dirs(out_dir)

    engines = {}
    channels = []
    fragments = {}
    own_fragments = {}
    errors = []

    def train_session(roster, roster_path):
        source = _roster_extra_int(roster, "source")
        try:
            transcript = Transcript()
            channel = roster.connect(party, transcript=transcript)
            channels.append((channel, transcript, source))
            bundle = _load_bundle(roster_path, roster, party)
            engine = PartyEngine(channel, party, roster.party_ids, bundle,
                                 scope=f"s{source}/")
            engines[source] = engine
            fragments[source] = training_party(
                engine, calibration, float(roster.extra["trace_bound"]),
                _roster_extra_int(roster, "iterations"))
            save_model_fragment(
                out / "models" / f"target_s{source}.model", fragments[source],
                params, {"scenario": roster.scenario, "party": party,
                         "group": list(roster.party_ids),
                         "intercept": intercept})
        except Exception as exc:  # surfaced after join
            errors.append(exc)

    def serve_session(source):
        try:
            own_fragments[source] = tc_target_session_serve(
                engines[source], fragments[source], queries,
                derived_rng(seed, "tcinfer", source, "sharing"))
        except Exception as exc:
            errors.append(exc)

    t0 = time.perf_counter()
    threads = [threading.Thread(target=train_session, args=(r, p))
               for r, p in zip(rosters, roster_paths)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    train_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    threads = [threading.Thread(target=serve_session, args=(s,))
               for s in engines]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    mask_channel = mask_roster.connect(party)
    try:
        predictions = tc_target_combine(mask_channel, sources, aggregator,
                                        own_fragments, len(queries), params)
    finally:
        mask_channel.close()
        for channel, transcript, source in channels:
            channel.close()
            transcript.dump(out / "transcripts" / f"target_s{source}.jsonl")
    infer_s = time.perf_counter() - t0
    with open(out / "predictions.json", "w") as fh:
        json.dump({"train_seconds": train_s, "infer_seconds": infer_s,
                   "predictions": [float(p) for p in predictions]}, fh)
    return 0
