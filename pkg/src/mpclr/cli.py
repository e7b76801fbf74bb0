"""Command line front end.

One subcommand per operational role (relay, party, client), plus offline
material generation, scenario orchestration, data tooling, and reporting.
A configuration file named by the MPCLR_CONFIG environment variable can
override any flag: INI format, one section per subcommand, keys spelled
like the long flags without the leading dashes.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

import numpy as np

from mpclr.field import DEFAULT_E, DEFAULT_F, make_params
from mpclr.harness import (
    RESPONSE_THRESHOLD_SECONDS,
    RunReport,
    ScenarioConfig,
    ba_main,
    export_csv,
    label_response_times,
    load_reports,
    run_scenario,
    synthesize_dataset,
    tc_source_main,
    tc_target_main,
    ti_client_main,
    ti_gen_main,
    ti_party_main,
)
from mpclr.protocols import DEFAULT_INVERT_ITERATIONS
from mpclr.randomness import DEFAULT_KAPPA, effective_kappa

CONFIG_ENV = "MPCLR_CONFIG"


def _ids(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(",", " ").split())


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="mpclr",
        description="secure linear regression over additively shared data")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    def command(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        commands[name] = p
        return p

    p = command("params", help="print the field parameters as JSON")
    p.add_argument("--e", type=int, default=DEFAULT_E,
                   help="integer bits of the fixed-point range")
    p.add_argument("--f", type=int, default=DEFAULT_F,
                   help="fractional bits of the fixed-point encoding")
    p.add_argument("--kappa", type=int, default=DEFAULT_KAPPA,
                   help="requested statistical masking bits")

    p = command("ti-gen",
                help="generate correlated-randomness bundles offline")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--group", type=_ids, required=True,
                   help="party ids, space or comma separated")
    p.add_argument("--session", default=None,
                   help="16-byte session id as hex (default: random)")
    p.add_argument("--features", type=int, required=True,
                   help="model columns including any intercept")
    p.add_argument("--iterations", type=int,
                   default=DEFAULT_INVERT_ITERATIONS,
                   help="matrix-inversion iterations to provision")
    p.add_argument("--inference-rows", type=int, default=0,
                   help="prediction queries to provision")
    p.add_argument("--e", type=int, default=DEFAULT_E)
    p.add_argument("--f", type=int, default=DEFAULT_F)
    p.add_argument("--kappa", type=int, default=DEFAULT_KAPPA)
    p.add_argument("--seed", type=int, default=None,
                   help="derive material deterministically from this seed")
    p.add_argument("--scope", default="",
                   help="label separating derivation streams under one seed")
    p.add_argument("--prefix", default="",
                   help="filename prefix for the bundle files")

    p = command("serve-ba", help="run the message relay")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0,
                   help="0 binds an ephemeral port")
    p.add_argument("--parties", type=_ids, required=True,
                   help="party ids whose arrival and departure end the run")
    p.add_argument("--port-file", default=None,
                   help="write the bound port here once listening")
    p.add_argument("--stats", default=None,
                   help="write relay statistics JSON here on shutdown")
    p.add_argument("--relay-log", default=None,
                   help="write one JSON record per relayed envelope")

    p = command("serve-party", help="run one party: train, then serve queries")
    p.add_argument("--roster", action="append", required=True,
                   help="session roster file; repeat for a multi-session role")
    p.add_argument("--party", type=int, required=True)
    p.add_argument("--mask-roster", default=None,
                   help="roster of the mask relay (calibrated scenario only)")
    p.add_argument("--data", required=True,
                   help="training rows as CSV, already scaled to [-1, 1]")
    p.add_argument("--test", default=None,
                   help="query rows as CSV (calibrated-model holder only)")
    p.add_argument("--out", default=".",
                   help="directory for model, timing, and transcript files")
    p.add_argument("--seed", type=int, default=None)

    p = command("run-client", help="query trained parties for predictions")
    p.add_argument("--roster", required=True)
    p.add_argument("--test", required=True, help="query rows as CSV")
    p.add_argument("--out", required=True, help="predictions JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--transcript", default=None)

    p = command("run-scenario", help="run a full experiment on localhost")
    p.add_argument("--scenario", choices=("ti", "tc"), default="ti")
    p.add_argument("--mode", choices=("threads", "spawn"), default="threads")
    p.add_argument("--m", type=int, default=2, help="source party count")
    p.add_argument("--k", type=int, default=30, help="feature count")
    p.add_argument("--rows", type=int, default=1200, help="rows per party")
    p.add_argument("--calibration-rows", type=int, default=100)
    p.add_argument("--test-rows", type=int, default=None,
                   help="cap on inference rows (default: the whole test set)")
    p.add_argument("--e", type=int, default=DEFAULT_E)
    p.add_argument("--f", type=int, default=DEFAULT_F)
    p.add_argument("--kappa", type=int, default=DEFAULT_KAPPA)
    p.add_argument("--iterations", type=int,
                   default=DEFAULT_INVERT_ITERATIONS)
    p.add_argument("--trace-bound", type=float, default=None)
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0,
                   help="protocol randomness seed; -1 for nondeterministic")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--data", action="append", default=None,
                   help="CSV per source party, target file last")
    p.add_argument("--plaintext-wire", action="store_true",
                   help="disable wire encryption in spawn mode")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--run-dir", default=None)

    p = command("synth-data", help="write planted-model CSV files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int, default=14)
    p.add_argument("--rows", type=int, default=1200)
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--noise", type=float, default=0.05)

    p = command("label",
                help="turn a response-time log into a drowsiness series")
    p.add_argument("--input", required=True,
                   help="one response time in seconds per line")
    p.add_argument("--tau0", type=float, default=RESPONSE_THRESHOLD_SECONDS)
    p.add_argument("--window", type=float, default=90.0,
                   help="moving-average window in seconds")
    p.add_argument("--period", type=float, default=1.0,
                   help="sampling period in seconds")
    p.add_argument("--out", default=None,
                   help="output CSV (default: stdout)")

    p = command("report", help="print collected run reports as a table")
    p.add_argument("paths", nargs="+",
                   help="report.jsonl files or run directories")

    p = command("plot", help="render runtime and accuracy charts")
    p.add_argument("paths", nargs="+",
                   help="report.jsonl files or run directories")
    p.add_argument("--out", required=True, help="directory for PNG files")

    return parser, commands


def _apply_config(args: argparse.Namespace, commands: dict) -> None:
    """Settings in the file named by MPCLR_CONFIG override parsed flags.
    Sections are subcommand names; keys are flag names without dashes."""
    path = os.environ.get(CONFIG_ENV)
    if not path:
        return
    config = configparser.ConfigParser()
    if not config.read(path):
        raise SystemExit(f"config file {path} not readable")
    if not config.has_section(args.command):
        return
    parser = commands[args.command]
    actions = {a.dest: a for a in parser._actions}
    for key, raw in config.items(args.command):
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None:
            raise SystemExit(
                f"unknown option '{key}' in [{args.command}] of {path}")
        if isinstance(action, (argparse._StoreTrueAction,
                               argparse._StoreFalseAction)):
            value = config.getboolean(args.command, key)
        elif action.type is not None:
            value = action.type(raw)
        else:
            value = raw
        if isinstance(action, argparse._AppendAction):
            value = [value]
        setattr(args, dest, value)


def _cmd_params(args) -> int:
    params = make_params(args.e, args.f)
    print(json.dumps({
        "e": params.e,
        "f": params.f,
        "q": str(params.q),
        "q_bits": params.q.bit_length(),
        "element_bytes": (params.q.bit_length() + 7) // 8,
        "kappa_requested": args.kappa,
        "kappa_effective": effective_kappa(params, args.kappa),
    }, indent=2))
    return 0


def _cmd_ti_gen(args) -> int:
    session_hex = args.session or os.urandom(16).hex()
    ti_gen_main(args.out, args.group, session_hex, args.features,
                args.iterations, args.inference_rows, args.e, args.f,
                args.kappa, seed=args.seed, scope=args.scope,
                prefix=args.prefix)
    print(json.dumps({
        "session": session_hex,
        "bundles": [
            str(Path(args.out) / f"{args.prefix}party{pid}.bundle")
            for pid in sorted(args.group)
        ],
    }, indent=2))
    return 0


def _cmd_serve_ba(args) -> int:
    return ba_main(args.host, args.port, args.parties,
                   port_file=args.port_file, stats_path=args.stats,
                   relay_log_path=args.relay_log)


def _cmd_serve_party(args) -> int:
    if args.mask_roster is None:
        if len(args.roster) != 1:
            raise SystemExit("exactly one --roster unless --mask-roster is set")
        return ti_party_main(args.roster[0], args.party, args.data, args.out)
    if args.test is not None:
        return tc_target_main(args.roster, args.mask_roster, args.party,
                              args.data, args.test, args.out, seed=args.seed)
    if len(args.roster) != 1:
        raise SystemExit("a source party joins exactly one session roster")
    return tc_source_main(args.roster[0], args.mask_roster, args.party,
                          args.data, args.out, seed=args.seed)


def _cmd_run_client(args) -> int:
    return ti_client_main(args.roster, args.test, args.out, seed=args.seed,
                          transcript_path=args.transcript)


def _cmd_run_scenario(args) -> int:
    config = ScenarioConfig(
        scenario=args.scenario, mode=args.mode, m=args.m, k=args.k,
        rows=args.rows, calibration_rows=args.calibration_rows,
        test_rows=args.test_rows, e=args.e, f=args.f, kappa=args.kappa,
        iterations=args.iterations, trace_bound=args.trace_bound,
        intercept=not args.no_intercept, noise=args.noise,
        seed=None if args.seed == -1 else args.seed,
        data_seed=args.data_seed, data_paths=args.data,
        encrypt=not args.plaintext_wire, host=args.host,
        timeout=args.timeout, run_dir=args.run_dir)
    report = run_scenario(config)
    print(RunReport.table([report]))
    return 0


def _cmd_synth_data(args) -> int:
    data = synthesize_dataset(args.seed, args.m, args.rows, args.k,
                              args.noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, (x, y) in enumerate(zip(data.party_features,
                                   data.party_responses), start=1):
        path = out / f"party{i}.csv"
        export_csv(path, x, y)
        files.append(str(path))
    target = out / "target.csv"
    export_csv(target, data.target_features, data.target_responses)
    files.append(str(target))
    print(json.dumps({"weights": data.weights.tolist(), "files": files},
                     indent=2))
    return 0


def _cmd_label(args) -> int:
    with open(args.input) as fh:
        taus = [float(line) for line in fh if line.strip()]
    labeled = label_response_times(taus, args.tau0, args.window, args.period)
    lines = ["response_seconds,drowsiness"]
    lines += [f"{float(t)!r},{float(v)!r}" for t, v in zip(taus, labeled)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _gather_reports(paths) -> list[RunReport]:
    reports = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            path = path / "report.jsonl"
        reports.extend(load_reports(path))
    return reports


def _cmd_report(args) -> int:
    print(RunReport.table(_gather_reports(args.paths)))
    return 0


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    reports = _gather_reports(args.paths)
    if not reports:
        raise SystemExit("no reports found")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots()
    for scenario in sorted({r.scenario for r in reports}):
        rows = sorted((r for r in reports if r.scenario == scenario),
                      key=lambda r: r.m)
        ms = [r.m for r in rows]
        ax.plot(ms, [r.train_seconds_smc for r in rows], marker="o",
                label=f"{scenario} train, shared")
        ax.plot(ms, [r.infer_seconds_smc for r in rows], marker="s",
                label=f"{scenario} infer, shared")
    ax.set_xlabel("source parties")
    ax.set_ylabel("seconds")
    ax.set_title("runtime vs party count")
    ax.legend()
    fig.savefig(out / "runtime_vs_m.png", dpi=120, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots()
    labels = [f"{r.scenario} m={r.m}" for r in reports]
    xs = np.arange(len(reports))
    width = 0.38
    ax.bar(xs - width / 2, [r.rmse_clear or 0 for r in reports], width,
           label="clear")
    ax.bar(xs + width / 2, [r.rmse_smc or 0 for r in reports], width,
           label="shared")
    ax.set_xticks(xs, labels, rotation=30, ha="right")
    ax.set_ylabel("rmse")
    ax.set_title("prediction error, clear vs shared")
    ax.legend()
    fig.savefig(out / "rmse.png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    print(json.dumps({"files": [str(out / "runtime_vs_m.png"),
                                str(out / "rmse.png")]}, indent=2))
    return 0


_HANDLERS = {
    "params": _cmd_params,
    "ti-gen": _cmd_ti_gen,
    "serve-ba": _cmd_serve_ba,
    "serve-party": _cmd_serve_party,
    "run-client": _cmd_run_client,
    "run-scenario": _cmd_run_scenario,
    "synth-data": _cmd_synth_data,
    "label": _cmd_label,
    "report": _cmd_report,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    _apply_config(args, commands)
    return _HANDLERS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
