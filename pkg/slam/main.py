"""
Command-line entry point: ``python -m slam.main <command> ...``

Commands:
    gen-dataset   trace a receiver grid and write a labelled dataset
    train         fit the link-state classifier, write model + history CSV
    sweep-k       train one classifier per K, write the accuracy table
    run           simulate a trajectory, write the map and metrics
    solve         solve one single-bounce reflection point
    validate      run the geometric invariant suite on a scenario
    sweep-noise   reflection-point error against estimation noise

Scenarios come from a JSON file (--scenario) or a builtin scene (--scene).

Exit codes: 0 success, 2 usage / malformed input, 3 numerical failure or a
failed validation check.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from channel.geometry import AoA, as_vec3
from channel.scenes import BUILTIN_SCENES
from common.errors import CslamError, InvalidScenario
from common.metrics import RunMetrics
from common.seeding import STREAM_VALIDATION, derive_seed
from common.telemetry import TelemetryLogger
from mapping.lscn import TrainConfig, k_sweep, train
from mapping.reflector import SOLVERS, FirstOrderObservation
from slam import io
from slam.checks import validate_scenario
from slam.config import Scenario, ScenarioFile, builtin_scenario_file, load_scenario_file
from slam.dataset import generate_lscn_dataset, require_rows
from slam.runner import mapping_error_experiment, oracle_classifier, run

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _vec(text: str):
    try:
        parts = [float(v) for v in text.split(",")]
        return as_vec3(parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from exc


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", type=Path, help="Scenario JSON file")
    src.add_argument("--scene", choices=sorted(BUILTIN_SCENES), help="Builtin scene with its default scenario")
    p.add_argument("--T", type=int, default=None, help="Override the number of time steps")
    p.add_argument("--T-c", dest="T_c", type=int, default=None, help="Override the fix period T_c")
    p.add_argument("--seed", type=int, default=None, help="Override the master seed")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=Path, help="Scenario JSON providing architecture and training config")
    p.add_argument("--val-dataset", type=Path, help="Explicit validation dataset (disables the 2/3-1/3 split)")
    p.add_argument("--epochs", type=int, help="Override training epochs")
    p.add_argument("--lr", type=float, help="Override learning rate")
    p.add_argument("--batch-size", type=int, help="Override mini-batch size")
    p.add_argument("--seed", type=int, help="Override training seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m slam.main",
        description="Communication-based SLAM simulation lab",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More logging (-v info, -vv debug)")
    parser.add_argument("--no-telemetry", action="store_true", help="Do not write JSONL telemetry")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="Generate a labelled classifier dataset")
    _add_scenario_args(p)
    p.add_argument("--out", type=Path, required=True, help="Output dataset file")
    p.add_argument("--val-out", type=Path, help="Dataset from the scenario's validation transmitters")
    p.add_argument("--workers", type=int, default=None, help="Process pool size (default: CSLAM_WORKERS or 1)")

    p = sub.add_parser("train", help="Train the link-state classifier")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="Output model file")
    p.add_argument("--history", type=Path, help="Per-epoch history CSV")
    _add_train_args(p)

    p = sub.add_parser("sweep-k", help="Accuracy against the number of input paths K")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--k", type=_int_list, default=[1, 3, 5, 7, 9], help="K values (default: 1,3,5,7,9)")
    p.add_argument("--out", type=Path, required=True, help="Output sweep CSV")
    _add_train_args(p)

    p = sub.add_parser("run", help="Simulate localization and mapping along a trajectory")
    _add_scenario_args(p)
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--model", type=Path, help="Trained classifier")
    who.add_argument("--oracle", action="store_true", help="Use the true link state instead of a classifier")
    p.add_argument("--ply", type=Path, help="Point cloud output")
    p.add_argument("--truth-ply", type=Path, help="True single-bounce reflection points")
    p.add_argument("--metrics-csv", type=Path, help="Summary metrics")
    p.add_argument("--confusion-csv", type=Path, help="Link-state confusion matrix")
    p.add_argument("--steps-csv", type=Path, help="Per-step link states and pose error")
    p.add_argument("--paths-csv", type=Path, help="Traced paths of one step (see --paths-step)")
    p.add_argument("--paths-step", type=int, default=0, help="Step dumped by --paths-csv (default: 0)")
    p.add_argument("--prom-textfile", type=Path, help="Prometheus text exposition of run metrics")

    p = sub.add_parser("solve", help="Solve one single-bounce reflection point")
    p.add_argument("--uav", type=_vec, required=True, help="x,y,z")
    p.add_argument("--gmt", type=_vec, required=True, help="x,y,z")
    p.add_argument("--tau", type=float, required=True, help="Delay in seconds")
    p.add_argument("--theta", type=float, required=True, help="Polar arrival angle from +Z (rad)")
    p.add_argument("--phi", type=float, required=True, help="Arrival azimuth from +X (rad)")
    p.add_argument("--method", choices=sorted(SOLVERS), default="parametric")

    p = sub.add_parser("validate", help="Run the invariant suite on a scenario")
    _add_scenario_args(p)

    p = sub.add_parser("sweep-noise", help="Reflection-point error against estimation noise")
    _add_scenario_args(p)
    p.add_argument("--scales", type=_float_list, default=[0.0, 0.25, 0.5, 1.0, 2.0])
    p.add_argument("--out", type=Path, required=True, help="Output CSV")
    return parser


def _scenario_file(args: argparse.Namespace) -> ScenarioFile:
    if args.scene:
        sf = builtin_scenario_file(args.scene)
    else:
        sf = load_scenario_file(args.scenario)
    updates = {}
    if args.T is not None:
        updates["T"] = args.T
    if args.T_c is not None:
        updates["T_c"] = args.T_c
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if updates:
        try:
            run_section = type(sf.run).model_validate({**sf.run.model_dump(), **updates})
        except ValidationError as exc:
            raise InvalidScenario(str(exc)) from exc
        sf = sf.model_copy(update={"run": run_section})
    return sf


def _telemetry(args: argparse.Namespace, component: str, scenario: Optional[str] = None) -> Optional[TelemetryLogger]:
    if args.no_telemetry:
        return None
    return TelemetryLogger(component, scenario=scenario)


def _train_settings(args: argparse.Namespace):
    sf = load_scenario_file(args.scenario) if args.scenario else None
    lscn = sf.lscn if sf else None
    cfg = lscn.train if lscn else TrainConfig()
    overrides = {
        k: v
        for k, v in (
            ("epochs", args.epochs),
            ("learning_rate", args.lr),
            ("batch_size", args.batch_size),
            ("rng_seed", args.seed),
        )
        if v is not None
    }
    if overrides:
        try:
            cfg = TrainConfig.model_validate({**cfg.model_dump(), **overrides})
        except ValidationError as exc:
            raise InvalidScenario(str(exc)) from exc
    arch = lscn.architecture if lscn else None
    val = io.read_dataset(args.val_dataset) if args.val_dataset else None
    return cfg, arch, val


def cmd_gen_dataset(args: argparse.Namespace) -> int:
    sf = _scenario_file(args)
    if sf.dataset is None:
        raise InvalidScenario(f"scenario {sf.name!r} has no 'dataset' section")
    scenario = sf.resolve()
    ds = sf.dataset
    print(f"[*] Tracing {ds.rx_grid.size} receivers x {len(ds.tx_positions)} transmitters in {scenario.mesh.name}")
    telemetry = _telemetry(args, "dataset", sf.name)
    data = generate_lscn_dataset(
        scenario.mesh, ds.rx_grid, ds.tx_positions, scenario.channel, scenario.noise,
        scenario.K, scenario.master_seed, args.workers, telemetry,
    )
    io.write_dataset(data, args.out)
    print(f"[*] Wrote {len(data)} rows (class counts {data.class_counts().tolist()}) to {args.out}")
    if args.val_out:
        if not ds.val_tx_positions:
            print("[!] Scenario has no val_tx_positions; skipping --val-out")
        else:
            val = generate_lscn_dataset(
                scenario.mesh, ds.rx_grid, ds.val_tx_positions, scenario.channel, scenario.noise,
                scenario.K, derive_seed(scenario.master_seed, STREAM_VALIDATION), args.workers, telemetry,
            )
            io.write_dataset(val, args.val_out)
            print(f"[*] Wrote {len(val)} validation rows to {args.val_out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    data = require_rows(io.read_dataset(args.dataset), str(args.dataset))
    cfg, arch, val = _train_settings(args)
    kwargs = {"architecture": arch} if arch is not None else {}
    model, history = train(data, cfg, validation=val, telemetry=_telemetry(args, "trainer"), **kwargs)
    io.save_model(model, args.out)
    if args.history:
        io.write_history_csv(history, args.history)
    last = history[-1]
    print(f"[*] K={model.K} epochs={len(history)} train_acc={last.train_acc:.4f} val_acc={last.val_acc:.4f}")
    print(f"[*] Model written to {args.out}")
    return 0


def cmd_sweep_k(args: argparse.Namespace) -> int:
    data = require_rows(io.read_dataset(args.dataset), str(args.dataset))
    cfg, arch, val = _train_settings(args)
    kwargs = {"architecture": arch} if arch is not None else {}
    rows = k_sweep(data, args.k, cfg, validation=val, telemetry=_telemetry(args, "trainer"), **kwargs)
    io.write_sweep_csv(rows, args.out)
    for r in rows:
        print(f"[*] K={r.K:2d} train_acc={r.train_acc:.4f} val_acc={r.val_acc:.4f}")
    return 0


def _resolve(args: argparse.Namespace) -> Scenario:
    return _scenario_file(args).resolve()


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _resolve(args)
    classifier = oracle_classifier if args.oracle else io.load_model(args.model)
    metrics = RunMetrics() if args.prom_textfile else None
    report = run(
        scenario,
        classifier,
        metrics=metrics,
        telemetry=_telemetry(args, "runner", scenario.name),
        keep_paths_at=args.paths_step if args.paths_csv else None,
    )
    if args.ply:
        io.export_ply(report.map, args.ply)
    if args.truth_ply:
        io.export_truth_ply(report.truth_points, args.truth_ply)
    if args.metrics_csv:
        io.write_metrics_csv(report, args.metrics_csv)
    if args.confusion_csv:
        io.write_confusion_csv(report, args.confusion_csv)
    if args.steps_csv:
        io.write_steps_csv(report, args.steps_csv)
    if args.paths_csv:
        if report.paths_snapshot is None:
            print(f"[!] --paths-step {args.paths_step} is outside 0..{scenario.T}")
        else:
            io.write_paths_csv(report.paths_snapshot, args.paths_csv)
    if metrics:
        metrics.write(str(args.prom_textfile))

    s = report.summary()
    print(
        f"[*] {scenario.name}: {s['steps']} steps, {s['mapped_points']} mapped points "
        f"({s['paired_points']} paired), point_mse={s['point_mse_m']:.6g} m, "
        f"mean pose error={s['pose_error_mean_m']:.4g} m"
    )
    if report.skipped_infeasible:
        print(f"[!] {report.skipped_infeasible} steps skipped: infeasible delay")
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    obs = FirstOrderObservation(uav=args.uav, gmt=args.gmt, tau=args.tau, aoa=AoA(args.theta, args.phi))
    p = SOLVERS[args.method](obs)
    print(f"{p[0]:.2f} {p[1]:.2f} {p[2]:.2f}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    results = validate_scenario(_resolve(args))
    failed = 0
    for r in results:
        mark = "ok  " if r.passed else "FAIL"
        print(f"[{mark}] {r.name:22s} cases={r.cases:<6d} worst={r.worst:.3g} {r.detail}".rstrip())
        failed += not r.passed
    return EXIT_NUMERICAL if failed else 0


def cmd_sweep_noise(args: argparse.Namespace) -> int:
    scenario = _resolve(args)
    rows = mapping_error_experiment(scenario, args.scales)
    io.write_noise_sweep_csv(rows, args.out)
    for r in rows:
        err = "n/a" if math.isnan(r.mean_error_m) else f"{r.mean_error_m:.6g} m"
        print(f"[*] scale={r.scale:<5g} points={r.points:<4d} mean error={err}")
    return 0


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "sweep-k": cmd_sweep_k,
    "run": cmd_run,
    "solve": cmd_solve,
    "validate": cmd_validate,
    "sweep-noise": cmd_sweep_noise,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE

    level = logging.WARNING if args.verbose == 0 else (logging.INFO if args.verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        return COMMANDS[args.command](args)
    except CslamError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if exc.category == "numerical" else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
