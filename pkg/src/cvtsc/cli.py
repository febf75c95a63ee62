"""Command-line entry points: simulate, train, select-features, attack, experiment, report."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from . import harness
from .harness import (
    ClosedLoopSim,
    ExperimentSpec,
    RunConfig,
    load_config,
    run_experiment,
    run_training_campaign,
)
from .surrogate import SurrogateModel


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.scenario.rng_seed = args.seed
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--seed", type=int, help="override the scenario seed")
    parser.add_argument("--out", required=True, help="output directory")


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = replace(cfg.scenario, duration_hours=args.hours)
    event_stream = open(out / "events.log", "w") if args.events else None
    traj_stream = open(out / "trajectories.log", "w") if args.trajectories else None
    try:
        sim = ClosedLoopSim(scenario, controller_mode="target",
                            event_stream=event_stream,
                            trajectory_stream=traj_stream)
        result = sim.run(args.hours, run_id=f"sim-s{scenario.rng_seed}", experiment="I")
    finally:
        if event_stream:
            event_stream.close()
        if traj_stream:
            traj_stream.close()
    harness.write_summaries([result.summary], out / "summary.csv")
    harness.save_audit(result.audit, out / "audit.log")
    s = result.summary
    print(f"{s.run_id}: {s.total_delay_s:.1f} s total delay over {s.vehicles} vehicles "
          f"({s.delay_per_vehicle_s:.2f} s/veh, {result.invariants.optimizations} optimizations)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if args.hours is not None:
        cfg.train_hours = args.hours
    result = run_training_campaign(cfg, out_dir=args.out)
    print(f"trained on {len(result.audit)} optimizations; "
          f"critical features: {{{','.join(result.sfs_result.selected)}}}")
    for name in sorted(result.cv):
        m = result.cv[name]
        print(f"  {name}: MAE {m.mae:.2f} s, MAPE {m.mape:.1f}%, RMSE {m.rmse:.2f} s")
    return 0


def cmd_select_features(args) -> int:
    cfg = _load_run_config(args)
    audit = harness.load_audit(args.audit)
    result, metrics = harness.sfs_on_audit(audit, cfg.surrogate)
    report_text = harness.format_sfs_report(result, metrics)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sfs_report.txt").write_text(report_text)
    print(report_text, end="")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_run_config(args)
    model = SurrogateModel.from_text(Path(args.model).read_text())
    audit = harness.load_audit(args.audit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# cvtsc-attack v1"]
    dissims = []
    for rec in audit:
        x_o = rec.features.attack_vector()
        if args.mode == "eta":
            action = attack_mod.solve_p2(x_o, model, model.t_lead, model.t_lag)
        else:
            action = attack_mod.solve_p3(x_o, model, args.budget)
        row = attack_mod.AttackRecord(rec.timestamp, args.mode, tuple(x_o), action)
        lines.append(row.to_line())
        dissims.append(action.predicted_dissimilarity)
    (out / "attack.log").write_text("\n".join(lines) + "\n")
    print(f"solved {len(audit)} instants; mean predicted dissimilarity "
          f"{float(np.mean(dissims)) if dissims else 0.0:.2f} s")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_run_config(args)
    hours = args.hours if args.hours is not None else cfg.experiment_hours
    model = None
    if args.model:
        model = SurrogateModel.from_text(Path(args.model).read_text())
    if args.budget is not None:
        cfg.attack.budget = args.budget
    spec = ExperimentSpec.standard(args.id, hours, cfg.scenario.rng_seed)
    result = run_experiment(spec, cfg, model=model, out_dir=args.out,
                            write_events=args.events)
    s = result.summary
    print(f"{s.run_id}: {s.total_delay_s:.1f} s total delay over {s.vehicles} vehicles "
          f"({s.delay_per_vehicle_s:.2f} s/veh)")
    return 0


def cmd_report(args) -> int:
    summaries = []
    for path in args.summaries:
        summaries.extend(harness.read_summaries(path))
    rep = harness.report(summaries)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(rep.table())
    harness.write_plot_data(rep, out / "plot_data.csv")
    print(rep.table(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvtsc",
        description="Closed-loop intersection testbed: adaptive control, "
                    "surrogate learning, falsified-data attacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="closed-loop run with the target controller")
    _add_common(p)
    p.add_argument("--hours", type=float, default=1.0)
    p.add_argument("--events", action="store_true", help="write the BSM/SPaT event log")
    p.add_argument("--trajectories", action="store_true", help="write full trajectories")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="training campaign: simulate, fit trees, run SFS")
    _add_common(p)
    p.add_argument("--hours", type=float, help="campaign length in simulated hours")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select-features", help="forward selection on an audit log")
    _add_common(p)
    p.add_argument("--audit", required=True, help="audit log from simulate/train")
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("attack", help="solve attack programs offline against a model")
    _add_common(p)
    p.add_argument("--model", required=True, help="model.txt from train")
    p.add_argument("--audit", required=True, help="audit log with observed features")
    p.add_argument("--mode", choices=("eta", "nav"), default="eta")
    p.add_argument("--budget", type=int, default=10)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("experiment", help="run one of experiments I-IV")
    _add_common(p)
    p.add_argument("--id", choices=harness.EXPERIMENT_IDS, required=True)
    p.add_argument("--hours", type=float)
    p.add_argument("--model", help="model.txt (required for II-IV)")
    p.add_argument("--budget", type=int, help="count-attack budget (experiment IV)")
    p.add_argument("--events", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="merge run summaries into the comparison table")
    p.add_argument("--out", required=True)
    p.add_argument("summaries", nargs="+", help="summary.csv files")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
