"""Command-line interface.

Subcommands: simulate, discover, estimate, evaluate, lag-sweep, bench,
report.  Every subcommand reads an optional JSON experiment config
(--config) and honors --seed / --depth / --tau-max / --mc-runs /
--output-dir overrides where they make sense.  The output directory falls
back to the CDA_OUTPUT_DIR environment variable, then the working
directory.  Exit codes: 0 success, 1 usage error, 2 runtime failure;
failures print one machine-readable JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from causalpanel.discovery import discover
from causalpanel.graph import CausalDag
from causalpanel.harness import ExperimentConfig, depth_bench, lag_sweep
from causalpanel.metrics import distance_metrics, edge_metrics, effect_metrics
from causalpanel.panel import Panel
from causalpanel.scm import AttributionReport, attribute_all, fit_scm
from causalpanel.simulate import GroundTruth, generate_random_dag, simulate_panel, true_total_effect

SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); route through our codes
        raise UsageError(message)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _resolve_output_dir(value: str | None) -> Path:
    if value:
        return Path(value)
    env = os.environ.get("CDA_OUTPUT_DIR")
    if env:
        return Path(env)
    return Path(".")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    sim = cfg.sim
    pcmci = cfg.pcmci
    updates: dict = {}
    if getattr(args, "seed", None) is not None:
        sim = replace(sim, seed=args.seed)
        updates["seeds"] = (args.seed,)
    if getattr(args, "depth", None) is not None:
        sim = replace(sim, depth=args.depth)
        updates["depths"] = (args.depth,)
    if getattr(args, "tau_max", None) is not None:
        pcmci = replace(pcmci, tau_max=args.tau_max, tau_min=min(pcmci.tau_min, args.tau_max))
    if getattr(args, "mc_runs", None) is not None:
        updates["mc_runs"] = args.mc_runs
    if getattr(args, "workers", None) is not None:
        updates["workers"] = args.workers
    out_dir = _resolve_output_dir(getattr(args, "output_dir", None))
    cfg = replace(cfg, sim=sim, pcmci=pcmci, output_dir=out_dir, **updates)
    cfg.validate()
    return cfg


def _print(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------- subcommands
def _cmd_simulate(args) -> None:
    cfg = _load_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dag = generate_random_dag(cfg.sim)
    panel, gt = simulate_panel(cfg.sim, dag)
    panel.to_csv(out / "panel.csv")
    gt.to_json(out / "truth.json")
    (out / "truth.dot").write_text(gt.dag.to_dot())
    _print({"panel": str(out / "panel.csv"), "truth": str(out / "truth.json")})


def _cmd_discover(args) -> None:
    cfg = _load_config(args)
    panel = Panel.from_csv(args.panel)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pred_dag, links = discover(panel, cfg.pcmci)
    pred_dag.to_json(out / "predicted_dag.json")
    (out / "predicted_dag.dot").write_text(pred_dag.to_dot())
    links.to_csv(out / "links.csv")
    _print(
        {
            "predicted_dag": str(out / "predicted_dag.json"),
            "links": str(out / "links.csv"),
            "n_edges": len(pred_dag.edges),
            "n_links": len(links.links),
        }
    )


def _cmd_estimate(args) -> None:
    cfg = _load_config(args)
    panel = Panel.from_csv(args.panel)
    dag = CausalDag.from_json(args.dag)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scm = fit_scm(panel, dag)
    report = attribute_all(scm, n_runs=cfg.mc_runs, seed=cfg.sim.seed)
    report.to_json(out / "attribution.json")
    report.to_csv(out / "attribution.csv")
    _print({"attribution": str(out / "attribution.json"), "mc_runs": cfg.mc_runs})


def _scores_from_links_csv(path: str | Path, names: list[str]) -> np.ndarray:
    import pandas as pd

    frame = pd.read_csv(path)
    required = ["source", "target", "lag", "statistic", "p_value"]
    if list(frame.columns) != required:
        raise UsageError(f"links csv must have columns {required}, got {list(frame.columns)}")
    index = {name: i for i, name in enumerate(names)}
    D = len(names)
    scores = np.zeros((D, D))
    for row in frame.itertuples(index=False):
        if row.source not in index or row.target not in index:
            raise UsageError(f"links csv mentions unknown node {row.source!r} or {row.target!r}")
        s, t = index[row.source], index[row.target]
        scores[s, t] = max(scores[s, t], abs(float(row.statistic)))
    return scores


def _cmd_evaluate(args) -> None:
    cfg = _load_config(args)
    gt = GroundTruth.from_json(args.truth)
    pred_dag = CausalDag.from_json(args.predicted)
    names = [n.name for n in gt.dag.nodes]
    scores = _scores_from_links_csv(args.links, names) if args.links else None
    em = edge_metrics(gt.dag, pred_dag, scores)
    dm = distance_metrics(gt.dag, pred_dag)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "edge": em.to_json_dict(),
        "distance": dm.to_json_dict(),
    }
    tau = true_total_effect(gt)
    for label, path in (("effects_true_dag", args.attribution_true), ("effects_pred_dag", args.attribution_pred)):
        if path:
            report = AttributionReport.from_json(path)
            payload[label] = effect_metrics(tau, report.effects_vector()).to_json_dict()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _print(payload)


def _cmd_lag_sweep(args) -> None:
    cfg = _load_config(args)
    frame = lag_sweep(cfg)
    _print({"sweep": str(Path(cfg.output_dir) / "sweep.csv"), "rows": len(frame)})


def _cmd_bench(args) -> None:
    cfg = _load_config(args)
    rows, failures = depth_bench(cfg)
    _print(
        {
            "bench": str(Path(cfg.output_dir) / "bench.csv"),
            "rows": [r.to_json_dict() for r in rows],
            "failures": failures,
        }
    )


def _cmd_report(args) -> None:
    report = AttributionReport.from_json(args.attribution)
    lines = [f"attribution over {report.mc_runs} Monte Carlo runs", ""]
    header = f"{'rank':>4}  {'channel':<28} {'delta':>12} {'std_err':>10} {'ace_per_unit':>14}"
    lines.append(header)
    lines.append("-" * len(header))
    for rank, est in enumerate(report.ranking(), start=1):
        ace = "undefined" if not est.per_unit_defined else f"{est.ace_per_unit:14.6f}"
        lines.append(
            f"{rank:>4}  {est.channel_name:<28} {est.delta:>12.4f} {est.std_error:>10.4f} {ace:>14}"
        )
    sys.stdout.write("\n".join(lines) + "\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="causalpanel", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def common(p: _Parser, *, seed=True, output=True) -> None:
        p.add_argument("--config", help="experiment config JSON")
        if seed:
            p.add_argument("--seed", type=int)
        if output:
            p.add_argument("--output-dir")

    p = sub.add_parser("simulate", help="generate a panel and its ground truth")
    common(p)
    p.add_argument("--depth", type=int)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("discover", help="recover a summary DAG from a panel")
    common(p, seed=False)
    p.add_argument("--panel", required=True)
    p.add_argument("--tau-max", type=int)
    p.set_defaults(func=_cmd_discover)

    p = sub.add_parser("estimate", help="fit an SCM on a panel and attribute channels")
    common(p)
    p.add_argument("--panel", required=True)
    p.add_argument("--dag", required=True)
    p.add_argument("--mc-runs", type=int)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("evaluate", help="score a predicted DAG (and attributions) against truth")
    common(p, seed=False)
    p.add_argument("--truth", required=True)
    p.add_argument("--predicted", required=True)
    p.add_argument("--links")
    p.add_argument("--attribution-true")
    p.add_argument("--attribution-pred")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("lag-sweep", help="discovery quality across a grid of maximum lags")
    common(p, seed=False)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_lag_sweep)

    p = sub.add_parser("bench", help="depth benchmark over seeds")
    common(p, seed=False)
    p.add_argument("--mc-runs", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("report", help="render an attribution JSON as a table")
    p.add_argument("--attribution", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            raise UsageError("a subcommand is required (see --help)")
    except UsageError as exc:
        _emit_error("UsageError", str(exc))
        return 1
    try:
        args.func(args)
    except UsageError as exc:
        _emit_error("UsageError", str(exc))
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary: report and signal failure
        _emit_error(type(exc).__name__, str(exc))
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
