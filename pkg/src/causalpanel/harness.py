"""Experiment orchestration: single pipeline runs, lag sweeps, depth benches.

A pipeline run simulates a panel, discovers a summary DAG, fits one SCM on
the ground-truth DAG and one on the discovered DAG, attributes every channel
under both, and scores everything against the ground truth.  The lag sweep
re-discovers each panel across a grid of maximum lags; the depth bench
repeats the pipeline over seeds and DAG depths and aggregates effect
accuracy per depth plus a pooled "all" row (pooled over raw per-seed values,
not means of means).

Batches fan seeds out over a process pool; every task derives its own RNG
streams from its seed, and results are reduced and written in sorted task
order, so outputs are byte-identical for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from causalpanel.discovery import LaggedLinkSet, PcmciConfig, discover
from causalpanel.graph import CausalDag
from causalpanel.metrics import (
    DistanceMetrics,
    EdgeMetrics,
    EffectMetrics,
    distance_metrics,
    edge_metrics,
    effect_metrics,
)
from causalpanel.panel import Panel
from causalpanel.scm import AttributionReport, attribute_all, fit_scm
from causalpanel.simulate import GroundTruth, SimulationConfig, generate_random_dag, simulate_panel

SCHEMA_VERSION = 1

SWEEP_METRICS = ("tpr", "fpr", "auc", "f_beta", "nshd", "nsid")


class HarnessError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Batch experiment description (JSON-loadable).

    The default discovery settings test lag 0 upward because the default
    generator is contemporaneous; configs that simulate with a positive
    ``edge_lag`` should raise ``pcmci.tau_min`` to 1 accordingly.
    """

    sim: SimulationConfig = SimulationConfig()
    pcmci: PcmciConfig = PcmciConfig(tau_min=0)
    mc_runs: int = 5000
    seeds: tuple[int, ...] = tuple(range(20))
    depths: tuple[int, ...] = (2, 3, 4, 5, 6)
    tau_grid: tuple[int, ...] = (5, 15, 30, 45, 60)
    output_dir: Path | None = None
    workers: int = 1

    def validate(self) -> None:
        self.sim.validate()
        self.pcmci.validate()
        if self.mc_runs < 1:
            raise HarnessError("mc_runs must be >= 1")
        if not self.seeds:
            raise HarnessError("seed list must be nonempty")
        if not self.depths:
            raise HarnessError("depth list must be nonempty")
        for depth in self.depths:
            if not 2 <= depth <= self.sim.n_channels + 1:
                raise HarnessError(
                    f"depth {depth} outside [2, n_channels+1] = [2, {self.sim.n_channels + 1}]"
                )
        if not self.tau_grid:
            raise HarnessError("tau_grid must be nonempty")
        if self.workers < 1:
            raise HarnessError("workers must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "sim": self.sim.to_json_dict(),
            "pcmci": self.pcmci.to_json_dict(),
            "mc_runs": self.mc_runs,
            "seeds": list(self.seeds),
            "depths": list(self.depths),
            "tau_grid": list(self.tau_grid),
            "output_dir": None if self.output_dir is None else str(self.output_dir),
            "workers": self.workers,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ExperimentConfig":
        payload = dict(payload)
        payload.pop("schema_version", None)
        kwargs: dict = {}
        if "sim" in payload:
            kwargs["sim"] = SimulationConfig.from_json_dict(payload.pop("sim"))
        if "pcmci" in payload:
            kwargs["pcmci"] = PcmciConfig.from_json_dict(payload.pop("pcmci"))
        if "seeds" in payload and "root_seed" in payload:
            raise HarnessError("give either an explicit seed list or root_seed/n_seeds, not both")
        if "seeds" in payload:
            kwargs["seeds"] = tuple(int(s) for s in payload.pop("seeds"))
        elif "root_seed" in payload:
            root = int(payload.pop("root_seed"))
            count = int(payload.pop("n_seeds", 20))
            if count < 1:
                raise HarnessError("n_seeds must be >= 1")
            kwargs["seeds"] = tuple(root + i for i in range(count))
        payload.pop("n_seeds", None)
        for key in ("mc_runs", "workers"):
            if key in payload:
                kwargs[key] = int(payload.pop(key))
        for key in ("depths", "tau_grid"):
            if key in payload:
                kwargs[key] = tuple(int(v) for v in payload.pop(key))
        if "output_dir" in payload:
            value = payload.pop("output_dir")
            kwargs["output_dir"] = None if value is None else Path(value)
        if payload:
            raise HarnessError(f"unknown experiment config fields: {sorted(payload)}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PipelineRecord:
    """Everything one seed produced, plus its evaluation."""

    seed: int
    depth: int
    panel: Panel
    ground_truth: GroundTruth
    predicted_dag: CausalDag
    links: LaggedLinkSet
    attribution_true: AttributionReport
    attribution_pred: AttributionReport
    edge: EdgeMetrics
    distance: DistanceMetrics
    effects_true_dag: EffectMetrics
    effects_pred_dag: EffectMetrics

    def metrics_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "depth": self.depth,
            "clamp_count": self.ground_truth.clamp_count,
            "edge": self.edge.to_json_dict(),
            "distance": self.distance.to_json_dict(),
            "effects_true_dag": self.effects_true_dag.to_json_dict(),
            "effects_pred_dag": self.effects_pred_dag.to_json_dict(),
        }

    def persist(self, directory: str | Path) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        self.panel.to_csv(out / "panel.csv")
        self.ground_truth.to_json(out / "truth.json")
        self.predicted_dag.to_json(out / "predicted_dag.json")
        (out / "predicted_dag.dot").write_text(self.predicted_dag.to_dot())
        self.links.to_csv(out / "links.csv")
        self.attribution_true.to_json(out / "attribution_true.json")
        self.attribution_pred.to_json(out / "attribution_pred.json")
        (out / "metrics.json").write_text(
            json.dumps(self.metrics_json_dict(), indent=2, sort_keys=True) + "\n"
        )
        return out


def run_pipeline(cfg: ExperimentConfig, seed: int, depth: int | None = None) -> PipelineRecord:
    """simulate -> discover -> attribute under both DAGs -> score."""
    cfg.validate()
    sim_cfg = replace(cfg.sim, seed=seed, depth=cfg.sim.depth if depth is None else depth)
    dag = generate_random_dag(sim_cfg)
    panel, gt = simulate_panel(sim_cfg, dag)
    pred_dag, links = discover(panel, cfg.pcmci)

    scm_true = fit_scm(panel, gt.dag)
    attribution_true = attribute_all(scm_true, n_runs=cfg.mc_runs, seed=seed)
    scm_pred = fit_scm(panel, pred_dag)
    attribution_pred = attribute_all(scm_pred, n_runs=cfg.mc_runs, seed=seed)

    tau = gt.true_total_effects
    record = PipelineRecord(
        seed=seed,
        depth=sim_cfg.depth,
        panel=panel,
        ground_truth=gt,
        predicted_dag=pred_dag,
        links=links,
        attribution_true=attribution_true,
        attribution_pred=attribution_pred,
        edge=edge_metrics(gt.dag, pred_dag, links.pair_scores()),
        distance=distance_metrics(gt.dag, pred_dag),
        effects_true_dag=effect_metrics(tau, attribution_true.effects_vector()),
        effects_pred_dag=effect_metrics(tau, attribution_pred.effects_vector()),
    )
    if cfg.output_dir is not None:
        record.persist(Path(cfg.output_dir) / f"seed_{seed}")
    return record


# ------------------------------------------------------------------ batching
def _pipeline_task(args: tuple[ExperimentConfig, int, int]) -> tuple[tuple[int, int], PipelineRecord | None, str | None]:
    cfg, seed, depth = args
    key = (depth, seed)
    try:
        cfg = replace(cfg, output_dir=None)  # workers never write; the caller does
        return key, run_pipeline(cfg, seed, depth=depth), None
    except Exception as exc:  # noqa: BLE001 - a failed seed must not abort the batch
        return key, None, f"{type(exc).__name__}: {exc}"


def _run_batch(
    cfg: ExperimentConfig, tasks: list[tuple[ExperimentConfig, int, int]]
) -> tuple[dict[tuple[int, int], PipelineRecord], list[dict]]:
    records: dict[tuple[int, int], PipelineRecord] = {}
    failures: list[dict] = []
    if cfg.workers == 1:
        results = map(_pipeline_task, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=cfg.workers)
        try:
            results = list(pool.map(_pipeline_task, tasks))
        finally:
            pool.shutdown()
    for key, record, error in results:
        depth, seed = key
        if error is not None:
            failures.append({"depth": depth, "seed": seed, "error": error})
        else:
            records[key] = record
    failures.sort(key=lambda f: (f["depth"], f["seed"]))
    return records, failures


# ----------------------------------------------------------------- lag sweep
def _sweep_task(args: tuple[ExperimentConfig, int]) -> tuple[int, list[dict] | None, str | None]:
    cfg, seed = args
    try:
        sim_cfg = replace(cfg.sim, seed=seed)
        dag = generate_random_dag(sim_cfg)
        panel, gt = simulate_panel(sim_cfg, dag)
        rows: list[dict] = []
        for tau in cfg.tau_grid:
            pcmci = replace(cfg.pcmci, tau_max=tau, tau_min=min(cfg.pcmci.tau_min, tau))
            pred_dag, links = discover(panel, pcmci)
            em = edge_metrics(gt.dag, pred_dag, links.pair_scores())
            s = distance_metrics(gt.dag, pred_dag)
            values = {
                "tpr": em.tpr,
                "fpr": em.fpr,
                "auc": em.auc,
                "f_beta": em.f_beta,
                "nshd": s.nshd,
                "nsid": s.nsid,
            }
            for metric in SWEEP_METRICS:
                value = values[metric]
                rows.append(
                    {
                        "tau": tau,
                        "seed": seed,
                        "metric": metric,
                        "value": float("nan") if value is None else float(value),
                    }
                )
        return seed, rows, None
    except Exception as exc:  # noqa: BLE001 - record and continue
        return seed, None, f"{type(exc).__name__}: {exc}"


def lag_sweep(cfg: ExperimentConfig) -> pd.DataFrame:
    """Re-discover each seed's panel across ``tau_grid``; long-format result.

    One panel per seed is simulated once and reused across the grid.  Rows
    are (tau, seed, metric, value); failed cells appear as NaN values so
    the grid stays rectangular.
    """
    cfg.validate()
    tasks = [(cfg, seed) for seed in cfg.seeds]
    if cfg.workers == 1:
        results = list(map(_sweep_task, tasks))
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_sweep_task, tasks))
    by_seed = {seed: (rows, error) for seed, rows, error in results}
    all_rows: list[dict] = []
    for seed in cfg.seeds:
        rows, error = by_seed[seed]
        if error is not None:
            for tau in cfg.tau_grid:
                for metric in SWEEP_METRICS:
                    all_rows.append({"tau": tau, "seed": seed, "metric": metric, "value": float("nan")})
        else:
            all_rows.extend(rows)
    frame = pd.DataFrame(all_rows, columns=["tau", "seed", "metric", "value"])
    if cfg.output_dir is not None:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out / "sweep.csv", index=False, lineterminator="\n")
    return frame


# --------------------------------------------------------------- depth bench
@dataclass(frozen=True)
class BenchRow:
    depth: str  # "2".."6" or "all"
    dag_input: str  # "true" | "predicted"
    rrmse_mean: float
    rrmse_std: float
    mape_mean: float
    mape_std: float
    spearman_mean: float
    spearman_std: float
    n_seeds: int

    def to_json_dict(self) -> dict:
        return {
            "depth": self.depth,
            "dag_input": self.dag_input,
            "rrmse_mean": self.rrmse_mean,
            "rrmse_std": self.rrmse_std,
            "mape_mean": self.mape_mean,
            "mape_std": self.mape_std,
            "spearman_mean": self.spearman_mean,
            "spearman_std": self.spearman_std,
            "n_seeds": self.n_seeds,
        }


def _aggregate(depth_label: str, dag_input: str, triples: list[tuple[float, float, float]]) -> BenchRow:
    arr = np.array(triples, dtype=float) if triples else np.zeros((0, 3))

    def mean_std(col: np.ndarray) -> tuple[float, float]:
        vals = col[np.isfinite(col)]
        if vals.size == 0:
            return float("nan"), float("nan")
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        return float(np.mean(vals)), std

    rm, rs = mean_std(arr[:, 0]) if arr.size else (float("nan"), float("nan"))
    mm, ms = mean_std(arr[:, 1]) if arr.size else (float("nan"), float("nan"))
    sm, ss = mean_std(arr[:, 2]) if arr.size else (float("nan"), float("nan"))
    n = int(np.sum(np.isfinite(arr[:, 0]))) if arr.size else 0
    return BenchRow(
        depth=depth_label,
        dag_input=dag_input,
        rrmse_mean=rm,
        rrmse_std=rs,
        mape_mean=mm,
        mape_std=ms,
        spearman_mean=sm,
        spearman_std=ss,
        n_seeds=n,
    )


def _effect_triple(metrics: EffectMetrics) -> tuple[float, float, float]:
    return (
        float("nan") if metrics.rrmse is None else metrics.rrmse,
        float("nan") if metrics.mape is None else metrics.mape,
        float("nan") if metrics.spearman_rho is None else metrics.spearman_rho,
    )


def depth_bench(cfg: ExperimentConfig) -> tuple[list[BenchRow], list[dict]]:
    """Run the pipeline over every (depth, seed) cell and aggregate.

    Returns the per-depth rows (true and predicted DAG inputs) followed by
    pooled "all" rows, plus the list of failed cells.  Pooling uses the raw
    per-seed values across depths, not depth means.
    """
    cfg.validate()
    tasks = [(cfg, seed, depth) for depth in cfg.depths for seed in cfg.seeds]
    records, failures = _run_batch(cfg, tasks)

    if cfg.output_dir is not None:
        base = Path(cfg.output_dir)
        for (depth, seed), record in sorted(records.items()):
            record.persist(base / f"depth_{depth}" / f"seed_{seed}")

    rows: list[BenchRow] = []
    pooled: dict[str, list[tuple[float, float, float]]] = {"true": [], "predicted": []}
    for depth in cfg.depths:
        per_input: dict[str, list[tuple[float, float, float]]] = {"true": [], "predicted": []}
        for seed in cfg.seeds:
            record = records.get((depth, seed))
            if record is None:
                continue
            per_input["true"].append(_effect_triple(record.effects_true_dag))
            per_input["predicted"].append(_effect_triple(record.effects_pred_dag))
        for dag_input in ("true", "predicted"):
            rows.append(_aggregate(str(depth), dag_input, per_input[dag_input]))
            pooled[dag_input].extend(per_input[dag_input])
    for dag_input in ("true", "predicted"):
        rows.append(_aggregate("all", dag_input, pooled[dag_input]))

    if cfg.output_dir is not None:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame([r.to_json_dict() for r in rows])
        frame.to_csv(out / "bench.csv", index=False, lineterminator="\n")
        payload = {
            "schema_version": SCHEMA_VERSION,
            "pooling": "the 'all' row pools raw per-seed values across depths",
            "rows": [r.to_json_dict() for r in rows],
            "failures": failures,
        }
        (out / "bench.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return rows, failures
