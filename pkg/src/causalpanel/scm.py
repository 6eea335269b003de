"""Structural causal model fitting and Monte-Carlo do-intervention attribution.

Each non-root node gets a linear-additive mechanism fitted by least squares
on its DAG parents plus an intercept and the time index (panels carry
deterministic growth trends; leaving time out would let parent coefficients
absorb the trend).  Exogenous context is handled empirically: every Monte
Carlo run draws one observed panel row uniformly to fix the root nodes and
the time index, and non-root nodes add a residual resampled from their own
fit residuals.  Interventions fix the do-targets and sever their mechanisms.

Channel attribution uses paired two-arm sampling: the "active" arm fixes a
channel at its observed mean, the "removed" arm at zero, and both arms share
row and residual draws so the per-run difference isolates the causal path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from causalpanel.graph import CausalDag, GraphError, topological_order
from causalpanel.panel import Panel

SCHEMA_VERSION = 1


class ScmError(Exception):
    pass


class MissingColumnError(ScmError):
    """A DAG node has no matching panel column."""


class MechanismRankError(ScmError):
    """A node's regression design is rank deficient."""


@dataclass(frozen=True)
class Mechanism:
    node: int
    intercept: float
    time_coefficient: float
    coefficients: dict[int, float]  # keyed exactly by the node's DAG parents
    residual_pool: np.ndarray
    residual_std: float


@dataclass(frozen=True)
class FittedScm:
    dag: CausalDag
    mechanisms: dict[int, Mechanism]
    root_indices: tuple[int, ...]
    root_samples: np.ndarray  # (T, len(root_indices)) empirical values
    time_samples: np.ndarray  # (T,) observed time index
    normalization: dict[int, float]  # per-channel observed mean

    @property
    def n_rows(self) -> int:
        return len(self.time_samples)

    def root_column(self, node: int) -> np.ndarray:
        return self.root_samples[:, self.root_indices.index(node)]


def _panel_column(panel: Panel, name: str) -> np.ndarray:
    names = panel.node_names()
    if name not in names:
        raise MissingColumnError(f"panel has no column for node {name!r}")
    return panel.values()[:, names.index(name)]


def fit_scm(panel: Panel, dag: CausalDag) -> FittedScm:
    """Fit one linear mechanism per non-root node of ``dag`` on ``panel``.

    Works for ground-truth and discovered graphs alike (discovered graphs
    may strand channels away from the outcome, which is fine for fitting).
    """
    verdict = dag.validate(require_reachable=False)
    if not verdict:
        raise GraphError(f"invalid DAG for SCM fit: {verdict.code} {verdict.offenders}")
    T = panel.n_steps
    columns = {node.index: _panel_column(panel, node.name) for node in dag.nodes}
    time_samples = panel.index.astype(float)

    max_parents = max((len(dag.parents_of(n.index)) for n in dag.nodes), default=0)
    if T <= max_parents + 3:
        raise ScmError(f"panel too short to fit: T={T}, widest mechanism has {max_parents} parents")

    mechanisms: dict[int, Mechanism] = {}
    roots: list[int] = []
    for node in dag.nodes:
        parents = dag.parents_of(node.index)
        if not parents:
            roots.append(node.index)
            continue
        X = np.column_stack([np.ones(T), time_samples] + [columns[p] for p in parents])
        y = columns[node.index]
        coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        if rank < X.shape[1]:
            raise MechanismRankError(f"rank-deficient design fitting node {node.name!r}")
        resid = y - X @ coef
        mechanisms[node.index] = Mechanism(
            node=node.index,
            intercept=float(coef[0]),
            time_coefficient=float(coef[1]),
            coefficients={p: float(c) for p, c in zip(parents, coef[2:])},
            residual_pool=resid,
            residual_std=float(np.std(resid, ddof=1)) if T > 1 else 0.0,
        )

    normalization = {
        node.index: float(np.mean(columns[node.index]))
        for node in dag.nodes
        if not node.is_outcome
    }
    return FittedScm(
        dag=dag,
        mechanisms=mechanisms,
        root_indices=tuple(roots),
        root_samples=np.column_stack([columns[r] for r in roots]) if roots else np.zeros((T, 0)),
        time_samples=time_samples,
        normalization=normalization,
    )


def _draw_context(scm: FittedScm, n: int, rng: np.random.Generator):
    """Shared randomness for one (or one pair of) interventional run batches."""
    rows = rng.integers(0, scm.n_rows, size=n)
    residual_draws = {}
    for node in topological_order(scm.dag):
        mech = scm.mechanisms.get(node)
        if mech is not None:
            residual_draws[node] = rng.integers(0, len(mech.residual_pool), size=n)
    return rows, residual_draws


def _propagate(
    scm: FittedScm,
    do: Mapping[int, float],
    rows: np.ndarray,
    residual_draws: Mapping[int, np.ndarray],
    zero_residuals: bool,
) -> np.ndarray:
    values: dict[int, np.ndarray] = {}
    times = scm.time_samples[rows]
    for node in topological_order(scm.dag):
        if node in do:
            values[node] = np.full(len(rows), float(do[node]))
            continue
        mech = scm.mechanisms.get(node)
        if mech is None:
            values[node] = scm.root_column(node)[rows]
            continue
        pred = mech.intercept + mech.time_coefficient * times
        for parent, slope in mech.coefficients.items():
            pred = pred + slope * values[parent]
        if not zero_residuals:
            pred = pred + mech.residual_pool[residual_draws[node]]
        values[node] = pred
    return values[scm.dag.outcome.index]


def sample_interventional(
    scm: FittedScm,
    do: Mapping[int, float],
    n: int,
    seed,
    *,
    zero_residuals: bool = False,
) -> np.ndarray:
    """Outcome samples under do(...), averaging over the empirical context.

    Each run draws one observed row to fix roots and time, overrides the
    do-targets, and propagates the remaining mechanisms in topological
    order with resampled residuals (or none, with ``zero_residuals``).
    """
    if n < 1:
        raise ScmError("n must be >= 1")
    known = {node.index for node in scm.dag.nodes}
    unknown = set(do) - known
    if unknown:
        raise ScmError(f"unknown do-targets: {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    rows, residual_draws = _draw_context(scm, n, rng)
    return _propagate(scm, do, rows, residual_draws, zero_residuals)


@dataclass(frozen=True)
class CateEstimate:
    channel: int
    channel_name: str
    delta: float
    std_error: float
    runs: int
    ace_per_unit: float  # NaN when the channel's mean activity is zero

    @property
    def per_unit_defined(self) -> bool:
        return not np.isnan(self.ace_per_unit)


def estimate_cate(scm: FittedScm, channel: int, n_runs: int = 5000, seed=0) -> CateEstimate:
    """Paired-arm CATE of one channel: do(mean level) minus do(0).

    Both arms share context rows and residual draws, so the per-run
    difference isolates the intervened paths.  ``ace_per_unit`` divides by
    the channel's observed mean; a zero-mean channel leaves it NaN.
    """
    node = scm.dag.node(channel)
    if node.is_outcome:
        raise ScmError("cannot estimate a channel effect for the outcome node")
    if n_runs < 1:
        raise ScmError("n_runs must be >= 1")
    level = scm.normalization[channel]
    rng = np.random.default_rng(seed)
    rows, residual_draws = _draw_context(scm, n_runs, rng)
    active = _propagate(scm, {channel: level}, rows, residual_draws, zero_residuals=False)
    removed = _propagate(scm, {channel: 0.0}, rows, residual_draws, zero_residuals=False)
    diffs = active - removed
    delta = float(np.mean(diffs))
    std_error = float(np.std(diffs, ddof=1) / np.sqrt(n_runs)) if n_runs > 1 else 0.0
    ace = delta / level if level != 0.0 else float("nan")
    return CateEstimate(
        channel=channel,
        channel_name=node.name,
        delta=delta,
        std_error=std_error,
        runs=n_runs,
        ace_per_unit=ace,
    )


@dataclass(frozen=True)
class AttributionReport:
    estimates: tuple[CateEstimate, ...]
    mc_runs: int

    def ranking(self) -> list[CateEstimate]:
        """Estimates sorted by ace_per_unit, strongest first (NaN last)."""
        def key(est: CateEstimate):
            return (np.isnan(est.ace_per_unit), -(est.ace_per_unit if est.per_unit_defined else 0.0), est.channel)

        return sorted(self.estimates, key=key)

    def effects_vector(self) -> np.ndarray:
        """ace_per_unit ordered by channel index."""
        ordered = sorted(self.estimates, key=lambda est: est.channel)
        return np.array([est.ace_per_unit for est in ordered])

    def to_json_dict(self) -> dict:
        ranks = {est.channel: rank for rank, est in enumerate(self.ranking(), start=1)}
        return {
            "schema_version": SCHEMA_VERSION,
            "mc_runs": self.mc_runs,
            "channels": [
                {
                    "index": est.channel,
                    "name": est.channel_name,
                    "delta": est.delta,
                    "std_error": est.std_error,
                    "ace_per_unit": None if np.isnan(est.ace_per_unit) else est.ace_per_unit,
                    "rank": ranks[est.channel],
                }
                for est in sorted(self.estimates, key=lambda est: est.channel)
            ],
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    def to_frame(self) -> pd.DataFrame:
        payload = self.to_json_dict()
        return pd.DataFrame(payload["channels"], columns=["index", "name", "delta", "std_error", "ace_per_unit", "rank"])

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def from_json_dict(cls, payload: dict) -> "AttributionReport":
        estimates = tuple(
            CateEstimate(
                channel=int(ch["index"]),
                channel_name=str(ch["name"]),
                delta=float(ch["delta"]),
                std_error=float(ch["std_error"]),
                runs=int(payload["mc_runs"]),
                ace_per_unit=float("nan") if ch["ace_per_unit"] is None else float(ch["ace_per_unit"]),
            )
            for ch in payload["channels"]
        )
        return cls(estimates=estimates, mc_runs=int(payload["mc_runs"]))

    @classmethod
    def from_json(cls, path: str | Path) -> "AttributionReport":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def attribute_all(scm: FittedScm, n_runs: int = 5000, seed=0) -> AttributionReport:
    """Per-channel CATE for every channel, each on its own derived stream."""
    estimates = []
    for node in scm.dag.channels:
        estimates.append(estimate_cate(scm, node.index, n_runs=n_runs, seed=[seed, node.index]))
    return AttributionReport(estimates=tuple(estimates), mc_runs=n_runs)
