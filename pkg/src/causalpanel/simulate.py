"""Synthetic marketing-panel generator driven by a layered causal DAG.

Generation follows a linear structural system evaluated in topological
order.  Channel impressions follow

    x_{i,t} = alpha_i + beta_i * t + sum_j w_ij * x_{j, t-L} + eps_{i,t}

with ``L`` an optional uniform edge delay (default 0, contemporaneous).
Per-channel conversions are ``y_{i,t} = gamma_i * x_{i, t-L}`` for channels
with a direct edge into the outcome, and total conversions are

    C_t = B + sum_i y_{i,t} + eta_t

with a single noise term at the total level and a constant baseline ``B``.
Negative impression values are clamped at zero and the clamp count recorded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from causalpanel.graph import CausalDag, Edge, GraphError, Node, topological_order
from causalpanel.panel import Panel, channel_column

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised when a simulation configuration violates its invariants."""


def _as_range(value, name: str) -> tuple[float, float]:
    """Accept a scalar or a (lo, hi) pair; return a (lo, hi) tuple."""
    if np.isscalar(value):
        v = float(value)
        return (v, v)
    lo, hi = (float(v) for v in value)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name} must be a finite range with min <= max, got {value!r}")
    return (lo, hi)


@dataclass(frozen=True)
class SimulationConfig:
    """Inputs of the panel generator.

    ``baseline_range`` feeds the channel intercepts alpha_i;
    ``conversion_baseline_range`` feeds the conversion baseline B and falls
    back to ``baseline_range`` when omitted.  Noise scales accept a scalar
    or a (lo, hi) range sampled per series.  ``edge_lag`` shifts every edge
    by a fixed number of steps (0 keeps the system contemporaneous).
    """

    n_channels: int = 5
    horizon_T: int = 365
    depth: int = 2
    baseline_range: tuple[float, float] = (300.0, 800.0)
    conversion_baseline_range: tuple[float, float] | None = None
    growth_range: tuple[float, float] = (0.0, 1.0)
    weight_range: tuple[float, float] = (0.2, 0.4)
    negative_weight_probability: float = 0.1
    conversion_rate_range: tuple[float, float] = (0.005, 0.05)
    noise_std_channel: float | tuple[float, float] = (5.0, 9.0)
    noise_std_conversion: float | tuple[float, float] = 0.05
    edge_probability: float = 0.3
    edge_lag: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.n_channels < 1:
            raise ConfigError("n_channels must be >= 1")
        if self.horizon_T < 2:
            raise ConfigError("horizon_T must be >= 2")
        if not 2 <= self.depth <= self.n_channels + 1:
            raise ConfigError(
                f"depth must lie in [2, n_channels+1] = [2, {self.n_channels + 1}], got {self.depth}"
            )
        for name in ("baseline_range", "growth_range", "weight_range", "conversion_rate_range"):
            _as_range(getattr(self, name), name)
        if self.conversion_baseline_range is not None:
            _as_range(self.conversion_baseline_range, "conversion_baseline_range")
        lo, _ = _as_range(self.weight_range, "weight_range")
        if lo <= 0:
            raise ConfigError("weight_range magnitudes must be positive")
        for name in ("noise_std_channel", "noise_std_conversion"):
            lo, _ = _as_range(getattr(self, name), name)
            if lo < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("edge_probability", "negative_weight_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.edge_lag < 0:
            raise ConfigError("edge_lag must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_channels": self.n_channels,
            "horizon_T": self.horizon_T,
            "depth": self.depth,
            "baseline_range": list(_as_range(self.baseline_range, "baseline_range")),
            "conversion_baseline_range": (
                None
                if self.conversion_baseline_range is None
                else list(_as_range(self.conversion_baseline_range, "conversion_baseline_range"))
            ),
            "growth_range": list(_as_range(self.growth_range, "growth_range")),
            "weight_range": list(_as_range(self.weight_range, "weight_range")),
            "negative_weight_probability": self.negative_weight_probability,
            "conversion_rate_range": list(_as_range(self.conversion_rate_range, "conversion_rate_range")),
            "noise_std_channel": list(_as_range(self.noise_std_channel, "noise_std_channel")),
            "noise_std_conversion": list(_as_range(self.noise_std_conversion, "noise_std_conversion")),
            "edge_probability": self.edge_probability,
            "edge_lag": self.edge_lag,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "SimulationConfig":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {}
        for key, value in payload.items():
            if key == "schema_version":
                continue
            if key not in known:
                raise ConfigError(f"unknown simulation config field: {key}")
            if key.endswith("_range") and isinstance(value, list):
                value = tuple(value)
            if key in ("noise_std_channel", "noise_std_conversion") and isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


OUTCOME_NAME = "conversion"


@dataclass(frozen=True)
class GroundTruth:
    """Everything the generator knows: the DAG plus all drawn parameters."""

    dag: CausalDag
    alpha: np.ndarray
    beta: np.ndarray
    baseline: float
    channel_noise_std: np.ndarray
    conversion_noise_std: float
    edge_lag: int
    clamp_count: int
    true_total_effects: np.ndarray
    per_channel_conversions: np.ndarray  # (T, n_channels); zero column where no direct edge

    @property
    def n_channels(self) -> int:
        return len(self.alpha)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dag": self.dag.to_json_dict(),
            "alpha": [float(v) for v in self.alpha],
            "beta": [float(v) for v in self.beta],
            "baseline": float(self.baseline),
            "channel_noise_std": [float(v) for v in self.channel_noise_std],
            "conversion_noise_std": float(self.conversion_noise_std),
            "edge_lag": int(self.edge_lag),
            "clamp_count": int(self.clamp_count),
            "true_total_effects": [float(v) for v in self.true_total_effects],
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json_dict(cls, payload: dict) -> "GroundTruth":
        dag = CausalDag.from_json_dict(payload["dag"])
        n = len(payload["alpha"])
        return cls(
            dag=dag,
            alpha=np.asarray(payload["alpha"], dtype=float),
            beta=np.asarray(payload["beta"], dtype=float),
            baseline=float(payload["baseline"]),
            channel_noise_std=np.asarray(payload["channel_noise_std"], dtype=float),
            conversion_noise_std=float(payload["conversion_noise_std"]),
            edge_lag=int(payload["edge_lag"]),
            clamp_count=int(payload["clamp_count"]),
            true_total_effects=np.asarray(payload["true_total_effects"], dtype=float),
            per_channel_conversions=np.zeros((0, n)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "GroundTruth":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _channel_nodes(n_channels: int, layers: Sequence[int]) -> tuple[Node, ...]:
    nodes = [
        Node(index=i, name=channel_column(i), layer=int(layers[i]))
        for i in range(n_channels)
    ]
    nodes.append(Node(index=n_channels, name=OUTCOME_NAME, layer=0, is_outcome=True))
    return tuple(nodes)


def generate_random_dag(cfg: SimulationConfig) -> CausalDag:
    """Sample a layered ground-truth DAG for ``cfg``.

    Layer 0 holds the outcome alone; channels spread over layers
    1..depth-1 with at least one channel per layer.  Each channel gets one
    guaranteed edge to a uniformly chosen node in the next-lower layer (so
    every channel reaches the outcome), then every remaining admissible
    higher->lower pair is added independently with ``edge_probability``.
    Channel->channel weights come from ``weight_range`` with the configured
    negative-sign probability; channel->outcome weights are conversion
    rates drawn from ``conversion_rate_range``.
    """
    cfg.validate()
    n = cfg.n_channels
    n_layers = cfg.depth - 1  # channel layers 1..depth-1
    if n < n_layers:
        raise ConfigError(f"depth {cfg.depth} infeasible with {n} channels")
    rng = np.random.default_rng([cfg.seed, 0])
    outcome = n

    perm = rng.permutation(n)
    layers = np.zeros(n, dtype=int)
    for pos in range(n_layers):
        layers[perm[pos]] = pos + 1
    if n > n_layers:
        layers[perm[n_layers:]] = rng.integers(1, n_layers + 1, size=n - n_layers)

    members: dict[int, list[int]] = {0: [outcome]}
    for level in range(1, n_layers + 1):
        members[level] = sorted(int(i) for i in np.flatnonzero(layers == level))

    def draw_weight(dst: int) -> float:
        if dst == outcome:
            lo, hi = _as_range(cfg.conversion_rate_range, "conversion_rate_range")
            return float(rng.uniform(lo, hi))
        lo, hi = _as_range(cfg.weight_range, "weight_range")
        magnitude = float(rng.uniform(lo, hi))
        if rng.random() < cfg.negative_weight_probability:
            magnitude = -magnitude
        return magnitude

    edges: list[Edge] = []
    present: set[tuple[int, int]] = set()
    for src in range(n):
        pool = members[layers[src] - 1]
        dst = pool[int(rng.integers(len(pool)))]
        edges.append(Edge(src=src, dst=dst, weight=draw_weight(dst)))
        present.add((src, dst))

    for src in range(n):
        for dst in range(n + 1):
            if src == dst or (src, dst) in present:
                continue
            dst_layer = 0 if dst == outcome else layers[dst]
            if layers[src] <= dst_layer:
                continue
            if rng.random() < cfg.edge_probability:
                edges.append(Edge(src=src, dst=dst, weight=draw_weight(dst)))
                present.add((src, dst))

    dag = CausalDag(nodes=_channel_nodes(n, layers), edges=tuple(edges))
    verdict = dag.validate()
    if not verdict:
        raise GraphError(f"generated DAG failed validation: {verdict.code} {verdict.offenders}")
    return dag


def total_effect_vector(dag: CausalDag) -> np.ndarray:
    """Per-channel total causal effect on the outcome: sum over directed
    paths of the product of edge weights along each path."""
    n = dag.n_nodes
    outcome = dag.outcome.index
    effect = np.zeros(n)
    effect[outcome] = 1.0
    children: dict[int, list[Edge]] = {i: [] for i in range(n)}
    for e in dag.edges:
        children[e.src].append(e)
    for u in reversed(topological_order(dag)):
        if u == outcome:
            continue
        effect[u] = sum(e.weight * effect[e.dst] for e in children[u])
    return np.array([effect[c.index] for c in dag.channels])


def true_total_effect(gt: GroundTruth) -> np.ndarray:
    """Ground-truth per-channel effects, computed only from the DAG weights."""
    return total_effect_vector(gt.dag)


def _lagged(series: np.ndarray, lag: int) -> np.ndarray:
    if lag == 0:
        return series
    return np.concatenate([np.full(lag, series[0]), series[:-lag]])


def simulate_panel(cfg: SimulationConfig, dag: CausalDag) -> tuple[Panel, GroundTruth]:
    """Generate a panel from ``dag`` under ``cfg``.

    All randomness comes from one stream with a fixed draw order (alpha,
    beta, baseline, noise scales, channel noise, conversion noise), so a
    given (cfg, dag) pair always produces a byte-identical panel.  With a
    positive ``edge_lag`` the system is warmed up for ``edge_lag * max_layer``
    steps before row 0 so the emitted window carries no boundary effects;
    the trend is anchored so emitted row r sees ``beta * r``.
    """
    cfg.validate()
    verdict = dag.validate()
    if not verdict:
        raise GraphError(f"invalid DAG for simulation: {verdict.code} {verdict.offenders}")
    n = cfg.n_channels
    if len(dag.channels) != n:
        raise ConfigError(f"dag has {len(dag.channels)} channels, config expects {n}")
    outcome = dag.outcome.index
    T = cfg.horizon_T
    L = cfg.edge_lag
    max_layer = max(node.layer for node in dag.nodes)
    burnin = L * max_layer
    S = T + burnin

    rng = np.random.default_rng([cfg.seed, 1])
    a_lo, a_hi = _as_range(cfg.baseline_range, "baseline_range")
    alpha = rng.uniform(a_lo, a_hi, size=n)
    g_lo, g_hi = _as_range(cfg.growth_range, "growth_range")
    beta = rng.uniform(g_lo, g_hi, size=n)
    b_range = cfg.conversion_baseline_range
    b_lo, b_hi = _as_range(b_range if b_range is not None else cfg.baseline_range, "conversion_baseline_range")
    baseline = float(rng.uniform(b_lo, b_hi))
    s_lo, s_hi = _as_range(cfg.noise_std_channel, "noise_std_channel")
    sigma_channel = rng.uniform(s_lo, s_hi, size=n)
    c_lo, c_hi = _as_range(cfg.noise_std_conversion, "noise_std_conversion")
    sigma_conversion = float(rng.uniform(c_lo, c_hi))
    eps = rng.standard_normal((S, n)) * sigma_channel[None, :]
    eta = rng.standard_normal(S) * sigma_conversion

    trend_time = np.arange(S, dtype=float) - burnin
    channel_parents: dict[int, list[Edge]] = {i: [] for i in range(n)}
    gamma = np.zeros(n)
    for e in dag.edges:
        if e.dst == outcome:
            gamma[e.src] = e.weight
        else:
            channel_parents[e.dst].append(e)

    x = np.zeros((S, n))
    clamp_count = 0
    for node_index in topological_order(dag):
        if node_index == outcome:
            continue
        series = alpha[node_index] + beta[node_index] * trend_time + eps[:, node_index]
        for e in sorted(channel_parents[node_index], key=lambda edge: edge.src):
            series = series + e.weight * _lagged(x[:, e.src], L)
        clamp_count += int(np.count_nonzero(series[burnin:] < 0.0))
        x[:, node_index] = np.maximum(series, 0.0)

    y = np.zeros((S, n))
    for i in range(n):
        if gamma[i] != 0.0:
            y[:, i] = gamma[i] * _lagged(x[:, i], L)
    conversion = baseline + y.sum(axis=1) + eta

    panel = Panel(
        index=np.arange(T, dtype=int),
        conversion=conversion[burnin:],
        impressions=x[burnin:, :].copy(),
    )
    gt = GroundTruth(
        dag=dag,
        alpha=alpha,
        beta=beta,
        baseline=baseline,
        channel_noise_std=sigma_channel,
        conversion_noise_std=sigma_conversion,
        edge_lag=L,
        clamp_count=clamp_count,
        true_total_effects=total_effect_vector(dag),
        per_channel_conversions=y[burnin:, :].copy(),
    )
    return panel, gt
