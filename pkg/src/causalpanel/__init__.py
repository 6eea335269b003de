"""Synthetic marketing panels, temporal causal discovery, and interventional attribution.

The package is organised around a small set of building blocks:

* :mod:`causalpanel.graph` -- layered causal DAGs with JSON / DOT export.
* :mod:`causalpanel.simulate` -- random ground-truth DAGs and panel generation.
* :mod:`causalpanel.parcorr` -- the partial-correlation conditional independence test.
* :mod:`causalpanel.discovery` -- two-stage lagged causal discovery (condition
  selection followed by momentary conditional independence tests) and collapse
  of the lagged link set to a summary DAG.
* :mod:`causalpanel.scm` -- structural causal model fitting and Monte-Carlo
  do-intervention attribution.
* :mod:`causalpanel.metrics` -- graph recovery and effect accuracy metrics.
* :mod:`causalpanel.harness` -- end-to-end pipeline, lag sweep and depth benchmark.
"""

from causalpanel.graph import CausalDag, Edge, GraphError, Node
from causalpanel.panel import Panel
from causalpanel.simulate import GroundTruth, SimulationConfig, generate_random_dag, simulate_panel, true_total_effect
from causalpanel.parcorr import ParCorrResult, parcorr_test
from causalpanel.discovery import LaggedLink, LaggedLinkSet, PcmciConfig, collapse_to_summary, discover
from causalpanel.scm import AttributionReport, CateEstimate, FittedScm, attribute_all, estimate_cate, fit_scm
from causalpanel.metrics import DistanceMetrics, EdgeMetrics, EffectMetrics, edge_metrics, effect_metrics, shd, sid

__version__ = "0.1.0"

__all__ = [
    "AttributionReport",
    "CateEstimate",
    "CausalDag",
    "DistanceMetrics",
    "Edge",
    "EdgeMetrics",
    "EffectMetrics",
    "FittedScm",
    "GraphError",
    "GroundTruth",
    "LaggedLink",
    "LaggedLinkSet",
    "Node",
    "Panel",
    "ParCorrResult",
    "PcmciConfig",
    "SimulationConfig",
    "attribute_all",
    "collapse_to_summary",
    "discover",
    "edge_metrics",
    "effect_metrics",
    "estimate_cate",
    "fit_scm",
    "generate_random_dag",
    "metrics",
    "parcorr_test",
    "shd",
    "sid",
    "simulate_panel",
    "true_total_effect",
]
