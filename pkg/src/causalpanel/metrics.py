"""Evaluation measures for recovered graphs and estimated channel effects.

Edge metrics treat directed adjacency as binary classification over ordered
node pairs (self-loops excluded).  Distance metrics cover the structural
Hamming distance (directed-entry and unordered-pair variants, the latter
normalized) and the structural intervention distance, which counts ordered
pairs (i, j) whose parent-adjustment estimate under the predicted graph
fails to match the true interventional distribution.  Effect metrics
compare estimated per-channel effects against the generating ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import stats

from causalpanel.graph import CausalDag, GraphError, ancestors, descendants, topological_order


# --------------------------------------------------------------------- edges
@dataclass(frozen=True)
class EdgeMetrics:
    tpr: float | None
    fpr: float | None
    auc: float | None
    f_beta: float | None
    flags: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "tpr": self.tpr,
            "fpr": self.fpr,
            "auc": self.auc,
            "f_beta": self.f_beta,
            "flags": list(self.flags),
        }


def _check_same_nodes(true_dag: CausalDag, pred_dag: CausalDag) -> None:
    t = [(n.index, n.name, n.is_outcome) for n in true_dag.nodes]
    p = [(n.index, n.name, n.is_outcome) for n in pred_dag.nodes]
    if t != p:
        raise GraphError("graphs are defined over different node sets")


def edge_metrics(true_dag: CausalDag, pred_dag: CausalDag, scores: np.ndarray | None = None) -> EdgeMetrics:
    """TPR/FPR/AUC/F0.5 of predicted directed edges against true ones.

    ``scores`` is a (D, D) confidence matrix over ordered pairs (diagonal
    ignored); omit it to skip AUC.  AUC is the Mann-Whitney probability
    that a true edge outranks a non-edge, counting ties one half.
    """
    _check_same_nodes(true_dag, pred_dag)
    D = true_dag.n_nodes
    E_true = true_dag.edge_set()
    E_pred = pred_dag.edge_set()
    pairs = [(i, j) for i in range(D) for j in range(D) if i != j]
    n_pos = len(E_true)
    n_neg = len(pairs) - n_pos

    flags: list[str] = []
    tp = len(E_pred & E_true)
    fp = len(E_pred - E_true)

    tpr = tp / n_pos if n_pos else None
    if n_pos == 0:
        flags.append("tpr_undefined_no_true_edges")
    fpr = fp / n_neg if n_neg else None
    if n_neg == 0:
        flags.append("fpr_undefined_all_pairs_are_edges")

    if not E_pred and not E_true:
        f_beta = None
        flags.append("f_beta_undefined_no_edges_anywhere")
    else:
        precision = tp / len(E_pred) if E_pred else 0.0
        recall = tp / n_pos if n_pos else 0.0
        denom = 0.25 * precision + recall
        f_beta = (1.25 * precision * recall / denom) if denom > 0 else 0.0

    auc = None
    if scores is None:
        flags.append("auc_skipped_no_scores")
    elif n_pos == 0 or n_neg == 0:
        flags.append("auc_undefined_one_class")
    else:
        scores = np.asarray(scores, dtype=float)
        if scores.shape != (D, D):
            raise ValueError(f"scores must be ({D}, {D}), got {scores.shape}")
        flat = np.array([scores[i, j] for i, j in pairs])
        labels = np.array([(i, j) in E_true for i, j in pairs])
        ranks = stats.rankdata(flat, method="average")
        auc = float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))

    return EdgeMetrics(tpr=tpr, fpr=fpr, auc=auc, f_beta=f_beta, flags=tuple(flags))


# ------------------------------------------------------------------ distances
@dataclass(frozen=True)
class ShdResult:
    shd: int        # directed-entry mismatches (adjacency L1)
    shd_pairs: int  # unordered pairs whose connection differs in any way
    nshd: float     # shd_pairs / C(D, 2)

    def to_json_dict(self) -> dict:
        return {"shd": self.shd, "shd_pairs": self.shd_pairs, "nshd": self.nshd}


def shd(true_dag: CausalDag, pred_dag: CausalDag) -> ShdResult:
    """Structural Hamming distance, both variants.

    The directed-entry count charges a reversed edge twice (one deletion,
    one insertion); the pair count charges any disagreement on an unordered
    pair once, and feeds the normalized variant.
    """
    _check_same_nodes(true_dag, pred_dag)
    D = true_dag.n_nodes
    E_true = true_dag.edge_set()
    E_pred = pred_dag.edge_set()
    directed = len(E_true.symmetric_difference(E_pred))
    pair_count = 0
    for u, v in combinations(range(D), 2):
        t = ((u, v) in E_true, (v, u) in E_true)
        p = ((u, v) in E_pred, (v, u) in E_pred)
        if t != p:
            pair_count += 1
    n_pairs = D * (D - 1) // 2
    return ShdResult(shd=directed, shd_pairs=pair_count, nshd=pair_count / n_pairs if n_pairs else 0.0)


def _parent_map(dag: CausalDag) -> dict[int, frozenset[int]]:
    out: dict[int, set[int]] = {n.index: set() for n in dag.nodes}
    for e in dag.edges:
        out[e.dst].add(e.src)
    return {k: frozenset(v) for k, v in out.items()}


def d_separated(dag: CausalDag, x: int, y: int, given: frozenset[int] | set[int]) -> bool:
    """d-separation of x and y given a set, via the moral ancestral graph."""
    if x == y:
        raise GraphError("d-separation needs distinct endpoints")
    given = frozenset(given)
    parents = _parent_map(dag)

    relevant = set(given) | {x, y}
    closure = set(relevant)
    stack = list(relevant)
    while stack:
        node = stack.pop()
        for p in parents[node]:
            if p not in closure:
                closure.add(p)
                stack.append(p)

    adjacency: dict[int, set[int]] = {n: set() for n in closure}
    for node in closure:
        for p in parents[node]:
            adjacency[node].add(p)
            adjacency[p].add(node)
        for a, b in combinations(sorted(parents[node]), 2):
            adjacency[a].add(b)
            adjacency[b].add(a)

    frontier = [x]
    seen = {x}
    while frontier:
        node = frontier.pop()
        if node == y:
            return False
        for nxt in adjacency[node]:
            if nxt in given or nxt in seen:
                continue
            seen.add(nxt)
            frontier.append(nxt)
    return True


def _pair_good(
    true_dag: CausalDag,
    i: int,
    j: int,
    adjustment: frozenset[int],
    de_cache: dict[int, frozenset[int]],
    an_cache: dict[int, frozenset[int]],
) -> bool:
    """Does adjusting for ``adjustment`` recover p(x_j | do(x_i)) in true_dag?

    Null-effect claims (j in the adjustment set) are good exactly when j is
    no true descendant of i.  True null effects need the adjusted estimate
    to vanish, i.e. d-separation given the set.  True nonzero effects need
    the set to satisfy the generalized adjustment criterion: it must avoid
    descendants of nodes on proper causal paths i -> ... -> j, and block
    every proper non-causal path (d-separation in the graph with the first
    edges of causal paths removed).
    """
    de_i = de_cache[i]
    if j in adjustment:
        return j not in de_i
    if j not in de_i:
        return d_separated(true_dag, i, j, adjustment)
    causal_nodes = frozenset(w for w in de_i if w == j or w in an_cache[j])
    forbidden = set(causal_nodes)
    for w in causal_nodes:
        forbidden |= de_cache[w]
    if adjustment & forbidden:
        return False
    kept = tuple(e for e in true_dag.edges if not (e.src == i and e.dst in causal_nodes))
    backdoor_graph = CausalDag(nodes=true_dag.nodes, edges=kept)
    return d_separated(backdoor_graph, i, j, adjustment)


@dataclass(frozen=True)
class SidResult:
    sid: int
    nsid: float

    def to_json_dict(self) -> dict:
        return {"sid": self.sid, "nsid": self.nsid}


def sid(true_dag: CausalDag, pred_dag: CausalDag) -> SidResult:
    """Structural intervention distance of pred_dag against true_dag.

    For every ordered pair (i, j) the predicted graph proposes the parent
    set PA_pred(i) as adjustment; the pair counts as a failure when that
    adjustment does not produce the true interventional distribution for
    every observational distribution generated by true_dag.
    """
    _check_same_nodes(true_dag, pred_dag)
    for dag, label in ((true_dag, "true"), (pred_dag, "predicted")):
        try:
            topological_order(dag)
        except GraphError as exc:
            raise GraphError(f"{label} graph is cyclic: {exc}") from exc
    D = true_dag.n_nodes
    de_cache = {v: frozenset(descendants(true_dag, v)) for v in range(D)}
    an_cache = {v: frozenset(ancestors(true_dag, v)) for v in range(D)}
    pred_parents = _parent_map(pred_dag)

    bad = 0
    for i in range(D):
        adjustment = pred_parents[i]
        for j in range(D):
            if i == j:
                continue
            if not _pair_good(true_dag, i, j, adjustment, de_cache, an_cache):
                bad += 1
    denom = D * (D - 1)
    return SidResult(sid=bad, nsid=bad / denom if denom else 0.0)


@dataclass(frozen=True)
class DistanceMetrics:
    shd: int
    shd_pairs: int
    nshd: float
    sid: int
    nsid: float

    def to_json_dict(self) -> dict:
        return {
            "shd": self.shd,
            "shd_pairs": self.shd_pairs,
            "nshd": self.nshd,
            "sid": self.sid,
            "nsid": self.nsid,
        }


def distance_metrics(true_dag: CausalDag, pred_dag: CausalDag) -> DistanceMetrics:
    s = shd(true_dag, pred_dag)
    d = sid(true_dag, pred_dag)
    return DistanceMetrics(shd=s.shd, shd_pairs=s.shd_pairs, nshd=s.nshd, sid=d.sid, nsid=d.nsid)


# -------------------------------------------------------------------- effects
@dataclass(frozen=True)
class EffectMetrics:
    rrmse: float | None      # percent
    mape: float | None       # percent
    spearman_rho: float | None
    flags: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "rrmse": self.rrmse,
            "mape": self.mape,
            "spearman_rho": self.spearman_rho,
            "flags": list(self.flags),
        }


def _rank_average(values: np.ndarray) -> np.ndarray:
    return stats.rankdata(values, method="average")


def effect_metrics(true_effects: np.ndarray, estimated: np.ndarray) -> EffectMetrics:
    """RRMSE and MAPE (percent) plus rank correlation of effect vectors.

    RRMSE normalizes the root-mean-square error by the mean absolute true
    effect; MAPE is flagged undefined when any true effect is exactly zero.
    The rank correlation uses squared average-rank differences
    (rho = 1 - 6 sum d^2 / (n (n^2 - 1))).
    """
    t = np.asarray(true_effects, dtype=float).ravel()
    e = np.asarray(estimated, dtype=float).ravel()
    if t.shape != e.shape:
        raise ValueError(f"effect vectors disagree on length: {t.shape} vs {e.shape}")
    n = t.shape[0]
    if n < 2:
        raise ValueError("need at least two effects to compare")

    flags: list[str] = []
    if not np.all(np.isfinite(e)) or not np.all(np.isfinite(t)):
        flags.append("effects_contain_non_finite_values")
        return EffectMetrics(rrmse=None, mape=None, spearman_rho=None, flags=tuple(flags))

    scale = float(np.mean(np.abs(t)))
    if scale == 0.0:
        rrmse = None
        flags.append("rrmse_undefined_zero_scale")
    else:
        rrmse = float(np.sqrt(np.mean((e - t) ** 2)) / scale * 100.0)

    if np.any(t == 0.0):
        mape = None
        flags.append("mape_undefined_zero_true_effect")
    else:
        mape = float(np.mean(np.abs(e - t) / np.abs(t)) * 100.0)

    d = _rank_average(t) - _rank_average(e)
    spearman = float(1.0 - 6.0 * np.sum(d * d) / (n * (n * n - 1.0)))

    return EffectMetrics(rrmse=rrmse, mape=mape, spearman_rho=spearman, flags=tuple(flags))
