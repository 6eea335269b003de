"""Two-stage lagged causal discovery over a panel, plus summary collapse.

Stage 1 (condition selection) starts from every lagged candidate
(variable, lag) per target and iteratively removes candidates that test
conditionally independent of the target given some subset of the remaining
candidates, for growing subset sizes.  Stage 2 (momentary conditional
independence) tests every ordered (source, target, lag) cell conditioning
on the selected parents of the target and, by default, the time-shifted
selected parents of the source.  Retained links are thresholded on
Benjamini-Hochberg adjusted p-values by default, since a dense lag grid
tests hundreds of cells per panel.

The lagged link set is finally collapsed to a summary DAG: dominant lag
per ordered pair, bidirectional pruning by statistic magnitude, cycle
resolution protecting edges into the outcome, and removal of
outcome-sourced edges.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.linalg import solve_triangular

from causalpanel.graph import CausalDag, Edge, Node, derive_layers
from causalpanel.panel import Panel
from causalpanel.parcorr import InsufficientSamplesError, ParCorrResult, RankDeficientError, result_from_moments

SCHEMA_VERSION = 1


class DiscoveryError(Exception):
    pass


@dataclass(frozen=True)
class PcmciConfig:
    """Knobs of the two-stage discovery procedure.

    ``condition_on_source_parents`` selects the full momentary test
    (condition on parents of both endpoints); switching it off conditions
    on the target's parents only.  ``fdr_correction`` applies
    Benjamini-Hochberg adjustment across all tested cells before links are
    thresholded at ``alpha_mci``.
    """

    tau_min: int = 1
    tau_max: int = 45
    alpha_pc: float = 0.2
    alpha_mci: float = 0.05
    max_subset_size: int = 3
    max_parents: int | None = None
    condition_on_time: bool = True
    condition_on_source_parents: bool = True
    fdr_correction: bool = True

    def validate(self) -> None:
        if not 0 <= self.tau_min <= self.tau_max:
            raise DiscoveryError(f"need 0 <= tau_min <= tau_max, got [{self.tau_min}, {self.tau_max}]")
        for name in ("alpha_pc", "alpha_mci"):
            a = getattr(self, name)
            if not 0.0 < a < 1.0:
                raise DiscoveryError(f"{name} must lie in (0, 1), got {a}")
        if self.max_subset_size < 0:
            raise DiscoveryError("max_subset_size must be >= 0")
        if self.max_parents is not None and self.max_parents < 0:
            raise DiscoveryError("max_parents must be >= 0 when set")

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
            "alpha_pc": self.alpha_pc,
            "alpha_mci": self.alpha_mci,
            "max_subset_size": self.max_subset_size,
            "max_parents": self.max_parents,
            "condition_on_time": self.condition_on_time,
            "condition_on_source_parents": self.condition_on_source_parents,
            "fdr_correction": self.fdr_correction,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "PcmciConfig":
        known = set(cls.__dataclass_fields__)
        kwargs = {k: v for k, v in payload.items() if k != "schema_version"}
        unknown = set(kwargs) - known
        if unknown:
            raise DiscoveryError(f"unknown discovery config fields: {sorted(unknown)}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class LaggedLink:
    """Significant directed lagged dependence source_{t-lag} -> target_t."""

    source: int
    target: int
    lag: int
    statistic: float  # signed partial correlation
    p_value: float


@dataclass(frozen=True)
class LaggedLinkSet:
    """Dense test results: matrices indexed [source, target, lag - tau_min]."""

    links: tuple[LaggedLink, ...]
    score_matrix: np.ndarray      # absolute partial correlation
    signed_matrix: np.ndarray     # signed partial correlation
    pvalue_matrix: np.ndarray     # raw p-values
    qvalue_matrix: np.ndarray     # adjusted p-values (equals raw when correction off)
    tau_min: int
    tau_max: int
    node_names: tuple[str, ...]

    @property
    def n_vars(self) -> int:
        return len(self.node_names)

    @property
    def lags(self) -> range:
        return range(self.tau_min, self.tau_max + 1)

    def pair_scores(self) -> np.ndarray:
        """(d, d) confidence per ordered pair: max over lags of |statistic|."""
        return self.score_matrix.max(axis=2)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for src in range(self.n_vars):
            for dst in range(self.n_vars):
                for li, lag in enumerate(self.lags):
                    if src == dst and lag == 0:
                        continue
                    rows.append(
                        {
                            "source": self.node_names[src],
                            "target": self.node_names[dst],
                            "lag": lag,
                            "statistic": self.signed_matrix[src, dst, li],
                            "p_value": self.pvalue_matrix[src, dst, li],
                        }
                    )
        return pd.DataFrame(rows, columns=["source", "target", "lag", "statistic", "p_value"])

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")


def _lag_slice(values: np.ndarray, var: int, lag: int, window: int) -> np.ndarray:
    """Samples of ``var`` at offset ``lag``, aligned to a common window."""
    T = values.shape[0]
    stop = T - lag
    return values[window - lag : stop, var]


class _LaggedDesign:
    """All lagged series over one sample window, with a precomputed Gram matrix.

    Every test both stages run is a partial correlation among lagged copies
    of the panel columns, always controlling for an intercept (and the time
    index when configured).  Residualizing the whole lagged design against
    that base once reduces each test to a Schur complement of the Gram
    matrix — the same projection as regressing on [1, time, Z] directly,
    but without per-test least squares.
    """

    def __init__(self, values: np.ndarray, time_index: np.ndarray, window: int, condition_on_time: bool):
        T, d = values.shape
        if T <= window:
            raise InsufficientSamplesError(f"panel too short for a lag window of {window}: T={T}")
        self.window = window
        self.n = T - window
        self.n_lags = window + 1
        cols = np.empty((self.n, d * self.n_lags))
        for var in range(d):
            for lag in range(self.n_lags):
                cols[:, var * self.n_lags + lag] = _lag_slice(values, var, lag, window)
        base = [np.ones(self.n)]
        if condition_on_time:
            base.append(time_index[window:].astype(float))
        design = np.column_stack(base)
        coef, *_ = np.linalg.lstsq(design, cols, rcond=None)
        resid = cols - design @ coef
        self.gram = resid.T @ resid
        self.base_size = design.shape[1] - 1  # intercept is free; time counts toward dof
        self._tol = 1e-12 * max(float(self.gram.diagonal().max()), 1.0)

    def column(self, var: int, lag: int) -> int:
        return var * self.n_lags + lag

    def test(self, x: tuple[int, int], y: tuple[int, int], conds: Sequence[tuple[int, int]]) -> ParCorrResult:
        """ParCorr test between lagged variables given lagged conditions."""
        xi = self.column(*x)
        yi = self.column(*y)
        k = len(conds)
        dof = self.n - 2 - self.base_size - k
        if dof < 1:
            raise InsufficientSamplesError(f"need n > |Z| + 2, got n={self.n}, |Z|={self.base_size + k}")
        g = self.gram
        if k:
            S = np.fromiter((self.column(*c) for c in conds), dtype=int, count=k)
            gss = g[np.ix_(S, S)]
            if np.any(gss.diagonal() <= self._tol):
                raise RankDeficientError("conditioning set contains a constant column")
            try:
                L = np.linalg.cholesky(gss)
            except np.linalg.LinAlgError as exc:
                raise RankDeficientError("conditioning set is rank deficient") from exc
            zx = solve_triangular(L, g[S, xi], lower=True)
            zy = solve_triangular(L, g[S, yi], lower=True)
            sxx = g[xi, xi] - zx @ zx
            syy = g[yi, yi] - zy @ zy
            sxy = g[xi, yi] - zx @ zy
        else:
            sxx, syy, sxy = g[xi, xi], g[yi, yi], g[xi, yi]
        if sxx <= self._tol or syy <= self._tol:
            return ParCorrResult(partial_correlation=0.0, statistic=0.0, p_value=1.0, dof=dof)
        return result_from_moments(sxy, sxx, syy, dof)

    def batch_tests(
        self, x: tuple[int, int], y: tuple[int, int], subsets: Sequence[Sequence[tuple[int, int]]]
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Partial correlations of x and y given each conditioning subset.

        All subsets must share one cardinality k.  Returns (r, p, valid)
        arrays over the subsets, in order; ``valid`` is False for subsets
        whose Gram block is singular (the sequential path would skip them).
        Results match :meth:`test` to rounding error.
        """
        C = len(subsets)
        k = len(subsets[0]) if C else 0
        dof = self.n - 2 - self.base_size - k
        if dof < 1:
            raise InsufficientSamplesError(f"need n > |Z| + 2, got n={self.n}, |Z|={self.base_size + k}")
        xi = self.column(*x)
        yi = self.column(*y)
        g = self.gram
        gxx, gyy, gxy = g[xi, xi], g[yi, yi], g[xi, yi]
        valid = np.ones(C, dtype=bool)
        if k == 0:
            sxx = np.full(C, gxx)
            syy = np.full(C, gyy)
            sxy = np.full(C, gxy)
        else:
            S = np.array([[self.column(*c) for c in subset] for subset in subsets], dtype=int)
            gss = g[S[:, :, None], S[:, None, :]]
            gsx = g[S, xi]
            gsy = g[S, yi]
            valid = ~np.any(gss[:, np.arange(k), np.arange(k)] <= self._tol, axis=1)
            wx = np.zeros_like(gsx)
            wy = np.zeros_like(gsy)
            if np.any(valid):
                try:
                    rhs = np.stack([gsx[valid], gsy[valid]], axis=-1)
                    sol = np.linalg.solve(gss[valid], rhs)
                    wx[valid] = sol[..., 0]
                    wy[valid] = sol[..., 1]
                except np.linalg.LinAlgError:
                    # Singular block slipped past the diagonal guard: fall
                    # back to one solve per subset, skipping the bad ones.
                    for row in np.flatnonzero(valid):
                        try:
                            sol = np.linalg.solve(gss[row], np.stack([gsx[row], gsy[row]], axis=-1))
                            wx[row], wy[row] = sol[..., 0], sol[..., 1]
                        except np.linalg.LinAlgError:
                            valid[row] = False
            sxx = gxx - np.einsum("ck,ck->c", gsx, wx)
            syy = gyy - np.einsum("ck,ck->c", gsy, wy)
            sxy = gxy - np.einsum("ck,ck->c", gsx, wy)
        degenerate = (sxx <= self._tol) | (syy <= self._tol)
        r = np.zeros(C)
        ok = valid & ~degenerate
        with np.errstate(invalid="ignore"):
            r[ok] = np.clip(sxy[ok] / np.sqrt(sxx[ok] * syy[ok]), -1.0, 1.0)
        p = np.ones(C)
        denom = 1.0 - r * r
        saturated = ok & (denom <= 0.0)
        p[saturated] = 0.0
        finite = ok & (denom > 0.0)
        if np.any(finite):
            t_stat = r[finite] * np.sqrt(dof / denom[finite])
            p[finite] = 2.0 * stats.t.sf(np.abs(t_stat), dof)
        return r, p, valid


def pc1_select(panel: Panel, cfg: PcmciConfig) -> dict[int, list[tuple[int, int]]]:
    """Stage-1 parent candidate selection for every variable.

    Returns, per target, the surviving (variable, lag) candidates sorted
    strongest first.  Candidates are removed (PC-stable, at round end) as
    soon as some conditioning subset of size k among the other remaining
    candidates yields p > alpha_pc; within a round, candidates are tested
    in descending order of their weakest statistic from earlier rounds.
    """
    cfg.validate()
    T = panel.n_steps
    if T <= cfg.tau_max + cfg.max_subset_size + 3:
        raise InsufficientSamplesError(
            f"panel too short: need T > tau_max + max_subset_size + 3 = {cfg.tau_max + cfg.max_subset_size + 3}, got {T}"
        )
    design = _LaggedDesign(panel.values(), panel.index, cfg.tau_max, cfg.condition_on_time)
    d = panel.values().shape[1]

    parents: dict[int, list[tuple[int, int]]] = {}
    for target in range(d):
        candidates = [
            (var, lag)
            for var in range(d)
            for lag in range(cfg.tau_min, cfg.tau_max + 1)
            if not (var == target and lag == 0)
        ]
        strength = {c: np.inf for c in candidates}

        for k in range(cfg.max_subset_size + 1):
            if len(candidates) - 1 < k:
                break
            ordered = sorted(candidates, key=lambda c: (-strength[c], c))
            removed: set[tuple[int, int]] = set()
            for cand in ordered:
                others = [c for c in ordered if c != cand]
                subsets = list(itertools.combinations(others, k))
                r, p, valid = design.batch_tests(cand, (target, 0), subsets)
                # Sequential semantics: stop at the first (non-skipped)
                # independent subset; strength reflects only tested subsets.
                rejecting = np.flatnonzero(valid & (p > cfg.alpha_pc))
                stop = rejecting[0] + 1 if rejecting.size else len(subsets)
                seen = valid[:stop]
                if np.any(seen):
                    strength[cand] = min(strength[cand], float(np.abs(r[:stop])[seen].min()))
                if rejecting.size:
                    removed.add(cand)
            if removed:
                candidates = [c for c in ordered if c not in removed]

        final = sorted(candidates, key=lambda c: (-strength[c], c))
        if cfg.max_parents is not None:
            final = final[: cfg.max_parents]
        parents[target] = final
    return parents


def _bh_adjust(pvals: np.ndarray) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values (monotone step-up)."""
    m = pvals.shape[0]
    order = np.argsort(pvals, kind="stable")
    adjusted = np.empty(m)
    running = 1.0
    for rank in range(m - 1, -1, -1):
        value = pvals[order[rank]] * m / (rank + 1)
        running = min(running, value)
        adjusted[order[rank]] = running
    return adjusted


def mci_test(panel: Panel, parents: dict[int, list[tuple[int, int]]], cfg: PcmciConfig) -> LaggedLinkSet:
    """Stage-2 momentary tests for every (source, target, lag) cell.

    Conditions on the target's selected parents (minus the tested source)
    and, in the full variant, the source's selected parents shifted by the
    tested lag.  All tests share one sample window so statistics are
    comparable across cells; untested diagonal cells (source == target at
    lag 0) keep statistic 0 and p-value 1.
    """
    cfg.validate()
    d = panel.values().shape[1]
    n_lags = cfg.tau_max - cfg.tau_min + 1
    window = 2 * cfg.tau_max if cfg.condition_on_source_parents else cfg.tau_max
    design = _LaggedDesign(panel.values(), panel.index, window, cfg.condition_on_time)

    signed = np.zeros((d, d, n_lags))
    pvals = np.ones((d, d, n_lags))
    tested = np.zeros((d, d, n_lags), dtype=bool)

    for target in range(d):
        base = parents.get(target, [])
        for source in range(d):
            source_parents = parents.get(source, [])
            for li, lag in enumerate(range(cfg.tau_min, cfg.tau_max + 1)):
                if source == target and lag == 0:
                    continue
                conds: list[tuple[int, int]] = []
                seen: set[tuple[int, int]] = set()
                shifted: list[tuple[int, int]] = list(base)
                if cfg.condition_on_source_parents:
                    shifted += [(pv, pl + lag) for pv, pl in source_parents]
                for cond in shifted:
                    if cond in seen or cond == (source, lag) or cond == (target, 0):
                        continue
                    seen.add(cond)
                    conds.append(cond)
                try:
                    res = design.test((source, lag), (target, 0), conds)
                except (RankDeficientError, InsufficientSamplesError):
                    continue
                signed[source, target, li] = res.partial_correlation
                pvals[source, target, li] = res.p_value
                tested[source, target, li] = True

    qvals = np.ones((d, d, n_lags))
    if cfg.fdr_correction:
        flat = pvals[tested]
        if flat.size:
            qvals[tested] = _bh_adjust(flat)
    else:
        qvals[tested] = pvals[tested]

    links = []
    for source in range(d):
        for target in range(d):
            for li, lag in enumerate(range(cfg.tau_min, cfg.tau_max + 1)):
                if tested[source, target, li] and qvals[source, target, li] <= cfg.alpha_mci:
                    links.append(
                        LaggedLink(
                            source=source,
                            target=target,
                            lag=lag,
                            statistic=float(signed[source, target, li]),
                            p_value=float(pvals[source, target, li]),
                        )
                    )

    return LaggedLinkSet(
        links=tuple(links),
        score_matrix=np.abs(signed),
        signed_matrix=signed,
        pvalue_matrix=pvals,
        qvalue_matrix=qvals,
        tau_min=cfg.tau_min,
        tau_max=cfg.tau_max,
        node_names=tuple(panel.node_names()),
    )


def _find_cycle(n: int, edges: dict[tuple[int, int], LaggedLink]) -> list[tuple[int, int]] | None:
    """Return the edge list of some directed cycle, or None."""
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    for src, dst in edges:
        children[src].append(dst)
    for i in children:
        children[i].sort()
    color = {i: 0 for i in range(n)}  # 0 unvisited, 1 on stack, 2 done
    stack: list[int] = []

    def visit(u: int) -> list[tuple[int, int]] | None:
        color[u] = 1
        stack.append(u)
        for v in children[u]:
            if color[v] == 0:
                found = visit(v)
                if found is not None:
                    return found
            elif color[v] == 1:
                start = stack.index(v)
                path = stack[start:] + [v]
                return [(path[t], path[t + 1]) for t in range(len(path) - 1)]
        stack.pop()
        color[u] = 2
        return None

    for root in range(n):
        if color[root] == 0:
            found = visit(root)
            if found is not None:
                return found
    return None


def collapse_to_summary(links: LaggedLinkSet, outcome: int) -> CausalDag:
    """Collapse significant lagged links into a summary DAG.

    Per ordered pair the significant lag with the largest |statistic| wins
    (smaller lag on ties) and its signed statistic becomes the edge weight.
    When both directions survive, the larger |statistic| is kept; exact
    ties keep the edge pointing into the outcome, or failing that the
    lexicographically smaller (src, dst).  Remaining cycles are broken by
    repeatedly deleting the weakest cycle edge not pointing into the
    outcome, and outcome-sourced edges are dropped last.  Self-links never
    enter the summary.
    """
    d = links.n_vars
    if not 0 <= outcome < d:
        raise DiscoveryError(f"outcome index {outcome} out of range for {d} variables")

    best: dict[tuple[int, int], LaggedLink] = {}
    for link in links.links:
        if link.source == link.target:
            continue
        key = (link.source, link.target)
        cur = best.get(key)
        if cur is None or abs(link.statistic) > abs(cur.statistic) or (
            abs(link.statistic) == abs(cur.statistic) and link.lag < cur.lag
        ):
            best[key] = link

    for src, dst in sorted(best):
        if (src, dst) not in best or (dst, src) not in best:
            continue
        fwd, rev = best[(src, dst)], best[(dst, src)]
        if abs(fwd.statistic) > abs(rev.statistic):
            loser = (dst, src)
        elif abs(rev.statistic) > abs(fwd.statistic):
            loser = (src, dst)
        elif dst == outcome:
            loser = (dst, src)
        elif src == outcome:
            loser = (src, dst)
        else:
            loser = (dst, src)  # exact tie away from the outcome: keep smaller (src, dst)
        del best[loser]

    while True:
        cycle = _find_cycle(d, best)
        if cycle is None:
            break
        removable = [(s, t) for s, t in cycle if t != outcome]
        if not removable:  # cannot occur for simple cycles, but never deadlock
            removable = list(cycle)
        victim = min(removable, key=lambda key: (abs(best[key].statistic), key))
        del best[victim]

    best = {key: link for key, link in best.items() if key[0] != outcome}

    layers = derive_layers(d, list(best), outcome)
    nodes = tuple(
        Node(index=i, name=links.node_names[i], layer=layers[i], is_outcome=(i == outcome))
        for i in range(d)
    )
    edges = tuple(
        Edge(src=src, dst=dst, weight=best[(src, dst)].statistic)
        for src, dst in sorted(best)
    )
    return CausalDag(nodes=nodes, edges=edges)


def discover(panel: Panel, cfg: PcmciConfig) -> tuple[CausalDag, LaggedLinkSet]:
    """Full discovery: condition selection, momentary tests, summary collapse."""
    parents = pc1_select(panel, cfg)
    links = mci_test(panel, parents, cfg)
    dag = collapse_to_summary(links, panel.outcome_index)
    return dag, links
