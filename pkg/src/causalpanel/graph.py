"""Layered causal DAGs over a marketing panel's variables.

A graph holds one outcome node (the conversion series) plus any number of
channel nodes.  Nodes carry a layer index: the outcome sits at layer 0 and
every edge points from a strictly higher layer to a strictly lower one, so
layer-validity alone rules out cycles.  Edges are weighted; on a ground-truth
graph the weight is the structural coefficient, on a discovered graph it is
the signed test statistic of the dominant lag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

SCHEMA_VERSION = 1


class GraphError(Exception):
    """Raised for structurally invalid graphs or unknown node references."""


@dataclass(frozen=True)
class Node:
    """A panel variable: ``index`` is its dense id, ``layer`` its depth level."""

    index: int
    name: str
    layer: int
    is_outcome: bool = False


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    weight: float


@dataclass(frozen=True)
class Verdict:
    """Outcome of :meth:`CausalDag.validate`: ``ok`` plus the first violation found."""

    ok: bool
    code: str | None = None
    offenders: tuple = ()

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class CausalDag:
    """Immutable weighted DAG with dense node indices ``0..n_nodes-1``."""

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    # ------------------------------------------------------------------ basics
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def outcome(self) -> Node:
        for node in self.nodes:
            if node.is_outcome:
                return node
        raise GraphError("graph has no outcome node")

    @property
    def channels(self) -> tuple[Node, ...]:
        return tuple(node for node in self.nodes if not node.is_outcome)

    def node(self, index: int) -> Node:
        if not 0 <= index < len(self.nodes):
            raise GraphError(f"unknown node index {index}")
        return self.nodes[index]

    def parents_of(self, index: int) -> tuple[int, ...]:
        self.node(index)
        return tuple(sorted(e.src for e in self.edges if e.dst == index))

    def children_of(self, index: int) -> tuple[int, ...]:
        self.node(index)
        return tuple(sorted(e.dst for e in self.edges if e.src == index))

    def edge_set(self) -> set[tuple[int, int]]:
        return {(e.src, e.dst) for e in self.edges}

    def weight_of(self, src: int, dst: int) -> float:
        for e in self.edges:
            if e.src == src and e.dst == dst:
                return e.weight
        raise GraphError(f"no edge {src}->{dst}")

    def adjacency(self) -> "np.ndarray":
        """Dense weight matrix W with W[src, dst] = weight (0 where no edge)."""
        import numpy as np

        W = np.zeros((self.n_nodes, self.n_nodes))
        for e in self.edges:
            W[e.src, e.dst] = e.weight
        return W

    # -------------------------------------------------------------- validation
    def validate(self, *, require_reachable: bool = True) -> Verdict:
        """Check structural invariants, reporting the first violation.

        Checks run in a fixed order: node indexing, outcome uniqueness and
        placement, edge endpoints, self-loops, weights, layer monotonicity,
        acyclicity, and (for ground-truth graphs) outcome reachability.
        Discovered graphs may contain channels with no path to the outcome;
        pass ``require_reachable=False`` for those.
        """
        n = len(self.nodes)
        if sorted(node.index for node in self.nodes) != list(range(n)):
            return Verdict(False, "BadNodeIndices", tuple(node.index for node in self.nodes))
        outcomes = [node for node in self.nodes if node.is_outcome]
        if len(outcomes) != 1:
            return Verdict(False, "OutcomeCountNotOne", tuple(node.index for node in outcomes))
        outcome = outcomes[0]
        if outcome.layer != 0:
            return Verdict(False, "OutcomeLayerNonzero", (outcome.index,))
        for node in self.nodes:
            if node.layer < 0 or (not node.is_outcome and node.layer < 1):
                return Verdict(False, "BadLayer", (node.index,))
        for e in self.edges:
            if not (0 <= e.src < n and 0 <= e.dst < n):
                return Verdict(False, "UnknownEndpoint", (e.src, e.dst))
            if e.src == e.dst:
                return Verdict(False, "SelfLoop", (e.src,))
            if e.weight == 0 or not _finite(e.weight):
                return Verdict(False, "BadWeight", (e.src, e.dst))
        if len({(e.src, e.dst) for e in self.edges}) != len(self.edges):
            return Verdict(False, "DuplicateEdge", ())
        for e in self.edges:
            if e.src == outcome.index:
                return Verdict(False, "OutcomeNotSink", (e.src, e.dst))
            if self.nodes[e.src].layer <= self.nodes[e.dst].layer:
                return Verdict(False, "LayerViolation", (e.src, e.dst))
        # Layer monotonicity already precludes cycles, but check directly so
        # graphs built with degenerate layers still get an honest verdict.
        try:
            topological_order(self)
        except GraphError:
            return Verdict(False, "CycleDetected", ())
        if require_reachable:
            can_reach = {outcome.index}
            changed = True
            while changed:
                changed = False
                for e in self.edges:
                    if e.dst in can_reach and e.src not in can_reach:
                        can_reach.add(e.src)
                        changed = True
            stranded = tuple(sorted(node.index for node in self.nodes if node.index not in can_reach))
            if stranded:
                return Verdict(False, "UnreachableOutcome", stranded)
        return Verdict(True)

    # ------------------------------------------------------------------ export
    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "nodes": [
                {"index": n.index, "name": n.name, "is_outcome": n.is_outcome, "layer": n.layer}
                for n in self.nodes
            ],
            "edges": [{"src": e.src, "dst": e.dst, "weight": e.weight} for e in self.edges],
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_json_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json_dict(cls, payload: Mapping) -> "CausalDag":
        try:
            nodes = tuple(
                Node(index=int(n["index"]), name=str(n["name"]), layer=int(n["layer"]),
                     is_outcome=bool(n["is_outcome"]))
                for n in payload["nodes"]
            )
            edges = tuple(
                Edge(src=int(e["src"]), dst=int(e["dst"]), weight=float(e["weight"]))
                for e in payload["edges"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed graph payload: {exc}") from exc
        nodes = tuple(sorted(nodes, key=lambda n: n.index))
        return cls(nodes=nodes, edges=edges)

    @classmethod
    def from_json(cls, path: str | Path) -> "CausalDag":
        return cls.from_json_dict(json.loads(Path(path).read_text()))

    def to_dot(self) -> str:
        """GraphViz source; edges are coloured green/red by weight sign."""
        lines = ["digraph causal {", "  rankdir=TB;"]
        for n in self.nodes:
            shape = "doublecircle" if n.is_outcome else "ellipse"
            lines.append(f'  n{n.index} [label="{n.name}", shape={shape}];')
        for e in self.edges:
            color = "green" if e.weight >= 0 else "red"
            lines.append(f'  n{e.src} -> n{e.dst} [label="{e.weight:.3f}", color={color}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _finite(x: float) -> bool:
    return x == x and x not in (float("inf"), float("-inf"))


def topological_order(dag: CausalDag) -> list[int]:
    """Kahn's algorithm with lowest-index-first tie-breaking (deterministic)."""
    import heapq

    n = dag.n_nodes
    indeg = [0] * n
    children: list[list[int]] = [[] for _ in range(n)]
    for e in dag.edges:
        if not (0 <= e.src < n and 0 <= e.dst < n):
            raise GraphError(f"edge endpoint out of range: {e.src}->{e.dst}")
        indeg[e.dst] += 1
        children[e.src].append(e.dst)
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        u = heapq.heappop(ready)
        order.append(u)
        for v in children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, v)
    if len(order) != n:
        raise GraphError("graph contains a cycle")
    return order


def descendants(dag: CausalDag, index: int) -> set[int]:
    """Strict descendants of ``index`` (the node itself is excluded)."""
    dag.node(index)
    seen: set[int] = set()
    stack = [index]
    while stack:
        u = stack.pop()
        for e in dag.edges:
            if e.src == u and e.dst not in seen:
                seen.add(e.dst)
                stack.append(e.dst)
    return seen


def ancestors(dag: CausalDag, index: int) -> set[int]:
    """Strict ancestors of ``index``."""
    dag.node(index)
    seen: set[int] = set()
    stack = [index]
    while stack:
        u = stack.pop()
        for e in dag.edges:
            if e.dst == u and e.src not in seen:
                seen.add(e.src)
                stack.append(e.src)
    return seen


def derive_layers(n_nodes: int, edges: Iterable[tuple[int, int]], outcome: int) -> dict[int, int]:
    """Assign layers to an acyclic edge set so every edge is higher -> lower.

    The outcome gets layer 0.  Every other node gets ``1 + max`` layer of its
    children, or layer 1 when it has no children, i.e. the longest directed
    path down to a sink.  This always yields strictly decreasing layers along
    edges because outcome nodes have no outgoing edges.
    """
    children: dict[int, list[int]] = {i: [] for i in range(n_nodes)}
    for src, dst in edges:
        children[src].append(dst)

    import heapq

    ready = [i for i in range(n_nodes) if not children[i]]
    # longest path to a sink, computed over the reversed graph
    layer = {}
    rev: dict[int, list[int]] = {i: [] for i in range(n_nodes)}
    outdeg = {i: len(children[i]) for i in range(n_nodes)}
    for src, dst in edges:
        rev[dst].append(src)
    heapq.heapify(ready)
    resolved = 0
    while ready:
        u = heapq.heappop(ready)
        resolved += 1
        if not children[u]:
            layer[u] = 0 if u == outcome else 1
        else:
            layer[u] = 1 + max(layer[v] for v in children[u])
        for p in rev[u]:
            outdeg[p] -= 1
            if outdeg[p] == 0:
                heapq.heappush(ready, p)
    if resolved != n_nodes:
        raise GraphError("cannot derive layers: edge set contains a cycle")
    return layer
