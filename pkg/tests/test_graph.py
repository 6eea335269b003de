"""Graph core: validation verdicts, traversal, layers, serialization."""

import json

import numpy as np
import pytest

from causalpanel.graph import (
    CausalDag,
    Edge,
    GraphError,
    Node,
    ancestors,
    derive_layers,
    descendants,
    topological_order,
)


def two_layer_dag() -> CausalDag:
    nodes = (
        Node(0, "channel_1_impression", layer=1),
        Node(1, "channel_2_impression", layer=2),
        Node(2, "conversion", layer=0, is_outcome=True),
    )
    edges = (Edge(1, 0, 0.4), Edge(0, 2, 0.02), Edge(1, 2, -0.01))
    return CausalDag(nodes=nodes, edges=edges)


def test_valid_dag_passes_validation():
    verdict = two_layer_dag().validate()
    assert bool(verdict)
    assert verdict.code is None


def test_accessors():
    dag = two_layer_dag()
    assert dag.n_nodes == 3
    assert dag.outcome.index == 2
    assert [n.index for n in dag.channels] == [0, 1]
    assert dag.parents_of(2) == (0, 1)
    assert dag.parents_of(0) == (1,)
    assert dag.children_of(1) == (0, 2)
    assert dag.edge_set() == {(1, 0), (0, 2), (1, 2)}
    assert dag.weight_of(0, 2) == pytest.approx(0.02)
    adj = dag.adjacency()
    assert adj.shape == (3, 3)
    assert adj[1, 0] == pytest.approx(0.4)
    assert adj[0, 1] == 0.0


@pytest.mark.parametrize(
    "nodes, edges, code",
    [
        # duplicated node index
        (
            (Node(0, "a", 1), Node(0, "b", 1), Node(2, "conversion", 0, is_outcome=True)),
            (),
            "BadNodeIndices",
        ),
        # no outcome at all
        ((Node(0, "a", 1), Node(1, "b", 1)), (), "OutcomeCountNotOne"),
        # outcome off layer zero
        ((Node(0, "a", 1), Node(1, "conversion", 3, is_outcome=True)), (), "OutcomeLayerNonzero"),
        # channel on the outcome layer
        ((Node(0, "a", 0), Node(1, "conversion", 0, is_outcome=True)), (), "BadLayer"),
        # edge referencing a missing node
        (
            (Node(0, "a", 1), Node(1, "conversion", 0, is_outcome=True)),
            (Edge(0, 5, 0.1),),
            "UnknownEndpoint",
        ),
        # self loop
        (
            (Node(0, "a", 1), Node(1, "conversion", 0, is_outcome=True)),
            (Edge(0, 0, 0.1),),
            "SelfLoop",
        ),
        # zero weight
        (
            (Node(0, "a", 1), Node(1, "conversion", 0, is_outcome=True)),
            (Edge(0, 1, 0.0),),
            "BadWeight",
        ),
        # same ordered pair twice
        (
            (Node(0, "a", 1), Node(1, "conversion", 0, is_outcome=True)),
            (Edge(0, 1, 0.1), Edge(0, 1, 0.2)),
            "DuplicateEdge",
        ),
        # outcome with an outgoing edge
        (
            (Node(0, "a", 1), Node(1, "conversion", 0, is_outcome=True)),
            (Edge(1, 0, 0.1),),
            "OutcomeNotSink",
        ),
        # edge within one layer
        (
            (Node(0, "a", 1), Node(1, "b", 1), Node(2, "conversion", 0, is_outcome=True)),
            (Edge(0, 1, 0.1), Edge(0, 2, 0.1), Edge(1, 2, 0.1)),
            "LayerViolation",
        ),
    ],
)
def test_validation_verdicts(nodes, edges, code):
    verdict = CausalDag(nodes=nodes, edges=edges).validate()
    assert not verdict
    assert verdict.code == code


def test_unreachable_channel_flagged_only_when_required():
    nodes = (
        Node(0, "a", 2),
        Node(1, "b", 1),
        Node(2, "conversion", 0, is_outcome=True),
    )
    dag = CausalDag(nodes=nodes, edges=(Edge(1, 2, 0.1),))
    strict = dag.validate()
    assert not strict and strict.code == "UnreachableOutcome"
    assert 0 in strict.offenders
    assert bool(dag.validate(require_reachable=False))


def test_topological_order_and_reachability():
    dag = two_layer_dag()
    order = topological_order(dag)
    pos = {v: i for i, v in enumerate(order)}
    for e in dag.edges:
        assert pos[e.src] < pos[e.dst]
    assert descendants(dag, 1) == {0, 2}
    assert descendants(dag, 2) == set()
    assert ancestors(dag, 2) == {0, 1}
    assert ancestors(dag, 1) == set()


def test_topological_order_rejects_cycle():
    nodes = (Node(0, "a", 1), Node(1, "b", 2), Node(2, "conversion", 0, is_outcome=True))
    cyclic = CausalDag(nodes=nodes, edges=(Edge(0, 1, 0.1), Edge(1, 0, 0.1)))
    with pytest.raises(GraphError):
        topological_order(cyclic)
    assert cyclic.validate().code in ("LayerViolation", "CycleDetected")


def test_derive_layers_longest_path():
    # chain 3 -> 1 -> 0 -> 2 plus shortcut 3 -> 0; outcome 2
    layers = derive_layers(4, [(3, 1), (1, 0), (0, 2), (3, 0)], outcome=2)
    assert layers == {2: 0, 0: 1, 1: 2, 3: 3}
    # node with no path to the outcome still gets a positive layer
    layers = derive_layers(3, [(0, 2)], outcome=2)
    assert layers[2] == 0 and layers[0] == 1 and layers[1] >= 1


def test_json_round_trip(tmp_path):
    dag = two_layer_dag()
    payload = json.loads(dag.to_json())
    assert payload["schema_version"] == 1
    clone = CausalDag.from_json_dict(payload)
    assert clone == dag

    path = tmp_path / "dag.json"
    dag.to_json(path)
    assert CausalDag.from_json(path) == dag


def test_from_json_dict_rejects_garbage():
    with pytest.raises(GraphError):
        CausalDag.from_json_dict({"schema_version": 1, "nodes": "nope"})
    with pytest.raises(GraphError):
        CausalDag.from_json_dict({"nodes": [{"index": 0}], "edges": []})


def test_dot_output_colors_by_sign():
    dot = two_layer_dag().to_dot()
    assert dot.startswith("digraph")
    assert "doublecircle" in dot  # outcome shape
    assert dot.count("->") == 3
    assert "green" in dot and "red" in dot


def test_random_round_trips_and_orders():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(2, 7))
        perm = rng.permutation(n)
        # simple layered construction: position in perm = layer rank
        nodes = [Node(int(perm[-1]), "conversion", 0, is_outcome=True)]
        for depth_rank, idx in enumerate(perm[:-1]):
            nodes.append(Node(int(idx), f"channel_{int(idx) + 1}_impression", int(depth_rank) + 1))
        nodes.sort(key=lambda nd: nd.index)
        edges = []
        for i in range(n):
            for j in range(n):
                li, lj = nodes[i].layer, nodes[j].layer
                if li > lj and rng.random() < 0.5:
                    edges.append(Edge(i, j, float(rng.uniform(0.1, 1.0))))
        dag = CausalDag(nodes=tuple(nodes), edges=tuple(edges))
        assert bool(dag.validate(require_reachable=False))
        assert CausalDag.from_json_dict(json.loads(dag.to_json())) == dag
        order = topological_order(dag)
        pos = {v: i for i, v in enumerate(order)}
        assert all(pos[e.src] < pos[e.dst] for e in dag.edges)
