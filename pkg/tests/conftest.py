import numpy as np
import pytest

from hgnn_space.hgraph import build_graph


@pytest.fixture
def academic_graph():
    """Three node types, four relations (both directions of two links)."""
    node_types = [("P", 3, 0), ("A", 2, 0), ("C", 2, 0)]
    relations = [
        ("written", "A", "P"),
        ("written-by", "P", "A"),
        ("published", "P", "C"),
        ("publishes", "C", "P"),
    ]
    ap = np.array([[0, 0], [0, 1], [1, 1], [1, 2]])
    edge_lists = {
        "written": ap,
        "written-by": ap[:, ::-1],
        "published": np.array([[0, 0], [1, 0], [2, 1]]),
        "publishes": np.array([[0, 0], [0, 1], [1, 2]]),
    }
    return build_graph(node_types, relations, edge_lists)


def random_hetero_graph(rng, max_types=4, max_nodes=12, max_relations=5,
                        edge_prob=0.25, feature_dim=0):
    """Small random typed graph for oracle comparisons."""
    n_types = int(rng.integers(1, max_types + 1))
    node_types = [(f"t{i}", int(rng.integers(1, max_nodes + 1)), feature_dim)
                  for i in range(n_types)]
    n_rel = int(rng.integers(1, max_relations + 1))
    relations = []
    edge_lists = {}
    for k in range(n_rel):
        src = f"t{int(rng.integers(0, n_types))}"
        dst = f"t{int(rng.integers(0, n_types))}"
        name = f"r{k}"
        relations.append((name, src, dst))
        n_src = dict((n, c) for n, c, _ in node_types)[src]
        n_dst = dict((n, c) for n, c, _ in node_types)[dst]
        mask = rng.random((n_src, n_dst)) < edge_prob
        s, d = np.nonzero(mask)
        edge_lists[name] = np.stack([s, d], axis=1)
    features = None
    if feature_dim:
        features = {n: rng.standard_normal((c, feature_dim))
                    for n, c, _ in node_types}
    return build_graph(node_types, relations, edge_lists, features)
