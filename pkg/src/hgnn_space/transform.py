"""Graph transformations: relation extraction, meta-path composition,
homogenization, mixed extraction and homophily analysis.

A meta-path subgraph's adjacency is the product of its relations' adjacency
matrices; entries count meta-path instances between node pairs. With rows
indexing destinations the chain r1..rl multiplies in reverse:
A_path = A_rl @ ... @ A_r1, rows = rl's destinations, cols = r1's sources.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hgraph import GraphError, HeteroGraph
from .sparse import CSRMatrix, freeze


@dataclass(frozen=True)
class MetaPath:
    name: str
    relations: tuple

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(self.relations))
        if len(self.relations) < 1:
            raise GraphError(f"meta-path '{self.name}' must have at least one relation")


@dataclass(eq=False)
class Subgraph:
    """One adjacency with typed endpoints; origin is 'relation' or 'metapath'."""

    origin: str
    name: str
    src_type: str
    dst_type: str
    adjacency: CSRMatrix
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def same_type(self) -> bool:
        return self.src_type == self.dst_type


class HomoGraph:
    """Fused single-node-set view of a heterogeneous graph.

    Node ids are global (per-type offsets); edges are stored in relation
    blocks so an edge's relation is an offset lookup. Type maps survive.
    """

    def __init__(self, type_names, counts, relation_names, edge_src, edge_dst,
                 edge_weight, edge_type, block_bounds):
        self.type_names = tuple(type_names)
        self.counts = tuple(int(c) for c in counts)
        self.offsets = {}
        base = 0
        for name, count in zip(self.type_names, self.counts):
            self.offsets[name] = base
            base += count
        self.n_nodes = base
        self.relation_names = tuple(relation_names)
        self.edge_src = edge_src
        self.edge_dst = edge_dst
        self.edge_weight = edge_weight
        self.edge_type = edge_type
        self.block_bounds = tuple(block_bounds)
        self.node_type_of = np.repeat(np.arange(len(self.type_names)),
                                      np.asarray(self.counts, dtype=np.int64))
        self.cache = {}

    @property
    def n_edges(self) -> int:
        return int(self.edge_src.shape[0])

    def global_id(self, type_name: str, local_id: int) -> int:
        return self.offsets[type_name] + int(local_id)

    def local_of(self, global_id: int):
        ti = int(self.node_type_of[global_id])
        name = self.type_names[ti]
        return name, int(global_id) - self.offsets[name]

    def edge_relation(self, edge_index: int) -> str:
        for k, (s, e) in enumerate(self.block_bounds):
            if s <= edge_index < e:
                return self.relation_names[k]
        raise GraphError(f"edge index {edge_index} out of range")

    def adjacency(self) -> CSRMatrix:
        """Global CSR with weights summed over coinciding typed edges."""
        if "csr" not in self.cache:
            self.cache["csr"] = CSRMatrix.from_edges(
                self.edge_dst, self.edge_src, self.n_nodes, self.n_nodes,
                data=self.edge_weight)
        return self.cache["csr"]


def extract_relation_subgraphs(g: HeteroGraph, relation_names) -> list:
    subs = []
    for name in relation_names:
        r = g.relation(name)
        subs.append(Subgraph("relation", name, r.src_type, r.dst_type,
                             g.adjacency[name]))
    return subs


def compose_metapath(g: HeteroGraph, mp: MetaPath) -> Subgraph:
    rels = [g.relation(name) for name in mp.relations]
    for a, b in zip(rels, rels[1:]):
        if a.dst_type != b.src_type:
            raise GraphError(
                f"meta-path '{mp.name}' does not chain: '{a.name}' ends at "
                f"'{a.dst_type}' but '{b.name}' starts at '{b.src_type}'")
    product = g.adjacency[rels[0].name]
    for r in rels[1:]:
        product = g.adjacency[r.name] @ product
    return Subgraph("metapath", mp.name, rels[0].src_type, rels[-1].dst_type,
                    freeze(product))


def extract_mixed(g: HeteroGraph, relation_names, metapaths) -> list:
    subs = extract_relation_subgraphs(g, relation_names)
    subs.extend(compose_metapath(g, mp) for mp in metapaths)
    return subs


def homogenize(g: HeteroGraph) -> HomoGraph:
    type_names = g.type_names
    counts = [t.count for t in g.node_types]
    offsets = {}
    base = 0
    for name, count in zip(type_names, counts):
        offsets[name] = base
        base += count

    src_parts, dst_parts, w_parts, t_parts, bounds = [], [], [], [], []
    pos = 0
    for k, r in enumerate(g.relations):
        adj = g.adjacency[r.name]
        dst = adj.expanded_rows() + offsets[r.dst_type]
        src = adj.indices + offsets[r.src_type]
        src_parts.append(src)
        dst_parts.append(dst)
        w_parts.append(adj.data)
        t_parts.append(np.full(adj.nnz, k, dtype=np.int64))
        bounds.append((pos, pos + adj.nnz))
        pos += adj.nnz

    if src_parts:
        edge_src = np.concatenate(src_parts)
        edge_dst = np.concatenate(dst_parts)
        edge_weight = np.concatenate(w_parts)
        edge_type = np.concatenate(t_parts)
    else:
        edge_src = np.empty(0, dtype=np.int64)
        edge_dst = np.empty(0, dtype=np.int64)
        edge_weight = np.empty(0, dtype=np.int64)
        edge_type = np.empty(0, dtype=np.int64)

    return HomoGraph(type_names, counts, g.relation_names, edge_src, edge_dst,
                     edge_weight, edge_type, bounds)


def homophily(sub: Subgraph, labels: np.ndarray) -> float:
    """Average same-label neighbor fraction over nodes with any neighbor.

    The adjacency is binarized (an entry >= 1 marks a neighbor). Isolated
    nodes are skipped: including them would divide zero by zero.
    """
    if sub.src_type != sub.dst_type:
        raise GraphError(
            f"homophily needs matching endpoint types, got "
            f"'{sub.src_type}' -> '{sub.dst_type}'")
    labels = np.asarray(labels)
    n = sub.adjacency.n_rows
    if labels.shape[0] != n:
        raise GraphError(f"labels cover {labels.shape[0]} nodes, expected {n}")
    # neighbors of v are the rows u with A[u, v] >= 1, i.e. column v
    adj_t = sub.cache.get("transpose")
    if adj_t is None:
        adj_t = sub.cache["transpose"] = sub.adjacency.transpose()
    total = 0.0
    seen = 0
    for v in range(n):
        s, e = adj_t.indptr[v], adj_t.indptr[v + 1]
        if s == e:
            continue
        nbr = adj_t.indices[s:e]
        total += float(np.mean(labels[nbr] == labels[v]))
        seen += 1
    if seen == 0:
        return 0.0
    return total / seen
