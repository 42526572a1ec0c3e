"""Heterogeneous message-passing layers.

Micro-level graph convolutions (GCN / GAT / Sage / GIN) run on one subgraph
view; macro-level reducers (Mean / Max / Sum / Attention) fuse per-subgraph
outputs that share a destination type. Direct aggregation runs a single
convolution over the homogenized graph, optionally with the relation-aware
attention variant.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import (BatchNormState, IndexPlan, Parameter, SegmentIndex,
                     Tensor, TensorError)
from .transform import HomoGraph, Subgraph

GAT_LEAKY_SLOPE = 0.2
PRELU_INIT = 0.25

MICRO_KINDS = ("GCNConv", "GATConv", "SageConv", "GINConv")
MACRO_KINDS = ("Mean", "Max", "Sum", "Attention")
ATTENTION_FORMS = ("GAT", "SimpleHGN")
ACTIVATIONS = ("ReLU", "LeakyReLU", "ELU", "Tanh", "PReLU")
CONNECTIVITIES = ("STACK", "SKIP-SUM", "SKIP-CAT")


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# prepared edge sets
# ---------------------------------------------------------------------------

class EdgeSet:
    """Edges sorted by destination, with reusable gather/segment plans."""

    __slots__ = ("src", "dst", "weight", "n_src", "n_dst", "src_plan",
                 "dst_plan", "seg", "edge_type")

    def __init__(self, src, dst, weight, n_src, n_dst, edge_type=None):
        self.src = src
        self.dst = dst
        self.weight = np.asarray(weight, dtype=np.float64)
        self.n_src = int(n_src)
        self.n_dst = int(n_dst)
        self.src_plan = IndexPlan(src, n_src)
        self.dst_plan = IndexPlan(dst, n_dst)
        self.seg = SegmentIndex(dst, n_dst)
        self.edge_type = edge_type


class GraphView:
    """Lazy cache of the edge-set variants one subgraph can be consumed as."""

    def __init__(self, src, dst, weight, n_src, n_dst, same_type,
                 edge_type=None, n_edge_types=0):
        self._src = src
        self._dst = dst
        self._weight = weight
        self.n_src = int(n_src)
        self.n_dst = int(n_dst)
        self.same_type = bool(same_type)
        self._edge_type = edge_type
        self.n_edge_types = int(n_edge_types)
        self._cache = {}

    def weighted(self) -> EdgeSet:
        if "weighted" not in self._cache:
            self._cache["weighted"] = EdgeSet(
                self._src, self._dst, self._weight.astype(np.float64),
                self.n_src, self.n_dst, self._edge_type)
        return self._cache["weighted"]

    def binarized(self) -> EdgeSet:
        # attention treats parallel edges within a subgraph as one neighbor
        if "binary" not in self._cache:
            self._cache["binary"] = EdgeSet(
                self._src, self._dst, np.ones(self._src.shape[0]),
                self.n_src, self.n_dst, self._edge_type)
        return self._cache["binary"]

    def gcn_normalized(self) -> EdgeSet:
        """Count-weighted normalized edges; self-loops only on same-type views."""
        if "gcn" not in self._cache:
            w = self._weight.astype(np.float64)
            if self.same_type:
                loops = np.arange(self.n_dst, dtype=np.int64)
                src = np.concatenate([self._src, loops])
                dst = np.concatenate([self._dst, loops])
                w = np.concatenate([w, np.ones(self.n_dst)])
                din = np.bincount(dst, weights=w, minlength=self.n_dst)
                dout = np.bincount(src, weights=w, minlength=self.n_src)
                norm = w / np.sqrt(din[dst] * dout[src])
                order = np.argsort(dst, kind="stable")
                self._cache["gcn"] = EdgeSet(src[order], dst[order], norm[order],
                                             self.n_src, self.n_dst)
            else:
                din = np.bincount(self._dst, weights=w, minlength=self.n_dst)
                safe = np.where(din > 0, din, 1.0)
                norm = w / safe[self._dst]
                self._cache["gcn"] = EdgeSet(self._src, self._dst, norm,
                                             self.n_src, self.n_dst)
        return self._cache["gcn"]


def subgraph_view(sub: Subgraph) -> GraphView:
    if "view" not in sub.cache:
        adj = sub.adjacency
        sub.cache["view"] = GraphView(adj.indices, adj.expanded_rows(),
                                      adj.data, adj.n_cols, adj.n_rows,
                                      sub.same_type)
    return sub.cache["view"]


def homograph_view(hg: HomoGraph) -> GraphView:
    if "view" not in hg.cache:
        order = np.argsort(hg.edge_dst, kind="stable")
        hg.cache["view"] = GraphView(
            hg.edge_src[order], hg.edge_dst[order],
            hg.edge_weight[order].astype(np.float64),
            hg.n_nodes, hg.n_nodes, True,
            edge_type=hg.edge_type[order],
            n_edge_types=len(hg.relation_names))
    return hg.cache["view"]


# ---------------------------------------------------------------------------
# micro-level convolutions
# ---------------------------------------------------------------------------

class GCNConv:
    def __init__(self, in_dim, out_dim, rng, prefix):
        self.W = Parameter(glorot(rng, in_dim, out_dim), f"{prefix}.W")
        self.b = Parameter(np.zeros((1, out_dim)), f"{prefix}.b")

    def parameters(self):
        return [self.W, self.b]

    def __call__(self, view: GraphView, h_src, h_dst):
        es = view.gcn_normalized()
        msg = T.mul(T.gather_rows(h_src, es.src_plan), Tensor(es.weight[:, None]))
        agg = T.segment_sum(msg, es.seg)
        return T.add(T.matmul(agg, self.W), self.b)


class GATConv:
    """Single-head attention; `form='SimpleHGN'` adds per-relation terms."""

    def __init__(self, in_dim, out_dim, rng, prefix, form="GAT", n_edge_types=0):
        if form not in ATTENTION_FORMS:
            raise TensorError(f"unknown attention form '{form}'")
        self.form = form
        self.W = Parameter(glorot(rng, in_dim, out_dim), f"{prefix}.W")
        self.a_src = Parameter(glorot(rng, out_dim, 1), f"{prefix}.a_src")
        self.a_dst = Parameter(glorot(rng, out_dim, 1), f"{prefix}.a_dst")
        if form == "SimpleHGN":
            if n_edge_types < 1:
                raise TensorError("SimpleHGN attention needs edge types")
            self.W_r = Parameter(glorot(rng, out_dim, out_dim), f"{prefix}.W_r")
            self.r_emb = Parameter(
                rng.normal(0.0, 1.0 / np.sqrt(out_dim), size=(n_edge_types, out_dim)),
                f"{prefix}.r_emb")
            self.a_rel = Parameter(glorot(rng, out_dim, 1), f"{prefix}.a_rel")

    def parameters(self):
        ps = [self.W, self.a_src, self.a_dst]
        if self.form == "SimpleHGN":
            ps += [self.W_r, self.r_emb, self.a_rel]
        return ps

    def __call__(self, view: GraphView, h_src, h_dst):
        es = view.binarized()
        z_src = T.matmul(h_src, self.W)
        z_dst = z_src if h_dst is h_src else T.matmul(h_dst, self.W)
        s_src = T.matmul(z_src, self.a_src)
        s_dst = T.matmul(z_dst, self.a_dst)
        logits = T.add(T.gather_rows(s_dst, es.dst_plan),
                       T.gather_rows(s_src, es.src_plan))
        if self.form == "SimpleHGN":
            if es.edge_type is None:
                raise TensorError("SimpleHGN attention needs a typed edge view")
            s_rel = T.matmul(T.matmul(self.r_emb, self.W_r), self.a_rel)
            logits = T.add(logits, T.gather_rows(s_rel, es.edge_type))
        e = T.leaky_relu(logits, GAT_LEAKY_SLOPE)
        alpha = T.segment_softmax(e, es.seg)
        msg = T.mul(alpha, T.gather_rows(z_src, es.src_plan))
        return T.segment_sum(msg, es.seg)

    def attention_weights(self, view: GraphView, h_src, h_dst):
        """Per-edge softmax coefficients (diagnostics and tests)."""
        es = view.binarized()
        z_src = T.matmul(h_src, self.W)
        z_dst = z_src if h_dst is h_src else T.matmul(h_dst, self.W)
        logits = T.add(T.gather_rows(T.matmul(z_dst, self.a_dst), es.dst_plan),
                       T.gather_rows(T.matmul(z_src, self.a_src), es.src_plan))
        if self.form == "SimpleHGN":
            s_rel = T.matmul(T.matmul(self.r_emb, self.W_r), self.a_rel)
            logits = T.add(logits, T.gather_rows(s_rel, es.edge_type))
        e = T.leaky_relu(logits, GAT_LEAKY_SLOPE)
        return T.segment_softmax(e, es.seg), es


class SageConv:
    """Mean-aggregator GraphSAGE: neighbors averaged, concatenated with self."""

    def __init__(self, in_src, out_dim, rng, prefix, in_dst=None):
        in_dst = in_src if in_dst is None else in_dst
        self.W = Parameter(glorot(rng, in_dst + in_src, out_dim), f"{prefix}.W")
        self.b = Parameter(np.zeros((1, out_dim)), f"{prefix}.b")

    def parameters(self):
        return [self.W, self.b]

    def __call__(self, view: GraphView, h_src, h_dst):
        es = view.weighted()
        sums = T.segment_sum(
            T.mul(T.gather_rows(h_src, es.src_plan), Tensor(es.weight[:, None])),
            es.seg)
        denom = np.bincount(es.dst, weights=es.weight, minlength=es.n_dst)
        inv = np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), 0.0)
        mean = T.mul(sums, Tensor(inv[:, None]))
        return T.add(T.matmul(T.concat([h_dst, mean], axis=1), self.W), self.b)


class GINConv:
    """Sum aggregation with a learnable self weight and a 2-layer MLP."""

    def __init__(self, in_dim, out_dim, rng, prefix):
        self.eps = Parameter(np.zeros((1, 1)), f"{prefix}.eps")
        self.W1 = Parameter(glorot(rng, in_dim, out_dim), f"{prefix}.W1")
        self.b1 = Parameter(np.zeros((1, out_dim)), f"{prefix}.b1")
        self.W2 = Parameter(glorot(rng, out_dim, out_dim), f"{prefix}.W2")
        self.b2 = Parameter(np.zeros((1, out_dim)), f"{prefix}.b2")

    def parameters(self):
        return [self.eps, self.W1, self.b1, self.W2, self.b2]

    def __call__(self, view: GraphView, h_src, h_dst):
        es = view.weighted()
        sums = T.segment_sum(
            T.mul(T.gather_rows(h_src, es.src_plan), Tensor(es.weight[:, None])),
            es.seg)
        pre = T.add(T.mul(h_dst, T.add(self.eps, Tensor(1.0))), sums)
        hidden = T.relu(T.add(T.matmul(pre, self.W1), self.b1))
        return T.add(T.matmul(hidden, self.W2), self.b2)


def make_micro_conv(kind, in_dim, out_dim, rng, prefix, attention_form="GAT",
                    n_edge_types=0):
    if kind == "GCNConv":
        return GCNConv(in_dim, out_dim, rng, prefix)
    if kind == "GATConv":
        return GATConv(in_dim, out_dim, rng, prefix, form=attention_form,
                       n_edge_types=n_edge_types)
    if kind == "SageConv":
        return SageConv(in_dim, out_dim, rng, prefix)
    if kind == "GINConv":
        return GINConv(in_dim, out_dim, rng, prefix)
    raise TensorError(f"unknown micro convolution '{kind}'")


def _as_view(graph_like) -> GraphView:
    if isinstance(graph_like, GraphView):
        return graph_like
    if isinstance(graph_like, Subgraph):
        return subgraph_view(graph_like)
    if isinstance(graph_like, HomoGraph):
        return homograph_view(graph_like)
    raise TensorError(f"cannot message-pass over {type(graph_like).__name__}")


def micro_conv(conv, graph_like, h_src, h_dst):
    """Run one convolution over a subgraph or homogenized graph."""
    return conv(_as_view(graph_like), h_src, h_dst)


# ---------------------------------------------------------------------------
# macro-level aggregation
# ---------------------------------------------------------------------------

class MacroSum:
    kind = "Sum"

    def parameters(self):
        return []

    def __call__(self, zs):
        out = zs[0]
        for z in zs[1:]:
            out = T.add(out, z)
        return out


class MacroMean:
    kind = "Mean"

    def parameters(self):
        return []

    def __call__(self, zs):
        out = zs[0]
        for z in zs[1:]:
            out = T.add(out, z)
        return out if len(zs) == 1 else T.mul(out, Tensor(1.0 / len(zs)))


class MacroMax:
    kind = "Max"

    def parameters(self):
        return []

    def __call__(self, zs):
        out = zs[0]
        for z in zs[1:]:
            out = T.maximum(out, z)
        return out


class MacroAttention:
    """One softmax weight per subgraph for a destination type, shared by
    all of its nodes: score_k = mean_v q . tanh(W z_k[v] + b)."""

    kind = "Attention"

    def __init__(self, dim, rng, prefix):
        self.W = Parameter(glorot(rng, dim, dim), f"{prefix}.W")
        self.b = Parameter(np.zeros((1, dim)), f"{prefix}.b")
        self.q = Parameter(glorot(rng, dim, 1), f"{prefix}.q")

    def parameters(self):
        return [self.W, self.b, self.q]

    def __call__(self, zs):
        scores = [T.reshape(T.tmean(T.matmul(T.tanh(T.add(T.matmul(z, self.W),
                                                          self.b)), self.q)),
                            (1, 1))
                  for z in zs]
        weights = T.row_softmax(T.concat(scores, axis=1))
        out = None
        for k, z in enumerate(zs):
            part = T.mul(z, T.narrow(weights, 1, k, k + 1))
            out = part if out is None else T.add(out, part)
        return out


def make_macro(kind, dim, rng, prefix):
    if kind == "Sum":
        return MacroSum()
    if kind == "Mean":
        return MacroMean()
    if kind == "Max":
        return MacroMax()
    if kind == "Attention":
        return MacroAttention(dim, rng, prefix)
    raise TensorError(f"unknown macro aggregation '{kind}'")


def macro_aggregate(macro, per_subgraph_outputs):
    if not per_subgraph_outputs:
        raise TensorError("macro aggregation needs at least one subgraph output")
    widths = {z.shape[1] for z in per_subgraph_outputs}
    if len(widths) != 1:
        raise TensorError(f"macro aggregation over mixed widths {sorted(widths)}")
    return macro(per_subgraph_outputs)


def direct_aggregate(hg: HomoGraph, h, conv):
    """One convolution over the homogenized graph; relation-aware attention
    reads the preserved edge types from the view."""
    return micro_conv(conv, hg, h, h)


def dual_aggregate(subgraphs, convs, h_by_type, macros):
    """Micro-level convolution per subgraph, then macro-level fusion per
    destination type. Types receiving no subgraph are absent from the result
    (the caller's pass-through rule applies)."""
    outs = {}
    for sub, conv in zip(subgraphs, convs):
        z = micro_conv(conv, sub, h_by_type[sub.src_type],
                       h_by_type[sub.dst_type])
        outs.setdefault(sub.dst_type, []).append(z)
    return {t: macro_aggregate(macros[t], zs) for t, zs in outs.items()}


# ---------------------------------------------------------------------------
# heterogeneous linear transformation (the shared pre-process entry)
# ---------------------------------------------------------------------------

class HeteroLinear:
    """Type-specific projection into a shared space; featureless types get
    trainable embedding tables instead."""

    def __init__(self, type_specs, out_dim, rng, prefix="pre0"):
        # type_specs: ordered (name, in_dim, count)
        self.out_dim = out_dim
        self.weights = {}
        self.biases = {}
        self.embeddings = {}
        self.order = tuple(name for name, _, _ in type_specs)
        for name, in_dim, count in type_specs:
            if in_dim > 0:
                self.weights[name] = Parameter(glorot(rng, in_dim, out_dim),
                                               f"{prefix}.{name}.W")
                self.biases[name] = Parameter(np.zeros((1, out_dim)),
                                              f"{prefix}.{name}.b")
            else:
                self.embeddings[name] = Parameter(
                    rng.normal(0.0, 1.0 / np.sqrt(out_dim), size=(count, out_dim)),
                    f"{prefix}.{name}.emb")

    def parameters(self):
        ps = []
        for name in self.order:
            if name in self.weights:
                ps += [self.weights[name], self.biases[name]]
            else:
                ps.append(self.embeddings[name])
        return ps

    def __call__(self, features_by_type):
        out = {}
        for name in self.order:
            if name in self.weights:
                x = features_by_type.get(name)
                if x is None:
                    raise TensorError(f"missing features for type '{name}'")
                x = x if isinstance(x, Tensor) else Tensor(x)
                if x.shape[1] != self.weights[name].shape[0]:
                    raise TensorError(
                        f"type '{name}': feature width {x.shape[1]} does not match "
                        f"projection input {self.weights[name].shape[0]}")
                out[name] = T.add(T.matmul(x, self.weights[name]), self.biases[name])
            else:
                out[name] = self.embeddings[name]
        return out


class TypedLinearBlock:
    """Per-type linear + activation applied in the shared space (extra
    pre-process layers)."""

    def __init__(self, type_names, dim, rng, prefix, activation):
        self.order = tuple(type_names)
        self.weights = {n: Parameter(glorot(rng, dim, dim), f"{prefix}.{n}.W")
                        for n in self.order}
        self.biases = {n: Parameter(np.zeros((1, dim)), f"{prefix}.{n}.b")
                       for n in self.order}
        self.activation = activation

    def parameters(self):
        ps = []
        for n in self.order:
            ps += [self.weights[n], self.biases[n]]
        ps += self.activation.parameters()
        return ps

    def __call__(self, h_by_type):
        return {n: self.activation(T.add(T.matmul(h_by_type[n], self.weights[n]),
                                         self.biases[n]))
                for n in self.order}


# ---------------------------------------------------------------------------
# intra-layer post-processing and inter-layer connectivity
# ---------------------------------------------------------------------------

class Activation:
    def __init__(self, kind, prefix=None):
        if kind not in ACTIVATIONS:
            raise TensorError(f"unknown activation '{kind}'")
        self.kind = kind
        self.slope = (Parameter(np.full((1, 1), PRELU_INIT), f"{prefix}.prelu")
                      if kind == "PReLU" else None)

    def parameters(self):
        return [self.slope] if self.slope is not None else []

    def __call__(self, x):
        if self.kind == "ReLU":
            return T.relu(x)
        if self.kind == "LeakyReLU":
            return T.leaky_relu(x, GAT_LEAKY_SLOPE)
        if self.kind == "ELU":
            return T.elu(x)
        if self.kind == "Tanh":
            return T.tanh(x)
        return T.prelu(x, self.slope)


class BatchNorm:
    def __init__(self, dim, prefix):
        self.gamma = Parameter(np.ones((1, dim)), f"{prefix}.gamma")
        self.beta = Parameter(np.zeros((1, dim)), f"{prefix}.beta")
        self.state = BatchNormState(dim)

    def parameters(self):
        return [self.gamma, self.beta]

    def __call__(self, x, training):
        return T.batch_norm(x, self.gamma, self.beta, self.state, training)


def intra_layer_post(h, bn, dropout_p, activation, l2norm, training, rng=None):
    """Fixed order: BN, dropout, activation, L2 normalization; each optional."""
    if bn is not None:
        h = bn(h, training)
    if dropout_p:
        h = T.dropout(h, dropout_p, training, rng)
    if activation is not None:
        h = activation(h)
    if l2norm:
        h = T.l2_normalize(h, axis=1)
    return h


def connect(mode, h_prev, h_new):
    if mode == "STACK":
        return h_new
    if mode == "SKIP-SUM":
        if h_prev.shape[1] != h_new.shape[1]:
            raise TensorError(
                f"SKIP-SUM width mismatch: {h_prev.shape[1]} vs {h_new.shape[1]}")
        return T.add(h_prev, h_new)
    if mode == "SKIP-CAT":
        return T.concat([h_prev, h_new], axis=1)
    raise TensorError(f"unknown connectivity '{mode}'")
