"""Tasks, splits, optimizers, metrics and the single-trial training loop.

A trial is full-graph training of one configuration on one split. Trials
are self-contained and deterministic given (config seed, split seed); a
diverging trial is recorded as failed, never raised.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .hgraph import GraphError, HeteroGraph, build_graph
from .model import DesignConfig, build_model, score_links
from .tensor import Tensor

RECORD_FORMAT = "1"

TRAIN_NEG_PER_POS = 1   # negatives per positive in the link-prediction loss
EVAL_NEG_PER_POS = 50   # negatives per positive in ranking (MRR) groups


@dataclass(frozen=True)
class Task:
    kind: str                      # node_classification | link_prediction
    target: str                    # node type (NC) or relation name (LP)
    num_classes: int = 0
    neg_per_pos: int = TRAIN_NEG_PER_POS


@dataclass(frozen=True)
class Split:
    split_id: int
    seed: int
    train: np.ndarray  # node ids (NC) or (k, 2) positive pairs (LP)
    val: np.ndarray


@dataclass
class TrialRecord:
    config: dict
    seed: int
    split_id: int
    status: str                    # ok | failed
    best_score: float | None
    metric: str
    history: dict
    wall_time: float
    format_version: str = RECORD_FORMAT
    trial_id: int = -1


# ---------------------------------------------------------------------------
# splits and negative sampling
# ---------------------------------------------------------------------------

def make_splits(task: Task, graph: HeteroGraph, n_splits: int = 3,
                seed: int = 0) -> list:
    """Random 80/20 train/validation splits, deterministic per (seed, id)."""
    splits = []
    if task.kind == "node_classification":
        labels = graph.labels.get(task.target)
        if labels is None:
            raise GraphError(f"no labels for target type '{task.target}'")
        pool = np.flatnonzero(labels >= 0)
        classes, counts = np.unique(labels[pool], return_counts=True)
        if pool.size == 0 or counts.min() < 5:
            raise GraphError("too few labeled nodes: need at least 5 per class")
        for i in range(n_splits):
            rng = np.random.default_rng([seed, i, 17])
            perm = pool[rng.permutation(pool.size)]
            cut = max(1, int(round(pool.size * 0.8)))
            cut = min(cut, pool.size - 1)
            splits.append(Split(i, int(np.random.SeedSequence([seed, i]).generate_state(1)[0]),
                                np.sort(perm[:cut]), np.sort(perm[cut:])))
    elif task.kind == "link_prediction":
        adj = graph.adjacency.get(task.target)
        if adj is None:
            raise GraphError(f"unknown target relation '{task.target}'")
        pairs = np.stack([adj.indices, adj.expanded_rows()], axis=1)  # (src, dst)
        if pairs.shape[0] < 5:
            raise GraphError("too few positive edges to split")
        for i in range(n_splits):
            rng = np.random.default_rng([seed, i, 17])
            perm = rng.permutation(pairs.shape[0])
            cut = max(1, int(round(pairs.shape[0] * 0.8)))
            cut = min(cut, pairs.shape[0] - 1)
            splits.append(Split(i, int(np.random.SeedSequence([seed, i]).generate_state(1)[0]),
                                pairs[np.sort(perm[:cut])], pairs[np.sort(perm[cut:])]))
    else:
        raise GraphError(f"unknown task kind '{task.kind}'")
    return splits


def graph_without_edges(graph: HeteroGraph, relation: str, pairs) -> HeteroGraph:
    """Copy of the graph with the given (src, dst) cells of one relation removed;
    keeps validation positives out of the message-passing adjacency."""
    pairs = np.asarray(pairs, dtype=np.int64)
    drop = {(int(s), int(d)) for s, d in pairs}
    edge_lists = {}
    for r in graph.relations:
        adj = graph.adjacency[r.name]
        src, dst, cnt = adj.indices, adj.expanded_rows(), adj.data
        if r.name == relation and drop:
            keep = np.array([(int(s), int(d)) not in drop for s, d in zip(src, dst)])
            src, dst, cnt = src[keep], dst[keep], cnt[keep]
        edge_lists[r.name] = np.stack([src, dst, cnt], axis=1)
    return build_graph(graph.node_types, graph.relations, edge_lists,
                       graph.features, graph.labels)


def negative_sample(graph: HeteroGraph, relation: str, positives, k: int, seed):
    """Corrupt destinations of the positive pairs, avoiding every observed
    edge of the relation; deterministic given the seed."""
    if k < 1:
        raise GraphError("need at least one negative per positive")
    adj = graph.adjacency.get(relation)
    if adj is None:
        raise GraphError(f"unknown relation '{relation}'")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    positives = np.asarray(positives, dtype=np.int64)
    n_dst = adj.n_rows  # rows are destinations
    tadj = adj.transpose()  # row s of the transpose = observed destinations of s
    taken = {}
    out = np.empty((positives.shape[0] * k, 2), dtype=np.int64)
    pos = 0
    for s, _ in positives:
        s = int(s)
        if s not in taken:
            lo, hi = tadj.indptr[s], tadj.indptr[s + 1]
            taken[s] = frozenset(int(x) for x in tadj.indices[lo:hi])
        blocked = taken[s]
        if len(blocked) >= n_dst:
            raise GraphError(f"relation '{relation}' is saturated for source {s}: "
                             f"no negative destinations exist")
        for _ in range(k):
            d = int(rng.integers(0, n_dst))
            while d in blocked:
                d = int(rng.integers(0, n_dst))
            out[pos] = (s, d)
            pos += 1
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _confusion(preds, labels, num_classes):
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.size == 0:
        raise GraphError("empty metric input")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def macro_f1(preds, labels, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over all declared classes."""
    cm = _confusion(preds, labels, num_classes)
    f1s = []
    for c in range(num_classes):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(f1s))


def micro_f1(preds, labels, num_classes: int) -> float:
    cm = _confusion(preds, labels, num_classes)
    return float(np.trace(cm) / cm.sum())


def roc_auc(scores, labels) -> float:
    """Rank-statistic AUC with midpoint tie handling."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise GraphError("empty metric input")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise GraphError("roc_auc needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midpoint of tied ranks
        i = j + 1
    r_pos = ranks[np.asarray(labels) == 1].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mrr(pos_scores, neg_scores) -> float:
    """Mean reciprocal rank; each row pairs one positive with its negatives.

    Ties rank the positive after equal-scored negatives (pessimistic)."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    if pos_scores.size == 0:
        raise GraphError("empty metric input")
    if neg_scores.shape[0] != pos_scores.shape[0]:
        raise GraphError("each positive needs its own negative group")
    ranks = 1 + (neg_scores >= pos_scores[:, None]).sum(axis=1)
    return float(np.mean(1.0 / ranks))


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class SGD:
    kind = "SGD"

    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class Adam:
    kind = "Adam"

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.slots = {p.name: (np.zeros_like(p.data), np.zeros_like(p.data))
                      for p in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        # non-finite gradients propagate into the parameters on purpose: the
        # trial loop detects them and records the run as failed
        with np.errstate(invalid="ignore", over="ignore"):
            for p in self.params:
                if p.grad is None:
                    continue
                m, v = self.slots[p.name]
                m *= b1
                m += (1 - b1) * p.grad
                v *= b2
                v += (1 - b2) * p.grad ** 2
                mhat = m / (1 - b1 ** self.t)
                vhat = v / (1 - b2 ** self.t)
                p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def make_optimizer(kind, params, lr):
    if kind == "Adam":
        return Adam(params, lr)
    if kind == "SGD":
        return SGD(params, lr)
    raise GraphError(f"unknown optimizer '{kind}'")


# ---------------------------------------------------------------------------
# losses and evaluation
# ---------------------------------------------------------------------------

def cross_entropy(logits, label_ids):
    probs = T.row_softmax(logits)
    picked = T.take_per_row(probs, label_ids)
    return -T.tmean(T.log(picked))


def binary_cross_entropy(pos_scores, neg_scores):
    # scores live in (0, 1); a diverging run surfaces as a non-finite loss
    loss_pos = T.log(pos_scores)
    loss_neg = T.log(T.sub(Tensor(1.0), neg_scores))
    return -T.tmean(T.concat([loss_pos, loss_neg], axis=0))


def _nc_eval(model, graph, task, split):
    logits = model.predict_logits(graph, training=False)
    preds = np.argmax(logits.data[split.val], axis=1)
    return macro_f1(preds, graph.labels[task.target][split.val], task.num_classes)


def _lp_eval(model, graph, msg_graph, task, split, val_negs):
    rel = graph.relation(task.target)
    h = model.forward(msg_graph, training=False)
    pos = score_links(h[rel.src_type], h[rel.dst_type],
                      split.val[:, 0], split.val[:, 1]).data[:, 0]
    neg = score_links(h[rel.src_type], h[rel.dst_type],
                      val_negs[:, 0], val_negs[:, 1]).data[:, 0]
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    return roc_auc(scores, labels)


def eval_mrr(model, graph, msg_graph, task, split, seed=0,
             neg_per_pos: int = EVAL_NEG_PER_POS):
    """Ranking evaluation: each validation positive against sampled negatives."""
    rel = graph.relation(task.target)
    negs = negative_sample(graph, task.target, split.val, neg_per_pos,
                           np.random.default_rng([split.seed, 23, seed]))
    h = model.forward(msg_graph, training=False)
    pos = score_links(h[rel.src_type], h[rel.dst_type],
                      split.val[:, 0], split.val[:, 1]).data[:, 0]
    neg = score_links(h[rel.src_type], h[rel.dst_type],
                      negs[:, 0], negs[:, 1]).data[:, 0]
    return mrr(pos, neg.reshape(split.val.shape[0], neg_per_pos))


# ---------------------------------------------------------------------------
# the trial loop
# ---------------------------------------------------------------------------

def train_trial(cfg: DesignConfig, graph: HeteroGraph, split: Split, task: Task,
                max_epochs: int | None = None) -> TrialRecord:
    """Full-graph training of one config on one split.

    Validation runs before training (epoch 0) and after every epoch; the
    best validation score wins. Non-finite losses or scores mark the trial
    failed and stop it without raising.
    """
    from .designspace import validate

    started = time.perf_counter()
    problems = validate(cfg, graph)
    if problems:
        raise GraphError("invalid config: " + "; ".join(problems))

    if task.kind == "link_prediction":
        msg_graph = graph_without_edges(graph, task.target, split.val)
        val_negs = negative_sample(graph, task.target, split.val, 1,
                                   np.random.default_rng([split.seed, 19]))
        metric_name = "roc_auc"
    else:
        msg_graph = graph
        val_negs = None
        metric_name = "macro_f1"

    model = build_model(cfg, msg_graph, num_classes=task.num_classes,
                        target_type=task.target if task.kind == "node_classification" else None)
    params = model.parameters()
    opt = make_optimizer(cfg.optimizer, params, cfg.lr)

    def evaluate():
        if task.kind == "node_classification":
            return _nc_eval(model, msg_graph, task, split)
        return _lp_eval(model, graph, msg_graph, task, split, val_negs)

    losses, scores = [], []
    status = "ok"
    score0 = evaluate()
    if not np.isfinite(score0):
        status = "failed"
    scores.append(float(score0))

    n_epochs = cfg.epochs if max_epochs is None else min(cfg.epochs, max_epochs)
    labels = graph.labels.get(task.target) if task.kind == "node_classification" else None
    rel = graph.relation(task.target) if task.kind == "link_prediction" else None

    for epoch in range(n_epochs):
        if status == "failed":
            break
        drop_rng = np.random.default_rng([cfg.seed, split.seed, epoch, 11])
        if task.kind == "node_classification":
            logits = model.predict_logits(msg_graph, training=True, rng=drop_rng)
            train_logits = T.gather_rows(logits, split.train)
            loss = cross_entropy(train_logits, labels[split.train])
        else:
            negs = negative_sample(graph, task.target, split.train, task.neg_per_pos,
                                   np.random.default_rng([cfg.seed, split.seed, epoch, 13]))
            h = model.forward(msg_graph, training=True, rng=drop_rng)
            pos_s = score_links(h[rel.src_type], h[rel.dst_type],
                                split.train[:, 0], split.train[:, 1])
            neg_s = score_links(h[rel.src_type], h[rel.dst_type],
                                negs[:, 0], negs[:, 1])
            loss = binary_cross_entropy(pos_s, neg_s)

        loss_val = float(loss.data)
        losses.append(loss_val)
        if not np.isfinite(loss_val):
            status = "failed"
            break
        opt.zero_grad()
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            # a diverging step may overflow; the finite checks below catch it
            loss.backward()
            opt.step()
        if not all(np.isfinite(p.data).all() for p in params):
            status = "failed"
            break
        score = evaluate()
        if not np.isfinite(score):
            status = "failed"
            break
        scores.append(float(score))

    finite = [s for s in scores if np.isfinite(s)]
    best = max(finite) if status == "ok" and finite else None
    return TrialRecord(
        config=cfg.to_flat(),
        seed=cfg.seed,
        split_id=split.split_id,
        status=status,
        best_score=best,
        metric=metric_name,
        history={"train_loss": losses, "val_score": scores},
        wall_time=time.perf_counter() - started,
    )
