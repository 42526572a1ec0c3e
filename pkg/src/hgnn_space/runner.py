"""Experiment orchestration: plan parsing, parallel trial execution and
append-only result persistence.

A plan expands to configs x splits independent trials. Progress is appended
line-by-line to `<out>.partial` (crash-safe, carries wall times); the
finalized file is rewritten sorted by trial id with volatile timing dropped,
so reruns are byte-identical regardless of parallelism.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import designspace as ds
from .hgraph import GraphError, load_graph
from .model import DesignConfig, metapaths_from_text, metapaths_to_text
from .train import Task, TrialRecord, make_splits, train_trial

RESULTS_FORMAT = "hgnn-space-results/1"
THREADS_ENV = "HGNN_SPACE_THREADS"


@dataclass(frozen=True)
class ExperimentPlan:
    graph: str
    task: str
    target: str
    space: str = "condensed"        # full | condensed | path to a config list
    n: int = 264
    strata_hits: int = 2
    splits: int = 3
    seed: int = 0
    metapaths: tuple = ()
    parallelism: int = 1
    out: str = "results.ndrec"
    epoch_override: int | None = None  # desk-scale cap on training epochs
    num_classes: int | None = None


_PLAN_KEYS = {"graph", "task", "target", "space", "n", "strata_hits", "splits",
              "seed", "metapaths", "parallelism", "out", "epoch_override",
              "num_classes"}
_INT_KEYS = {"n", "strata_hits", "splits", "seed", "parallelism",
             "epoch_override", "num_classes"}


def parse_plan(path) -> ExperimentPlan:
    """Flat key = value text; lists are comma-separated, meta-paths are
    `name:rel,rel` chunks joined by `;`."""
    values = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise GraphError(f"{path}:{ln}: expected key = value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _PLAN_KEYS:
                raise GraphError(f"{path}:{ln}: unknown plan key '{key}'")
            values[key] = int(val) if key in _INT_KEYS else val
    if "metapaths" in values:
        values["metapaths"] = metapaths_from_text(values["metapaths"])
    missing = {"graph", "task", "target"} - set(values)
    if missing:
        raise GraphError(f"plan is missing keys: {sorted(missing)}")
    return ExperimentPlan(**values)


def plan_canonical_text(plan: ExperimentPlan) -> str:
    d = {
        "graph": plan.graph, "task": plan.task, "target": plan.target,
        "space": plan.space, "n": plan.n, "strata_hits": plan.strata_hits,
        "splits": plan.splits, "seed": plan.seed,
        "metapaths": metapaths_to_text(plan.metapaths),
        "out": plan.out, "epoch_override": plan.epoch_override,
        "num_classes": plan.num_classes,
    }
    # parallelism intentionally excluded: it must not change the results
    return "\n".join(f"{k}={d[k]}" for k in sorted(d))


def plan_hash(plan: ExperimentPlan) -> str:
    return hashlib.sha256(plan_canonical_text(plan).encode()).hexdigest()[:16]


def load_config_list(path) -> list:
    with open(path) as fh:
        items = json.load(fh)
    return [DesignConfig.from_flat(d) for d in items]


def save_config_list(configs, path):
    with open(path, "w") as fh:
        json.dump([c.to_flat() for c in configs], fh, indent=1, sort_keys=True)
        fh.write("\n")


def expand_plan(plan: ExperimentPlan):
    """Resolve the plan into (graph, task, splits, configs)."""
    graph = load_graph(plan.graph)
    if plan.task == "node_classification":
        labels = graph.labels.get(plan.target)
        if labels is None:
            raise GraphError(f"graph has no labels for target '{plan.target}'")
        num_classes = plan.num_classes or int(labels.max()) + 1
        task = Task("node_classification", plan.target, num_classes=num_classes)
    elif plan.task == "link_prediction":
        graph.relation(plan.target)
        task = Task("link_prediction", plan.target)
    else:
        raise GraphError(f"unknown task '{plan.task}'")

    if plan.space in ("full", "condensed"):
        space = ds.full_space() if plan.space == "full" else ds.condensed_space()
        strata = ds.default_strata(space, plan.strata_hits, dataset=plan.graph)
        configs = ds.sample_controlled(space, plan.n, strata, plan.seed,
                                       metapaths=plan.metapaths)
    else:
        configs = load_config_list(plan.space)

    resolved = []
    for i, cfg in enumerate(configs):
        extra = {"task": plan.task}
        if cfg.model_family == "Metapath" and not cfg.metapaths:
            extra["metapaths"] = plan.metapaths
        cfg = cfg.with_values(**extra)
        problems = ds.validate(cfg, graph)
        if problems:
            raise GraphError(f"config {i} is invalid: " + "; ".join(problems))
        resolved.append(cfg)
    splits = make_splits(task, graph, n_splits=plan.splits, seed=plan.seed)
    return graph, task, splits, resolved


def _record_to_json(record: TrialRecord, with_wall_time: bool) -> str:
    d = {
        "trial_id": record.trial_id,
        "config": record.config,
        "seed": record.seed,
        "split_id": record.split_id,
        "status": record.status,
        "best_score": record.best_score,
        "metric": record.metric,
        "history": record.history,
        "format_version": record.format_version,
    }
    if with_wall_time:
        d["wall_time"] = record.wall_time
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def run_trial_by_id(plan: ExperimentPlan, trial_id: int) -> TrialRecord:
    """Recompute a single trial in isolation; depends only on (plan, id)."""
    graph, task, splits, configs = expand_plan(plan)
    return _run_one(plan, graph, task, splits, configs, trial_id)


def _run_one(plan, graph, task, splits, configs, trial_id) -> TrialRecord:
    cfg = configs[trial_id // len(splits)]
    split = splits[trial_id % len(splits)]
    record = train_trial(cfg, graph, split, task, max_epochs=plan.epoch_override)
    record.trial_id = trial_id
    return record


def _read_partial(path, expect_hash):
    """Recover completed records; a corrupt line only loses that one trial."""
    done = {}
    if not os.path.exists(path):
        return done
    with open(path) as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError:
            return {}
        if header.get("plan_hash") != expect_hash:
            raise GraphError(
                f"partial results at '{path}' come from a different plan "
                f"(hash {header.get('plan_hash')} != {expect_hash})")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                done[int(d["trial_id"])] = line
            except (json.JSONDecodeError, KeyError, ValueError):
                continue  # truncated trailing line: rerun that trial
    return done


def run_plan(plan: ExperimentPlan, parallelism: int | None = None,
             resume: bool = False) -> str:
    """Execute every trial of the plan and write the finalized results file."""
    if parallelism is None:
        parallelism = int(os.environ.get(THREADS_ENV, plan.parallelism))
    parallelism = max(1, parallelism)

    graph, task, splits, configs = expand_plan(plan)
    n_trials = len(configs) * len(splits)
    h = plan_hash(plan)
    partial_path = plan.out + ".partial"

    done = _read_partial(partial_path, h) if resume else {}
    pending = [i for i in range(n_trials) if i not in done]

    mode = "a" if (resume and done) else "w"
    lock = threading.Lock()
    with open(partial_path, mode) as partial:
        if mode == "w":
            partial.write(json.dumps({"format": RESULTS_FORMAT, "plan_hash": h},
                                     sort_keys=True, separators=(",", ":")) + "\n")
            partial.flush()

        def work(trial_id):
            record = _run_one(plan, graph, task, splits, configs, trial_id)
            line = _record_to_json(record, with_wall_time=True)
            with lock:
                partial.write(line + "\n")
                partial.flush()
            return trial_id, line

        if parallelism == 1:
            results = dict(work(i) for i in pending)
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                results = dict(pool.map(work, pending))

    done.update(results)
    missing = [i for i in range(n_trials) if i not in done]
    if missing:
        raise GraphError(f"trials did not complete: {missing}")

    with open(plan.out, "w") as out:
        out.write(json.dumps({"format": RESULTS_FORMAT, "plan_hash": h},
                             sort_keys=True, separators=(",", ":")) + "\n")
        for i in range(n_trials):
            d = json.loads(done[i])
            d.pop("wall_time", None)
            out.write(json.dumps(d, sort_keys=True, separators=(",", ":")) + "\n")
    return plan.out


def read_results(path) -> list:
    """Records from a results file (finalized or partial), header checked."""
    records = []
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != RESULTS_FORMAT:
            raise GraphError(f"'{path}' is not a results file")
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
