import json
import os

import pytest

from hgnn_space.hgraph import GraphError, SyntheticSpec, generate_synthetic, save_graph
from hgnn_space.model import DesignConfig
from hgnn_space.runner import (ExperimentPlan, parse_plan, plan_hash,
                               read_results, run_plan, run_trial_by_id,
                               save_config_list)


def make_bundle(tmp_path, seed=0):
    spec = SyntheticSpec(
        node_types=(("P", 40, 8), ("A", 20, 8)),
        relations=(("ap", "A", "P", 90), ("pa", "P", "A", 90)),
        target_type="P", num_communities=4, boost=0.9, noise=0.05, seed=seed)
    return save_graph(generate_synthetic(spec), tmp_path / "bundle")


def small_configs():
    return [
        DesignConfig(model_family="Relation", micro_conv="GCNConv",
                     macro_agg="Sum", hidden_dim=16, mp_layers=1,
                     epochs=100, seed=3),
        DesignConfig(model_family="Homogenization", micro_conv="SageConv",
                     macro_agg=None, hidden_dim=16, mp_layers=1,
                     epochs=100, seed=4),
    ]


def make_plan(tmp_path, **kw):
    bundle = make_bundle(tmp_path)
    cfg_path = tmp_path / "configs.json"
    save_config_list(small_configs(), cfg_path)
    defaults = dict(graph=str(bundle), task="node_classification", target="P",
                    space=str(cfg_path), splits=2, seed=7,
                    out=str(tmp_path / "results.ndrec"), epoch_override=2)
    defaults.update(kw)
    return ExperimentPlan(**defaults)


# ---------------------------------------------------------------------------
# plan parsing
# ---------------------------------------------------------------------------

def test_parse_plan_round_trip(tmp_path):
    p = tmp_path / "plan.cfg"
    p.write_text(
        "# demo plan\n"
        "graph = g/bundle\n"
        "task = node_classification\n"
        "target = P\n"
        "space = condensed\n"
        "n = 24\n"
        "strata_hits = 2\n"
        "splits = 3\n"
        "seed = 9\n"
        "metapaths = PAP:pa,ap;PAPAP:pa,ap,pa,ap\n"
        "parallelism = 2\n"
        "out = r.ndrec\n")
    plan = parse_plan(p)
    assert plan.graph == "g/bundle"
    assert plan.n == 24 and plan.splits == 3 and plan.seed == 9
    assert plan.metapaths == (("PAP", ("pa", "ap")),
                              ("PAPAP", ("pa", "ap", "pa", "ap")))
    assert plan.parallelism == 2


def test_parse_plan_errors(tmp_path):
    p = tmp_path / "plan.cfg"
    p.write_text("graph = g\nnot a pair\n")
    with pytest.raises(GraphError, match="expected key = value"):
        parse_plan(p)
    p.write_text("graph = g\nbogus = 1\n")
    with pytest.raises(GraphError, match="unknown plan key"):
        parse_plan(p)
    p.write_text("task = node_classification\n")
    with pytest.raises(GraphError, match="missing keys"):
        parse_plan(p)


def test_plan_hash_ignores_parallelism(tmp_path):
    a = make_plan(tmp_path)
    b = ExperimentPlan(**{**a.__dict__, "parallelism": 8})
    assert plan_hash(a) == plan_hash(b)
    c = ExperimentPlan(**{**a.__dict__, "seed": 8})
    assert plan_hash(a) != plan_hash(c)


# ---------------------------------------------------------------------------
# end-to-end runs
# ---------------------------------------------------------------------------

def test_run_plan_record_count_and_rerun_identical(tmp_path):
    plan = make_plan(tmp_path)
    out = run_plan(plan)
    first = open(out, "rb").read()
    records = read_results(out)
    assert len(records) == 2 * 2  # configs x splits
    assert [r["trial_id"] for r in records] == [0, 1, 2, 3]
    for r in records:
        assert r["status"] == "ok"
        assert "wall_time" not in r
        assert len(r["history"]["train_loss"]) == 2  # epoch_override applied
    out2 = run_plan(plan)
    assert open(out2, "rb").read() == first


def test_run_plan_parallelism_invariant(tmp_path):
    plan = make_plan(tmp_path)
    seq = open(run_plan(plan, parallelism=1), "rb").read()
    par = open(run_plan(plan, parallelism=3), "rb").read()
    assert seq == par


def test_threads_env_override(tmp_path, monkeypatch):
    plan = make_plan(tmp_path)
    monkeypatch.setenv("HGNN_SPACE_THREADS", "2")
    out = run_plan(plan)
    assert len(read_results(out)) == 4


def test_single_trial_reproduces_file_record(tmp_path):
    plan = make_plan(tmp_path)
    out = run_plan(plan)
    records = {r["trial_id"]: r for r in read_results(out)}
    rec = run_trial_by_id(plan, 2)
    assert rec.trial_id == 2
    assert rec.status == records[2]["status"]
    assert rec.best_score == records[2]["best_score"]
    assert rec.history == records[2]["history"]


def test_resume_completes_missing_and_keeps_done(tmp_path):
    plan = make_plan(tmp_path)
    out = run_plan(plan)
    want = open(out, "rb").read()
    partial = out + ".partial"
    lines = open(partial).read().splitlines()
    assert len(lines) == 5  # header + 4 records
    # drop one record and corrupt the trailing one
    kept = lines[:3] + [lines[4][:25]]
    open(partial, "w").write("\n".join(kept) + "\n")
    os.remove(out)
    run_plan(plan, resume=True)
    assert open(out, "rb").read() == want
    after = open(partial).read().splitlines()
    done_ids = sorted(json.loads(l)["trial_id"] for l in after[1:]
                      if _parses(l))
    assert done_ids == [0, 1, 2, 3]


def _parses(line):
    try:
        json.loads(line)
        return True
    except json.JSONDecodeError:
        return False


def test_resume_complete_file_is_noop(tmp_path):
    plan = make_plan(tmp_path)
    out = run_plan(plan)
    partial_before = open(out + ".partial").read()
    run_plan(plan, resume=True)
    assert open(out + ".partial").read() == partial_before


def test_resume_rejects_other_plan(tmp_path):
    plan = make_plan(tmp_path)
    run_plan(plan)
    other = ExperimentPlan(**{**plan.__dict__, "seed": 12345})
    with pytest.raises(GraphError, match="different plan"):
        run_plan(other, resume=True)


def test_sampled_space_plan(tmp_path):
    bundle = make_bundle(tmp_path)
    plan = ExperimentPlan(graph=str(bundle), task="node_classification",
                          target="P", space="condensed", n=4, strata_hits=0,
                          splits=1, seed=3, metapaths=(("PAP", ("pa", "ap")),),
                          out=str(tmp_path / "s.ndrec"), epoch_override=1)
    out = run_plan(plan)
    records = read_results(out)
    assert len(records) == 4
    assert {r["config"]["model_family"] for r in records} <= {
        "Homogenization", "Relation", "Metapath"}
