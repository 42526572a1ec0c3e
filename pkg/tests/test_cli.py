import json

from hgnn_space.cli import main
from hgnn_space.hgraph import SyntheticSpec, generate_synthetic, save_graph
from hgnn_space.model import DesignConfig
from hgnn_space.runner import save_config_list


def bundle(tmp_path):
    spec = SyntheticSpec(
        node_types=(("P", 40, 8), ("A", 20, 8)),
        relations=(("ap", "A", "P", 90), ("pa", "P", "A", 90)),
        target_type="P", num_communities=4, boost=1.0, noise=0.0, seed=1)
    return save_graph(generate_synthetic(spec), tmp_path / "bundle")


def test_space_cardinality(capsys):
    assert main(["space", "cardinality"]) == 0
    assert capsys.readouterr().out.strip() == "41990400"
    assert main(["space", "cardinality", "--space", "condensed"]) == 0
    assert capsys.readouterr().out.strip() == "82944"


def test_space_describe(capsys):
    main(["space", "describe", "--space", "condensed"])
    out = capsys.readouterr().out
    assert "model_family: Homogenization, Relation, Metapath" in out
    assert "cardinality: 82944" in out


def test_space_sample_writes_configs(tmp_path, capsys):
    out = tmp_path / "c.json"
    main(["space", "sample", "--n", "6", "--seed", "3", "--out", str(out)])
    configs = json.load(open(out))
    assert len(configs) == 6
    main(["space", "sample", "--n", "2", "--seed", "3", "--space", "condensed",
          "--expand-dim", "has_bn", "--out", str(out)])
    expanded = json.load(open(out))
    assert len(expanded) == 4  # 2 base configs x 2 BN choices


def test_analyze_homophily(tmp_path, capsys):
    b = bundle(tmp_path)
    out = tmp_path / "beta.csv"
    main(["analyze", "homophily", "--graph", b,
          "--metapaths", "PAP:pa,ap", "--out", str(out)])
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "metapath,beta"
    name, beta = lines[1].split(",")
    assert name == "PAP" and float(beta) == 1.0  # boost 1, noise 0


def test_run_and_analyze_end_to_end(tmp_path, capsys):
    b = bundle(tmp_path)
    cfgs = []
    for bn in (True, False):
        cfgs.append(DesignConfig(model_family="Relation", micro_conv="GCNConv",
                                 macro_agg="Sum", has_bn=bn, hidden_dim=16,
                                 mp_layers=1, epochs=100, seed=5))
    cfg_path = tmp_path / "configs.json"
    save_config_list(cfgs, cfg_path)
    plan = tmp_path / "plan.cfg"
    plan.write_text(
        f"graph = {b}\n"
        "task = node_classification\n"
        "target = P\n"
        f"space = {cfg_path}\n"
        "splits = 2\n"
        "seed = 1\n"
        f"out = {tmp_path / 'r.ndrec'}\n"
        "epoch_override = 2\n")
    assert main(["run", "--plan", str(plan)]) == 0
    assert (tmp_path / "r.ndrec").exists()

    out_dir = tmp_path / "analysis"
    assert main(["analyze", "rank", "--dim", "has_bn",
                 "--results", str(tmp_path / "r.ndrec"),
                 "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "rank_has_bn.csv").exists()
    assert (out_dir / "rank_has_bn.svg").exists()

    assert main(["analyze", "edf", "--results", str(tmp_path / "r.ndrec"),
                 "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "edf_r.csv").exists()
    assert (out_dir / "edf.svg").exists()
