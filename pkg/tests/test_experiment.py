import statistics
from pathlib import Path

import pytest

from meshchain.cli import main
from meshchain.experiment import (
    ConfigError, compare_placements, load_config, parse_config, read_csv, run_experiment,
)
from meshchain.topology import read_topology

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

HLF_SMALL = """
[experiment]
pipeline = hlf
repetitions = 2
seed = 4
[workload]
n = 20
[sweep]
hlf.block_size = 5, 20
"""


def test_annotated_example_parses():
    cfg = load_config(CONFIGS / "experiment.ini")
    assert cfg.pipeline == "hlf" and cfg.repetitions == 5
    assert [v.hlf.block_size for _, v in cfg.variants()] == [10, 20, 50, 100]
    for name in ("poa_sealing.ini", "compare_hlf.ini", "compare_poa.ini"):
        load_config(CONFIGS / name)


@pytest.mark.parametrize("text, field", [
    ("[experiment]\nrepetitions = 0\n", "experiment.repetitions"),
    ("[experiment]\npipeline = pbft\n", "experiment.pipeline"),
    ("[hlf]\nblock_sise = 3\n", "hlf.block_sise"),
    ("[hlf]\npolicy_m = 3\n", "hlf"),
    ("[topology]\nfile = /no/such.topo\n", "topology.file"),
    ("[placement]\nmethod = fixed\n", "placement.plan"),
    ("[workload]\nn = 0\n", "workload"),
    ("[bogus]\n", "[bogus]"),
    ("[experiment]\npipeline = poa\nmetric = ttc\n", "experiment.metric"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert field in str(err.value)


def test_report_aggregates_recompute_from_rows():
    rep = run_experiment(parse_config(HLF_SMALL))
    assert len(rep.runs) == 4 and len(rep.means) == 2
    runs = read_csv(rep.runs_csv())
    txs = read_csv(rep.tx_csv())
    for row in runs:
        if row["run"] == "mean":
            continue
        mine = [t for t in txs if t["run"] == row["run"]]
        ttc = [float(t["commit_ms"]) - float(t["submit_ms"]) for t in mine]
        assert float(row["ttc_mean"]) == pytest.approx(statistics.fmean(ttc), abs=1e-3)
        assert float(row["ttc_median"]) == pytest.approx(statistics.median(ttc), abs=1e-3)
        assert float(row["ttc_max"]) == pytest.approx(max(ttc), abs=1e-3)
        assert int(row["valid"]) == sum(t["status"] == "valid" for t in mine)
    for mean in (r for r in runs if r["run"] == "mean"):
        group = [r for r in runs if r["variant"] == mean["variant"] and r["run"] != "mean"]
        assert float(mean["ttc_mean"]) == pytest.approx(statistics.fmean(float(g["ttc_mean"]) for g in group),
                                                        abs=1e-3)
    for row in read_csv(rep.cpu_csv()):
        assert 0.0 <= float(row["busy_fraction"]) <= 1.0
    assert rep.runs_csv().startswith("# meshchain runs schema v1\n")


def test_poa_run_reports_drops_not_failure():
    cfg = parse_config("[experiment]\npipeline = poa\n[poa]\naccept_work = 400\ndrop_horizon_blocks = 3\n"
                       "[workload]\nn = 200\ncall = alice bob 1\n")
    rep = run_experiment(cfg)
    assert rep.runs[0]["dropped"] > 0 and rep.runs[0]["consistent"] == 1


def test_compare_k1_dominant_and_forced_same(tmp_path):
    topo = tmp_path / "star.topo"
    lines = ["[nodes]", "hub 41.38 2.13 2.0 1.0"]
    lines += [f"s{i} 41.38{i} 2.13{i} 1.0 0.96" for i in range(6)]
    lines += ["[links]"] + [f"hub s{i} 20 1 0" for i in range(6)]
    topo.write_text("\n".join(lines) + "\n")
    cfg = parse_config(f"[experiment]\nseed = 1\n[topology]\nfile = {topo}\n[placement]\nk = 1\n"
                       "[workload]\nn = 5\n")
    cmp = compare_placements(cfg, seeds=6)
    assert {r["nodes_a"] for r in cmp.rows} == {"hub"}
    assert len({r["nodes_b"] for r in cmp.rows}) > 1
    same = compare_placements(cfg, ("basp", "basp"), seeds=3)
    assert same.gains == [0.0, 0.0, 0.0]


def test_cli_verbs(tmp_path, capsys):
    topo, plan = tmp_path / "m.topo", tmp_path / "m.plan"
    assert main(["synth-topology", "nodes=40", "seed=2", "-o", str(topo)]) == 0
    assert len(read_topology(topo).nodes) == 40
    assert main(["place", str(topo), "--method", "basp", "-o", str(plan)]) == 0
    assert plan.read_text().startswith("# method basp\n# k 4\nclient ")
    assert main(["place", str(topo), "--method", "random", "--seed", "3", "--roles", "poa", "-o", str(plan)]) == 0
    assert "sealer#1" in plan.read_text()

    cfg = tmp_path / "exp.ini"
    cfg.write_text(HLF_SMALL + f"\n[topology]\nfile = {topo.name}\n")
    out = tmp_path / "res.csv"
    assert main(["run", str(cfg), "--seed", "9", "--out", str(out), "--trace", str(tmp_path / "t.txt")]) == 0
    rows = read_csv(out.read_text())
    assert rows[0]["seed"] == "9" and (tmp_path / "res.tx.csv").exists() and (tmp_path / "res.cpu.csv").exists()
    assert (tmp_path / "t.txt").read_text().startswith("# run 0")

    fixed = tmp_path / "fixed.ini"
    fixed.write_text(f"[topology]\nfile = {topo.name}\n[placement]\nmethod = fixed\nplan = m.plan\n"
                     "[experiment]\npipeline = poa\n[workload]\nn = 2\ncall = alice bob 1\n")
    assert main(["run", str(fixed)]) == 0
    assert main(["compare", str(cfg), "--seeds", "2", "--out", str(tmp_path / "cmp.csv")]) == 0
    assert read_csv((tmp_path / "cmp.csv").read_text())[-1]["seed"] == "mean"

    capsys.readouterr()
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    assert "missing.ini" in capsys.readouterr().err
    assert main(["synth-topology", "bogus=1", "-o", str(topo)]) == 2


def test_python_module_entry_point(tmp_path):
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "meshchain", "place", "qmpsu", "-o", str(tmp_path / "p")],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr


def test_variants_do_not_resweep():
    cfg = parse_config(HLF_SMALL)
    for name, variant in cfg.variants():
        assert variant.sweep_key is None
        rep = run_experiment(variant)
        assert {r["variant"] for r in rep.runs} == {"base"}
        assert name == f"hlf.block_size={variant.hlf.block_size}"
