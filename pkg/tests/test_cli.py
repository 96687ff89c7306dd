import csv
import json
import time

import pytest

from lvseg.cli import main
from lvseg.config import PipelineConfig

from pipeline_run import SMALL_CONFIG, run_pipeline


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    t0 = time.perf_counter()
    work = run_pipeline(tmp_path_factory.mktemp("cli"))
    # phantom -> preprocess -> ipb -> train (2 epochs, 2-level net) -> eval on one core
    assert time.perf_counter() - t0 < 300
    return work


def test_pipeline_outputs(pipeline):
    rows = list(csv.DictReader(open(pipeline / "eval" / "metrics.csv")))
    plans = json.loads((pipeline / "runs" / "plans.json").read_text())
    assert len(plans) == 4
    # every run is scored on the held-out cases of both cohorts
    assert len(rows) == sum(len(p["held_out_test"]) for p in plans) == 4 * 4
    assert {r["model"] for r in rows} == {"gs_only", "ss_only", "gs_then_ss", "ss_then_gs"}
    anova = json.loads((pipeline / "eval" / "anova.json").read_text())
    for pair in anova["per_dataset"]["target1"]["tukey"]:
        assert 0.0 <= pair["p_value"] <= 1.0
    report = {p.name for p in (pipeline / "report").iterdir()}
    assert {"table_dsc.md", "regression.svg", "bland_altman.svg", "dsc_cov_vs_ss.svg"} <= report
    for run in plans:
        name = run["schedule"] if run["target"] is None else f"{run['schedule']}__{run['target']}__ss{run['ss_count']}"
        assert (pipeline / "runs" / name / "pretrain.ckpt").exists()


def test_manifests_chain(pipeline):
    m = json.loads((pipeline / "ss" / "target1" / "manifest.json").read_text())
    assert m["stage"] == "ss" and m["dataset"] == "target1"
    entry = next(iter(m["cases"].values()))
    assert (pipeline / "ss" / "target1" / entry["image"]).exists()
    assert (pipeline / "ss" / "target1" / entry["ss"]).exists()


def test_config_command(tmp_path, capsys):
    assert main(["config"]) == 0
    assert PipelineConfig.from_dict(json.loads(capsys.readouterr().out)) == PipelineConfig()
    assert main(["--seed", "3", "config", "--profile", "paper", "--out", str(tmp_path / "p.json")]) == 0
    assert PipelineConfig.load(tmp_path / "p.json").seed == 3


def test_dry_run_lists_plans(pipeline, capsys):
    cfg = pipeline / "config.json"
    code = main(["--config", str(cfg), "train", "--manifest", str(pipeline / "ss" / "source"),
                 "--manifest", str(pipeline / "ss" / "target1"), "--out", str(pipeline / "dry"), "--dry-run"])
    assert code == 0
    assert capsys.readouterr().out.split() == ["gs_only", "ss_only__target1__ss3", "gs_then_ss__target1__ss3",
                                               "ss_then_gs__target1__ss3"]


def test_user_errors_exit_1(tmp_path, capsys):
    assert main(["preprocess", "--manifest", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"bogus": 1}}))
    assert main(["--config", str(bad), "config"]) == 1
    empty = tmp_path / "empty.csv"
    empty.write_text("run,model,ss_count,dataset,role,case_id,dsc,predicted_ml,truth_ml\n")
    assert main(["report", "--metrics", str(empty), "--out", str(tmp_path / "r")]) == 1
    assert "no data" in capsys.readouterr().err
    assert main(["--jobs", "0", "config"]) == 1


def test_missing_ss_is_reported(tmp_path, pipeline):
    code = main(["--config", str(pipeline / "config.json"), "train",
                 "--manifest", str(pipeline / "std" / "source"), "--manifest", str(pipeline / "std" / "target1"),
                 "--out", str(tmp_path / "r")])
    assert code == 1


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2


def test_small_config_is_valid():
    PipelineConfig.from_dict(SMALL_CONFIG)
