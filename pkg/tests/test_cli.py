import json

import pytest

from aadfss.cli import main
from aadfss.config import RunConfig

TINY_GEN = {"train_support": 3, "train_query": 3, "test_support": 5, "test_query": 2,
            "base_classes": ["disk", "square"], "novel_classes": ["hexagon", "arrow"]}
SMALL = {"stem_width": 4, "widths": [8, 8, 8], "l": 8, "N": 3, "val_interval": 0, "batch_size": 2, "lr": 1e-3,
         "min_test_support": 5, "min_test_query": 2}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = {**SMALL, "data_root": str(root / "data"), "extra": {"gen": TINY_GEN}}
    path = root / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["gen-data", "--config", str(path), "--seed", "3"]) == 0
    return root, path


def test_gen_data_writes_manifest_and_snapshot(workspace):
    root, _ = workspace
    assert (root / "data" / "manifest.json").is_file()
    snap = RunConfig.from_file(root / "data" / "config.json")
    assert snap.seed == 3 and snap.extra["gen"]["test_support"] == 5


def test_train_then_eval_strategies(workspace, capsys):
    root, cfg = workspace
    out = str(root / "run")
    assert main(["train", "--config", str(cfg), "--out", out, "--episodes", "4"]) == 0
    assert (root / "run" / "loss.csv").read_text().startswith("episode,loss,lr\n")
    assert (root / "run" / "model.ckpt").is_file()
    snap = RunConfig.from_file(root / "run" / "config.json")
    assert snap.episodes_total == 4 and snap.l == 8

    for strategy in ("average", "vote"):
        code = main(["eval", "--config", str(cfg), "--out", out, "--episodes", "4", "--k", "5",
                     "--strategy", strategy, "--tasks", "3", "--runs", "1"])
        assert code == 0
        side = json.loads((root / "run" / "metrics.json").read_text())
        assert side["forwards_per_task"] == (1.0 if strategy == "average" else 5.0)
    assert "forwards/task=5" in capsys.readouterr().out


def test_eval_is_reproducible_from_snapshot(workspace):
    root, cfg = workspace
    out = root / "rep"
    args = ["--config", str(cfg), "--out", str(out), "--episodes", "2", "--tasks", "4", "--runs", "2"]
    assert main(["train", *args]) == 0
    assert main(["eval", *args]) == 0
    first = (out / "metrics.csv").read_text()
    assert main(["eval", "--config", str(out / "config.json")]) == 0
    assert (out / "metrics.csv").read_text() == first


def test_ablate_rows(workspace):
    root, cfg = workspace
    out = root / "abl"
    code = main(["ablate", "--config", str(cfg), "--out", str(out), "--episodes", "2", "--tasks", "2",
                 "--runs", "1", "--fusion", "concat"])
    assert code == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "arm,K,strategy,miou,forwards_per_task"
    assert [l.split(",")[0] for l in lines[1:]] == ["baseline", "cl", "aad", "concat"]
    assert all((out / arm / "config.json").is_file() for arm in ("baseline", "cl", "aad", "concat"))


def test_grad_check(tmp_path, workspace, capsys):
    _, cfg = workspace
    assert main(["grad-check", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--strategy", "majority"])
    assert exc.value.code == 2


def test_contract_violations_exit_1(tmp_path, capsys):
    assert main(["eval", "--data", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"enable_cl": False, "enable_aad": True}))
    assert main(["train", "--config", str(bad)]) == 1
    bad.write_text(json.dumps({"lerning_rate": 1}))
    assert main(["train", "--config", str(bad)]) == 1
    assert "unknown config keys" in capsys.readouterr().err
