import json

import pytest

from vsdistill.cli import RunConfig, run_cli
from vsdistill.dataio import read_set

TOY = {"num_classes": 3, "height": 16, "width": 16, "size_range": [3, 5], "train_per_class": 3,
       "test_per_class": 2}
RUN = {"T_syn": 4, "T_real": 8, "K": 2, "iterations": 1, "eval_seeds": [0, 1],
       "distill": {"real_batch": 2, "arch": {"widths": [2, 2, 2]}}, "eval": {"train": {"epochs": 1}}}


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "toy.json").write_text(json.dumps(TOY))
    (root / "run.json").write_text(json.dumps(RUN))
    assert run_cli(["gen-data", "--config", str(root / "toy.json"), "--out", str(root / "data"),
                    "--seed", "7"]) == 0
    return root


def test_gen_data_twice_identical(workspace):
    again = workspace / "data2"
    assert run_cli(["gen-data", "--config", str(workspace / "toy.json"), "--out", str(again), "--seed", "7"]) == 0
    assert _tree(workspace / "data") == _tree(again)
    prov = json.loads((again / "run.json").read_text())
    assert prov["seeds"] == [7] and prov["config"]["seed"] == 7


@pytest.mark.parametrize("method", ["idtd", "dm"])
def test_distill_contract_and_determinism(workspace, method):
    outs = []
    for k in range(2):
        out = workspace / f"{method}{k}"
        code = run_cli(["distill", "--method", method, "--ipc", "1", "--config", str(workspace / "run.json"),
                        "--data", str(workspace / "data" / "train"), "--out", str(out)])
        assert code == 0
        outs.append(out)
    assert {"synset/manifest.json", "loss.csv", "run.json"} <= set(_tree(outs[0]))
    assert _tree(outs[0]) == _tree(outs[1])
    assert len(read_set(outs[0] / "synset")) == 3


def test_flags_override_config_and_are_recorded(workspace):
    out = workspace / "override"
    assert run_cli(["distill", "--config", str(workspace / "run.json"), "--iterations", "0", "--K", "3",
                    "--data", str(workspace / "data" / "train"), "--out", str(out)]) == 0
    prov = json.loads((out / "run.json").read_text())
    assert prov["config"]["iterations"] == 0 and prov["config"]["K"] == 3
    assert prov["config"]["resolved"]["K"] == 3 and prov["config"]["T_syn"] == 4
    assert set(prov["versions"]) >= {"vsdistill", "numpy", "python"}


def test_eval_writes_summary_and_is_deterministic(workspace):
    syn = workspace / "data" / "test"  # any labelled set works as an exemplar set
    trees = []
    for k in range(2):
        out = workspace / f"eval{k}"
        assert run_cli(["eval", "--syn", str(syn), "--test", str(workspace / "data" / "test"),
                        "--seeds", "0,1,2", "--config", str(workspace / "run.json"), "--out", str(out)]) == 0
        trees.append(_tree(out))
    assert trees[0] == trees[1]
    summary = trees[0]["summary.csv"].decode().splitlines()
    assert summary[0] == "variant,mean,std,n_seeds" and summary[1].endswith(",3")
    assert len(trees[0]["eval.csv"].decode().splitlines()) == 4


@pytest.mark.parametrize("method", ["random", "kcenter"])
def test_baseline(workspace, method):
    out = workspace / f"base-{method}"
    assert run_cli(["baseline", "--method", method, "--ipc", "2", "--feature-epochs", "1",
                    "--config", str(workspace / "run.json"), "--data", str(workspace / "data" / "train"),
                    "--out", str(out)]) == 0
    body = json.loads((out / "coreset.json").read_text())
    assert body["method"] == method and len(read_set(out / "synset")) == 6


def test_analyze_emits_one_row_per_class(workspace, tmp_path):
    acc = [{"class": n, "accuracy": a} for n, a in enumerate([0.5, 0.2, 0.9])]
    ref = [{"class": n, "accuracy": 0.3} for n in range(3)]
    (tmp_path / "a.json").write_text(json.dumps(acc))
    (tmp_path / "b.json").write_text(json.dumps(ref))
    out = tmp_path / "an"
    assert run_cli(["analyze", "--data", str(workspace / "data" / "train"), "--acc-a", str(tmp_path / "a.json"),
                    "--acc-b", str(tmp_path / "b.json"), "--feature-epochs", "1",
                    "--config", str(workspace / "run.json"), "--out", str(out)]) == 0
    assert len((out / "gain.csv").read_text().splitlines()) == 4
    assert "spearman" in json.loads((out / "correlation.json").read_text())


def test_inputs_untouched(workspace):
    before = _tree(workspace / "data")
    run_cli(["baseline", "--method", "random", "--data", str(workspace / "data" / "train"),
             "--out", str(workspace / "untouched")])
    assert _tree(workspace / "data") == before


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["eval", "--bogus", "1", "--out", "x"],
    ["distill", "--data", "d", "--out", "x", "--ipc", "two"],
])
def test_bad_arguments_exit_nonzero(argv, capsys):
    assert run_cli(argv) != 0
    assert capsys.readouterr().err


def test_runtime_errors_exit_nonzero(workspace, tmp_path, capsys):
    assert run_cli(["distill", "--config", str(tmp_path / "missing.json"), "--data", "x",
                    "--out", str(tmp_path / "o")]) == 1
    assert "cannot read config" in capsys.readouterr().err
    (tmp_path / "bad.json").write_text(json.dumps({"ipc": 0}))
    assert run_cli(["distill", "--config", str(tmp_path / "bad.json"), "--data", "x",
                    "--out", str(tmp_path / "o")]) == 1
    assert run_cli(["distill", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o"),
                    "--iterations", "0"]) == 1
    assert run_cli(["distill", "--method", "kcenter", "--data", "x", "--out", str(tmp_path / "o")]) == 1
    capsys.readouterr()


def test_threads_env_fallback(workspace, monkeypatch, tmp_path):
    monkeypatch.setenv("VDS_THREADS", "0")
    assert run_cli(["distill", "--config", str(workspace / "run.json"), "--data",
                    str(workspace / "data" / "train"), "--out", str(tmp_path / "t")]) == 1
    monkeypatch.setenv("VDS_THREADS", "2")
    assert run_cli(["distill", "--config", str(workspace / "run.json"), "--data",
                    str(workspace / "data" / "train"), "--out", str(tmp_path / "t2")]) == 0
    prov = json.loads((tmp_path / "t2" / "run.json").read_text())
    assert prov["config"]["resolved"]["threads"] == 2


def test_run_config_round_trip():
    cfg = RunConfig.from_dict(RUN)
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(Exception):
        RunConfig.from_dict({"colour": "blue"})
