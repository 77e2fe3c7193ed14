import subprocess
import sys

import numpy as np
import pytest

from igcv3.cli import main
from igcv3.config import bundled_config

TINY = """\
network:
  input_resolution: [4, 4]
  stem: {in_channels: 3, out_channels: 8, kernel: 3, stride: 1}
  head: 3
  stages:
    - repeats: 1
      block: {family: IGCV3, in_channels: 8, out_channels: 8, expansion: 2, g1: 2, g2: 2, skip: true}
train:
  lr0: LR
  schedule: {type: step, milestones: [10, 15], factor: 10}
  epochs: 20
  batch_size: 6
dataset: {num_classes: 3, per_class: 4, eval_per_class: 2, noise: 0.3, xor: false}
"""


@pytest.fixture
def cfg(tmp_path):
    def write(name, text=None):
        path = tmp_path / name
        path.write_text(bundled_config(name) if text is None else text)
        return str(path)
    return write


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_pass_and_fail(cfg, capsys):
    code, out, _ = run(["verify", cfg("toy_igcv3_d.yaml")], capsys)
    assert code == 0
    assert out.count("PASS") == 4 and "1.000000" in out
    code, out, _ = run(["verify", cfg("sabotage_no_permute.yaml")], capsys)
    assert code == 1
    assert "FAIL" in out and "0.500000" in out


def test_verify_empty_and_unparsable(cfg, capsys):
    code, _, err = run(["verify", cfg("empty.yaml", "network:\n  stages: []\n")], capsys)
    assert code == 2 and "no blocks" in err
    code, _, err = run(["verify", cfg("bad.yaml", "network:\n  head: x\n")], capsys)
    assert code == 2 and "line 2" in err
    code, _, err = run(["verify", "/nonexistent.yaml"], capsys)
    assert code == 2


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["cost"])
    assert info.value.code == 2


def test_cost_single_block(cfg, capsys):
    code, out, _ = run(["cost", cfg("single_block.yaml"), "--csv"], capsys)
    assert code == 0
    rows = {line.split(",")[0]: line.split(",")[1:] for line in out.strip().splitlines()}
    assert rows["stage0.block0"][0] == "2400"
    assert rows["classifier"] == ["170", "0", "170", "160"]


def test_cost_classes_change_only_classifier(cfg, capsys):
    path = cfg("reference_mnv2.yaml")
    _, a, _ = run(["cost", path, "--csv", "--classes", "10"], capsys)
    _, b, _ = run(["cost", path, "--csv", "--classes", "1000"], capsys)
    diff = [x.split(",")[0] for x, y in zip(a.splitlines(), b.splitlines()) if x != y]
    assert diff == ["classifier", "total"]


def test_cost_alpha(cfg, capsys):
    path = cfg("reference_mnv2.yaml")
    _, a, _ = run(["cost", path, "--csv"], capsys)
    _, b, _ = run(["cost", path, "--csv", "--alpha", "1.4"], capsys)
    madds = lambda text: int(text.strip().splitlines()[-1].split(",")[-1])
    assert 1.8 <= madds(b) / madds(a) <= 2.1
    code, out, _ = run(["cost", path], capsys)
    assert code == 0 and out.splitlines()[0].split() == ["layer", "conv_params", "bn_params", "params", "madds"]


def test_enumerate(capsys):
    code, out, _ = run(["enumerate", "--in", "16", "--out", "16", "--max-groups", "4"], capsys)
    lines = out.strip().splitlines()[1:]
    assert code == 0 and len(lines) == 9
    assert lines[0].split() == ["1", "1", "1", "3936"]
    assert "2   2   4   2400" in out
    _, out, _ = run(["enumerate", "--in", "7", "--out", "9", "--max-groups", "4"], capsys)
    assert len(out.strip().splitlines()) == 2
    _, out, _ = run(["enumerate", "--in", "32", "--out", "32", "--max-groups", "4"], capsys)
    got = {tuple(l.split()[:2]) for l in out.strip().splitlines()[1:]}
    assert {("2", "2"), ("4", "2"), ("2", "4")} <= got


def test_train_toy_csv_and_determinism(cfg, capsys, tmp_path):
    path = cfg("tiny.yaml", TINY.replace("LR", "0.1"))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    code, _, err = run(["train-toy", path, "--seed", "3", "--out", str(a)], capsys)
    assert code == 0 and "train_acc=1.0000" in err
    run(["train-toy", path, "--seed", "3", "--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "epoch,lr,train_loss,train_acc,eval_acc" and len(lines) == 21
    run(["train-toy", path, "--seed", "4", "--out", str(b)], capsys)
    assert a.read_bytes() != b.read_bytes()


def test_train_toy_divergence(cfg, capsys):
    code, out, err = run(["train-toy", cfg("div.yaml", TINY.replace("LR", "10000"))], capsys)
    assert code == 1 and "diverged at epoch" in err
    assert out.startswith("epoch,lr")


def test_train_toy_needs_train_section(cfg, capsys):
    code, _, err = run(["train-toy", cfg("single_block.yaml")], capsys)
    assert code == 2 and "train" in err


def test_export_support(cfg, capsys):
    code, out, _ = run(["export", cfg("sabotage_no_permute.yaml")], capsys)
    assert code == 0
    grid = np.array([[int(c) for c in row] for row in out.splitlines()])
    assert np.array_equal(grid, np.kron(np.eye(2, dtype=int), np.ones((4, 4), dtype=int)))
    _, out, _ = run(["export", cfg("toy_igcv3_d.yaml"), "--block", "2"], capsys)
    assert set(out.replace("\n", "")) == {"1"} and len(out.splitlines()) == 16


def test_export_dense(cfg, capsys, tmp_path):
    code, _, err = run(["export", cfg("toy_igcv3_d.yaml"), "--what", "dense"], capsys)
    assert code == 1 and "linear" in err
    linear = bundled_config("single_block.yaml").replace("g2: 2}", "g2: 2, relu_placement: none}")
    path = cfg("linear.yaml", linear)
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["export", path, "--what", "dense", "--out", str(out_a)], capsys)[0] == 0
    run(["export", path, "--what", "dense", "--out", str(out_b)], capsys)
    assert out_a.read_bytes() == out_b.read_bytes()
    dense = np.loadtxt(out_a, delimiter=",")
    assert dense.shape == (16, 16) and np.all(dense != 0)
    code, _, err = run(["export", path, "--block", "5"], capsys)
    assert code == 2


def test_export_config_round_trip(cfg, capsys, tmp_path):
    _, out, _ = run(["export", cfg("toy_igcv3_d.yaml"), "--what", "config"], capsys)
    again = tmp_path / "again.yaml"
    again.write_text(out)
    code, text, _ = run(["verify", str(again)], capsys)
    assert code == 0 and text.count("PASS") == 4


def test_module_entry_point(cfg):
    proc = subprocess.run([sys.executable, "-m", "igcv3", "verify", cfg("sabotage_no_permute.yaml")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "FAIL" in proc.stdout
