import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dcorlab import __version__
from dcorlab.cli import main
from dcorlab.core import make_rng
from dcorlab.storage import FeatureDump, read_heatmap_csv, write_dump

FIXTURES = Path(__file__).parent / "data" / "dumps"
VALID = str(FIXTURES / "valid.dcfd")


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def dumps(tmp_path):
    rng = make_rng(11)
    ids = list(range(64))
    x = rng.standard_normal((64, 4))
    a = FeatureDump("a", {"h1": x, "h2": np.tanh(x @ rng.standard_normal((4, 3)))}, ids, {"seed": 11})
    b = FeatureDump("b", {"h1": rng.standard_normal((64, 2))}, ids, {"seed": 11})
    gt = FeatureDump("gt", {"emb": x[:, :2] + 0.1 * rng.standard_normal((64, 2))}, ids)
    const = FeatureDump("c", {"k": np.ones((64, 2))}, ids)
    paths = {}
    for d in (a, b, gt, const):
        paths[d.model_name] = str(tmp_path / f"{d.model_name}.dcfd")
        write_dump(paths[d.model_name], d)
    return paths


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "seed": 5,
        "output_dir": "out",
        "data": {"n_train": 320, "n_test": 80, "dim": 16},
        "pair": {"alpha": 0.05, "epochs": 2, "hidden": [8, 16]},
        "attacks": [{"kind": "FGM", "epsilon": 0.05}, {"kind": "PGD", "epsilon": 0.05, "pgd_iters": 3}],
    }))
    return path


def test_dcor_self_prints_one(capsys):
    code, out, _ = run(["dcor", VALID, VALID, "--layer-a", "h1", "--layer-b", "h1"], capsys)
    assert code == 0 and out == "1.000000\n"


def test_dcor_json_report(dumps, capsys):
    code, out, _ = run(["dcor", dumps["a"], dumps["b"], "--layer-a", "h2", "-n", "32", "--json"], capsys)
    doc = json.loads(out)
    assert code == 0
    prov = doc["provenance"]
    assert prov["n"] == 32 and prov["seed"] == 11 and prov["version"] == __version__
    assert 0 <= doc["dcor"] <= 1


def test_dcor_exit_codes(dumps, tmp_path, capsys):
    code, _, err = run(["dcor", dumps["a"], dumps["c"], "--layer-a", "h1"], capsys)
    assert code == 3 and err.count("\n") == 1
    code, _, err = run(["dcor", str(FIXTURES / "bad_magic.dcfd"), VALID], capsys)
    assert code == 2 and "bad-magic" in err
    code, _, err = run(["dcor", str(FIXTURES / "truncated.dcfd"), VALID], capsys)
    assert code == 2 and "h2" in err
    code, _, _ = run(["dcor", dumps["a"], dumps["b"]], capsys)  # two layers, no --layer-a
    assert code == 2
    code, _, _ = run(["dcor", str(tmp_path / "nope.dcfd"), VALID], capsys)
    assert code == 2
    code, _, _ = run(["dcor", VALID], capsys)
    assert code == 1


def test_usage_errors(capsys):
    code, _, err = run(["frobnicate"], capsys)
    assert code == 1 and "usage" in err
    assert run([], capsys)[0] == 1
    assert run(["fig1", "--case", "z", "-n", "5", "--seed", "1"], capsys)[0] == 1
    assert run(["fig1", "--case", "a", "-n", "0", "--seed", "1"], capsys)[0] == 1


def test_help_and_version(capsys):
    code, out, _ = run(["--help"], capsys)
    assert code == 0 and "heatmap" in out
    code, out, _ = run(["--version"], capsys)
    assert code == 0 and __version__ in out


def test_pdcor(dumps, capsys):
    base = ["pdcor", dumps["a"], dumps["b"], dumps["gt"], "--layer-x", "h1"]
    code, out, _ = run(base, capsys)
    assert code == 0 and float(out) > 0.3
    code, out, _ = run(base + ["-m", "16", "--json"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["provenance"]["m"] == 16 and doc["provenance"]["n"] == 64
    code, _, _ = run(["pdcor", dumps["a"], dumps["a"], dumps["gt"], "--layer-x", "h1", "--layer-y", "h1"], capsys)
    assert code == 3
    # Whole minibatches only: the ragged tail is dropped.
    code, out, _ = run(base + ["-m", "24", "--json"], capsys)
    assert code == 0 and json.loads(out)["provenance"]["n"] == 48
    assert run(base + ["-m", "128"], capsys)[0] == 2


def test_heatmap_outputs(dumps, tmp_path, capsys):
    prefix = tmp_path / "hm"
    code, out, _ = run(["heatmap", dumps["a"], "-o", str(prefix), "-n", "64"], capsys)
    assert code == 0 and "hm.csv" in out and "hm.json" in out
    rows, cols, vals = read_heatmap_csv(tmp_path / "hm.csv")
    assert rows == cols == ["h1", "h2"]
    doc = json.loads((tmp_path / "hm.json").read_text())
    assert doc["provenance"]["n"] == 64
    np.testing.assert_allclose(vals, doc["values"], atol=1e-5)
    first = (tmp_path / "hm.csv").read_bytes()
    run(["heatmap", dumps["a"], "-o", str(prefix), "-n", "64", "--parallel", "3"], capsys)
    assert (tmp_path / "hm.csv").read_bytes() == first
    code, _, _ = run(["heatmap", dumps["a"], dumps["b"], "-o", str(prefix), "-n", "100"], capsys)
    assert code == 2


def test_heatmap_unwritable(dumps, tmp_path, capsys):
    code, _, err = run(["heatmap", dumps["a"], "-o", str(tmp_path / "no" / "such" / "hm"), "-n", "8"], capsys)
    assert code == 2 and err


def test_fig1(capsys):
    code, out, _ = run(["fig1", "--case", "d", "-n", "5000", "--seed", "7"], capsys)
    lines = dict(line.split() for line in out.splitlines())
    assert code == 0 and float(lines["dcor"]) < 0.08
    code, out, _ = run(["fig1", "--case", "a", "-n", "500", "--seed", "1", "--json"], capsys)
    doc = json.loads(out)
    assert doc["provenance"]["seed"] == 1 and doc["provenance"]["n"] == 500 and "pearson" in doc


def test_grad_check(capsys):
    code, out, _ = run(["grad-check", "--configs", "3"], capsys)
    assert code == 0 and out
    code, out, _ = run(["grad-check", "--loss", "pdcor", "--configs", "2", "-n", "8"], capsys)
    assert code == 0
    # An impossible tolerance reports failure as a numerical problem.
    assert run(["grad-check", "--configs", "1", "--tol", "1e-30"], capsys)[0] == 3


def test_train_pair_is_byte_identical(config, capsys):
    code, out, _ = run(["train-pair", "--config", str(config)], capsys)
    assert code == 0 and out
    out_dir = config.parent / "out"
    metrics = json.loads((out_dir / "metrics.json").read_text())
    assert metrics["provenance"]["seed"] == 5 and "feature_dcor" in metrics
    first = {p.name: p.read_bytes() for p in out_dir.iterdir()}
    assert run(["train-pair", "--config", str(config)], capsys)[0] == 0
    assert {p.name: p.read_bytes() for p in out_dir.iterdir()} == first


def test_attack_eval_table(config, capsys):
    code, _, _ = run(["attack-eval", "--config", str(config)], capsys)
    assert code == 0
    table = config.parent / "out" / "attack_eval.csv"
    rows = list(csv.DictReader(table.open()))
    assert [r["model"] for r in rows] == ["baseline", "dc"]
    assert {"clean", "FGM_eps0.05", "PGD_eps0.05", "seed", "n", "m", "version"} <= set(rows[0])
    first = table.read_bytes()
    run(["attack-eval", "--config", str(config)], capsys)
    assert table.read_bytes() == first


def test_attack_eval_loaded_models(config, capsys):
    assert run(["train-pair", "--config", str(config)], capsys)[0] == 0
    doc = json.loads(config.read_text())
    doc["models"] = {"f1": "out/f1.npz", "f2": "out/f2.npz"}
    config.write_text(json.dumps(doc))
    assert run(["attack-eval", "--config", str(config)], capsys)[0] == 0
    rows = list(csv.DictReader((config.parent / "out" / "attack_eval.csv").open()))
    assert [r["model"] for r in rows] == ["loaded"]


def test_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert run(["train-pair", "--config", str(path)], capsys)[0] == 2
    path.write_text(json.dumps({"seed": -1, "output_dir": "x"}))
    assert run(["train-pair", "--config", str(path)], capsys)[0] == 2
    path.write_text(json.dumps({"seed": 1, "output_dir": "x", "pair": {"bogus": 1}}))
    assert run(["train-pair", "--config", str(path)], capsys)[0] == 2


def test_selftest(capsys):
    code, out, _ = run(["selftest"], capsys)
    assert code == 0
    assert out.count("PASS") >= 5 and "FAIL" not in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dcorlab", "fig1", "--case", "c", "-n", "2000", "--seed", "3"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.startswith("pearson")
    proc = subprocess.run([sys.executable, "-m", "dcorlab", "nope"], capture_output=True, text=True, check=False)
    assert proc.returncode == 1 and "usage" in proc.stderr
