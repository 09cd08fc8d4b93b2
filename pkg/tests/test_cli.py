import json

import pytest

from jsporacle.cli import main
from jsporacle.oracle import OracleModel

from .conftest import TINY_TEXT


@pytest.fixture
def tiny_file(tmp_path):
    path = tmp_path / "tiny2x2.jsp"
    path.write_text(TINY_TEXT)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_exact(capsys, tiny_file, tmp_path):
    code, out, _ = run(capsys, "solve", "--exact", tiny_file, "--out", tmp_path / "o")
    assert code == 0 and out.strip() == "optimal 7"
    code, out, _ = run(capsys, "solve", "--brute-force", tiny_file, "--out", tmp_path / "o")
    assert code == 0 and out.strip() == "optimal 7"


def test_usage_errors(capsys, tiny_file):
    code, _, err = run(capsys, "solve", "--no-such-flag", tiny_file)
    assert code == 2 and "usage:" in err
    code, _, err = run(capsys)
    assert code == 2 and "usage:" in err
    code, _, _ = run(capsys, "search", tiny_file, "--max-iter", "0")
    assert code == 2


def test_missing_file_names_the_path(capsys, tmp_path):
    missing = tmp_path / "nowhere.jsp"
    code, _, err = run(capsys, "solve", missing, "--out", tmp_path / "o")
    assert code == 1 and str(missing) in err


def test_generate_and_features(capsys, tmp_path):
    out = tmp_path / "o"
    code, text, _ = run(capsys, "generate", "--jobs", 3, "--machines", 3, "--count", 2, "--seed", 4, "--out", out)
    paths = text.split()
    assert code == 0 and len(paths) == 2
    first = open(paths[0]).read()
    run(capsys, "generate", "--jobs", 3, "--machines", 3, "--count", 2, "--seed", 4, "--out", tmp_path / "again")
    assert (tmp_path / "again" / paths[0].rsplit("/", 1)[-1]).read_text() == first
    code, text, _ = run(capsys, "features", paths[0], "--out", out)
    assert code == 0 and len(text.splitlines()) == 10


def test_eval_prints_one_row_per_tolerance(capsys, small_dataset, tmp_path):
    _, _, data = small_dataset
    weights = tmp_path / "w.bin"
    OracleModel.init(seed=0).save(weights)
    code, out, _ = run(capsys, "eval", "--weights", weights, "--dataset", data, "--tol", "0.05", "--tol", "0.07",
                       "--out", tmp_path / "o")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split() == ["tol", "WTA"]
    rows = lines[1:lines.index("")]
    assert [float(r.split()[0]) for r in rows] == [0.05, 0.07]
    assert "acc%" in out


def test_search_and_report(capsys, tiny_file, tmp_path):
    out = tmp_path / "o"
    code, text, _ = run(capsys, "search", tiny_file, "--max-iter", 10, "--optimum", 7, "--report", "r.json",
                        "--out", out)
    assert code == 0 and "makespan 7 gap 0.00%" in text
    rep = json.loads((out / "r.json").read_text())
    assert list(rep.values())[0]["makespan"] == 7
    code, _, err = run(capsys, "search", tiny_file, "--algo", "ots", "--out", out)
    assert code == 1 and "--oracle" in err


def test_label_train_search_ots(capsys, tmp_path):
    out = tmp_path / "o"
    _, text, _ = run(capsys, "generate", "--jobs", 3, "--machines", 3, "--count", 3, "--out", out)
    paths = text.split()
    code, text, _ = run(capsys, "label", *paths, "--random", 3, "--out", out)
    assert code == 0 and "54 samples" in text
    code, text, _ = run(capsys, "train", "--dataset", out / "dataset.jsonl", "--epochs", 2, "--batch-size", 16,
                        "--out", out)
    assert code == 0 and (out / "weights.bin").exists() and (out / "metrics.json").exists()
    code, text, _ = run(capsys, "search", paths[0], "--algo", "ots", "--oracle", out / "weights.bin",
                        "--max-iter", 20, "--out", out)
    assert code == 0 and "oracle_calls" in text


def test_bench_command(capsys, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"generate": {"n_jobs": 3, "n_machines": 3, "count": 2},
                                "params": [{"max_nonimproving": 10}], "seeds": 2, "optima": "exact"}))
    code, text, _ = run(capsys, "bench", spec, "--out", tmp_path / "res")
    assert code == 0 and "num_opt_sTS" in text
    assert (tmp_path / "res" / "summary.tsv").exists()
