import json
import subprocess
import sys

import numpy as np
import pytest

from structsparse._exact import from_decimal, to_decimal
from structsparse.cli_io import (InputError, SignalFile, main, parse_csv_signal, parse_json_signal,
                                 parse_sizes, read_signal, recompute_value, write_signal)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def tree_file(tmp_path):
    p = tmp_path / "t.json"
    p.write_text(json.dumps({"kind": "tree", "p": 1, "weights": [1, 4, 2]}))
    return p


@pytest.fixture
def grid_file(tmp_path):
    p = tmp_path / "g.json"
    p.write_text(json.dumps({"kind": "grid", "h": 2, "w": 2, "p": 1, "weights": [5, 5, 1, 1]}))
    return p


# ---- project ---------------------------------------------------------------


def test_project_tree_tail_exact(tree_file, capsys):
    code, out, _ = run(["project", "tree-tail", "--input", str(tree_file), "--k", "2", "--algorithm", "exact"],
                       capsys)
    assert code == 0
    res = json.loads(out)
    assert res["support"] == [0, 1] and res["value"] == "2" and res["objective"] == "tail"
    assert res["params"]["k"] == 2 and res["algorithm"] == "exact"
    assert "elapsed_ms" in res


def test_project_rejects_zero_k(tree_file, capsys):
    code, _, err = run(["project", "tree-tail", "--input", str(tree_file), "--k", "0"], capsys)
    assert code == 2 and "--k" in err


def test_project_cemd_head(grid_file, capsys):
    code, out, _ = run(["project", "cemd-head", "--input", str(grid_file), "--k", "2", "--B", "0"], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["value"] == "10" and res["support"] == [0, 1]


def test_project_cemd_tail_writes_output(grid_file, tmp_path, capsys):
    out_path = tmp_path / "r.json"
    code, _, _ = run(["project", "cemd-tail", "--input", str(grid_file), "--k", "2", "--B", "1",
                      "--output", str(out_path)], capsys)
    assert code == 0
    res = json.loads(out_path.read_text())
    assert res["objective"] == "tail" and res["value"] == "2"


@pytest.mark.parametrize("problem, algo", [("tree-tail", "fast"), ("tree-tail", "linear"),
                                           ("tree-head", "linear"), ("tree-head", "exact")])
def test_project_value_recomputes_exactly(tmp_path, capsys, problem, algo):
    rng = np.random.default_rng(0)
    sig = SignalFile("tree", rng.integers(0, 100, size=500).tolist())
    path = tmp_path / "big.json"
    write_signal(sig, path)
    code, out, _ = run(["project", problem, "--input", str(path), "--k", "40", "--algorithm", algo,
                        "--delta", "0.5"], capsys)
    assert code == 0
    res = json.loads(out)
    objective = problem.split("-")[1]
    assert from_decimal(res["value"]) == recompute_value(sig, res["support"], objective)
    assert len(res["support"]) <= 40


def test_project_float_p2_value_is_exact_decimal(tmp_path, capsys):
    sig = SignalFile("tree", [0.5, -1.25, 3.0, 0.1, 0.0, 2.5, 0.3], p=2.0)
    path = tmp_path / "f.json"
    write_signal(sig, path)
    code, out, _ = run(["project", "tree-tail", "--input", str(path), "--k", "3", "--algorithm", "exact"],
                       capsys)
    assert code == 0
    res = json.loads(out)
    assert from_decimal(res["value"]) == recompute_value(sig, res["support"], "tail")


def test_project_fast_head_is_rejected(tree_file, capsys):
    code, _, _ = run(["project", "tree-head", "--input", str(tree_file), "--k", "2", "--algorithm", "fast"],
                     capsys)
    assert code == 2


def test_project_cemd_bad_k(grid_file, capsys):
    code, _, err = run(["project", "cemd-head", "--input", str(grid_file), "--k", "3", "--B", "0"], capsys)
    assert code == 2 and "multiple" in err


# ---- malformed input -------------------------------------------------------


def test_malformed_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"kind": "tree",\n "weights": [1, 2,, 3]}')
    code, _, err = run(["project", "tree-tail", "--input", str(p), "--k", "1"], capsys)
    assert code == 2 and "line 2" in err


@pytest.mark.parametrize("doc, field", [
    ({"kind": "tree"}, "weights"),
    ({"kind": "forest", "weights": [1]}, "kind"),
    ({"kind": "tree", "weights": [1, "x"]}, "weights[1]"),
    ({"kind": "grid", "h": 2, "w": 3, "weights": [1, 2]}, "weights"),
    ({"kind": "tree", "weights": [1], "p": 0.5}, "p"),
])
def test_malformed_fields(doc, field):
    with pytest.raises(InputError, match=field.replace("[", r"\[").replace("]", r"\]")):
        parse_json_signal(json.dumps(doc))


def test_malformed_csv_reports_line_and_column():
    with pytest.raises(InputError, match="line 2, column 2"):
        parse_csv_signal("1,2\n3,abc\n", "grid")
    with pytest.raises(InputError, match="different lengths"):
        parse_csv_signal("1,2\n3\n", "grid")
    with pytest.raises(InputError, match="single column"):
        parse_csv_signal("1,2\n", "tree")


def test_missing_file(capsys):
    code, _, err = run(["project", "tree-tail", "--input", "/nonexistent/x.json", "--k", "1"], capsys)
    assert code == 2 and "cannot read" in err


def test_unknown_subcommand(capsys):
    code, _, _ = run(["explode"], capsys)
    assert code == 2


def test_bad_thread_env(tree_file, capsys, monkeypatch):
    monkeypatch.setenv("STRUCT_SPARSE_THREADS", "zero")
    code, _, err = run(["project", "tree-tail", "--input", str(tree_file), "--k", "1"], capsys)
    assert code == 2 and "STRUCT_SPARSE_THREADS" in err
    monkeypatch.setenv("STRUCT_SPARSE_THREADS", "1")
    code, _, _ = run(["project", "tree-tail", "--input", str(tree_file), "--k", "1"], capsys)
    assert code == 0


# ---- round trips -----------------------------------------------------------


@pytest.mark.parametrize("suffix", [".json", ".csv"])
def test_round_trip_bit_exact(tmp_path, suffix):
    rng = np.random.default_rng(2)
    floats = SignalFile("grid", (rng.standard_normal(12) * 1e3).tolist(), h=3, w=4)
    ints = SignalFile("tree", rng.integers(0, 2**40, size=15).tolist())
    tiny = SignalFile("tree", [5e-324, 1.0000000000000002, -0.1, 1e308])
    for sig in (floats, ints, tiny):
        path = tmp_path / f"s{suffix}"
        write_signal(sig, path)
        back = read_signal(path, sig.kind)
        assert back.weights.dtype == sig.weights.dtype
        assert back.weights.tobytes() == sig.weights.tobytes()
        assert (back.h, back.w) == (sig.h, sig.w)


def test_decimal_strings_are_exact():
    from fractions import Fraction
    for v in [0, 7, -3, Fraction(1, 8), Fraction(-5, 2), Fraction(0.1), Fraction(1, 3)]:
        assert from_decimal(to_decimal(v)) == v
    assert to_decimal(Fraction(1, 8)) == "0.125"


# ---- recover and bench -----------------------------------------------------


def test_recover_tree(capsys):
    code, out, _ = run(["recover", "--model", "tree", "--n", "255", "--k", "8", "--m-factor", "6",
                        "--seed", "3"], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["relative_error"] <= 1e-3 and res["in_model"]
    assert res["params"]["m"] == 48
    assert len(res["support"]) <= 8


def test_recover_overdetermined_is_machine_precision(capsys):
    code, out, _ = run(["recover", "--model", "tree", "--n", "63", "--k", "8", "--m-factor", "50",
                        "--noise", "0"], capsys)
    res = json.loads(out)
    assert code == 0 and res["relative_error"] < 1e-12


def test_recover_cemd(capsys):
    code, out, _ = run(["recover", "--model", "cemd", "--h", "8", "--w", "8", "--k", "16", "--B", "8"], capsys)
    res = json.loads(out)
    assert code == 0 and res["in_model"] and res["params"]["m"] == 64


def test_recover_missing_dimensions(capsys):
    assert run(["recover", "--model", "tree", "--k", "4"], capsys)[0] == 2
    assert run(["recover", "--model", "cemd", "--h", "4", "--w", "3", "--k", "4"], capsys)[0] == 2


def test_parse_sizes():
    assert parse_sizes("2^3..2^5,100") == [8, 16, 32, 100]
    with pytest.raises(InputError):
        parse_sizes("abc")


@pytest.mark.parametrize("suite, sizes", [("tree", "2^8,2^9"), ("conv", "64,128"), ("cemd", "4")])
def test_bench_suites(suite, sizes, tmp_path, capsys):
    out_path = tmp_path / "b.json"
    code, out, _ = run(["bench", "--suite", suite, "--sizes", sizes, "--seeds", "1", "--output", str(out_path)],
                       capsys)
    assert code == 0 and "median time" in out
    rep = json.loads(out_path.read_text())
    assert len(rep["rows"]) == len(sizes.split(","))
    for row in rep["rows"]:
        if suite == "tree" and row["ratio"] is not None:
            assert row["ratio"] <= 1.1
        if suite == "conv":
            assert row["ratio"] <= 1.1 + 1e-12
        if suite == "cemd" and row["ratio"] is not None:
            assert 0.2 <= row["ratio"] <= 1


def test_module_entry_point(tree_file):
    proc = subprocess.run([sys.executable, "-m", "structsparse", "project", "tree-tail", "--input",
                           str(tree_file), "--k", "2", "--algorithm", "exact"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["value"] == "2"
