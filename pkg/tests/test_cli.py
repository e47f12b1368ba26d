import csv
import io
import subprocess
import sys

import pytest

from imtree.cli import EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, cmd_trees, main, parse_grid


def run(tmp_path, *argv):
    out = tmp_path / "out.csv"
    out.unlink(missing_ok=True)
    code = main([*argv, "--out", str(out)])
    return code, out.read_text() if out.exists() else ""


def rows(text):
    body = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def test_parse_grid():
    assert parse_grid("-10:10:30") == [-10, 0, 10, 20, 30]
    assert parse_grid("5") == [5.0]
    assert parse_grid("0:2.5:5") == [0.0, 2.5, 5.0]
    for bad in ("0:0:5", "5:1:0", "a:b:c", "1:2"):
        with pytest.raises(Exception):
            parse_grid(bad)


def test_negative_grid_argument(tmp_path):
    code, text = run(tmp_path, "mi-curve", "--methods", "upper", "--snr-db", "-20:10:0", "--samples", "0",
                     "--seed", "1")
    assert code == EXIT_OK
    assert [x["snr_db"] for x in rows(text)] == ["-20.0", "-10.0", "0.0"]


def test_trees_table(tmp_path):
    code, text = run(tmp_path, "trees", "--v-max", "12")
    assert code == EXIT_OK
    r = rows(text)
    assert [int(x["T_v"]) for x in r][-3:] == [89, 159, 285]
    assert int(r[9]["tight_bound"]) == 90 and int(r[9]["catalan"]) == 16796
    assert text.rstrip().splitlines()[-1].startswith("# imtree ")


def test_trees_guard(tmp_path):
    assert main(["trees", "--v-max", "21"]) == EXIT_USAGE
    assert len(cmd_trees(3)) == 3


def test_project_skewed_input(tmp_path):
    code, text = run(tmp_path, "project", "--probs", "0.51,0.26,0.18,0.05", "--metric", "kl")
    assert code == EXIT_OK
    winner = [x for x in rows(text) if x["winner"] == "1"]
    assert winner[0]["probabilities"] == "1/2 1/4 1/8 1/8"
    assert "codebook sap 1: 1; sap 2: 01; sap 3: 000; sap 4: 001" in text
    assert "seed=none; threads=1" in text


def test_project_rejects_bad_input(capsys):
    assert main(["project", "--probs", "0.5,0.6"]) == EXIT_USAGE
    assert "sum to 1" in capsys.readouterr().err
    assert main(["project", "--probs", "0.5,x"]) == EXIT_USAGE


def test_mi_curve_closed_form_needs_no_samples(tmp_path):
    code, text = run(tmp_path, "mi-curve", "--methods", "upper,jensen", "--snr-db", "0:10:20",
                     "--samples", "0", "--seed", "1")
    assert code == EXIT_OK
    r = rows(text)
    assert len(r) == 6 and all(x["samples"] == "0" for x in r)
    jensen = {x["snr_db"]: x["flag"] for x in r if x["method"] == "jensen"}
    assert jensen["0.0"] == "singular_fallback" and jensen["20.0"] == ""
    upper = [float(x["mi_nats"]) for x in r if x["method"] == "upper"]
    assert upper == sorted(upper)


def test_mi_curve_usage_errors(tmp_path):
    assert main(["mi-curve", "--methods", "mc", "--samples", "10", "--seed", "1"]) == EXIT_USAGE
    assert main(["mi-curve", "--methods", "nonsense", "--seed", "1"]) == EXIT_USAGE
    assert main(["mi-curve", "--n", "2", "--k", "3", "--methods", "upper", "--seed", "1"]) == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["mi-curve", "--methods", "upper"])  # --seed is required


def test_mi_curve_is_byte_identical(tmp_path):
    argv = ["mi-curve", "--methods", "mc,high_snr,benchmark", "--snr-db", "0:10:20",
            "--samples", "2000", "--seed", "9", "--threads", "2"]
    _, a = run(tmp_path, *argv)
    _, b = run(tmp_path, *argv)
    assert a == b
    _, c = run(tmp_path, *argv[:-3], "10", "--threads", "2")
    assert c != a


def test_optimize_projected(tmp_path):
    code, text = run(tmp_path, "optimize", "--method", "projected", "--snr-db", "20",
                     "--samples", "2000", "--seed", "3")
    assert code == EXIT_OK
    r = rows(text)
    assert len(r) == 6 and abs(sum(float(x["probability"]) for x in r) - 1) < 1e-12
    assert "mi_nats=" in text


def test_optimize_bcd_rejects_large_n(tmp_path):
    code, text = run(tmp_path, "optimize", "--method", "bcd", "--n", "5", "--seed", "1")
    assert code == EXIT_USAGE


def test_bler_partial_exit_code(tmp_path):
    code, text = run(tmp_path, "bler", "--modes", "benchmark", "--snr-db", "25",
                     "--target-errors", "50", "--block-cap", "20000", "--seed", "4")
    assert code == EXIT_PARTIAL
    r = rows(text)
    assert r[0]["flag"] == "partial" and r[0]["blocks"] == "20000"


def test_bler_is_byte_identical(tmp_path):
    argv = ["bler", "--modes", "benchmark", "--snr-db", "0:5:5", "--target-errors", "100",
            "--seed", "5", "--threads", "2"]
    code, a = run(tmp_path, *argv)
    _, b = run(tmp_path, *argv)
    assert code == EXIT_OK and a == b


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "imtree", "trees", "--v-max", "4"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.splitlines()[0] == "v,T_v,loose_bound,tight_bound,catalan"
