import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ssmmem import cli


def run_dir(root, command):
    dirs = sorted(root.glob(f"{command}-*"))
    assert len(dirs) == 1
    return dirs[0]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_mf_example_values_in_range(tmp_path):
    code = cli.run(["mf", "--tag", "s4dlin", "--n", "32", "--delta", "0.01", "--T", "1024", "--seed", "1",
                    "--out-dir", str(tmp_path)])
    assert code == 0
    rows = read_csv(run_dir(tmp_path, "mf") / "mf.csv")
    assert rows
    values = np.array([float(r["value"]) for r in rows])
    assert np.all((values >= 0) & (values <= 1 + 1e-6))


def test_vandermonde_example_rank_bound(tmp_path):
    code = cli.run(["vandermonde", "--tag", "random", "--n", "32", "--T", "1024", "--seed", "1",
                    "--out-dir", str(tmp_path)])
    assert code == 0
    diag = json.loads((run_dir(tmp_path, "vandermonde") / "vandermonde.json").read_text())
    assert diag["effective_rank"] <= 32


def test_compare_example_row_count(tmp_path):
    # the row count does not depend on the epoch budget, so a short run suffices
    code = cli.run(["compare", "--tags", "s4dinv,s4dlin,random,lin,step", "--task", "delay:20", "--seeds", "6",
                    "--n", "8", "--T", "256", "--epochs", "2", "--workers", "2", "--out-dir", str(tmp_path)])
    assert code == 0
    out = run_dir(tmp_path, "compare")
    rows = read_csv(out / "comparison.csv")
    assert len(rows) == 60
    assert list(rows[0]) == ["tag", "mode", "seed", "final_mse", "epochs_to_0.01", "diverged"]
    assert {(r["tag"], r["mode"]) for r in rows} == {
        (t, m) for t in ("s4dinv", "s4dlin", "random", "lin", "step") for m in ("rc", "trainable_eig")
    }


def test_every_command_writes_manifest(tmp_path):
    commands = [
        ["spectra", "--tag", "random", "--n", "5"],
        ["simulate", "--tag", "lin", "--n", "4", "--T", "64", "--dump-states"],
        ["gradcheck", "--n", "4", "--T", "128"],
        ["train", "--tag", "random", "--n", "4", "--T", "128", "--epochs", "3"],
    ]
    for argv in commands:
        assert cli.run(argv + ["--out-dir", str(tmp_path)]) == 0
        man = json.loads((run_dir(tmp_path, argv[0]) / "manifest.json").read_text())
        assert man["status"] == "ok"
        assert man["command"] == argv[0]
        assert set(cli.DEFAULTS[argv[0]]) <= set(man["config"])
        for name, digest in man["artifacts"].items():
            assert cli.sha256_file(run_dir(tmp_path, argv[0]) / name) == digest
    states = read_csv(run_dir(tmp_path, "simulate") / "states.csv")
    assert len(states) == 64


def test_validation_errors_exit_1(tmp_path, capsys):
    assert cli.run(["mf", "--n", "0", "--out-dir", str(tmp_path)]) == 1
    assert cli.run(["mf", "--tag", "nope"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"command": "mf", "colour": "red"}))
    assert cli.run(["mf", "--config", str(bad), "--out-dir", str(tmp_path)]) == 1
    assert cli.run(["mf", "--config", str(tmp_path / "missing.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_divergence_exits_2(tmp_path):
    code = cli.run(["train", "--tag", "random", "--n", "4", "--T", "128", "--mode", "trainable_eig",
                    "--optimizer", "sgd", "--lr-eig", "5", "--eig-param", "direct", "--epochs", "20",
                    "--radius", "0.95", "--out-dir", str(tmp_path)])
    assert code == 2
    man = json.loads((run_dir(tmp_path, "train") / "manifest.json").read_text())
    assert man["status"] == "diverged"


def test_unstable_gradcheck_exits_2(tmp_path):
    code = cli.run(["gradcheck", "--tag", "s4dinv", "--n", "32", "--delta", "0.01", "--T", "128",
                    "--out-dir", str(tmp_path)])
    data = json.loads((run_dir(tmp_path, "gradcheck") / "gradcheck.json").read_text())
    assert code == 0 and data["unstable"] and data["fixed_point_residual"] is None


def test_report_empty_dir(tmp_path, capsys):
    assert cli.run(["report", str(tmp_path)]) == 1
    assert "no manifests found" in capsys.readouterr().err


def test_report_one_mf_run(tmp_path):
    assert cli.run(["mf", "--tag", "random", "--n", "6", "--T", "256", "--out-dir", str(tmp_path)]) == 0
    assert cli.run(["report", str(tmp_path)]) == 0
    text = (run_dir(tmp_path, "report") / "summary.md").read_text()
    assert text.count("## Memory function") == 1


def test_report_detects_tampering(tmp_path):
    assert cli.run(["vandermonde", "--tag", "lin", "--n", "4", "--T", "64", "--out-dir", str(tmp_path)]) == 0
    (run_dir(tmp_path, "vandermonde") / "singular_values.csv").write_text("tampered\n")
    assert cli.run(["report", str(tmp_path)]) == 1


def test_rerun_from_manifest_is_byte_identical(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert cli.run(["mf", "--tag", "step", "--n", "8", "--T", "512", "--seed", "3", "--out-dir", str(first)]) == 0
    src = run_dir(first, "mf")
    assert cli.run(["mf", "--config", str(src / "manifest.json"), "--out-dir", str(second)]) == 0
    dst = run_dir(second, "mf")
    assert src.name == dst.name
    for name in ("mf.csv", "mf.json"):
        assert (src / name).read_bytes() == (dst / name).read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"command": "spectra", "tag": "lin", "n": 3}))
    assert cli.run(["spectra", "--config", str(conf), "--n", "5", "--out-dir", str(tmp_path)]) == 0
    man = json.loads((run_dir(tmp_path, "spectra") / "manifest.json").read_text())
    assert man["config"]["tag"] == "lin" and man["config"]["n"] == 5


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "envroot"))
    assert cli.run(["spectra", "--tag", "random", "--n", "3"]) == 0
    assert run_dir(tmp_path / "envroot", "spectra").is_dir()


def test_csv_float_format_round_trips():
    x = 0.1 + 0.2
    assert float(cli.fmt(x)) == x


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ssmmem", "spectra", "--tag", "lin", "--n", "2",
                           "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert run_dir(tmp_path, "spectra").is_dir()
