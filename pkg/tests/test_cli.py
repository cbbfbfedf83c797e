import csv
import json

import numpy as np
import pytest

from scfa import FitDocument, generate
from scfa.cli import main

from conftest import STUDY_A, study_spec
from test_fileio import assert_valid_dot


def _write_dataset(tmp_path, n=400, seed=72):
    spec = study_spec(n=n, multiplier=1, seed=seed)
    data, _ = generate(spec)
    names = [f"g{j + 1}" for j in range(10)]
    data_path = tmp_path / "data.csv"
    rows = [",".join(names)]
    rows += [",".join(repr(float(v)) for v in row) for row in data.values]
    data_path.write_text("\n".join(rows) + "\n")
    labels = np.repeat(["c1", "c2", "c3"], [3, 3, 4])
    member_path = tmp_path / "membership.csv"
    member_path.write_text(
        "".join(f"{name},{lab}\n" for name, lab in zip(names, labels))
    )
    return data_path, member_path, spec


class TestFitCommand:
    def test_end_to_end(self, tmp_path, capsys):
        data_path, member_path, spec = _write_dataset(tmp_path)
        out = tmp_path / "fit.json"
        dot = tmp_path / "diagram.dot"
        scores = tmp_path / "scores.csv"
        code = main([
            "fit", "--data", str(data_path), "--membership", str(member_path),
            "--header", "--out", str(out), "--dot", str(dot),
            "--scores", str(scores),
        ])
        assert code == 0
        document = FitDocument.load(out)
        assert document.sizes == (3, 3, 4)
        assert [v[0] for v in document.variables] == [f"g{j + 1}" for j in range(10)]
        assert len(document.inference) == 9
        assert document.provenance["data_sha256"]
        # truth recovery: each error variance within 3 plug-in SEs
        by_name = {r["name"]: r for r in document.to_dict()["inference"]}
        for k, truth in enumerate(STUDY_A):
            rec = by_name[f"a_{k + 1}{k + 1}"]
            assert abs(rec["estimate"] - truth) < 3.0 * rec["standard_error"]
        assert_valid_dot(dot.read_text())
        lines = scores.read_text().strip().splitlines()
        assert lines[0] == "f1,f2,f3"
        assert len(lines) == 401

    def test_fit_original_order_with_scattered_membership(self, tmp_path):
        data_path, member_path, spec = _write_dataset(tmp_path)
        # rewrite the membership file in scrambled order; fit must still
        # report variables in data order
        records = member_path.read_text().strip().splitlines()
        member_path.write_text("\n".join(records[::-1]) + "\n")
        out = tmp_path / "fit.json"
        code = main([
            "fit", "--data", str(data_path), "--membership", str(member_path),
            "--header", "--out", str(out),
        ])
        assert code == 0
        document = FitDocument.load(out)
        assert [v[0] for v in document.variables] == [f"g{j + 1}" for j in range(10)]

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code = main([
            "fit", "--data", str(tmp_path / "nope.csv"),
            "--membership", str(tmp_path / "m.csv"), "--out", str(tmp_path / "o"),
        ])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("scfa-error code=2")

    def test_ragged_data_exits_2(self, tmp_path, capsys):
        data_path = tmp_path / "data.csv"
        data_path.write_text("1,2\n3\n")
        member_path = tmp_path / "m.csv"
        member_path.write_text("v1,A\nv2,A\n")
        code = main([
            "fit", "--data", str(data_path), "--membership", str(member_path),
            "--out", str(tmp_path / "o.json"),
        ])
        assert code == 2
        assert "RaggedRows" in capsys.readouterr().err

    def test_usage_error_exits_1(self, capsys):
        assert main(["fit", "--data"]) == 1
        assert main(["no-such-command"]) == 1
        assert capsys.readouterr().err.startswith("scfa-error code=1")


class TestSimulateCommand:
    def test_runs_study(self, tmp_path):
        config = {
            "n": 40,
            "sizes": [3, 3, 4],
            "a": list(STUDY_A),
            "b": [[2.02, 0.73, 1.15], [0.73, 3.13, 1.63], [1.15, 1.63, 3.69]],
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))
        out = tmp_path / "report.json"
        out_csv = tmp_path / "report.csv"
        code = main([
            "simulate", "--config", str(config_path), "--reps", "10",
            "--seed", "3", "--out", str(out), "--csv", str(out_csv),
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["replicates"] == 10
        assert payload["master_seed"] == 3
        assert len(out_csv.read_text().strip().splitlines()) == 10

    def test_bad_config_exits_2(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps({"n": 40, "sizes": [3, 3]}))
        code = main([
            "simulate", "--config", str(config_path), "--reps", "5",
            "--out", str(tmp_path / "r.json"),
        ])
        assert code == 2

    def test_invalid_spec_exits_2(self, tmp_path, capsys):
        config = {"n": 40, "sizes": [3, 3], "a": [0.0, 1.0], "b": [[1, 0], [0, 1]]}
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))
        code = main([
            "simulate", "--config", str(config_path), "--reps", "5",
            "--out", str(tmp_path / "r.json"),
        ])
        assert code == 2
        assert "InvalidSpec" in capsys.readouterr().err


class TestUbmatCommand:
    def test_det_identity(self, tmp_path, capsys):
        path = tmp_path / "matrix.json"
        path.write_text(json.dumps({"sizes": [3, 3], "a": [1, 1], "b": [[0, 0], [0, 0]]}))
        assert main(["ubmat", "det", "--in", str(path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload == {"sign": 1.0, "log_determinant": 0.0}

    def test_eig(self, tmp_path, capsys):
        path = tmp_path / "matrix.json"
        path.write_text(json.dumps({"sizes": [3], "a": [1.0], "b": [[1.0]]}))
        assert main(["ubmat", "eig", "--in", str(path)]) == 0
        eigs = json.loads(capsys.readouterr().out)["eigenvalues"]
        assert eigs == pytest.approx([1.0, 1.0, 4.0])

    def test_inv_round_trip(self, tmp_path, capsys):
        path = tmp_path / "matrix.json"
        path.write_text(json.dumps({"sizes": [2], "a": [1.0], "b": [[1.0]]}))
        out = tmp_path / "inverse.json"
        assert main(["ubmat", "inv", "--in", str(path), "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["a"] == [1.0]
        assert payload["b"][0][0] == pytest.approx(-1.0 / 3.0)

    def test_singular_exits_3(self, tmp_path, capsys):
        path = tmp_path / "matrix.json"
        path.write_text(json.dumps({"sizes": [3], "a": [0.0], "b": [[1.0]]}))
        code = main(["ubmat", "inv", "--in", str(path)])
        assert code == 3
        assert "SingularMatrix" in capsys.readouterr().err

    def test_check(self, tmp_path, capsys):
        path = tmp_path / "matrix.json"
        path.write_text(json.dumps({"sizes": [3, 3], "a": [1, 1], "b": [[0, 0], [0, 0]]}))
        assert main(["ubmat", "check", "--in", str(path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["positive_definite"] is True
        assert payload["p"] == 6


class TestReproduceCommand:
    def test_table3_relative_losses(self, tmp_path, capsys):
        code = main(["reproduce", "table3", "--seed", "7", "--out", str(tmp_path)])
        assert code == 0
        rows = list(csv.DictReader((tmp_path / "table3.csv").open()))
        rel = {
            float(r["noise_scale"]): float(r["bias_x100"])
            for r in rows
            if r["parameter"] == "relative_loss"
        }
        assert set(rel) == {2.0, 6.0, 10.0}
        assert rel[2.0] == pytest.approx(11.0, abs=2.0)
        assert rel[6.0] == pytest.approx(18.0, abs=3.0)
        assert rel[10.0] == pytest.approx(24.0, abs=4.0)
        # a-parameters: coverage collapses to zero under noise
        a_rows = [r for r in rows if r["parameter"].startswith("a_")]
        assert all(float(r["cp_x100"]) == 0.0 for r in a_rows)

    def test_table1_row_40_20(self, tmp_path):
        code = main(["reproduce", "table1", "--seed", "7", "--out", str(tmp_path)])
        assert code == 0
        rows = list(csv.DictReader((tmp_path / "table1.csv").open()))
        assert len(rows) == 9
        first = rows[0]
        assert (first["n"], first["p"]) == ("40", "20")
        assert 11.4 <= float(first["mean_loss"]) <= 12.9
