import json
import subprocess
import sys

import numpy as np
import pytest

from repdim.cli import main
from repdim.oracle import hidden_nullspace, minimality, pythagoras


@pytest.fixture
def labelled_csv(tmp_path):
    path = tmp_path / "cm.csv"
    assert main(["generate", "class-manifolds", "--n", "300", "--classes", "3", "--dim", "2",
                 "--ambient-dim", "8", "--out", str(path)]) == 0
    return path


class TestExitCodes:
    def test_no_command_is_usage(self, capsys):
        assert main([]) == 1

    def test_bad_flag_is_usage(self):
        assert main(["estimate", "x.csv", "--method", "pca"]) == 1

    def test_missing_input_is_data_error(self, tmp_path):
        assert main(["estimate", str(tmp_path / "missing.csv")]) == 2

    def test_garbage_file_is_data_error(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3,oops\n")
        assert main(["estimate", str(p)]) == 2

    def test_too_few_points_is_estimation_error(self, tmp_path):
        p = tmp_path / "few.csv"
        assert main(["generate", "hypercube", "--n", "10", "--out", str(p)]) == 0
        assert main(["estimate", str(p)]) == 3

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "repdim", "estimate"], capture_output=True, text=True)
        assert r.returncode == 1 and "error" in r.stderr


class TestSubcommands:
    def test_generate_estimate_local(self, tmp_path, capsys):
        p = tmp_path / "cube.csv"
        assert main(["generate", "hypercube", "--n", "2000", "--dim", "3", "--seed", "1", "--out", str(p)]) == 0
        assert len(p.read_text().splitlines()) == 2000
        capsys.readouterr()
        assert main(["estimate", str(p)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert abs(doc["dimension"] - 3) < 0.45

    def test_estimate_global(self, tmp_path):
        p, out = tmp_path / "s.csv", tmp_path / "g.json"
        main(["generate", "hypersphere", "--n", "800", "--dim", "1", "--out", str(p)])
        assert main(["estimate", str(p), "--method", "global", "--d-max", "5", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["dimension"] == 1

    def test_full_precision(self, tmp_path, capsys):
        p = tmp_path / "cube.csv"
        main(["generate", "hypercube", "--n", "500", "--dim", "2", "--out", str(p)])
        capsys.readouterr()
        main(["estimate", str(p)])
        doc = json.loads(capsys.readouterr().out)
        from repdim.data import load_csv
        from repdim.local_id import estimate_local_id

        assert doc["dimension"] == estimate_local_id(load_csv(p)).dimension

    def test_per_class(self, labelled_csv, tmp_path):
        out = tmp_path / "pc.json"
        assert main(["estimate", str(labelled_csv), "--per-class", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert len(doc["classes"]) == 3
        assert doc["mean"] == pytest.approx(np.mean([c["dimension"] for c in doc["classes"]]), abs=1e-12)

    def test_train_then_probe(self, labelled_csv, tmp_path):
        ck, trace, rep, rows = (tmp_path / n for n in ("m.json", "loss.csv", "r.json", "r.csv"))
        assert main(["train", str(labelled_csv), "--widths", "16", "16", "16", "--epochs", "5",
                     "--lr", "1e-3", "--checkpoint", str(ck), "--loss-trace", str(trace)]) == 0
        lines = trace.read_text().splitlines()
        assert lines[0] == "epoch,loss" and len(lines) == 7
        assert main(["probe", str(ck), str(labelled_csv), "--out", str(rep), "--csv", str(rows)]) == 0
        doc = json.loads(rep.read_text())
        assert len(doc["entries"]) == 5 * 3
        assert "phases" in doc
        assert len(rows.read_text().splitlines()) == 1 + 15

    def test_train_bad_config_key(self, labelled_csv, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"momentum": 0.9}))
        assert main(["train", str(labelled_csv), "--config", str(cfg), "--checkpoint", str(tmp_path / "m")]) == 1

    def test_run(self, tmp_path, capsys):
        cfg = {
            "dataset": {"source": "generator", "n_per_class": 50, "n_classes": 2, "latent_dim": 2, "ambient_dim": 6},
            "model": {"hidden_widths": [8, 8]},
            "train": {"epochs": 2, "learning_rate_start": 1e-3},
            "output": {"dir": str(tmp_path / "o")},
        }
        path = tmp_path / "run.json"
        path.write_text(json.dumps(cfg))
        assert main(["run", str(path)]) == 0
        assert len(capsys.readouterr().out.split()) == 5

    def test_run_invalid_config(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"dataset": {"source": "generator"}, "output": {"dir": "x"}, "extra": 1}))
        assert main(["run", str(path)]) == 1
        path.write_text("{not json")
        assert main(["run", str(path)]) == 2


class TestOracle:
    def test_structural_checks(self):
        assert minimality() >= -1e-12
        assert hidden_nullspace() < 1e-10
        assert pythagoras() < 1e-10

    @pytest.mark.slow
    def test_quick_suite(self, capsys):
        assert main(["oracle", "--quick"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[-1] == "8/8 checks passed"
        assert all(line.startswith("[PASS]") for line in out[:-1])
