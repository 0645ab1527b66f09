import dataclasses
import json

import pytest

from bilevelgossip import __version__
from bilevelgossip.cli import main
from bilevelgossip.metrics import read_log

BASE = """
[topology]
kind = "ring"
m = 6

[compressor]
kind = "top_k"
ratio = 0.3

[problem]
family = "quadratic"

[schedule]
eta_in = 0.1
eta_out = 0.05
gamma_in = 0.3
gamma_out = 0.5
lambda = 50.0
inner_steps = 8
rounds = 30
"""


@pytest.fixture
def base_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(BASE)
    return path


def read_summary(out_dir):
    files = sorted(out_dir.glob("summary_*.json"))
    assert len(files) == 1
    return json.loads(files[0].read_text())


class TestRun:
    def test_writes_csv_and_summary(self, base_config, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--config", str(base_config), "--output-dir", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "config hash: " in stdout
        assert "final value_surrogate: " in stdout
        assert "final grad_norm_oracle: " in stdout
        assert "total payload words: " in stdout
        summary = read_summary(out)
        records = read_log(out / summary["csv"])
        assert len(records) == 31
        assert summary["rounds"] == 30
        assert summary["config_hash"] in summary["csv"]
        assert summary["payload_words"]["total"] == records[-1].payload_words_total

    def test_summary_echo_reproduces_csv(self, base_config, tmp_path, capsys):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(base_config), "--output-dir", str(out1)]) == 0
        summary_path = sorted(out1.glob("summary_*.json"))[0]
        assert main(["run", "--config", str(summary_path), "--output-dir", str(out2)]) == 0
        s1, s2 = read_summary(out1), read_summary(out2)
        assert s1["config_hash"] == s2["config_hash"]
        recs1 = read_log(out1 / s1["csv"])
        recs2 = read_log(out2 / s2["csv"])
        for a, b in zip(recs1, recs2):
            for f in dataclasses.fields(a):
                if f.name != "wall_seconds":
                    assert getattr(a, f.name) == getattr(b, f.name)

    def test_variant_override_lands_in_summary(self, base_config, tmp_path):
        out = tmp_path / "out"
        assert main([
            "run", "--config", str(base_config), "--output-dir", str(out),
            "--variant", "uncompressed",
        ]) == 0
        assert read_summary(out)["config"]["variant"] == "uncompressed"

    def test_advisory_printed_for_tiny_lam(self, base_config, tmp_path, capsys):
        cfg = (tmp_path / "low.toml")
        cfg.write_text(BASE.replace("lambda = 50.0", "lambda = 0.001"))
        assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "o")]) == 0
        assert "advisory:" in capsys.readouterr().err

    def test_bad_config_exits_1(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(BASE.replace("lambda = 50.0", "lamda = 50.0"))
        assert main(["run", "--config", str(cfg)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_config_exits_1(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "none.toml")]) == 1
        assert "cannot read" in capsys.readouterr().err

    def test_divergence_exits_2(self, base_config, tmp_path, capsys):
        cfg = tmp_path / "diverge.toml"
        cfg.write_text(
            BASE.replace("eta_in = 0.1", "eta_in = 500.0").replace(
                "inner_steps = 8", "inner_steps = 25"
            )
        )
        import numpy as np

        with np.errstate(over="ignore", invalid="ignore"):
            code = main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "o")])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestSweep:
    def test_lambda_axis_reduces_bias(self, base_config, tmp_path, capsys):
        out = tmp_path / "sweep"
        code = main([
            "sweep", "--config", str(base_config), "--axis", "lambda",
            "--values", "10,20,40,80", "--output-dir", str(out),
        ])
        assert code == 0
        stdout = capsys.readouterr().out
        assert stdout.count("  ok ") == 4
        doc = json.loads((out / "sweep_summary.json").read_text())
        assert doc["axis"] == "lambda"
        assert [row["value"] for row in doc["rows"]] == [10.0, 20.0, 40.0, 80.0]
        biases = [row["final"]["hypergrad_bias"] for row in doc["rows"]]
        assert biases[-1] < 0.25 * biases[0]  # bias shrinks like 1/lambda

    def test_ratio_axis_scales_payload(self, tmp_path):
        cfg = tmp_path / "wide.toml"
        cfg.write_text(BASE.replace('family = "quadratic"', 'family = "quadratic"\ndim_y = 20'))
        out = tmp_path / "sweep"
        assert main([
            "sweep", "--config", str(cfg), "--axis", "ratio",
            "--values", "0.1,0.2,0.3", "--output-dir", str(out),
        ]) == 0
        doc = json.loads((out / "sweep_summary.json").read_text())
        totals = []
        for row in doc["rows"]:
            recs = read_log(out / row["csv"])
            totals.append(recs[-1].payload_words_total)
        assert totals[0] < totals[1] < totals[2]

    def test_variant_axis(self, base_config, tmp_path):
        out = tmp_path / "sweep"
        assert main([
            "sweep", "--config", str(base_config), "--axis", "variant",
            "--values", "c2dfb,naive,uncompressed", "--output-dir", str(out),
        ]) == 0
        doc = json.loads((out / "sweep_summary.json").read_text())
        assert [row["status"] for row in doc["rows"]] == ["ok"] * 3

    def test_failed_cell_exits_2_but_keeps_rows(self, base_config, tmp_path, capsys):
        out = tmp_path / "sweep"
        code = main([
            "sweep", "--config", str(base_config), "--axis", "lambda",
            "--values", "10,-5", "--output-dir", str(out),
        ])
        assert code == 2
        assert "failed: " in capsys.readouterr().out
        doc = json.loads((out / "sweep_summary.json").read_text())
        assert doc["rows"][0]["status"] == "ok"
        assert doc["rows"][1]["status"].startswith("failed")

    def test_parallel_jobs(self, base_config, tmp_path):
        out = tmp_path / "sweep"
        assert main([
            "sweep", "--config", str(base_config), "--axis", "inner_steps",
            "--values", "4,8", "--jobs", "2", "--output-dir", str(out),
        ]) == 0
        doc = json.loads((out / "sweep_summary.json").read_text())
        assert len(doc["rows"]) == 2

    def test_unknown_axis_exits_1(self, base_config, capsys):
        assert main([
            "sweep", "--config", str(base_config), "--axis", "temperature",
            "--values", "1,2",
        ]) == 1
        assert "cannot sweep" in capsys.readouterr().err


class TestTopologyInfo:
    def test_ring_of_four(self, tmp_path, capsys):
        cfg = tmp_path / "topo.toml"
        cfg.write_text(BASE.replace("m = 6", "m = 4"))
        assert main(["topology-info", "--config", str(cfg)]) == 0
        stdout = capsys.readouterr().out
        assert "kind: ring" in stdout
        assert "nodes: 4" in stdout
        assert "edges: 4" in stdout
        assert "second eigenvalue: 0.333333333333" in stdout
        assert "spectral gap: 0.666666666667" in stdout
        assert "edge list: 0-1 0-3 1-2 2-3" in stdout

    def test_requires_topology_section(self, tmp_path, capsys):
        cfg = tmp_path / "empty.toml"
        cfg.write_text('[compressor]\nkind = "identity"\n')
        assert main(["topology-info", "--config", str(cfg)]) == 1
        assert "no [topology] section" in capsys.readouterr().err


class TestCheckCompressor:
    def test_identity_is_exact(self, tmp_path, capsys):
        cfg = tmp_path / "ident.toml"
        cfg.write_text('[compressor]\nkind = "identity"\n')
        assert main(["check-compressor", "--config", str(cfg), "--trials", "200"]) == 0
        stdout = capsys.readouterr().out
        assert "worst contraction ratio: 0.000000" in stdout
        assert "violations: 0" in stdout

    def test_top_k_within_bound(self, tmp_path, capsys):
        cfg = tmp_path / "topk.toml"
        cfg.write_text('[compressor]\nkind = "top_k"\nratio = 0.2\n')
        assert main(["check-compressor", "--config", str(cfg), "--trials", "300"]) == 0
        assert "violations: 0" in capsys.readouterr().out

    def test_overstated_bound_is_flagged(self, tmp_path, capsys):
        # rescaling a heavily random operator: the nominal contraction
        # bound undershoots the measured mean, and the check says so
        cfg = tmp_path / "resc.toml"
        cfg.write_text('[compressor]\nkind = "rescaled"\ninner = "rand_k"\nratio = 0.5\n')
        assert main(["check-compressor", "--config", str(cfg), "--trials", "300"]) == 2
        stdout = capsys.readouterr().out
        assert "violations: 0" not in stdout

    def test_requires_compressor_section(self, tmp_path, capsys):
        cfg = tmp_path / "empty.toml"
        cfg.write_text('[topology]\nkind = "ring"\nm = 4\n')
        assert main(["check-compressor", "--config", str(cfg)]) == 1
        assert "no [compressor] section" in capsys.readouterr().err


class TestVersion:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out
