"""Command-line flows: synth -> train -> recommend -> evaluate, plus
configuration handling and the gradcheck command."""

import json

import pytest

from holderrec.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main(["synth", "--out-dir", str(out), "--holders", "40", "--funds", "10",
                 "--seed", "5"])
    assert code == 0
    return out


def synth_files(data_dir):
    return (str(data_dir / "holdings_2021Q3.csv"), str(data_dir / "holdings_2021Q4.csv"))


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    ckpt = out / "model.ckpt"
    loss = out / "loss.csv"
    t_csv, _ = synth_files(data_dir)
    code = main(["train", "--data", t_csv, "--quarter", "2021Q3",
                 "--checkpoint-out", str(ckpt), "--loss-out", str(loss),
                 "--epochs", "6", "--embedding-dim", "8", "--hidden-dim", "8",
                 "--mlp-hidden", "6", "--seed", "3"])
    assert code == 0
    return ckpt, loss


class TestSynth:
    def test_writes_quarters_and_styles(self, data_dir):
        assert (data_dir / "holdings_2021Q3.csv").exists()
        assert (data_dir / "holdings_2021Q4.csv").exists()
        styles = json.loads((data_dir / "styles.json").read_text())
        assert set(styles) == {"holder_styles", "fund_styles", "fund_attributes"}


class TestTrain:
    def test_loss_curve_written(self, trained):
        _, loss = trained
        lines = loss.read_text().strip().splitlines()
        assert lines[0] == "epoch,loss"
        assert len(lines) == 7

    def test_missing_checkpoint_flag_errors(self, data_dir, capsys):
        t_csv, _ = synth_files(data_dir)
        code, _, err = run(capsys, "train", "--data", t_csv, "--quarter", "2021Q3")
        assert code == 1
        assert "checkpoint" in err


class TestRecommend:
    def test_prints_ranked_holders(self, data_dir, trained, capsys):
        ckpt, _ = trained
        t_csv, _ = synth_files(data_dir)
        code, out, _ = run(capsys, "recommend", "--checkpoint", str(ckpt),
                           "--data", t_csv, "--fund", "F001", "--top", "5")
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 5
        assert lines[0].startswith("1\tH")

    def test_unknown_fund_names_the_id(self, data_dir, trained, capsys):
        ckpt, _ = trained
        t_csv, _ = synth_files(data_dir)
        code, _, err = run(capsys, "recommend", "--checkpoint", str(ckpt),
                           "--data", t_csv, "--fund", "F999")
        assert code == 1
        assert "F999" in err

    def test_byte_identical_across_runs(self, data_dir, trained, capsys):
        ckpt, _ = trained
        t_csv, _ = synth_files(data_dir)
        args = ("recommend", "--checkpoint", str(ckpt), "--data", t_csv,
                "--fund", "F002", "--top", "8", "--new-only")
        code1, out1, _ = run(capsys, *args)
        code2, out2, _ = run(capsys, *args)
        assert code1 == code2 == 0
        assert out1 == out2


class TestFeaturize:
    def test_summary_and_npz_output(self, data_dir, tmp_path, capsys):
        t_csv, _ = synth_files(data_dir)
        out_npz = tmp_path / "features.npz"
        code, out, _ = run(capsys, "featurize", "--data", t_csv,
                           "--quarter", "2021Q3", "--out", str(out_npz))
        assert code == 0
        assert "features=" in out
        import numpy as np
        blob = np.load(out_npz)
        assert blob["holder"].shape[1] == blob["fund"].shape[1] == len(blob["columns"])
        assert blob["holder"].min() >= 0.0 and blob["holder"].max() <= 1.0


class TestBaselineCommand:
    def test_ranks_with_similarities(self, data_dir, capsys):
        t_csv, _ = synth_files(data_dir)
        code, out, _ = run(capsys, "baseline", "--data", t_csv, "--quarter",
                           "2021Q3", "--fund", "F000", "--top", "4", "--diverse")
        assert code == 0
        assert len(out.strip().splitlines()) == 4


class TestEvaluate:
    def test_model_and_baseline_reports(self, data_dir, trained, tmp_path, capsys):
        ckpt, _ = trained
        t_csv, t1_csv = synth_files(data_dir)
        report = tmp_path / "report.json"
        code, out, _ = run(capsys, "evaluate", "--data", t_csv, "--data", t1_csv,
                           "--train-quarter", "2021Q3", "--truth-quarter", "2021Q4",
                           "--checkpoint", str(ckpt), "--baseline",
                           "--variant", "both", "--ks", "10,20",
                           "--report-out", str(report))
        assert code == 0
        blob = json.loads(report.read_text())
        names = {(r["recommender"], r["variant"]) for r in blob["reports"]}
        assert names == {("model", "all_holders"), ("model", "newly_added"),
                         ("baseline_diverse", "all_holders"),
                         ("baseline_diverse", "newly_added")}
        for r in blob["reports"]:
            for v in r["mean_hits"].values():
                assert 0.0 <= v <= 1.0

    def test_baseline_only_without_checkpoint(self, data_dir, tmp_path, capsys):
        t_csv, t1_csv = synth_files(data_dir)
        report = tmp_path / "baseline_report.json"
        code, _, _ = run(capsys, "evaluate", "--data", t_csv, "--data", t1_csv,
                         "--train-quarter", "2021Q3", "--truth-quarter", "2021Q4",
                         "--ks", "10", "--report-out", str(report))
        assert code == 0
        blob = json.loads(report.read_text())
        assert [r["recommender"] for r in blob["reports"]] == ["baseline_diverse"]
        assert blob["reports"][0]["auc"] is None

    def test_duplicate_quarters_across_files_rejected(self, data_dir, capsys):
        t_csv, _ = synth_files(data_dir)
        code, _, err = run(capsys, "evaluate", "--data", t_csv, "--data", t_csv,
                           "--train-quarter", "2021Q3", "--truth-quarter", "2021Q4",
                           "--baseline")
        assert code == 1
        assert "more than one" in err


class TestConfigHandling:
    def test_print_defaults(self, capsys):
        code, out, _ = run(capsys, "--print-defaults")
        assert code == 0
        defaults = json.loads(out)
        assert defaults["learning_rate"] == 0.01
        assert defaults["embedding_dim"] == 128
        assert defaults["epochs"] == 200
        assert defaults["ks"] == [50, 100, 200]

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"learning_rte": 0.1}))
        code, _, err = run(capsys, "--config", str(cfg), "gradcheck")
        assert code == 1
        assert "learning_rte" in err

    def test_config_supplies_values_and_flags_override(self, data_dir, tmp_path, capsys):
        t_csv, _ = synth_files(data_dir)
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"epochs": 2, "embedding_dim": 8, "hidden_dim": 8,
                                   "mlp_hidden": 4, "seed": 1,
                                   "checkpoint": str(tmp_path / "m.ckpt")}))
        code, out, _ = run(capsys, "--config", str(cfg), "train", "--data", t_csv,
                           "--quarter", "2021Q3", "--epochs", "3")
        assert code == 0
        assert "epochs=3" in out

    def test_env_seed_fallback(self, data_dir, tmp_path, monkeypatch, capsys):
        t_csv, _ = synth_files(data_dir)
        monkeypatch.setenv("HLRP_SEED", "77")
        ckpt = tmp_path / "env.ckpt"
        code, out, _ = run(capsys, "train", "--data", t_csv, "--quarter", "2021Q3",
                           "--checkpoint-out", str(ckpt), "--epochs", "1",
                           "--embedding-dim", "4", "--hidden-dim", "4",
                           "--mlp-hidden", "4")
        assert code == 0
        from holderrec.checkpoint import load_checkpoint
        assert load_checkpoint(ckpt).metadata["config"]["seed"] == 77

    def test_bad_env_seed(self, monkeypatch, capsys):
        monkeypatch.setenv("HLRP_SEED", "not-a-number")
        code, _, err = run(capsys, "gradcheck")
        assert code == 1
        assert "HLRP_SEED" in err


class TestGradcheckCommand:
    def test_passes_and_prints_per_parameter_errors(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--seed", "7")
        assert code == 0
        assert "gradcheck OK" in out
        assert "mlp.W1" in out
        assert all(float(line.rsplit("=", 1)[1]) < 1e-4
                   for line in out.strip().splitlines()
                   if "max_rel_error=" in line)
