import json
import os

import numpy as np
import pytest

from luna_nlm import cli, data, trainer


def run(*argv):
    return cli.main(list(argv))


def read_lines(path):
    with open(path) as fh:
        return fh.read().splitlines()


@pytest.fixture(scope="module")
def small_data_dir(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("cubic"))
    assert run("gen-data", "cubic", "--seed", "0", "--n-train", "40", "--n-test", "20", "--out", d) == 0
    return d


@pytest.fixture(scope="module")
def trained_model(small_data_dir, tmp_path_factory):
    d = str(tmp_path_factory.mktemp("run"))
    code = run(
        "train", "--data-dir", small_data_dir, "--out", d,
        "--objective", "luna", "--epochs", "40", "--hidden", "16,8", "--heads", "4",
    )
    assert code == 0
    return os.path.join(d, "model.json")


class TestGenData:
    def test_writes_splits_and_manifest(self, small_data_dir):
        names = set(os.listdir(small_data_dir))
        for want in ("train.csv", "val.csv", "test_not_gap.csv", "test_gap.csv", "manifest.json"):
            assert want in names

    def test_same_seed_is_byte_identical(self, tmp_path):
        d = str(tmp_path / "out")
        run("gen-data", "cubic", "--seed", "5", "--out", d)
        first = {f: open(os.path.join(d, f), "rb").read() for f in os.listdir(d)}
        run("gen-data", "cubic", "--seed", "5", "--out", d)
        second = {f: open(os.path.join(d, f), "rb").read() for f in os.listdir(d)}
        assert first == second

    def test_ucigap_manifest_records_dim(self, tmp_path):
        src = tmp_path / "table.csv"
        rng = np.random.default_rng(0)
        data.write_table(str(src), rng.normal(size=(30, 6)), rng.normal(size=30))
        d = str(tmp_path / "gap")
        assert run("gen-data", "ucigap", "--input", str(src), "--dim", "5", "--out", d) == 0
        body = "\n".join(
            l for l in read_lines(os.path.join(d, "manifest.json")) if not l.startswith("#")
        )
        assert json.loads(body)["gap_dim"] == 5

    def test_ucigap_requires_input(self, tmp_path):
        assert run("gen-data", "ucigap", "--out", str(tmp_path)) == 2

    def test_config_line_present(self, small_data_dir):
        first = read_lines(os.path.join(small_data_dir, "train.csv"))[0]
        assert first.startswith("# ")
        assert '"seed": 0' in first


class TestTrain:
    def test_minimal_run_writes_files(self, trained_model):
        assert os.path.exists(trained_model)
        hist = os.path.join(os.path.dirname(trained_model), "history.csv")
        lines = read_lines(hist)
        assert lines[1] == "epoch,fit_loss,diverse_loss,effective_lambda"
        assert len(lines) == 2 + 40

    def test_invalid_objective_usage_error(self, small_data_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("train", "--data-dir", small_data_dir, "--objective", "bogus", "--out", str(tmp_path))
        assert exc.value.code == 2

    def test_select_writes_candidate_log(self, small_data_dir, tmp_path):
        d = str(tmp_path)
        code = run(
            "train", "--data-dir", small_data_dir, "--out", d, "--objective", "luna",
            "--epochs", "10", "--hidden", "16,8", "--heads", "4", "--restarts", "3", "--select",
        )
        assert code == 0
        lines = read_lines(os.path.join(d, "selection.csv"))
        assert lines[1] == "seed,val_ll,diversity,selected"
        assert len(lines) == 2 + 3
        assert sum(int(l.split(",")[-1]) for l in lines[2:]) == 1

    def test_model_round_trip(self, trained_model, small_data_dir):
        model = cli.load_model(trained_model)
        ds = data.load_dataset(small_data_dir)
        pred = model.predict(ds.test_gap.x)
        assert np.all(np.isfinite(pred.mean))
        clone_path = trained_model + ".copy"
        cli.save_model(model, clone_path)
        reloaded = cli.load_model(clone_path)
        np.testing.assert_array_equal(reloaded.feature_map.to_vector(), model.feature_map.to_vector())
        np.testing.assert_array_equal(reloaded.posterior.w_n, model.posterior.w_n)
        assert reloaded.config == model.config

    def test_model_file_starts_with_config_comment(self, trained_model):
        first = read_lines(trained_model)[0]
        assert first.startswith("# ") and '"seed"' in first

    def test_config_file_supplies_defaults(self, small_data_dir, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("epochs = 7\nhidden = 16,8\nheads = 4\nobjective = luna\n")
        d = str(tmp_path / "out")
        assert run("train", "--data-dir", small_data_dir, "--config", str(cfg), "--out", d) == 0
        model = cli.load_model(os.path.join(d, "model.json"))
        assert model.config.epochs == 7
        # explicit flag beats the config file
        d2 = str(tmp_path / "out2")
        assert run("train", "--data-dir", small_data_dir, "--config", str(cfg), "--epochs", "3", "--out", d2) == 0
        assert cli.load_model(os.path.join(d2, "model.json")).config.epochs == 3

    def test_config_file_unknown_key(self, small_data_dir, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("not_a_key = 1\n")
        assert run("train", "--data-dir", small_data_dir, "--config", str(cfg), "--out", str(tmp_path)) == 2


class TestEval:
    def test_metrics_schema(self, trained_model, small_data_dir, tmp_path):
        d = str(tmp_path)
        assert run("eval", "--model", trained_model, "--data-dir", small_data_dir, "--out", d) == 0
        lines = read_lines(os.path.join(d, "metrics.csv"))
        assert lines[1] == "split,avg_ll,rmse,epistemic_sd"
        splits = [l.split(",")[0] for l in lines[2:]]
        assert splits == ["train", "val", "test_not_gap", "test_gap", "eurc_percent"]

    def test_missing_model_is_runtime_error(self, small_data_dir, tmp_path):
        assert run("eval", "--model", "/nonexistent.json", "--data-dir", small_data_dir, "--out", str(tmp_path)) == 1

    def test_prior_only_model_matches_analytic_epistemic_sd(self, trained_model, small_data_dir, tmp_path):
        """With the prior head (no data), epistemic sd at x is
        sqrt(alpha) * ||phi_tilde(x)|| in standardized units."""
        model = cli.load_model(trained_model)
        prior_model = trainer.refit_head(model, (np.zeros((0, 1)), np.zeros(0)))
        path = str(tmp_path / "prior.json")
        cli.save_model(prior_model, path)
        d = str(tmp_path)
        assert run("eval", "--model", path, "--data-dir", small_data_dir, "--out", d) == 0
        lines = read_lines(str(tmp_path / "metrics.csv"))
        got = {l.split(",")[0]: l.split(",")[3] for l in lines[2:-1]}
        ds = data.load_dataset(small_data_dir)
        for name, split in ds.splits().items():
            design = prior_model.design(split.x)
            want = np.mean(
                np.sqrt(prior_model.posterior.alpha * np.sum(design**2, axis=1))
            ) * prior_model.stats.y_std
            np.testing.assert_allclose(float(got[name]), want, rtol=1e-10)


class TestCurves:
    def test_schema_and_bands(self, trained_model, tmp_path):
        d = str(tmp_path)
        code = run(
            "curves", "--model", trained_model, "--out", d,
            "--grid-n", "17", "--samples", "3", "--source", "posterior",
        )
        assert code == 0
        lines = read_lines(os.path.join(d, "curves.csv"))
        assert lines[1] == "x,mean,total_sd,epistemic_sd,sample_1,sample_2,sample_3"
        rows = [list(map(float, l.split(","))) for l in lines[2:]]
        assert len(rows) == 17
        for row in rows:
            assert row[2] >= row[3]  # total_sd >= epistemic_sd

    def test_prior_samples(self, trained_model, tmp_path):
        d = str(tmp_path)
        assert run("curves", "--model", trained_model, "--out", d, "--samples", "2", "--source", "prior") == 0


class TestBlowup:
    def test_relu_tail_increases(self, tmp_path):
        d = str(tmp_path)
        assert run("blowup", "--out", d, "--seed", "0", "--c-list", "1,10,100,1000") == 0
        lines = read_lines(os.path.join(d, "blowup.csv"))
        assert lines[1] == "c,marginal_ll"
        vals = [float(l.split(",")[1]) for l in lines[2:]]
        assert vals[-2] < vals[-1]

    def test_tanh_variant_runs(self, tmp_path):
        d = str(tmp_path)
        assert run("blowup", "--out", d, "--activation", "tanh", "--c-list", "1,10") == 0
        assert len(read_lines(os.path.join(d, "blowup.csv"))) == 4


class TestBayesopt:
    def test_trace_schema_and_monotonicity(self, tmp_path):
        d = str(tmp_path)
        assert run("bayesopt", "branin", "--surrogate", "gp", "--steps", "8", "--init", "5", "--out", d) == 0
        lines = read_lines(os.path.join(d, "trace.csv"))
        assert lines[1] == "step,x1,x2,f,best,regret,fallback"
        rows = [l.split(",") for l in lines[2:]]
        assert len(rows) == 8
        regrets = [float(r[5]) for r in rows]
        assert all(a >= b for a, b in zip(regrets, regrets[1:]))

    def test_seed_determinism(self, tmp_path):
        d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
        run("bayesopt", "branin", "--steps", "7", "--init", "5", "--seed", "9", "--out", d1)
        run("bayesopt", "branin", "--steps", "7", "--init", "5", "--seed", "9", "--out", d2)
        a = read_lines(os.path.join(d1, "trace.csv"))[1:]
        b = read_lines(os.path.join(d2, "trace.csv"))[1:]
        assert a == b


class TestTransfer:
    def test_refit_improves_gap_ll(self, tmp_path):
        data_dir = str(tmp_path / "squiggle")
        assert run("gen-data", "squiggle", "--seed", "0", "--out", data_dir) == 0
        run_dir = str(tmp_path / "run")
        assert run(
            "train", "--data-dir", data_dir, "--out", run_dir,
            "--objective", "luna", "--epochs", "300", "--hidden", "16,8", "--heads", "4",
        ) == 0
        out_dir = str(tmp_path / "tr")
        model = os.path.join(run_dir, "model.json")
        assert run("transfer", "--model", model, "--data-dir", data_dir, "--out", out_dir) == 0
        lines = read_lines(os.path.join(out_dir, "transfer.csv"))
        assert lines[1] == "head,gap_avg_ll,gap_rmse,gap_epistemic_sd"
        rows = {l.split(",")[0]: float(l.split(",")[1]) for l in lines[2:]}
        assert rows["refit_head"] > rows["original_head"]
        assert os.path.exists(os.path.join(out_dir, "model_refit.json"))
