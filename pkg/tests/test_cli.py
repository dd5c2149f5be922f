import json

import numpy as np
import pytest

import dynmargin as dm
from dynmargin import cli, model

from conftest import noisy_working, separable_working


@pytest.fixture
def toy_file(tmp_path):
    rng = np.random.default_rng(17)
    lines = []
    for _ in range(30):
        nnz = int(rng.integers(1, 6))
        idx = np.sort(rng.choice(8, size=nnz, replace=False)) + 1
        vals = np.round(rng.standard_normal(nnz), 4)
        lab = int(rng.choice([-1, 1]))
        lines.append(f"{lab} " + " ".join(f"{i}:{v}" for i, v in zip(idx, vals)))
    path = tmp_path / "toy.svm"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def run_cli(*argv):
    return cli.main(list(argv))


class TestTrain:
    def test_end_to_end_with_model_and_report(self, toy_file, tmp_path):
        report_path = tmp_path / "report.json"
        model_path = tmp_path / "model.txt"
        code = run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.25", "--data", toy_file,
            "--out-report", str(report_path), "--out-model", str(model_path),
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["converged"] is True
        assert report["algorithm"] == "pdm"
        assert report["gamma_prime_d"] > 0
        assert report["m"] == 30
        m = model.load_model(str(model_path))
        assert m.explicit_dim == report["explicit_dim"]
        assert m.t_c == report["t_c"]

    def test_determinism_modulo_wallclock(self, toy_file, tmp_path):
        paths = [tmp_path / "r1.json", tmp_path / "r2.json"]
        for p in paths:
            assert run_cli(
                "train", "--algo", "pdm-succ", "--epsilon", "0.1",
                "--data", toy_file, "--seed", "3", "--out-report", str(p),
            ) == 0
        a, b = (json.loads(p.read_text()) for p in paths)
        a.pop("duration_s"), b.pop("duration_s")
        assert a == b

    def test_oracle_flag_adds_sandwich(self, toy_file, tmp_path):
        report_path = tmp_path / "report.json"
        code = run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.5", "--data", toy_file,
            "--oracle", "--out-report", str(report_path),
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["sandwich_passed"] is True
        assert report["gamma_d_oracle"] > 0
        assert report["t_c"] <= report["theorem2_bound"]
        assert report["margin_floor"] > 0

    def test_pfm_requires_beta(self, toy_file):
        assert run_cli("train", "--algo", "pfm", "--data", toy_file) == 2

    def test_unknown_algo_exits_2(self, toy_file):
        assert run_cli("train", "--algo", "svm", "--data", toy_file) == 2

    def test_missing_file_exits_4(self):
        assert run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.5", "--data", "/nope/missing"
        ) == 4

    def test_parse_error_exits_2(self, tmp_path):
        bad = tmp_path / "bad.svm"
        bad.write_text("+1 2:1 1:1\n")
        assert run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.5", "--data", str(bad)
        ) == 2

    def test_nonconvergence_exits_3(self, toy_file, tmp_path):
        # An unattainable fixed margin: beta far above any achievable value.
        report_path = tmp_path / "report.json"
        code = run_cli(
            "train", "--algo", "pfm", "--beta", "100.0", "--data", toy_file,
            "--max-epochs", "50", "--out-report", str(report_path),
        )
        assert code == 3
        report = json.loads(report_path.read_text())
        assert report["converged"] is False
        assert report["epochs"] == 50

    def test_oracle_size_refusal(self, toy_file, monkeypatch):
        monkeypatch.setattr(cli, "ORACLE_SIZE_LIMIT", 10)
        assert run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.5", "--data", toy_file,
            "--oracle",
        ) == 2

    def test_positive_label_reduction(self, tmp_path):
        path = tmp_path / "multi.svm"
        path.write_text("1 1:1\n2 1:-1\n3 2:1\n2 2:-1\n")
        report_path = tmp_path / "report.json"
        code = run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.5", "--data", str(path),
            "--positive-label", "2", "--out-report", str(report_path),
        )
        assert code == 0

    def test_succ_epsilon_range_checked(self, toy_file):
        assert run_cli(
            "train", "--algo", "pdm-succ", "--epsilon", "0.75", "--data", toy_file
        ) == 2

    def test_train_from_stdin(self, tmp_path, monkeypatch):
        import io

        monkeypatch.setattr("sys.stdin", io.StringIO("+1 1:1\n-1 1:-1\n"))
        report_path = tmp_path / "report.json"
        code = run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.5", "--data", "-",
            "--delta", "0", "--out-report", str(report_path),
        )
        assert code == 0
        assert json.loads(report_path.read_text())["m"] == 2

    def test_instrument_flag_reports_residual(self, toy_file, tmp_path):
        report_path = tmp_path / "report.json"
        code = run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.5", "--data", toy_file,
            "--instrument-eq6", "--out-report", str(report_path),
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["eq6_max_residual"] <= 1e-9


class TestModelRoundTrip:
    def test_save_load_save_byte_identical(self, toy_file, tmp_path):
        model_path = tmp_path / "model.txt"
        run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.25", "--data", toy_file,
            "--out-model", str(model_path),
        )
        first = model_path.read_text()
        loaded = model.load_model(str(model_path))
        again = tmp_path / "model2.txt"
        model.save_model(loaded, str(again))
        assert again.read_text() == first

    def test_loaded_model_predicts_like_training_state(self, tmp_path):
        # Hard-margin setting (delta = 0, separable data): a converged run
        # classifies its own training data perfectly.  With delta > 0 the
        # virtual slack may absorb violations instead.
        rng = np.random.default_rng(5)
        u = rng.standard_normal(7)
        lines = []
        for _ in range(25):
            idx = np.sort(rng.choice(6, size=3, replace=False))
            vals = np.round(rng.standard_normal(3), 3)
            aug = np.zeros(7)
            aug[idx] = vals
            aug[6] = 1.0
            score = float(u @ aug)
            if abs(score) < 0.3:
                continue
            lab = 1 if score > 0 else -1
            lines.append(
                f"{lab} " + " ".join(f"{i + 1}:{v}" for i, v in zip(idx, vals))
            )
        ds_file = tmp_path / "train.svm"
        ds_file.write_text("\n".join(lines) + "\n")
        model_path = tmp_path / "m.txt"
        assert run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.25", "--data", str(ds_file),
            "--out-model", str(model_path), "--delta", "0", "--rho", "1",
            "--out-report", str(tmp_path / "r.json"),
        ) == 0
        m = model.load_model(str(model_path))
        pats = dm.load_dataset(str(ds_file))
        for p in pats:
            raw = dm.SparsePattern(p.indices, p.values, 1)
            assert m.predict(raw) == p.label


class TestPredict:
    def _trained_model(self, tmp_path):
        path = tmp_path / "sep.svm"
        path.write_text("+1 1:2\n+1 1:1.5\n-1 1:-2\n-1 1:-1.2\n")
        model_path = tmp_path / "m.txt"
        assert run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.25", "--data", str(path),
            "--out-model", str(model_path), "--delta", "0",
            "--out-report", str(tmp_path / "train_report.json"),
        ) == 0
        return str(path), str(model_path)

    def test_predictions_and_error_rate(self, tmp_path, capsys):
        data_path, model_path = self._trained_model(tmp_path)
        assert run_cli("predict", "--model", model_path, "--data", data_path) == 0
        out = capsys.readouterr()
        assert out.out.split() == ["+1", "+1", "-1", "-1"]
        assert "error_rate 0.0" in out.err

    def test_unlabeled_lines(self, tmp_path, capsys):
        _, model_path = self._trained_model(tmp_path)
        inst = tmp_path / "inst.svm"
        inst.write_text("1:3.0\n1:-3.0\n")
        assert run_cli("predict", "--model", model_path, "--data", str(inst)) == 0
        out = capsys.readouterr()
        assert out.out.split() == ["+1", "-1"]
        assert "error_rate" not in out.err

    def test_unseen_indices_fall_back_to_bias(self, tmp_path, capsys):
        _, model_path = self._trained_model(tmp_path)
        m = model.load_model(model_path)
        bias_sign = 1 if m.weights[m.explicit_dim - 1] * m.rho > 0 else -1
        inst = tmp_path / "inst.svm"
        inst.write_text("999:5.0\n")
        assert run_cli("predict", "--model", model_path, "--data", str(inst)) == 0
        out = capsys.readouterr()
        assert out.out.split() == [f"{bias_sign:+d}"]

    def test_missing_model_exits_4(self, tmp_path):
        assert run_cli("predict", "--model", "/nope", "--data", "/nope") == 4


class TestExperimentCommand:
    def test_combined_report(self, toy_file, tmp_path):
        combined = tmp_path / "exp.json"
        pdm_path = tmp_path / "pdm.json"
        pfm_path = tmp_path / "pfm.json"
        code = run_cli(
            "experiment", "--algo", "pdm", "--epsilon", "0.1", "--data", toy_file,
            "--out-report", str(combined),
            "--out-report-pdm", str(pdm_path), "--out-report-pfm", str(pfm_path),
        )
        assert code == 0
        report = json.loads(combined.read_text())
        assert report["pdm_converged"] and report["pfm_converged"]
        assert report["cmp_beta_used"] == report["pdm_gamma_prime_d"]
        assert report["pfm_gamma_prime_d"] >= report["pdm_gamma_prime_d"]
        assert json.loads(pdm_path.read_text())["t_c"] == report["pdm_t_c"]
        assert json.loads(pfm_path.read_text())["t_c"] == report["pfm_t_c"]

    def test_succ_variant(self, toy_file, tmp_path):
        combined = tmp_path / "exp.json"
        code = run_cli(
            "experiment", "--algo", "pdm-succ", "--epsilon", "0.1",
            "--data", toy_file, "--out-report", str(combined),
        )
        assert code == 0
        report = json.loads(combined.read_text())
        assert report["variant"] == "succ"
        assert report["pdm_stage_epsilons"][0] == 0.5

    def test_requires_epsilon(self, toy_file):
        assert run_cli("experiment", "--algo", "pdm", "--data", toy_file) == 2

    def test_unconverged_pdm_exits_3(self, toy_file, tmp_path):
        combined = tmp_path / "exp.json"
        code = run_cli(
            "experiment", "--algo", "pdm", "--epsilon", "0.01", "--data", toy_file,
            "--max-epochs", "1", "--out-report", str(combined),
        )
        assert code == 3
        report = json.loads(combined.read_text())
        assert report["pdm_converged"] is False
        assert "pfm_converged" not in report


class TestReportPrecision:
    def test_floats_round_trip_exactly(self, toy_file, tmp_path):
        report_path = tmp_path / "report.json"
        run_cli(
            "train", "--algo", "pdm", "--epsilon", "0.25", "--data", toy_file,
            "--out-report", str(report_path),
        )
        report = json.loads(report_path.read_text())
        ds = dm.build_working(dm.load_dataset(toy_file), delta=1.0, rho=1.0)
        _, expected = dm.train_pdm(
            ds, 0.25, dm.RunConfig("pdm", epsilon=0.25)
        )
        assert report["gamma_prime_d"] == expected.gamma_prime_d
        assert report["norm_a"] == expected.norm_a


class TestModelFileValidation:
    def _write_model(self, tmp_path, text):
        path = tmp_path / "m.txt"
        path.write_text(text)
        return str(path)

    def test_bad_magic(self, tmp_path):
        path = self._write_model(tmp_path, "something-else 1\n")
        with pytest.raises(ValueError, match="not a dynmargin-model"):
            model.load_model(path)

    def test_bad_version(self, tmp_path):
        path = self._write_model(tmp_path, "dynmargin-model 99\nnnz 0\n")
        with pytest.raises(ValueError, match="unsupported model version"):
            model.load_model(path)

    def test_weight_index_range_checked(self, tmp_path):
        path = self._write_model(
            tmp_path,
            "dynmargin-model 1\nexplicit_dim 2\nrho 1.0\ndelta 0.0\nscale 1.0\n"
            "gamma_prime_d none\nt_c 1\nalgorithm pdm\nepsilon 0.5\nbeta none\n"
            "seed 0\nnnz 1\n5 1.0\n",
        )
        with pytest.raises(ValueError, match="out of range"):
            model.load_model(path)

    def test_missing_weight_section(self, tmp_path):
        path = self._write_model(tmp_path, "dynmargin-model 1\nexplicit_dim 2\n")
        with pytest.raises(ValueError, match="missing weight section"):
            model.load_model(path)

    def test_malformed_predict_instance_exits_2(self, tmp_path):
        data_path, model_path = TestPredict()._trained_model(tmp_path)
        bad = tmp_path / "bad.svm"
        bad.write_text("1:1 garbage\n")
        assert run_cli("predict", "--model", model_path, "--data", str(bad)) == 2
