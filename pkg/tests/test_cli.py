import json

import numpy as np
import pytest
from click.testing import CliRunner

from delayrobust.cli import main
from delayrobust.constant_delay import crossing_curve

from conftest import bound_oracle

CERT_FIELDS = {"epsilon", "theta", "lambda", "sigma", "delta", "scalar_path", "feasible"}


@pytest.fixture
def runner():
    return CliRunner()


def _model(tmp_path, name="m.json", **doc):
    base = {"A": [[1.0]], "B": [[1.0]], "K": [[-2.0]], "r": 1.0}
    base.update(doc)
    path = tmp_path / name
    path.write_text(json.dumps(base))
    return str(path)


class TestMargin:
    def test_find_max(self, runner, tmp_path):
        res = runner.invoke(main, ["margin", _model(tmp_path), "--find-max", "--json"])
        assert res.exit_code == 0, res.output
        assert json.loads(res.output)["epsilon_max"] == pytest.approx(bound_oracle(2.0), rel=1e-8)

    def test_zero_eps(self, runner, tmp_path):
        res = runner.invoke(main, ["margin", _model(tmp_path), "--eps", "0", "--json"])
        assert res.exit_code == 0
        assert json.loads(res.output)["feasible"] is True

    def test_infeasible_exit(self, runner, tmp_path):
        res = runner.invoke(main, ["margin", _model(tmp_path), "--eps", "0.15"])
        assert res.exit_code == 2
        assert "lhs" in res.output

    def test_not_hurwitz(self, runner, tmp_path):
        res = runner.invoke(main, ["margin", _model(tmp_path, K=[[-0.5]])])
        assert res.exit_code == 1
        assert "Hurwitz" in res.output

    @pytest.mark.parametrize("content", ["{not json", json.dumps({"A": [[1.0]]}),
                                         json.dumps({"A": [[1.0]], "B": [[1, 2]],
                                                     "K": [[-2.0]], "r": 1.0})])
    def test_bad_files(self, runner, tmp_path, content):
        path = tmp_path / "bad.json"
        path.write_text(content)
        res = runner.invoke(main, ["margin", str(path)])
        assert res.exit_code == 1
        assert "error" in res.output

    def test_missing_file(self, runner, tmp_path):
        assert runner.invoke(main, ["margin", str(tmp_path / "none.json")]).exit_code == 1

    def test_conflicting_flags(self, runner, tmp_path):
        res = runner.invoke(main, ["margin", _model(tmp_path), "--eps", "0.01", "--find-max"])
        assert res.exit_code == 1


class TestSimulate:
    def _run(self, runner, tmp_path, *args):
        out = tmp_path / "trace.csv"
        summary = tmp_path / "summary.json"
        res = runner.invoke(main, ["simulate", _model(tmp_path), "--out", str(out),
                                   "--summary", str(summary), *args])
        return res, out, summary

    def test_nominal_rate(self, runner, tmp_path):
        res, out, summary = self._run(runner, tmp_path, "--eps", "0", "--signal", "const:0",
                                      "--x0", "1", "--burn-in", "1")
        assert res.exit_code == 0, res.output
        info = json.loads(summary.read_text())
        assert info["sigma_hat"] == pytest.approx(1.0, abs=1e-3)
        assert out.read_text().startswith("t,x_1,u_1,p_1\n")

    def test_zero_data(self, runner, tmp_path):
        res, out, summary = self._run(runner, tmp_path, "--x0", "0", "--u0", "0",
                                      "--tfinal", "3")
        assert res.exit_code == 0
        data = np.loadtxt(out, delimiter=",", skiprows=1)
        assert not np.any(data[:, 1:])
        assert json.loads(summary.read_text())["exact_zero"] is True

    def test_robust_decay(self, runner, tmp_path):
        res, _, summary = self._run(runner, tmp_path, "--eps", "0.04",
                                    "--signal", "pwc:7:0.05")
        assert res.exit_code == 0
        assert json.loads(summary.read_text())["estimate_holds"] is True

    def test_divergence(self, runner, tmp_path):
        out = tmp_path / "trace.csv"
        model = _model(tmp_path, K=[[-3.0]])
        res = runner.invoke(main, ["simulate", model, "--eps", "1", "--signal", "const:1",
                                   "--tfinal", "100", "--out", str(out)])
        assert res.exit_code == 3
        rows = out.read_text().splitlines()
        assert 1 < len(rows) < 10002

    def test_bad_signal(self, runner, tmp_path):
        res, _, _ = self._run(runner, tmp_path, "--signal", "square:1")
        assert res.exit_code == 1


class TestFigure1:
    def test_full_sweep(self, runner, tmp_path):
        out = tmp_path / "fig.csv"
        res = runner.invoke(main, ["figure1", "--pmin", "1.5", "--pmax", "5", "--steps", "8",
                                   "--out", str(out)])
        assert res.exit_code == 0
        rows = np.loadtxt(out, delimiter=",", skiprows=1)
        assert rows.shape == (8, 5)
        assert np.all(rows[:, 3] < rows[:, 1]) and np.all(rows[:, 2] < rows[:, 4])

    def test_single_point_matches_margin(self, runner, tmp_path):
        res = runner.invoke(main, ["figure1", "--pmin", "2", "--pmax", "2", "--steps", "1"])
        assert res.exit_code == 0
        lines = res.output.strip().splitlines()
        assert len(lines) == 2
        row = [float(v) for v in lines[1].split(",")]
        m = runner.invoke(main, ["margin", _model(tmp_path), "--find-max", "--json"])
        eps = json.loads(m.output)["epsilon_max"]
        assert row[2] - 1 == pytest.approx(eps, rel=1e-8)
        assert row[3] == crossing_curve(2.0).tau_min

    def test_bad_range(self, runner):
        assert runner.invoke(main, ["figure1", "--pmin", "0.5"]).exit_code == 1
        assert runner.invoke(main, ["figure1", "--pmin", "2", "--pmax", "3",
                                    "--steps", "1"]).exit_code == 1


class TestCertify:
    def test_fields(self, runner, tmp_path):
        res = runner.invoke(main, ["certify", _model(tmp_path), "--eps", "0.04", "--json"])
        assert res.exit_code == 0, res.output
        cert = json.loads(res.output)
        assert set(cert) == CERT_FIELDS
        assert cert["delta"] < 1 and cert["sigma"] > 0 and cert["feasible"] is True

    def test_zero_eps(self, runner, tmp_path):
        cert = json.loads(runner.invoke(
            main, ["certify", _model(tmp_path), "--eps", "0", "--json"]).output)
        assert abs(cert["sigma"] - cert["lambda"]) < 1e-6

    def test_infeasible(self, runner, tmp_path):
        res = runner.invoke(main, ["certify", _model(tmp_path), "--eps", "0.1"])
        assert res.exit_code == 2
        assert "lhs=" in res.output and "rhs=" in res.output

    def test_multivariable(self, runner, tmp_path):
        path = _model(tmp_path, A=[[0, 1], [2, -1]], B=[[0], [1]], K=[[-6, -4]], r=0.2)
        found = json.loads(runner.invoke(main, ["margin", path, "--json"]).output)
        eps = 0.5 * found["epsilon_max"]
        res = runner.invoke(main, ["certify", path, "--eps", repr(eps), "--json"])
        assert res.exit_code == 0, res.output
        cert = json.loads(res.output)
        assert cert["scalar_path"] is False and cert["theta"] > 1


class TestAnalyzeConstant:
    def test_nominal(self, runner):
        res = runner.invoke(main, ["analyze-constant", "--gain", "2", "--tau", "1", "--json"])
        out = json.loads(res.output)
        assert res.exit_code == 0
        assert out["root_real"] == pytest.approx(-1.0, abs=1e-6)
        assert out["verdict"] == "stable"

    def test_boundary(self, runner):
        tau = crossing_curve(2.0).tau_max
        res = runner.invoke(main, ["analyze-constant", "--gain", "2", "--tau", repr(tau), "--json"])
        assert abs(json.loads(res.output)["root_real"]) <= 1e-4

    def test_unstable_verdict(self, runner):
        out = json.loads(runner.invoke(
            main, ["analyze-constant", "--gain", "2", "--tau", "3", "--json"]).output)
        assert (out["verdict"] == "unstable") == (out["root_real"] > 0)
        assert out["verdict"] == "unstable"

    def test_model_file(self, runner, tmp_path):
        res = runner.invoke(main, ["analyze-constant", _model(tmp_path), "--tau", "1.1"])
        assert res.exit_code == 0 and "verdict: stable" in res.output

    def test_input_errors(self, runner, tmp_path):
        assert runner.invoke(main, ["analyze-constant", "--tau", "1"]).exit_code == 1
        assert runner.invoke(main, ["analyze-constant", "--gain", "0.5",
                                    "--tau", "1"]).exit_code == 1
        assert runner.invoke(main, ["analyze-constant", "--gain", "2", "--tau", "1",
                                    "--N", "4"]).exit_code == 1


def test_example_model_round_trip(runner, tmp_path):
    res = runner.invoke(main, ["example-model", "--gain", "3"])
    path = tmp_path / "p3.json"
    path.write_text(res.output)
    out = runner.invoke(main, ["margin", str(path), "--json"])
    assert json.loads(out.output)["epsilon_max"] == pytest.approx(bound_oracle(3.0), rel=1e-8)
