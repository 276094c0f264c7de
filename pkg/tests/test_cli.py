"""End-to-end command-line pipeline: weight, fit, risk, diagnose, simulate."""

import json
import os

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from riskcal.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def _read_meta(out_dir):
    with open(os.path.join(out_dir, "run_meta.json"), encoding="utf-8") as fh:
        return json.load(fh)


def _weight_args(fixture_paths, out_dir, poststrat="rg"):
    return ["weight",
            "--cohort", fixture_paths["cohort"],
            "--survey", fixture_paths["survey"],
            "--propensity", "z1+z2",
            "--poststrat", poststrat,
            "--registry", fixture_paths["registry"],
            "--cells", "cell",
            "--out", out_dir]


class TestWeight:
    def test_writes_weights_and_summary(self, runner, fixture_paths, tmp_path):
        out = str(tmp_path)
        res = runner.invoke(main, _weight_args(fixture_paths, out))
        assert res.exit_code == 0, res.output
        wdf = pd.read_csv(os.path.join(out, "weights.csv"))
        assert list(wdf.columns) == ["id", "kw", "post_factor", "final"]
        assert (wdf["final"] > 0).all()
        with open(os.path.join(out, "weight_summary.json")) as fh:
            summary = json.load(fh)
        # survey weight mass is transferred, then cell factors retarget it
        assert summary["mass"]["kw_total"] == pytest.approx(
            summary["mass"]["survey_weight_total"], rel=1e-10)
        assert {c["cell"] for c in summary["cells"]} == {"1", "2"}
        for c in summary["cells"]:
            assert c["weighted_events"] == pytest.approx(c["registry_events"],
                                                         rel=1e-10)
        meta = _read_meta(out)
        assert meta["command"] == "weight"
        assert meta["options"]["poststrat"] == "rg"
        assert meta["options"]["resolved_bandwidth"] is not None

    def test_poststrat_without_registry_is_config_error(self, runner,
                                                        fixture_paths,
                                                        tmp_path):
        res = runner.invoke(main, [
            "weight", "--cohort", fixture_paths["cohort"],
            "--survey", fixture_paths["survey"], "--propensity", "z1+z2",
            "--poststrat", "rg", "--out", str(tmp_path)])
        assert res.exit_code == 2
        assert "requires --registry and --cells" in res.output

    def test_threads_env_fallback_recorded(self, runner, fixture_paths,
                                           tmp_path):
        out = str(tmp_path)
        res = runner.invoke(main, _weight_args(fixture_paths, out),
                            env={"RISKCAL_THREADS": "3"})
        assert res.exit_code == 0, res.output
        assert _read_meta(out)["options"]["threads"] == 3


class TestFitAndRisk:
    def test_pipeline_via_weights_file(self, runner, fixture_paths, tmp_path):
        wdir, fdir, rdir = (str(tmp_path / n) for n in ("w", "f", "r"))
        assert runner.invoke(
            main, _weight_args(fixture_paths, wdir)).exit_code == 0
        res = runner.invoke(main, [
            "fit", "--cohort", fixture_paths["cohort"],
            "--weights", os.path.join(wdir, "weights.csv"),
            "--model", "z1+z2", "--baseline", "both",
            "--registry", fixture_paths["registry"], "--out", fdir])
        assert res.exit_code == 0, res.output
        with open(os.path.join(fdir, "fit.json")) as fh:
            doc = json.load(fh)
        assert set(doc["baselines"]) == {"breslow", "par"}
        assert doc["recipe"]["weights"].endswith("weights.csv")

        res = runner.invoke(main, [
            "risk", "--fit", os.path.join(fdir, "fit.json"),
            "--profile", "z1=0.5,z2=-0.5", "--grid", "0:6:1",
            "--baseline", "par", "--out", rdir])
        assert res.exit_code == 0, res.output
        rdf = pd.read_csv(os.path.join(rdir, "risk.csv"))
        assert len(rdf) == 7
        assert rdf["r_hat"].iloc[0] == 0.0
        assert (np.diff(rdf["r_hat"]) >= -1e-15).all()
        assert rdf["r_hat"].between(0.0, 1.0).all()

    def test_full_chain_fit_with_tl_variance(self, runner, fixture_paths,
                                             tmp_path):
        fdir, rdir = str(tmp_path / "f"), str(tmp_path / "r")
        res = runner.invoke(main, [
            "fit", "--cohort", fixture_paths["cohort"],
            "--survey", fixture_paths["survey"],
            "--propensity", "z1+z2", "--poststrat", "rg", "--cells", "cell",
            "--model", "z1+z2", "--baseline", "both",
            "--registry", fixture_paths["registry"], "--out", fdir])
        assert res.exit_code == 0, res.output
        res = runner.invoke(main, [
            "risk", "--fit", os.path.join(fdir, "fit.json"),
            "--profile", "z1=0.5,z2=-0.5", "--time", "5", "--time", "8",
            "--baseline", "breslow", "--variance", "tl",
            "--export-deviates", "--out", rdir])
        assert res.exit_code == 0, res.output
        rdf = pd.read_csv(os.path.join(rdir, "risk.csv"))
        assert (rdf["se"] > 0).all()
        assert ((rdf["lo"] < rdf["r_hat"]) & (rdf["r_hat"] < rdf["hi"])).all()
        ddf = pd.read_csv(os.path.join(rdir, "deviates.csv"))
        assert set(ddf["sample"]) == {"cohort", "survey"}

    def test_missing_fit_artifact_is_config_error(self, runner, tmp_path):
        res = runner.invoke(main, [
            "risk", "--fit", str(tmp_path / "absent.json"),
            "--profile", "z1=0", "--time", "1"])
        assert res.exit_code == 2

    def test_profile_must_match_model_columns(self, runner, fixture_paths,
                                              tmp_path):
        fdir = str(tmp_path / "f")
        runner.invoke(main, [
            "fit", "--cohort", fixture_paths["cohort"], "--model", "z1+z2",
            "--out", fdir])
        res = runner.invoke(main, [
            "risk", "--fit", os.path.join(fdir, "fit.json"),
            "--profile", "z1=0.5", "--time", "1"])
        assert res.exit_code == 2
        assert "missing" in res.output

    def test_module_error_exits_one_with_json_report(self, runner,
                                                     fixture_paths, tmp_path):
        # the bundled registry hazard table stops before t = 100, so the
        # composite baseline cannot be built out that far
        res = runner.invoke(main, [
            "fit", "--cohort", fixture_paths["cohort"], "--model", "z1+z2",
            "--baseline", "par", "--registry", fixture_paths["registry"],
            "--horizon", "100", "--out", str(tmp_path)])
        assert res.exit_code == 1
        report = json.loads(res.output.strip().splitlines()[-1])
        assert report["error"] == "ValidationError"
        assert "message" in report


class TestDiagnose:
    def test_balance_table(self, runner, fixture_paths, tmp_path):
        wdir, ddir = str(tmp_path / "w"), str(tmp_path / "d")
        runner.invoke(main, _weight_args(fixture_paths, wdir))
        res = runner.invoke(main, [
            "diagnose", "--cohort", fixture_paths["cohort"],
            "--survey", fixture_paths["survey"],
            "--weights", os.path.join(wdir, "weights.csv"),
            "--covariates", "z1+z2", "--out", ddir])
        assert res.exit_code == 0, res.output
        bdf = pd.read_csv(os.path.join(ddir, "balance.csv"))
        assert list(bdf["covariate"]) == ["z1", "z2"]
        assert "std_diff" in bdf.columns and "flag" in bdf.columns


class TestSimulate:
    SIM_ARGS = ["simulate", "--scenario", "1", "--reps", "2", "--seed", "7",
                "--pop-size", "4000", "--n-cohort", "300", "--n-survey",
                "200", "--estimators", "naive,post_kws"]

    def test_byte_identical_reruns(self, runner, tmp_path):
        dirs = [str(tmp_path / n) for n in ("a", "b")]
        for d in dirs:
            res = runner.invoke(main, self.SIM_ARGS + ["--out", d])
            assert res.exit_code == 0, res.output
        for fname in ("table1.csv", "table2.csv", "lambda0_bias.csv",
                      "run_meta.json"):
            with open(os.path.join(dirs[0], fname), "rb") as f0, \
                    open(os.path.join(dirs[1], fname), "rb") as f1:
                assert f0.read() == f1.read(), fname

    def test_meta_records_resolved_options(self, runner, tmp_path):
        out = str(tmp_path)
        res = runner.invoke(main, self.SIM_ARGS + ["--out", out])
        assert res.exit_code == 0, res.output
        with open(os.path.join(out, "run_meta.json")) as fh:
            meta = json.load(fh)
        cli = meta[0]["cli"]
        assert cli["scenarios"] == [1] and cli["seed"] == 7
        assert cli["estimators"] == ["naive", "post_kws"]
        assert meta[0]["population"]["size"] == 4000
        assert meta[0]["scenario"]["n_cohort"] == 300

    def test_config_file_overrides_flags(self, runner, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(
            {"scenario": {"id": 3, "reps": 2, "n_cohort": 300,
                          "n_survey": 200, "lambda_grid": [1.0, 3.0]}}))
        out = str(tmp_path / "out")
        res = runner.invoke(main, [
            "simulate", "--scenario", "1", "--reps", "99", "--seed", "7",
            "--pop-size", "4000", "--estimators", "naive",
            "--config", str(cfg), "--out", out])
        assert res.exit_code == 0, res.output
        t1 = pd.read_csv(os.path.join(out, "table1.csv"))
        assert set(t1["scenario"]) == {3}
        assert t1["n_reps"].iloc[0] == 2

    def test_unknown_estimator_is_config_error(self, runner, tmp_path):
        res = runner.invoke(main, [
            "simulate", "--estimators", "bogus", "--out", str(tmp_path)])
        assert res.exit_code == 2

    def test_gamma_sweep_output(self, runner, tmp_path):
        out = str(tmp_path)
        res = runner.invoke(main, [
            "simulate", "--scenario", "1", "--reps", "2", "--seed", "7",
            "--pop-size", "4000", "--n-cohort", "300", "--n-survey", "200",
            "--sweep-gamma-d", "0.0,0.5", "--out", out])
        assert res.exit_code == 0, res.output
        sdf = pd.read_csv(os.path.join(out, "gamma_sweep.csv"))
        assert list(sdf["gamma_d"]) == [0.0, 0.5]
