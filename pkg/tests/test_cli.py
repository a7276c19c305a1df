import json

import numpy as np
import pytest

from doubleweight.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    RunConfig,
    export_csv,
    ingest_csv,
    main,
    run_analysis,
)
from doubleweight.exceptions import ParseError, SchemaError
from doubleweight.simulation import sample_latent_class


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def basic_config(path, **kw):
    defaults = dict(
        input_path=path,
        outcome="y",
        treatment="z",
        covariates=["x1"],
        partial_covariates=["w1"],
    )
    defaults.update(kw)
    return RunConfig(**defaults)


class TestIngest:
    def test_missing_outcome_builds_mask(self, tmp_path):
        path = write_csv(
            tmp_path / "d.csv",
            "y,z,x1,w1\n1.5,1,0.2,3\nNA,0,0.1,4\n2.0,0,0.3,NA\n",
        )
        ds = ingest_csv(path, basic_config(path))
        assert list(ds.r_y) == [1, 0, 1]
        assert list(ds.covariates.observed_mask[:, 0]) == [1, 1, 0]
        assert np.isnan(ds.y[1])

    def test_bad_treatment_value(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", "y,z,x1,w1\n1,2,0.2,3\n")
        with pytest.raises(SchemaError) as err:
            ingest_csv(path, basic_config(path))
        assert "row 2" in str(err.value) and "'z'" in str(err.value)

    def test_missing_in_fully_observed_covariate(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", "y,z,x1,w1\n1,1,NA,3\n")
        with pytest.raises(SchemaError) as err:
            ingest_csv(path, basic_config(path))
        assert "'x1'" in str(err.value)

    def test_custom_token_set(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", "y,z,x1,w1\n.,1,0.2,3\n1.0,0,0.1,.\n")
        cfg = basic_config(path, missing_tokens=("NA", "."))
        ds = ingest_csv(path, cfg)
        assert list(ds.r_y) == [0, 1]
        assert list(ds.covariates.observed_mask[:, 0]) == [1, 0]

    def test_unparseable_number(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", "y,z,x1,w1\nabc,1,0.2,3\n")
        with pytest.raises(ParseError) as err:
            ingest_csv(path, basic_config(path))
        assert err.value.row == 2 and err.value.column == "y"

    def test_unknown_column(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", "y,z\n1,1\n")
        with pytest.raises(SchemaError):
            ingest_csv(path, basic_config(path))

    def test_roundtrip_lossless(self, tmp_path):
        ds, _, _ = sample_latent_class(120, 0.3, 5)
        path = tmp_path / "roundtrip.csv"
        export_csv(ds, path)
        cfg = RunConfig(
            input_path=str(path),
            outcome="y",
            treatment="z",
            covariates=list(ds.covariates.x_labels),
            partial_covariates=list(ds.covariates.w_labels),
        )
        back = ingest_csv(str(path), cfg)
        assert np.array_equal(back.r_y, ds.r_y)
        assert np.array_equal(back.z, ds.z)
        assert np.array_equal(back.y[back.r_y == 1], ds.y[ds.r_y == 1])
        assert np.array_equal(back.covariates.observed_mask, ds.covariates.observed_mask)
        m = ds.covariates.observed_mask == 1
        assert np.array_equal(back.covariates.partial[m], ds.covariates.partial[m])
        assert np.array_equal(
            back.covariates.fully_observed, ds.covariates.fully_observed
        )


@pytest.fixture(scope="module")
def synthetic_csv(tmp_path_factory):
    ds, _, _ = sample_latent_class(400, 0.25, 7)
    path = tmp_path_factory.mktemp("cli") / "synthetic.csv"
    export_csv(ds, path)
    return str(path), ds


class TestRunAnalysis:
    def config(self, path, ds, **kw):
        return RunConfig(
            input_path=path,
            outcome="y",
            treatment="z",
            covariates=list(ds.covariates.x_labels),
            partial_covariates=list(ds.covariates.w_labels),
            seed=7,
            **kw,
        )

    def test_report_shape_mirrors_estimator_table(self, synthetic_csv):
        # estimators x {point, variance} layout on synthetic input
        path, ds = synthetic_csv
        report, code = run_analysis(self.config(path, ds))
        assert code == EXIT_OK
        assert set(report["estimators"]) == {"unadj", "x-reg", "x-ps", "dr"}
        for entry in report["estimators"].values():
            assert {"estimate", "se", "ci95", "diagnostics"} <= set(entry)
            assert entry["estimate"] is not None
            assert entry["se"]["sandwich"] is not None
            lo, hi = entry["ci95"]["sandwich"]
            assert lo <= entry["estimate"] <= hi

    def test_reports_are_byte_identical(self, synthetic_csv, tmp_path):
        path, ds = synthetic_csv
        outs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            cfg = self.config(
                path,
                ds,
                output_path=str(out),
                variance_methods=["sandwich", "bootstrap"],
                bootstrap_reps=25,
            )
            run_analysis(cfg)
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_report_validates_against_schema(self, synthetic_csv, tmp_path):
        jsonschema = pytest.importorskip("jsonschema")
        from importlib.resources import files

        path, ds = synthetic_csv
        report, _ = run_analysis(self.config(path, ds))
        schema = json.loads(
            files("doubleweight").joinpath("report_schema.json").read_text()
        )
        jsonschema.validate(report, schema)
        dumped = json.loads(json.dumps(report))
        for entry in dumped["estimators"].values():
            for value in entry["se"].values():
                assert value is None or np.isfinite(value)

    def test_numbers_finite_or_null(self, synthetic_csv):
        path, ds = synthetic_csv
        report, _ = run_analysis(self.config(path, ds))
        text = json.dumps(report)
        assert "NaN" not in text and "Infinity" not in text


class TestMain:
    def test_analyze_end_to_end(self, synthetic_csv, tmp_path, capsys):
        path, ds = synthetic_csv
        out = tmp_path / "report.json"
        code = main(
            [
                "analyze",
                "--data", path,
                "--outcome", "y",
                "--treatment", "z",
                "--covariates", ",".join(ds.covariates.x_labels),
                "--partial-covariates", ",".join(ds.covariates.w_labels),
                "--method", "unadj,x-ps",
                "--variance", "sandwich",
                "--seed", "3",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert set(report["estimators"]) == {"unadj", "x-ps"}

    def test_unknown_method_is_config_error(self, synthetic_csv):
        path, _ = synthetic_csv
        code = main(
            [
                "analyze",
                "--data", path,
                "--outcome", "y",
                "--treatment", "z",
                "--method", "magic",
            ]
        )
        assert code == EXIT_CONFIG

    def test_missing_file_is_config_error(self):
        code = main(
            [
                "analyze",
                "--data", "/nonexistent/nope.csv",
                "--outcome", "y",
                "--treatment", "z",
            ]
        )
        assert code == EXIT_CONFIG

    def test_simulate_writes_outputs(self, tmp_path, capsys):
        prefix = str(tmp_path / "sim")
        code = main(
            [
                "simulate",
                "--dgp", "sinusoidal",
                "--n", "200",
                "--e", "0.5",
                "--reps", "8",
                "--seed", "1",
                "--out-prefix", prefix,
            ]
        )
        assert code == EXIT_OK
        captured = capsys.readouterr().out
        assert "var(x-reg) > var(unadj)" in captured
        summary = json.loads((tmp_path / "sim_summary.json").read_text())
        assert summary["reps"] == 8
        lines = (tmp_path / "sim_replications.csv").read_text().splitlines()
        assert lines[0] == "rep,estimator,tau_hat,se_sandwich"

    def test_unknown_dgp_lists_presets(self, capsys):
        code = main(["simulate", "--dgp", "weird"])
        assert code == EXIT_CONFIG
        assert "presets" in capsys.readouterr().err

    def test_zero_reps_rejected(self, capsys):
        code = main(["simulate", "--dgp", "sinusoidal", "--reps", "0"])
        assert code == EXIT_CONFIG
