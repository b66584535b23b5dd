import json
from pathlib import Path

import numpy as np
import pytest

from onlinehuber.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main
from onlinehuber.ingest import airline_schema
from onlinehuber.simgen import AirlineSim, SimSpec, write_airline_csv

DATA = Path(__file__).parent / "data"
SIM_SCHEMA = str(DATA / "sim_schema.json")


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    SimSpec(n_t=200, b=10, error_case=2, seed=4).save(d / "sim.json")
    assert main(["simulate", "--spec", str(d / "sim.json"), "--out", str(d / "sim.csv")]) == EXIT_OK
    return d / "sim.csv"


def fit(tmp_path, *extra, input_=None, schema=SIM_SCHEMA):
    out = tmp_path / "report.json"
    code = main(["fit", "--input", str(input_), "--schema", schema, "--report", str(out), *extra])
    return code, (json.loads(out.read_text()) if code == EXIT_OK else None)


class TestSimulate:
    def test_rows_and_header(self, sim_csv):
        lines = sim_csv.read_text().splitlines()
        assert lines[0] == "x1,x2,x3,x4,y,batch"
        assert len(lines) == 2001
        assert lines[-1].endswith(",10")


class TestFit:
    def test_uhr_near_truth(self, sim_csv, tmp_path):
        code, rep = fit(tmp_path, "--batch-size", "200", input_=sim_csv)
        assert code == EXIT_OK
        assert rep["b_used"] == 10 and rep["n_train"] == 2000
        z = (np.array(rep["coef"]) - [1, -1, 2, -2]) / np.array(rep["se"])
        assert np.all(np.abs(z) < 4)
        assert "oos_mse" not in rep

    def test_single_batch_uhr_equals_ohr(self, sim_csv, tmp_path):
        _, a = fit(tmp_path, "--batch-size", "5000", "--estimator", "uhr", input_=sim_csv)
        _, b = fit(tmp_path, "--batch-size", "5000", "--estimator", "ohr", input_=sim_csv)
        # equal up to the round-off of solving U x = U theta
        np.testing.assert_allclose(a["coef"], b["coef"], atol=1e-12, rtol=0)

    def test_test_split_reports_oos(self, sim_csv, tmp_path):
        _, rep = fit(tmp_path, "--test-split", "0.25", "--batch-size", "100", input_=sim_csv)
        assert rep["n_test"] == 500 and rep["oos_mse"] > 0

    def test_bootstrap(self, sim_csv, tmp_path):
        _, rep = fit(tmp_path, "--bootstrap", "20", "--batch-size", "200", input_=sim_csv)
        assert rep["se_method"].startswith("bootstrap")
        assert all(s > 0 for s in rep["se"])

    def test_airline_within_bootstrap_ci(self, tmp_path):
        sim = AirlineSim(seed=8)
        write_airline_csv(sim, 8000, tmp_path / "air.csv")
        airline_schema(sim.min_shift).save(tmp_path / "schema.json")
        code, rep = fit(tmp_path, "--bootstrap", "40", "--batch-size", "800",
                        input_=tmp_path / "air.csv", schema=str(tmp_path / "schema.json"))
        assert code == EXIT_OK
        lo = np.array(rep["coef"]) - 3 * np.array(rep["se"])
        hi = np.array(rep["coef"]) + 3 * np.array(rep["se"])
        assert np.all((lo < sim.gamma) & (np.array(sim.gamma) < hi))


class TestBench:
    @staticmethod
    def mask_time(text):
        out = []
        for line in text.splitlines():
            if line[:1].isdigit():
                fields = line.split(",")
                fields[8] = "*"
                line = ",".join(fields)
            out.append(line)
        return "\n".join(out) + "\n"

    def test_golden(self, tmp_path):
        out = tmp_path / "bench.csv"
        assert main(["bench", "--spec", str(DATA / "bench_smoke.json"), "--out", str(out)]) == 0
        assert self.mask_time(out.read_text()) == (DATA / "bench_smoke_golden.csv").read_text()

    def test_series_and_table(self, tmp_path):
        out, series = tmp_path / "t.md", tmp_path / "s.csv"
        code = main(["bench", "--spec", str(DATA / "bench_smoke.json"), "--out", str(out),
                     "--format", "markdown", "--layout", "table", "--series", str(series)])
        assert code == 0
        assert "| mse | UHR |" in out.read_text()
        assert series.read_text().count("\n") > 1


class TestState:
    def test_save_resume_matches_single_pass(self, sim_csv, tmp_path):
        common = ["--input", str(sim_csv), "--schema", SIM_SCHEMA, "--batch-size", "200"]
        snap = tmp_path / "snap.json"
        assert main(["state", "save", *common, "--max-rows", "1000", "--snapshot", str(snap)]) == 0
        assert json.loads(snap.read_text())["b_seen"] == 5
        report = tmp_path / "resumed.json"
        assert main(["state", "resume", *common, "--skip-rows", "1000", "--snapshot", str(snap),
                     "--report", str(report)]) == 0
        _, single = fit(tmp_path, "--batch-size", "200", input_=sim_csv)
        resumed = json.loads(report.read_text())
        assert resumed["b_used"] == 10
        np.testing.assert_allclose(resumed["coef"], single["coef"], atol=1e-12, rtol=0)


class TestExitCodes:
    def test_missing_input_is_io(self, tmp_path):
        code, _ = fit(tmp_path, input_=tmp_path / "nope.csv")
        assert code == EXIT_IO

    def test_bad_schema_is_config(self, sim_csv, tmp_path):
        bad = tmp_path / "schema.json"
        bad.write_text('{"response": {"column": "y"}, "predictors": []}')
        code, _ = fit(tmp_path, input_=sim_csv, schema=str(bad))
        assert code == EXIT_CONFIG

    def test_missing_column_is_config(self, sim_csv, tmp_path):
        bad = tmp_path / "schema.json"
        bad.write_text('{"response": {"column": "z"}, "predictors": [{"kind": "numeric", "column": "x1"}]}')
        assert fit(tmp_path, input_=sim_csv, schema=str(bad))[0] == EXIT_CONFIG

    def test_bad_flag_is_config(self):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--batch-size", "ten"])
        assert exc.value.code == EXIT_CONFIG

    def test_collinear_is_numeric(self, tmp_path):
        f = tmp_path / "c.csv"
        rng = np.random.default_rng(0)
        f.write_text("x1,x2,x3,x4,y\n" + "".join(
            f"{a},{2 * a},{b},{c},{d}\n" for a, b, c, d in rng.normal(size=(50, 4))))
        code, _ = fit(tmp_path, "--batch-size", "25", input_=f)
        assert code == EXIT_NUMERIC


class TestEnvOverride:
    def test_batch_size_from_env(self, sim_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("ONLINEHUBER_BATCH_SIZE", "500")
        _, rep = fit(tmp_path, input_=sim_csv)
        assert rep["b_used"] == 4

    def test_flag_beats_env(self, sim_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("ONLINEHUBER_BATCH_SIZE", "500")
        _, rep = fit(tmp_path, "--batch-size", "1000", input_=sim_csv)
        assert rep["b_used"] == 2
