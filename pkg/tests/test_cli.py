import csv
import json

import numpy as np
import pytest

from apcsim import GridSpec, artificial_effects, get_case, read_csv
from apcsim.cli import main

CASE8_COHORT = [
    -0.95, -0.75, -0.75, -0.55, -0.55, -0.35, -0.35, -0.15, -0.15, 0.05,
    0.05, 0.25, 0.25, 0.45, 0.45, 0.65, 0.65, 0.85, 0.85,
]


def run(*argv):
    return main([str(a) for a in argv])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestGenerate:
    def test_case8(self, tmp_path):
        out = tmp_path / "d.csv"
        assert run("generate", "--case", 8, "--out", out) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "i,j,k,y" and len(lines) == 1001
        side = json.loads((tmp_path / "d.json").read_text())
        assert side["schema"] == 1 and side["case_id"] == 8
        assert np.round(side["beta"]["cohort"], 2).tolist() == CASE8_COHORT
        assert side["manifest"]["args"]["seed"] == 1234
        assert side["manifest"]["version"]

    def test_single_replicate(self, tmp_path):
        out = tmp_path / "d.csv"
        assert run("generate", "--case", 2, "--T", 1, "--out", out) == 0
        assert len(out.read_text().splitlines()) == 101

    def test_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert run("generate", "--case", 5, "--seed", 3, "--out", tmp_path / f"{name}.csv") == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_timestamp_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        assert run("generate", "--case", 1, "--out", tmp_path / "d.csv") == 0
        side = json.loads((tmp_path / "d.json").read_text())
        assert side["manifest"]["timestamp"].startswith("1970-01-01")

    def test_unwritable(self, tmp_path):
        assert run("generate", "--case", 1, "--out", tmp_path / "missing" / "d.csv") == 2

    @pytest.mark.parametrize(
        "argv",
        [
            ("generate", "--case", 14, "--out", "x.csv"),
            ("generate", "--out", "x.csv"),
            ("generate", "--case", 1, "--I", 1, "--out", "x.csv"),
            ("fit", "--model", "lasso", "--data", "x.csv"),
            ("nonsense",),
            (),
        ],
    )
    def test_usage_errors(self, argv, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert run(*argv) == 1


@pytest.fixture(scope="module")
def case8_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("case8")
    assert run("generate", "--case", 8, "--out", d / "data.csv") == 0
    return d


class TestFit:
    def test_map_report(self, case8_files, tmp_path):
        out = tmp_path / "fit.json"
        assert run("fit", "--model", "rw", "--method", "map", "--data", case8_files / "data.csv", "--out", out) == 0
        rep = json.loads(out.read_text())
        assert rep["schema"] == 1 and rep["model"] == "rw" and rep["converged"] is True
        for blk in ("age", "period", "cohort"):
            assert abs(sum(rep["point"][blk])) <= 1e-9
        assert rep["rhat"] is None
        assert abs(rep["bias"]["s"]) < 0.02 and rep["bias"]["grade"] == "A"
        assert rep["manifest"]["config"]["method"] == "map"
        assert "centering" in rep

    def test_mcmc_report(self, case8_files, tmp_path, capsys):
        argv = ["fit", "--model", "re", "--data", case8_files / "data.csv", "--iter", 1200, "--warmup", 400]
        assert run(*argv) == 0
        rep = json.loads(capsys.readouterr().out)
        assert set(rep["rhat"]) >= {"b0", "b_A[1]", "b_C[19]", "sigma", "sigma_A"}
        assert rep["converged"] == (rep["max_rhat"] < 1.05)
        assert max(abs(c) for c in rep["point"]["cohort"]) <= 0.15

    def test_without_sidecar(self, case8_files, tmp_path, capsys):
        data = read_csv(case8_files / "data.csv")
        data.to_csv(tmp_path / "plain.csv")
        assert run("fit", "--model", "rr", "--method", "map", "--data", tmp_path / "plain.csv") == 0
        rep = json.loads(capsys.readouterr().out)
        assert "bias" not in rep and rep["spec"]["gamma"] is None

    def test_ridge_slope_between(self, case8_files, capsys):
        slopes = {}
        for model in ("re", "rr", "rw"):
            assert run("fit", "--model", model, "--method", "map", "--data", case8_files / "data.csv") == 0
            slopes[model] = json.loads(capsys.readouterr().out)["bias"]["decomposition"]["sC"]
        assert slopes["re"] < slopes["rr"] < slopes["rw"]

    def test_malformed_csv(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("i,j,k,y\n1,1,2,0.1\n2,1,1,oops\n")
        assert run("fit", "--model", "re", "--data", bad) == 3
        assert "line 3" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run("fit", "--model", "re", "--data", tmp_path / "none.csv") == 2


class TestTheory:
    def test_ten_by_ten(self, capsys):
        assert run("theory", "--I", 10, "--J", 10) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["sum_vP2"] == 82.5 and doc["sum_vC2"] == 570.0
        assert doc["weight_gap"] == pytest.approx(4.909090909, rel=1e-9)
        assert doc["gap_positive"] is True

    def test_rejects_small(self):
        assert run("theory", "--I", 1, "--J", 3) == 1


class TestPlotdata:
    def test_flat_case13(self, tmp_path):
        out = tmp_path / "p.csv"
        assert run("plotdata", "--case", 13, "--nl", 0, "--out", out) == 0
        rows = read_rows(out)
        assert len(rows) == 100 and set(rows[0]) == {"series", "x", "y"}
        ys = np.array([float(r["y"]) for r in rows])
        assert np.ptp(ys) <= 1e-9

    def test_cases_1_and_7_identical_without_nonlinearity(self, tmp_path):
        for cid in (1, 7):
            assert run("plotdata", "--case", cid, "--nl", 0, "--out", tmp_path / f"{cid}.csv") == 0
        assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "7.csv").read_bytes()

    def test_series_are_periods(self, tmp_path):
        out = tmp_path / "p.csv"
        assert run("plotdata", "--case", 8, "--out", out) == 0
        rows = read_rows(out)
        beta = artificial_effects(get_case(8), GridSpec(10, 10))
        for r in rows:
            j, k = int(r["series"]), int(r["x"])
            i = j - k + 10
            assert float(r["y"]) == pytest.approx(beta.age[i - 1] + beta.period[j - 1] + beta.cohort[k - 1], rel=1e-11, abs=1e-12)

    def test_fit_blocks(self, case8_files, tmp_path):
        rep = tmp_path / "fit.json"
        assert run("fit", "--model", "rw", "--method", "map", "--data", case8_files / "data.csv", "--out", rep) == 0
        out = tmp_path / "p.csv"
        assert run("plotdata", "--fit", rep, "--out", out) == 0
        rows = read_rows(out)
        counts = {s: sum(r["series"] == s for r in rows) for s in ("age", "period", "cohort")}
        assert counts == {"age": 10, "period": 10, "cohort": 19}

    def test_data_source(self, case8_files, capsys):
        assert run("plotdata", "--data", case8_files / "data.csv") == 0
        assert len(capsys.readouterr().out.splitlines()) == 101

    def test_bad_fit_report(self, tmp_path):
        bad = tmp_path / "r.json"
        bad.write_text("{not json")
        assert run("plotdata", "--fit", bad) == 3


class TestGridCommand:
    def test_map_grid(self, tmp_path):
        out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
        argv = ["grid", "--method", "map", "--seed", 11, "--jobs", 1, "--restarts", 4]
        assert run(*argv, "--out", out_a) == 0
        assert run(*argv, "--out", out_b) == 0
        assert out_a.read_bytes() == out_b.read_bytes()
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        rows = read_rows(tmp_path / "a.csv")
        assert len(rows) == 39
        assert list(rows[0]) == ["case", "A", "P", "C", "model", "s", "grade", "converged"]
        rw = [r for r in rows if r["model"] == "rw" and int(r["case"]) <= 9]
        assert all(r["grade"] in "AB" for r in rw)
        re3 = next(r for r in rows if r["model"] == "re" and r["case"] == "3")
        assert re3["grade"] == "E"

    def test_subset_and_bad_models(self, tmp_path):
        out = tmp_path / "g.json"
        assert run("grid", "--method", "map", "--models", "rw", "--cases", "2,4", "--I", 5, "--J", 5, "--out", out) == 0
        doc = json.loads(out.read_text())
        assert [(r["case"], r["model"]) for r in doc["rows"]] == [(2, "rw"), (4, "rw")]
        assert run("grid", "--models", "xx", "--out", out) == 1
        assert run("grid", "--cases", "0", "--out", out) == 1


def test_cases_differ_with_nonlinearity(tmp_path):
    for cid in (1, 7):
        assert run("plotdata", "--case", cid, "--out", tmp_path / f"{cid}.csv") == 0
    assert (tmp_path / "1.csv").read_bytes() != (tmp_path / "7.csv").read_bytes()
