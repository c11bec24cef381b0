import csv
import json

import numpy as np
import pytest

from frdct.cli import RunManifest, main, read_sample_csv, ValidationError
from frdct.simulate import DgpConfig, generate_dgp


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    s = generate_dgp(DgpConfig(n=600, seed=12))
    path = tmp_path_factory.mktemp("data") / "data.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "t", "r", "note"])
        for row in zip(s.y, s.t, s.r):
            w.writerow([*row, "x"])
    return path


def _run(data_csv, out, *extra):
    return main(["estimate", str(data_csv), "--cutoff", "0.5", "--model", "shifted_quadratic",
                 "--intercept", "0.5", "--tnorm", "0.5", "--restarts", "3", "--out", str(out), *extra])


def test_estimate_end_to_end(data_csv, tmp_path):
    assert _run(data_csv, tmp_path / "a", "--infer", "--me-grid", "1.0,1.5") == 0
    res = json.loads((tmp_path / "a" / "result.json").read_text())
    assert len(res["gamma_hat"]) == 3 and np.all(np.isfinite(res["gamma_hat"]))
    assert res["criterion"] >= 0
    assert len(res["inference"]["standard_errors"]) == 3
    assert {t["hypothesis"] for t in res["inference"]["tests"]} == {"gamma1 = 0", "gamma2 = 0", "gamma3 = 0"}
    m = RunManifest.from_dict(res["manifest"])
    assert res["manifest_digest"] == m.digest()
    assert set(m.outputs) == {"curves.csv", "marginal_effects.csv", "result.json"}
    with open(tmp_path / "a" / "curves.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["u", "h0", "h1"] and len(rows) == 102
    u = np.array([float(r[0]) for r in rows[1:]])
    assert np.all(np.diff(u) > 0)
    for c in (1, 2):
        assert np.all(np.diff([float(r[c]) for r in rows[1:]]) >= 0)
    with open(tmp_path / "a" / "marginal_effects.csv") as fh:
        me = list(csv.DictReader(fh))
    assert [float(r["t"]) for r in me] == [1.0, 1.5]
    assert all(np.isfinite(float(r["semiparametric"])) for r in me)


def test_estimate_deterministic(data_csv, tmp_path):
    assert _run(data_csv, tmp_path / "a") == 0
    assert _run(data_csv, tmp_path / "b") == 0
    a = json.loads((tmp_path / "a" / "result.json").read_text())
    b = json.loads((tmp_path / "b" / "result.json").read_text())
    a["manifest"].pop("timings")
    b["manifest"].pop("timings")
    assert a == b


def test_missing_column(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("y,r\n1,0.2\n2,0.7\n")
    assert main(["estimate", str(p), "--cutoff", "0.5", "--out", str(tmp_path / "o")]) == 2
    assert "column(s) t" in capsys.readouterr().err


def test_malformed_value_names_row_and_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("y,t,r\n1,0.5,0.2\n2,abc,0.7\n")
    with pytest.raises(ValidationError, match="row 3, column t"):
        read_sample_csv(p, 0.5)


def test_missing_cutoff_and_bad_flags(data_csv, tmp_path):
    assert main(["estimate", str(data_csv), "--out", str(tmp_path)]) == 2
    assert main(["estimate", str(data_csv), "--cutoff", "0.5", "--model", "cubic"]) == 2
    assert main(["simulate", "--reps", "3", "--out", str(tmp_path)]) == 2


def test_estimation_failure_exit_code(tmp_path):
    p = tmp_path / "disjoint.csv"
    rng = np.random.default_rng(0)
    r = rng.uniform(size=400)
    t = np.where(r < 0.5, rng.uniform(0, 1, 400), rng.uniform(5, 6, 400))
    with open(p, "w") as fh:
        fh.write("y,t,r\n" + "".join(f"{a},{a},{b}\n" for a, b in zip(t, r)))
    assert main(["estimate", str(p), "--cutoff", "0.5", "--restarts", "2", "--out", str(tmp_path / "o")]) == 1


def test_config_file_and_override(data_csv, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[estimate]\ncutoff = 0.5\nmodel = "linear"\ntnorm = 0.5\nintercept = 0.5\nrestarts = 2\n')
    assert main(["estimate", str(data_csv), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "result.json").read_text())
    assert len(res["gamma_hat"]) == 1
    assert main(["estimate", str(data_csv), "--config", str(cfg), "--model", "shifted_quadratic",
                 "--out", str(tmp_path / "p")]) == 0
    assert len(json.loads((tmp_path / "p" / "result.json").read_text())["gamma_hat"]) == 3
    bad = tmp_path / "bad.toml"
    bad.write_text("[estimate]\nbandwith = 3\n")
    assert main(["estimate", str(data_csv), "--config", str(bad), "--cutoff", "0.5"]) == 2


def test_manifest_round_trip():
    m = RunManifest("simulate", {"n": 500, "nested": {"a": [1, 2]}}, 7, input_digest=None,
                    timings={"total_seconds": 1.5}, outputs=["table.csv"])
    assert RunManifest.from_json(m.to_json()) == m
    m2 = RunManifest("simulate", {"n": 500, "nested": {"a": [1, 2]}}, 7, timings={"total_seconds": 9.0},
                     outputs=["table.csv"])
    assert m.digest() == m2.digest()


@pytest.mark.slow
def test_replicate_table_schema(tmp_path):
    assert main(["replicate-table", "--n", "500", "--reps", "10", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "table.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 2
    numeric = [float(v) for v in rows[1][4:]]
    assert len(numeric) == 9 and np.all(np.isfinite(numeric))
    rep = json.loads((tmp_path / "report.json").read_text())
    assert len(rep["cells"]) == 1 and rep["cells"][0]["reps"] == 10
    assert json.loads((tmp_path / "manifest.json").read_text())["command"] == "replicate-table"


@pytest.mark.slow
def test_weakid_command(tmp_path):
    assert main(["weakid", "--n", "500", "--reps", "50", "--seed", "100", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "weakid_estimates.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 50
    sp = np.array([float(r["semiparametric"]) for r in rows])
    ts = np.array([float(r["tsls"]) for r in rows])
    assert np.all(np.isfinite(sp))
    # the Wald ratio has non-finite or extreme entries; the semiparametric column does not
    assert np.any(~np.isfinite(ts)) or np.nanmax(np.abs(ts - 1)) > 3 * np.max(np.abs(sp - 1))
