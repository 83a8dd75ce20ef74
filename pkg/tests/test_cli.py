import csv
import json

import numpy as np
import pytest
from scipy.stats import norm

from sieve_hte.artifact import FitArtifact
from sieve_hte.cli import coefficient_rows, main


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_frame(path, y, d, x, names=None):
    names = names or [f"x{j + 1}" for j in range(x.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "d", *names])
        for i in range(y.size):
            w.writerow([repr(float(v)) for v in (y[i], d[i], *x[i])])


SIM = ["simulate", "--link", "linear", "--n", "1000", "--prop", "0.5", "--reps", "2",
       "--k", "2", "--boot", "0", "--seed", "42", "--workers", "1"]


@pytest.fixture(scope="module")
def emitted(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sim")
    data = tmp / "data.csv"
    assert main([*SIM, "--out", str(tmp / "s.csv"), "--emit-data", str(data)]) == 0
    return tmp, data


def test_fit_recovers_index_on_emitted_data(emitted):
    tmp, data = emitted
    art, table = tmp / "fit.json", tmp / "table.csv"
    code = main(["fit", "--data", str(data), "--outcome", "y", "--treatment", "d",
                 "--covariates", "x1,x2,x3", "--k", "2", "--boot", "40", "--seed", "1",
                 "--out", str(art), "--table", str(table)])
    assert code == 0
    rows = read_rows(table)
    assert [r["name"] for r in rows] == ["x1", "x2", "x3"]
    for r, truth in zip(rows, [0.8, -0.6, 0.0]):
        est, sd = float(r["estimate"]), float(r["sd"])
        assert abs(est - truth) <= 3 * sd
        assert float(r["ci_lo"]) <= est <= float(r["ci_hi"])
        assert float(r["p_value"]) == pytest.approx(2 * norm.sf(abs(est) / sd), rel=1e-9)
    doc = json.loads(art.read_text())
    assert doc["schema_version"] == 1
    assert len(doc["provenance"]["input_sha256"]) == 64


def test_artifact_round_trip(emitted, tmp_path):
    tmp, data = emitted
    art = tmp_path / "a.json"
    assert main(["fit", "--data", str(data), "--outcome", "y", "--treatment", "d",
                 "--covariates", "x1,x2,x3", "--k", "3", "--boot", "0", "--out", str(art)]) == 0
    first = FitArtifact.read(art)
    again = tmp_path / "b.json"
    first.write(again)
    assert art.read_bytes() == again.read_bytes()
    assert FitArtifact.read(again) == first
    assert first.single_index_fit().gamma.tolist() == first.gamma


def test_p_value_is_two_sided_wald():
    rows = coefficient_rows(["a", "b"], [0.5, -1.0], [0.25, 0.5])
    assert rows[0][5] == pytest.approx(2 * norm.sf(2.0), rel=1e-12)
    assert rows[1][5] == pytest.approx(2 * norm.sf(2.0), rel=1e-12)


def test_non_binary_treatment_is_rejected(tmp_path):
    r = np.random.default_rng(0)
    x = r.standard_normal((50, 2))
    d = np.tile([0.0, 1.0], 25)
    d[3] = 2.0
    path = tmp_path / "bad.csv"
    write_frame(path, r.standard_normal(50), d, x)
    code = main(["fit", "--data", str(path), "--outcome", "y", "--treatment", "d",
                 "--covariates", "x1,x2", "--boot", "0", "--out", str(tmp_path / "o.json")])
    assert code == 4


def test_missing_column_and_cell(tmp_path):
    r = np.random.default_rng(0)
    path = tmp_path / "ok.csv"
    write_frame(path, r.standard_normal(50), np.tile([0.0, 1.0], 25), r.standard_normal((50, 2)))
    base = ["fit", "--data", str(path), "--outcome", "y", "--treatment", "d", "--boot", "0",
            "--out", str(tmp_path / "o.json")]
    assert main([*base, "--covariates", "x1,zz"]) == 3
    text = path.read_text().splitlines()
    parts = text[5].split(",")
    parts[2] = ""
    text[5] = ",".join(parts)
    holed = tmp_path / "holed.csv"
    holed.write_text("\n".join(text) + "\n")
    base[2] = str(holed)
    assert main([*base, "--covariates", "x1,x2"]) == 4


def test_rank_deficient_covariates(tmp_path):
    r = np.random.default_rng(0)
    x = r.standard_normal((60, 1))
    x = np.column_stack([x, 2 * x])
    path = tmp_path / "dup.csv"
    write_frame(path, r.standard_normal(60), np.tile([0.0, 1.0], 30), x)
    code = main(["fit", "--data", str(path), "--outcome", "y", "--treatment", "d",
                 "--covariates", "x1,x2", "--boot", "0", "--out", str(tmp_path / "o.json")])
    assert code == 5


def test_zero_reps_is_a_usage_error(tmp_path, capsys):
    args = [a if a != "2" else "0" for a in SIM]
    assert main([*args, "--out", str(tmp_path / "s.csv")]) == 2


def test_bad_misspec_is_a_usage_error(tmp_path):
    assert main([*SIM, "--misspec", "TXT", "--out", str(tmp_path / "s.csv")]) == 2


def test_simulate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = [*SIM[:-6], "--boot", "3", "--seed", "42", "--workers", "1"]
    assert main([*args, "--out", str(a)]) == 0
    assert main([*args, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = read_rows(a)
    assert [r["component"] for r in rows] == ["gamma1", "gamma2", "gamma3"]
    assert {"bias", "sd", "ese", "ci_cover", "mse_mean_sim"} <= set(rows[0])


@pytest.fixture(scope="module")
def noiseless_artifact(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("curve")
    r = np.random.default_rng(3)
    x = r.standard_normal((600, 3))
    d = (r.uniform(size=600) < 0.5).astype(float)
    y = x[:, 0] - 0.5 * x[:, 1] + d * (x @ [0.8, -0.6, 0.0])
    data = tmp / "clean.csv"
    write_frame(data, y, d, x)
    art = tmp / "clean.json"
    assert main(["fit", "--data", str(data), "--outcome", "y", "--treatment", "d",
                 "--covariates", "x1,x2,x3", "--k", "3", "--boot", "0", "--out", str(art)]) == 0
    return tmp, art


@pytest.mark.parametrize("grid,count", [("-1:1:1", 3), ("0:0:0.1", 1), ("-3:3:0.05", 121)])
def test_link_curve_rows(noiseless_artifact, grid, count):
    tmp, art = noiseless_artifact
    out = tmp / "curve.csv"
    assert main(["link-curve", "--artifact", str(art), "--grid", grid, "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == count
    for r in rows:
        assert abs(float(r["g_hat"]) - float(r["u"])) < 1e-6
        assert float(r["lo"]) <= float(r["g_hat"]) <= float(r["hi"])


def test_malformed_grid(noiseless_artifact):
    tmp, art = noiseless_artifact
    code = main(["link-curve", "--artifact", str(art), "--grid", "1:2", "--out", str(tmp / "x.csv")])
    assert code == 2
