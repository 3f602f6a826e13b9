import csv
import json

import numpy as np
import pytest

from bivtail.cli import (
    MIN_ROWS,
    UsageError,
    censor_sample,
    ingest,
    load_config_file,
    main,
    parse_args,
    quantile_thresholds,
)
from bivtail.mcmc import Trace

FAST = ["--iterations", "400", "--burn-in", "100", "--thin", "5"]


def _write(path, rows, header=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        w.writerows(rows)
    return path


# ---------------------------------------------------------------- ingestion


def test_ingest_three_column_file(tmp_path):
    rng = np.random.default_rng(0)
    rows = [(f"d{i}", *rng.pareto(1.0, 2) + 1) for i in range(2167)]
    path = _write(tmp_path / "losses.csv", rows, ("date", "building", "contents"))
    res = ingest(path, ("1", "2"))
    assert len(res.x1) == 2167 and res.dropped == 0
    assert res.names == ("building", "contents")
    by_name = ingest(path, ("building", "contents"))
    assert np.array_equal(by_name.x2, res.x2)


def test_ingest_without_header(tmp_path):
    path = _write(tmp_path / "a.csv", [(i + 1.0, 2.0 * i + 1) for i in range(30)])
    res = ingest(path)
    assert len(res.x1) == 30 and res.x1[0] == 1.0


def test_ingest_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(UsageError):
        ingest(path)


def test_ingest_drops_blank_cells(tmp_path):
    rows = [(i + 1.0, i + 2.0) for i in range(25)]
    rows[3] = (4.0, "")
    rows[7] = ("x", 3.0)
    path = _write(tmp_path / "b.csv", rows, ("a", "b"))
    res = ingest(path, ("a", "b"))
    assert res.dropped == 2 and len(res.x1) == 23


def test_ingest_too_few_rows_and_bad_columns(tmp_path):
    path = _write(tmp_path / "c.csv", [(1.0, 2.0)] * (MIN_ROWS - 1), ("a", "b"))
    with pytest.raises(UsageError, match="usable rows"):
        ingest(path, ("a", "b"))
    path = _write(tmp_path / "d.csv", [(1.0, 2.0)] * 30, ("a", "b"))
    with pytest.raises(UsageError, match="column"):
        ingest(path, ("a", "zz"))
    with pytest.raises(UsageError):
        ingest(path, ("a", "a"))


# ---------------------------------------------------------------- censoring


def test_censor_sample_thresholds():
    rng = np.random.default_rng(1)
    x = rng.pareto(1.0, (1000, 2)) + 1
    with pytest.raises(UsageError):
        censor_sample(x[:, 0], x[:, 1], (1e300, 1e300))
    with pytest.raises(UsageError):
        censor_sample(x[:, 0], x[:, 1], (np.inf, 2.0))
    s = censor_sample(x[:, 0], x[:, 1], (x[:, 0].min(), x[:, 1].min()))
    assert s.counts["11"] == 1000
    u = quantile_thresholds(x[:, 0], x[:, 1], 0.9)
    s = censor_sample(x[:, 0], x[:, 1], u)
    assert s.counts["10"] + s.counts["11"] == 100
    with pytest.raises(UsageError):
        quantile_thresholds(x[:, 0], x[:, 1], 1.0)


# ---------------------------------------------------------------- subcommands


def test_simulate_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["simulate", "--r", "0.4", "--n", "1000", "--seed", "7",
                     "--output-dir", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "sample.csv").read_bytes()
    assert a == (tmp_path / "b" / "sample.csv").read_bytes()
    assert len(a.decode().splitlines()) == 1001
    man = json.loads((tmp_path / "a" / "manifest_simulate.json").read_text())
    assert man["seed"] == 7 and {"numpy", "scipy", "python"} <= set(man["versions"])


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["simulate", "--r", "0.6", "--n", "600", "--seed", "3", "--output-dir", str(out)]) == 0
    assert main(["fit", "--input", str(out / "sample.csv"), "--output-dir", str(out),
                 "--grid-size", "21", *FAST]) == 0
    return out


def test_fit_outputs(fitted):
    tr = Trace.load(fitted / "trace.ndjson")
    assert len(tr) == 60 and tr.thresholds is not None
    est = json.loads((fitted / "estimate.json").read_text())
    assert len(est["grid"]) == 21
    assert all(lo <= m + 1e-12 and m <= hi + 1e-12
               for lo, m, hi in zip(est["lower"], est["mean"], est["upper"]))
    man = json.loads((fitted / "manifest_fit.json").read_text())
    assert {"config", "seed", "versions", "timings", "outputs"} <= set(man)
    assert man["summary"]["quadrant_counts"]["11"] > 0
    with open(fitted / "estimate.csv") as fh:
        assert next(csv.reader(fh)) == ["w", "mean", "lower", "upper"]


def test_predict_outputs(fitted):
    out = fitted / "pred"
    assert main(["predict", "--trace", str(fitted / "trace.ndjson"), "--x1", "20", "40",
                 "--p", "0.05", "--v1", "30", "--v2", "30", "--grid-size", "8",
                 "--output-dir", str(out)]) == 0
    res = json.loads((out / "predict.json").read_text())
    assert 0.0 <= res["rare_event_probability"] <= 1.0
    rows = res["conditional_quantile"]
    assert len(rows) == 2 and all(r["lower_band"] <= r["upper_band"] for r in rows)
    with open(out / "joint_predictive.csv") as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["x1", "x2", "density"] and len(data) == 65
    cond = json.loads((out / "conditional_predictive.json").read_text())
    assert len(cond["conditionals"]) == 2
    assert (out / "conditional_quantile_exceedance.csv").exists()


def test_rerun_from_manifest_is_identical(fitted, tmp_path):
    again = tmp_path / "again"
    assert main(["fit", "--config", str(fitted / "manifest_fit.json"),
                 "--output-dir", str(again)]) == 0
    assert (again / "trace.ndjson").read_bytes() == (fitted / "trace.ndjson").read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('input = "x.csv"\niterations = 123\nthin = 3\n')
    assert load_config_file(cfg)["iterations"] == 123
    args = parse_args(["fit", "--config", str(cfg), "--thin", "9"])
    assert (args.input, args.iterations, args.thin) == ("x.csv", 123, 9)


def test_prior_viz(tmp_path):
    assert main(["prior-viz", "--iterations", "3000", "--burn-in", "500", "--thin", "5",
                 "--lambda", "2", "--grid-size", "11", "--output-dir", str(tmp_path)]) == 0
    band = json.loads((tmp_path / "prior_band.json").read_text())
    assert len(band["mean"]) == 11
    assert (tmp_path / "prior_trace.ndjson").exists()


def test_usage_error_exit_code(tmp_path, capsys):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert main(["fit", "--input", str(path), "--output-dir", str(tmp_path), *FAST]) == 2
    assert "error" in capsys.readouterr().err
