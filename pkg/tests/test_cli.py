from __future__ import annotations

import json

import pandas as pd
import pytest

from dynpanel.cli import main, read_config
from conftest import TOY_FORMULA, TOY_TRUTH


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "model.dml").write_text(TOY_FORMULA + "\n")
    (d / "truth.json").write_text(json.dumps(TOY_TRUTH))
    assert main(["simulate", "--formula", str(d / "model.dml"), "--truth", str(d / "truth.json"),
                 "--out", str(d / "data.csv")]) == 0
    assert main(["fit", "--formula", str(d / "model.dml"), "--data", str(d / "data.csv"), "--time", "time",
                 "--group", "id", "--chains", "2", "--iter-warmup", "100", "--iter-sampling", "100",
                 "--out", str(d / "fit")]) == 0
    return d


def test_simulate_writes_truth(workdir):
    truth = pd.read_csv(workdir / "data_truth.csv")
    assert "beta_y_x" in truth.parameter.tolist()


def test_fit_directory(workdir):
    assert (workdir / "fit" / "draws.csv").exists()
    assert "Model:" in (workdir / "fit" / "summary.txt").read_text()


def test_summary_and_table(workdir, capsys):
    assert main(["summary", "--fit", str(workdir / "fit")]) == 0
    assert "Grouping variable: id" in capsys.readouterr().out
    out = workdir / "s.csv"
    assert main(["summary", "--fit", str(workdir / "fit"), "--table", "--types", "beta", "--probs", "0.1,0.9",
                 "--out", str(out)]) == 0
    tab = pd.read_csv(out)
    assert list(tab.columns[:5]) == ["parameter", "mean", "sd", "q10", "q90"]
    assert tab.parameter.tolist() == ["beta_y_x", "beta_y_y_lag1"]


def test_diagnostics(workdir, capsys):
    assert main(["diagnostics", "--fit", str(workdir / "fit")]) == 0
    cap = capsys.readouterr()
    assert cap.out.startswith("parameter,rhat,ess_bulk,ess_tail,zero_variance")
    assert "divergences:" in cap.err


def test_priors(workdir):
    out = workdir / "priors.csv"
    assert main(["priors", "--formula", str(workdir / "model.dml"), "--data", str(workdir / "data.csv"),
                 "--time", "time", "--group", "id", "--out", str(out)]) == 0
    assert "sigma_y" in pd.read_csv(out).parameter.tolist()


def test_predict_fitted_and_cores(workdir):
    d = pd.read_csv(workdir / "data.csv")
    d.loc[d.time > 7, "y"] = None
    d.to_csv(workdir / "new.csv", index=False)
    base = ["predict", "--fit", str(workdir / "fit"), "--newdata", str(workdir / "new.csv"), "--n-draws", "10"]
    assert main(base + ["--out", str(workdir / "p1.csv")]) == 0
    assert main(base + ["--cores", "2", "--out", str(workdir / "p2.csv")]) == 0
    assert (workdir / "p1.csv").read_bytes() == (workdir / "p2.csv").read_bytes()
    assert main(base + ["--no-expand", "--out", str(workdir / "p3.csv")]) == 0
    assert (workdir / "p3_observed.csv").exists()
    assert main(base + ["--funs", "y:mean,sd", "--out", str(workdir / "p4.csv")]) == 0
    assert list(pd.read_csv(workdir / "p4.csv").columns) == ["mean_y", "sd_y", "time", ".draw"]
    assert main(["fitted", "--fit", str(workdir / "fit"), "--n-draws", "5", "--out", str(workdir / "f.csv")]) == 0
    assert "y_fitted" in pd.read_csv(workdir / "f.csv").columns


def test_config_file_and_flag_precedence(workdir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# fit settings\nformula = {workdir / 'model.dml'}\ndata = {workdir / 'data.csv'}\n"
                   "time = time\ngroup = id\nchains = 1\niter-warmup = 40\niter_sampling = 30\nseed = 4\n")
    assert read_config(str(cfg))["iter_warmup"] == 40
    assert main(["fit", "--config", str(cfg), "--iter-sampling", "20", "--out", str(tmp_path / "f")]) == 0
    draws = pd.read_csv(tmp_path / "f" / "draws.csv")
    assert len(draws) == 20
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key = 3\n")
    assert main(["fit", "--config", str(bad)]) == 2


def test_exit_codes(workdir, tmp_path, capsys):
    cyc = tmp_path / "cyc.dml"
    cyc.write_text('obs(y ~ x, family = "gaussian") + obs(x ~ y, family = "gaussian")')
    rc = main(["fit", "--formula", str(cyc), "--data", str(workdir / "data.csv"), "--time", "time",
               "--group", "id", "--out", str(tmp_path / "o")])
    assert rc == 2 and "Cyclic dependency" in capsys.readouterr().err
    rc = main(["fit", "--formula", str(workdir / "model.dml"), "--data", str(tmp_path / "none.csv"),
               "--time", "time", "--out", str(tmp_path / "o")])
    assert rc == 1
    assert main(["summary", "--fit", str(tmp_path / "nofit")]) == 1
    lf = tmp_path / "lf.dml"
    lf.write_text('obs(y ~ x + lfactor(), family = "gaussian")')
    assert main(["priors", "--formula", str(lf), "--data", str(workdir / "data.csv"), "--time", "time"]) == 2
