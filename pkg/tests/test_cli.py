import csv
import json
import subprocess
import sys
from importlib import resources

import jsonschema
import numpy as np
from conftest import random_params
from scipy import stats

from skewfa.cli import load_schema, main
from skewfa.model import ComponentParams, MixtureParams, ModelSpec, params_to_dict
from skewfa.simulate import simulate

DEMO = str(resources.files("skewfa").joinpath("data", "demo.csv"))
DEMO_PARAMS = str(resources.files("skewfa").joinpath("data", "demo_params.json"))


def write_params(path, params):
    path.write_text(json.dumps(params_to_dict(params)))
    return str(path)


def write_csv(path, Y, header=True):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        if header:
            wr.writerow([f"y{k + 1}" for k in range(Y.shape[1])])
        wr.writerows(Y.tolist())
    return str(path)


def read_density(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["log_density"]) for r in rows])


# ---------------------------------------------------------------------------
# fit


def test_demo_fit_converges(tmp_path):
    out = tmp_path / "fit.json"
    code = main(["fit", "--input", DEMO, "--formulation", "sf", "--g", "2", "--q", "1",
                 "--r", "1", "--seed", "1", "--output", str(out)])
    assert code == 0
    rec = json.loads(out.read_text())
    jsonschema.validate(rec, load_schema("fit_result"))
    assert rec["converged"] and rec["iterations"] <= 500
    assert rec["spec"]["formulation"] == "SF" and rec["seed"] == 1
    assert np.all(np.diff(rec["loglik_trace"]) >= -1e-8 * np.abs(rec["loglik_trace"][:-1]))
    assert "wall_time_seconds" in rec


def test_fit_rerun_is_byte_identical(tmp_path):
    args = ["fit", "--input", DEMO, "--formulation", "se", "--family", "cfust", "--g", "2",
            "--max-iter", "25", "--seed", "4"]
    texts = []
    for k in range(2):
        out = tmp_path / f"f{k}.json"
        assert main(args + ["--output", str(out)]) in (0, 2)
        rec = json.loads(out.read_text())
        rec.pop("wall_time_seconds")
        texts.append(json.dumps(rec, sort_keys=True))
    assert texts[0] == texts[1]


def test_non_convergence_exit_code(tmp_path):
    out = tmp_path / "fit.json"
    code = main(["fit", "--input", DEMO, "--g", "2", "--max-iter", "2", "--output", str(out)])
    assert code == 2
    assert json.loads(out.read_text())["termination_reason"] == "max_iterations"


def test_invalid_formulation(tmp_path, capsys):
    code = main(["fit", "--input", DEMO, "--formulation", "sx", "--output", str(tmp_path / "o.json")])
    assert code == 65
    err = capsys.readouterr().err
    assert "se, sf, sfe" in err


def test_spec_mismatch_exit_65(tmp_path):
    code = main(["fit", "--input", DEMO, "--q", "4", "--output", str(tmp_path / "o.json")])
    assert code == 65


def test_malformed_csv_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n1,2,3\n4,x,6\n")
    assert main(["fit", "--input", str(bad), "--output", str(tmp_path / "o.json")]) == 64
    assert "bad.csv:3" in capsys.readouterr().err
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("a,b,c\n1,2,3\n4,5\n")
    assert main(["fit", "--input", str(ragged)]) == 64
    headerless = tmp_path / "nohead.csv"
    headerless.write_text("1,2,3\n4,5,6\n")
    assert main(["fit", "--input", str(headerless)]) == 64
    assert main(["fit", "--input", str(tmp_path / "missing.csv")]) == 64


def test_unknown_flag_is_config_error():
    assert main(["fit", "--bogus", "1"]) == 65


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text(f"# demo run\ninput = {DEMO}\nformulation = se\ng = 2\nmax-iter = 3\nseed = 9\n")
    out = tmp_path / "fit.json"
    assert main(["fit", "--config", str(conf), "--max-iter", "4", "--output", str(out)]) == 2
    rec = json.loads(out.read_text())
    assert rec["spec"]["formulation"] == "SE" and rec["spec"]["g"] == 2
    assert rec["iterations"] == 4 and rec["seed"] == 9
    conf.write_text("colour = red\n")
    assert main(["fit", "--config", str(conf)]) == 65


# ---------------------------------------------------------------------------
# select


def test_select_single_cell_equals_fit(tmp_path):
    base = ["--input", DEMO, "--formulation", "sf", "--g", "2", "--q", "1", "--seed", "2"]
    assert main(["fit", *base, "--output", str(tmp_path / "fit.json")]) == 0
    assert main(["select", *base, "--output", str(tmp_path / "sel.json")]) == 0
    fit_rec = json.loads((tmp_path / "fit.json").read_text())
    sel = json.loads((tmp_path / "sel.json").read_text())
    jsonschema.validate(sel, load_schema("select_result"))
    best = sel["best"]
    for rec in (fit_rec, best):
        rec.pop("wall_time_seconds")
    assert best == fit_rec
    assert len(sel["ranking"]) == 1 and sel["ranking"][0]["rank"] == 1
    assert (tmp_path / "sel.csv").exists()


def test_select_ranks_and_records_failures(tmp_path):
    out = tmp_path / "sel.json"
    # q = 4 is invalid for p = 4: that cell must fail without stopping the run
    code = main(["select", "--input", DEMO, "--g-grid", "1,2", "--q-grid", "1,4",
                 "--formulations", "se,sf", "--max-iter", "30", "--seed", "0",
                 "--output", str(out)])
    assert code == 0
    sel = json.loads(out.read_text())
    rows = sel["ranking"]
    ok = [r for r in rows if r["status"] == "ok"]
    failed = [r for r in rows if r["status"] == "failed"]
    assert len(ok) == 4 and len(failed) == 4
    assert all("q must satisfy" in r["error"] for r in failed)
    keys = [(r["bic"], r["param_count"], r["g"]) for r in ok]
    assert keys == sorted(keys)
    assert [r["rank"] for r in ok] == [1, 2, 3, 4]
    with open(tmp_path / "sel.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 8


def test_select_parallel_matches_serial(tmp_path):
    args = ["select", "--input", DEMO, "--g-grid", "1,2", "--q-grid", "1", "--max-iter", "20",
            "--seed", "3"]
    assert main(args + ["--output", str(tmp_path / "a.json")]) == 0
    assert main(args + ["--jobs", "2", "--output", str(tmp_path / "b.json")]) == 0
    a = json.loads((tmp_path / "a.json").read_text())
    b = json.loads((tmp_path / "b.json").read_text())
    strip = lambda rows: [{k: v for k, v in r.items()} for r in rows]
    assert strip(a["ranking"]) == strip(b["ranking"])


# ---------------------------------------------------------------------------
# simulate, moments, density


def test_simulate_writes_csv_and_json(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--params", DEMO_PARAMS, "--n", "50", "--seed", "5",
                 "--output", str(out)]) == 0
    rec = json.loads((tmp_path / "sim.json").read_text())
    jsonschema.validate(rec, load_schema("simulate_result"))
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][-1] == "label" and len(rows) == 51
    assert rec["labels"] == [int(r[-1]) for r in rows[1:]]
    # the label column is ignored when the file is read back
    assert main(["fit", "--input", str(out), "--max-iter", "2", "--output",
                 str(tmp_path / "f.json")]) in (0, 2)
    assert json.loads((tmp_path / "f.json").read_text())["columns"] == ["y1", "y2", "y3", "y4"]


def test_moments_zero_skew(tmp_path):
    spec = ModelSpec("SE", "CFUSN", 1, 3, 1, 1)
    mu = np.array([0.1, -2.0, 3.5])
    params = MixtureParams(spec, (ComponentParams(1.0, mu, np.ones((3, 1)), np.ones(3),
                                                  np.zeros((3, 1))),))
    out = tmp_path / "m.json"
    assert main(["moments", "--params", write_params(tmp_path / "p.json", params),
                 "--output", str(out)]) == 0
    rec = json.loads(out.read_text())
    jsonschema.validate(rec, load_schema("moments_result"))
    assert rec["components"][0]["mean_Y"]["data"] == mu.tolist()
    assert set(rec["components"][0]) == {"mean_Y", "cov_Y", "mean_X", "cov_X", "mean_e", "cov_e"}


def test_moments_reject_t(tmp_path):
    spec = ModelSpec("SF", "CFUST", 1, 3, 1, 1)
    params = random_params(spec, np.random.default_rng(0))
    assert main(["moments", "--params", write_params(tmp_path / "p.json", params)]) == 65


def test_params_schema_violation(tmp_path):
    obj = json.loads(open(DEMO_PARAMS).read())
    del obj["components"][0]["mu"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(obj))
    assert main(["moments", "--params", str(bad)]) == 65
    bad.write_text("{not json")
    assert main(["moments", "--params", str(bad)]) == 64


def test_density_matches_normal(tmp_path):
    rng = np.random.default_rng(1)
    spec = ModelSpec("SF", "CFUSN", 1, 3, 1, 1)
    B, d, mu = rng.normal(size=(3, 1)), rng.uniform(0.3, 1, 3), rng.normal(size=3)
    params = MixtureParams(spec, (ComponentParams(1.0, mu, B, d, np.zeros((1, 1))),))
    Y = rng.normal(size=(40, 3))
    out = tmp_path / "dens.csv"
    assert main(["density", "--params", write_params(tmp_path / "p.json", params),
                 "--input", write_csv(tmp_path / "y.csv", Y), "--output", str(out)]) == 0
    ref = stats.multivariate_normal(mu, B @ B.T + np.diag(d)).logpdf(Y)
    assert np.max(np.abs(read_density(out) - ref)) < 1e-8


def test_density_width_mismatch(tmp_path):
    Y = np.zeros((3, 2))
    assert main(["density", "--params", DEMO_PARAMS, "--input",
                 write_csv(tmp_path / "y.csv", Y)]) == 65


def test_simulate_then_density_matches_entropy(tmp_path):
    spec = ModelSpec("SFE", "CFUST", 2, 3, 1, 1, 1)
    params = random_params(spec, np.random.default_rng(2), sep=2.0)
    pfile = write_params(tmp_path / "p.json", params)
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--params", pfile, "--n", "20000", "--seed", "6",
                 "--output", str(out)]) == 0
    dens = tmp_path / "d.csv"
    assert main(["density", "--params", pfile, "--input", str(out), "--output", str(dens)]) == 0
    # independent MC estimate of the differential entropy from a fresh sample
    from skewfa.model import mixture_logpdf
    fresh = simulate(spec, params, 100_000, 99).data
    entropy = -np.mean(mixture_logpdf(fresh, params))
    assert abs(read_density(dens).mean() + entropy) < 0.05


def test_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "skewfa.cli", "moments", "--params", DEMO_PARAMS],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["kind"] == "moments"
