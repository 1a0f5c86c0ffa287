"""Command-line interface: ``skewfa {fit,select,simulate,moments,density}``.

Exit codes: 0 success, 2 fit did not converge (results still written),
64 input parse error, 65 semantic or configuration error, 70 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .aecm import FitConfig, fit
from .model import (
    Dataset,
    Family,
    Formulation,
    ModelSpec,
    _coerce_enum,
    mixture_logpdf,
    model_moments,
    param_count,
    params_from_dict,
    params_to_dict,
    spec_to_dict,
)
from .simulate import simulate

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_PARSE = 64
EXIT_SEMANTIC = 65
EXIT_INTERNAL = 70

LABEL_COLUMN = "label"


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# I/O helpers


def load_schema(name):
    text = resources.files("skewfa").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _validate(obj, schema_name, code):
    try:
        jsonschema.validate(obj, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CliError(code, f"{schema_name} schema violation at {where}: {exc.message}") from None


def read_csv(path) -> Dataset:
    """Comma-separated numeric table with a mandatory header.

    A column named ``label`` (as written by ``simulate``) is ignored.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError(EXIT_PARSE, f"{path}: empty file (header row required)") from None
        header = [h.strip() for h in header]
        try:
            float(header[0])
            raise CliError(EXIT_PARSE, f"{path}:1: header row required, found numbers")
        except ValueError:
            pass
        keep = [k for k, h in enumerate(header) if h != LABEL_COLUMN]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CliError(EXIT_PARSE, f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(row[k]) for k in keep]
            except ValueError:
                bad = next(row[k] for k in keep if not _is_number(row[k]))
                raise CliError(EXIT_PARSE, f"{path}:{line_no}: non-numeric value {bad!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise CliError(EXIT_PARSE, f"{path}:{line_no}: non-finite value")
            rows.append(vals)
    if not rows:
        raise CliError(EXIT_PARSE, f"{path}: no data rows")
    return Dataset(np.array(rows), tuple(header[k] for k in keep))


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")


def read_params(path):
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_PARSE, f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if isinstance(obj, dict) and "params" in obj and "components" not in obj:
        obj = obj["params"]        # accept a fit result directly
    _validate(obj, "params", EXIT_SEMANTIC)
    try:
        return params_from_dict(obj)
    except ValueError as exc:
        raise CliError(EXIT_SEMANTIC, f"invalid parameters: {exc}") from None


def _enc(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


# ---------------------------------------------------------------------------
# configuration


DEFAULTS = {
    "formulation": "sf", "family": "cfusn", "g": 1, "q": 1, "r": 1, "s": 0,
    "max_iter": 500, "tol": 1e-6, "seed": 0, "restarts": 1, "jobs": 1,
    "init": "kmeans_pca", "nu_low": 2.0001, "nu_high": 200.0, "n": 500,
    "g_grid": None, "q_grid": None, "formulations": None, "verbose": False,
}
_INT_KEYS = {"g", "q", "r", "s", "max_iter", "seed", "restarts", "jobs", "n"}
_FLOAT_KEYS = {"tol", "nu_low", "nu_high"}


def read_config(path):
    """Flat ``key = value`` file; '#' starts a comment; keys mirror the long flags."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read config {path}: {exc}") from None
    for k, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_PARSE, f"{path}:{k}: expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _coerce(key, val):
    if val is None:
        return None
    try:
        if key in _INT_KEYS:
            return int(val)
        if key in _FLOAT_KEYS:
            return float(val)
    except ValueError:
        raise CliError(EXIT_SEMANTIC, f"{key} must be numeric, got {val!r}") from None
    if key == "verbose" and isinstance(val, str):
        return val.lower() in ("1", "true", "yes", "on")
    return val


def resolve(args):
    """Merge defaults < config file < command-line flags."""
    cfg = read_config(args.config) if args.config else {}
    unknown = set(cfg) - set(DEFAULTS) - {"input", "output", "params"}
    if unknown:
        raise CliError(EXIT_SEMANTIC, f"unknown config keys: {', '.join(sorted(unknown))}")
    merged = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        if key == "verbose":
            flag = True if getattr(args, "verbose", False) else None
        val = flag if flag is not None else cfg.get(key, default)
        merged[key] = _coerce(key, val)
    for key in ("input", "output", "params"):
        merged[key] = getattr(args, key, None) or cfg.get(key)
    return merged


def _spec(cfg, p, formulation=None, g=None, q=None):
    form = (formulation or cfg["formulation"]).upper()
    s = cfg["s"]
    if form == "SFE" and not s:
        s = 1
    if form != "SFE":
        s = 0
    try:
        return ModelSpec(form, cfg["family"], g or cfg["g"], p, q or cfg["q"], cfg["r"], s)
    except ValueError as exc:
        raise CliError(EXIT_SEMANTIC, str(exc)) from None


def _fit_config(cfg):
    try:
        return FitConfig(max_iterations=cfg["max_iter"], tol=cfg["tol"],
                         nu_bounds=(cfg["nu_low"], cfg["nu_high"]), init=cfg["init"],
                         restarts=cfg["restarts"], seed=cfg["seed"], verbose=cfg["verbose"])
    except ValueError as exc:
        raise CliError(EXIT_SEMANTIC, str(exc)) from None


def _require(cfg, key):
    if not cfg.get(key):
        raise CliError(EXIT_SEMANTIC, f"--{key} is required")
    return cfg[key]


# ---------------------------------------------------------------------------
# subcommands


def _fit_record(result, spec, ds, fc, wall):
    return {
        "kind": "fit",
        "spec": spec_to_dict(spec),
        "params": params_to_dict(result.params),
        "loglik": result.loglik,
        "loglik_trace": [float(v) for v in result.loglik_trace],
        "bic": float(result.bic),
        "param_count": param_count(spec),
        "n": int(ds.values.shape[0]),
        "columns": list(ds.columns),
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
        "termination_reason": result.termination_reason,
        "flags": {k: int(v) for k, v in result.flags.items()},
        "seed": int(fc.seed),
        "config": {"max_iterations": fc.max_iterations, "tol": fc.tol,
                   "nu_bounds": list(fc.nu_bounds), "init": fc.init, "restarts": fc.restarts},
        "responsibilities": result.responsibilities.tolist(),
        "restart_logliks": [float(v) for v in result.restart_logliks],
        "wall_time_seconds": wall,
    }


def _fit_one(values, columns, spec, fc):
    ds = Dataset(values, columns)
    t0 = time.perf_counter()
    result = fit(ds, spec, fc)
    return _fit_record(result, spec, ds, fc, time.perf_counter() - t0)


def cmd_fit(cfg):
    ds = read_csv(_require(cfg, "input"))
    spec = _spec(cfg, ds.values.shape[1])
    fc = _fit_config(cfg)
    try:
        record = _fit_one(ds.values, ds.columns, spec, fc)
    except ValueError as exc:
        raise CliError(EXIT_SEMANTIC, str(exc)) from None
    _validate(record, "fit_result", EXIT_INTERNAL)
    write_json(record, cfg["output"])
    return EXIT_OK if record["converged"] else EXIT_NOT_CONVERGED


def _parse_grid(text, name):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise CliError(EXIT_SEMANTIC, f"--{name} must be a comma-separated list of integers") from None
    if not vals:
        raise CliError(EXIT_SEMANTIC, f"--{name} must not be empty")
    return vals


def _select_cell(job):
    values, columns, spec_args, fc = job
    try:
        spec = ModelSpec(*spec_args)
        return "ok", _fit_one(values, columns, spec, fc), None
    except Exception as exc:  # a failing cell is recorded, selection goes on
        return "failed", None, f"{type(exc).__name__}: {exc}"


def run_select(ds, cfg):
    """Fit every grid cell; returns (ranking rows, best fit record)."""
    g_grid = _parse_grid(cfg["g_grid"] or cfg["g"], "g-grid")
    q_grid = _parse_grid(cfg["q_grid"] or cfg["q"], "q-grid")
    forms = [f.strip().upper() for f in (cfg["formulations"] or cfg["formulation"]).split(",") if f.strip()]
    fc = _fit_config(cfg)
    try:
        _coerce_enum(Family, cfg["family"])
        for form in forms:
            _coerce_enum(Formulation, form)
    except ValueError as exc:
        raise CliError(EXIT_SEMANTIC, str(exc)) from None
    p = ds.values.shape[1]
    cells = []
    for form in forms:
        s = (cfg["s"] or 1) if form == "SFE" else 0
        for g in g_grid:
            for q in q_grid:
                cells.append((form, cfg["family"].upper(), g, p, q, cfg["r"], s))
    jobs = [(ds.values, ds.columns, args, fc) for args in cells]
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            outcomes = list(pool.map(_select_cell, jobs))
    else:
        outcomes = [_select_cell(j) for j in jobs]

    rows, records = [], []
    for args, (status, rec, err) in zip(cells, outcomes):
        form, fam, g, _, q, r, s = args
        row = {"rank": None, "formulation": form.upper(), "family": fam.upper(), "g": g, "q": q,
               "r": r, "s": s, "status": status, "error": err, "loglik": None,
               "param_count": None, "bic": None, "converged": None, "iterations": None}
        if rec is not None:
            row.update(loglik=rec["loglik"], param_count=rec["param_count"], bic=rec["bic"],
                       converged=rec["converged"], iterations=rec["iterations"])
        rows.append(row)
        records.append(rec)
    ok = [k for k, r in enumerate(rows) if r["status"] == "ok"]
    ok.sort(key=lambda k: (rows[k]["bic"], rows[k]["param_count"], rows[k]["g"]))
    for rank, k in enumerate(ok, start=1):
        rows[k]["rank"] = rank
    order = ok + [k for k in range(len(rows)) if k not in ok]
    best = records[ok[0]] if ok else None
    return [rows[k] for k in order], best


def cmd_select(cfg):
    ds = read_csv(_require(cfg, "input"))
    t0 = time.perf_counter()
    rows, best = run_select(ds, cfg)
    record = {"kind": "select", "ranking": rows, "best": best, "seed": cfg["seed"],
              "wall_time_seconds": time.perf_counter() - t0}
    _validate(record, "select_result", EXIT_INTERNAL)
    out = cfg["output"]
    if out in (None, "-"):
        write_json(record, None)
    else:
        out = Path(out)
        stem = out.with_suffix("") if out.suffix.lower() in (".csv", ".json") else out
        with open(stem.with_suffix(".csv"), "w", newline="") as fh:
            cols = ["rank", "formulation", "family", "g", "q", "r", "s", "loglik",
                    "param_count", "bic", "converged", "iterations", "status", "error"]
            wr = csv.DictWriter(fh, fieldnames=cols)
            wr.writeheader()
            for row in rows:
                wr.writerow({c: ("" if row[c] is None else row[c]) for c in cols})
        write_json(record, stem.with_suffix(".json"))
    if best is None:
        raise CliError(EXIT_SEMANTIC, "every grid cell failed")
    return EXIT_OK


def cmd_simulate(cfg):
    params = read_params(_require(cfg, "params"))
    n = cfg["n"]
    if n < 1:
        raise CliError(EXIT_SEMANTIC, "--n must be >= 1")
    sim = simulate(params.spec, params, n, cfg["seed"])
    out = _require(cfg, "output")
    out = Path(out)
    csv_path = out if out.suffix.lower() == ".csv" else out.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"y{k + 1}" for k in range(params.spec.p)] + [LABEL_COLUMN])
        for row, lab in zip(sim.data, sim.labels):
            wr.writerow([repr(float(v)) for v in row] + [int(lab)])
    record = {"kind": "simulate", "n": n, "seed": cfg["seed"], "params": params_to_dict(params),
              "data_path": str(csv_path), "labels": [int(v) for v in sim.labels],
              "latents": None if sim.latents is None else {k: _enc(v) for k, v in sim.latents.items()}}
    _validate(record, "simulate_result", EXIT_INTERNAL)
    write_json(record, csv_path.with_suffix(".json"))
    return EXIT_OK


def cmd_moments(cfg):
    params = read_params(_require(cfg, "params"))
    spec = params.spec
    if spec.tfamily:
        raise CliError(EXIT_SEMANTIC, "moments are available for the CFUSN family only")
    comps = [model_moments(spec, c) for c in params.components]
    mean = sum(c.pi * m["mean_Y"] for c, m in zip(params.components, comps))
    second = sum(c.pi * (m["cov_Y"] + np.outer(m["mean_Y"], m["mean_Y"]))
                 for c, m in zip(params.components, comps))
    record = {"kind": "moments", "spec": spec_to_dict(spec),
              "components": [{k: _enc(v) for k, v in m.items()} for m in comps],
              "mixture": {"mean_Y": _enc(mean), "cov_Y": _enc(second - np.outer(mean, mean))}}
    _validate(record, "moments_result", EXIT_INTERNAL)
    write_json(record, cfg["output"])
    return EXIT_OK


def cmd_density(cfg):
    params = read_params(_require(cfg, "params"))
    ds = read_csv(_require(cfg, "input"))
    if ds.values.shape[1] != params.spec.p:
        raise CliError(EXIT_SEMANTIC,
                       f"data have {ds.values.shape[1]} columns, parameters expect p={params.spec.p}")
    logd = mixture_logpdf(ds, params)
    out = cfg["output"]
    fh = sys.stdout if out in (None, "-") else open(out, "w", newline="")
    try:
        wr = csv.writer(fh)
        wr.writerow(["row", "log_density"])
        for k, v in enumerate(logd, start=1):
            wr.writerow([k, repr(float(v))])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "select": cmd_select, "simulate": cmd_simulate,
            "moments": cmd_moments, "density": cmd_density}


def build_parser():
    ap = argparse.ArgumentParser(prog="skewfa", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value file; flags override it")
        p.add_argument("--output", help="output path ('-' or omitted: stdout where supported)")
        p.add_argument("--seed", type=int)
        p.add_argument("--verbose", action="store_true", help="JSON-line iteration log on stderr")

    def model_flags(p):
        p.add_argument("--input", help="CSV with a header row")
        p.add_argument("--formulation", help="se | sf | sfe")
        p.add_argument("--family", help="cfusn | cfust")
        p.add_argument("--g", type=int)
        p.add_argument("--q", type=int)
        p.add_argument("--r", type=int)
        p.add_argument("--s", type=int)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--restarts", type=int)
        p.add_argument("--init", help="kmeans_pca | random")
        p.add_argument("--nu-low", dest="nu_low", type=float)
        p.add_argument("--nu-high", dest="nu_high", type=float)

    p_fit = sub.add_parser("fit", help="fit one model")
    common(p_fit)
    model_flags(p_fit)

    p_sel = sub.add_parser("select", help="fit a (formulation, g, q) grid and rank by BIC")
    common(p_sel)
    model_flags(p_sel)
    p_sel.add_argument("--g-grid", dest="g_grid", help="e.g. 1,2,3")
    p_sel.add_argument("--q-grid", dest="q_grid", help="e.g. 1,2")
    p_sel.add_argument("--formulations", help="e.g. se,sf")
    p_sel.add_argument("--jobs", type=int)

    p_sim = sub.add_parser("simulate", help="draw data from a parameter file")
    common(p_sim)
    p_sim.add_argument("--params", help="parameter JSON")
    p_sim.add_argument("--n", type=int)

    p_mom = sub.add_parser("moments", help="closed-form moments (CFUSN)")
    common(p_mom)
    p_mom.add_argument("--params", help="parameter JSON")

    p_den = sub.add_parser("density", help="per-row log mixture density")
    common(p_den)
    p_den.add_argument("--params", help="parameter JSON")
    p_den.add_argument("--input", help="CSV with a header row")
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SEMANTIC if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = resolve(args)
        if cfg["verbose"]:
            logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"skewfa: error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"skewfa: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
