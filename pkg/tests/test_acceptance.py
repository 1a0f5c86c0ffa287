"""Acceptance suite: one test per criterion, each recorded as a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary lists
every criterion with the measured margin and runtime.
"""

import csv
import itertools
import json
import time
from dataclasses import replace

import numpy as np
from conftest import random_params
from oracles import hierarchy_quadrature, reference_mfa

from skewfa.aecm import FitConfig, e_step_cycle1, e_step_cycle2, fit, init_params
from skewfa.cli import main
from skewfa.model import (
    ComponentParams,
    MixtureParams,
    ModelSpec,
    loglik,
    marginal_law,
    mixture_logpdf,
    model_moments,
    param_count,
)
from skewfa.simulate import marginal_check, simulate

FORMS = ["SE", "SF", "SFE"]


# ---------------------------------------------------------------------------
# 1. marginal law


def _random_spec(form, family, rng):
    p = int(rng.integers(2, 5))
    q = int(rng.integers(1, min(2, p - 1) + 1))
    r = int(rng.integers(1, 3))
    s = int(rng.integers(1, 3)) if form == "SFE" else 0
    g = int(rng.integers(1, 3))
    return ModelSpec(form, family, g, p, q, r, s)


def test_criterion_1_marginal_law(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240101)
    worst_p, failures = 1.0, []
    for form in FORMS:
        for k in range(10):
            spec = _random_spec(form, ["CFUSN", "CFUST"][k % 2], rng)
            params = random_params(spec, rng, sep=2.0)
            rep = marginal_check(spec, params, 5000, int(rng.integers(2 ** 31)))
            worst_p = min(worst_p, rep.ks_pvalue.min())
            if not rep.passed:
                failures.append((form, k, spec, rep.ks_pvalue.round(5).tolist()))
    # SE and SF marginals coincide when delta_SE = B delta_SF
    gap = 0.0
    for k in range(10):
        family = ["CFUSN", "CFUST"][k % 2]
        sf = ModelSpec("SF", family, 2, 4, 2, int(rng.integers(1, 3)))
        psf = random_params(sf, rng, sep=2.0)
        se = replace(sf, formulation="SE", r=sf.r)
        pse = MixtureParams(se, tuple(replace(c, delta0=c.B @ c.delta0) for c in psf.components))
        Y = simulate(sf, psf, 2000, k).data
        gap = max(gap, np.max(np.abs(mixture_logpdf(Y, psf) - mixture_logpdf(Y, pse))))
    elapsed = time.perf_counter() - t0
    ok = not failures and gap < 1e-8 and elapsed < 300
    acceptance(1, ok, f"min KS p={worst_p:.4f} (alpha 0.001), failing sets={len(failures)}, "
                      f"SE/SF gap={gap:.1e}, {elapsed:.0f}s (limit 300s)")
    assert not failures, failures
    assert gap < 1e-8
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 2. moments


def _mean_se(X):
    return X.mean(axis=0), X.std(axis=0, ddof=1) / np.sqrt(X.shape[0])


def _cov_se(X):
    Xc = X - X.mean(axis=0)
    prods = Xc[:, :, None] * Xc[:, None, :]
    return prods.mean(axis=0), prods.std(axis=0, ddof=1) / np.sqrt(X.shape[0])


def test_criterion_2_moments(acceptance):
    t0 = time.perf_counter()
    n = 1_000_000
    worst = 0.0
    for form in FORMS:
        spec = ModelSpec(form, "CFUSN", 1, 4, 2, 2, 1 if form == "SFE" else 0)
        params = random_params(spec, np.random.default_rng(42))
        comp = params.components[0]
        theory = model_moments(spec, comp)
        sim = simulate(spec, params, n, 7)
        samples = {"Y": sim.data, "X": sim.latents["x"], "e": sim.latents["e"]}
        for name, X in samples.items():
            m, se = _mean_se(X)
            worst = max(worst, np.max(np.abs(m - theory[f"mean_{name}"]) / se))
            C, se_c = _cov_se(X)
            # exact zeros (e.g. independent error coordinates) have a nonzero MC spread too
            z = np.abs(C - theory[f"cov_{name}"]) / se_c
            worst = max(worst, np.max(z))
    elapsed = time.perf_counter() - t0
    ok = worst < 4 and elapsed < 120
    acceptance(2, ok, f"max |MC - closed form| = {worst:.2f} MC se (limit 4), {elapsed:.0f}s (limit 120s)")
    assert worst < 4
    assert elapsed < 120


# ---------------------------------------------------------------------------
# 3. monotonicity


def test_criterion_3_monotone(acceptance):
    t0 = time.perf_counter()
    worst, bad = np.inf, []
    for form, family in itertools.product(FORMS, ["CFUSN", "CFUST"]):
        spec = ModelSpec(form, family, 2, 4, 1, 1, 1 if form == "SFE" else 0)
        for seed in range(5):
            params = random_params(spec, np.random.default_rng(100 + seed), sep=3.0)
            Y = simulate(spec, params, 500, seed).data
            res = fit(Y, spec, FitConfig(max_iterations=200, seed=seed))
            tr = res.loglik_trace
            rel = np.diff(tr) / np.abs(tr[:-1])
            worst = min(worst, rel.min())
            if np.any(rel < -1e-8):
                bad.append((form, family, seed, rel.min()))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 600
    acceptance(3, ok, f"30 traces, smallest relative step {worst:.1e} (slack -1e-8), "
                      f"{elapsed:.0f}s (limit 600s)")
    assert not bad, bad
    assert elapsed < 600


# ---------------------------------------------------------------------------
# 4. E-step against nested quadrature


def test_criterion_4_estep_oracle(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for form, family in itertools.product(FORMS, ["CFUSN", "CFUST"]):
        spec = ModelSpec(form, family, 2, 2, 1, 1, 1 if form == "SFE" else 0)
        params = random_params(spec, np.random.default_rng(7), sep=1.0, nu=6.0)
        Y = simulate(spec, params, 3, 11).data
        c1 = e_step_cycle1(Y, spec, params)
        c2 = e_step_cycle2(Y, spec, params, c1)
        for j in range(3):
            ref = [hierarchy_quadrature(Y[j], spec, c) for c in params.components]
            dens = np.array([c.pi * r["density"] for c, r in zip(params.components, ref)])
            worst = max(worst, np.max(np.abs(c1.z[j] - dens / dens.sum())))
            for i in range(2):
                pairs = [("w", c1.w), ("u", c1.u), ("u2", c1.u2), ("x", c2.x), ("xt", c2.xt),
                         ("xs", c2.xs)]
                if spec.tfamily:
                    pairs.append(("elogw", c1.elogw))
                for key, arr in pairs:
                    worst = max(worst, np.max(np.abs(arr[j, i] - ref[i][key])))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 300
    acceptance(4, ok, f"max abs deviation {worst:.1e} (limit 1e-4), {elapsed:.0f}s (limit 300s)")
    assert worst < 1e-4
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 5. nested reductions


def _mfa_trajectory_gap(form, family):
    spec = ModelSpec(form, family, 2, 4, 2, 1, 1 if form == "SFE" else 0)
    truth = random_params(spec, np.random.default_rng(3), sep=3.0, delta_scale=0.0)
    Y = simulate(spec, truth, 400, 5).data
    pinned = ("delta0", "delta1") if form == "SFE" else ("delta0",)
    start = init_params(Y, spec, seed=1)
    start = MixtureParams(spec, tuple(
        replace(c, delta0=np.zeros_like(c.delta0),
                delta1=None if c.delta1 is None else np.zeros_like(c.delta1))
        for c in start.components))
    res = fit(Y, spec, FitConfig(max_iterations=10, tol=1e-300, fixed_zero=pinned,
                                 record_history=True), init=start)
    cs = start.components
    ref = reference_mfa(Y, [c.pi for c in cs], [c.mu for c in cs], [c.B for c in cs],
                        [c.d for c in cs], [c.nu for c in cs] if spec.tfamily else None,
                        iterations=10)
    gap = 0.0
    for ours, (pis, mus, Bs, ds, nus) in zip(res.history[1:], ref):
        for i, c in enumerate(ours.components):
            gap = max(gap, abs(c.pi - pis[i]), np.max(np.abs(c.mu - mus[i])),
                      np.max(np.abs(c.B @ c.B.T - Bs[i] @ Bs[i].T)), np.max(np.abs(c.d - ds[i])))
            if spec.tfamily:
                gap = max(gap, abs(c.nu - nus[i]) / max(1.0, nus[i]))
    return gap, len(res.history) - 1


def _sfe_vs_single(target, family):
    """Final loglik gap between SFE with one block pinned and the single-sided fit."""
    if target == "SF":
        single = ModelSpec("SF", family, 2, 4, 1, 1)
        sfe = ModelSpec("SFE", family, 2, 4, 1, 1, 1)
        pin, tol = ("delta1",), 1e-10
    else:
        single = ModelSpec("SE", family, 1, 4, 1, 1)
        sfe = ModelSpec("SFE", family, 1, 4, 1, 1, 1)
        pin, tol = ("delta0",), 1e-12
    truth = random_params(single, np.random.default_rng(9), sep=3.0)
    Y = simulate(single, truth, 500, 4).data
    start = init_params(Y, single, seed=2)
    if target == "SF":
        lifted = tuple(replace(c, delta1=np.zeros((4, 1))) for c in start.components)
    else:
        lifted = tuple(replace(c, delta0=np.zeros((1, 1)), delta1=c.delta0)
                       for c in start.components)
    sfe_start = MixtureParams(sfe, lifted)
    cfg = FitConfig(max_iterations=3000, tol=tol, fixed_zero=pin)
    a = fit(Y, single, replace(cfg, fixed_zero=()), init=start)
    b = fit(Y, sfe, cfg, init=sfe_start)
    return abs(a.loglik - b.loglik)


def test_criterion_5_nested_reductions(acceptance):
    t0 = time.perf_counter()
    traj = {}
    for form, family in itertools.product(FORMS, ["CFUSN", "CFUST"]):
        traj[(form, family)] = _mfa_trajectory_gap(form, family)
    traj_gap = max(v[0] for v in traj.values())
    fit_gaps = {(t, f): _sfe_vs_single(t, f) for t in ("SF", "SE") for f in ("CFUSN", "CFUST")}
    fit_gap = max(fit_gaps.values())
    elapsed = time.perf_counter() - t0
    ok = traj_gap < 1e-6 and fit_gap < 1e-6 and elapsed < 300
    acceptance(5, ok, f"MFA trajectory gap {traj_gap:.1e} over 10 iterations (limit 1e-6); "
                      f"SFE-vs-SF/SE loglik gap {fit_gap:.1e} (limit 1e-6), {elapsed:.0f}s (limit 300s)")
    assert traj_gap < 1e-6, traj
    assert fit_gap < 1e-6, fit_gaps
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 6. parameter counting


def _enumerate_free(spec):
    """Count entries of the parameter arrays, minus the B rotation constraints."""
    params = random_params(spec, np.random.default_rng(0))
    total = len(params.components) - 1
    for c in params.components:
        arrays = [c.mu, c.B, c.d, c.delta0] + ([c.delta1] if c.delta1 is not None else [])
        total += sum(np.asarray(a).size for a in arrays)
        total -= spec.q * (spec.q - 1) // 2
        total += 1 if spec.tfamily else 0
    return total


def test_criterion_6_param_count(acceptance):
    mismatch, order_bad, cells = [], [], 0
    for p in range(2, 9):
        for q in range(1, p):
            for r in range(1, 4):
                for g, family in itertools.product((1, 2), ("CFUSN", "CFUST")):
                    specs = {"SE": ModelSpec("SE", family, g, p, q, r),
                             "SF": ModelSpec("SF", family, g, p, q, r),
                             "SFE": ModelSpec("SFE", family, g, p, q, r, r)}
                    for spec in specs.values():
                        cells += 1
                        if param_count(spec) != _enumerate_free(spec):
                            mismatch.append(spec)
                    if not param_count(specs["SF"]) < param_count(specs["SE"]):
                        order_bad.append(specs["SF"])
    ok = not mismatch and not order_bad
    acceptance(6, ok, f"{cells} specs: {len(mismatch)} count mismatches, "
                      f"{len(order_bad)} cases with SF >= SE")
    assert not mismatch and not order_bad


# ---------------------------------------------------------------------------
# 7. parameter recovery


def test_criterion_7_recovery(acceptance):
    t0 = time.perf_counter()
    spec = ModelSpec("SE", "CFUST", 1, 4, 1, 1)
    truth = ComponentParams(1.0, np.array([1.0, -0.5, 0.0, 2.0]),
                            np.array([[1.2], [0.8], [-0.6], [1.0]]), np.array([0.5, 0.4, 0.6, 0.3]),
                            np.array([[1.5], [-1.0], [0.8], [0.0]]), nu=4.0)
    params = MixtureParams(spec, (truth,))
    cov = truth.B @ truth.B.T + np.diag(truth.d)
    good, above_truth, rows = 0, 0, []
    for seed in range(10):
        Y = simulate(spec, params, 2000, seed).data
        res = fit(Y, spec, FitConfig(seed=seed))
        # a fit above the truth's likelihood rules out an optimiser failure
        above_truth += res.loglik >= loglik(Y, spec, params)
        c = res.params.components[0]
        e_mu = np.max(np.abs(c.mu - truth.mu))
        e_cov = np.linalg.norm(c.B @ c.B.T + np.diag(c.d) - cov) / np.linalg.norm(cov)
        hit = e_mu <= 0.1 and e_cov <= 0.1 and 3.0 <= c.nu <= 5.5
        good += hit
        rows.append((seed, round(e_mu, 3), round(e_cov, 3), round(c.nu, 2)))
    elapsed = time.perf_counter() - t0
    ok = good >= 8 and elapsed < 600
    acceptance(7, ok, f"{good}/10 seeds within tolerance (need 8); fitted loglik >= truth in "
                      f"{above_truth}/10; {elapsed:.0f}s (limit 600s)")
    assert good >= 8, rows
    assert elapsed < 600


# ---------------------------------------------------------------------------
# 8. large-nu limit


def test_criterion_8_nu_limit(acceptance):
    rng = np.random.default_rng(8)
    dens_gap = bulk_gap = 0.0
    for k in range(10):
        form = FORMS[k % 3]
        sn = ModelSpec(form, "CFUSN", int(rng.integers(1, 3)), 3, 1, int(rng.integers(1, 3)),
                       1 if form == "SFE" else 0)
        psn = random_params(sn, rng, sep=1.5)
        st = replace(sn, family="CFUST")
        pst = MixtureParams(st, tuple(replace(c, nu=1e6) for c in psn.components))
        # line through the first component: +-4 in its whitened units
        law = marginal_law(sn, psn.components[0])
        root = np.linalg.cholesky(law.sigma + law.delta @ law.delta.T)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        line = law.mu + np.linspace(-4, 4, 100)[:, None] * (root @ direction)
        lt, ln = mixture_logpdf(line, pst), mixture_logpdf(line, psn)
        dens_gap = max(dens_gap, np.max(np.abs(np.exp(lt) - np.exp(ln))))
        # log gaps are only compared in the bulk: deep in a tail the exact relative
        # difference between t_nu and normal tails is of order x^4 / (4 nu)
        bulk = ln > ln.max() - 10.0
        bulk_gap = max(bulk_gap, np.max(np.abs(lt - ln)[bulk]))
    ok = dens_gap < 1e-4 and bulk_gap < 1e-4
    acceptance(8, ok, f"max density gap {dens_gap:.1e}, max log-density gap in the bulk "
                      f"{bulk_gap:.1e} (limit 1e-4) over 10 sets x 100 points")
    assert dens_gap < 1e-4
    assert bulk_gap < 1e-4


# ---------------------------------------------------------------------------
# 9. model selection


def test_criterion_9_selection(acceptance, tmp_path):
    t0 = time.perf_counter()
    spec = ModelSpec("SF", "CFUSN", 2, 6, 1, 1)
    hits, picks = 0, []
    for rep in range(20):
        rng = np.random.default_rng(900 + rep)
        params = random_params(spec, rng, sep=4.0)
        Y = simulate(spec, params, 600, rep).data
        path = tmp_path / f"y{rep}.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"y{k + 1}" for k in range(6)])
            wr.writerows(Y.tolist())
        out = tmp_path / f"sel{rep}.json"
        code = main(["select", "--input", str(path), "--formulations", "sf", "--family", "cfusn",
                     "--g-grid", "1,2,3", "--q-grid", "1,2", "--seed", str(rep),
                     "--output", str(out)])
        assert code == 0
        best = json.loads(out.read_text())["best"]["spec"]
        picks.append((best["g"], best["q"]))
        hits += picks[-1] == (2, 1)
    elapsed = time.perf_counter() - t0
    ok = hits >= 18 and elapsed < 900
    acceptance(9, ok, f"(g=2, q=1) chosen in {hits}/20 replications (need 18), "
                      f"{elapsed:.0f}s (limit 900s)")
    assert hits >= 18, picks
    assert elapsed < 900
