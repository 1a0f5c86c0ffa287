"""Two-cycle AECM fitting for SE / SF / SFE mixtures of skew factor analyzers.

One iteration is:

1. E-step at the current parameters: responsibilities z, E[w], E[wU],
   E[wUU^T] and (t family) E[log w].
2. Cycle-one CM-step: pi, mu, nu, and the error skewness for SE.
3. E-step again at the half-updated parameters, then the factor moments
   E[wX], E[wXU^T], E[wXX^T].
4. Cycle-two CM-step: B, D, and the skewness blocks for SF / SFE.

Recomputing the E-step between the cycles is what makes each iteration
increase the observed log-likelihood.  The CFUSN family runs the same code
with w fixed at 1 and no nu update.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize, special
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .model import (
    SQRT_2_OVER_PI,
    ComponentParams,
    Formulation,
    MixtureParams,
    ModelSpec,
    as_array,
    marginal_law,
    param_count,
    skew_blocks,
)
from .skewdist import (
    DegenerateTruncationError,
    _elliptical_logpdf,
    _log_mvt_cdf_batch,
    hidden_truncation,
    orthant_moments,
)

__all__ = [
    "FitConfig",
    "EStepCache",
    "FitResult",
    "EmptyComponentError",
    "e_step_cycle1",
    "m_step_cycle1",
    "solve_nu",
    "nu_equation",
    "e_step_cycle2",
    "m_step_cycle2",
    "init_params",
    "fit",
    "bic",
]

log = logging.getLogger("skewfa.fit")

D_FLOOR = 1e-8
RIDGE = 1e-10
_EMPTY_WEIGHT = 1e-8
_KMEANS_RUNS = 10


class EmptyComponentError(RuntimeError):
    """A component lost (numerically) all of its responsibility mass."""


@dataclass(frozen=True)
class FitConfig:
    """Controls for :func:`fit`.

    ``fixed_zero`` pins skewness blocks ("delta0", "delta1") at zero, which
    yields the nested symmetric / single-sided models.  ``nu_update`` is
    "exact" (root of the exact conditional score) or "printed" (the
    approximation that ignores the truncation term).
    """

    max_iterations: int = 500
    tol: float = 1e-6
    nu_bounds: tuple = (2.0001, 200.0)
    init: str = "kmeans_pca"
    restarts: int = 1
    seed: int = 0
    mc_budget: int = 2 ** 16
    nu_update: str = "exact"
    fixed_zero: tuple = ()
    record_history: bool = False
    verbose: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        lo, hi = (float(b) for b in self.nu_bounds)
        if not 0 < lo < hi:
            raise ValueError("nu_bounds must satisfy 0 < low < high")
        object.__setattr__(self, "nu_bounds", (lo, hi))
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")
        if int(self.restarts) < 1:
            raise ValueError("restarts must be >= 1")
        if self.init not in ("kmeans_pca", "random"):
            raise ValueError("init must be 'kmeans_pca' or 'random'")
        if self.nu_update not in ("exact", "printed"):
            raise ValueError("nu_update must be 'exact' or 'printed'")
        bad = set(self.fixed_zero) - {"delta0", "delta1"}
        if bad:
            raise ValueError(f"unknown fixed_zero entries: {sorted(bad)}")
        object.__setattr__(self, "fixed_zero", tuple(self.fixed_zero))


@dataclass
class EStepCache:
    """Conditional expectations for one AECM iteration; arrays are indexed (n, g, ...).

    ``u`` and ``u2`` stack factor-side then error-side skewing variables.
    ``xt`` is E[w X U^T] over all skewing coordinates; the factor-side and
    error-side blocks are ``xt[..., :r_f]`` and ``xt[..., r_f:]``.
    """

    z: np.ndarray
    w: np.ndarray
    u: np.ndarray
    u2: np.ndarray
    elogw: np.ndarray | None
    log_dens: np.ndarray
    loglik: float
    x: np.ndarray | None = None
    xt: np.ndarray | None = None
    xs: np.ndarray | None = None


@dataclass
class FitResult:
    params: MixtureParams
    loglik_trace: np.ndarray
    responsibilities: np.ndarray
    bic: float
    iterations: int
    converged: bool
    termination_reason: str
    flags: dict = field(default_factory=dict)
    history: list | None = None
    restart_logliks: list = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


def bic(ll: float, spec: ModelSpec, n: int) -> float:
    return -2.0 * ll + param_count(spec) * np.log(n)


# ---------------------------------------------------------------------------
# E-step, cycle one


def _log_tcdf_dof_derivative(q, maha, lam, nu, p):
    """d/dk log T_m(q sqrt(2k/(nu+d)); lam, 2k) at k = (nu+p)/2 by central difference."""
    k0 = 0.5 * (nu + p)
    h = 1e-4 * k0
    vals = []
    for k in (k0 - h, k0 + h):
        arg = q * np.sqrt(2.0 * k / (nu + maha))[:, None]
        vals.append(_log_mvt_cdf_batch(arg, lam, 2.0 * k))
    return (vals[1] - vals[0]) / (2.0 * h)


def _component_estep1(Y, spec, comp):
    law = marginal_law(spec, comp)
    ht = hidden_truncation(Y, law.mu, law.sigma, law.delta)
    n, p = Y.shape
    m = law.delta.shape[1]
    if not spec.tfamily:
        mom = orthant_moments(ht.q, ht.lam, np.inf, second=True)
        log_f = m * np.log(2.0) + _elliptical_logpdf(ht.maha, ht.logdet_omega, p, np.inf) + mom.log_prob
        w = np.ones(n)
        u, u2, elogw = mom.mean, mom.second, None
    else:
        nu = law.nu
        c = (nu + ht.maha) / (nu + p + 2.0)
        sc = np.sqrt(c)
        mom = orthant_moments(ht.q / sc[:, None], ht.lam, nu + p + 2.0, second=True)
        log_f = m * np.log(2.0) + _elliptical_logpdf(ht.maha, ht.logdet_omega, p, nu) + mom.log_prob_h
        w = (nu + p) / (nu + ht.maha) * np.exp(mom.log_prob - mom.log_prob_h)
        u = (w * sc)[:, None] * mom.mean
        u2 = (w * c)[:, None, None] * mom.second
        elogw = special.digamma(0.5 * (nu + p)) - np.log(0.5 * (nu + ht.maha))
        if m:
            elogw = elogw + _log_tcdf_dof_derivative(ht.q, ht.maha, ht.lam, nu, p)
    u2 = 0.5 * (u2 + np.swapaxes(u2, 1, 2))
    bad = ~np.isfinite(log_f) | ~np.isfinite(w)
    bad |= ~np.all(np.isfinite(u.reshape(n, -1)), axis=1)
    if np.any(bad):
        raise DegenerateTruncationError(
            f"{int(bad.sum())} observation(s) have a numerically empty truncation region")
    return log_f, w, u, u2, elogw


def e_step_cycle1(data, spec: ModelSpec, params: MixtureParams) -> EStepCache:
    """Responsibilities, E[w], E[wU], E[wUU^T] and E[log w] at ``params``."""
    Y = as_array(data)
    n, g, m = Y.shape[0], spec.g, spec.m
    log_dens = np.empty((n, g))
    w = np.empty((n, g))
    u = np.empty((n, g, m))
    u2 = np.empty((n, g, m, m))
    elogw = np.empty((n, g)) if spec.tfamily else None
    for i, comp in enumerate(params.components):
        lf, wi, ui, u2i, ei = _component_estep1(Y, spec, comp)
        log_dens[:, i] = np.log(comp.pi) + lf
        w[:, i], u[:, i], u2[:, i] = wi, ui, u2i
        if elogw is not None:
            elogw[:, i] = ei
    norm = logsumexp(log_dens, axis=1)
    z = np.exp(log_dens - norm[:, None])
    return EStepCache(z=z, w=w, u=u, u2=u2, elogw=elogw, log_dens=log_dens,
                      loglik=float(np.sum(norm)))


# ---------------------------------------------------------------------------
# E-step, cycle two


def _factor_posterior(spec, comp):
    """C = (I + B^T D^-1 B)^-1, G = C B^T D^-1 and K = [C delta_f, -G delta_e]."""
    B, d = comp.B, comp.d
    BtDi = (B / d[:, None]).T
    C = linalg.inv(np.eye(spec.q) + BtDi @ B)
    C = 0.5 * (C + C.T)
    G = C @ BtDi
    df, de = skew_blocks(spec, comp)
    K = np.hstack([C @ df, -G @ de])
    return C, G, K


def e_step_cycle2(data, spec: ModelSpec, params: MixtureParams, cache: EStepCache) -> EStepCache:
    """Add E[wX], E[wXU^T] and E[wXX^T] to a cycle-one cache computed at ``params``."""
    Y = as_array(data)
    n, g, q, m = Y.shape[0], spec.g, spec.q, spec.m
    x = np.empty((n, g, q))
    xt = np.empty((n, g, q, m))
    xs = np.empty((n, g, q, q))
    for i, comp in enumerate(params.components):
        C, G, K = _factor_posterior(spec, comp)
        Ge = (Y - comp.mu) @ G.T
        ui, u2i = cache.u[:, i], cache.u2[:, i]
        xi = cache.w[:, i, None] * Ge + ui @ K.T
        xti = Ge[:, :, None] * ui[:, None, :] + np.einsum("ab,nbc->nac", K, u2i)
        xsi = xi[:, :, None] * Ge[:, None, :] + xti @ K.T + C
        x[:, i], xt[:, i] = xi, xti
        xs[:, i] = 0.5 * (xsi + np.swapaxes(xsi, 1, 2))
    return replace(cache, x=x, xt=xt, xs=xs)


# ---------------------------------------------------------------------------
# M-steps


def _solve_gram(rhs, gram, flags):
    """rhs @ gram^-1 for SPD gram, falling back to a ridge on failure."""
    k = gram.shape[0]
    if k == 0:
        return np.zeros((rhs.shape[0], 0))
    gram = 0.5 * (gram + gram.T)
    try:
        cf = linalg.cho_factor(gram)
        return linalg.cho_solve(cf, rhs.T).T
    except linalg.LinAlgError:
        flags["ridge"] = flags.get("ridge", 0) + 1
        warnings.warn("singular normal equations; using a ridge-damped solve", RuntimeWarning)
        return linalg.solve(gram + RIDGE * np.eye(k), rhs.T, assume_a="sym").T


def nu_equation(nu, stat):
    """log(nu/2) - digamma(nu/2) + 1 + stat, decreasing in nu."""
    return np.log(0.5 * nu) - special.digamma(0.5 * nu) + 1.0 + stat


def solve_nu(stat, nu_prev, bounds, flags=None):
    """Root in ``bounds`` of :func:`nu_equation`.

    ``stat`` is the responsibility-weighted mean of E[log w] - E[w].  If the
    bounds do not bracket a root, the nearer endpoint is returned and
    ``flags['nu_clamped']`` is incremented.
    """
    lo, hi = bounds
    f_lo, f_hi = nu_equation(lo, stat), nu_equation(hi, stat)
    if f_lo * f_hi > 0:
        if flags is not None:
            flags["nu_clamped"] = flags.get("nu_clamped", 0) + 1
        return lo if f_lo < 0 else hi
    return float(optimize.brentq(nu_equation, lo, hi, args=(stat,), xtol=1e-10, rtol=1e-14))


def _printed_nu_stat(Y, spec, comp, mu_new, zi):
    """Weighted stat of the symmetric-t approximation to the nu equation."""
    law = marginal_law(spec, comp)
    nu, p = law.nu, spec.p
    omega = law.sigma + law.delta @ law.delta.T
    e = Y - mu_new
    eta = np.sum(e * linalg.solve(omega, e.T, assume_a="pos").T, axis=1)
    term = (special.digamma(0.5 * (nu + p)) - np.log(0.5 * (nu + eta))
            - (nu + p) / (nu + eta))
    return float(zi @ term / zi.sum())


def _component_weights(cache, i):
    zi = cache.z[:, i]
    ni = float(zi.sum())
    if ni <= _EMPTY_WEIGHT * max(1, zi.size):
        raise EmptyComponentError(f"component {i + 1} is empty; try fewer components")
    return zi, ni


def m_step_cycle1(data, spec: ModelSpec, params: MixtureParams, cache: EStepCache,
                  config: FitConfig | None = None, flags=None) -> MixtureParams:
    """Update pi, mu, nu (and the error skewness for SE) from a cycle-one cache."""
    config = config or FitConfig()
    flags = {} if flags is None else flags
    Y = as_array(data)
    n = Y.shape[0]
    pinned = set(config.fixed_zero)
    comps = []
    for i, comp in enumerate(params.components):
        zi, ni = _component_weights(cache, i)
        wi, ui, u2i = cache.w[:, i], cache.u[:, i], cache.u2[:, i]
        zw = zi * wi
        s_w = zw.sum()
        s_wy = zw @ Y
        s_u = zi @ ui
        new = {"pi": ni / n}
        if spec.formulation is Formulation.SE and spec.r and "delta0" not in pinned:
            gram = np.block([[np.array([[s_w]]), s_u[None, :]],
                             [s_u[:, None], np.einsum("n,nab->ab", zi, u2i)]])
            rhs = np.hstack([s_wy[:, None], (zi[:, None] * Y).T @ ui])
            theta = _solve_gram(rhs, gram, flags)
            new["mu"], new["delta0"] = theta[:, 0], theta[:, 1:]
        else:
            delta_star = marginal_law(spec, comp).delta
            new["mu"] = (s_wy - delta_star @ s_u) / s_w
        if spec.tfamily:
            if config.nu_update == "exact":
                stat = float(zi @ (cache.elogw[:, i] - wi) / ni)
            else:
                stat = _printed_nu_stat(Y, spec, comp, new["mu"], zi)
            new["nu"] = solve_nu(stat, comp.nu, config.nu_bounds, flags)
        comps.append(replace(comp, **new))
    total = sum(c.pi for c in comps)
    comps = [replace(c, pi=c.pi / total) for c in comps]
    return MixtureParams(spec, tuple(comps))


def _se_loadings(comp, V):
    """Factor-analysis update of (B, d) from the scale estimate V."""
    B, d = comp.B, comp.d
    sigma = B @ B.T + np.diag(d)
    gamma = linalg.solve(sigma, B, assume_a="pos")
    omega = np.eye(B.shape[1]) - gamma.T @ B
    Vg = V @ gamma
    B_new = linalg.solve(gamma.T @ Vg + omega, Vg.T, assume_a="pos").T
    d_new = np.diag(V - B_new @ Vg.T).copy()
    return B_new, d_new


def _cycle2_stats(Y, spec, comp, cache, i):
    """Gram matrix and cross moments of the regressors (X, U_e) against y - mu."""
    zi = cache.z[:, i]
    rf = spec.r_factor
    e = Y - comp.mu
    x, xt, xs = cache.x[:, i], cache.xt[:, i], cache.xs[:, i]
    ue, u2ee = cache.u[:, i, rf:], cache.u2[:, i, rf:, rf:]
    g_xx = np.einsum("n,nab->ab", zi, xs)
    g_xe = np.einsum("n,nab->ab", zi, xt[:, :, rf:])
    g_ee = np.einsum("n,nab->ab", zi, u2ee)
    gram = np.block([[g_xx, g_xe], [g_xe.T, g_ee]])
    ze = zi[:, None] * e
    rhs = np.hstack([ze.T @ x, ze.T @ ue])
    s_wee_diag = (zi * cache.w[:, i]) @ (e * e)
    return gram, rhs, s_wee_diag


def m_step_cycle2(data, spec: ModelSpec, params: MixtureParams, cache: EStepCache,
                  config: FitConfig | None = None, flags=None) -> MixtureParams:
    """Update B, D and the remaining skewness blocks from a cycle-two cache."""
    config = config or FitConfig()
    flags = {} if flags is None else flags
    Y = as_array(data)
    pinned = set(config.fixed_zero)
    q, rf = spec.q, spec.r_factor
    comps = []
    for i, comp in enumerate(params.components):
        zi, ni = _component_weights(cache, i)
        new = {}
        if rf and "delta0" not in pinned:
            s_xu = np.einsum("n,nab->ab", zi, cache.xt[:, i, :, :rf])
            s_uu = np.einsum("n,nab->ab", zi, cache.u2[:, i, :rf, :rf])
            new["delta0"] = _solve_gram(s_xu, s_uu, flags)

        _, de = skew_blocks(spec, comp)
        if spec.formulation is Formulation.SE:
            # scale estimate from cycle one, then the factor-analysis step
            e = Y - comp.mu
            wi, ui, u2i = cache.w[:, i], cache.u[:, i], cache.u2[:, i]
            du = ui @ de.T
            zeT = (zi[:, None] * e).T
            V = ((zi * wi)[:, None] * e).T @ e - zeT @ du - (zeT @ du).T
            V += de @ np.einsum("n,nab->ab", zi, u2i) @ de.T
            V = 0.5 * (V + V.T) / ni
            B, d = _se_loadings(comp, V)
        else:
            gram, rhs, s_wee = _cycle2_stats(Y, spec, comp, cache, i)
            free_de = spec.formulation is Formulation.SFE and "delta1" not in pinned
            if free_de:
                theta = _solve_gram(rhs, gram, flags)
                B, de = theta[:, :q], theta[:, q:]
                new["delta1"] = de
            else:
                B = _solve_gram(rhs[:, :q] - de @ gram[q:, :q], gram[:q, :q], flags)
                theta = np.hstack([B, de])
            d = (s_wee - 2.0 * np.sum(theta * rhs, axis=1)
                 + np.einsum("ab,bc,ac->a", theta, gram, theta)) / ni
        if np.any(d < D_FLOOR):
            flags["d_floor"] = flags.get("d_floor", 0) + 1
            d = np.maximum(d, D_FLOOR)
        new["B"], new["d"] = B, d
        comps.append(replace(comp, **new))
    return MixtureParams(spec, tuple(comps))


# ---------------------------------------------------------------------------
# initialisation


def _skew_sign(X):
    c = X - X.mean(axis=0)
    m3 = np.mean(c ** 3, axis=0)
    s = np.sign(m3)
    s[s == 0] = 1.0
    return s


def _partition(Y, g, init, rng):
    n = Y.shape[0]
    if g == 1:
        return np.zeros(n, dtype=int)
    if init == "random":
        labels = rng.permutation(np.arange(n) % g)
        return labels
    # raw scale: standardising can bury a separation carried by one variable
    best, best_ss = None, np.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(_KMEANS_RUNS):
            centers, labels = kmeans2(Y, g, minit="++", seed=rng)
            ss = np.sum((Y - centers[labels]) ** 2)
            if ss < best_ss:
                best, best_ss = labels, ss
    return best


def init_params(data, spec: ModelSpec, seed=0, init="kmeans_pca") -> MixtureParams:
    """Deterministic starting values from a seeded partition plus per-cluster PCA.

    Loadings are the top-q eigenvectors scaled by the root eigenvalues, D the
    residual variances (floored at 1e-4), skewness 0.1 of a marginal sd in
    the direction of the sample third moment, nu = 30, with mu shifted back
    by the implied skew mean.
    """
    Y = as_array(data)
    n, p = Y.shape
    if p != spec.p:
        raise ValueError(f"data have {p} columns, model expects p={spec.p}")
    g, q = spec.g, spec.q
    if n < g * (q + 1):
        raise ValueError(f"need at least g*(q+1) = {g * (q + 1)} observations, got {n}")
    rng = np.random.default_rng(seed)
    min_size = max(q + 1, 2)
    for _ in range(20):
        labels = _partition(Y, g, init, rng)
        sizes = np.bincount(labels, minlength=g)
        if np.all(sizes >= min_size):
            break
    else:
        raise EmptyComponentError("could not find an initial partition without tiny clusters")

    comps = []
    for i in range(g):
        Yi = Y[labels == i]
        mu = Yi.mean(axis=0)
        S = np.cov(Yi, rowvar=False, bias=True).reshape(p, p)
        evals, evecs = linalg.eigh(S)
        order = np.argsort(evals)[::-1][:q]
        lam = np.maximum(evals[order], 1e-8)
        V = evecs[:, order]
        B = V * np.sqrt(lam)
        d = np.maximum(np.diag(S - B @ B.T), 1e-4)
        sd = np.sqrt(np.diag(S))
        scores = (Yi - mu) @ V / np.sqrt(lam)

        def block(sign, scale, cols):
            out = np.tile((0.1 * sign * scale)[:, None], (1, cols))
            if cols > 1:
                out[:, 1:] *= 1.0 + 0.5 * rng.standard_normal((sign.size, cols - 1))
            return out

        if spec.formulation is Formulation.SE:
            delta0 = block(_skew_sign(Yi), sd, spec.r)
            delta1 = None
        else:
            delta0 = block(_skew_sign(scores), np.ones(q), spec.r)
            delta1 = block(_skew_sign(Yi), sd, spec.s) if spec.formulation is Formulation.SFE else None
        comp = ComponentParams(pi=sizes[i] / n, mu=mu, B=B, d=d, delta0=delta0,
                               delta1=delta1, nu=30.0 if spec.tfamily else None)
        dstar = marginal_law(spec, comp).delta
        # E|U| per coordinate: sqrt(2/pi) for the normal, larger for the t
        if spec.tfamily:
            mean_abs = np.sqrt(30.0 / np.pi) * np.exp(special.gammaln(14.5) - special.gammaln(15.0))
        else:
            mean_abs = SQRT_2_OVER_PI
        shift = mean_abs * dstar.sum(axis=1)
        comps.append(replace(comp, mu=mu - shift))
    return MixtureParams(spec, tuple(comps))


# ---------------------------------------------------------------------------
# driver


def _zero_pinned(params, pinned):
    if not pinned:
        return params
    comps = []
    for c in params.components:
        new = {}
        if "delta0" in pinned:
            new["delta0"] = np.zeros_like(c.delta0)
        if "delta1" in pinned and c.delta1 is not None:
            new["delta1"] = np.zeros_like(c.delta1)
        comps.append(replace(c, **new))
    return MixtureParams(params.spec, tuple(comps))


def _damp(old: MixtureParams, new: MixtureParams, factor=0.5):
    """Move the skewness blocks of ``new`` back towards ``old``."""
    comps = []
    for a, b in zip(old.components, new.components):
        upd = {"delta0": a.delta0 + factor * (b.delta0 - a.delta0)}
        if b.delta1 is not None:
            upd["delta1"] = a.delta1 + factor * (b.delta1 - a.delta1)
        comps.append(replace(b, **upd))
    return MixtureParams(new.spec, tuple(comps))


def _guarded_estep(Y, spec, old, new, flags, max_halvings=20):
    for _ in range(max_halvings):
        try:
            return new, e_step_cycle1(Y, spec, new)
        except DegenerateTruncationError:
            flags["delta_damped"] = flags.get("delta_damped", 0) + 1
            new = _damp(old, new)
    return new, e_step_cycle1(Y, spec, new)


def _emit(config, record):
    if config.verbose:
        log.info(json.dumps(record))


def _run(Y, spec, config, params, attempt):
    flags = {}
    pinned = set(config.fixed_zero)
    params = _zero_pinned(params, pinned)
    cache = e_step_cycle1(Y, spec, params)
    trace = [cache.loglik]
    history = [params] if config.record_history else None
    converged, reason = False, "max_iterations"
    it = 0
    for it in range(1, config.max_iterations + 1):
        half = m_step_cycle1(Y, spec, params, cache, config, flags)
        half, cache_half = _guarded_estep(Y, spec, params, half, flags)
        cache_half = e_step_cycle2(Y, spec, half, cache_half)
        new = m_step_cycle2(Y, spec, half, cache_half, config, flags)
        new, cache = _guarded_estep(Y, spec, half, new, flags)
        params = new
        ll = cache.loglik
        trace.append(ll)
        if history is not None:
            history.append(params)
        _emit(config, {"attempt": attempt, "iteration": it, "loglik": ll,
                       "pi": [c.pi for c in params.components],
                       "nu": [c.nu for c in params.components]})
        if not np.isfinite(ll):
            reason = "nonfinite_loglik"
            break
        if abs(ll - trace[-2]) <= config.tol * abs(ll):
            converged, reason = True, "converged"
            break
    return FitResult(params=params, loglik_trace=np.array(trace), responsibilities=cache.z,
                     bic=bic(trace[-1], spec, Y.shape[0]), iterations=it,
                     converged=converged, termination_reason=reason, flags=flags,
                     history=history)


def fit(data, spec: ModelSpec, config: FitConfig | None = None,
        init: MixtureParams | None = None) -> FitResult:
    """Maximum-likelihood fit by AECM; returns the best of ``config.restarts`` runs.

    A run whose component empties is restarted with a fresh seed (up to 3
    times).  With an explicit ``init``, only that start is used.
    """
    config = config or FitConfig()
    Y = as_array(data)
    if Y.shape[1] != spec.p:
        raise ValueError(f"data have {Y.shape[1]} columns, model expects p={spec.p}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("data contain non-finite values")
    if Y.shape[0] <= param_count(spec):
        warnings.warn("fewer observations than free parameters", RuntimeWarning)

    best, lls = None, []
    n_starts = 1 if init is not None else config.restarts
    for k in range(n_starts):
        result = None
        for attempt in range(4):
            seed = config.seed + k + 1000 * attempt
            start = init if (init is not None and attempt == 0) else init_params(Y, spec, seed, config.init)
            try:
                result = _run(Y, spec, config, start, attempt)
                break
            except EmptyComponentError:
                if attempt == 3:
                    raise
                continue
        lls.append(result.loglik)
        if best is None or result.loglik > best.loglik:
            best = result
    best.restart_logliks = lls
    return best
