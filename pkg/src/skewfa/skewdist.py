"""Canonical fundamental skew normal / skew t distributions.

Densities, multivariate t orthant probabilities, moments of the positively
truncated multivariate t, and samplers.  ``nu = np.inf`` selects the normal
member of every family throughout, so the CFUSN routines are thin wrappers
around the CFUST ones.

Batched internals work on ``(n, m)`` arrays of arguments sharing a single
``(m, m)`` scale matrix; this is the shape the E-step needs.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special
from scipy.sparse import csgraph
from scipy.stats import qmc

__all__ = [
    "CfusnParams",
    "CfustParams",
    "TruncTSpec",
    "DegenerateTruncationError",
    "cfusn_density",
    "cfusn_logpdf",
    "cfust_density",
    "cfust_logpdf",
    "skew_logpdf",
    "mvt_cdf",
    "mvt_cdf_batch",
    "trunc_t_moments",
    "orthant_moments",
    "sample_cfusn",
    "sample_cfust",
    "digamma",
    "gammaln",
]

LOG2 = np.log(2.0)
_QMC_SEED = 20170203
_MIN_TRUNC_PROB = 1e-12


class DegenerateTruncationError(ValueError):
    """Truncation region carries (numerically) no probability mass."""


# ---------------------------------------------------------------------------
# parameter containers


def _as_matrix(a, rows=None, name="matrix"):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if rows is not None and a.shape[0] != rows:
        if a.size == 0:
            return np.zeros((rows, 0))
        raise ValueError(f"{name} must have {rows} rows, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class CfusnParams:
    """Location ``mu`` (p,), scale ``sigma`` (p, p) and skewness ``delta`` (p, r)."""

    mu: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        p = mu.shape[0]
        sigma = _as_matrix(self.sigma, p, "sigma")
        if sigma.shape != (p, p):
            raise ValueError(f"sigma must be ({p}, {p}), got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-10):
            raise ValueError("sigma is not symmetric")
        linalg.cholesky(sigma, lower=True)  # raises LinAlgError if not SPD
        delta = _as_matrix(self.delta, p, "delta")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "delta", delta)

    @property
    def p(self):
        return self.mu.shape[0]

    @property
    def r(self):
        return self.delta.shape[1]


@dataclass(frozen=True)
class CfustParams:
    cfusn: CfusnParams
    nu: float

    def __post_init__(self):
        nu = float(self.nu)
        if not (nu > 0) or not np.isfinite(nu):
            raise ValueError(f"nu must be finite and > 0, got {self.nu}")
        object.__setattr__(self, "nu", nu)


@dataclass(frozen=True)
class TruncTSpec:
    """t_m(center, scale, dof) restricted to the positive orthant."""

    center: np.ndarray
    scale: np.ndarray
    dof: float

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        m = center.shape[0]
        scale = _as_matrix(self.scale, m, "scale")
        if scale.shape != (m, m):
            raise ValueError(f"scale must be ({m}, {m}), got {scale.shape}")
        linalg.cholesky(scale, lower=True)
        dof = float(self.dof)
        if not dof > 0:
            raise ValueError("dof must be > 0")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "dof", dof)


# ---------------------------------------------------------------------------
# special functions


def digamma(x):
    """Digamma function for positive arguments."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("digamma is only defined here for x > 0")
    out = special.digamma(x)
    return float(out) if out.ndim == 0 else out


def gammaln(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("gammaln is only defined here for x > 0")
    out = special.gammaln(x)
    return float(out) if out.ndim == 0 else out


def _t1_cdf(x, dof):
    return special.ndtr(x) if np.isinf(dof) else special.stdtr(dof, x)


def _t1_logcdf(x, dof):
    if np.isinf(dof):
        return special.log_ndtr(x)
    with np.errstate(divide="ignore"):
        return np.log(special.stdtr(dof, x))


def _t1_ppf(u, dof):
    return special.ndtri(u) if np.isinf(dof) else special.stdtrit(dof, u)


def _t1_logpdf(x, dof):
    if np.isinf(dof):
        return -0.5 * x * x - 0.5 * np.log(2 * np.pi)
    return (special.gammaln((dof + 1) / 2) - special.gammaln(dof / 2)
            - 0.5 * np.log(dof * np.pi) - (dof + 1) / 2 * np.log1p(x * x / dof))


# ---------------------------------------------------------------------------
# multivariate t orthant probabilities

_GL24 = np.polynomial.legendre.leggauss(24)
_GL8 = np.polynomial.legendre.leggauss(8)
_GL64 = np.polynomial.legendre.leggauss(64)
_BVT_CHUNK = 8192


def _gl_nodes(a, b, rule):
    x, w = rule
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def _plackett_kernel(quad_form_over_cos2, dof):
    if np.isinf(dof):
        return np.exp(-0.5 * quad_form_over_cos2)
    return np.exp(-0.5 * dof * np.log1p(quad_form_over_cos2 / dof))


def _bvt_conditional(h, k, rho, dof):
    """P(T1 <= h, T2 <= k) by integrating the conditional law of T2 | T1.

    Positive integrand, so it keeps relative accuracy deep in the lower tail
    where the Plackett form suffers from cancellation.
    """
    top = _t1_cdf(h, dof)
    v, wts = _gl_nodes(0.0, 1.0, _GL64)
    # u = top * v**4 pushes nodes towards the singular endpoint u -> 0
    u = top[:, None] * v[None, :] ** 4
    jac = 4.0 * v[None, :] ** 3 * top[:, None]
    t = _t1_ppf(np.clip(u, 1e-300, 1.0), dof)
    if np.isinf(dof):
        s = np.sqrt(1.0 - rho * rho)
        inner = special.ndtr((k[:, None] - rho * t) / s)
    else:
        s = np.sqrt((1.0 - rho * rho) * (dof + t * t) / (dof + 1.0))
        inner = special.stdtr(dof + 1.0, (k[:, None] - rho * t) / s)
    return np.sum(inner * jac * wts[None, :], axis=1)


def _repair_cancellation(out, base, h, k, rho, dof):
    # a result far below the terms it came from has lost its leading digits
    bad = out < 1e-6 * base
    if np.any(bad):
        out = out.copy()
        out[bad] = _bvt_conditional(h[bad], k[bad], rho, dof)
    return out


@functools.lru_cache(maxsize=256)
def _graded_nodes(eps0, n_panels=32):
    """Gauss-Legendre nodes on (0, eps0] with panels shrinking geometrically to 0."""
    edges = eps0 * 2.0 ** -np.arange(n_panels)[::-1]
    nodes, wts = [], []
    a = 0.0
    for b in edges:
        x, w = _gl_nodes(a, b, _GL8)
        nodes.append(x)
        wts.append(w)
        a = b
    return np.concatenate(nodes), np.concatenate(wts)


def _bvt_cdf(h, k, rho, dof):
    """Standardised bivariate t (or normal for dof=inf) lower-orthant probability.

    Uses d/drho T2 = (2 pi sqrt(1-rho^2))^-1 (1 + Q/dof)^(-dof/2), integrated
    over theta = asin(rho) by Gauss-Legendre.  The t case, and the normal case
    with |rho| > 0.9, integrate from the singular end rho = +-1 on graded
    panels instead.
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    if h.size > _BVT_CHUNK:
        # bound the (rows, nodes) temporaries
        return np.concatenate([_bvt_cdf(h[a:a + _BVT_CHUNK], k[a:a + _BVT_CHUNK], rho, dof)
                               for a in range(0, h.size, _BVT_CHUNK)])
    # rho = 0 only factorises for the normal; t integrates from the pole
    if np.isinf(dof) and abs(rho) <= 0.9:
        th, wt = _gl_nodes(0.0, np.arcsin(rho), _GL24)
        s, c2 = np.sin(th), np.cos(th) ** 2
        hh, kk = h[:, None], k[:, None]
        qf = (hh * hh - 2.0 * hh * kk * s + kk * kk) / c2
        integral = _plackett_kernel(qf, dof) @ wt / (2 * np.pi)
        base = _t1_cdf(h, dof) * _t1_cdf(k, dof)
        out = base + integral
        if rho < 0:
            out = _repair_cancellation(out, base, h, k, rho, dof)
        return np.clip(out, 0.0, 1.0)

    eps, wt = _graded_nodes(float(np.arccos(abs(rho))))
    kk = k if rho > 0 else -k
    hh, kk = h[:, None], kk[:, None]
    sin_e = np.sin(eps)
    half = np.sin(0.5 * eps)
    qf = ((hh - kk) ** 2 + 4.0 * hh * kk * half * half) / (sin_e * sin_e)
    tail = _plackett_kernel(qf, dof) @ wt / (2 * np.pi)
    if rho > 0:
        base = _t1_cdf(np.minimum(h, k), dof)
        out = base - tail
    else:
        return np.clip(np.maximum(0.0, _t1_cdf(h, dof) - _t1_cdf(-k, dof)) + tail, 0.0, 1.0)
    return np.clip(_repair_cancellation(out, base, h, k, rho, dof), 0.0, 1.0)


# panel edges: offsets (in conditional standard deviations) around each point
# where a conditional argument changes sign, plus quantiles of X1 | X1 <= x1
_TVT_OFFSETS = np.array([-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0])
_TVT_QUANTILES = np.array([1e-12, 1e-8, 1e-5, 1e-3, 0.02, 0.16, 0.5, 0.84, 0.98, 0.999])


def _tvt_cdf(xs, corr, dof, order=8):
    """Trivariate lower-orthant probability as a 1-D integral of bivariate ones.

    Conditions on the coordinate least correlated with the others.  Given
    X1 = t the pair (X2, X3) is t_{dof+1} (normal if dof = inf) with a
    correlation that does not depend on t, so every node is one vectorised
    bivariate evaluation.  Gauss-Legendre panels in t bracket the steps of
    the integrand, which are sharp when the conditional variances are small;
    the tail below the lowest edge is integrated over u = P(X1 <= t).
    """
    n = xs.shape[0]
    off = np.abs(corr - np.diag(np.diag(corr)))
    j = int(np.argmin(off.max(axis=1)))
    perm = [j] + [k for k in range(3) if k != j]
    x = xs[:, perm]
    R = corr[np.ix_(perm, perm)]
    r12, r13 = R[0, 1], R[0, 2]
    s2, s3 = np.sqrt(1.0 - r12 * r12), np.sqrt(1.0 - r13 * r13)
    rc = (R[1, 2] - r12 * r13) / (s2 * s3)
    if not abs(rc) < 1.0:
        raise np.linalg.LinAlgError("scale must be positive definite")
    x1 = x[:, 0]

    # quantiles of X1 given X1 <= x1, so deep lower tails keep their resolution
    top = _t1_cdf(x1, dof)
    edges = [_t1_ppf(np.maximum(top[:, None] * _TVT_QUANTILES, 1e-300), dof)]
    for xc, r, sc in ((x[:, 1], r12, s2), (x[:, 2], r13, s3)):
        if abs(r) < 1e-3:
            continue
        tc = xc / r
        kc = 1.0 if np.isinf(dof) else np.sqrt((dof + tc * tc) / (dof + 1.0))
        edges.append(tc[:, None] + np.outer(sc * kc / abs(r), _TVT_OFFSETS))
    edges = np.minimum(np.concatenate(edges, axis=1), x1[:, None])
    edges = np.sort(np.column_stack([edges, x1]), axis=1)
    gx, gw = np.polynomial.legendre.leggauss(order)
    v, vw = 0.5 * (gx + 1.0), 0.5 * gw

    # panels in t between consecutive edges
    lo, hi = edges[:, :-1, None], edges[:, 1:, None]
    t_mid = (lo + (hi - lo) * v).reshape(n, -1)
    w_mid = ((hi - lo) * vw).reshape(n, -1) * np.exp(_t1_logpdf(t_mid, dof))
    # (-inf, lowest edge]: u = P(X1 <= lowest) * v**4
    u_low = _t1_cdf(edges[:, 0], dof)[:, None]
    t_tail = _t1_ppf(np.maximum(u_low * v ** 4, 1e-300), dof)
    w_tail = u_low * 4.0 * v ** 3 * vw
    t = np.concatenate([t_tail, t_mid], axis=1)
    wts = np.concatenate([w_tail, w_mid], axis=1)

    if np.isinf(dof):
        kap, dof_c = 1.0, np.inf
    else:
        kap, dof_c = np.sqrt((dof + t * t) / (dof + 1.0)), dof + 1.0
    h = (x[:, 1, None] - r12 * t) / (s2 * kap)
    k = (x[:, 2, None] - r13 * t) / (s3 * kap)
    inner = _bvt_cdf(h.ravel(), k.ravel(), float(rc), dof_c).reshape(n, -1)
    return np.clip(np.sum(inner * wts, axis=1), 0.0, 1.0)


def _qmc_cdf(x, corr, dof, tol, max_points, seed=_QMC_SEED, n_rand=8, rel_tol=1e-3):
    """Genz separation-of-variables estimate with randomised Sobol points.

    The sample size doubles until three standard errors (over ``n_rand``
    independent scramblings) fall below ``tol`` and ``rel_tol`` times the
    estimate for every row, or until ``max_points`` per scrambling is
    reached.  The relative target matters for small probabilities, which
    end up in denominators and logarithms.
    """
    n, m = x.shape
    L = linalg.cholesky(corr, lower=True)
    dim = m - 1 + (0 if np.isinf(dof) else 1)
    est = np.zeros(n)
    active = np.arange(n)
    N = 512
    while active.size:
        vals = np.empty((n_rand, active.size))
        for k in range(n_rand):
            pts = qmc.Sobol(d=dim, scramble=True, seed=seed + k).random(N)
            vals[k] = _sov_estimate(x[active], L, dof, pts)
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / np.sqrt(n_rand)
        est[active] = mean
        ok = 3.0 * se <= np.minimum(tol, rel_tol * mean)
        if N >= max_points:
            break
        active = active[~ok]
        N *= 2
    return est


def _sov_estimate(x, L, dof, pts):
    n, m = x.shape
    N = pts.shape[0]
    if np.isinf(dof):
        xs = np.broadcast_to(x[:, None, :], (n, N, m))
    else:
        chi = np.sqrt(2.0 * special.gammaincinv(dof / 2.0, pts[:, -1]) / dof)
        xs = x[:, None, :] * chi[None, :, None]
    f = np.ones((n, N))
    y = np.zeros((n, N, m))
    for i in range(m):
        shift = y[:, :, :i] @ L[i, :i] if i else 0.0
        e = special.ndtr((xs[:, :, i] - shift) / L[i, i])
        f *= e
        if i < m - 1:
            u = np.clip(pts[None, :, i] * e, 1e-300, 1 - 1e-16)
            y[:, :, i] = special.ndtri(u)
    return f.mean(axis=1)


def mvt_cdf_batch(x, scale, dof=np.inf, tol=None, max_points=2 ** 16, rel_tol=1e-3):
    """Row-wise P(T <= x_j) for T ~ t_m(0, scale, dof); ``x`` has shape (n, m).

    m <= 3 is deterministic: closed forms for m = 1, a 1-D integral for m = 2
    and a 1-D integral of bivariate values for m = 3.  Larger m uses
    randomised QMC with a fixed seed (targets ``tol``, default 1e-4, and
    ``rel_tol``), after splitting normal problems into independent blocks.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, m = x.shape
    if m == 0:
        return np.ones(n)
    scale = np.asarray(scale, dtype=float).reshape(m, m)
    sd = np.sqrt(np.diag(scale))
    if np.any(~(sd > 0)):
        raise np.linalg.LinAlgError("scale must be positive definite")
    xs = x / sd
    if m == 1:
        return _t1_cdf(xs[:, 0], dof)
    corr = scale / np.outer(sd, sd)
    if m == 2:
        if not abs(corr[0, 1]) < 1.0:
            raise np.linalg.LinAlgError("scale must be positive definite")
        return _bvt_cdf(xs[:, 0], xs[:, 1], float(corr[0, 1]), dof)
    if np.isinf(dof):
        # uncorrelated normal blocks are independent: multiply their CDFs
        n_blocks, block = csgraph.connected_components(np.abs(corr) > 0.0, directed=False)
        if n_blocks > 1:
            out = np.ones(n)
            for b in range(n_blocks):
                idx = np.flatnonzero(block == b)
                out *= mvt_cdf_batch(xs[:, idx], corr[np.ix_(idx, idx)], dof, tol, max_points,
                                     rel_tol)
            return out
    if m == 3:
        return _tvt_cdf(xs, corr, dof)
    if tol is None:
        tol = 1e-4
    return np.clip(_qmc_cdf(xs, corr, dof, tol, max_points, rel_tol=rel_tol), 0.0, 1.0)


def _log_mvt_cdf_batch(x, scale, dof, cdf_options=None):
    x = np.atleast_2d(x)
    if x.shape[1] == 1:
        return _t1_logcdf(x[:, 0] / np.sqrt(scale[0, 0]), dof)
    with np.errstate(divide="ignore"):
        return np.log(mvt_cdf_batch(x, scale, dof, **(cdf_options or {})))


def mvt_cdf(x, scale, dof=np.inf, tol=None):
    """P(T <= x) componentwise for a central multivariate t (normal if dof=inf).

    ``x`` may be a single point (m,) or a batch (n, m).  An empty ``x``
    returns 1.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0 and x.ndim <= 1:
        return 1.0
    if not dof > 0:
        raise ValueError("dof must be > 0")
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    linalg.cholesky(scale, lower=True)
    if x.ndim <= 1:
        return float(mvt_cdf_batch(x.reshape(1, -1), scale, dof, tol)[0])
    return mvt_cdf_batch(x, scale, dof, tol)


# ---------------------------------------------------------------------------
# truncated multivariate t moments


@dataclass
class OrthantMoments:
    """Moments of a ~ t_m(center_j, scale, dof) restricted to a > 0, per row j.

    ``prob`` is the truncation probability P(a > 0); ``prob_h`` is the same
    probability under dof - 2 with the scale inflated by dof / (dof - 2)
    (it equals ``prob`` in the normal case).
    """

    prob: np.ndarray
    log_prob: np.ndarray
    prob_h: np.ndarray | None
    log_prob_h: np.ndarray | None
    mean: np.ndarray
    second: np.ndarray | None


def _boundary_terms(center, scale, dof, need_cond_mean):
    """Per-coordinate boundary integrals g_l and conditional truncated means.

    g_l = c(dof) / sqrt(S_ll) * (1 + b_l^2 / (dof S_ll))^(-(dof-1)/2)
          * P(a_{-l} > 0 | a_l = 0),
    where the conditional law is t_{dof-1} and b = -center.
    """
    n, m = center.shape
    b = -center
    log_g = np.empty((n, m))
    cond = [None] * m
    if np.isinf(dof):
        log_c = -0.5 * np.log(2 * np.pi)
        dof_c = np.inf
    else:
        log_c = (special.gammaln((dof - 1) / 2) - special.gammaln(dof / 2)
                 + 0.5 * np.log(dof / np.pi) - LOG2)
        dof_c = dof - 1.0
    for l in range(m):
        s_ll = scale[l, l]
        bl = b[:, l]
        if np.isinf(dof):
            log_g[:, l] = log_c - 0.5 * np.log(s_ll) - 0.5 * bl * bl / s_ll
            cfac = np.ones(n)
        else:
            log_g[:, l] = (log_c - 0.5 * np.log(s_ll)
                           - 0.5 * (dof - 1) * np.log1p(bl * bl / (dof * s_ll)))
            cfac = (dof + bl * bl / s_ll) / (dof - 1.0)
        if m > 1:
            rest = np.arange(m) != l
            s_rl = scale[rest, l]
            s_cond = scale[np.ix_(rest, rest)] - np.outer(s_rl, s_rl) / s_ll
            s_cond = 0.5 * (s_cond + s_cond.T)
            mc = center[:, rest] + bl[:, None] * (s_rl / s_ll)[None, :]
            root = np.sqrt(cfac)[:, None]
            sub = orthant_moments(mc / root, s_cond, dof_c, second=False,
                                  with_h=False, mean=need_cond_mean)
            with np.errstate(divide="ignore"):
                log_g[:, l] += sub.log_prob
            if need_cond_mean:
                cond[l] = sub.mean * root
    return log_g, cond


def orthant_moments(center, scale, dof=np.inf, second=True, with_h=True,
                    mean=True, min_prob=None):
    """Batched moments of the positively truncated t_m(center_j, scale, dof).

    Closed-form recursion: the mean needs (m-1)-dimensional orthant
    probabilities, the second moment (m-2)-dimensional ones.  Requires
    dof > 1 for the mean and dof > 2 for the second moment.

    If ``min_prob`` is given, rows whose truncation probability falls below
    it raise :class:`DegenerateTruncationError`.
    """
    center = np.atleast_2d(np.asarray(center, dtype=float))
    n, m = center.shape
    scale = np.asarray(scale, dtype=float).reshape(m, m)
    if m == 0:
        return OrthantMoments(np.ones(n), np.zeros(n), np.ones(n), np.zeros(n),
                              np.zeros((n, 0)), np.zeros((n, 0, 0)))
    if mean and not dof > 1:
        raise ValueError("truncated t mean requires dof > 1")
    need_h = with_h or second
    if second and not dof > 2:
        raise ValueError("truncated t second moment requires dof > 2")

    log_prob = _log_mvt_cdf_batch(center, scale, dof)
    prob = np.exp(log_prob)
    if min_prob is not None and np.any(prob < min_prob):
        raise DegenerateTruncationError(
            f"truncation probability {prob.min():.3e} below {min_prob:.1e}")

    if need_h:
        if np.isinf(dof):
            log_prob_h, kappa = log_prob, 1.0
        else:
            kappa = dof / (dof - 2.0)
            log_prob_h = _log_mvt_cdf_batch(center / np.sqrt(kappa), scale, dof - 2.0)
        prob_h = np.exp(log_prob_h)
    else:
        log_prob_h = prob_h = None

    if not mean:
        return OrthantMoments(prob, log_prob, prob_h, log_prob_h, None, None)

    log_g, cond = _boundary_terms(center, scale, dof, need_cond_mean=second)
    with np.errstate(invalid="ignore", over="ignore"):
        g_ratio = np.exp(log_g - log_prob[:, None])
    mean_y = g_ratio @ scale
    mean_a = center + mean_y

    sec = None
    if second:
        b = -center
        Mp = np.empty((n, m, m))
        for l in range(m):
            col = np.empty((n, m))
            col[:, l] = b[:, l]
            if m > 1:
                rest = np.arange(m) != l
                col[:, rest] = cond[l] - center[:, rest]
            Mp[:, :, l] = col * g_ratio[:, l:l + 1]
        h_ratio = np.exp(log_prob_h - log_prob)
        inner = Mp + (kappa * h_ratio)[:, None, None] * np.eye(m)[None]
        eyy = inner @ scale
        eyy = 0.5 * (eyy + np.swapaxes(eyy, 1, 2))
        sec = (eyy + center[:, :, None] * mean_y[:, None, :]
               + mean_y[:, :, None] * center[:, None, :]
               + center[:, :, None] * center[:, None, :])
    return OrthantMoments(prob, log_prob, prob_h, log_prob_h, mean_a, sec)


def trunc_t_moments(spec: TruncTSpec):
    """E[a] and E[a a^T] for a ~ t_m(center, scale, dof) truncated to a > 0.

    Raises :class:`DegenerateTruncationError` when the truncation probability
    is below 1e-12.  ``dof = inf`` gives the truncated normal.
    """
    res = orthant_moments(spec.center[None, :], spec.scale, spec.dof,
                          second=True, min_prob=_MIN_TRUNC_PROB)
    return res.mean[0], res.second[0]


# ---------------------------------------------------------------------------
# densities


@dataclass
class HiddenTruncation:
    """Quantities shared by the density and the E-step for one component.

    omega = sigma + delta delta^T,  lam = I - delta^T omega^-1 delta,
    q_j = delta^T omega^-1 (y_j - mu),  d_j = (y_j - mu)^T omega^-1 (y_j - mu).
    """

    resid: np.ndarray
    maha: np.ndarray
    q: np.ndarray
    lam: np.ndarray
    logdet_omega: float


def hidden_truncation(Y, mu, sigma, delta):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    delta = np.asarray(delta, dtype=float).reshape(mu.shape[0], -1)
    if Y.shape[1] != mu.shape[0]:
        raise ValueError(f"expected {mu.shape[0]} columns, got {Y.shape[1]}")
    m = delta.shape[1]
    omega = sigma + delta @ delta.T
    L = linalg.cholesky(omega, lower=True)
    resid = Y - mu
    Z = linalg.solve_triangular(L, resid.T, lower=True)
    A = linalg.solve_triangular(L, delta, lower=True)
    maha = np.sum(Z * Z, axis=0)
    q = (A.T @ Z).T
    # (I + delta^T sigma^-1 delta)^-1 stays SPD where I - A^T A may not
    Ls = linalg.cholesky(sigma, lower=True)
    As = linalg.solve_triangular(Ls, delta, lower=True)
    lam = linalg.inv(np.eye(m) + As.T @ As) if m else np.zeros((0, 0))
    lam = 0.5 * (lam + lam.T)
    return HiddenTruncation(resid, maha, q, lam,
                            2.0 * float(np.sum(np.log(np.diag(L)))))


def _elliptical_logpdf(maha, logdet, p, nu):
    if np.isinf(nu):
        return -0.5 * (p * np.log(2 * np.pi) + logdet + maha)
    return (special.gammaln((nu + p) / 2) - special.gammaln(nu / 2)
            - 0.5 * p * np.log(nu * np.pi) - 0.5 * logdet
            - 0.5 * (nu + p) * np.log1p(maha / nu))


def skew_logpdf(Y, mu, sigma, delta, nu=np.inf, ht=None, cdf_options=None):
    """Log density of CFUST_{p,r}(mu, sigma, delta, nu) at the rows of Y.

    2^r t_p(y; mu, omega, nu) T_r(q sqrt((nu+p)/(nu+d)); 0, lam, nu+p);
    with nu = inf this is the CFUSN density.  ``cdf_options`` (tol,
    max_points, rel_tol) is forwarded to the QMC orthant code used for r > 3.
    """
    if ht is None:
        ht = hidden_truncation(Y, mu, sigma, delta)
    p = ht.resid.shape[1]
    m = ht.q.shape[1]
    base = _elliptical_logpdf(ht.maha, ht.logdet_omega, p, nu)
    if m == 0:
        return base
    if np.isinf(nu):
        arg = ht.q
    else:
        arg = ht.q * np.sqrt((nu + p) / (nu + ht.maha))[:, None]
    return m * LOG2 + base + _log_mvt_cdf_batch(arg, ht.lam, nu + p, cdf_options)


def cfusn_logpdf(y, params: CfusnParams):
    y = np.asarray(y, dtype=float)
    out = skew_logpdf(np.atleast_2d(y), params.mu, params.sigma, params.delta)
    return float(out[0]) if y.ndim <= 1 else out


def cfusn_density(y, params: CfusnParams):
    """CFUSN density at a point (p,) or at each row of (n, p)."""
    return np.exp(cfusn_logpdf(y, params))


def cfust_logpdf(y, params: CfustParams):
    y = np.asarray(y, dtype=float)
    c = params.cfusn
    out = skew_logpdf(np.atleast_2d(y), c.mu, c.sigma, c.delta, params.nu)
    return float(out[0]) if y.ndim <= 1 else out


def cfust_density(y, params: CfustParams):
    """CFUST density at a point (p,) or at each row of (n, p)."""
    return np.exp(cfust_logpdf(y, params))


# ---------------------------------------------------------------------------
# samplers


def _draw_cfusn(rng, params: CfusnParams, n):
    U = np.abs(rng.standard_normal((n, params.r)))
    L = linalg.cholesky(params.sigma, lower=True)
    V = rng.standard_normal((n, params.p)) @ L.T
    return U @ params.delta.T + V


def sample_cfusn(params: CfusnParams, n, seed):
    """n draws of mu + delta |U| + V."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return params.mu + _draw_cfusn(rng, params, n)


def sample_cfust(params: CfustParams, n, seed):
    """n draws of mu + (delta |U| + V) / sqrt(w), w ~ gamma(nu/2, rate nu/2)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    c = params.cfusn
    core = _draw_cfusn(rng, c, n)
    w = rng.gamma(params.nu / 2.0, 2.0 / params.nu, size=n)
    return c.mu + core / np.sqrt(w)[:, None]
