"""Skew factor-analyzer mixtures: specification, parameters and marginal laws.

All three formulations share one marginal form.  Each component's
observations follow CFUSN_{p,m}(mu, B B^T + D, delta_star) (or CFUST, with
nu), where delta_star stacks a factor-side block ``B @ delta_f`` next to an
error-side block ``delta_e``:

=========  ===========  ============
form       delta_f      delta_e
=========  ===========  ============
SE         (q, 0)       delta0 (p, r)
SF         delta0 (q, r)  (p, 0)
SFE        delta0 (q, r)  delta1 (p, s)
=========  ===========  ============
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .skewdist import hidden_truncation, skew_logpdf

__all__ = [
    "Formulation",
    "Family",
    "ModelSpec",
    "ComponentParams",
    "MixtureParams",
    "MarginalLaw",
    "Dataset",
    "marginal_law",
    "skew_blocks",
    "model_moments",
    "normalize_factors",
    "standardize_factors",
    "normalized_factor_law",
    "param_count",
    "component_logpdf",
    "mixture_logpdf",
    "loglik",
    "canonicalize",
    "params_to_dict",
    "params_from_dict",
    "params_to_json",
    "params_from_json",
    "spec_to_dict",
    "spec_from_dict",
]

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
PI_SUM_TOL = 1e-12
_PI_RENORM_LIMIT = 1e-6


class Formulation(str, Enum):
    SE = "SE"
    SF = "SF"
    SFE = "SFE"


class Family(str, Enum):
    CFUSN = "CFUSN"
    CFUST = "CFUST"


def _coerce_enum(enum_cls, value):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(str(value).upper())
    except ValueError:
        valid = ", ".join(e.value.lower() for e in enum_cls)
        raise ValueError(
            f"invalid {enum_cls.__name__.lower()} {value!r}; valid values: {valid}"
        ) from None


@dataclass(frozen=True)
class ModelSpec:
    """Formulation, family and dimensions of a skew factor-analyzer mixture.

    For SE, ``r`` is the error-side skewing dimension; ``s`` is used by SFE
    only and must be 0 otherwise.  ``r = 0`` is allowed for SE and SF and
    gives the symmetric (t-)MFA.
    """

    formulation: Formulation
    family: Family
    g: int
    p: int
    q: int
    r: int
    s: int = 0

    def __post_init__(self):
        object.__setattr__(self, "formulation", _coerce_enum(Formulation, self.formulation))
        object.__setattr__(self, "family", _coerce_enum(Family, self.family))
        for name in ("g", "p", "q", "r", "s"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ValueError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.g < 1:
            raise ValueError("g must be >= 1")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not 1 <= self.q < self.p:
            raise ValueError(f"q must satisfy 1 <= q < p (q={self.q}, p={self.p})")
        if self.r < 0 or self.s < 0:
            raise ValueError("r and s must be >= 0")
        if self.formulation is Formulation.SFE:
            if self.r < 1 or self.s < 1:
                raise ValueError("SFE requires r >= 1 and s >= 1")
        elif self.s != 0:
            raise ValueError(f"{self.formulation.value} requires s = 0")

    @property
    def tfamily(self) -> bool:
        return self.family is Family.CFUST

    @property
    def r_factor(self) -> int:
        """Columns of the factor-side skewness block."""
        return 0 if self.formulation is Formulation.SE else self.r

    @property
    def s_error(self) -> int:
        """Columns of the error-side skewness block."""
        if self.formulation is Formulation.SE:
            return self.r
        return self.s

    @property
    def m(self) -> int:
        """Dimension of the skewing variable of the marginal law."""
        return self.r_factor + self.s_error

    def delta0_shape(self):
        return (self.p, self.r) if self.formulation is Formulation.SE else (self.q, self.r)


def _arr(x, shape, name):
    a = np.asarray(x, dtype=float)
    if a.size == 0 and int(np.prod(shape)) == 0:
        return np.zeros(shape)
    if a.shape != tuple(shape):
        try:
            a = a.reshape(shape)
        except ValueError:
            raise ValueError(f"{name} must have shape {shape}, got {a.shape}") from None
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


@dataclass(frozen=True)
class ComponentParams:
    """Parameters of one mixture component.

    ``normalized`` marks an SF/CFUSN component whose factors have been
    reparametrised to zero mean and identity covariance (see
    :func:`normalize_factors`); ``mu`` and ``B`` are then the mean and
    loadings of that parametrisation.
    """

    pi: float
    mu: np.ndarray
    B: np.ndarray
    d: np.ndarray
    delta0: np.ndarray
    delta1: np.ndarray | None = None
    nu: float | None = None
    normalized: bool = False

    def validate(self, spec: ModelSpec) -> "ComponentParams":
        p, q = spec.p, spec.q
        mu = _arr(self.mu, (p,), "mu")
        B = _arr(self.B, (p, q), "B")
        d = _arr(self.d, (p,), "d")
        if np.any(d <= 0):
            raise ValueError("all entries of d must be > 0")
        delta0 = _arr(self.delta0, spec.delta0_shape(), "delta0")
        if spec.formulation is Formulation.SFE:
            if self.delta1 is None:
                raise ValueError("SFE requires delta1")
            delta1 = _arr(self.delta1, (p, spec.s), "delta1")
        else:
            if self.delta1 is not None and np.asarray(self.delta1).size:
                raise ValueError(f"delta1 is only used by SFE, not {spec.formulation.value}")
            delta1 = None
        if spec.tfamily:
            if self.nu is None or not (0 < float(self.nu) < np.inf):
                raise ValueError("CFUST components need a finite nu > 0")
            nu = float(self.nu)
        else:
            if self.nu is not None:
                raise ValueError("CFUSN components carry no nu")
            nu = None
        pi = float(self.pi)
        if not 0 < pi <= 1:
            raise ValueError(f"pi must lie in (0, 1], got {pi}")
        if self.normalized and (spec.formulation is not Formulation.SF or spec.tfamily):
            raise ValueError("normalized factors are defined for SF / CFUSN only")
        return ComponentParams(pi, mu, B, d, delta0, delta1, nu, bool(self.normalized))

    @property
    def D(self):
        return np.diag(self.d)


@dataclass(frozen=True)
class MixtureParams:
    spec: ModelSpec
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.spec.g:
            raise ValueError(f"expected {self.spec.g} components, got {len(comps)}")
        comps = tuple(c.validate(self.spec) for c in comps)
        total = sum(c.pi for c in comps)
        if abs(total - 1.0) > _PI_RENORM_LIMIT:
            raise ValueError(f"mixing proportions sum to {total}, not 1")
        if abs(total - 1.0) > PI_SUM_TOL:
            comps = tuple(replace(c, pi=c.pi / total) for c in comps)
        object.__setattr__(self, "components", comps)

    @property
    def pis(self):
        return np.array([c.pi for c in self.components])

    def permuted(self, order):
        return MixtureParams(self.spec, tuple(self.components[i] for i in order))


@dataclass(frozen=True)
class MarginalLaw:
    mu: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray
    nu: float | None = None


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    columns: tuple = field(default=())

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(v)):
            raise ValueError("data contain non-finite values")
        cols = tuple(self.columns) or tuple(f"y{j + 1}" for j in range(v.shape[1]))
        if len(cols) != v.shape[1]:
            raise ValueError("column names do not match the data width")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "columns", cols)


def as_array(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.values
    return np.atleast_2d(np.asarray(data, dtype=float))


# ---------------------------------------------------------------------------
# marginal laws and moments


def skew_blocks(spec: ModelSpec, comp: ComponentParams):
    """Return (delta_f, delta_e): factor-side (q, r_f) and error-side (p, s_e) skewness."""
    if spec.formulation is Formulation.SE:
        return np.zeros((spec.q, 0)), np.asarray(comp.delta0)
    if spec.formulation is Formulation.SF:
        return np.asarray(comp.delta0), np.zeros((spec.p, 0))
    return np.asarray(comp.delta0), np.asarray(comp.delta1)


def marginal_law(spec: ModelSpec, comp: ComponentParams) -> MarginalLaw:
    """Closed-form CFUSN/CFUST law of the observations in one component."""
    comp = comp.validate(spec)
    if comp.normalized:
        comp = standardize_factors(spec, comp)
    df, de = skew_blocks(spec, comp)
    sigma = comp.B @ comp.B.T + np.diag(comp.d)
    delta = np.hstack([comp.B @ df, de])
    return MarginalLaw(comp.mu.copy(), sigma, delta, comp.nu)


def _cfusn_moments(loc, scale, delta):
    m = delta.shape[1]
    return (loc + SQRT_2_OVER_PI * delta @ np.ones(m),
            scale + (1.0 - 2.0 / np.pi) * delta @ delta.T)


def model_moments(spec: ModelSpec, comp: ComponentParams) -> dict:
    """Means and covariances of Y, the factors X and the errors e (CFUSN only)."""
    if spec.tfamily:
        raise NotImplementedError("model_moments supports the CFUSN family only")
    comp = comp.validate(spec)
    p, q = spec.p, spec.q
    if comp.normalized:
        mean_X, cov_X = np.zeros(q), np.eye(q)
        mean_e, cov_e = np.zeros(p), np.diag(comp.d)
    else:
        df, de = skew_blocks(spec, comp)
        mean_X, cov_X = _cfusn_moments(np.zeros(q), np.eye(q), df)
        mean_e, cov_e = _cfusn_moments(np.zeros(p), np.diag(comp.d), de)
    B = comp.B
    return {
        "mean_Y": comp.mu + B @ mean_X + mean_e,
        "cov_Y": B @ cov_X @ B.T + cov_e,
        "mean_X": mean_X,
        "cov_X": cov_X,
        "mean_e": mean_e,
        "cov_e": cov_e,
    }


def _factor_cov_root(delta):
    A = np.eye(delta.shape[0]) + (1.0 - 2.0 / np.pi) * delta @ delta.T
    w, V = linalg.eigh(A)
    return A, (V * np.sqrt(w)) @ V.T, (V / np.sqrt(w)) @ V.T


def _check_sf_cfusn(spec):
    if spec.formulation is not Formulation.SF or spec.tfamily:
        raise ValueError("factor normalisation is defined for SF / CFUSN only")


def normalize_factors(spec: ModelSpec, comp: ComponentParams) -> ComponentParams:
    """Reparametrise an SF/CFUSN component so the factors have mean 0 and cov I.

    With A = I + (1 - 2/pi) delta delta^T the new parameters are
    mu + sqrt(2/pi) B delta 1 and B A^{1/2}; the factor law becomes
    :func:`normalized_factor_law`.  The observation law is unchanged and now
    E(Y) = mu, cov(Y) = B B^T + D.
    """
    _check_sf_cfusn(spec)
    comp = comp.validate(spec)
    if comp.normalized:
        return comp
    _, root, _ = _factor_cov_root(comp.delta0)
    mu = comp.mu + SQRT_2_OVER_PI * comp.B @ comp.delta0 @ np.ones(spec.r)
    return replace(comp, mu=mu, B=comp.B @ root, normalized=True)


def standardize_factors(spec: ModelSpec, comp: ComponentParams) -> ComponentParams:
    """Inverse of :func:`normalize_factors`."""
    _check_sf_cfusn(spec)
    if not comp.normalized:
        return comp
    _, _, inv_root = _factor_cov_root(comp.delta0)
    B = np.asarray(comp.B) @ inv_root
    mu = np.asarray(comp.mu) - SQRT_2_OVER_PI * B @ comp.delta0 @ np.ones(spec.r)
    return replace(comp, mu=mu, B=B, normalized=False)


def normalized_factor_law(delta):
    """(location, scale, skewness) of the normalised factor distribution."""
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    A, _, inv_root = _factor_cov_root(delta)
    k = delta.shape[1]
    return (-SQRT_2_OVER_PI * inv_root @ delta @ np.ones(k),
            linalg.inv(A), inv_root @ delta)


def param_count(spec: ModelSpec) -> int:
    """Free parameters, with q(q-1)/2 rotational constraints removed from B."""
    p, q = spec.p, spec.q
    if spec.formulation is Formulation.SE:
        skew = p * spec.r
    elif spec.formulation is Formulation.SF:
        skew = q * spec.r
    else:
        skew = q * spec.r + p * spec.s
    per = p + (p * q - q * (q - 1) // 2) + p + skew + (1 if spec.tfamily else 0)
    return spec.g * per + spec.g - 1


# ---------------------------------------------------------------------------
# likelihood


def _check_width(Y, spec):
    if Y.shape[1] != spec.p:
        raise ValueError(f"data have {Y.shape[1]} columns, model expects p={spec.p}")


def component_logpdf(data, params: MixtureParams) -> np.ndarray:
    """(n, g) matrix of log(pi_i) + log f_i(y_j)."""
    Y = as_array(data)
    spec = params.spec
    _check_width(Y, spec)
    out = np.empty((Y.shape[0], spec.g))
    for i, comp in enumerate(params.components):
        law = marginal_law(spec, comp)
        nu = law.nu if law.nu is not None else np.inf
        ht = hidden_truncation(Y, law.mu, law.sigma, law.delta)
        out[:, i] = np.log(comp.pi) + skew_logpdf(Y, law.mu, law.sigma, law.delta, nu, ht)
    return out


def mixture_logpdf(data, params: MixtureParams) -> np.ndarray:
    """Per-row log mixture density."""
    return logsumexp(component_logpdf(data, params), axis=1)


def loglik(data, spec: ModelSpec, params: MixtureParams) -> float:
    """Observed-data log-likelihood sum_j log sum_i pi_i f_i(y_j)."""
    if params.spec != spec:
        raise ValueError("params were built for a different ModelSpec")
    return float(np.sum(mixture_logpdf(data, params)))


def canonicalize(params: MixtureParams) -> MixtureParams:
    """Rotate each B so that B^T D^-1 B is diagonal with descending entries.

    Factor-side skewness rotates with it (delta0 -> Q^T delta0); the
    observation law is unchanged.  Column signs are fixed so the largest
    absolute loading in each column is positive.
    """
    spec = params.spec
    comps = []
    for c in params.components:
        if c.normalized:
            raise ValueError("standardize factors before canonicalizing")
        M = c.B.T @ (c.B / c.d[:, None])
        w, Q = linalg.eigh(M)
        Q = Q[:, ::-1]
        B = c.B @ Q
        signs = np.sign(B[np.argmax(np.abs(B), axis=0), np.arange(spec.q)])
        signs[signs == 0] = 1.0
        Q = Q * signs
        B = c.B @ Q
        delta0 = c.delta0 if spec.formulation is Formulation.SE else Q.T @ c.delta0
        comps.append(replace(c, B=B, delta0=delta0))
    return MixtureParams(spec, tuple(comps))


# ---------------------------------------------------------------------------
# serialization


def _enc(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _dec(obj, name):
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.array(obj["data"], dtype=float)
        return data.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed array field {name!r}: {exc}") from None


def spec_to_dict(spec: ModelSpec) -> dict:
    return {"formulation": spec.formulation.value, "family": spec.family.value,
            "g": spec.g, "p": spec.p, "q": spec.q, "r": spec.r, "s": spec.s}


def spec_from_dict(obj: dict) -> ModelSpec:
    try:
        return ModelSpec(obj["formulation"], obj["family"], obj["g"], obj["p"],
                         obj["q"], obj["r"], obj.get("s", 0))
    except KeyError as exc:
        raise ValueError(f"spec is missing field {exc}") from None


def params_to_dict(params: MixtureParams) -> dict:
    comps = []
    for c in params.components:
        entry = {"pi": float(c.pi), "mu": _enc(c.mu), "B": _enc(c.B), "d": _enc(c.d),
                 "delta0": _enc(c.delta0)}
        if c.delta1 is not None:
            entry["delta1"] = _enc(c.delta1)
        if c.nu is not None:
            entry["nu"] = float(c.nu)
        if c.normalized:
            entry["normalized"] = True
        comps.append(entry)
    return {"spec": spec_to_dict(params.spec), "components": comps}


def params_from_dict(obj: dict) -> MixtureParams:
    spec = spec_from_dict(obj["spec"])
    comps = []
    for k, e in enumerate(obj["components"]):
        comps.append(ComponentParams(
            pi=float(e["pi"]),
            mu=_dec(e["mu"], f"components[{k}].mu"),
            B=_dec(e["B"], f"components[{k}].B"),
            d=_dec(e["d"], f"components[{k}].d"),
            delta0=_dec(e["delta0"], f"components[{k}].delta0"),
            delta1=_dec(e["delta1"], f"components[{k}].delta1") if "delta1" in e else None,
            nu=float(e["nu"]) if e.get("nu") is not None else None,
            normalized=bool(e.get("normalized", False)),
        ))
    return MixtureParams(spec, tuple(comps))


def params_to_json(params: MixtureParams, **kwargs) -> str:
    return json.dumps(params_to_dict(params), **kwargs)


def params_from_json(text: str) -> MixtureParams:
    return params_from_dict(json.loads(text))
