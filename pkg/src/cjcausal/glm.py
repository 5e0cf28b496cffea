"""Negative-binomial (log link) and Gaussian regression by maximum likelihood.

Factors enter with reference-level coding; centered effects, Wald intervals,
AIC ranking and forward selection are built on top of the fitted results.
The estimators at the bottom expose the same solvers through the
scikit-learn fit/predict API.
"""

from __future__ import annotations

import json
import logging
import re
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, sparse, special, stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .dataset import FACTOR, Dataset

logger = logging.getLogger(__name__)

NEGBIN = "negbin"
GAUSSIAN = "gaussian"
FAMILIES = (NEGBIN, GAUSSIAN)

PHI_MIN = 1e-4
PHI_MAX = 1e6
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200
_SIGMA_FLOOR = 1e-10


class ModelError(ValueError):
    pass


class SingularDesignError(ModelError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is singular; aliased column(s): {self.columns}")


class NotConvergedError(ModelError):
    pass


# --------------------------------------------------------------------------
# model specification


@dataclass(frozen=True)
class Term:
    """``factor`` adds one intercept per level; ``slope`` a single coefficient."""

    kind: str
    column: str
    transform: str = "identity"

    def __post_init__(self):
        if self.kind not in ("factor", "slope"):
            raise ModelError(f"unknown term kind {self.kind!r}")
        if self.transform not in ("identity", "log"):
            raise ModelError(f"unknown transform {self.transform!r}")
        if self.kind == "factor" and self.transform != "identity":
            raise ModelError("factor terms take no transform")

    @property
    def label(self) -> str:
        if self.kind == "factor":
            return self.column
        return f"log({self.column})" if self.transform == "log" else f"lin({self.column})"


def factor(column: str) -> Term:
    return Term("factor", column)


def slope(column: str, transform: str = "identity") -> Term:
    return Term("slope", column, transform)


@dataclass(frozen=True)
class ModelSpec:
    outcome: str
    family: str = NEGBIN
    terms: tuple[Term, ...] = ()
    outcome_transform: str = "identity"
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}")
        if self.outcome_transform not in ("identity", "log"):
            raise ModelError(f"unknown outcome transform {self.outcome_transform!r}")
        if self.family == NEGBIN and self.outcome_transform != "identity":
            raise ModelError("negative-binomial outcomes are modelled untransformed")
        used = [t.column for t in self.terms]
        if self.outcome in used:
            raise ModelError(f"outcome {self.outcome!r} also appears as a predictor")
        if len(set(used)) != len(used):
            raise ModelError(f"a column is referenced twice in {used}")

    def with_terms(self, *terms: Term) -> "ModelSpec":
        return replace(self, terms=self.terms + tuple(terms))

    @property
    def formula(self) -> str:
        lhs = f"log({self.outcome})" if self.outcome_transform == "log" else self.outcome
        rhs = [t.label for t in self.terms]
        if not self.intercept:
            rhs = ["0"] + rhs
        return f"{lhs} ~ {' + '.join(rhs) if rhs else '1'} [family={self.family}]"

    def __str__(self):
        return self.formula


_FORMULA_RE = re.compile(r"^\s*(?P<lhs>[^~]+?)\s*~\s*(?P<rhs>[^\[]*?)\s*(\[\s*family\s*=\s*(?P<fam>\w+)\s*\])?\s*$")
_CALL_RE = re.compile(r"^(log|lin)\(\s*([A-Za-z_][A-Za-z0-9_]*)\s*\)$")
_BARE_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def parse_formula(text: str) -> ModelSpec:
    """Parse ``outcome ~ term + term [family=negbin|gaussian]``.

    Terms: a bare name is a factor, ``log(x)`` a log-slope, ``lin(x)`` a
    linear slope, ``0`` drops the global intercept and ``1`` is a no-op.
    The outcome may be written ``log(x)`` (gaussian only).
    """
    m = _FORMULA_RE.match(text)
    if not m:
        raise ModelError(f"cannot parse formula {text!r}")
    family = m.group("fam") or NEGBIN
    lhs = m.group("lhs").strip()
    call = _CALL_RE.match(lhs)
    if call and call.group(1) == "log":
        outcome, transform = call.group(2), "log"
    elif _BARE_RE.match(lhs):
        outcome, transform = lhs, "identity"
    else:
        raise ModelError(f"bad outcome {lhs!r}")
    terms, intercept = [], True
    rhs = m.group("rhs").strip()
    for tok in (t.strip() for t in rhs.split("+")) if rhs else []:
        if tok == "0":
            intercept = False
        elif tok == "1":
            continue
        elif _CALL_RE.match(tok):
            fn, col = _CALL_RE.match(tok).groups()
            terms.append(slope(col, "log" if fn == "log" else "identity"))
        elif _BARE_RE.match(tok):
            terms.append(factor(tok))
        else:
            raise ModelError(f"bad term {tok!r}")
    return ModelSpec(outcome, family, tuple(terms), transform, intercept)


# --------------------------------------------------------------------------
# design encoding


@dataclass(frozen=True)
class Design:
    X: sparse.csr_matrix
    y: np.ndarray
    columns: tuple[str, ...]
    intercept: int | None
    factor_levels: dict          # factor -> all levels, sorted
    factor_columns: dict         # factor -> {level: column index or None (reference)}
    slope_columns: dict          # column -> index
    slope_means: dict            # column -> mean of the transformed predictor
    outcome_levels: tuple | None = None

    @property
    def n_params(self) -> int:
        return len(self.columns)


def _transformed(dataset, column, transform):
    values = np.asarray(dataset.column(column), dtype=float)
    if transform == "log":
        if np.any(values <= 0):
            raise ModelError(f"log transform needs a strictly positive column; {column!r} is not")
        return np.log(values)
    return values


def encode_design(dataset: Dataset, spec: ModelSpec) -> Design:
    """Sparse design matrix with reference coding (alphabetically first level dropped)."""
    for col in [spec.outcome] + [t.column for t in spec.terms]:
        if col not in dataset.columns:
            raise KeyError(f"missing column {col!r}")
    n = len(dataset)
    rows, cols, vals = [], [], []
    names: list[str] = []
    intercept = None
    if spec.intercept:
        intercept = 0
        names.append("(Intercept)")
        rows.append(np.arange(n))
        cols.append(np.zeros(n, dtype=int))
        vals.append(np.ones(n))
    factor_levels, factor_columns, slope_columns, slope_means = {}, {}, {}, {}
    full_coding_used = spec.intercept
    for term in spec.terms:
        if term.kind == "factor":
            if dataset.kind(term.column) != FACTOR:
                raise ModelError(f"factor term on non-factor column {term.column!r}")
            raw = dataset.column(term.column)
            levels, codes = np.unique(raw, return_inverse=True)
            levels = tuple(str(v) for v in levels)
            dropped = 1 if full_coding_used else 0
            full_coding_used = True
            mapping = {}
            base = len(names)
            for i, lev in enumerate(levels):
                if i < dropped:
                    mapping[lev] = None
                else:
                    mapping[lev] = base + i - dropped
                    names.append(f"{term.column}[{lev}]")
            keep = codes >= dropped
            rows.append(np.nonzero(keep)[0])
            cols.append(base + codes[keep] - dropped)
            vals.append(np.ones(int(keep.sum())))
            factor_levels[term.column] = levels
            factor_columns[term.column] = mapping
        else:
            x = _transformed(dataset, term.column, term.transform)
            if np.ptp(x) == 0:
                raise ModelError(f"slope column {term.label} has zero variance")
            slope_columns[term.column] = len(names)
            slope_means[term.column] = float(x.mean())
            names.append(term.label)
            rows.append(np.arange(n))
            cols.append(np.full(n, len(names) - 1))
            vals.append(x)
    if rows:
        X = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, len(names)))
    else:
        X = sparse.csr_matrix((n, 0))

    outcome_levels = None
    kind = dataset.kind(spec.outcome)
    if kind == FACTOR:
        if spec.family != NEGBIN:
            raise ModelError("factor outcomes are only supported as integer codes in the count family")
        levels, codes = np.unique(dataset.column(spec.outcome), return_inverse=True)
        outcome_levels = tuple(str(v) for v in levels)
        y = codes.astype(float) + 1.0
    else:
        y = _transformed(dataset, spec.outcome, spec.outcome_transform)
        if spec.family == NEGBIN:
            if np.any(y < 0):
                raise ModelError(f"negative outcome values in count column {spec.outcome!r}")
            if not np.all(y == np.round(y)):
                raise ModelError(f"count outcome {spec.outcome!r} must hold integers")
    return Design(X, y, tuple(names), intercept, factor_levels, factor_columns,
                  slope_columns, slope_means, outcome_levels)


# --------------------------------------------------------------------------
# likelihoods


def negbin_loglik(X, y, beta, phi) -> float:
    """Exact NB2 log-likelihood with mean exp(X beta) and variance mu + mu^2/phi."""
    eta = X @ beta
    return _nb_ll(y, np.exp(eta), eta, phi)


def _nb_ll(y, mu, eta, phi):
    if not np.all(np.isfinite(mu)):
        return -np.inf
    # log Gamma(y+phi) - log Gamma(phi) - log y! == -log(y+phi) - log B(phi, y+1)
    comb = -np.log(y + phi) - special.betaln(phi, y + 1.0)
    ll = comb - phi * np.log1p(mu / phi) + y * (eta - np.log(phi + mu))
    return float(np.sum(ll))


def negbin_score(X, y, beta, phi) -> np.ndarray:
    """Gradient of the log-likelihood w.r.t. (beta, phi)."""
    mu = np.exp(X @ beta)
    g_beta = X.T @ ((y - mu) * phi / (phi + mu))
    g_phi = np.sum(special.digamma(y + phi) - special.digamma(phi) - np.log1p(mu / phi)
                   + 1.0 - (y + phi) / (phi + mu))
    return np.append(np.asarray(g_beta).ravel(), g_phi)


def negbin_hessian(X, y, beta, phi) -> np.ndarray:
    mu = np.exp(X @ beta)
    w = mu * phi * (phi + y) / (phi + mu) ** 2
    h_bb = -_xtwx(X, w)
    h_bp = np.asarray(X.T @ ((y - mu) * mu / (phi + mu) ** 2)).ravel()
    h_pp = np.sum(special.polygamma(1, y + phi) - special.polygamma(1, phi) + 1.0 / phi
                  - 1.0 / (phi + mu) - (mu - y) / (phi + mu) ** 2)
    k = X.shape[1]
    H = np.empty((k + 1, k + 1))
    H[:k, :k] = h_bb
    H[:k, k] = H[k, :k] = h_bp
    H[k, k] = h_pp
    return H


def gaussian_loglik(X, y, beta, sigma) -> float:
    r = y - X @ beta
    n = len(y)
    return float(-0.5 * n * np.log(2 * np.pi * sigma**2) - r @ r / (2 * sigma**2))


def _xtwx(X, w):
    if sparse.issparse(X):
        return np.asarray((X.T @ X.multiply(w[:, None])).todense())
    return X.T @ (X * w[:, None])


def _cho_solve_or_raise(A, b, names):
    try:
        c = linalg.cho_factor(A, check_finite=False)
        return linalg.cho_solve(c, b, check_finite=False)
    except linalg.LinAlgError:
        raise SingularDesignError(_aliased_columns(A, names)) from None


def _aliased_columns(A, names):
    _, r, piv = linalg.qr(A, pivoting=True)
    d = np.abs(np.diag(r))
    tol = d.max() * max(A.shape) * np.finfo(float).eps * 1e3 if d.size else 0
    rank = int(np.sum(d > tol))
    return [names[i] for i in sorted(piv[rank:])] or list(names)


def _check_rank(X, names):
    if X.shape[1] == 0:
        return
    A = _xtwx(X, np.ones(X.shape[0]))
    scale = np.sqrt(np.clip(np.diag(A), 1e-300, None))
    As = A / np.outer(scale, scale)
    try:
        L = linalg.cholesky(As, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularDesignError(_aliased_columns(As, names)) from None
    if np.min(np.diag(L)) ** 2 < 1e-12:
        raise SingularDesignError(_aliased_columns(As, names))


# --------------------------------------------------------------------------
# solvers


@dataclass
class _Solution:
    beta: np.ndarray
    dispersion: float
    loglik: float
    covariance: np.ndarray
    dispersion_se: float
    iterations: int
    converged: bool
    trace: list
    at_bound: bool = False


def _solve_gaussian(X, y, names):
    _check_rank(X, names)
    A = _xtwx(X, np.ones(len(y)))
    beta = _cho_solve_or_raise(A, np.asarray(X.T @ y).ravel(), names)
    r = y - X @ beta
    sigma = float(np.sqrt(r @ r / len(y)))
    floor = _SIGMA_FLOOR * max(1.0, float(np.std(y)))
    if sigma < floor:
        warnings.warn("residual standard deviation is ~0; sigma floored", RuntimeWarning, stacklevel=3)
        sigma = floor
    ll = gaussian_loglik(X, y, beta, sigma)
    cov = sigma**2 * linalg.inv(A)
    cov = (cov + cov.T) / 2
    return _Solution(beta, sigma, ll, cov, sigma / np.sqrt(2 * len(y)), 1, True, [ll])


def _irls_step(X, y, beta, phi, ll, names):
    """One Fisher-scoring step with step halving; never decreases the likelihood."""
    eta = X @ beta
    mu = np.exp(eta)
    w = mu * phi / (phi + mu)
    grad = np.asarray(X.T @ ((y - mu) * phi / (phi + mu))).ravel()
    step = _cho_solve_or_raise(_xtwx(X, w), grad, names)
    t = 1.0
    for _ in range(40):
        cand = beta + t * step
        eta_c = X @ cand
        ll_c = _nb_ll(y, np.exp(eta_c), eta_c, phi) if np.all(eta_c < 700) else -np.inf
        if ll_c >= ll:
            return cand, ll_c
        t *= 0.5
    return beta, ll


def _phi_update(y, mu, eta, phi, lo, hi):
    """Safeguarded Newton maximisation of the likelihood in log(phi)."""
    t = np.log(phi)
    ll = _nb_ll(y, mu, eta, phi)
    t_lo, t_hi = np.log(lo), np.log(hi)
    for _ in range(60):
        p = np.exp(t)
        g = np.sum(special.digamma(y + p) - special.digamma(p) - np.log1p(mu / p)
                   + 1.0 - (y + p) / (p + mu))
        h = np.sum(special.polygamma(1, y + p) - special.polygamma(1, p) + 1.0 / p
                   - 1.0 / (p + mu) - (mu - y) / (p + mu) ** 2)
        dt = p * g
        d2t = p * p * h + p * g
        step = -dt / d2t if d2t < 0 else np.sign(dt) * 1.0
        step = float(np.clip(step, -2.0, 2.0))
        improved = False
        for _ in range(30):
            t_new = float(np.clip(t + step, t_lo, t_hi))
            if t_new == t:
                break
            p_new = float(np.exp(t_new))
            ll_new = _nb_ll(y, mu, eta, p_new)
            if ll_new >= ll:
                improved = True
                t, phi, ll = t_new, p_new, ll_new
                break
            step *= 0.5
        if not improved or abs(step) < 1e-12:
            break
    # return the exact phi the likelihood was evaluated at; exp(log(phi)) can round
    return phi, ll


def _initial_beta(X, y, names):
    A = _xtwx(X, np.ones(len(y)))
    z = np.log(y + 0.5)
    k = X.shape[1]
    ridge = 1e-8 * np.trace(A) / max(k, 1)
    return _cho_solve_or_raise(A + ridge * np.eye(k), np.asarray(X.T @ z).ravel(), names)


def _solve_negbin(X, y, names, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                  phi_bounds=(PHI_MIN, PHI_MAX)):
    _check_rank(X, names)
    lo, hi = phi_bounds
    beta = _initial_beta(X, y, names)
    eta = X @ beta
    mu = np.exp(eta)
    excess = np.mean((y - mu) ** 2 - mu)
    phi = float(np.clip(np.mean(mu**2) / excess, lo, hi)) if excess > 0 else hi
    ll = _nb_ll(y, mu, eta, phi)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        ll_prev = ll
        # coefficients: IRLS to (near) convergence at fixed phi
        for _ in range(50):
            before = ll
            beta, ll = _irls_step(X, y, beta, phi, ll, names)
            if ll - before <= 1e-13 * abs(before):
                break
        eta = X @ beta
        mu = np.exp(eta)
        phi, ll = _phi_update(y, mu, eta, phi, lo, hi)
        if ll < trace[-1]:
            raise AssertionError("log-likelihood decreased during fitting")
        trace.append(ll)
        if abs(ll - ll_prev) <= tol * max(abs(ll_prev), 1.0):
            converged = True
            break
    at_bound = phi >= hi * (1 - 1e-9) or phi <= lo * (1 + 1e-9)
    if at_bound:
        warnings.warn(f"dispersion estimate at its bound ({phi:g}); data show no overdispersion"
                      if phi >= hi * (1 - 1e-9) else f"dispersion estimate at its lower bound ({phi:g})",
                      RuntimeWarning, stacklevel=3)
    cov, phi_se = _negbin_covariance(X, y, beta, phi, at_bound, names)
    return _Solution(beta, phi, ll, cov, phi_se, it, converged, trace, at_bound)


def _negbin_covariance(X, y, beta, phi, at_bound, names):
    H = negbin_hessian(X, y, beta, phi)
    k = X.shape[1]
    if not at_bound:
        info = -H
        try:
            full = linalg.inv(info)
            if np.all(np.diag(full) > 0):
                cov = full[:k, :k]
                return (cov + cov.T) / 2, float(np.sqrt(full[k, k]))
        except linalg.LinAlgError:
            pass
    try:
        cov = linalg.inv(-H[:k, :k])
    except linalg.LinAlgError:
        raise SingularDesignError(_aliased_columns(-H[:k, :k], names)) from None
    return (cov + cov.T) / 2, float("nan")


# --------------------------------------------------------------------------
# fitted models


@dataclass(frozen=True)
class FitResult:
    spec: ModelSpec
    columns: tuple[str, ...]
    params: np.ndarray
    covariance: np.ndarray
    dispersion: float           # phi (negbin) or sigma (gaussian)
    dispersion_stderr: float
    loglik: float
    n_obs: int
    iterations: int
    converged: bool
    loglik_trace: tuple[float, ...]
    design: Design = field(repr=False, compare=False)
    data_fingerprint: int = 0

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.columns, map(float, self.params)))

    @property
    def n_free(self) -> int:
        return len(self.columns) + 1

    @property
    def aic(self) -> float:
        return 2 * self.n_free - 2 * self.loglik

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def fitted_mean(self) -> np.ndarray:
        eta = self.design.X @ self.params
        return np.exp(eta) if self.spec.family == NEGBIN else eta

    def to_dict(self) -> dict:
        return {
            "formula": self.spec.formula,
            "family": self.spec.family,
            "coefficients": self.coefficients,
            "stderr": dict(zip(self.columns, map(float, self.stderr))),
            "covariance": self.covariance.tolist(),
            "dispersion": self.dispersion,
            "loglik": self.loglik,
            "aic": self.aic,
            "n_obs": self.n_obs,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def fit(dataset: Dataset, spec: ModelSpec, tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER) -> FitResult:
    """Maximum-likelihood fit of `spec` on `dataset`."""
    design = encode_design(dataset, spec)
    if len(dataset) < design.n_params:
        raise ModelError(f"{len(dataset)} rows cannot identify {design.n_params} coefficients")
    if spec.family == GAUSSIAN:
        sol = _solve_gaussian(design.X, design.y, design.columns)
    else:
        sol = _solve_negbin(design.X, design.y, design.columns, tol, max_iter)
    if not sol.converged:
        logger.warning("fit of %s did not converge in %d iterations", spec.formula, sol.iterations)
    return FitResult(spec, design.columns, sol.beta, sol.covariance, sol.dispersion,
                     sol.dispersion_se, sol.loglik, len(dataset), sol.iterations, sol.converged,
                     tuple(sol.trace), design, dataset.fingerprint())


def _z(level):
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return float(stats.norm.ppf(0.5 + level / 2))


def _require_usable(fit_result):
    if not fit_result.converged:
        raise NotConvergedError(f"fit of {fit_result.spec.formula} did not converge")
    if np.any(~np.isfinite(fit_result.covariance)) or np.any(np.diag(fit_result.covariance) <= 0):
        raise ModelError("coefficient covariance is singular")


def wald_intervals(fit_result: FitResult, level: float = 0.5) -> dict[str, tuple[float, float, float]]:
    """``{column: (estimate, lower, upper)}`` using normal quantiles."""
    _require_usable(fit_result)
    z = _z(level)
    se = fit_result.stderr
    return {name: (float(b), float(b - z * s), float(b + z * s))
            for name, b, s in zip(fit_result.columns, fit_result.params, se)}


@dataclass(frozen=True)
class Effect:
    estimate: float
    lower: float
    upper: float
    stderr: float

    def verdict(self) -> str:
        """``better`` when the interval lies below zero (smaller ranks), ``worse`` above."""
        if self.upper < 0:
            return "better"
        if self.lower > 0:
            return "worse"
        return "none"


@dataclass(frozen=True)
class EffectSummary:
    factor: str
    level: float
    effects: dict  # level name -> Effect

    def estimates(self) -> dict[str, float]:
        return {k: e.estimate for k, e in self.effects.items()}

    def to_dict(self):
        return {"factor": self.factor, "level": self.level,
                "effects": {k: {"estimate": e.estimate, "lower": e.lower, "upper": e.upper,
                                "stderr": e.stderr, "verdict": e.verdict()}
                            for k, e in self.effects.items()}}


def _contrast_matrix(fit_result, factor_name):
    design = fit_result.design
    if factor_name not in design.factor_columns:
        raise ModelError(f"{factor_name!r} is not a factor term of {fit_result.spec.formula}")
    mapping = design.factor_columns[factor_name]
    levels = design.factor_levels[factor_name]
    L = len(levels)
    C = np.zeros((L, len(fit_result.columns)))
    for i, lev in enumerate(levels):
        j = mapping[lev]
        if j is not None:
            C[i, j] = 1.0
    return levels, C - C.mean(axis=0)


def centered_effects(fit_result: FitResult, factor_name: str, level: float = 0.5) -> EffectSummary:
    """Per-level effects minus their mean, with Wald intervals from the contrast covariance."""
    levels, C = _contrast_matrix(fit_result, factor_name)
    _require_usable(fit_result)
    z = _z(level)
    est = C @ fit_result.params
    se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", C, fit_result.covariance, C), 0, None))
    effects = {lev: Effect(float(e), float(e - z * s), float(e + z * s), float(s))
               for lev, e, s in zip(levels, est, se)}
    return EffectSummary(factor_name, level, effects)


def slope_effect(fit_result: FitResult, column: str, s: float, level: float = 0.5):
    """Effect ``beta * s`` of a deviation `s` from the mean transformed predictor."""
    design = fit_result.design
    if column not in design.slope_columns:
        raise ModelError(f"{column!r} is not a slope term of {fit_result.spec.formula}")
    _, lo, hi = wald_intervals(fit_result, level)[fit_result.columns[design.slope_columns[column]]]
    b = fit_result.params[design.slope_columns[column]]
    bounds = sorted((s * lo, s * hi))
    return float(b * s), (float(bounds[0]), float(bounds[1]))


# --------------------------------------------------------------------------
# comparison and selection


@dataclass(frozen=True)
class RankedModel:
    label: str
    aic: float
    delta_aic: float
    loglik: float
    n_params: int


def compare_models(fits) -> list[RankedModel]:
    """Rank fits by AIC (ascending) with differences to the best.

    `fits` is a mapping label -> FitResult or a sequence (labels are formulas).
    """
    items = list(fits.items()) if isinstance(fits, Mapping) else [(f.spec.formula, f) for f in fits]
    if not items:
        return []
    ref = items[0][1]
    for _, f in items[1:]:
        if f.data_fingerprint != ref.data_fingerprint or f.n_obs != ref.n_obs:
            raise ModelError("models were fitted on different datasets")
        if (f.spec.outcome, f.spec.outcome_transform) != (ref.spec.outcome, ref.spec.outcome_transform):
            raise ModelError("models have different outcomes")
    best = min(f.aic for _, f in items)
    ranked = sorted(items, key=lambda kv: kv[1].aic)
    return [RankedModel(label, f.aic, f.aic - best, f.loglik, f.n_free) for label, f in ranked]


def forward_selection(dataset: Dataset, base: ModelSpec, candidates: Sequence[Term],
                      history: list | None = None, **fit_kw) -> ModelSpec:
    """Greedy AIC forward selection starting from `base`.

    Adds the candidate with the largest AIC drop until none improves; ties go
    to the earlier candidate. Candidates whose fit fails are skipped. Each
    accepted step is appended to `history` as ``(term, aic)``.
    """
    base_cols = {t.column for t in base.terms}
    overlap = [t.column for t in candidates if t.column in base_cols]
    if overlap:
        raise ModelError(f"candidates overlap the base model: {overlap}")
    current = base
    current_aic = fit(dataset, base, **fit_kw).aic
    remaining = list(candidates)
    while remaining:
        best_term, best_aic = None, current_aic
        for term in remaining:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    res = fit(dataset, current.with_terms(term), **fit_kw)
            except ModelError as exc:
                logger.warning("candidate %s skipped: %s", term.label, exc)
                continue
            if not res.converged:
                logger.warning("candidate %s skipped: fit did not converge", term.label)
                continue
            if res.aic < best_aic:
                best_term, best_aic = term, res.aic
        if best_term is None:
            break
        current = current.with_terms(best_term)
        current_aic = best_aic
        remaining.remove(best_term)
        if history is not None:
            history.append((best_term, best_aic))
    return current


# --------------------------------------------------------------------------
# scikit-learn estimators


class _GLMBase(RegressorMixin, BaseEstimator):

    def _design(self, X):
        X = X.tocsr() if sparse.issparse(X) else np.asarray(X, dtype=float)
        if self.fit_intercept:
            ones = np.ones((X.shape[0], 1))
            X = sparse.hstack([ones, X], format="csr") if sparse.issparse(X) else np.hstack([ones, X])
        return X

    def _names(self, k):
        return (["(Intercept)"] if self.fit_intercept else []) + [f"x{i}" for i in range(k)]

    def _store(self, sol):
        beta = sol.beta
        if self.fit_intercept:
            self.intercept_, self.coef_ = float(beta[0]), beta[1:].copy()
        else:
            self.intercept_, self.coef_ = 0.0, beta.copy()
        self.covariance_ = sol.covariance
        self.loglik_ = sol.loglik
        self.n_iter_ = sol.iterations
        self.converged_ = sol.converged
        self.aic_ = 2 * (len(beta) + 1) - 2 * sol.loglik
        return self

    def _linear(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, accept_sparse="csr", reset=False)
        return np.asarray(X @ self.coef_).ravel() + self.intercept_


class NegativeBinomialRegressor(_GLMBase):
    """NB2 regression with log link; mean ``exp(intercept + X coef)``.

    Parameters
    ----------
    fit_intercept : bool
        Prepend a constant column.
    tol : float
        Relative log-likelihood change that stops the outer iterations.
    max_iter : int
        Maximum number of outer (coefficient, dispersion) iterations.
    phi_bounds : tuple
        Clamp for the dispersion parameter.
    """

    def __init__(self, fit_intercept=True, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                 phi_bounds=(PHI_MIN, PHI_MAX)):
        self.fit_intercept = fit_intercept
        self.tol = tol
        self.max_iter = max_iter
        self.phi_bounds = phi_bounds

    def fit(self, X, y):
        X, y = validate_data(self, X, y, accept_sparse="csr", y_numeric=True)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("negative-binomial targets must be nonnegative integers")
        sol = _solve_negbin(self._design(X), y.astype(float), self._names(X.shape[1]),
                            self.tol, self.max_iter, self.phi_bounds)
        self.dispersion_ = sol.dispersion
        return self._store(sol)

    def predict(self, X):
        return np.exp(self._linear(X))


class GaussianRegressor(_GLMBase):
    """Ordinary least squares with maximum-likelihood sigma."""

    def __init__(self, fit_intercept=True):
        self.fit_intercept = fit_intercept

    def fit(self, X, y):
        X, y = validate_data(self, X, y, accept_sparse="csr", y_numeric=True)
        sol = _solve_gaussian(self._design(X), y.astype(float), self._names(X.shape[1]))
        self.sigma_ = sol.dispersion
        return self._store(sol)

    def predict(self, X):
        return self._linear(X)
