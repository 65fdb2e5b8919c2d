"""Parametric maximum likelihood and quasi-likelihood fitting.

Both fitters run Fisher scoring (iteratively reweighted least squares)
on estimating equations of the form ``sum_i x_i mu'_i (y_i - mu_i) /
v(mu_i) = 0``.  For a named family ``v`` is the family's mean-variance
structure and the solution is the maximum likelihood estimate, with any
free nuisance (normal variance, gamma shape) profiled afterwards; the
profiling never moves ``beta`` because the beta equations do not
involve the nuisance.  For a quasi-likelihood fit ``v`` is supplied by
the caller and need not correspond to any probability model, so the
covariance is reported in sandwich form rather than as an inverse
information.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import digamma, gammaln, polygamma, xlogy

from .errors import InvalidResponse, NonConvergence
from .model import GlmSpec

__all__ = [
    "ParametricFamily",
    "NormalFamily",
    "PoissonFamily",
    "GammaFamily",
    "ExponentialFamily",
    "family_from_name",
    "VarianceFunction",
    "VARIANCE_FUNCTIONS",
    "variance_from_name",
    "FitOptions",
    "FitResult",
    "fit_mle",
    "fit_quasi",
]


@dataclass(frozen=True)
class VarianceFunction:
    """Positive variance function ``v(mu)`` used by quasi-likelihood fits."""

    name: str
    v: Callable[[np.ndarray], np.ndarray]


VARIANCE_FUNCTIONS: dict[str, VarianceFunction] = {
    "constant": VarianceFunction("constant", lambda mu: np.ones_like(np.asarray(mu, dtype=float))),
    "mean": VarianceFunction("mean", lambda mu: np.asarray(mu, dtype=float)),
    "mean-squared": VarianceFunction("mean-squared", lambda mu: np.asarray(mu, dtype=float) ** 2),
}


def variance_from_name(name: str) -> VarianceFunction:
    try:
        return VARIANCE_FUNCTIONS[name]
    except KeyError:
        raise KeyError(
            f"unknown variance function {name!r}; available: {sorted(VARIANCE_FUNCTIONS)}"
        ) from None


class ParametricFamily:
    """Response family: variance structure, likelihood, nuisance handling.

    ``variance_function(mu)`` is the mean-variance structure ``v(mu)``
    entering the beta estimating equations (any nuisance factors out of
    the root).  ``conditional_variance(mu)`` is the full ``Var(Y|X)``
    including the nuisance and is what covariance reporting uses.
    """

    name: str = ""
    default_link: str = "identity"
    has_free_nuisance: bool = False

    def __init__(self, nuisance: float | None = None):
        self.nuisance = nuisance

    # mean-variance structure v(mu); nuisance-free where possible
    def variance_function(self, mu):
        raise NotImplementedError

    def conditional_variance(self, mu, nuisance: float):
        raise NotImplementedError

    def loglik(self, y, mu, nuisance: float) -> float:
        raise NotImplementedError

    def deviance(self, y, mu) -> float:
        raise NotImplementedError

    def validate_response(self, y) -> None:
        raise NotImplementedError

    def profile_nuisance(self, y, mu) -> float:
        """Maximize the likelihood over the nuisance at fixed means."""
        raise NotImplementedError

    def nuisance_score(self, y, mu, nuisance: float):
        """Per-observation score in the nuisance parameter."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, mu, nuisance: float):
        raise NotImplementedError

    def mean_domain(self) -> tuple[float, float]:
        return (-np.inf, np.inf)

    def resolved_nuisance(self, y, mu) -> float:
        return self.nuisance if self.nuisance is not None else self.profile_nuisance(y, mu)


class NormalFamily(ParametricFamily):
    """Gaussian errors; the nuisance is the error variance."""

    name = "normal"
    default_link = "identity"
    has_free_nuisance = True

    def variance_function(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def conditional_variance(self, mu, nuisance):
        return nuisance * np.ones_like(np.asarray(mu, dtype=float))

    def loglik(self, y, mu, nuisance):
        r = y - mu
        n = y.size
        return float(-0.5 * n * np.log(2.0 * np.pi * nuisance) - (r @ r) / (2.0 * nuisance))

    def deviance(self, y, mu):
        r = y - mu
        return float(r @ r)

    def validate_response(self, y):
        pass

    def profile_nuisance(self, y, mu):
        r = y - mu
        return float((r @ r) / y.size)

    def nuisance_score(self, y, mu, nuisance):
        r = y - mu
        return -0.5 / nuisance + r * r / (2.0 * nuisance**2)

    def sample(self, rng, mu, nuisance):
        return rng.normal(loc=mu, scale=np.sqrt(nuisance))


class PoissonFamily(ParametricFamily):
    """Poisson counts; no free nuisance."""

    name = "poisson"
    default_link = "log"

    def variance_function(self, mu):
        return np.asarray(mu, dtype=float)

    def conditional_variance(self, mu, nuisance):
        return np.asarray(mu, dtype=float)

    def loglik(self, y, mu, nuisance):
        return float(np.sum(xlogy(y, mu) - mu - gammaln(y + 1.0)))

    def deviance(self, y, mu):
        return float(2.0 * np.sum(xlogy(y, y / mu) - (y - mu)))

    def validate_response(self, y):
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise InvalidResponse("poisson responses must be nonnegative integers")

    def profile_nuisance(self, y, mu):
        return None

    def sample(self, rng, mu, nuisance):
        return rng.poisson(lam=mu).astype(float)

    def mean_domain(self):
        return (0.0, np.inf)


class GammaFamily(ParametricFamily):
    """Gamma errors with mean ``mu``; the nuisance is the shape."""

    name = "gamma"
    default_link = "log"
    has_free_nuisance = True

    def variance_function(self, mu):
        # shape scales the beta equations uniformly, so it is left out here
        return np.asarray(mu, dtype=float) ** 2

    def conditional_variance(self, mu, nuisance):
        return np.asarray(mu, dtype=float) ** 2 / nuisance

    def loglik(self, y, mu, nuisance):
        a = nuisance
        return float(
            np.sum(a * np.log(a / mu) + (a - 1.0) * np.log(y) - a * y / mu)
            - y.size * gammaln(a)
        )

    def deviance(self, y, mu):
        return float(2.0 * np.sum(-np.log(y / mu) + (y - mu) / mu))

    def validate_response(self, y):
        if np.any(y <= 0):
            raise InvalidResponse("gamma responses must be strictly positive")

    def profile_nuisance(self, y, mu):
        # Newton on the profile shape score n[log a + 1 - psi(a)] + sum[log(y/mu) - y/mu]
        n = y.size
        c = float(np.sum(np.log(y / mu) - y / mu))
        r = y - mu
        a = 1.0 / max(float(np.mean((r / mu) ** 2)), 1e-8)
        for _ in range(100):
            score = n * (np.log(a) + 1.0 - digamma(a)) + c
            if abs(score) < 1e-12 * n:
                break
            deriv = n * (1.0 / a - polygamma(1, a))
            step = score / deriv
            a_new = a - step
            while a_new <= 0:
                step *= 0.5
                a_new = a - step
            a = a_new
        return float(a)

    def nuisance_score(self, y, mu, nuisance):
        a = nuisance
        return np.log(a) + 1.0 - digamma(a) + np.log(y / mu) - y / mu

    def sample(self, rng, mu, nuisance):
        return rng.gamma(shape=nuisance, scale=np.asarray(mu, dtype=float) / nuisance)

    def mean_domain(self):
        return (0.0, np.inf)


class ExponentialFamily(GammaFamily):
    """Exponential errors: gamma with the shape held at one."""

    name = "exponential"
    has_free_nuisance = False

    def __init__(self, nuisance: float | None = None):
        super().__init__(nuisance=1.0)

    def profile_nuisance(self, y, mu):
        return 1.0


_FAMILIES = {
    "normal": NormalFamily,
    "poisson": PoissonFamily,
    "gamma": GammaFamily,
    "exponential": ExponentialFamily,
}


def family_from_name(name: str, nuisance: float | None = None) -> ParametricFamily:
    try:
        cls = _FAMILIES[name]
    except KeyError:
        raise KeyError(
            f"unknown family {name!r}; available: {sorted(_FAMILIES)}"
        ) from None
    return cls(nuisance) if cls is not ExponentialFamily else cls()


@dataclass(frozen=True)
class FitOptions:
    """Knobs for the scoring loops."""

    tol: float = 1e-8
    max_iter: int = 200
    max_halvings: int = 30
    init_beta: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class FitResult:
    """Estimates plus convergence metadata from one fit."""

    beta: np.ndarray
    cov: np.ndarray
    nuisance: float | None
    loglik: float | None
    loglik_trace: np.ndarray | None
    score_norm: float
    converged: bool
    n_iter: int
    estimator: str
    label: str


def _initial_beta(spec: GlmSpec, mean_domain: tuple[float, float]) -> np.ndarray:
    y = spec.y
    ybar = float(np.mean(y))
    mu0 = 0.5 * (y + ybar)
    lo, hi = mean_domain
    llo, lhi = spec.link.mean_domain
    lo, hi = max(lo, llo), min(hi, lhi)
    if np.isfinite(lo) or np.isfinite(hi):
        scale = max(abs(ybar), 1.0)
        pad = 1e-3 * scale
        mu0 = np.clip(
            mu0,
            lo + pad if np.isfinite(lo) else None,
            hi - pad if np.isfinite(hi) else None,
        )
    eta0 = spec.link.to_eta(mu0)
    beta0, *_ = np.linalg.lstsq(spec.X, eta0, rcond=None)
    return beta0


def _eta_mu(spec: GlmSpec, beta, mean_domain):
    """Linear predictor and mean, or None when the step is infeasible."""
    eta = spec.X @ beta
    if not spec.link.valid_eta(eta):
        return None
    mu = np.asarray(spec.link.mu(eta), dtype=float)
    lo, hi = mean_domain
    if not np.all(np.isfinite(mu)) or np.any(mu <= lo) or np.any(mu >= hi):
        return None
    return eta, mu


def fit_mle(spec: GlmSpec, family: ParametricFamily, opts: FitOptions | None = None) -> FitResult:
    """Maximum likelihood fit for a named family.

    Newton scoring on the family score equations with step-halving on
    deviance increase; a free nuisance is profiled by its own 1-d
    update.  The reported covariance is the inverse information at the
    estimate.

    Raises :class:`~tiltglm.errors.NonConvergence` when the score norm
    has not dropped below ``opts.tol`` within ``opts.max_iter``
    scoring iterations, and :class:`~tiltglm.errors.InvalidResponse`
    when the responses fall outside the family support.
    """
    opts = opts or FitOptions()
    family.validate_response(spec.y)
    X, y = spec.X, spec.y
    dom = family.mean_domain()

    beta = np.asarray(opts.init_beta, dtype=float) if opts.init_beta is not None else _initial_beta(spec, dom)
    cur = _eta_mu(spec, beta, dom)
    if cur is None:
        raise NonConvergence("infeasible starting point for the scoring iteration")
    eta, mu = cur

    trace = []
    converged = False
    n_iter = 0
    for n_iter in range(1, opts.max_iter + 1):
        mp = spec.link.mu_prime(eta)
        v = family.variance_function(mu)
        score = X.T @ (mp * (y - mu) / v)
        nuis = family.resolved_nuisance(y, mu)
        trace.append(family.loglik(y, mu, nuis))
        if float(np.linalg.norm(score)) <= opts.tol:
            converged = True
            break
        w = mp * mp / v
        A = X.T @ (X * w[:, None])
        try:
            delta = np.linalg.solve(A, score)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"singular scoring matrix: {exc}") from exc
        dev = family.deviance(y, mu)
        if not np.isfinite(dev):
            raise NonConvergence("divergent deviance")
        t = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            cand = beta + t * delta
            got = _eta_mu(spec, cand, dom)
            if got is not None:
                dev_new = family.deviance(y, got[1])
                if np.isfinite(dev_new) and dev_new <= dev + 1e-12 * (1.0 + abs(dev)):
                    beta, (eta, mu) = cand, got
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
    if not converged:
        mp = spec.link.mu_prime(eta)
        v = family.variance_function(mu)
        score = X.T @ (mp * (y - mu) / v)
        converged = float(np.linalg.norm(score)) <= opts.tol
    if not converged:
        raise NonConvergence(
            f"MLE scoring did not reach tol {opts.tol:g} in {n_iter} iterations"
        )

    nuisance = family.resolved_nuisance(y, mu)
    mp = spec.link.mu_prime(eta)
    condvar = family.conditional_variance(mu, nuisance)
    score_full = X.T @ (mp * (y - mu) / condvar)
    info = X.T @ (X * (mp * mp / condvar)[:, None])
    cov = np.linalg.inv(info)
    ll = family.loglik(y, mu, nuisance)
    return FitResult(
        beta=beta,
        cov=cov,
        nuisance=nuisance,
        loglik=ll,
        loglik_trace=np.asarray(trace),
        score_norm=float(np.linalg.norm(score_full)),
        converged=True,
        n_iter=n_iter,
        estimator="mle",
        label=family.name,
    )


def fit_quasi(spec: GlmSpec, v: VarianceFunction, opts: FitOptions | None = None) -> FitResult:
    """Quasi-likelihood fit for a caller-supplied variance function.

    Fisher scoring on the quasi-score with step-halving on the score
    norm.  Quasi-scores need not be likelihood scores, so the reported
    covariance is the sandwich ``A^{-1} B A^{-1}``.
    """
    opts = opts or FitOptions()
    X, y = spec.X, spec.y
    dom = spec.link.mean_domain

    def _score_w(eta, mu):
        vv = np.asarray(v.v(mu), dtype=float)
        if np.any(vv <= 0) or not np.all(np.isfinite(vv)):
            return None
        mp = spec.link.mu_prime(eta)
        return X.T @ (mp * (y - mu) / vv), mp * mp / vv, mp, vv

    beta = np.asarray(opts.init_beta, dtype=float) if opts.init_beta is not None else _initial_beta(spec, dom)
    cur = _eta_mu(spec, beta, dom)
    if cur is None:
        raise NonConvergence("infeasible starting point for the scoring iteration")
    eta, mu = cur
    got = _score_w(eta, mu)
    if got is None:
        raise NonConvergence("variance function nonpositive at the starting point")
    score, w, mp, vv = got

    converged = False
    n_iter = 0
    for n_iter in range(1, opts.max_iter + 1):
        norm = float(np.linalg.norm(score))
        if norm <= opts.tol:
            converged = True
            break
        A = X.T @ (X * w[:, None])
        try:
            delta = np.linalg.solve(A, score)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"singular scoring matrix: {exc}") from exc
        t = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            cand = beta + t * delta
            feas = _eta_mu(spec, cand, dom)
            if feas is not None:
                got = _score_w(*feas)
                if got is not None:
                    norm_new = float(np.linalg.norm(got[0]))
                    if norm_new <= norm * (1.0 + 1e-12) or norm_new <= opts.tol:
                        beta, (eta, mu) = cand, feas
                        score, w, mp, vv = got
                        accepted = True
                        break
            t *= 0.5
        if not accepted:
            break
    if not converged:
        converged = float(np.linalg.norm(score)) <= opts.tol
    if not converged:
        raise NonConvergence(
            f"quasi scoring did not reach tol {opts.tol:g} in {n_iter} iterations"
        )

    A = X.T @ (X * w[:, None])
    u = mp * (y - mu) / vv
    B = X.T @ (X * (u * u)[:, None])
    A_inv = np.linalg.inv(A)
    cov = A_inv @ B @ A_inv
    return FitResult(
        beta=beta,
        cov=cov,
        nuisance=None,
        loglik=None,
        loglik_trace=None,
        score_norm=float(np.linalg.norm(score)),
        converged=True,
        n_iter=n_iter,
        estimator="quasi",
        label=f"quasi[{v.name}]",
    )
