"""Numerical checks that the mean score is orthogonal to the error model.

The embedding used here is the conditional-moment model ``Y = mu + eps``
with ``E(eps | X) = 0``: its nuisance tangent space is every function
``a(X, Y)`` with ``E[(Y - mu) a(X, Y) | X] = 0``, and projecting onto it
subtracts ``E[(Y - mu) s | X] / V * (Y - mu)`` from ``s``.  Applied to
the weighted-least-squares score in ``beta`` the projection cancels
exactly, for every coefficient vector, reference distribution, link and
design; :func:`check_projection_nullity` verifies the cancellation at
floating-point precision because every conditional expectation is an
exact finite sum over the tilted atoms.

For families whose error model is a single free parameter (normal
variance, gamma shape) the same orthogonality shows up as a vanishing
cross block ``E[S_beta S_phi]`` of the Fisher information;
:func:`fisher_cross_block` estimates that block by seeded Monte Carlo
with per-entry standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import digamma

from .links import LINKS, LinkFunction, get_link
from .model import GlmSpec, ModelState, loglik, score_beta, solve_state
from .parametric import GammaFamily, NormalFamily, ParametricFamily
from .tilt import ReferenceDistribution, solve_tilt, solve_tilt_batch, tilted_moments_batch

__all__ = [
    "ResidualFunctional",
    "NullityReport",
    "CrossBlockResult",
    "project_nuisance",
    "check_projection_nullity",
    "fisher_cross_block",
    "random_configuration",
    "score_gradient_deviation",
    "tilt_roundtrip_deviation",
]


@dataclass(frozen=True)
class ResidualFunctional:
    """A q-vector valued function of one covariate row and a response."""

    evaluator: Callable[[np.ndarray, float], np.ndarray]
    description: str = ""

    def __call__(self, x, y) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.evaluator(x, float(y)), dtype=float))


def _tilt_at(state: ModelState, spec: GlmSpec, x) -> tuple[float, float, np.ndarray]:
    """Tilted mean, variance and weights of ``F`` at one covariate row."""
    x = np.asarray(x, dtype=float).ravel()
    eta = float(x @ state.beta)
    target = float(spec.link.mu(eta))
    sol = solve_tilt(state.F, target, tol=1e-12, max_iter=200)
    return sol.mean, sol.variance, sol.tilted_weights


def project_nuisance(
    s: ResidualFunctional,
    state: ModelState,
    spec: GlmSpec,
    x,
    variance_scale: float = 1.0,
) -> ResidualFunctional:
    """Project ``s`` onto the conditional-moment nuisance tangent space at ``x``.

    Returns ``y -> s(x, y) - E[(Y - mu) s(x, Y) | x] / V * (y - mu)``
    with the conditional expectation computed exactly as a finite sum
    over the tilted atoms at ``x``.  ``variance_scale`` multiplies the
    variance used inside the projector and exists for negative
    controls: any value other than one breaks the exact cancellation.
    """
    x = np.asarray(x, dtype=float).ravel()
    mu, var, tw = _tilt_at(state, spec, x)
    atoms = state.F.atoms
    cross = np.zeros_like(np.atleast_1d(s(x, atoms[0])))
    for u_k, tw_k in zip(atoms, tw):
        cross = cross + tw_k * (u_k - mu) * s(x, u_k)
    coef = cross / (variance_scale * var)

    def _projected(xx, y):
        return s(xx, y) - coef * (float(y) - mu)

    return ResidualFunctional(
        evaluator=_projected,
        description=f"projection of [{s.description}] at x={x.tolist()}",
    )


@dataclass(frozen=True)
class NullityReport:
    """Worst absolute projected-score value over observations and atoms."""

    max_abs: float
    tol: float
    worst_row: int
    worst_atom: int
    n_evaluations: int

    @property
    def passed(self) -> bool:
        return self.max_abs <= self.tol


def _score_contribution(state: ModelState, spec: GlmSpec, i: int) -> ResidualFunctional:
    """Per-observation score functional, built from tilted moments.

    Uses the tilted mean rather than the link mean so the projector's
    cancellation is exact at solver precision.
    """
    x = spec.X[i]
    eta = float(x @ state.beta)
    mp = float(spec.link.mu_prime(eta))
    mu = float(state.mean[i])
    v = float(state.variance[i])
    coef = x * (mp / v)

    def _eval(xx, y):
        return coef * (float(y) - mu)

    return ResidualFunctional(evaluator=_eval, description=f"score contribution, row {i}")


def check_projection_nullity(
    state: ModelState,
    spec: GlmSpec,
    tol: float = 1e-10,
    variance_scale: float = 1.0,
) -> NullityReport:
    """Project every observation's score and evaluate it at every atom.

    Passes when the largest absolute value over all observations,
    atoms, and coefficient components is at most ``tol``.
    """
    atoms = state.F.atoms
    max_abs = -1.0
    worst = (0, 0)
    n_eval = 0
    for i in range(spec.n):
        s_i = _score_contribution(state, spec, i)
        proj = project_nuisance(s_i, state, spec, spec.X[i], variance_scale=variance_scale)
        for k, u_k in enumerate(atoms):
            val = float(np.max(np.abs(proj(spec.X[i], u_k))))
            n_eval += 1
            if val > max_abs:
                max_abs = val
                worst = (i, k)
    return NullityReport(
        max_abs=max_abs,
        tol=tol,
        worst_row=worst[0],
        worst_atom=worst[1],
        n_evaluations=n_eval,
    )


@dataclass(frozen=True, eq=False)
class CrossBlockResult:
    """Monte Carlo estimate of ``E[S_beta S_phi]`` with standard errors."""

    estimate: np.ndarray
    stderr: np.ndarray
    n_mc: int
    seed: int
    family: str
    nuisance_score: str

    @property
    def z(self) -> np.ndarray:
        return self.estimate / self.stderr

    def within(self, n_sigma: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.z) <= n_sigma))


def fisher_cross_block(
    family: ParametricFamily,
    X,
    link: LinkFunction,
    beta,
    nuisance: float | None = None,
    n_mc: int = 100_000,
    seed: int = 0,
    nuisance_score: str = "native",
) -> CrossBlockResult:
    """Estimate the information cross block between ``beta`` and the nuisance.

    Draws ``n_mc`` full-design response vectors at the true parameters,
    forms the total score in ``beta`` and the total nuisance score per
    draw, and averages their products.  ``nuisance_score="mean_shift"``
    replaces the nuisance score with the score of an additive mean
    shift, a deliberately non-orthogonal direction that serves as a
    negative control.

    Only families with a free nuisance (normal variance, gamma shape)
    are supported.
    """
    if not family.has_free_nuisance:
        raise ValueError(f"family {family.name!r} has no free nuisance parameter")
    if nuisance_score not in ("native", "mean_shift"):
        raise ValueError("nuisance_score must be 'native' or 'mean_shift'")
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float).ravel()
    phi = float(nuisance if nuisance is not None else family.nuisance)
    eta = X @ beta
    mu = np.asarray(link.mu(eta), dtype=float)
    mp = np.asarray(link.mu_prime(eta), dtype=float)
    condvar = np.asarray(family.conditional_variance(mu, phi), dtype=float)

    rng = np.random.default_rng(seed)
    Y = family.sample(rng, np.broadcast_to(mu, (n_mc, mu.size)), phi)
    resid = Y - mu[None, :]
    s_beta = (resid * (mp / condvar)[None, :]) @ X

    if nuisance_score == "mean_shift":
        s_phi = (resid / condvar[None, :]).sum(axis=1)
    elif isinstance(family, NormalFamily):
        s_phi = (-0.5 / phi + resid**2 / (2.0 * phi**2)).sum(axis=1)
    elif isinstance(family, GammaFamily):
        s_phi = (
            np.log(phi) + 1.0 - digamma(phi) + np.log(Y / mu[None, :]) - Y / mu[None, :]
        ).sum(axis=1)
    else:  # pragma: no cover - guarded by has_free_nuisance
        raise ValueError(f"no nuisance score implemented for family {family.name!r}")

    prods = s_beta * s_phi[:, None]
    estimate = prods.mean(axis=0)
    stderr = prods.std(axis=0, ddof=1) / np.sqrt(n_mc)
    return CrossBlockResult(
        estimate=estimate,
        stderr=stderr,
        n_mc=int(n_mc),
        seed=int(seed),
        family=family.name,
        nuisance_score=nuisance_score,
    )


_ETA_WINDOWS = {
    "identity": (-2.0, 2.0),
    "log": (-1.5, 1.5),
    "logit": (-2.0, 2.0),
    "inverse": (-3.0, -0.3),
}


def random_configuration(
    rng: np.random.Generator,
    link_names: tuple[str, ...] | None = None,
    max_q: int = 3,
    max_n: int = 8,
    max_atoms: int = 10,
) -> tuple[ModelState, GlmSpec]:
    """Draw a random solvable (link, beta, F, X, y) configuration.

    The design is built backwards from sampled linear predictors inside
    a per-link window, and the support is drawn wide enough that every
    fitted mean is strictly interior, so the configuration is always
    feasible.
    """
    names = link_names if link_names is not None else tuple(sorted(LINKS))
    link = get_link(names[int(rng.integers(len(names)))])
    q = int(rng.integers(1, max_q + 1))
    n = int(rng.integers(q + 2, max_n + 1))
    lo, hi = _ETA_WINDOWS[link.name]
    eta = rng.uniform(lo, hi, size=n)
    beta = rng.uniform(-1.0, 1.0, size=q)
    beta[0] = np.sign(beta[0] or 1.0) * max(abs(beta[0]), 0.2)
    for _ in range(50):
        rest = 0.5 * rng.standard_normal((n, q - 1)) if q > 1 else np.zeros((n, 0))
        first = (eta - rest @ beta[1:]) / beta[0]
        X = np.column_stack([first, rest])
        if np.linalg.matrix_rank(X) == q:
            break
    mu = np.asarray(link.mu(eta), dtype=float)
    spread = float(mu.max() - mu.min())
    base = max(spread, 0.1 * max(1.0, float(np.abs(mu).max())))
    m = int(rng.integers(2, max_atoms + 1))
    for _ in range(50):
        a_lo = mu.min() - rng.uniform(0.3, 0.8) * base
        a_hi = mu.max() + rng.uniform(0.3, 0.8) * base
        inner = rng.uniform(a_lo, a_hi, size=m - 2) if m > 2 else np.empty(0)
        atoms = np.sort(np.concatenate([[a_lo, a_hi], inner]))
        if np.all(np.diff(atoms) > 1e-6 * base):
            break
    weights = rng.dirichlet(np.full(atoms.size, 2.0))
    F = ReferenceDistribution(atoms, weights / weights.sum())
    y = rng.choice(atoms, size=n)
    spec = GlmSpec(X, y, link)
    state = solve_state(spec, beta, F, tol=1e-12)
    return state, spec


def score_gradient_deviation(state: ModelState, spec: GlmSpec, h_scale: float = 1e-4) -> float:
    """Relative gap between the closed-form score and a central difference.

    The log likelihood is re-evaluated at ``beta +- h e_j`` with all
    tilts re-solved, so the comparison exercises the implicit
    differentiation identities behind the weighted-least-squares score
    form, not just the arithmetic.
    """
    s = score_beta(state, spec)
    fd = np.empty_like(s)
    for j in range(s.size):
        h = h_scale * max(1.0, abs(float(state.beta[j])))
        e = np.zeros_like(state.beta)
        e[j] = h
        ll_plus = loglik(solve_state(spec, state.beta + e, state.F, tol=1e-13), spec)
        ll_minus = loglik(solve_state(spec, state.beta - e, state.F, tol=1e-13), spec)
        fd[j] = (ll_plus - ll_minus) / (2.0 * h)
    denom = np.maximum(np.abs(s), 1.0)
    return float(np.max(np.abs(fd - s) / denom))


def tilt_roundtrip_deviation(
    rng: np.random.Generator,
    n_pairs: int = 10_000,
    batch: int = 100,
) -> tuple[float, float]:
    """Worst mean residual and tilt-recovery error over random pairs.

    Draws random reference distributions, tilts each by random
    exponents in ``[-5, 5]``, and solves back from the tilted means.
    Returns ``(max |tilted mean - target|, max |theta_hat - theta|)``.
    """
    worst_mean = 0.0
    worst_theta = 0.0
    done = 0
    while done < n_pairs:
        k = min(batch, n_pairs - done)
        m = int(rng.integers(2, 9))
        atoms = np.sort(rng.uniform(-1.0, 1.0, size=m))
        while np.any(np.diff(atoms) < 1e-4):
            atoms = np.sort(rng.uniform(-1.0, 1.0, size=m))
        weights = rng.dirichlet(np.full(m, 2.0))
        F = ReferenceDistribution(atoms, weights / weights.sum())
        theta = rng.uniform(-5.0, 5.0, size=k)
        target, _ = tilted_moments_batch(F, theta)
        theta_hat, _, mean_hat, _, _ = solve_tilt_batch(F, target, tol=1e-10)
        worst_mean = max(worst_mean, float(np.max(np.abs(mean_hat - target))))
        worst_theta = max(worst_theta, float(np.max(np.abs(theta_hat - theta))))
        done += k
    return worst_mean, worst_theta
