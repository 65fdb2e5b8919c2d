"""Model objects: data spec, per-observation tilt state, likelihood, score.

A fitted configuration pairs a coefficient vector ``beta`` with a
reference distribution ``F``.  For each observation the response
distribution is ``F`` tilted so that its mean equals
``mu(x_i @ beta)``; the log likelihood of an observation is
``log w(y_i) + b_i + theta_i * y_i``, which is finite only when every
response is an atom of ``F``.

The score in ``beta`` reduces, via implicit differentiation of the
mean constraint, to the weighted least-squares form
``sum_i x_i * mu'(eta_i) / V_i * (y_i - mu(eta_i))`` with ``V_i`` the
tilted variance; :func:`score_beta` implements that closed form and
:func:`fisher_beta` its matching information matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import HullViolation, OffSupportResponse
from .links import LinkFunction
from .tilt import ReferenceDistribution, TiltSolution, solve_tilt_batch

if TYPE_CHECKING:  # pragma: no cover
    from .parametric import ParametricFamily, VarianceFunction

__all__ = [
    "GlmSpec",
    "ModelState",
    "ParametricMode",
    "SemiparametricMode",
    "QuasiMode",
    "solve_state",
    "atom_indices",
    "off_support_indices",
    "loglik",
    "score_beta",
    "fisher_beta",
]


@dataclass(frozen=True)
class ParametricMode:
    """Fit with a named response family, nuisance known or profiled."""

    family: "ParametricFamily"


@dataclass(frozen=True)
class SemiparametricMode:
    """Fit with the error distribution left free on the observed support."""


@dataclass(frozen=True)
class QuasiMode:
    """Fit from mean and variance assumptions only."""

    variance: "VarianceFunction"


@dataclass(frozen=True, eq=False)
class GlmSpec:
    """Design matrix, responses, inverse link, and optional fitting mode.

    ``X`` must have full column rank with no more columns than rows;
    both ``X`` and ``y`` must be finite.  ``mode`` is carried as
    metadata for front ends; the fitting functions take their family or
    variance-function arguments explicitly.
    """

    X: np.ndarray
    y: np.ndarray
    link: LinkFunction
    mode: object | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, q = X.shape
        if y.shape[0] != n:
            raise ValueError(f"X has {n} rows but y has {y.shape[0]} entries")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("X and y must be finite")
        if q > n:
            raise ValueError(f"more columns ({q}) than rows ({n})")
        if np.linalg.matrix_rank(X) < q:
            raise ValueError("X does not have full column rank")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def q(self) -> int:
        return int(self.X.shape[1])


@dataclass(frozen=True, eq=False)
class ModelState:
    """Coefficients, reference distribution, and solved per-row tilts.

    The per-observation arrays are stored flat for vectorized use;
    :attr:`tilts` materializes them as one ``TiltSolution`` per row.
    """

    beta: np.ndarray
    F: ReferenceDistribution
    theta: np.ndarray
    b: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    tilted_weights: np.ndarray

    @property
    def tilts(self) -> tuple[TiltSolution, ...]:
        return tuple(
            TiltSolution(
                theta=float(self.theta[i]),
                b=float(self.b[i]),
                mean=float(self.mean[i]),
                variance=float(self.variance[i]),
                tilted_weights=self.tilted_weights[i],
            )
            for i in range(self.theta.size)
        )


def solve_state(
    spec: GlmSpec,
    beta,
    F: ReferenceDistribution,
    tol: float = 1e-12,
    max_iter: int = 200,
    theta0=None,
) -> ModelState:
    """Solve every observation's tilt at ``mu(X @ beta)``.

    Raises :class:`~tiltglm.errors.HullViolation` when some linear
    predictor leaves the link domain or some fitted mean is not
    strictly inside the support hull of ``F``; fitters treat that as an
    infeasible step and halve.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    eta = spec.X @ beta
    lo, hi = spec.link.domain
    bad = ~np.isfinite(eta) | (eta <= lo) | (eta >= hi)
    if bad.any():
        raise HullViolation(
            "linear predictors outside the link domain",
            indices=np.flatnonzero(bad),
        )
    mu = np.asarray(spec.link.mu(eta), dtype=float)
    bad = ~np.isfinite(mu) | (mu <= F.support_min) | (mu >= F.support_max)
    if bad.any():
        raise HullViolation(
            "fitted means outside the open support hull "
            f"({F.support_min!r}, {F.support_max!r})",
            indices=np.flatnonzero(bad),
        )
    theta, b, mean, var, tw = solve_tilt_batch(
        F, mu, tol=tol, max_iter=max_iter, theta0=theta0
    )
    return ModelState(
        beta=beta, F=F, theta=theta, b=b, mean=mean, variance=var, tilted_weights=tw
    )


def atom_indices(F: ReferenceDistribution, y) -> np.ndarray:
    """Index of each response in ``F.atoms``; -1 where off support."""
    y = np.asarray(y, dtype=float).ravel()
    idx = np.searchsorted(F.atoms, y)
    idx = np.clip(idx, 0, F.natoms - 1)
    ok = F.atoms[idx] == y
    return np.where(ok, idx, -1)


def off_support_indices(F: ReferenceDistribution, y) -> np.ndarray:
    """Row indices whose response is not an atom of ``F``."""
    return np.flatnonzero(atom_indices(F, y) < 0)


def loglik(state: ModelState, spec: GlmSpec, check_support: bool = False) -> float:
    """Joint log likelihood ``sum_i log w(y_i) + b_i + theta_i y_i``.

    A response off the support of ``F`` has zero density.  By default
    that is signalled with ``-inf`` so optimizers can reject candidate
    steps uniformly; with ``check_support=True`` an
    :class:`~tiltglm.errors.OffSupportResponse` listing the offending
    indices is raised instead.
    """
    idx = atom_indices(state.F, spec.y)
    off = idx < 0
    if off.any():
        if check_support:
            raise OffSupportResponse(np.flatnonzero(off))
        return float("-inf")
    return float(
        state.F.log_weights[idx].sum()
        + state.b.sum()
        + state.theta @ spec.y
    )


def score_beta(state: ModelState, spec: GlmSpec) -> np.ndarray:
    """Gradient of the log likelihood in ``beta`` at fixed ``F``.

    Weighted least-squares form: ``X^T [mu' / V * (y - mu)]`` with the
    tilted variances as weights denominators.
    """
    eta = spec.X @ state.beta
    mu = spec.link.mu(eta)
    mp = spec.link.mu_prime(eta)
    return spec.X.T @ (mp / state.variance * (spec.y - mu))


def fisher_beta(state: ModelState, spec: GlmSpec) -> np.ndarray:
    """Expected information ``X^T diag(mu'^2 / V) X`` for ``beta``.

    Symmetric positive semidefinite; positive definite whenever ``X``
    has full column rank and all tilted variances are positive.
    """
    eta = spec.X @ state.beta
    mp = spec.link.mu_prime(eta)
    w = mp * mp / state.variance
    return spec.X.T @ (spec.X * w[:, None])
