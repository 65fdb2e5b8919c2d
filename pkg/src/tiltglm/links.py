"""Inverse link functions with closed-form derivatives.

Each link records the inverse link ``mu`` (linear predictor to mean),
its derivative ``mu_prime``, the open interval of valid linear
predictors, and the forward map ``to_eta`` used for initialization.
``mu_prime`` is strictly positive on the domain for every registered
link; the reciprocal link is therefore parametrized as
``mu(eta) = -1/eta`` on ``eta < 0``, which is increasing and maps onto
positive means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["LinkFunction", "LINKS", "get_link"]

# Largest linear predictor fed to exp() before overflow; kept below the
# IEEE-754 limit of ~709.78 with margin for downstream arithmetic.
_EXP_MAX = 700.0


@dataclass(frozen=True)
class LinkFunction:
    """Inverse link ``mu`` with derivative and admissible predictor range."""

    name: str
    mu: Callable[[np.ndarray], np.ndarray]
    mu_prime: Callable[[np.ndarray], np.ndarray]
    domain: tuple[float, float]
    to_eta: Callable[[np.ndarray], np.ndarray]
    mean_domain: tuple[float, float]

    def valid_eta(self, eta) -> bool:
        eta = np.asarray(eta, dtype=float)
        lo, hi = self.domain
        return bool(np.all(np.isfinite(eta)) and np.all(eta > lo) and np.all(eta < hi))


def _logit_mu(eta):
    eta = np.asarray(eta, dtype=float)
    return np.where(eta >= 0, 1.0 / (1.0 + np.exp(-eta)), np.exp(eta) / (1.0 + np.exp(eta)))


def _logit_mu_prime(eta):
    p = _logit_mu(eta)
    return p * (1.0 - p)


LINKS: dict[str, LinkFunction] = {
    "identity": LinkFunction(
        name="identity",
        mu=lambda eta: np.asarray(eta, dtype=float),
        mu_prime=lambda eta: np.ones_like(np.asarray(eta, dtype=float)),
        domain=(-np.inf, np.inf),
        to_eta=lambda mu: np.asarray(mu, dtype=float),
        mean_domain=(-np.inf, np.inf),
    ),
    "log": LinkFunction(
        name="log",
        mu=np.exp,
        mu_prime=np.exp,
        domain=(-np.inf, _EXP_MAX),
        to_eta=np.log,
        mean_domain=(0.0, np.inf),
    ),
    "logit": LinkFunction(
        name="logit",
        mu=_logit_mu,
        mu_prime=_logit_mu_prime,
        domain=(-np.inf, np.inf),
        to_eta=lambda mu: np.log(np.asarray(mu, dtype=float) / (1.0 - np.asarray(mu, dtype=float))),
        mean_domain=(0.0, 1.0),
    ),
    # Increasing form of the reciprocal link: mu = -1/eta on eta < 0.
    "inverse": LinkFunction(
        name="inverse",
        mu=lambda eta: -1.0 / np.asarray(eta, dtype=float),
        mu_prime=lambda eta: np.asarray(eta, dtype=float) ** -2,
        domain=(-np.inf, 0.0),
        to_eta=lambda mu: -1.0 / np.asarray(mu, dtype=float),
        mean_domain=(0.0, np.inf),
    ),
}


def get_link(name: str) -> LinkFunction:
    try:
        return LINKS[name]
    except KeyError:
        raise KeyError(
            f"unknown link {name!r}; available: {sorted(LINKS)}"
        ) from None
