"""Finitely supported reference distributions and exponential tilting.

The basic object is a discrete probability distribution with atoms
``y_1 < ... < y_m`` and strictly positive weights.  Reweighting the
atoms by ``exp(b + theta * y)`` produces another distribution on the
same support whose mean moves continuously and strictly monotonically
with the exponent ``theta``; ``b`` is the log normalizing constant that
keeps the total mass at one.  :func:`solve_tilt` inverts that map:
given a target mean strictly inside the open support hull it finds the
unique ``theta`` whose tilted mean equals the target.

Finite support means every integral is an exact finite sum and the
moment generating function exists for every ``theta``.  All
exponentials are evaluated through max-shifted log sums, so tilts with
``|theta * y|`` of several hundred remain finite and accurate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import TargetOutsideHull, ToleranceNotReached

__all__ = [
    "ReferenceDistribution",
    "TiltSolution",
    "normalizer",
    "tilted_moments",
    "tilted_moments_batch",
    "solve_tilt",
    "solve_tilt_batch",
]

#: Tolerance on |sum(weights) - 1| accepted at construction time.
WEIGHT_SUM_TOL = 1e-12

#: Relative size of a tilt update considered a converged polish step.
_THETA_STEP_TOL = 1e-13


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ReferenceDistribution:
    """Discrete distribution with strictly increasing atoms.

    Parameters
    ----------
    atoms : array_like
        Distinct support points in strictly increasing order.
    weights : array_like
        Strictly positive probability masses summing to one within
        ``WEIGHT_SUM_TOL``.
    """

    atoms: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        atoms = _readonly(np.atleast_1d(self.atoms))
        weights = _readonly(np.atleast_1d(self.weights))
        if atoms.ndim != 1 or weights.ndim != 1:
            raise ValueError("atoms and weights must be one-dimensional")
        if atoms.shape != weights.shape:
            raise ValueError("atoms and weights must have equal length")
        if atoms.size < 1:
            raise ValueError("a reference distribution needs at least one atom")
        if not np.all(np.isfinite(atoms)) or not np.all(np.isfinite(weights)):
            raise ValueError("atoms and weights must be finite")
        if atoms.size > 1 and not np.all(np.diff(atoms) > 0):
            raise ValueError("atoms must be strictly increasing and distinct")
        if np.any(weights <= 0):
            raise ValueError("weights must be strictly positive")
        total = float(weights.sum())
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(
                f"weights must sum to 1 within {WEIGHT_SUM_TOL:g}, got {total!r}"
            )
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "log_weights", _readonly(np.log(weights)))

    @classmethod
    def from_sample(cls, y) -> "ReferenceDistribution":
        """Empirical distribution of a sample: distinct values, frequency weights."""
        y = np.asarray(y, dtype=float).ravel()
        atoms, counts = np.unique(y, return_counts=True)
        return cls(atoms, counts / counts.sum())

    @property
    def natoms(self) -> int:
        return int(self.atoms.size)

    @property
    def support_min(self) -> float:
        return float(self.atoms[0])

    @property
    def support_max(self) -> float:
        return float(self.atoms[-1])

    def mean(self) -> float:
        return float(self.weights @ self.atoms)

    def variance(self) -> float:
        d = self.atoms - self.mean()
        return float(self.weights @ (d * d))

    def tilted(self, theta: float) -> "ReferenceDistribution":
        """Return the distribution reweighted by ``exp(b + theta * y)``."""
        lw = self.log_weights + theta * self.atoms
        lw -= logsumexp(lw)
        w = np.exp(lw)
        return ReferenceDistribution(self.atoms, w / w.sum())


@dataclass(frozen=True, eq=False)
class TiltSolution:
    """Tilt exponent, log normalizer, and moments of one solved tilt.

    ``tilted_weights[j] = exp(b + theta * atoms[j]) * weights[j]`` sums
    to one, and ``mean`` / ``variance`` are the first two central
    moments under those weights.
    """

    theta: float
    b: float
    mean: float
    variance: float
    tilted_weights: np.ndarray


def _tilt_state(atoms, log_w, theta):
    """Normalizer, weights and central moments for a vector of tilts.

    ``theta`` has shape (k,); returns arrays shaped (k,), (k, m), (k,), (k,).
    The max-shifted sum is written out by hand because this sits in the
    innermost loop of every fit.
    """
    lw = log_w[None, :] + np.outer(theta, atoms)
    mx = lw.max(axis=1)
    ex = np.exp(lw - mx[:, None])
    sm = ex.sum(axis=1)
    b = -(mx + np.log(sm))
    tw = ex / sm[:, None]
    mean = tw @ atoms
    d = atoms[None, :] - mean[:, None]
    var = np.einsum("ij,ij,ij->i", tw, d, d)
    return b, tw, mean, var


def normalizer(F: ReferenceDistribution, theta: float) -> float:
    """Log normalizing constant ``b = -log sum_j exp(theta * y_j) w_j``.

    Finite support makes this well defined for every ``theta``; the sum
    is accumulated with a max shift so that ``|theta * y_j|`` up to
    roughly 700 stays within double range.
    """
    return float(-logsumexp(F.log_weights + theta * F.atoms))


def tilted_moments(F: ReferenceDistribution, theta: float) -> tuple[float, float]:
    """Mean and variance of ``F`` tilted by ``theta``.

    The variance is strictly positive whenever ``F`` has at least two
    atoms, and it equals the derivative of the tilted mean in ``theta``.
    """
    _, _, mean, var = _tilt_state(F.atoms, F.log_weights, np.array([float(theta)]))
    return float(mean[0]), float(var[0])


def tilted_moments_batch(F: ReferenceDistribution, theta) -> tuple[np.ndarray, np.ndarray]:
    """Means and variances of ``F`` tilted by a vector of exponents."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    _, _, mean, var = _tilt_state(F.atoms, F.log_weights, theta)
    return mean, var


def solve_tilt_batch(
    F: ReferenceDistribution,
    targets,
    tol: float = 1e-10,
    max_iter: int = 100,
    theta0=None,
):
    """Solve the mean constraint for many targets against one distribution.

    Vectorized safeguarded Newton: the residual ``g(theta) = tilted
    mean - target`` is strictly increasing with derivative equal to the
    tilted variance, so each root is unique.  A per-target bracket is
    established by geometric expansion and any Newton step that leaves
    its bracket is replaced by bisection.  After ``|g| <= tol`` the
    iteration keeps polishing until the Newton update is below
    ``_THETA_STEP_TOL`` relative, so recovered tilts are accurate in
    ``theta`` and not only in the mean.

    Returns ``(theta, b, mean, variance, tilted_weights)`` with leading
    dimension ``len(targets)``.

    Raises
    ------
    TargetOutsideHull
        If a target is not strictly inside ``(atoms[0], atoms[-1])``.
    ToleranceNotReached
        If some residual still exceeds ``tol`` after ``max_iter``
        iterations.
    """
    atoms = F.atoms
    log_w = F.log_weights
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if np.any(targets <= atoms[0]) or np.any(targets >= atoms[-1]):
        bad = np.flatnonzero((targets <= atoms[0]) | (targets >= atoms[-1]))
        raise TargetOutsideHull(
            f"targets at positions {bad.tolist()} lie outside the open hull "
            f"({atoms[0]!r}, {atoms[-1]!r})"
        )

    k = targets.size
    theta = (
        np.zeros(k)
        if theta0 is None
        else np.array(np.broadcast_to(theta0, (k,)), dtype=float)
    )

    b, tw, mean, var = _tilt_state(atoms, log_w, theta)
    g = mean - targets

    # Bracket each root, g(lo) <= 0 <= g(hi), by doubling probe offsets
    # from the starting point.  A probe on the wrong side of the root
    # may only fill a still-missing endpoint, never replace a found one.
    span = float(atoms[-1] - atoms[0])
    step = 4.0 / span
    lo = np.where(g <= 0, theta, -np.inf)
    hi = np.where(g >= 0, theta, np.inf)
    for _ in range(200):
        need_lo = ~np.isfinite(lo)
        need_hi = ~np.isfinite(hi)
        if not (need_lo.any() or need_hi.any()):
            break
        if need_lo.any():
            t_probe = np.where(need_lo, theta - step, 0.0)
            _, _, m_p, _ = _tilt_state(atoms, log_w, t_probe)
            g_p = m_p - targets
            lo = np.where(need_lo & (g_p <= 0), t_probe, lo)
            hi = np.where(need_lo & (g_p > 0) & ~np.isfinite(hi), t_probe, hi)
        if need_hi.any():
            t_probe = np.where(need_hi, theta + step, 0.0)
            _, _, m_p, _ = _tilt_state(atoms, log_w, t_probe)
            g_p = m_p - targets
            hi = np.where(need_hi & (g_p >= 0), t_probe, hi)
            lo = np.where(need_hi & (g_p < 0) & ~np.isfinite(lo), t_probe, lo)
        step *= 2.0

    # Newton with bisection fallback; after |g| <= tol everywhere, at
    # most four polish iterations sharpen theta itself before stopping.
    done = np.zeros(k, dtype=bool)
    polish = 0
    for _ in range(max_iter):
        within = np.abs(g) <= tol
        newton = theta - g / var
        outside = ~np.isfinite(newton) | (newton < lo) | (newton > hi)
        cand = np.where(outside, 0.5 * (lo + hi), newton)
        move = np.abs(cand - theta)
        done |= within & (move <= _THETA_STEP_TOL * (1.0 + np.abs(theta)))
        if done.all():
            break
        if within.all():
            polish += 1
            if polish >= 4:
                break
        theta = np.where(done, theta, cand)
        b, tw, mean, var = _tilt_state(atoms, log_w, theta)
        g = np.where(done, 0.0, mean - targets)
        lo = np.where(~done & (g < 0), theta, lo)
        hi = np.where(~done & (g > 0), theta, hi)

    resid = np.abs(mean - targets)
    if np.any(resid > tol):
        worst = float(resid.max())
        raise ToleranceNotReached(
            f"tilt solve: residual {worst:.3e} > tol {tol:g} after {max_iter} iterations"
        )
    return theta, b, mean, var, tw


def solve_tilt(
    F: ReferenceDistribution,
    target_mean: float,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> TiltSolution:
    """Find the tilt whose mean equals ``target_mean``.

    The target must lie strictly inside the open support hull; at or
    beyond an endpoint no finite tilt exists and
    :class:`~tiltglm.errors.TargetOutsideHull` is raised.
    """
    theta, b, mean, var, tw = solve_tilt_batch(
        F, [float(target_mean)], tol=tol, max_iter=max_iter
    )
    return TiltSolution(
        theta=float(theta[0]),
        b=float(b[0]),
        mean=float(mean[0]),
        variance=float(var[0]),
        tilted_weights=tw[0],
    )
