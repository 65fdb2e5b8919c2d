"""Joint maximum likelihood over coefficients and the error distribution.

The error distribution is restricted to the distinct observed
responses, which keeps the problem finite dimensional: maximizers of
the nonparametric likelihood place all mass on observed points.  The
fit alternates two monotone steps.  The beta step is a Newton update
from :func:`~tiltglm.model.score_beta` / :func:`~tiltglm.model.fisher_beta`
with step-halving against the joint log likelihood and a feasibility
guard that keeps every fitted mean strictly inside the support hull.
The weight step is an exponentiated-gradient (mirror) update on the log
weights with an adaptive step size, again halved against the log
likelihood, with all tilts re-solved after each accepted move.

The likelihood is invariant under tilting the reference distribution
(any tilt of the weights can be absorbed into the per-observation
tilts), so the reported distribution is pinned down by a normalization:
it is re-tilted so that its own mean equals the fitted mean of the
observation whose fitted mean is the median of fitted means, making the
tilt at that reference row about zero.  This anchoring leaves the
likelihood unchanged and is applied once at convergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateResponse, HullViolation, NonConvergence, OffSupportResponse
from .model import GlmSpec, ModelState, atom_indices, fisher_beta, score_beta, solve_state
from .tilt import ReferenceDistribution, solve_tilt

__all__ = [
    "SemiparOptions",
    "SemiparFitResult",
    "fit_semiparametric",
    "profile_loglik_beta",
]


@dataclass(frozen=True)
class SemiparOptions:
    """Knobs for the block-coordinate ascent."""

    outer_tol: float = 1e-9
    score_tol: float = 1e-6
    max_outer: int = 500
    tilt_tol: float = 1e-12
    max_halvings: int = 30
    anchor: bool = True
    #: Consecutive accepted weight updates allowed per outer iteration.
    max_weight_substeps: int = 10
    #: Hold the reference distribution fixed and run beta steps only.
    fix_reference: bool = False
    #: Starting (or, with ``fix_reference``, permanent) distribution;
    #: defaults to the empirical distribution of the responses.
    reference: ReferenceDistribution | None = None
    init_beta: np.ndarray | None = None
    #: Iteration cap for the weight loop inside profile_loglik_beta.
    max_profile_iter: int = 5000


@dataclass(frozen=True, eq=False)
class SemiparFitResult:
    """Joint maximizer with its ascent trace and convergence metadata."""

    beta: np.ndarray
    F_hat: ReferenceDistribution
    loglik_trace: np.ndarray
    converged: bool
    beta_cov: np.ndarray
    n_outer: int
    score_norm: float

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


def _fast_loglik(state: ModelState, y: np.ndarray, idx: np.ndarray) -> float:
    return float(state.F.log_weights[idx].sum() + state.b.sum() + state.theta @ y)


def _feasible_init(spec: GlmSpec, F: ReferenceDistribution, opts: SemiparOptions) -> ModelState:
    """First coefficient vector whose fitted means stay inside the hull."""
    y = spec.y
    ybar = float(np.mean(y))
    shrunk = ybar + 0.9 * (y - ybar)
    candidates = []
    if opts.init_beta is not None:
        candidates.append(np.asarray(opts.init_beta, dtype=float))
    with np.errstate(all="ignore"):
        eta_target = spec.link.to_eta(shrunk)
        eta_const = spec.link.to_eta(np.full(spec.n, ybar))
    if np.all(np.isfinite(eta_target)):
        b_ls, *_ = np.linalg.lstsq(spec.X, eta_target, rcond=None)
        candidates.append(b_ls)
    if np.all(np.isfinite(eta_const)):
        b_const, *_ = np.linalg.lstsq(spec.X, eta_const, rcond=None)
        if len(candidates) > (1 if opts.init_beta is not None else 0):
            b_ls = candidates[-1]
            for t in (0.75, 0.5, 0.25):
                candidates.append(t * b_ls + (1.0 - t) * b_const)
        candidates.append(b_const)
    for cand in candidates:
        try:
            return solve_state(spec, cand, F, tol=opts.tilt_tol)
        except HullViolation:
            continue
    raise HullViolation(
        "no feasible starting coefficients: every candidate left the support hull"
    )


def _beta_step(state, spec, y, idx, ll, opts):
    """One guarded Newton update in beta; returns (state, ll, improved).

    Near the optimum the quadratic-model gain of a Newton step falls
    below the floating-point resolution of the log likelihood (the
    re-solved tilts alone perturb it by a few ulps of its magnitude),
    so requiring a measured increase would freeze the score a decade
    short of tolerance.  When the predicted gain is inside that noise
    budget, the full Newton step is accepted on the strength of the
    score norm halving instead, and the recorded value keeps the
    previous (equal up to noise) level so the trace stays monotone.
    """
    s = score_beta(state, spec)
    info = fisher_beta(state, spec)
    try:
        delta = np.linalg.solve(info, s)
    except np.linalg.LinAlgError:
        return state, ll, False
    s_norm = float(np.linalg.norm(s))
    predicted = 0.5 * float(s @ delta)
    noise = 64.0 * np.finfo(float).eps * (1.0 + abs(ll))
    t = 1.0
    for _ in range(opts.max_halvings + 1):
        cand = state.beta + t * delta
        try:
            new = solve_state(spec, cand, state.F, tol=opts.tilt_tol, theta0=state.theta)
        except HullViolation:
            new = None
        if new is not None:
            ll_new = _fast_loglik(new, y, idx)
            if ll_new > ll:
                return new, ll_new, True
            if (
                t == 1.0
                and predicted <= noise
                and ll_new >= ll - 8.0 * noise
                and float(np.linalg.norm(score_beta(new, spec))) <= 0.5 * s_norm
            ):
                return new, max(ll, ll_new), True
        t *= 0.5
    return state, ll, False


def _weight_gradient(state: ModelState, y: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Log-likelihood gradient in softmax (log-weight) coordinates.

    With ``tw`` the per-observation tilted weights, ``r`` the residuals
    against the tilted means and ``V`` the tilted variances, the total
    derivative of the log likelihood in the raw weight ``w_k``
    (accounting for the implicit movement of every tilt that keeps the
    mean constraints satisfied) is
    ``[counts_k - sum_i tw_ik (1 + r_i (u_k - mean_i) / V_i)] / w_k``.
    Multiplying by ``w_k`` gives the gradient in softmax coordinates,
    which sums to zero, so no explicit simplex projection is needed.
    Residuals use the tilted means, not the link means, so the identity
    is exact at solver precision.
    """
    u = state.F.atoms
    tw = state.tilted_weights
    r = y - state.mean
    d = u[None, :] - state.mean[:, None]
    factor = 1.0 + (r / state.variance)[:, None] * d
    return counts - np.einsum("ij,ij->j", tw, factor)


def _normalized_softmax_shift(s: np.ndarray) -> np.ndarray:
    mx = s.max()
    return s - (mx + np.log(np.exp(s - mx).sum()))


def _f_step(state, spec, y, idx, counts, ll, eta, opts):
    """Mirror-ascent updates of the weights until they stop paying off.

    Each substep moves the log weights along the softmax gradient and
    renormalizes, with the step scaled by a Barzilai-Borwein estimate
    from the previous substep (a plain adaptive size seeds the first
    one) and halved until the log likelihood improves.  Between beta
    updates the weight subproblem usually needs several such moves;
    batching them here keeps the outer loop short.

    Returns ``(state, ll, improved, eta)`` where ``eta`` seeds the next
    call.
    """
    improved_any = False
    s_prev = grad_prev = None
    for _ in range(max(1, opts.max_weight_substeps)):
        grad = _weight_gradient(state, y, counts)
        s = state.F.log_weights
        if s_prev is not None:
            dg = grad - grad_prev
            denom = float(dg @ dg)
            if denom > 0.0:
                eta = float(np.clip(abs(float((s - s_prev) @ dg)) / denom, 1e-6, 1e4))
            step0 = eta
        else:
            step0 = min(eta * 2.0, 1e3)
        eta_try = step0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            s_new = _normalized_softmax_shift(s + eta_try * grad)
            w_new = np.exp(s_new)
            F_new = ReferenceDistribution(state.F.atoms, w_new / w_new.sum())
            new = solve_state(spec, state.beta, F_new, tol=opts.tilt_tol, theta0=state.theta)
            ll_new = _fast_loglik(new, y, idx)
            if ll_new > ll:
                s_prev, grad_prev = s, grad
                gain = ll_new - ll
                state, ll, eta = new, ll_new, eta_try
                accepted = improved_any = True
                break
            eta_try *= 0.5
        if not accepted or gain < opts.outer_tol:
            break
    return state, ll, improved_any, eta


def _anchor(state: ModelState, spec: GlmSpec, opts: SemiparOptions) -> ModelState:
    """Re-tilt the reference distribution so its mean is the median fitted mean."""
    order = np.argsort(state.mean, kind="stable")
    ref_row = order[state.mean.size // 2]
    target = float(state.mean[ref_row])
    lo, hi = state.F.support_min, state.F.support_max
    if not (lo < target < hi):
        return state
    sol = solve_tilt(state.F, target, tol=opts.tilt_tol, max_iter=200)
    F_anchored = ReferenceDistribution(state.F.atoms, sol.tilted_weights)
    return solve_state(spec, state.beta, F_anchored, tol=opts.tilt_tol, theta0=state.theta - sol.theta)


def fit_semiparametric(spec: GlmSpec, opts: SemiparOptions | None = None) -> SemiparFitResult:
    """Maximize the joint likelihood over coefficients and weights.

    Stops when an outer iteration improves the log likelihood by less
    than ``opts.outer_tol`` while the beta score norm is below
    ``opts.score_tol``.  The returned covariance is the inverse
    information for beta at the fit, which carries no penalty for the
    estimated error distribution because the two parameters are
    orthogonal.

    Raises
    ------
    DegenerateResponse
        If all responses are identical.
    NonConvergence
        If the iteration cap is reached, or both steps stall while the
        score norm is still above tolerance.
    """
    opts = opts or SemiparOptions()
    y = spec.y
    if np.unique(y).size < 2:
        raise DegenerateResponse("all responses are identical")
    if spec.n < spec.q + 2:
        raise ValueError(f"need at least q + 2 = {spec.q + 2} observations, got {spec.n}")

    F0 = opts.reference if opts.reference is not None else ReferenceDistribution.from_sample(y)
    idx = atom_indices(F0, y)
    if np.any(idx < 0):
        raise OffSupportResponse(np.flatnonzero(idx < 0))
    counts = np.bincount(idx, minlength=F0.natoms).astype(float)

    state = _feasible_init(spec, F0, opts)
    ll = _fast_loglik(state, y, idx)
    trace = [ll]
    eta = 1.0 / spec.n
    converged = False
    n_outer = 0
    for n_outer in range(1, opts.max_outer + 1):
        state, ll, improved_b = _beta_step(state, spec, y, idx, ll, opts)
        improved_f = False
        if not opts.fix_reference:
            state, ll, improved_f, eta = _f_step(state, spec, y, idx, counts, ll, eta, opts)
        trace.append(ll)
        gain = trace[-1] - trace[-2]
        s_norm = float(np.linalg.norm(score_beta(state, spec)))
        if gain < opts.outer_tol and s_norm < opts.score_tol:
            converged = True
            break
        if not improved_b and not improved_f:
            break
    if not converged:
        raise NonConvergence(
            f"semiparametric fit stalled after {n_outer} outer iterations "
            f"(score norm {float(np.linalg.norm(score_beta(state, spec))):.3e})"
        )

    if opts.anchor and not opts.fix_reference:
        state = _anchor(state, spec, opts)
    cov = np.linalg.inv(fisher_beta(state, spec))
    return SemiparFitResult(
        beta=state.beta,
        F_hat=state.F,
        loglik_trace=np.asarray(trace),
        converged=True,
        beta_cov=cov,
        n_outer=n_outer,
        score_norm=float(np.linalg.norm(score_beta(state, spec))),
    )


def profile_loglik_beta(spec: GlmSpec, beta, opts: SemiparOptions | None = None) -> float:
    """Log likelihood profiled over the error distribution at fixed beta.

    Runs the weight updates to convergence while the coefficients stay
    put.  Raises :class:`~tiltglm.errors.HullViolation` when some
    fitted mean at this ``beta`` is not strictly inside the hull of the
    observed responses.
    """
    opts = opts or SemiparOptions()
    y = spec.y
    F0 = opts.reference if opts.reference is not None else ReferenceDistribution.from_sample(y)
    idx = atom_indices(F0, y)
    if np.any(idx < 0):
        raise OffSupportResponse(np.flatnonzero(idx < 0))
    counts = np.bincount(idx, minlength=F0.natoms).astype(float)
    state = solve_state(spec, beta, F0, tol=opts.tilt_tol)
    ll = _fast_loglik(state, y, idx)
    eta = 1.0 / spec.n
    tol = min(opts.outer_tol, 1e-10)
    for _ in range(opts.max_profile_iter):
        state, ll_new, improved, eta = _f_step(state, spec, y, idx, counts, ll, eta, opts)
        if not improved or ll_new - ll < tol:
            ll = ll_new
            break
        ll = ll_new
    return ll
