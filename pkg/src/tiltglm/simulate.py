"""Replicated synthetic-data comparisons of competing estimators.

A scenario bundles a data-generating process with its true
coefficients and an oracle family.  :func:`run_scenario` replays it
``reps`` times with per-replicate generators derived deterministically
from ``(master_seed, replicate)``, fits each requested estimator, and
reports per-parameter relative root mean-square errors, i.e. RMSE
divided by the absolute true parameter value.

The built-in scenarios are synthetic analogues of a published
exponential / Poisson comparison; their designs are fixtures of this
package, chosen so that every true coefficient is nonzero and the
efficiency ratios of the semiparametric and oracle fits can be read
off directly.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import TiltGlmError, TooManyFailures, ZeroTrueParameter
from .links import get_link
from .model import GlmSpec
from .parametric import family_from_name, fit_mle, fit_quasi, variance_from_name
from .semiparametric import fit_semiparametric

__all__ = [
    "Scenario",
    "SimReport",
    "ESTIMATOR_NAMES",
    "relative_rmse",
    "run_scenario",
    "builtin_scenarios",
    "get_scenario",
]


@dataclass(frozen=True)
class Scenario:
    """A named data-generating process with known truth."""

    name: str
    n: int
    true_beta: np.ndarray
    parameter_labels: tuple[str, ...]
    oracle_family: str
    link: str
    dgp: Callable[[np.random.Generator, int, np.ndarray], GlmSpec]

    def simulate(self, rng: np.random.Generator) -> GlmSpec:
        return self.dgp(rng, self.n, np.asarray(self.true_beta, dtype=float))


def _exponential_dgp(rng: np.random.Generator, n: int, beta: np.ndarray) -> GlmSpec:
    # balanced two-group design plus a uniform regressor on [0, 5]
    g = np.zeros(n)
    g[n // 2 :] = 1.0
    z = 5.0 * rng.uniform(size=n)
    X = np.column_stack([np.ones(n), g, z])
    mu = np.exp(X @ beta)
    y = rng.exponential(scale=mu)
    return GlmSpec(X, y, get_link("log"))


def _poisson_dgp(rng: np.random.Generator, n: int, beta: np.ndarray) -> GlmSpec:
    x1 = np.zeros(n)
    x1[n // 2 :] = 1.0
    x2 = rng.standard_normal(n)
    x3 = rng.standard_normal(n)
    X = np.column_stack([np.ones(n), x1, x2, x3])
    mu = np.exp(X @ beta)
    y = rng.poisson(lam=mu).astype(float)
    return GlmSpec(X, y, get_link("log"))


def _make_exponential(n: int) -> Scenario:
    return Scenario(
        name=f"exponential-n{n}",
        n=n,
        true_beta=np.array([4.0, 1.0, -0.3]),
        parameter_labels=("intercept", "group", "slope"),
        oracle_family="exponential",
        link="log",
        dgp=_exponential_dgp,
    )


def _make_poisson(n: int) -> Scenario:
    return Scenario(
        name=f"poisson-n{n}",
        n=n,
        true_beta=np.array([1.0, 0.5, 0.2, -0.5]),
        parameter_labels=("intercept", "x1", "x2", "x3"),
        oracle_family="poisson",
        link="log",
        dgp=_poisson_dgp,
    )


_BUILTINS = {
    "exponential-n33": _make_exponential(33),
    "exponential-n66": _make_exponential(66),
    "poisson-n44": _make_poisson(44),
}


def builtin_scenarios() -> tuple[str, ...]:
    return tuple(sorted(_BUILTINS))


def get_scenario(name: str) -> Scenario:
    """Resolve a scenario name; sizes other than the built-ins are allowed."""
    if name in _BUILTINS:
        return _BUILTINS[name]
    for prefix, maker in (("exponential-n", _make_exponential), ("poisson-n", _make_poisson)):
        if name.startswith(prefix):
            tail = name[len(prefix) :]
            if tail.isdigit() and int(tail) >= 6:
                return maker(int(tail))
    raise KeyError(f"unknown scenario {name!r}; available: {list(builtin_scenarios())}")


def relative_rmse(estimates, true_beta) -> np.ndarray:
    """Componentwise RMSE of the estimates divided by |true value|."""
    est = np.asarray(estimates, dtype=float)
    if est.ndim != 2 or est.shape[0] < 2:
        raise ValueError("need at least two estimate vectors")
    true_beta = np.asarray(true_beta, dtype=float).ravel()
    if np.any(true_beta == 0.0):
        raise ZeroTrueParameter("relative RMSE is undefined for zero true parameters")
    rmse = np.sqrt(np.mean((est - true_beta[None, :]) ** 2, axis=0))
    return rmse / np.abs(true_beta)


ESTIMATOR_NAMES = {
    "sp": "semiparametric",
    "mle": "mle",
    "quasi": "quasi-constant",
}


def _fit_sp(spec: GlmSpec, scenario: Scenario) -> np.ndarray:
    return fit_semiparametric(spec).beta


def _fit_mle(spec: GlmSpec, scenario: Scenario) -> np.ndarray:
    return fit_mle(spec, family_from_name(scenario.oracle_family)).beta


def _fit_quasi_constant(spec: GlmSpec, scenario: Scenario) -> np.ndarray:
    return fit_quasi(spec, variance_from_name("constant")).beta


_ESTIMATORS: dict[str, Callable[[GlmSpec, Scenario], np.ndarray]] = {
    "sp": _fit_sp,
    "mle": _fit_mle,
    "quasi": _fit_quasi_constant,
}


@dataclass(frozen=True, eq=False)
class SimReport:
    """Per-parameter relative RMSE of each estimator over one scenario."""

    scenario: str
    reps: int
    seed: int
    estimators: tuple[str, ...]
    parameter_labels: tuple[str, ...]
    rrmse: dict[str, np.ndarray]
    ratio: np.ndarray | None
    n_used: int
    failures: dict[str, int]

    def to_csv(self) -> str:
        """Machine-readable long format, one row per (parameter, estimator)."""
        buf = io.StringIO()
        buf.write("scenario,parameter,estimator,rrmse,ratio,reps,failures\n")
        for j, label in enumerate(self.parameter_labels):
            for key in self.estimators:
                ratio = ""
                if key == "sp" and self.ratio is not None:
                    ratio = f"{self.ratio[j]:.10g}"
                buf.write(
                    f"{self.scenario},{label},{ESTIMATOR_NAMES[key]},"
                    f"{self.rrmse[key][j]:.10g},{ratio},{self.reps},{self.failures[key]}\n"
                )
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table, one row per parameter, one column per estimator."""
        headers = ["scenario", "parameter"] + [ESTIMATOR_NAMES[k] for k in self.estimators]
        if self.ratio is not None:
            headers.append("sp/mle")
        rows = []
        for j, label in enumerate(self.parameter_labels):
            row = [self.scenario, label]
            row += [f"{self.rrmse[k][j]:.3f}" for k in self.estimators]
            if self.ratio is not None:
                row.append(f"{self.ratio[j]:.3f}")
            rows.append(row)
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
        for row in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        meta = (
            f"replications used: {self.n_used} of {self.reps}"
            f" (failures: "
            + ", ".join(f"{ESTIMATOR_NAMES[k]}={self.failures[k]}" for k in self.estimators)
            + f"); master seed: {self.seed}"
        )
        return "\n".join(lines + [meta]) + "\n"


def _one_replicate(scenario, master_seed, r, estimators, impls):
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, r)))
    spec = scenario.simulate(rng)
    out: dict[str, np.ndarray | None] = {}
    for key in estimators:
        try:
            out[key] = np.asarray(impls[key](spec, scenario), dtype=float)
        except TiltGlmError:
            out[key] = None
    return out


def run_scenario(
    scenario: Scenario,
    reps: int,
    master_seed: int = 42,
    estimators: tuple[str, ...] = ("sp", "mle"),
    threads: int = 1,
    max_failure_share: float = 0.05,
    _impls: dict[str, Callable[[GlmSpec, Scenario], np.ndarray]] | None = None,
) -> SimReport:
    """Fit every estimator on every replicate and summarize accuracy.

    Replicate ``r`` draws its data from a generator seeded with
    ``(master_seed, r)``, so the report is a pure function of its
    arguments regardless of ``threads``.  Replicates where any
    requested estimator fails are excluded from all estimators (the
    comparison stays paired) and counted in the report; more than
    ``max_failure_share`` failures for any estimator raises
    :class:`~tiltglm.errors.TooManyFailures`.
    """
    if reps < 2:
        raise ValueError("need at least two replicates")
    unknown = [e for e in estimators if e not in ESTIMATOR_NAMES]
    if unknown:
        raise KeyError(f"unknown estimators {unknown}; available: {sorted(ESTIMATOR_NAMES)}")
    impls = dict(_ESTIMATORS)
    if _impls:
        impls.update(_impls)

    def task(r: int):
        return _one_replicate(scenario, master_seed, r, estimators, impls)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, range(reps)))
    else:
        results = [task(r) for r in range(reps)]

    failures = {key: sum(1 for res in results if res[key] is None) for key in estimators}
    for key, count in failures.items():
        if count > max_failure_share * reps:
            raise TooManyFailures(
                f"estimator {ESTIMATOR_NAMES[key]} failed on {count}/{reps} replicates"
            )
    kept = [res for res in results if all(res[key] is not None for key in estimators)]
    rrmse = {
        key: relative_rmse([res[key] for res in kept], scenario.true_beta)
        for key in estimators
    }
    ratio = None
    if "sp" in estimators and "mle" in estimators:
        ratio = rrmse["sp"] / rrmse["mle"]
    return SimReport(
        scenario=scenario.name,
        reps=reps,
        seed=int(master_seed),
        estimators=tuple(estimators),
        parameter_labels=scenario.parameter_labels,
        rrmse=rrmse,
        ratio=ratio,
        n_used=len(kept),
        failures=failures,
    )
