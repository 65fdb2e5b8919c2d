"""Command-line front end: fit models on CSV data, verify, simulate.

Commands
--------
fit        fit a model to a CSV file and write a structured report
verify     run randomized numerical checks (projection nullity, Fisher
           cross blocks, tilt round trips, score-gradient agreement)
simulate   run a named scenario and write CSV plus an aligned table
scenarios  list the built-in scenario names

Exit codes: 0 ok, 1 input error, 2 non-convergence, 3 verification
failure.  All commands are deterministic given their flags, including
``--seed``; repeated invocations produce identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass

import numpy as np

from .errors import (
    DatasetError,
    InvalidResponse,
    NonConvergence,
    TiltGlmError,
    TooManyFailures,
)
from .links import LINKS, get_link
from .model import GlmSpec
from .orthogonality import (
    check_projection_nullity,
    fisher_cross_block,
    random_configuration,
    score_gradient_deviation,
    tilt_roundtrip_deviation,
)
from .parametric import family_from_name, fit_mle, fit_quasi, variance_from_name
from .semiparametric import fit_semiparametric
from .simulate import builtin_scenarios, get_scenario, run_scenario

__all__ = ["main"]

_FAMILY_CHOICES = ("normal", "poisson", "gamma", "exponential", "semiparametric", "quasi")


@dataclass(frozen=True)
class Dataset:
    """A rectangular, fully numeric table with named columns."""

    columns: tuple[str, ...]
    values: np.ndarray

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise DatasetError(
                f"no column named {name!r}; available: {list(self.columns)}"
            ) from None
        return self.values[:, j]


def load_dataset(path: str) -> Dataset:
    """Read a CSV file with a header row; any missing or non-numeric cell is an error."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetError(f"cannot open {path!r}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path!r} is empty") from None
        columns = tuple(name.strip() for name in header)
        if len(set(columns)) != len(columns):
            raise DatasetError(f"duplicate column names in {path!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise DatasetError(f"{path!r} line {lineno}: expected {len(columns)} cells")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise DatasetError(
                    f"{path!r} line {lineno}: non-numeric or missing value"
                ) from None
    if not rows:
        raise DatasetError(f"{path!r} has no data rows")
    return Dataset(columns=columns, values=np.asarray(rows, dtype=float))


def _build_design(ds: Dataset, response: str, covariates: list[str], intercept: bool):
    y = ds.column(response)
    for name in covariates:
        if name == response:
            raise DatasetError(f"response column {response!r} cannot also be a covariate")
    cols = [ds.column(name) for name in covariates]
    names = list(covariates)
    if intercept:
        cols.insert(0, np.ones(y.size))
        names.insert(0, "intercept")
    if not cols:
        raise DatasetError("no covariates and no intercept: the design is empty")
    return np.column_stack(cols), y, names


def _default_link(family: str, variance: str, y: np.ndarray) -> str:
    if family == "normal":
        return "identity"
    if family in ("poisson", "gamma", "exponential"):
        return "log"
    if family == "semiparametric":
        return "log" if np.all(y > 0) else "identity"
    # quasi: follow the variance function's natural scale
    return "identity" if variance == "constant" else "log"


def _fmt(v) -> str:
    return repr(float(v))


def _fit_report_lines(ns, names, spec, beta, cov, extra: list[str]) -> list[str]:
    se = np.sqrt(np.diag(cov))
    lines = ["fit_report"]
    lines.append(f"  family = {ns.family}")
    lines.append(f"  link = {spec.link.name}")
    lines.append(f"  n = {spec.n}")
    lines.append(f"  q = {spec.q}")
    lines += extra
    lines.append("  coefficients")
    for j, name in enumerate(names):
        lines.append(f"    [{j}] name={name} estimate={_fmt(beta[j])} se={_fmt(se[j])}")
    lines.append("  covariance")
    for j, name in enumerate(names):
        row = " ".join(_fmt(cov[j, k]) for k in range(len(names)))
        lines.append(f"    row {name}: {row}")
    return lines


def _emit(ns, text: str) -> None:
    if ns.out:
        with open(ns.out, "w") as fh:
            fh.write(text)
        if not ns.quiet:
            print(f"wrote {ns.out}")
    else:
        print(text, end="")


def cmd_fit(ns) -> int:
    ds = load_dataset(ns.data)
    covariates = [c.strip() for c in ns.covariates.split(",") if c.strip()] if ns.covariates else [
        c for c in ds.columns if c != ns.response
    ]
    X, y, names = _build_design(ds, ns.response, covariates, not ns.no_intercept)
    link_name = ns.link or _default_link(ns.family, ns.variance, y)
    spec = GlmSpec(X, y, get_link(link_name))

    extra: list[str] = []
    if ns.family == "semiparametric":
        fit = fit_semiparametric(spec)
        beta, cov = fit.beta, fit.beta_cov
        extra.append(f"  converged = {str(fit.converged).lower()}")
        extra.append(f"  iterations = {fit.n_outer}")
        extra.append(f"  loglik = {_fmt(fit.loglik)}")
        extra.append(f"  score_norm = {_fmt(fit.score_norm)}")
        lines = _fit_report_lines(ns, names, spec, beta, cov, extra)
        lines.append("  reference_distribution")
        for atom, weight in zip(fit.F_hat.atoms, fit.F_hat.weights):
            lines.append(f"    atom={_fmt(atom)} weight={_fmt(weight)}")
    elif ns.family == "quasi":
        fit = fit_quasi(spec, variance_from_name(ns.variance))
        beta, cov = fit.beta, fit.cov
        extra.append(f"  variance_function = {ns.variance}")
        extra.append(f"  converged = {str(fit.converged).lower()}")
        extra.append(f"  iterations = {fit.n_iter}")
        extra.append(f"  score_norm = {_fmt(fit.score_norm)}")
        lines = _fit_report_lines(ns, names, spec, beta, cov, extra)
    else:
        family = family_from_name(ns.family, ns.nuisance)
        fit = fit_mle(spec, family)
        beta, cov = fit.beta, fit.cov
        extra.append(f"  converged = {str(fit.converged).lower()}")
        extra.append(f"  iterations = {fit.n_iter}")
        extra.append(f"  loglik = {_fmt(fit.loglik)}")
        extra.append(f"  score_norm = {_fmt(fit.score_norm)}")
        if fit.nuisance is not None:
            extra.append(f"  nuisance = {_fmt(fit.nuisance)}")
        lines = _fit_report_lines(ns, names, spec, beta, cov, extra)
    _emit(ns, "\n".join(lines) + "\n")
    return 0


def _verify_projection(ns, rng) -> tuple[str, bool]:
    worst = -1.0
    scale = ns.corrupt_variance
    for _ in range(ns.configs):
        state, spec = random_configuration(rng)
        report = check_projection_nullity(state, spec, tol=ns.tol, variance_scale=scale)
        worst = max(worst, report.max_abs)
    ok = worst <= ns.tol
    line = (
        f"check=projection configs={ns.configs} variance_scale={scale:g} "
        f"max_abs={worst:.6e} tol={ns.tol:g} status={'pass' if ok else 'fail'}"
    )
    return line, ok


def _verify_tilt(ns, rng) -> tuple[str, bool]:
    n_pairs = 10 * ns.configs
    worst_mean, worst_theta = tilt_roundtrip_deviation(rng, n_pairs=n_pairs)
    ok = worst_mean <= 1e-10 and worst_theta <= 1e-8
    line = (
        f"check=tilt pairs={n_pairs} max_mean_resid={worst_mean:.6e} "
        f"max_theta_err={worst_theta:.6e} tol_mean=1e-10 tol_theta=1e-08 "
        f"status={'pass' if ok else 'fail'}"
    )
    return line, ok


def _verify_score(ns, rng) -> tuple[str, bool]:
    n_cfg = max(1, ns.configs // 10)
    worst = -1.0
    for _ in range(n_cfg):
        state, spec = random_configuration(rng)
        worst = max(worst, score_gradient_deviation(state, spec))
    ok = worst <= 1e-5
    line = (
        f"check=score configs={n_cfg} max_rel_err={worst:.6e} tol=1e-05 "
        f"status={'pass' if ok else 'fail'}"
    )
    return line, ok


def _verify_fisher(ns, rng) -> tuple[str, bool]:
    n = 8
    child = rng.integers(2**63)
    X = np.column_stack([np.ones(n), np.linspace(-1.0, 1.0, n)])
    cases = (
        ("normal", family_from_name("normal", 1.0), "identity", np.array([0.5, -0.25])),
        ("gamma", family_from_name("gamma", 2.0), "log", np.array([0.3, 0.4])),
    )
    ok = True
    parts = []
    for label, family, link_name, beta in cases:
        res = fisher_cross_block(
            family, X, get_link(link_name), beta, n_mc=ns.mc, seed=int(child)
        )
        good = res.within(3.0)
        ok = ok and good
        parts.append(f"{label}_max_abs_z={float(np.max(np.abs(res.z))):.3f}")
    line = (
        f"check=fisher n_mc={ns.mc} " + " ".join(parts) + f" gate=3sigma "
        f"status={'pass' if ok else 'fail'}"
    )
    return line, ok


_CHECKS = {
    "projection": _verify_projection,
    "tilt": _verify_tilt,
    "score": _verify_score,
    "fisher": _verify_fisher,
}


def cmd_verify(ns) -> int:
    names = [c.strip() for c in ns.checks.split(",") if c.strip()]
    unknown = [c for c in names if c not in _CHECKS]
    if unknown:
        raise DatasetError(f"unknown checks {unknown}; available: {sorted(_CHECKS)}")
    rng = np.random.default_rng(ns.seed)
    lines = []
    all_ok = True
    for name in names:
        line, ok = _CHECKS[name](ns, rng)
        lines.append(line)
        all_ok = all_ok and ok
    text = "\n".join(lines) + "\n"
    _emit(ns, text)
    return 0 if all_ok else 3


def cmd_simulate(ns) -> int:
    try:
        scenario = get_scenario(ns.scenario)
    except KeyError:
        raise DatasetError(
            f"unknown scenario {ns.scenario!r}; available: {list(builtin_scenarios())}"
        ) from None
    estimators = tuple(e.strip() for e in ns.estimators.split(",") if e.strip())
    report = run_scenario(
        scenario, ns.reps, master_seed=ns.seed, estimators=estimators, threads=ns.threads
    )
    base = ns.out or f"sim-{scenario.name}-reps{ns.reps}-seed{ns.seed}"
    csv_path, txt_path = base + ".csv", base + ".txt"
    with open(csv_path, "w") as fh:
        fh.write(report.to_csv())
    with open(txt_path, "w") as fh:
        fh.write(report.to_text())
    if not ns.quiet:
        print(report.to_text(), end="")
        print(f"wrote {csv_path} and {txt_path}")
    return 0


def cmd_scenarios(ns) -> int:
    lines = []
    for name in builtin_scenarios():
        sc = get_scenario(name)
        beta = ", ".join(_fmt(b) for b in sc.true_beta)
        lines.append(
            f"{name}: n={sc.n} family={sc.oracle_family} link={sc.link} "
            f"parameters=[{', '.join(sc.parameter_labels)}] true_beta=[{beta}]"
        )
    _emit(ns, "\n".join(lines) + "\n")
    return 0


def _threads(value: str) -> int:
    if value == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("--threads takes an integer or 'auto'") from None
    if n < 1:
        raise argparse.ArgumentTypeError("--threads must be at least 1")
    return n


class _Parser(argparse.ArgumentParser):
    # usage problems are input errors: exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tiltglm", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=42, help="master RNG seed")
    parser.add_argument("--threads", type=_threads, default=1, help="worker threads or 'auto'")
    parser.add_argument("--out", default=None, help="output path (fit/verify) or prefix (simulate)")
    parser.add_argument("--quiet", action="store_true", help="suppress informational output")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", parents=[], help="fit a model to CSV data")
    p_fit.add_argument("--data", required=True, help="CSV file with a header row")
    p_fit.add_argument("--response", required=True, help="response column name")
    p_fit.add_argument("--covariates", default=None, help="comma list; default: all other columns")
    p_fit.add_argument("--family", required=True, choices=_FAMILY_CHOICES)
    p_fit.add_argument("--link", default=None, choices=sorted(LINKS))
    p_fit.add_argument("--variance", default="constant",
                       choices=("constant", "mean", "mean-squared"),
                       help="variance function for --family quasi")
    p_fit.add_argument("--nuisance", type=float, default=None,
                       help="fix the normal variance or gamma shape instead of profiling")
    p_fit.add_argument("--no-intercept", action="store_true")
    p_fit.set_defaults(func=cmd_fit)

    p_ver = sub.add_parser("verify", help="run randomized numerical checks")
    p_ver.add_argument("--checks", default="projection,tilt,score,fisher",
                       help="comma subset of projection,tilt,score,fisher")
    p_ver.add_argument("--configs", type=int, default=1000)
    p_ver.add_argument("--tol", type=float, default=1e-10)
    p_ver.add_argument("--mc", type=int, default=100_000, help="Monte Carlo draws for fisher")
    p_ver.add_argument("--corrupt-variance", type=float, default=1.0, dest="corrupt_variance",
                       help="scale the projector variance (negative control)")
    p_ver.set_defaults(func=cmd_verify)

    p_sim = sub.add_parser("simulate", help="run a replicated scenario")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--reps", type=int, default=500)
    p_sim.add_argument("--estimators", default="sp,mle", help="comma subset of sp,mle,quasi")
    p_sim.set_defaults(func=cmd_simulate)

    p_ls = sub.add_parser("scenarios", help="list built-in scenarios")
    p_ls.set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return ns.func(ns)
    except (DatasetError, InvalidResponse, KeyError, ValueError) as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    except (NonConvergence, TooManyFailures) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TiltGlmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
