"""Error norms, per-point error tables, derivative sweeps and G/w ablations."""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .constraints import SmoothField, TrialFunction, constant_field
from .network import ConfigurationError
from .problems import ModelRecipe, ProblemSpec, get_problem
from .trainer import TrainingFailure, train, train_config_for

MAX_SWEEP_ORDER = 16


class UnsupportedOperation(ValueError):
    pass


@dataclass
class ErrorReport:
    l2_error: float
    max_error: float
    grid: str
    n_points: int

    def to_dict(self) -> dict:
        return {"l2_error": self.l2_error, "max_error": self.max_error,
                "grid": self.grid, "n_points": self.n_points}


def evaluation_grid(domain, grid_n: int | None = None, offset: bool = False):
    """Uniform evaluation points with quadrature weights.

    Default sizes are 1001 points in 1D and 101x101 in 2D, endpoints included
    with trapezoid weights.  ``offset=True`` uses cell midpoints with equal
    weights instead, which never coincide with a uniform training set.
    Returns ``(points, weights, descriptor)``.
    """
    dim = len(domain)
    n = grid_n or (1001 if dim == 1 else 101)
    if n < 2:
        raise ConfigurationError("evaluation grid needs at least 2 points per axis")
    axes, wts = [], []
    for a, b in domain:
        if offset:
            h = (b - a) / n
            axes.append(a + h * (np.arange(n) + 0.5))
            wts.append(np.full(n, h))
        else:
            h = (b - a) / (n - 1)
            w = np.full(n, h)
            w[0] = w[-1] = 0.5 * h
            axes.append(np.linspace(a, b, n))
            wts.append(w)
    kind = "midpoint" if offset else "trapezoid"
    if dim == 1:
        return axes[0][:, None], wts[0], f"{kind}:{n}"
    X, Y = np.meshgrid(*axes, indexing="ij")
    W = np.outer(wts[0], wts[1])
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel(), f"{kind}:{n}x{n}"


def weighted_rms(values, weights, points) -> float:
    """``sqrt(sum w v^2 / sum w)``, summed in lexicographic point order.

    Sorting first makes the result bit-identical under any permutation of the
    input rows.
    """
    points = np.asarray(points, dtype=float).reshape(len(weights), -1)
    order = np.lexsort(points.T[::-1])
    v = np.asarray(values, dtype=float)[order]
    w = np.asarray(weights, dtype=float)[order]
    return float(np.sqrt(np.sum(w * v * v) / np.sum(w)))


def l2_error(approx: Callable, exact: Callable | None, domain, grid_n: int | None = None,
             offset: bool = False) -> ErrorReport:
    """Domain-averaged L2 error ``sqrt(1/|domain| * integral (u* - u)^2)``."""
    if exact is None:
        raise UnsupportedOperation("no closed-form solution to compare against")
    pts, w, desc = evaluation_grid(domain, grid_n, offset)
    err = np.asarray(exact(pts), dtype=float) - np.asarray(approx(pts), dtype=float)
    return ErrorReport(weighted_rms(err, w, pts), float(np.max(np.abs(err))), desc, len(pts))


def problem_error(trial: TrialFunction, problem: ProblemSpec, grid_n: int | None = None,
                  offset: bool = False) -> ErrorReport:
    exact = problem.analytic if problem.analytic_jet is not None else None
    return l2_error(trial, exact, problem.domain, grid_n, offset)


def _order0(points, dim):
    points = np.asarray(points, dtype=float).reshape(-1, dim)
    return points, [ad.jet_const(points[:, i], 0) for i in range(dim)]


def _vals(j, n):
    return np.broadcast_to(np.asarray(j.coeffs[0], dtype=float), (n,))


def error_table(trial: TrialFunction, problem: ProblemSpec, points) -> tuple[list[str], np.ndarray]:
    """Per-point comparison of model and closed form.

    1D tables also carry the bulk term ``w N`` and the reduced solution ``N``
    next to their exact counterparts ``u* - G`` and ``(u* - G) / w``; the
    latter is undefined (nan) where ``w = 0``.
    """
    if problem.analytic_jet is None:
        raise UnsupportedOperation(f"{problem.name} has no closed-form solution")
    pts, x = _order0(points, problem.dim)
    n = len(pts)
    exact = _vals(problem.analytic_jet(x), n)
    model = _vals(trial.eval(x), n)
    g = _vals(trial.g_term(x), n)
    w = _vals(trial.weight(x), n)
    bulk = _vals(trial.bulk(x), n)
    names = ["x", "y"][: problem.dim]
    cols = [pts[:, i] for i in range(problem.dim)]
    header = names + ["exact", "model", "error", "bulk", "bulk_exact"]
    cols += [exact, model, model - exact, bulk, exact - g]
    if problem.dim == 1:
        reduced = _vals(trial.reduced(x), n)
        with np.errstate(divide="ignore", invalid="ignore"):
            reduced_exact = np.where(w != 0, (exact - g) / np.where(w != 0, w, 1.0), np.nan)
        header += ["reduced", "reduced_exact"]
        cols += [reduced, reduced_exact]
    return header, np.column_stack(cols)


def error_distribution(trial: TrialFunction, problem: ProblemSpec, grid_n: int | None = None,
                       offset: bool = False) -> tuple[list[str], np.ndarray]:
    pts, _, _ = evaluation_grid(problem.domain, grid_n, offset)
    return error_table(trial, problem, pts)


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


# -- derivatives ---------------------------------------------------------------


@dataclass
class DerivativeSweep:
    orders: list[int]
    rel_l2_errors: list[float]
    abs_l2_errors: list[float]
    grid: str

    def rows(self):
        return [(k, r, a) for k, r, a in zip(self.orders, self.rel_l2_errors, self.abs_l2_errors)]

    header = ("order", "rel_l2_error", "abs_l2_error")


def derivative_sweep(trial, problem: ProblemSpec, K: int, grid_n: int | None = None) -> DerivativeSweep:
    """Relative L2 error of ``d^k u / dx^k`` against the closed form, for ``k = 1..K``.

    ``K = 0`` compares values only.  ``trial`` is a :class:`TrialFunction` or
    any function of input jets.
    """
    if problem.dim != 1:
        raise UnsupportedOperation("derivative sweeps are defined for 1D problems only")
    if problem.analytic_jet is None:
        raise UnsupportedOperation(f"{problem.name} has no closed-form solution")
    if not 0 <= K <= MAX_SWEEP_ORDER:
        raise ConfigurationError(f"derivative order must be in 0..{MAX_SWEEP_ORDER}, got {K}")
    pts, w, desc = evaluation_grid(problem.domain, grid_n)
    x = [ad.jet_var(pts[:, 0], max(K, 1))]
    U = trial.eval(x) if isinstance(trial, TrialFunction) else trial(x)
    A = problem.analytic_jet(x)
    orders = list(range(1, K + 1)) if K else [0]
    rel, absl = [], []
    for k in orders:
        du = np.broadcast_to(np.asarray(ad.derivative(U, k), dtype=float), (len(pts),))
        da = np.broadcast_to(np.asarray(ad.derivative(A, k), dtype=float), (len(pts),))
        e = weighted_rms(du - da, w, pts)
        ref = weighted_rms(da, w, pts)
        absl.append(e)
        rel.append(e / ref if ref > 0 else e)
    return DerivativeSweep(orders, rel, absl, desc)


# -- ablations -----------------------------------------------------------------


def _variant_model(problem: ProblemSpec, variant: str) -> ModelRecipe:
    base = problem.default_model
    if variant == "g-const":
        y0 = problem.constants.get("y0", 1.0)
        return ModelRecipe(constant_field(y0), base.weight, base.widths, base.collocation)
    if variant == "w-linear":
        return ModelRecipe(base.g_term, SmoothField(1, lambda x: x[0] * 1.0, "x"), base.widths, base.collocation)
    if variant == "w-squared":
        return ModelRecipe(base.g_term, SmoothField(1, lambda x: x[0] * x[0] * (1.0 - x[0]), "x^2 (1 - x)"),
                           base.widths, base.collocation)
    raise ConfigurationError(f"unknown variant {variant!r}")


# variant -> problem it applies to
VARIANTS = {"g-const": "integral", "w-linear": "integral", "w-squared": "boundary-layer"}


@dataclass
class AblationTable:
    problem: str
    variant: str
    seeds: list[int]
    baseline_errors: list[float]
    variant_errors: list[float]
    baseline_labels: tuple[str, str] = ("", "")
    variant_labels: tuple[str, str] = ("", "")
    failed: list[str] = field(default_factory=list)

    @property
    def median_baseline(self) -> float:
        return statistics.median(self.baseline_errors)

    @property
    def median_variant(self) -> float:
        return statistics.median(self.variant_errors)

    @property
    def ratio(self) -> float:
        return self.median_variant / self.median_baseline

    header = ("seed", "baseline_l2_error", "variant_l2_error", "ratio")

    def rows(self):
        out = [(s, b, v, v / b) for s, b, v in zip(self.seeds, self.baseline_errors, self.variant_errors)]
        out.append(("median", self.median_baseline, self.median_variant, self.ratio))
        return out


def _train_error(cfg, problem, model):
    try:
        trial, _ = train(cfg, model)
        failed = False
    except TrainingFailure as exc:
        trial, failed = exc.trial, True
    return problem_error(trial, problem).l2_error, failed


def ablation_run(problem_name: str, variant: str, seeds: Sequence[int], problem_params: dict | None = None,
                 baseline_errors: Sequence[float] | None = None, **train_overrides) -> AblationTable:
    """Train the default model and the variant on each seed and compare L2 errors.

    Variants: ``g-const`` (boundary term replaced by the constant initial value)
    and ``w-linear`` (weight ``x``) for the integral problem, ``w-squared``
    (weight ``x^2 (1 - x)``) for the boundary layer.  Each seed is a single
    attempt (no retries) so both sides see the same initializations.

    ``baseline_errors`` (one per seed, from single-attempt runs of the default
    model with the same overrides) skips retraining the baseline.
    """
    if VARIANTS.get(variant) != problem_name:
        raise ConfigurationError(
            f"variant {variant!r} does not apply to {problem_name!r}; valid pairs: "
            + ", ".join(f"{p}/{v}" for v, p in VARIANTS.items()))
    if not seeds:
        raise ConfigurationError("need at least one seed")
    if baseline_errors is not None and len(baseline_errors) != len(seeds):
        raise ConfigurationError("need one baseline error per seed")
    problem_params = dict(problem_params or {})
    problem = get_problem(problem_name, **problem_params)
    alt = _variant_model(problem, variant)
    base_errors, var_errors, failed = [], [], []
    for i, seed in enumerate(seeds):
        cfg = train_config_for(problem_name, seed=seed, retries=0,
                               problem_params=problem_params, **train_overrides)
        if baseline_errors is None:
            e, f = _train_error(cfg, problem, None)
            if f:
                failed.append(f"baseline:{seed}")
        else:
            e = float(baseline_errors[i])
        base_errors.append(e)
        e, f = _train_error(cfg, problem, alt)
        var_errors.append(e)
        if f:
            failed.append(f"variant:{seed}")
    base = problem.default_model
    return AblationTable(problem_name, variant, list(seeds), base_errors, var_errors,
                         (base.g_term.label, base.weight.label), (alt.g_term.label, alt.weight.label), failed)
