"""The four benchmark boundary-value problems.

Each problem bundles its residual operator (built on jets, so it applies
equally to a trial function or to a closed-form solution), its Dirichlet
data, its closed-form solution and the default trial-function recipe.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Jet, derivative
from .constraints import (SmoothField, TrialFunction, exp_weight_halfline,
                          hermite_weight_interval, tensor_weight_box)
from .network import ConfigurationError

PI = math.pi


class DomainError(ValueError):
    pass


class RootBracketingError(ValueError):
    pass


class UnknownProblem(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unknown problem {self.name!r}; valid names: {', '.join(PROBLEMS)}"


@dataclass(frozen=True)
class ModelRecipe:
    g_term: SmoothField
    weight: SmoothField
    widths: tuple[int, ...]
    collocation: str


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dim: int
    domain: tuple[tuple[float, float], ...]
    order: int
    residual_op: Callable[[Jet, Sequence[Jet]], object]
    boundary_data: Callable[[np.ndarray], np.ndarray]
    boundary_sampler: Callable[[int, int], np.ndarray]
    default_model: ModelRecipe
    analytic_jet: Callable[[Sequence[Jet]], Jet] | None = None
    constants: dict = field(default_factory=dict)

    def seed(self, points, order: int | None = None) -> list[Jet]:
        """Input jets at ``points`` (shape ``(n, dim)``) carrying derivatives to ``order``."""
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        order = self.order if order is None else order
        if self.dim == 1:
            return [ad.jet_var(points[:, 0], order)]
        return ad.directional_seeds(points, order)

    def residual(self, u, points, params=None):
        """Residual at ``points`` of ``u``: a :class:`TrialFunction` or any jet function."""
        xs = self.seed(points)
        if isinstance(u, TrialFunction):
            U = u.eval(xs, params)
        else:
            U = u(xs)
        return self.residual_op(U, xs)

    def analytic(self, points) -> np.ndarray:
        if self.analytic_jet is None:
            raise NotImplementedError(f"{self.name} has no closed-form solution")
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        x = [ad.jet_const(points[:, i], 0) for i in range(self.dim)]
        return np.broadcast_to(np.asarray(self.analytic_jet(x).coeffs[0], dtype=float),
                               (len(points),)).copy()

    def interior_grid(self) -> np.ndarray:
        """101 interior points in 1D, a 21x21 interior grid in 2D."""
        if self.dim == 1:
            (a, b), = self.domain
            return np.linspace(a, b, 103)[1:-1, None]
        axes = [np.linspace(a, b, 23)[1:-1] for a, b in self.domain]
        X, Y = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def boundary_points(self, n: int, seed: int = 0) -> np.ndarray:
        return self.boundary_sampler(n, seed)


def _cycle_points(values: Sequence[float]):
    def sampler(n, seed=0):
        return np.resize(np.asarray(values, dtype=float), n)[:, None]
    return sampler


def _square_edges(box):
    (x0, x1), (y0, y1) = box

    def sampler(n, seed=0):
        rng = np.random.default_rng(seed)
        corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]], dtype=float)
        m = max(n - 4, 0)
        edge = rng.integers(0, 4, size=m)
        t = rng.uniform(0.0, 1.0, size=m)
        xs = np.where(edge < 2, x0 + t * (x1 - x0), np.where(edge == 2, x0, x1))
        ys = np.where(edge == 0, y0, np.where(edge == 1, y1, y0 + t * (y1 - y0)))
        return np.vstack([corners, np.column_stack([xs, ys])])[:n]

    return sampler


# -- definite integral: y' = cos x, y(0) = y0 on [0, 10] ---------------------


def problem_integral(y0: float = 1.0) -> ProblemSpec:
    def residual_op(U, xs):
        return derivative(U, 1) - np.cos(xs[0].coeffs[0])

    g_term = SmoothField(1, lambda x: y0 * ad.exp(-x[0]), f"{y0:g} exp(-x)")
    return ProblemSpec(
        name="integral",
        dim=1,
        domain=((0.0, 10.0),),
        order=1,
        residual_op=residual_op,
        boundary_data=lambda p: np.full(len(p), y0),
        boundary_sampler=_cycle_points([0.0]),
        default_model=ModelRecipe(g_term, exp_weight_halfline(0.0), (1, 20, 20, 1), "uniform:1000"),
        analytic_jet=lambda x: 1.0 * y0 + ad.sin(x[0]),
        constants={"y0": y0},
    )


def reduced_solution_reference_integral(x, y0: float = 1.0):
    """Bounded reduced solution ``y0 + sin x / (1 - exp(-x))`` of the integral problem.

    Defined for ``x > 0``; its limit at ``0+`` is :data:`REDUCED_LIMIT_AT_ZERO`.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("reduced solution is only evaluated for x > 0")
    out = y0 + np.sin(x) / -np.expm1(-x)
    return float(out) if out.ndim == 0 else out


# sin x / (1 - e^-x) -> 1 as x -> 0+, plus y0 = 1
REDUCED_LIMIT_AT_ZERO = 2.0


def reduced_general_integral(x, C: float, y0: float = 1.0):
    """General solution family of the reduced integral equation; bounded only for ``C == y0``."""
    x = np.asarray(x, dtype=float)
    return (C - y0 * np.exp(-x)) / -np.expm1(-x) + np.sin(x) / -np.expm1(-x)


# -- 1D boundary layer: u u' = nu u'', u(0) = 1, u(1) = 0 ---------------------


@dataclass(frozen=True)
class BLConstant:
    nu: float
    C: float

    @property
    def residual(self) -> float:
        return 1.0 - 2.0 / (1.0 + self.C) - math.exp(-self.C / self.nu)


def solve_bl_constant(nu: float) -> BLConstant:
    """Solve ``1 - 2/(1+C) = exp(-C/nu)`` for ``C`` in ``(1, 11]`` by bisection."""
    if not nu > 0:
        raise ConfigurationError("nu must be positive")

    def h(c):
        return 1.0 - 2.0 / (1.0 + c) - math.exp(-c / nu)

    lo, hi = 1.0, 11.0
    if not (h(lo) < 0 < h(hi)):
        raise RootBracketingError(f"no sign change on (1, 11] for nu={nu}")
    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if h(mid) < 0:
            lo = mid
        else:
            hi = mid
    c = lo if abs(h(lo)) <= abs(h(hi)) else hi
    return BLConstant(nu, c)


def problem_boundary_layer(nu: float = 0.5) -> ProblemSpec:
    if not nu > 0:
        raise ConfigurationError("nu must be positive")
    C = solve_bl_constant(nu).C

    def residual_op(U, xs):
        return U.coeffs[0] * derivative(U, 1) - nu * derivative(U, 2)

    def analytic_jet(x):
        return 2.0 * C / (1.0 + ad.exp((x[0] - 1.0) * (C / nu))) - C

    g_term = SmoothField(1, lambda x: 1.0 - x[0], "1 - x")
    return ProblemSpec(
        name="boundary-layer",
        dim=1,
        domain=((0.0, 1.0),),
        order=2,
        residual_op=residual_op,
        boundary_data=lambda p: np.where(np.asarray(p)[:, 0] == 0.0, 1.0, 0.0),
        boundary_sampler=_cycle_points([0.0, 1.0]),
        default_model=ModelRecipe(g_term, hermite_weight_interval(0.0, 1.0), (1, 20, 20, 1), "uniform:100"),
        analytic_jet=analytic_jet,
        constants={"nu": nu, "C": C},
    )


# -- Laplace / convection-diffusion on the unit square -----------------------

UNIT_SQUARE = ((0.0, 1.0), (0.0, 1.0))


def _square_recipe() -> ModelRecipe:
    g_term = SmoothField(2, lambda x: x[1] * ad.sin(PI * x[0]), "y sin(pi x)")
    return ModelRecipe(g_term, tensor_weight_box(UNIT_SQUARE), (2, 40, 40, 1), "grid:30x30")


def _square_dirichlet(p):
    p = np.asarray(p, dtype=float)
    return np.where(p[:, 1] == 1.0, np.sin(PI * p[:, 0]), 0.0)


def _harmonic_jet(x):
    return ad.sin(PI * x[0]) * ad.sinh(PI * x[1]) * (1.0 / math.sinh(PI))


def _laplacian(U):
    return derivative(U, 2).sum(axis=0)


def problem_laplace() -> ProblemSpec:
    return ProblemSpec(
        name="laplace",
        dim=2,
        domain=UNIT_SQUARE,
        order=2,
        residual_op=lambda U, xs: _laplacian(U),
        boundary_data=_square_dirichlet,
        boundary_sampler=_square_edges(UNIT_SQUARE),
        default_model=_square_recipe(),
        analytic_jet=_harmonic_jet,
    )


def convection_diffusion_source(x, y, alpha: float = 0.1):
    """Source term that makes the manufactured solution exact."""
    s = math.sinh(PI)
    return (y**2 * np.cos(x) * PI * np.cos(PI * x) * np.sinh(PI * y) / s
            + y**3 * np.sin(x) / 3.0 * PI * np.sin(PI * x) * np.cosh(PI * y) / s
            + alpha * (2 * PI**2 * np.sin(2 * PI * x) * np.cos(2 * PI * y)
                       - 4 * PI**2 * np.sin(2 * PI * x) * np.sin(PI * y) ** 2)
            - alpha * (2 * PI * y**2 * np.cos(x) * np.cos(2 * PI * x) * np.sin(PI * y) ** 2
                       + PI / 3.0 * y**3 * np.sin(x) * np.sin(2 * PI * x) * np.sin(2 * PI * y)))


def problem_convection_diffusion(alpha: float = 0.1) -> ProblemSpec:
    """``u T_x + v T_y = lap T + f`` with ``u = y^2 cos x`` and ``v = y^3 sin x / 3``."""

    def residual_op(U, xs):
        x, y = xs[0].coeffs[0], xs[1].coeffs[0]
        d1 = derivative(U, 1)
        u = y**2 * np.cos(x)
        v = y**3 * np.sin(x) / 3.0
        return u * d1[0] + v * d1[1] - _laplacian(U) - convection_diffusion_source(x, y, alpha)

    def analytic_jet(x):
        s = ad.sin(PI * x[1])
        return _harmonic_jet(x) - alpha * ad.sin(2.0 * PI * x[0]) * s * s

    return ProblemSpec(
        name="convection-diffusion",
        dim=2,
        domain=UNIT_SQUARE,
        order=2,
        residual_op=residual_op,
        boundary_data=_square_dirichlet,
        boundary_sampler=_square_edges(UNIT_SQUARE),
        default_model=_square_recipe(),
        analytic_jet=analytic_jet,
        constants={"alpha": alpha},
    )


PROBLEMS: dict[str, Callable[..., ProblemSpec]] = {
    "integral": problem_integral,
    "boundary-layer": problem_boundary_layer,
    "laplace": problem_laplace,
    "convection-diffusion": problem_convection_diffusion,
}


def get_problem(name: str, **params) -> ProblemSpec:
    """Build a problem by CLI name; ``params`` (``nu``, ``alpha``, ``y0``) are passed if accepted."""
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise UnknownProblem(name) from None
    accepted = inspect.signature(factory).parameters
    return factory(**{k: v for k, v in params.items() if k in accepted and v is not None})
