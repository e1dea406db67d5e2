"""Boundary terms, weight functions and the constrained trial function.

The trial function is ``u(x) = G(x) + w(x) * N(x)``: ``G`` carries the
Dirichlet data, ``w`` vanishes on the boundary and nowhere inside the domain,
and ``N`` is the network.  Boundary values therefore hold for every parameter
vector, before and after training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Jet, jet_const
from .network import MFN, ConfigurationError, ShapeError, mfn_forward, mfn_init


@dataclass(frozen=True)
class SmoothField:
    """A closed-form function of the input jets, differentiable to any order."""

    dim: int
    fn: Callable[[Sequence[Jet]], Jet]
    label: str

    def __call__(self, x: Sequence[Jet]) -> Jet:
        if len(x) != self.dim:
            raise ShapeError(f"{self.label}: expected {self.dim} inputs, got {len(x)}")
        out = self.fn(x)
        if not isinstance(out, Jet):
            out = jet_const(out, x[0].order)
        return out

    def values(self, points) -> np.ndarray:
        points = _as_points(points, self.dim)
        x = [jet_const(points[:, i], 0) for i in range(self.dim)]
        return np.broadcast_to(np.asarray(self(x).coeffs[0], dtype=float), (len(points),)).copy()


def constant_field(c: float, dim: int = 1) -> SmoothField:
    return SmoothField(dim, lambda x: jet_const(c, x[0].order), f"{c:g}")


def hermite_weight_interval(a: float, b: float, axis: int = 0, dim: int = 1) -> SmoothField:
    """``w(x) = (x - a)(b - x)``: zero at both ends with nonzero slope there."""
    if not a < b:
        raise ConfigurationError(f"need a < b, got [{a}, {b}]")
    return SmoothField(dim, lambda x: (x[axis] - a) * (b - x[axis]),
                       f"(x{axis} - {a:g})({b:g} - x{axis})")


def tensor_weight_box(bounds: Sequence[tuple[float, float]]) -> SmoothField:
    """Product of one Hermite factor per axis, e.g. ``x(1-x)y(1-y)`` on the unit square."""
    if not bounds:
        raise ConfigurationError("need at least one axis")
    dim = len(bounds)
    factors = [hermite_weight_interval(a, b, axis=i, dim=dim) for i, (a, b) in enumerate(bounds)]

    def fn(x):
        out = factors[0](x)
        for f in factors[1:]:
            out = out * f(x)
        return out

    return SmoothField(dim, fn, " * ".join(f.label for f in factors))


def exp_weight_halfline(x0: float = 0.0) -> SmoothField:
    """``w(x) = 1 - exp(-(x - x0))`` for initial-value problems on ``[x0, inf)``."""
    return SmoothField(1, lambda x: 1.0 - ad.exp(-(x[0] - x0)), f"1 - exp(-(x - {x0:g}))")


def _as_points(points, dim: int) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1 and dim == 1:
        p = p[:, None]
    if p.ndim != 2 or p.shape[1] != dim:
        raise ShapeError(f"points must have shape (n, {dim}), got {p.shape}")
    return p


@dataclass(frozen=True)
class TrialFunction:
    """``G + w * N``, optionally feeding the network inputs mapped affinely to ``[-1, 1]``."""

    g_term: SmoothField
    weight: SmoothField
    net: MFN
    input_box: tuple[tuple[float, float], ...] | None = field(default=None)

    def __post_init__(self):
        if not (self.g_term.dim == self.weight.dim == self.net.widths[0]):
            raise ShapeError(
                f"dimension mismatch: G {self.g_term.dim}, w {self.weight.dim}, net {self.net.widths[0]}")
        if self.net.widths[-1] != 1:
            raise ShapeError("trial functions need a scalar network output")

    @property
    def dim(self) -> int:
        return self.g_term.dim

    def _net_inputs(self, x):
        if self.input_box is None:
            return x
        return [(xi - 0.5 * (lo + hi)) * (2.0 / (hi - lo)) for xi, (lo, hi) in zip(x, self.input_box)]

    def reduced(self, x: Sequence[Jet], params=None) -> Jet:
        """The network factor ``N``."""
        return mfn_forward(self.net, self._net_inputs(x), params)[0]

    def bulk(self, x: Sequence[Jet], params=None) -> Jet:
        """``w * N``, which vanishes on the boundary."""
        return self.weight(x) * self.reduced(x, params)

    def eval(self, x: Sequence[Jet], params=None) -> Jet:
        if len(x) != self.dim:
            raise ShapeError(f"trial function expects {self.dim} inputs, got {len(x)}")
        return self.g_term(x) + self.bulk(x, params)

    def with_net(self, net: MFN) -> "TrialFunction":
        return replace(self, net=net)

    def __call__(self, points) -> np.ndarray:
        points = _as_points(points, self.dim)
        x = [jet_const(points[:, i], 0) for i in range(self.dim)]
        return np.asarray(self.eval(x).coeffs[0], dtype=float)


def trial_eval(t: TrialFunction, x: Sequence[Jet], params=None) -> Jet:
    return t.eval(x, params)


@dataclass
class ValidationReport:
    boundary_violations: list[tuple[tuple[float, ...], float]] = field(default_factory=list)
    interior_violations: list[tuple[float, ...]] = field(default_factory=list)
    flat_weight_warnings: list[tuple[float, ...]] = field(default_factory=list)
    max_boundary_error: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.boundary_violations and not self.interior_violations


def validate_constraints(t: TrialFunction, boundary_samples, g: Callable, interior_samples,
                         tol: float = 1e-12, seeds: Sequence[int] = (101, 202)) -> ValidationReport:
    """Check the hard-constraint properties of a trial function.

    Boundary exactness is checked with the trial's own network and with freshly
    initialized networks for each seed in ``seeds``.  In 1D, a weight whose
    slope vanishes at a boundary point is reported as a warning: the boundary
    term then dominates the slope there and accuracy degrades.  (Product
    weights in 2D are flat at corners by construction, so no probe there.)
    """
    bpts = _as_points(boundary_samples, t.dim)
    ipts = _as_points(interior_samples, t.dim)
    if not len(bpts) or not len(ipts):
        raise ValueError("sample lists must be nonempty")
    report = ValidationReport()
    target = np.asarray(g(bpts), dtype=float)
    worst = np.zeros(len(bpts))
    nets = [t.net] + [mfn_init(t.net.widths, s, t.net.activation) for s in seeds]
    for net in nets:
        err = np.abs(t.with_net(net)(bpts) - target)
        worst = np.maximum(worst, np.where(np.isfinite(err), err, np.inf))
    report.max_boundary_error = float(worst.max())
    for p, e in zip(bpts, worst):
        if e > tol:
            report.boundary_violations.append((tuple(p), float(e)))
    w_in = t.weight.values(ipts)
    for p, w in zip(ipts, w_in):
        if not (np.isfinite(w) and w != 0.0):
            report.interior_violations.append(tuple(p))
    if t.dim == 1:
        slopes = ad.derivative(t.weight([ad.jet_var(bpts[:, 0], 1)]), 1)
        flat = np.abs(np.broadcast_to(slopes, (len(bpts),))) <= 1e-12
        report.flat_weight_warnings = [tuple(p) for p, f in zip(bpts, flat) if f]
    return report
