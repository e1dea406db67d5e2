"""Limited-memory BFGS with a strong Wolfe line search.

The line search is the bracketing / zoom scheme from Nocedal & Wright
(Numerical Optimization, algorithms 3.5 and 3.6) with safeguarded cubic
interpolation.  Curvature pairs with ``s.y <= 0`` are dropped, never damped.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TERMINATION_REASONS = ("grad_tol", "loss_tol", "max_iters", "line_search_failure")


class NonFiniteObjective(FloatingPointError):
    pass


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iters: int = 5000
    grad_tol: float = 1e-8
    loss_tol: float = 1e-12
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 50

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.max_iters < 0 or self.max_line_search_steps < 1:
            raise ValueError("iteration limits must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class LbfgsState:
    memory: int
    s: deque = field(default_factory=deque)
    y: deque = field(default_factory=deque)
    iteration: int = 0
    loss: float = math.nan
    grad: np.ndarray | None = None

    def push(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Store a curvature pair; returns False (and skips it) when ``s.y <= 0``."""
        if not float(s @ y) > 0.0:
            return False
        self.s.append(s)
        self.y.append(y)
        while len(self.s) > self.memory:
            self.s.popleft()
            self.y.popleft()
        return True


@dataclass
class OptimReport:
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    reason: str = ""
    iterations: int = 0
    evaluations: int = 0
    # (phi(0), phi'(0), alpha, phi(alpha), phi'(alpha)) per accepted step; not serialized
    line_searches: list[tuple] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "reason": self.reason,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "losses": list(self.losses),
            "grad_norms": list(self.grad_norms),
            "steps": list(self.steps),
        }


def two_loop_direction(state: LbfgsState, grad: np.ndarray) -> np.ndarray:
    """Return ``-H grad`` from the stored pairs, scaled by ``s.y / y.y`` of the newest pair."""
    q = np.array(grad, dtype=float)
    if not state.s:
        return -q
    rhos = [1.0 / float(s @ y) for s, y in zip(state.s, state.y)]
    alphas = []
    for s, y, rho in zip(reversed(state.s), reversed(state.y), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s_new, y_new = state.s[-1], state.y[-1]
    r = q * (float(s_new @ y_new) / float(y_new @ y_new))
    for s, y, rho, a in zip(state.s, state.y, rhos, reversed(alphas)):
        b = rho * float(y @ r)
        r += (a - b) * s
    return -r


def _cubic_min(a, fa, da, b, fb, db):
    # minimizer of the cubic matching values and slopes at a and b, or None
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if not math.isfinite(disc) or disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if math.isfinite(t) else None


class _LineSearch:
    def __init__(self, fg, x, f0, g0, d, c1, c2, max_steps):
        self.fg, self.x, self.d = fg, x, d
        self.f0, self.dphi0 = f0, float(g0 @ d)
        self.c1, self.c2 = c1, c2
        self.budget = max_steps
        self.evals = 0

    def phi(self, a):
        self.evals += 1
        self.budget -= 1
        f, g = self.fg(self.x + a * self.d)
        return f, g, float(g @ self.d)

    def armijo_fails(self, a, f):
        return not (f <= self.f0 + self.c1 * a * self.dphi0)

    def curvature_ok(self, dphi):
        return abs(dphi) <= -self.c2 * self.dphi0

    def run(self, a1):
        a_prev, f_prev, d_prev = 0.0, self.f0, self.dphi0
        a = a1
        first = True
        while self.budget > 0:
            f, g, dphi = self.phi(a)
            if not math.isfinite(f) or self.armijo_fails(a, f) or (not first and f >= f_prev):
                return self.zoom(a_prev, f_prev, d_prev, a, f, dphi)
            if self.curvature_ok(dphi):
                return a, f, g, dphi
            if dphi >= 0:
                return self.zoom(a, f, dphi, a_prev, f_prev, d_prev)
            a_prev, f_prev, d_prev = a, f, dphi
            a *= 2.0
            first = False
        return None

    def zoom(self, lo, f_lo, d_lo, hi, f_hi, d_hi):
        while self.budget > 0:
            width = abs(hi - lo)
            if width <= 1e-16 * max(1.0, abs(lo), abs(hi)):
                return None
            a = None
            if math.isfinite(f_hi) and math.isfinite(d_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            left, right = min(lo, hi), max(lo, hi)
            if a is None or not (left + 0.1 * width <= a <= right - 0.1 * width):
                a = 0.5 * (lo + hi)
            f, g, dphi = self.phi(a)
            if not math.isfinite(f) or self.armijo_fails(a, f) or f >= f_lo:
                hi, f_hi, d_hi = a, f, dphi
            else:
                if self.curvature_ok(dphi):
                    return a, f, g, dphi
                if dphi * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, dphi
        return None


def minimize(f: Callable, grad_f: Callable | None, x0, cfg: LbfgsConfig | None = None):
    """Minimize ``f`` from ``x0``.

    ``grad_f`` returns the gradient; pass ``None`` when ``f`` itself returns
    ``(value, gradient)``, which avoids evaluating the objective twice.

    Returns ``(x, report)`` where ``x`` is the last accepted iterate.
    """
    cfg = cfg or LbfgsConfig()
    if grad_f is None:
        def fg(x):
            v, g = f(x)
            return float(v), np.asarray(g, dtype=float)
    else:
        def fg(x):
            return float(f(x)), np.asarray(grad_f(x), dtype=float)

    x = np.array(x0, dtype=float)
    fx, g = fg(x)
    if not math.isfinite(fx):
        raise NonFiniteObjective(f"objective is not finite at the starting point: {fx}")
    state = LbfgsState(cfg.memory, loss=fx, grad=g)
    report = OptimReport(losses=[fx], grad_norms=[float(np.max(np.abs(g), initial=0.0))], evaluations=1)

    reason = "max_iters"
    while True:
        if report.grad_norms[-1] <= cfg.grad_tol:
            reason = "grad_tol"
            break
        if state.iteration >= cfg.max_iters:
            reason = "max_iters"
            break
        d = two_loop_direction(state, g)
        if not float(g @ d) < 0:
            state.s.clear()
            state.y.clear()
            d = -g
        a1 = 1.0 if state.s else min(1.0, 1.0 / float(np.sum(np.abs(g))))
        ls = _LineSearch(fg, x, fx, g, d, cfg.wolfe_c1, cfg.wolfe_c2, cfg.max_line_search_steps)
        result = ls.run(a1)
        report.evaluations += ls.evals
        if result is None:
            reason = "line_search_failure"
            break
        a, f_new, g_new, dphi = result
        report.line_searches.append((fx, ls.dphi0, a, f_new, dphi))
        x_new = x + a * d
        state.push(x_new - x, g_new - g)
        f_prev = fx
        x, fx, g = x_new, f_new, g_new
        state.iteration += 1
        state.loss, state.grad = fx, g
        report.losses.append(fx)
        report.grad_norms.append(float(np.max(np.abs(g))))
        report.steps.append(a)
        if report.grad_norms[-1] <= cfg.grad_tol:
            reason = "grad_tol"
            break
        if f_prev - fx <= cfg.loss_tol * max(abs(f_prev), abs(fx)):
            reason = "loss_tol"
            break
    report.reason = reason
    report.iterations = state.iteration
    return x, report
