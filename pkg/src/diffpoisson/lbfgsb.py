"""Bound-constrained limited-memory BFGS.

Each iteration

1. takes a projected steepest-descent (Cauchy) step scaled by the current
   inverse-Hessian estimate and fixes the variables it drives onto a bound;
2. computes a quasi-Newton direction for the remaining free variables with
   the two-loop recursion over the stored ``(s, y)`` pairs;
3. searches along the projected path ``P(x + alpha d)`` until the Armijo
   condition holds, optionally refining the step once by a secant estimate
   of the exact line minimizer.

Convergence is declared when the max-norm of the projected gradient
``P(x - g) - x`` drops to ``gtol``.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        lo, hi = np.broadcast_arrays(lo, hi)
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", np.array(lo))
        object.__setattr__(self, "upper", np.array(hi))

    @classmethod
    def uniform(cls, n, lower=-np.inf, upper=np.inf):
        return cls(np.full(n, float(lower)), np.full(n, float(upper)))

    @classmethod
    def unbounded(cls, n):
        return cls.uniform(n)

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def projected_gradient(self, x, g):
        return self.project(x - g) - x

    def contains(self, x) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    iterations: int
    pg_norm: float
    converged: bool
    message: str
    n_evals: int
    history: list = field(default_factory=list)

    @property
    def x_opt(self):
        return self.x

    @property
    def f_opt(self):
        return self.fun


class LineSearchFailure(RuntimeError):
    pass


def _two_loop(g, pairs):
    """Apply the L-BFGS inverse Hessian to ``g``; ``pairs`` holds (s, y, rho)."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def minimize(
    objective,
    x0,
    bounds: Bounds | None = None,
    gtol=1e-5,
    max_iter=1000,
    memory=10,
    c1=1e-4,
    curvature=0.9,
    max_backtracks=40,
    callback=None,
) -> OptimResult:
    """Minimize ``objective(x) -> (value, gradient)`` subject to ``bounds``.

    The objective may return ``(inf, None)`` when a trial point is invalid;
    the line search then shortens the step.
    A non-finite value at the starting point raises ``FloatingPointError``.

    ``curvature`` controls the optional secant refinement: it is attempted
    when ``|g_new . d| > curvature * |g . d|`` on an unprojected step.
    """
    x = np.array(x0, dtype=float)
    if bounds is None:
        bounds = Bounds.unbounded(x.size)
    x = bounds.project(x)
    f, g = objective(x)
    f = float(f)
    n_evals = 1
    if not np.isfinite(f) or g is None or not np.all(np.isfinite(g)):
        raise FloatingPointError("objective is not finite at the starting point")
    g = np.asarray(g, dtype=float)

    pairs: deque = deque(maxlen=memory)
    history = [f]
    converged = False
    message = "maximum number of iterations reached"
    it = 0
    pg = bounds.projected_gradient(x, g)

    while True:
        pg_norm = float(np.max(np.abs(pg))) if pg.size else 0.0
        if pg_norm <= gtol:
            converged = True
            message = "projected gradient below tolerance"
            break
        if it >= max_iter:
            break

        d = _search_direction(x, g, bounds, pairs)
        slope = g @ d
        if not slope < 0.0:
            pairs.clear()
            d = _search_direction(x, g, bounds, pairs)
            slope = g @ d
        if not pairs:
            alpha0 = min(1.0, 1.0 / np.linalg.norm(d))
        else:
            alpha0 = 1.0

        try:
            x_new, f_new, g_new, evals = _line_search(
                objective, x, f, g, d, alpha0, bounds, c1, curvature, max_backtracks
            )
        except LineSearchFailure as exc:
            n_evals += max_backtracks
            if pairs:
                logger.debug("line search failed, resetting memory: %s", exc)
                pairs.clear()
                continue
            message = f"line search failed: {exc}"
            break
        n_evals += evals

        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        pg = bounds.projected_gradient(x, g)
        it += 1
        history.append(f)
        if callback is not None:
            callback(x, f)

    return OptimResult(
        x=x,
        fun=f,
        iterations=it,
        pg_norm=float(np.max(np.abs(pg))) if pg.size else 0.0,
        converged=converged,
        message=message,
        n_evals=n_evals,
        history=history,
    )


def _search_direction(x, g, bounds: Bounds, pairs):
    # Cauchy step with the scalar Hessian estimate decides the active set
    if pairs:
        s, y, _ = pairs[-1]
        t = (s @ y) / (y @ y)
    else:
        t = 1.0 / max(np.linalg.norm(g), 1e-300)
    x_cauchy = bounds.project(x - t * g)
    active = ((x_cauchy <= bounds.lower) & (g > 0)) | ((x_cauchy >= bounds.upper) & (g < 0))
    free = ~active

    d = np.zeros_like(x)
    d[active] = x_cauchy[active] - x[active]
    if np.any(free):
        sub_pairs = []
        for s, y, _ in pairs:
            sf, yf = s[free], y[free]
            sy = sf @ yf
            if sy > 1e-12 * np.linalg.norm(sf) * np.linalg.norm(yf):
                sub_pairs.append((sf, yf, 1.0 / sy))
        if sub_pairs:
            d[free] = -_two_loop(g[free], sub_pairs)
        else:
            d[free] = -g[free]
    return d


def _line_search(objective, x, f, g, d, alpha, bounds, c1, curvature, max_backtracks):
    def trial(a):
        xt = bounds.project(x + a * d)
        ft, gt = objective(xt)
        ft = float(ft)
        if not np.isfinite(ft) or gt is None or not np.all(np.isfinite(gt)):
            return xt, np.inf, None
        return xt, ft, np.asarray(gt, dtype=float)

    evals = 0
    for _ in range(max_backtracks):
        xt, ft, gt = trial(alpha)
        evals += 1
        decrease = g @ (xt - x)
        if np.isfinite(ft) and ft <= f + c1 * decrease and decrease < 0.0:
            unprojected = np.array_equal(xt, x + alpha * d)
            slope0 = g @ d
            slope_t = gt @ d
            if unprojected and abs(slope_t) > curvature * abs(slope0) and slope_t != slope0:
                a_sec = alpha * slope0 / (slope0 - slope_t)
                if 0.0 < a_sec <= 10.0 * alpha and abs(a_sec / alpha - 1.0) > 1e-3:
                    xs, fs, gs = trial(a_sec)
                    evals += 1
                    if np.isfinite(fs) and fs < ft and fs <= f + c1 * (g @ (xs - x)):
                        return xs, fs, gs, evals
            return xt, ft, gt, evals
        if np.isfinite(ft) and decrease < 0.0:
            # safeguarded quadratic interpolation
            denom = 2.0 * (ft - f - decrease)
            a_new = -decrease * alpha / denom if denom > 0 else 0.5 * alpha
            alpha = min(max(a_new, 0.1 * alpha), 0.5 * alpha)
        else:
            alpha *= 0.5
    raise LineSearchFailure(f"no sufficient decrease after {max_backtracks} trials")
