"""Truncation-threshold design by minimizing the long-term-memory bound.

With Rayleigh fading the transmission probability is ``lam = exp(-eps)``, so
the design variable is ``lam`` in (0, 1). The objective is

    Phi(lam) = (a / K) sum_k (1 - lam_k^2) / lam_k^2
               + c * max_k b_k * h(lam_k)

with ``a = 48 eta^2 B^2 Q^2 L^2``, ``c = 8 eta L sigma2 / K^2``,
``b_k = B^2 Q / (P_k kappa_k)`` and ``h(x) = (4 (1 - x^2) / x + x) / ln(1/x)``.
Both pieces are convex on (0, 1), and ``h`` blows up at both ends.

The default solver works on the epigraph form: for a level ``t`` on the max
term, each device's best ``lam_k`` is the top of its sublevel interval
``{x : b_k h(x) <= t}`` (the first sum is decreasing in every ``lam_k``). What
remains is a convex scalar problem in ``t``. It is solved by bisection on the
sign of its slope, parameterized by the lambda of the device with the largest
``b_k`` (that device always attains the max).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class OptInputs:
    eta: float
    L: float
    B: float
    Q: int
    K: int
    sigma2: float
    P: np.ndarray
    kappa: np.ndarray
    lambda_min: float = 1e-4

    def __post_init__(self):
        self.P = np.broadcast_to(np.asarray(self.P, dtype=np.float64), (self.K,)).copy()
        self.kappa = np.broadcast_to(np.asarray(self.kappa, dtype=np.float64), (self.K,)).copy()
        for name in ("eta", "L", "B"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.sigma2 < 0:
            raise DomainError("sigma2 must be nonnegative")
        if np.any(self.P <= 0) or np.any(self.kappa <= 0):
            raise DomainError("P and kappa must be positive")
        if not 0 < self.lambda_min < 0.5:
            raise DomainError("lambda_min must lie in (0, 0.5)")

    @property
    def a(self) -> float:
        return 48.0 * self.eta**2 * self.B**2 * self.Q**2 * self.L**2

    @property
    def c(self) -> float:
        return 8.0 * self.eta * self.L * self.sigma2 / self.K**2

    @property
    def b(self) -> np.ndarray:
        return self.B**2 * self.Q / (self.P * self.kappa)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.lambda_min, 1.0 - self.lambda_min


def g_shape(x):
    x = np.asarray(x, dtype=np.float64)
    return (1.0 - x * x) / (x * x)


def g_shape_d1(x):
    return -2.0 / np.asarray(x, dtype=np.float64) ** 3


def h_shape(x):
    """Per-device noise factor; equals ``x * (4(1-x^2)/x^2 + 1) / ln(1/x)``."""
    x = np.asarray(x, dtype=np.float64)
    return (4.0 * (1.0 - x * x) / x + x) / np.log(1.0 / x)


def h_shape_d1(x):
    x = np.asarray(x, dtype=np.float64)
    ell = np.log(1.0 / x)
    num = 4.0 * (1.0 - x * x) / x + x
    dnum = -4.0 / (x * x) - 3.0
    return dnum / ell + num / (x * ell * ell)


def h_shape_d2(x):
    """Closed-form second derivative of ``h``."""
    x = np.asarray(x, dtype=np.float64)
    ell = np.log(1.0 / x)
    return (8.0 * (ell**2 + 1.0) / x**3 + (-12.0 / x**3 - 3.0 / x) * ell - 6.0 / x) / ell**3


def _check_domain(lam, inputs: OptInputs) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    if lam.shape != (inputs.K,):
        raise DomainError(f"expected {inputs.K} transmission probabilities, got shape {lam.shape}")
    lo, hi = inputs.bounds
    # clip endpoints are admissible so that boundary solutions can be evaluated
    if np.any(lam < lo * (1 - 1e-12)) or np.any(lam > hi * (1 + 1e-12)) or np.any(~np.isfinite(lam)):
        raise DomainError(f"transmission probabilities must lie in [{lo}, {hi}]")
    return lam


def objective_terms(lam, inputs: OptInputs) -> tuple[float, float]:
    lam = _check_domain(lam, inputs)
    contraction = inputs.a / inputs.K * float(np.sum(g_shape(lam)))
    if inputs.c == 0:
        return contraction, 0.0
    noise = inputs.c * float(np.max(inputs.b * h_shape(lam)))
    return contraction, noise


def objective_p1prime(lam, inputs: OptInputs) -> float:
    c, n = objective_terms(lam, inputs)
    return c + n


@dataclass
class ThresholdSolution:
    lambdas: np.ndarray
    eps: np.ndarray
    objective: float
    contraction: float
    noise: float
    residual: float
    iterations: int
    method: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambdas": [float(v) for v in self.lambdas],
            "eps": [float(v) for v in self.eps],
            "objective": self.objective,
            "breakdown": {"contraction": self.contraction, "noise": self.noise},
            "residual": self.residual,
            "iterations": self.iterations,
            "method": self.method,
        }


def golden_section(f, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 500):
    """Minimize a unimodal scalar function on [lo, hi]; returns ``(x, f(x), iters)``."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while (b - a) > tol * max(1.0, abs(a) + abs(b)) and it < max_iter:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
        it += 1
    cands = [(fc, c), (fd, d), (f(a), a), (f(b), b)]
    fx, x = min(cands)
    return x, fx, it


def bisect_decreasing(f, lo: float, hi: float, target: float, iters: int = 200) -> float:
    """Largest x in [lo, hi] with f(x) <= target, for f increasing on [lo, hi]."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


class _Epigraph:
    """Per-level best response of every device for the epigraph variable t."""

    def __init__(self, inputs: OptInputs):
        self.inp = inputs
        self.lo, self.hi = inputs.bounds
        # h is convex, so its minimizer is the sign change of h'
        a, b = self.lo, self.hi
        if h_shape_d1(a) >= 0:
            b = a
        elif h_shape_d1(b) <= 0:
            a = b
        for _ in range(200):
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            if h_shape_d1(mid) < 0:
                a = mid
            else:
                b = mid
        self.h_argmin = b
        self.h_min = float(h_shape(b))
        self.h_hi = float(h_shape(self.hi))

    def lambdas(self, t: float) -> np.ndarray:
        out = np.empty(self.inp.K)
        for k, bk in enumerate(self.inp.b):
            s = t / bk
            if s >= self.h_hi:
                out[k] = self.hi
            else:
                out[k] = bisect_decreasing(lambda x: float(h_shape(x)), self.h_argmin, self.hi, s)
        return out

    def anchored(self, x: float):
        """Level set by the largest-``b`` device sitting at ``x``; returns ``(t, lambdas)``.

        Parameterizing by that device's lambda keeps full precision near the
        minimum of h, where inverting h from t loses half the digits.
        """
        b = self.inp.b
        bmax = float(np.max(b))
        t = bmax * float(h_shape(x))
        lam = self.lambdas(t)
        lam[b == bmax] = x
        return t, lam

    def value(self, t: float) -> float:
        lam = self.lambdas(t)
        return self.inp.a / self.inp.K * float(np.sum(g_shape(lam))) + self.inp.c * t

    def slope(self, t: float) -> float:
        """``dV/dt``; devices pinned at the upper clip do not move with t."""
        lam = self.lambdas(t)
        free = lam < self.hi
        if not np.any(free):
            return self.inp.c
        b = self.inp.b[free]
        x = lam[free]
        return self.inp.c + self.inp.a / self.inp.K * float(np.sum(g_shape_d1(x) / (b * h_shape_d1(x))))

    @property
    def t_range(self) -> tuple[float, float]:
        b = self.inp.b
        return float(np.max(b) * self.h_min), float(np.max(b) * self.h_hi)


def stationarity_residual(lam, inputs: OptInputs, active_rtol: float = 1e-6) -> float:
    """Norm of the minimum-norm projected subgradient at ``lam``, relative to
    the gradient of the contraction sum."""
    lam = _check_domain(lam, inputs)
    lo, hi = inputs.bounds
    gG = inputs.a / inputs.K * g_shape_d1(lam)
    scale = max(float(np.linalg.norm(gG)), 1e-300)
    at_hi = lam >= hi * (1 - 1e-12)

    def project(r):
        r = r.copy()
        r[at_hi & (r < 0)] = 0.0
        r[(lam <= lo * (1 + 1e-12)) & (r > 0)] = 0.0
        return r

    if inputs.c == 0:
        return float(np.linalg.norm(project(gG))) / scale
    vals = inputs.b * h_shape(lam)
    top = float(np.max(vals))
    active = vals >= top * (1 - active_rtol)
    beta = inputs.c * inputs.b * h_shape_d1(lam)

    def residual_for(nu):
        mu = np.zeros(inputs.K)
        mu[active] = np.maximum(0.0, (-nu / (2 * beta[active]) - gG[active]) / beta[active])
        return mu

    # sum(mu) decreases in nu; bracket and bisect so that sum(mu) = 1
    lo_nu, hi_nu = -1.0, 1.0
    while residual_for(lo_nu).sum() < 1:
        lo_nu *= 2
        if lo_nu < -1e300:
            break
    while residual_for(hi_nu).sum() > 1:
        hi_nu *= 2
        if hi_nu > 1e300:
            break
    for _ in range(300):
        mid = 0.5 * (lo_nu + hi_nu)
        if residual_for(mid).sum() > 1:
            lo_nu = mid
        else:
            hi_nu = mid
    mu = residual_for(0.5 * (lo_nu + hi_nu))
    if mu.sum() > 0:
        mu /= mu.sum()
    r = gG + mu * beta
    return float(np.linalg.norm(project(r))) / scale


def _solution(lam, inputs, iters, method, **extra) -> ThresholdSolution:
    contraction, noise = objective_terms(lam, inputs)
    return ThresholdSolution(
        lambdas=lam,
        eps=-np.log(lam),
        objective=contraction + noise,
        contraction=contraction,
        noise=noise,
        residual=stationarity_residual(lam, inputs),
        iterations=iters,
        method=method,
        extra=extra,
    )


def solve_thresholds(inputs: OptInputs, tol: float = 1e-6, method: str = "epigraph",
                     max_iter: int = 20000) -> ThresholdSolution:
    """Minimize the threshold objective over ``lam in [lambda_min, 1 - lambda_min]^K``.

    ``tol`` is the relative objective tolerance used by the subgradient method
    and the stationarity-residual acceptance test of both methods.
    """
    if method == "epigraph":
        return _solve_epigraph(inputs, tol)
    if method == "subgradient":
        return _solve_subgradient(inputs, tol, max_iter)
    raise DomainError(f"unknown method {method!r}")


def _solve_epigraph(inputs: OptInputs, tol: float) -> ThresholdSolution:
    lo, hi = inputs.bounds
    if inputs.c == 0:
        lam = np.full(inputs.K, hi)
        return _solution(lam, inputs, 0, "epigraph")
    epi = _Epigraph(inputs)
    t_lo, t_hi = epi.t_range
    if t_hi <= t_lo:
        lam = epi.lambdas(t_hi)
        return _solution(lam, inputs, 0, "epigraph")
    # the value is convex in t and t grows with the anchor's lambda on this
    # branch, so bisect on the sign of the slope in the anchor coordinate
    x_lo, x_hi = epi.h_argmin, hi
    iters = 0
    if epi.slope(epi.anchored(x_hi)[0]) <= 0:
        x_lo = x_hi
    while iters < 400:
        mid = 0.5 * (x_lo + x_hi)
        if mid <= x_lo or mid >= x_hi:
            break
        if epi.slope(epi.anchored(mid)[0]) < 0:
            x_lo = mid
        else:
            x_hi = mid
        iters += 1
    cands = [epi.anchored(x) for x in (x_lo, x_hi)]
    t, lam = min(cands, key=lambda c: objective_p1prime(c[1], inputs))
    # adjacent floats with opposite slopes is as stationary as float64 allows
    collapsed = float(np.nextafter(x_lo, np.inf)) >= x_hi
    sol = _solution(lam, inputs, iters, "epigraph", t=t, bracket=x_hi - x_lo)
    if sol.residual > max(tol, 1e-6) * 1e3 and not collapsed:
        raise ConvergenceError("epigraph search did not reach a stationary point", best=sol, residual=sol.residual)
    return sol


def _solve_subgradient(inputs: OptInputs, tol: float, max_iter: int) -> ThresholdSolution:
    """Projected subgradient on ``Phi`` with normalized diminishing steps."""
    lo, hi = inputs.bounds
    lam = np.full(inputs.K, 0.5)
    best = lam.copy()
    f_best = objective_p1prime(lam, inputs)
    step0 = 0.1
    history = []
    for i in range(max_iter):
        g = inputs.a / inputs.K * g_shape_d1(lam)
        if inputs.c > 0:
            vals = inputs.b * h_shape(lam)
            k = int(np.argmax(vals))
            g[k] += inputs.c * inputs.b[k] * h_shape_d1(lam[k])
        gn = float(np.linalg.norm(g))
        if gn == 0:
            break
        lam = np.clip(lam - step0 / math.sqrt(i + 1) * g / gn, lo, hi)
        f = objective_p1prime(lam, inputs)
        if f < f_best:
            f_best, best = f, lam.copy()
        history.append(f_best)
        if i > 200 and history[-200] - f_best <= tol * abs(f_best) * 1e-3:
            break
    return _solution(best, inputs, i + 1, "subgradient")


def validate_on_grid(sol: ThresholdSolution, inputs: OptInputs, points: int = 1000) -> float:
    """Largest ``Phi(lam*) - Phi(lam)`` over 1-D grids through ``lam*``; <= 0 means
    no grid point beats the solution."""
    lo, hi = inputs.bounds
    grid = np.linspace(lo, hi, points)
    worst = -np.inf
    for k in range(inputs.K):
        for x in grid:
            lam = sol.lambdas.copy()
            lam[k] = x
            worst = max(worst, sol.objective - objective_p1prime(lam, inputs))
    return float(worst)


@dataclass
class ConvexityReport:
    grid: np.ndarray
    min_second_diff_g: float
    min_second_diff_f: float
    max_rel_err_g: float
    max_rel_err_f: float
    convex: bool
    closed_form_ok: bool

    def to_dict(self) -> dict:
        return {
            "grid_points": int(len(self.grid)),
            "grid_range": [float(self.grid[0]), float(self.grid[-1])],
            "min_second_diff_g": self.min_second_diff_g,
            "min_second_diff_f": self.min_second_diff_f,
            "max_rel_err_g": self.max_rel_err_g,
            "max_rel_err_f": self.max_rel_err_f,
            "convex": self.convex,
            "closed_form_ok": self.closed_form_ok,
        }


def second_difference(f, x, rel_step: float = 1e-3):
    x = np.asarray(x, dtype=np.float64)
    h = rel_step * np.minimum(x, 1.0 - x)
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)


def certify_convexity(inputs: OptInputs, grid_resolution: int = 1000, rel_tol: float = 1e-3) -> ConvexityReport:
    """Finite-difference convexity check of both objective pieces on a grid,
    cross-checked against their closed-form second derivatives."""
    if grid_resolution < 100:
        raise DomainError("grid_resolution must be >= 100")
    lo, hi = inputs.bounds
    x = np.linspace(lo, hi, grid_resolution)
    a = inputs.a / inputs.K
    g = lambda v: a * g_shape(v)
    fd_g = second_difference(g, x)
    exact_g = 6.0 * a / x**4
    err_g = float(np.max(np.abs(fd_g - exact_g) / exact_g))
    min_f, err_f = np.inf, 0.0
    scales = inputs.c * inputs.b if inputs.c > 0 else np.ones(inputs.K)
    for bk in scales:
        fd_f = second_difference(lambda v: bk * h_shape(v), x)
        exact_f = bk * h_shape_d2(x)
        min_f = min(min_f, float(np.min(fd_f / np.max(np.abs(fd_f)))))
        err_f = max(err_f, float(np.max(np.abs(fd_f - exact_f) / np.abs(exact_f))))
    min_g = float(np.min(fd_g / np.max(np.abs(fd_g))))
    convex = min_g >= -1e-9 and min_f >= -1e-9
    return ConvexityReport(x, min_g, min_f, err_g, err_f, convex, err_g <= rel_tol and err_f <= rel_tol)
