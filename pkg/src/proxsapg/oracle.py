"""Deterministic reference values for scalar instances.

Expectations under ``exp(-V_theta - U_theta)`` come from composite
Gauss-Legendre quadrature in log space, with panel breaks at the model's kinks
and a truncation radius large enough that the discarded tail mass is below
``1e-14`` of the normaliser.  Each result is recomputed with twice the panels
and accepted only when the two agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Chebyshev
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from .errors import InvalidArgument, NumericalFailure, UnsupportedConfiguration
from .model import Homogeneous, PotentialModel, ProblemInstance, SeparablyHomogeneous
from .samplers import KernelConfig, KernelKind, check_admissible, one_step_second_moment

RULE_ORDER = 16
TAIL_LOG_MASS = -34.0  # log(1e-15)


@dataclass(frozen=True)
class QuadratureGrid:
    """Composite Gauss-Legendre nodes and weights on ``[-radius, radius]``."""

    radius: float
    nodes: np.ndarray
    weights: np.ndarray
    rule: str = f"composite-gauss-legendre-{RULE_ORDER}"

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]


def composite_grid(breaks, panels_per_piece: int, order: int = RULE_ORDER) -> QuadratureGrid:
    """Gauss-Legendre rule of ``order`` points on every sub-panel between ``breaks``."""
    breaks = np.asarray(breaks, dtype=float)
    ref_x, ref_w = leggauss(order)
    nodes, weights = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        edges = np.linspace(lo, hi, panels_per_piece + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        nodes.append((mid[:, None] + half[:, None] * ref_x).ravel())
        weights.append((half[:, None] * ref_w).ravel())
    radius = float(max(abs(breaks[0]), abs(breaks[-1])))
    return QuadratureGrid(radius, np.concatenate(nodes), np.concatenate(weights))


def _require_scalar(model: PotentialModel) -> None:
    if model.dim != 1:
        raise UnsupportedConfiguration("quadrature oracles need a scalar state (d = 1)")


def _potential(model: PotentialModel, theta: np.ndarray, target: str) -> Callable:
    v, _, u, _, _ = model.pieces(target)

    def total(x: float) -> float:
        z = np.array([x])
        return float(v(theta, z) + u(theta, z))

    return total


def _log_tail_bound(pot, x: float, outward: float, h: float) -> float:
    """Log of an upper bound on the mass beyond ``x`` (relative to ``exp(0)``),
    valid for a convex potential increasing outward from ``x``."""
    slope = (pot(x) - pot(x - outward * h)) / h
    if not slope > 0:
        return math.inf
    return -pot(x) - math.log(slope)


class _Integrator:
    """Log-domain integrals against ``exp(-potential)`` on one fixed grid."""

    def __init__(self, model: PotentialModel, theta, target: str, radius: Optional[float] = None):
        _require_scalar(model)
        self.model = model
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.target = target
        self.pot = _potential(model, self.theta, target)
        self.radius = self._radius() if radius is None else float(radius)
        self._cache = {}

    def _radius(self) -> float:
        model = self.model
        r = model.minimizer_bounds.rv1 + model.minimizer_bounds.ru1 + 1.0
        if model.strong_convexity is not None and self.target == "posterior":
            r += math.sqrt(2.0 * 40.0 / model.strong_convexity)
        elif model.coercivity is not None:
            eta, c = model.coercivity
            r += (c + 45.0 + math.log(2.0 / eta)) / eta
        # enlarge until the convex-tail bound certifies negligible mass
        peak = -min(self.pot(x) for x in np.linspace(-r, r, 401))
        h = 1e-3 * r
        for _ in range(60):
            left = _log_tail_bound(self.pot, -r, -1.0, h)
            right = _log_tail_bound(self.pot, r, 1.0, h)
            if max(left, right) - peak < TAIL_LOG_MASS:
                return r
            r *= 1.5
            h = 1e-3 * r
        raise NumericalFailure("normaliser appears divergent: tails never became negligible")

    def grid(self, panels: int) -> QuadratureGrid:
        kinks = sorted(k for k in self.model.kinks if -self.radius < k < self.radius)
        return composite_grid([-self.radius, *kinks, self.radius], panels)

    def _logw(self, panels: int):
        if panels not in self._cache:
            g = self.grid(panels)
            logp = -np.array([self.pot(x) for x in g.nodes])
            self._cache[panels] = (g, np.log(g.weights) + logp)
        return self._cache[panels]

    def log_normalizer(self, panels: int) -> float:
        _, lw = self._logw(panels)
        top = lw.max()
        return float(top + math.log(np.exp(lw - top).sum()))

    def expectation(self, statistic: Callable, panels: int):
        g, lw = self._logw(panels)
        p = np.exp(lw - lw.max())
        p /= p.sum()
        vals = np.array([np.atleast_1d(np.asarray(statistic(self.theta, np.array([x]), ),
                                                  dtype=float)) for x in g.nodes])
        return p @ vals, p @ np.abs(vals)


def _refine(compute, tol: float, start: int = 8, max_panels: int = 4096):
    """Double panel counts until two consecutive results agree to ``tol``."""
    panels = start
    prev_val, prev_scale = compute(panels)
    while panels < max_panels:
        panels *= 2
        val, scale = compute(panels)
        if np.all(np.abs(val - prev_val) <= tol * np.maximum(np.abs(val), scale)):
            return val
        prev_val = val
    raise NumericalFailure(f"quadrature did not settle to {tol} within {max_panels} panels")


def posterior_expectation_1d(instance_or_model, theta, statistic: Optional[Callable] = None,
                             target: str = "posterior", tol: float = 1e-8,
                             radius: Optional[float] = None):
    """``E[statistic(theta, X)]`` for ``X ∝ exp(-V_theta - U_theta)`` on the real line.

    Accepts a :class:`ProblemInstance` (statistic defaults to the estimator's
    ``g``) or a bare :class:`PotentialModel`.  ``target="prior"`` integrates
    against the prior split instead.  Returns a float for scalar statistics.
    """
    model, stat = _unpack(instance_or_model, statistic)
    integ = _Integrator(model, theta, target, radius)
    val = _refine(lambda n: integ.expectation(stat, n), tol)
    return float(val[0]) if val.shape == (1,) else val


def log_normalizer_1d(model: PotentialModel, theta, target: str = "posterior",
                      tol: float = 1e-12) -> float:
    """``log ∫ exp(-V_theta - U_theta)``, accurate to ``tol`` in absolute terms."""
    integ = _Integrator(model, theta, target)
    val = _refine(lambda n: (np.array([integ.log_normalizer(n)]), np.ones(1)), tol)
    return float(val[0])


def _unpack(instance_or_model, statistic):
    if isinstance(instance_or_model, ProblemInstance):
        model = instance_or_model.model
        stat = statistic or instance_or_model.estimator.statistic
    else:
        model = instance_or_model
        stat = statistic
    if stat is None:
        raise InvalidArgument("a statistic is required with a bare model")
    return model, stat


def _scalar_instance(instance: ProblemInstance) -> None:
    _require_scalar(instance.model)
    if instance.domain.dim != 1:
        raise UnsupportedConfiguration("objective oracles need a scalar parameter")


def prior_expectation(instance: ProblemInstance, theta: float) -> float:
    """``E[g]`` under the prior: closed form for homogeneous statistics, quadrature otherwise."""
    v = instance.estimator.variant
    d = instance.model.dim
    if isinstance(v, Homogeneous):
        return d / (v.alpha * theta)
    if isinstance(v, SeparablyHomogeneous):
        return len(v.blocks[0]) / (v.degrees[0] * theta)
    return posterior_expectation_1d(instance, [theta], target="prior", tol=1e-10)


def marginal_gradient(instance: ProblemInstance, theta: float) -> float:
    """``d/dtheta`` of ``-log p(y | theta)``: posterior minus prior mean of ``g``."""
    _scalar_instance(instance)
    post = posterior_expectation_1d(instance, [theta], tol=1e-10)
    return post - prior_expectation(instance, theta)


def theta_star_1d(instance: ProblemInstance, tol: float = 1e-8) -> float:
    """Maximiser of the marginal likelihood over the box by bisection on its gradient.

    A nonnegative gradient at the lower bound (or nonpositive at the upper
    bound) means the maximiser sits on that boundary.
    """
    _scalar_instance(instance)
    lo, hi = float(instance.domain.lower[0]), float(instance.domain.upper[0])
    g_lo, g_hi = marginal_gradient(instance, lo), marginal_gradient(instance, hi)
    if g_lo >= 0.0:
        return lo
    if g_hi <= 0.0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if marginal_gradient(instance, mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def negative_log_marginal(instance: ProblemInstance, theta: float) -> float:
    """``f(theta) = -log p(y | theta)`` up to a theta-independent constant."""
    _scalar_instance(instance)
    post = log_normalizer_1d(instance.model, [theta])
    v = instance.estimator.variant
    if isinstance(v, (Homogeneous, SeparablyHomogeneous)):
        alpha = v.alpha if isinstance(v, Homogeneous) else v.degrees[0]
        prior = -instance.model.dim / alpha * math.log(theta)
    else:
        prior = log_normalizer_1d(instance.model, [theta], target="prior")
    return prior - post


@dataclass(frozen=True)
class ObjectiveOracle:
    """Chebyshev interpolant of ``f`` in ``log theta`` with its minimum over the box."""

    interpolant: Chebyshev
    theta_star: float
    minimum: float
    max_check_error: float

    def value(self, theta):
        t = np.asarray(theta, dtype=float)
        return self.interpolant(np.log(t))


def objective_oracle(instance: ProblemInstance, degree: int = 96, checks: int = 16,
                     tol: float = 1e-9) -> ObjectiveOracle:
    """Build ``f`` on the box and verify the interpolant against direct quadrature."""
    _scalar_instance(instance)
    lo, hi = float(instance.domain.lower[0]), float(instance.domain.upper[0])

    def f_log(s):
        return np.array([negative_log_marginal(instance, math.exp(v)) for v in np.atleast_1d(s)])

    cheb = Chebyshev.interpolate(f_log, degree, domain=[math.log(lo), math.log(hi)])
    probe = np.exp(np.linspace(math.log(lo), math.log(hi), checks + 2)[1:-1] + 0.0137)
    probe = probe[probe < hi]
    direct = f_log(np.log(probe))
    err = float(np.max(np.abs(cheb(np.log(probe)) - direct)))
    if err > tol * max(1.0, float(np.max(np.abs(direct)))):
        raise NumericalFailure(f"objective interpolant error {err:.3g} exceeds tolerance")
    star = theta_star_1d(instance)
    fmin = negative_log_marginal(instance, star)
    return ObjectiveOracle(cheb, star, fmin, err)


def gaussian_kl(v1, sigma1: float, v2, sigma2: float) -> float:
    """``KL(N(v1, sigma1^2 I) || N(v2, sigma2^2 I))``."""
    if not (sigma1 > 0 and sigma2 > 0):
        raise InvalidArgument("standard deviations must be positive")
    v1 = np.atleast_1d(np.asarray(v1, dtype=float))
    v2 = np.atleast_1d(np.asarray(v2, dtype=float))
    if v1.shape != v2.shape:
        raise InvalidArgument("means must have the same shape")
    d = v1.shape[0]
    r = (sigma1 / sigma2) ** 2
    diff = v1 - v2
    return float(diff @ diff / (2.0 * sigma2 ** 2) + 0.5 * d * (-math.log(r) - 1.0 + r))


def gaussian_kl_bound(v1, sigma1: float, v2, sigma2: float) -> float:
    """Quadratic upper bound on :func:`gaussian_kl`, valid when ``sigma1 >= sigma2``."""
    if not sigma1 >= sigma2 > 0:
        raise InvalidArgument("bound needs sigma1 >= sigma2 > 0")
    v1 = np.atleast_1d(np.asarray(v1, dtype=float))
    v2 = np.atleast_1d(np.asarray(v2, dtype=float))
    diff = v1 - v2
    r = (sigma1 / sigma2) ** 2
    return float(diff @ diff / (2.0 * sigma2 ** 2) + 0.5 * v1.shape[0] * (1.0 - r) ** 2)


@dataclass(frozen=True)
class DriftConstants:
    varpi: float
    lam: float
    b: float
    gamma_bar: float


def drift_constants(model: PotentialModel, cfg: KernelConfig,
                    gamma_max: Optional[float] = None) -> DriftConstants:
    """Rate ``lambda_2 = exp(-varpi/2)`` and offset ``b_2`` of the quadratic drift
    ``E[1 + |X_1|^2] <= lambda_2^gamma (1 + |x|^2) + b_2 gamma`` under strong convexity."""
    m = model.strong_convexity
    if m is None:
        raise UnsupportedConfiguration("quadratic drift constants need strong convexity metadata")
    if cfg.kind is KernelKind.ULA:
        raise UnsupportedConfiguration("drift constants are available for MYULA and PULA only")
    L, M, d = model.lipschitz_grad, model.lipschitz_nonsmooth, model.dim
    if not math.isfinite(M):
        raise UnsupportedConfiguration("drift constants need a Lipschitz nonsmooth part")
    R = model.minimizer_bounds.rv1
    gbar = cfg.gamma if gamma_max is None else float(gamma_max)
    if gbar < cfg.gamma:
        raise InvalidArgument("gamma_max must be at least the configured step")
    if not gbar < 2.0 / (m + L):
        raise UnsupportedConfiguration("drift constants need gamma_max < 2/(m+L)")
    varpi = m * L / (m + L)
    radial = (1.0 / (2.0 / (m + L) - gbar) + 4.0 * varpi) * R ** 2
    if cfg.kind is KernelKind.MYULA:
        b = (radial + 2.0 * gbar * M * L * R + gbar * M ** 2 + 2.0 * d
             + 2.0 * M ** 2 * (1.0 + gbar * L) ** 2 / varpi + varpi / 2.0)
    else:
        kbar = cfg.kappa_bounds[1]
        b = (gbar * kbar ** 2 * M ** 2 + radial + 2.0 * d
             + 2.0 * kbar ** 2 * M ** 2 / varpi + varpi / 2.0)
    return DriftConstants(varpi, math.exp(-varpi / 2.0), b, gbar)


def drift_sides(model: PotentialModel, theta, cfg: KernelConfig, x,
                gamma_max: Optional[float] = None):
    """Exact ``(lhs, rhs)`` of the quadratic drift inequality at ``x``.

    ``lhs = 1 + |T(x)|^2 + 2 gamma d`` is the exact one-step expectation of
    ``1 + |X_1|^2``; ``rhs = lambda_2^gamma (1 + |x|^2) + b_2 gamma``.
    """
    check_admissible(model, cfg)
    k = drift_constants(model, cfg, gamma_max)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lhs = 1.0 + one_step_second_moment(model, theta, cfg, x)
    rhs = k.lam ** cfg.gamma * (1.0 + float(x @ x)) + k.b * cfg.gamma
    return lhs, rhs


def kernel_stationary_expectation_1d(model: PotentialModel, theta, cfg: KernelConfig,
                                     statistic: Callable, lower: float, upper: float,
                                     spacing: Optional[float] = None) -> float:
    """``E[statistic]`` under the invariant law of the discretised kernel itself.

    The kernel ``x' = T(x) + sqrt(2 gamma) Z`` is projected onto a uniform grid
    on ``[lower, upper]`` with cell-integrated Gaussian transition weights; the
    stationary vector solves the resulting linear system.  The difference to
    :func:`posterior_expectation_1d` is the exact discretisation bias, up to
    the grid error (second order in ``spacing``).
    """
    _require_scalar(model)
    if not upper > lower:
        raise InvalidArgument("need lower < upper")
    check_admissible(model, cfg)
    if not cfg.gamma > 0:
        raise InvalidArgument("stationary law needs a positive step size")
    sd = math.sqrt(2.0 * cfg.gamma)
    h = min(0.01, sd / 12.0) if spacing is None else float(spacing)
    grid = np.arange(lower, upper + 0.5 * h, h)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    from .samplers import drift_map

    t = np.array([drift_map(model, theta, cfg, [x])[0] for x in grid])
    edges = np.concatenate([grid - 0.5 * h, [grid[-1] + 0.5 * h]])
    cdf = ndtr((edges[None, :] - t[:, None]) / sd)
    trans = np.diff(cdf, axis=1)
    trans /= trans.sum(axis=1, keepdims=True)
    n = grid.shape[0]
    system = trans.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(system, rhs)
    vals = np.array([float(np.atleast_1d(statistic(theta, np.array([x])))[0]) for x in grid])
    return float(pi @ vals)
