"""Empirical checks of ergodicity, discretisation bias, drift and plateau behaviour."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgument, UnsupportedConfiguration
from .model import PotentialModel, ProblemInstance, project_theta
from .oracle import drift_sides, marginal_gradient, posterior_expectation_1d
from .sapg import RunTrace, Schedule, averaged_objective_gap, run
from .samplers import ChainState, KernelConfig, check_admissible, run_chain

DISTANCE_FLOOR = 1e-12


def contraction_bound(model: PotentialModel, gamma: float) -> float:
    """Per-step synchronous-coupling factor ``sqrt(1 - gamma varpi / 2)`` under strong convexity."""
    if model.strong_convexity is None:
        raise UnsupportedConfiguration("contraction bound needs strong convexity metadata")
    m, L = model.strong_convexity, model.lipschitz_grad
    return math.sqrt(1.0 - gamma * (m * L / (m + L)) / 2.0)


@dataclass(frozen=True)
class DecayFit:
    """Geometric fit ``d_k ≈ C factor^k`` to a coupling-distance sequence.

    ``factor`` and ``quality`` (R² of the log-linear fit) use only points above
    the distance floor; ``max_step_ratio`` is the largest ``d_{k+1}/d_k``.
    A pair of chains that start together gives ``factor = 0``.
    """

    distances: np.ndarray
    log_distances: np.ndarray
    factor: float
    quality: float
    max_step_ratio: float
    points_used: int


def fit_decay(distances) -> DecayFit:
    d = np.asarray(distances, dtype=float)
    with np.errstate(divide="ignore"):
        logd = np.log(d)
    keep = np.flatnonzero(d > DISTANCE_FLOOR)
    # stop at the first floor hit
    if keep.size and keep.size != keep[-1] + 1:
        keep = keep[: int(np.argmax(np.diff(keep) > 1)) + 1]
    ratios = d[1:] / np.where(d[:-1] > DISTANCE_FLOOR, d[:-1], np.inf)
    max_ratio = float(ratios.max()) if ratios.size else 0.0
    if keep.size < 2:
        return DecayFit(d, logd, 0.0, 1.0, max_ratio, int(keep.size))
    k = keep.astype(float)
    slope, intercept = np.polyfit(k, logd[keep], 1)
    resid = logd[keep] - (slope * k + intercept)
    spread = logd[keep] - logd[keep].mean()
    ss = float(spread @ spread)
    quality = 1.0 if ss == 0.0 else 1.0 - float(resid @ resid) / ss
    return DecayFit(d, logd, float(math.exp(slope)), quality, max_ratio, int(keep.size))


def coupling_contraction(model: PotentialModel, theta, cfg: KernelConfig, x0, y0, n: int,
                         seed: int = 0) -> DecayFit:
    """Run two chains from ``x0`` and ``y0`` on the same noise for ``n`` steps and fit
    the decay of ``|X_k - Y_k|`` for ``k = 0..n``."""
    sx = ChainState.new(x0, seed)
    sy = ChainState.new(y0, seed)
    _, px = run_chain(model, theta, cfg, sx, n, record=True)
    _, py = run_chain(model, theta, cfg, sy, n, record=True)
    start = np.linalg.norm(np.atleast_1d(np.asarray(x0, float)) - np.atleast_1d(np.asarray(y0, float)))
    dist = np.concatenate([[start], np.linalg.norm(px.states - py.states, axis=1)])
    return fit_decay(dist)


@dataclass(frozen=True)
class BiasEntry:
    gamma: float
    estimate: float
    reference: float
    bias: float
    stderr: float

    @property
    def indistinguishable(self) -> bool:
        """Bias below two standard errors carries no usable signal."""
        return self.bias < 2.0 * self.stderr


def bias_ratio(coarse: BiasEntry, fine: BiasEntry) -> Optional[float]:
    """``bias(coarse) / bias(fine)``, or ``None`` if either bias is not resolved."""
    if coarse.indistinguishable or fine.indistinguishable:
        return None
    return coarse.bias / fine.bias


def chain_mean(model: PotentialModel, theta, cfg: KernelConfig, statistic: Callable,
               budget: int, seed: int = 0, burn_in: float = 0.2, batches: int = 50,
               x0=None):
    """Batch-means estimate ``(mean, stderr)`` of a scalar statistic from one chain."""
    n_burn = int(burn_in * budget)
    per = (budget - n_burn) // batches
    if per < 1:
        raise InvalidArgument("budget too small for the requested number of batches")
    state = ChainState.new(np.zeros(model.dim) if x0 is None else x0, seed)
    state, _ = run_chain(model, theta, cfg, state, n_burn)
    means = np.empty(batches)
    for i in range(batches):
        state, summ = run_chain(model, theta, cfg, state, per, statistic)
        means[i] = summ.mean[0]
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(batches))


def bias_sweep(model_or_instance, theta, cfg_base: KernelConfig, gammas: Sequence[float],
               statistic: Optional[Callable] = None, budget: int = 1_000_000, seed: int = 0,
               reference: Optional[float] = None, batches: int = 50):
    """Stationary bias of ``E[statistic]`` for each step size, sorted by ``gamma``.

    The reference value is the quadrature posterior expectation unless given.
    Each entry uses its own seed derived from ``seed``.
    """
    if isinstance(model_or_instance, ProblemInstance):
        model = model_or_instance.model
        statistic = statistic or model_or_instance.estimator.statistic
    else:
        model = model_or_instance
    if statistic is None:
        raise InvalidArgument("a statistic is required")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    cfgs = [cfg_base.with_gamma(float(g)) for g in sorted(gammas)]
    for cfg in cfgs:
        check_admissible(model, cfg)
    if reference is None:
        reference = posterior_expectation_1d(model, theta, statistic, tol=1e-10)
    seeds = np.random.SeedSequence(seed).spawn(len(cfgs))
    out = []
    for cfg, ss in zip(cfgs, seeds):
        est, se = chain_mean(model, theta, cfg, statistic, budget, ss, batches=batches)
        out.append(BiasEntry(cfg.gamma, est, float(reference), abs(est - reference), se))
    return out


@dataclass(frozen=True)
class DriftReport:
    points: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def margins(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(self.margins < 0.0))

    @property
    def worst_margin(self) -> float:
        return float(self.margins.min())


def drift_grid(model: PotentialModel, theta, cfg: KernelConfig, grid,
               gamma_max: Optional[float] = None) -> DriftReport:
    """Evaluate both sides of the quadratic drift inequality on every grid point."""
    check_admissible(model, cfg)
    pts = np.asarray(grid, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    sides = np.array([drift_sides(model, theta, cfg, p, gamma_max) for p in pts])
    return DriftReport(pts, sides[:, 0], sides[:, 1])


def projected_gradient_trace(instance: ProblemInstance, schedule: Schedule, n_iter: int,
                             gradient: Optional[Callable] = None, theta0=None) -> RunTrace:
    """Noise-free counterpart of the driver: the same update and averaging with the
    exact marginal-likelihood gradient in place of the Monte Carlo estimate."""
    if gradient is None:
        def gradient(t):
            return np.array([marginal_gradient(instance, float(t[0]))])
    dom = instance.domain
    theta = project_theta(dom, dom.initial_point() if theta0 is None else theta0)
    deltas = schedule.deltas(0, n_iter + 1)
    rows_t, rows_bar, rows_g = [], [], []
    num, den = np.zeros_like(theta), 0.0
    for n in range(n_iter):
        g = np.asarray(gradient(theta), dtype=float)
        rows_t.append(theta.copy())
        num = num + deltas[n] * theta
        den += deltas[n]
        rows_bar.append(num / den)
        rows_g.append(g)
        theta = project_theta(dom, theta - deltas[n + 1] * g)
    n = np.arange(n_iter)
    return RunTrace(n, np.array(rows_t), np.array(rows_bar), schedule.gammas(0, n_iter),
                    deltas[:-1], schedule.batches(0, n_iter), np.array(rows_g),
                    np.zeros(n_iter))


@dataclass(frozen=True)
class PlateauEntry:
    gamma0: float
    gaps: tuple

    @property
    def median_gap(self) -> float:
        return float(np.median(self.gaps))


def plateau_study(instance: ProblemInstance, gamma0_list: Sequence[float], shape: Schedule,
                  n_iter: int, seeds: Sequence[int], f_oracle, kind="MYULA",
                  kappa: float = 1.0, warmup: int = 0):
    """Terminal averaged-objective gap of constant-step runs for each ``gamma0``.

    ``shape`` fixes ``delta0``, ``m0`` and the exponents; only ``gamma0`` varies.
    """
    out = []
    for g0 in gamma0_list:
        sched = replace(shape, gamma0=float(g0))
        gaps = []
        for s in seeds:
            _, tr = run(instance, sched, kappa, n_iter, s, kind=kind,
                        allow_invalid_schedule=True, warmup=warmup)
            gaps.append(float(averaged_objective_gap(tr, f_oracle)[-1]))
        out.append(PlateauEntry(float(g0), tuple(gaps)))
    return out
