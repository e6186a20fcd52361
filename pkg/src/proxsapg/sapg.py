"""Projected stochastic approximation driver with Langevin gradient estimates.

Iteration ``n`` freezes ``theta_n``, advances the posterior chain (and the
prior chain for the inhomogeneous estimator) by ``m_n`` kernel steps starting
from where the previous iteration stopped, and sets

    theta_{n+1} = clamp(theta_n - delta_{n+1} * mean_k (H(X_k) + H̄(X̄_k))).

The returned estimate is the weighted average ``sum delta_n theta_n / sum delta_n``
over ``n = 0..N-1``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels
from .errors import InvalidArgument, NumericalFailure, ScheduleInvalid, UnsupportedConfiguration
from .model import ProblemInstance, hbar_constants, project_theta, _zero_grad
from .samplers import NOISE_BLOCK, ChainState, KernelConfig, check_admissible, run_chain

INCREASING = "increasing"
FIXED = "fixed"


@dataclass(frozen=True)
class Schedule:
    """Power-law sequences ``delta_n = delta0 (n+1)^-a``, ``gamma_n = gamma0 (n+1)^-b``
    and ``m_n = ceil(m0 (n+1)^c)``."""

    delta0: float
    gamma0: float
    m0: int = 1
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    batch_mode: str = INCREASING

    def __post_init__(self):
        if not (self.delta0 > 0 and self.gamma0 > 0):
            raise InvalidArgument("delta0 and gamma0 must be positive")
        if int(self.m0) != self.m0 or self.m0 < 1:
            raise InvalidArgument("m0 must be a positive integer")
        if min(self.a, self.b, self.c) < 0:
            raise InvalidArgument("schedule exponents must be nonnegative")
        mode = str(self.batch_mode).lower()
        if mode not in (INCREASING, FIXED):
            raise InvalidArgument(f"batch mode must be '{INCREASING}' or '{FIXED}'")
        for name in ("delta0", "gamma0", "a", "b", "c"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "m0", int(self.m0))
        object.__setattr__(self, "batch_mode", mode)

    def deltas(self, start: int, stop: int) -> np.ndarray:
        n = np.arange(start, stop, dtype=float)
        return self.delta0 * (n + 1.0) ** (-self.a)

    def gammas(self, start: int, stop: int) -> np.ndarray:
        n = np.arange(start, stop, dtype=float)
        return self.gamma0 * (n + 1.0) ** (-self.b)

    def batches(self, start: int, stop: int) -> np.ndarray:
        n = np.arange(start, stop, dtype=float)
        raw = self.m0 * (n + 1.0) ** self.c
        # shave rounding noise so exact integers are not bumped up
        return np.ceil(raw * (1.0 - 1e-12)).astype(np.int64)

    def total_steps(self, n_iter: int) -> int:
        return int(self.batches(0, n_iter).sum())

    def iterations_within(self, budget: int) -> int:
        """Largest ``N`` whose total kernel steps fit in ``budget`` (per chain)."""
        n, used = 0, 0
        while True:
            m = int(self.batches(n, n + 1)[0])
            if used + m > budget:
                return n
            used += m
            n += 1


@dataclass(frozen=True)
class Condition:
    name: str
    holds: bool
    margin: float


@dataclass(frozen=True)
class ScheduleReport:
    mode: str
    conditions: tuple

    @property
    def valid(self) -> bool:
        return all(c.holds for c in self.conditions)

    @property
    def failures(self) -> list:
        return [c for c in self.conditions if not c.holds]

    def lines(self) -> list:
        return [f"{c.name}: {'ok' if c.holds else 'FAIL'} (margin {c.margin:+.6g})"
                for c in self.conditions]


# exponents are typed as decimals, so 2(1 - 0.9) must tie with 0.2
MARGIN_SNAP = 1e-12


def _margin(lhs, rhs) -> float:
    margin = float(lhs - rhs)
    return 0.0 if abs(margin) <= MARGIN_SNAP else margin


def _strict(name, lhs, rhs):
    margin = _margin(lhs, rhs)
    return Condition(name, margin > 0.0, margin)


def _weak(name, lhs, rhs):
    margin = _margin(lhs, rhs)
    return Condition(name, margin >= 0.0, margin)


def validate_schedule(s: Schedule, regime: Optional[str] = None,
                      lipschitz_f: Optional[float] = None,
                      gamma_bar: Optional[float] = None) -> ScheduleReport:
    """Check the summability conditions that give almost-sure convergence.

    ``increasing``: ``a + b/2 > 1``, ``a - b + c > 1``, ``a <= 1``.
    ``fixed``: ``c = 0``, ``5/6 < a <= 1`` and ``2(1-a) < b < min(a - 1/2, a/2)``.
    Margins are signed so that a satisfied condition has a nonnegative margin.
    ``delta0 < 1/L_f`` and ``gamma0 < gamma_bar`` are added when those are given.
    """
    mode = (regime or s.batch_mode).lower()
    a, b, c = s.a, s.b, s.c
    if mode == INCREASING:
        conds = [_strict("a + b/2 > 1", a + b / 2, 1.0),
                 _strict("a - b + c > 1", a - b + c, 1.0),
                 _weak("a <= 1", 1.0, a)]
    elif mode == FIXED:
        conds = [Condition("c = 0", c == 0.0, -abs(c)),
                 _strict("a > 5/6", a, 5.0 / 6.0),
                 _weak("a <= 1", 1.0, a),
                 _strict("b > 2(1 - a)", b, 2.0 * (1.0 - a)),
                 _strict("b < min(a - 1/2, a/2)", min(a - 0.5, a / 2.0), b)]
    else:
        raise InvalidArgument(f"unknown batch mode {regime!r}")
    if lipschitz_f is not None:
        conds.append(_strict("delta0 < 1/L_f", 1.0 / lipschitz_f, s.delta0))
    if gamma_bar is not None:
        conds.append(_strict("gamma0 < gamma_bar", gamma_bar, s.gamma0))
    return ScheduleReport(mode, tuple(conds))


@dataclass
class SapgState:
    theta: np.ndarray
    theta_num: np.ndarray
    delta_sum: float
    posterior_chain: ChainState
    prior_chain: Optional[ChainState]
    iteration: int = 0
    last_grad: Optional[np.ndarray] = None

    @property
    def theta_bar(self) -> np.ndarray:
        if self.delta_sum <= 0:
            raise InvalidArgument("no iterations accumulated yet")
        return self.theta_num / self.delta_sum

    @classmethod
    def start(cls, instance: ProblemInstance, seed=0, theta0=None, x0=None,
              xbar0=None) -> "SapgState":
        """Fresh state.  Posterior and prior chains draw from independent Philox
        streams spawned from ``seed``."""
        theta = instance.domain.initial_point() if theta0 is None else theta0
        theta = project_theta(instance.domain, theta)
        d = instance.model.dim
        x0 = np.zeros(d) if x0 is None else x0
        post_seed, prior_seed = np.random.SeedSequence(seed).spawn(2)
        post = ChainState.new(x0, post_seed)
        prior = None
        if instance.estimator.needs_prior_chain:
            prior = ChainState.new(np.zeros(d) if xbar0 is None else xbar0, prior_seed)
        return cls(theta, np.zeros_like(theta), 0.0, post, prior, 0)


@dataclass
class RunTrace:
    """One row per iteration ``n``: ``theta_n``, the running average including
    ``n``, ``gamma_n``, ``delta_n``, ``m_n``, the gradient estimate at ``theta_n``
    and cumulative wall time (resolved per block of iterations)."""

    n: np.ndarray
    theta: np.ndarray
    theta_bar: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    batch: np.ndarray
    grad: np.ndarray
    elapsed: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.n.shape[0]

    @property
    def final_theta_bar(self) -> np.ndarray:
        return self.theta_bar[-1]


def _advance(instance: ProblemInstance, cfg: KernelConfig, schedule: Schedule,
             state: SapgState, count: int):
    """Run iterations ``state.iteration .. state.iteration + count - 1`` as one block."""
    n0 = state.iteration
    gammas = schedule.gammas(n0, n0 + count)
    deltas = schedule.deltas(n0, n0 + count + 1)
    batches = schedule.batches(n0, n0 + count)
    check_admissible(instance.model, cfg.with_gamma(float(gammas.max())))

    model, est = instance.model, instance.estimator
    _, sgrad, _, prox, ngrad = model.pieces("posterior")
    two_chain = est.needs_prior_chain
    if two_chain:
        _, psgrad, _, pprox, pngrad = model.pieces("prior")
    else:
        psgrad, pprox, pngrad = sgrad, prox, ngrad
    if cfg.kind.code != _kernels.ULA:
        ngrad = pngrad = _zero_grad
    elif ngrad is None or pngrad is None:
        raise UnsupportedConfiguration("ULA needs a differentiable nonsmooth part")
    fns = [sgrad, prox, ngrad, est.statistic] + ([psgrad, pprox, pngrad] if two_chain else [])
    loops = _kernels.loops_for(*fns)

    d, k = model.dim, instance.domain.dim
    total = int(batches.sum())
    consts = hbar_constants(est, d)
    hnum, hdeg = consts if consts is not None else (np.zeros(k), np.ones(k))

    post = state.posterior_chain
    noise = post.draw(total)
    if two_chain:
        prior = state.prior_chain
        pnoise = prior.draw(total)
        xbar = prior.x.copy()
    else:
        prior, pnoise, xbar = None, np.empty((0, d)), np.zeros(d)
    x = post.x.copy()
    theta = state.theta.copy()
    theta_num = state.theta_num.copy()
    delta_sum = np.array([state.delta_sum])
    out_theta = np.empty((count, k))
    out_bar = np.empty((count, k))
    out_grad = np.empty((count, k))
    loops.sapg_block(cfg.kind.code, cfg.kappa, sgrad, prox, ngrad, est.statistic,
                     psgrad, pprox, pngrad, two_chain, hnum, hdeg,
                     instance.domain.lower, instance.domain.upper, theta, theta_num,
                     delta_sum, x, xbar, gammas, deltas, batches, noise, pnoise,
                     out_theta, out_bar, out_grad)
    if not all(np.all(np.isfinite(v)) for v in (theta, theta_num, x, out_grad)):
        raise NumericalFailure(f"non-finite iterate after iteration {n0 + count - 1}")

    new_post = ChainState(x, post.rng, post.steps_taken + total)
    new_prior = ChainState(xbar, prior.rng, prior.steps_taken + total) if two_chain else None
    new_state = SapgState(theta, theta_num, float(delta_sum[0]), new_post, new_prior,
                          n0 + count, out_grad[-1].copy())
    rows = (out_theta, out_bar, gammas, deltas[:-1], batches, out_grad)
    return new_state, rows


def sapg_iteration(instance: ProblemInstance, cfg: KernelConfig, schedule: Schedule,
                   state: SapgState) -> SapgState:
    """One driver iteration.  ``cfg`` supplies the kernel kind and ``kappa``; the
    step size is taken from the schedule at ``state.iteration``."""
    return _advance(instance, cfg, schedule, state, 1)[0]


def burn_in(instance: ProblemInstance, cfg: KernelConfig, state: SapgState,
            n_steps: int) -> SapgState:
    """Advance the chains ``n_steps`` at the current ``theta`` without updating it."""
    post = run_chain(instance.model, state.theta, cfg, state.posterior_chain, n_steps)[0]
    prior = state.prior_chain
    if prior is not None:
        prior = run_chain(instance.model, state.theta, replace(cfg, target="prior"), prior,
                          n_steps)[0]
    return replace(state, posterior_chain=post, prior_chain=prior)


def _blocks(schedule: Schedule, n_iter: int):
    """Split ``0..n_iter`` into runs of iterations of about NOISE_BLOCK steps."""
    start = 0
    while start < n_iter:
        stop = min(n_iter, start + 4096)
        cum = np.cumsum(schedule.batches(start, stop))
        count = max(1, int(np.searchsorted(cum, NOISE_BLOCK, side="right")))
        yield start, min(count, stop - start)
        start += min(count, stop - start)


def run(instance: ProblemInstance, schedule: Schedule, kappa: float = 1.0, n_iter: int = 100,
        seed=0, kind="MYULA", theta0=None, x0=None, allow_invalid_schedule: bool = False,
        lipschitz_f: Optional[float] = None, state: Optional[SapgState] = None,
        warmup: int = 0):
    """Run ``n_iter`` iterations and return ``(theta_bar_N, trace)``.

    The schedule must pass :func:`validate_schedule` unless
    ``allow_invalid_schedule`` is set (constant-step studies).  ``warmup``
    kernel steps at ``theta_0`` and ``gamma_0`` move the chains off their
    starting points before the first iteration.
    """
    n_iter = int(n_iter)
    if n_iter < 1:
        raise InvalidArgument("need at least one iteration: the average is undefined otherwise")
    report = validate_schedule(schedule, lipschitz_f=lipschitz_f)
    if not report.valid and not allow_invalid_schedule:
        raise ScheduleInvalid("schedule fails " + "; ".join(c.name for c in report.failures))
    cfg = KernelConfig(kind, schedule.gamma0, kappa)
    if state is None:
        state = SapgState.start(instance, seed, theta0, x0)
    check_admissible(instance.model, cfg.with_gamma(float(schedule.gammas(state.iteration,
                                                                          state.iteration + 1)[0])))
    if warmup:
        state = burn_in(instance, cfg, state, warmup)
    parts, elapsed = [], []
    t0 = time.perf_counter()
    for _, count in _blocks(schedule, n_iter):
        state, rows = _advance(instance, cfg, schedule, state, count)
        parts.append(rows)
        elapsed.append(np.full(count, time.perf_counter() - t0))
    cols = [np.concatenate(c) for c in zip(*parts)]
    n = np.arange(state.iteration - n_iter, state.iteration)
    trace = RunTrace(n, cols[0], cols[1], cols[2], cols[3], cols[4], cols[5],
                     np.concatenate(elapsed))
    return trace.final_theta_bar.copy(), trace


def averaged_objective_gap(trace: RunTrace, f_oracle) -> np.ndarray:
    """Running ``sum delta_k f(theta_k) / sum delta_k - min f`` along a scalar trace.

    ``f_oracle`` needs ``value(theta)`` (vectorised over an array of scalars)
    and ``minimum``.  Uses the same weights and indices as the averaged iterate.
    """
    if f_oracle is None or not hasattr(f_oracle, "value") or not hasattr(f_oracle, "minimum"):
        raise UnsupportedConfiguration("an objective oracle with value() and minimum is required")
    if trace.theta.shape[1] != 1:
        raise UnsupportedConfiguration("objective oracles exist only for scalar parameters")
    f = np.asarray(f_oracle.value(trace.theta[:, 0]), dtype=float)
    w = trace.delta
    running = np.cumsum(w * f) / np.cumsum(w)
    return np.maximum(running - f_oracle.minimum, 0.0)
