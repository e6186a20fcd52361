"""Unadjusted Langevin kernels: ULA, MYULA and PULA.

Every kernel has the form ``x' = T(x) + sqrt(2 gamma) Z`` with ``Z`` standard
Gaussian and a deterministic drift map ``T``:

* ULA:   ``T(x) = x - gamma (∇V + ∇U)(x)`` (needs a differentiable ``U``),
* MYULA: ``T(x) = x - gamma ∇V(x) - (x - prox^{kappa gamma}_U(x)) / kappa``,
* PULA:  ``T(x) = p - gamma ∇V(p)`` with ``p = prox^{kappa gamma}_U(x)``.

Noise comes from a Philox counter-based generator owned by the chain state.
A chain whose ``rng`` is ``None`` takes drift-only steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .errors import AdmissibilityError, InvalidArgument, UnsupportedConfiguration
from .model import PotentialModel, _zero_grad

# Largest number of noise vectors drawn at once.
NOISE_BLOCK = 1 << 20

DEFAULT_KAPPA_BOUNDS = (0.6, 2.0)


class KernelKind(str, Enum):
    ULA = "ULA"
    MYULA = "MYULA"
    PULA = "PULA"

    @property
    def code(self) -> int:
        return {"ULA": _kernels.ULA, "MYULA": _kernels.MYULA, "PULA": _kernels.PULA}[self.value]


@dataclass(frozen=True)
class KernelConfig:
    """Kernel kind, step ``gamma`` and smoothing ratio ``kappa`` (so ``lambda = kappa gamma``)."""

    kind: KernelKind
    gamma: float
    kappa: float = 1.0
    target: str = "posterior"
    kappa_bounds: tuple = DEFAULT_KAPPA_BOUNDS

    def __post_init__(self):
        try:
            kind = KernelKind(str(getattr(self.kind, "value", self.kind)).upper())
        except ValueError:
            raise InvalidArgument(f"unknown kernel kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        gamma, kappa = float(self.gamma), float(self.kappa)
        if not (gamma >= 0.0 and math.isfinite(gamma)):
            raise InvalidArgument(f"step size must be finite and nonnegative, got {gamma}")
        lo, hi = (float(v) for v in self.kappa_bounds)
        if not (0.5 < lo <= 1.0 <= hi):
            raise InvalidArgument(f"kappa bounds must satisfy 1/2 < low <= 1 <= high, got {(lo, hi)}")
        if not lo <= kappa <= hi:
            raise AdmissibilityError(f"kappa={kappa} outside the interval [{lo}, {hi}]")
        if self.target not in ("posterior", "prior"):
            raise InvalidArgument(f"unknown chain target {self.target!r}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "kappa_bounds", (lo, hi))

    def with_gamma(self, gamma: float) -> "KernelConfig":
        return replace(self, gamma=gamma)


def _ratio(num: float, den: float) -> float:
    return math.inf if den == 0.0 else num / den


def step_bound(model: PotentialModel, kind, kappa: float = 1.0) -> float:
    """Supremum ``gamma_bar`` of admissible step sizes for the declared regularity.

    Either regularity regime suffices, so the larger of the two bounds is used
    when both are declared.  ULA is treated like PULA and only sees the
    Lipschitz constant of ``∇V``.
    """
    kind = KernelKind(str(getattr(kind, "value", kind)).upper())
    L = model.lipschitz_grad
    bounds = []
    if model.strong_convexity is not None:
        m = model.strong_convexity
        b = 2.0 / (m + L)
        if kind is KernelKind.MYULA:
            b = min(_ratio(2.0 - 1.0 / kappa, L), b)
        bounds.append(b)
    if model.coercivity is not None:
        eta, _ = model.coercivity
        if kind is KernelKind.MYULA:
            bounds.append(min(_ratio(2.0 - 1.0 / kappa, L),
                              _ratio(eta, 2.0 * model.lipschitz_nonsmooth * L)))
        else:
            bounds.append(_ratio(2.0, L))
    return max(bounds)


def check_admissible(model: PotentialModel, cfg: KernelConfig) -> None:
    bound = step_bound(model, cfg.kind, cfg.kappa)
    if not cfg.gamma < bound:
        raise AdmissibilityError(
            f"{cfg.kind.value} step gamma={cfg.gamma} violates gamma < {bound:.6g}")


def _pieces(model: PotentialModel, cfg: KernelConfig):
    _, sgrad, _, prox, ngrad = model.pieces(cfg.target)
    if cfg.kind is KernelKind.ULA:
        if ngrad is None:
            raise UnsupportedConfiguration("ULA needs a differentiable nonsmooth part")
    else:
        ngrad = _zero_grad
    return sgrad, prox, ngrad


def _theta(theta) -> np.ndarray:
    return np.atleast_1d(np.asarray(theta, dtype=float)).copy()


def _state_vec(model: PotentialModel, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if x.shape != (model.dim,):
        raise InvalidArgument(f"state has shape {x.shape}, model dimension is {model.dim}")
    return x


@dataclass
class ChainState:
    """Current point, noise stream and step counter of one chain.

    The generator object is shared with the states derived from this one by
    :func:`step` and :func:`run_chain`; it is advanced, never copied.
    """

    x: np.ndarray
    rng: Optional[np.random.Generator]
    steps_taken: int = 0

    @classmethod
    def new(cls, x0, seed=None) -> "ChainState":
        """Chain at ``x0`` with a Philox stream from ``seed`` (``None`` gives no noise)."""
        x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
        rng = None if seed is None else np.random.Generator(np.random.Philox(seed))
        return cls(x, rng, 0)

    def draw(self, n: int) -> np.ndarray:
        d = self.x.shape[0]
        if self.rng is None:
            return np.zeros((n, d))
        return self.rng.standard_normal((n, d))


@dataclass(frozen=True)
class ChainSummary:
    """Running sums of the statistic over the states ``X_1..X_n``."""

    count: int
    stat_sum: np.ndarray
    states: Optional[np.ndarray] = None

    @property
    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise InvalidArgument("empty summary has no mean")
        return self.stat_sum / self.count


def drift_map(model: PotentialModel, theta, cfg: KernelConfig, x) -> np.ndarray:
    """Deterministic part ``T(x)`` of one kernel step."""
    check_admissible(model, cfg)
    sgrad, prox, ngrad = _pieces(model, cfg)
    loops = _kernels.loops_for(sgrad, prox, ngrad)
    out = loops.drift(cfg.kind.code, sgrad, prox, ngrad, _theta(theta), _state_vec(model, x),
                      cfg.gamma, cfg.kappa)
    return np.asarray(out, dtype=float)


def run_chain(model: PotentialModel, theta, cfg: KernelConfig, state: ChainState, n: int,
              statistic: Optional[Callable] = None, record: bool = False):
    """Apply ``n`` kernel steps at fixed ``theta``.

    Returns the new state and a :class:`ChainSummary` with the sum of
    ``statistic(theta, X_k)`` over ``k = 1..n`` (an empty vector when no
    statistic is given) and, with ``record=True``, the visited states.
    """
    n = int(n)
    if n < 0:
        raise InvalidArgument("number of steps must be nonnegative")
    check_admissible(model, cfg)
    sgrad, prox, ngrad = _pieces(model, cfg)
    stat = _kernels.no_stat if statistic is None else statistic
    loops = _kernels.loops_for(sgrad, prox, ngrad, stat)
    theta = _theta(theta)
    x = _state_vec(model, state.x)
    stat_sum = np.zeros(np.asarray(stat(theta, x)).shape[0])
    states = np.empty((n, model.dim)) if record else None
    done = 0
    while done < n:
        k = min(NOISE_BLOCK, n - done)
        noise = state.draw(k)
        rec = states[done:done + k] if record else np.empty((0, model.dim))
        loops.chain_loop(cfg.kind.code, sgrad, prox, ngrad, stat, theta, x, cfg.gamma,
                         cfg.kappa, noise, stat_sum, rec)
        done += k
    new_state = ChainState(x, state.rng, state.steps_taken + n)
    return new_state, ChainSummary(n, stat_sum, states)


def step(model: PotentialModel, theta, cfg: KernelConfig, state: ChainState) -> ChainState:
    """One kernel step: ``drift_map(x) + sqrt(2 gamma) Z``."""
    return run_chain(model, theta, cfg, state, 1)[0]


def step_prior(model: PotentialModel, theta, cfg: KernelConfig, state: ChainState) -> ChainState:
    """One step of the kernel built from the prior split ``V̄, Ū``."""
    if model.prior_split is None:
        raise UnsupportedConfiguration("model has no prior split")
    return step(model, theta, replace(cfg, target="prior"), state)


def one_step_second_moment(model: PotentialModel, theta, cfg: KernelConfig, x) -> float:
    """Exact ``E|X_1|^2 = |T(x)|^2 + 2 gamma d`` from ``X_0 = x``."""
    t = drift_map(model, theta, cfg, x)
    return float(t @ t) + 2.0 * cfg.gamma * model.dim
