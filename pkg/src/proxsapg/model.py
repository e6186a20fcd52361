"""Parameter domains, theta-indexed potentials and gradient-estimator variants.

A posterior is written ``pi_theta(x) ∝ exp(-V_theta(x) - U_theta(x))`` with
``V_theta`` smooth (L-Lipschitz gradient) and ``U_theta`` convex, M-Lipschitz
and prox-friendly.  All callables use the array signatures

    smooth_value(theta, x) -> float       smooth_grad(theta, x) -> array
    nonsmooth_value(theta, x) -> float    nonsmooth_prox(theta, lam, x) -> array
    statistic(theta, x) -> array of length d_theta

where ``theta`` and ``x`` are 1-D float arrays.  The built-in models compile
these with numba so the chain loops in :mod:`proxsapg._kernels` run natively;
user models may pass plain Python functions and get an interpreted loop.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numba
import numpy as np

from .errors import DomainError, InvalidArgument, UnsupportedConfiguration

# Homogeneous estimators divide by theta; boxes must stay clear of zero.
THETA_FLOOR = 1e-12


@dataclass(frozen=True)
class ParameterDomain:
    """Axis-aligned box ``[lower, upper]`` in R^d_theta."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise InvalidArgument("lower and upper must be 1-D arrays of equal length")
        if not np.all(lo < hi):
            raise InvalidArgument(f"empty box: need lower < upper, got {lo} and {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def radius_bound(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def initial_point(self) -> np.ndarray:
        """Default starting parameter.

        Coordinates with a positive lower bound are scale parameters and start
        at the geometric mean of their bounds; the rest start at the midpoint.
        """
        mid = 0.5 * (self.lower + self.upper)
        pos = self.lower > 0.0
        mid[pos] = np.sqrt(self.lower[pos] * self.upper[pos])
        return mid


def project_theta(domain: ParameterDomain, theta) -> np.ndarray:
    """Euclidean projection onto the box (a coordinatewise clamp)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (domain.dim,):
        raise InvalidArgument(f"theta has shape {theta.shape}, domain has dimension {domain.dim}")
    return np.minimum(np.maximum(theta, domain.lower), domain.upper)


@dataclass(frozen=True)
class MinimizerBounds:
    """Radii from the regularity assumptions: ``|x*| <= rv1``, ``V(x*) <= rv2``,
    ``|x#| <= ru1``, ``U(x#) <= ru2``."""

    rv1: float = 0.0
    rv2: float = 0.0
    ru1: float = 0.0
    ru2: float = 0.0


@dataclass(frozen=True)
class PriorSplit:
    """Potential pieces ``V̄_theta``, ``Ū_theta`` driving the prior chain."""

    smooth_value: Callable
    smooth_grad: Callable
    nonsmooth_value: Callable
    nonsmooth_prox: Callable
    nonsmooth_grad: Optional[Callable] = None


@dataclass(frozen=True)
class PotentialModel:
    """theta-indexed splitting ``V_theta + U_theta`` with regularity metadata.

    ``strong_convexity`` is the common modulus m of ``V_theta`` (and ``V̄_theta``
    when a prior split is present); ``coercivity`` is the pair ``(eta, c)`` with
    ``U_theta(x) >= eta |x| - c``.  At least one must be given.
    ``nonsmooth_grad`` is only needed by the plain ULA kernel.  ``kinks`` lists
    the points where the 1-D integrand is not smooth; quadrature splits there.
    """

    dim: int
    smooth_value: Callable
    smooth_grad: Callable
    nonsmooth_value: Callable
    nonsmooth_prox: Callable
    lipschitz_grad: float
    lipschitz_nonsmooth: float
    strong_convexity: Optional[float] = None
    coercivity: Optional[tuple] = None
    minimizer_bounds: MinimizerBounds = field(default_factory=MinimizerBounds)
    prior_split: Optional[PriorSplit] = None
    theta_lipschitz: Optional[float] = None
    envelope_modulus: Optional[Callable[[float], float]] = None
    nonsmooth_grad: Optional[Callable] = None
    kinks: tuple = ()

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidArgument("state dimension must be positive")
        if self.strong_convexity is None and self.coercivity is None:
            raise InvalidArgument("model needs strong convexity or coercivity metadata")
        if self.strong_convexity is not None and not self.strong_convexity > 0:
            raise InvalidArgument("strong convexity modulus must be positive")
        if self.coercivity is not None:
            eta, c = self.coercivity
            if not eta > 0 or c < 0:
                raise InvalidArgument("coercivity needs eta > 0 and c >= 0")
        if self.lipschitz_grad < 0 or self.lipschitz_nonsmooth < 0:
            raise InvalidArgument("Lipschitz constants must be nonnegative")

    @property
    def is_compiled(self) -> bool:
        fns = [self.smooth_grad, self.nonsmooth_prox]
        if self.nonsmooth_grad is not None:
            fns.append(self.nonsmooth_grad)
        if self.prior_split is not None:
            fns += [self.prior_split.smooth_grad, self.prior_split.nonsmooth_prox]
        return all(isinstance(f, numba.core.registry.CPUDispatcher) for f in fns)

    def pieces(self, target: str = "posterior"):
        """``(smooth_value, smooth_grad, nonsmooth_value, nonsmooth_prox, nonsmooth_grad)``
        for the posterior or prior chain."""
        if target == "posterior":
            return (self.smooth_value, self.smooth_grad, self.nonsmooth_value,
                    self.nonsmooth_prox, self.nonsmooth_grad)
        if target == "prior":
            if self.prior_split is None:
                raise UnsupportedConfiguration("model has no prior split; no prior chain can run")
            p = self.prior_split
            return (p.smooth_value, p.smooth_grad, p.nonsmooth_value, p.nonsmooth_prox,
                    p.nonsmooth_grad)
        raise InvalidArgument(f"unknown chain target {target!r}")


# -- estimator variants -------------------------------------------------------


@dataclass(frozen=True)
class Homogeneous:
    """``g`` positively homogeneous of degree ``alpha``; d_theta = 1."""

    alpha: float


@dataclass(frozen=True)
class SeparablyHomogeneous:
    """``g_i`` reads only the coordinates in ``blocks[i]`` and is ``degrees[i]``-homogeneous."""

    blocks: tuple
    degrees: tuple

    def __post_init__(self):
        blocks = tuple(tuple(int(j) for j in b) for b in self.blocks)
        degrees = tuple(float(a) for a in self.degrees)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "degrees", degrees)


@dataclass(frozen=True)
class Inhomogeneous:
    """General ``g``; the prior expectation is estimated by a second chain."""


Variant = Union[Homogeneous, SeparablyHomogeneous, Inhomogeneous]


@dataclass(frozen=True)
class EstimatorSpec:
    variant: Variant
    statistic: Callable
    stat_dim: int = 1

    def __post_init__(self):
        v = self.variant
        if isinstance(v, Homogeneous):
            if self.stat_dim != 1:
                raise InvalidArgument("homogeneous variant requires a scalar parameter")
            if not v.alpha > 0:
                raise InvalidArgument("homogeneity degree must be positive")
        elif isinstance(v, SeparablyHomogeneous):
            if len(v.blocks) != self.stat_dim or len(v.degrees) != self.stat_dim:
                raise InvalidArgument("need one block and one degree per parameter coordinate")
            seen = set()
            for b in v.blocks:
                if not b:
                    raise InvalidArgument("blocks must be nonempty")
                if seen.intersection(b) or len(set(b)) != len(b):
                    raise InvalidArgument("blocks must be disjoint")
                seen.update(b)
            if any(not a > 0 for a in v.degrees):
                raise InvalidArgument("homogeneity degrees must be positive")
        elif not isinstance(v, Inhomogeneous):
            raise InvalidArgument(f"unknown estimator variant {v!r}")

    @property
    def needs_prior_chain(self) -> bool:
        return isinstance(self.variant, Inhomogeneous)


def hbar_constants(estimator: EstimatorSpec, state_dim: int):
    """Numerators and degrees with ``H̄_i = -numer[i] / (degree[i] * theta[i])``.

    Returns ``None`` for the inhomogeneous variant.
    """
    v = estimator.variant
    if isinstance(v, Homogeneous):
        return np.array([float(state_dim)]), np.array([float(v.alpha)])
    if isinstance(v, SeparablyHomogeneous):
        return (np.array([float(len(b)) for b in v.blocks]), np.array(v.degrees, dtype=float))
    return None


def estimator_terms(estimator: EstimatorSpec, theta, x_post, x_prior=None):
    """Return ``(H, H̄)`` whose sum estimates the gradient of ``-log p(y|theta)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x_post = np.atleast_1d(np.asarray(x_post, dtype=float))
    h = np.atleast_1d(np.asarray(estimator.statistic(theta, x_post), dtype=float))
    if estimator.needs_prior_chain:
        if x_prior is None:
            raise InvalidArgument("inhomogeneous estimator needs a prior-chain sample")
        x_prior = np.atleast_1d(np.asarray(x_prior, dtype=float))
        hbar = -np.atleast_1d(np.asarray(estimator.statistic(theta, x_prior), dtype=float))
        return h, hbar
    if x_prior is not None:
        raise InvalidArgument("homogeneous estimators take no prior-chain sample")
    if np.any(theta <= THETA_FLOOR):
        raise DomainError(f"homogeneous estimator needs theta > {THETA_FLOOR}, got {theta}")
    numer, alpha = hbar_constants(estimator, x_post.shape[0])
    return h, -numer / (alpha * theta)


@dataclass(frozen=True)
class ProblemInstance:
    model: PotentialModel
    estimator: EstimatorSpec
    domain: ParameterDomain
    observation: Optional[np.ndarray] = None
    name: str = "custom"

    def __post_init__(self):
        if self.estimator.stat_dim != self.domain.dim:
            raise InvalidArgument(
                f"statistic has dimension {self.estimator.stat_dim}, domain has {self.domain.dim}")
        if self.estimator.needs_prior_chain and self.model.prior_split is None:
            raise InvalidArgument("inhomogeneous estimator requires a model with a prior split")
        if not self.estimator.needs_prior_chain and np.any(self.domain.lower <= THETA_FLOOR):
            raise InvalidArgument(
                f"homogeneous estimators need the box lower bound above {THETA_FLOOR}")


# -- numba building blocks ----------------------------------------------------


@numba.njit
def _zero_value(theta, x):
    return 0.0


@numba.njit
def _zero_grad(theta, x):
    return np.zeros_like(x)


@numba.njit
def _identity_prox(theta, lam, x):
    return x.copy()


@numba.njit
def _abs_value(theta, x):
    return theta[0] * np.abs(x).sum()


@numba.njit
def _abs_prox(theta, lam, x):
    t = lam * theta[0]
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        v = x[i]
        out[i] = v - t if v > t else (v + t if v < -t else 0.0)
    return out


@numba.njit
def _abs_stat(theta, x):
    out = np.empty(1)
    out[0] = np.abs(x).sum()
    return out


@numba.njit
def _half_sq_stat(theta, x):
    out = np.empty(1)
    out[0] = 0.5 * (x * x).sum()
    return out


def _gaussian_likelihood(y: np.ndarray, sigma2: float):
    @numba.njit
    def value(theta, x):
        r = x - y
        return 0.5 * (r * r).sum() / sigma2

    @numba.njit
    def grad(theta, x):
        return (x - y) / sigma2

    return value, grad


def _check_sigma2(sigma2: float) -> float:
    sigma2 = float(sigma2)
    if not sigma2 > 0.0:
        raise InvalidArgument(f"noise variance must be positive, got {sigma2}")
    return sigma2


# -- built-in instances -------------------------------------------------------


@functools.lru_cache(maxsize=32)
def builtin_gaussian_conjugate(y: float, sigma2: float, lower: float = 0.05, upper: float = 10.0,
                               split: str = "smooth") -> ProblemInstance:
    """Scalar Gaussian likelihood with Gaussian prior ``exp(-theta x^2 / 2)``.

    With ``split="smooth"`` the regulariser is folded into ``V_theta`` and
    ``U_theta = 0`` so every metadata field is finite.  ``split="prox"`` keeps
    ``U_theta = theta x^2 / 2`` with prox ``x / (1 + lam theta)``; that ``U`` is
    not globally Lipschitz, so ``lipschitz_nonsmooth`` is infinite.
    The marginal maximiser is ``1 / (y^2 - sigma2)`` when ``y^2 > sigma2``.
    """
    sigma2 = _check_sigma2(sigma2)
    yv = np.atleast_1d(np.asarray(y, dtype=float)).copy()
    ysq = float(yv @ yv)
    domain = ParameterDomain(np.array([lower]), np.array([upper]))
    prec = 1.0 / sigma2
    if split == "smooth":
        @numba.njit
        def value(theta, x):
            r = x - yv
            return 0.5 * (r * r).sum() / sigma2 + 0.5 * theta[0] * (x * x).sum()

        @numba.njit
        def grad(theta, x):
            return (x - yv) / sigma2 + theta[0] * x

        model = PotentialModel(
            dim=yv.shape[0], smooth_value=value, smooth_grad=grad,
            nonsmooth_value=_zero_value, nonsmooth_prox=_identity_prox,
            nonsmooth_grad=_zero_grad,
            lipschitz_grad=prec + upper, lipschitz_nonsmooth=0.0,
            strong_convexity=prec + lower,
            minimizer_bounds=MinimizerBounds(
                rv1=math.sqrt(ysq) / (1.0 + sigma2 * lower),
                rv2=0.5 * ysq * upper / (1.0 + sigma2 * upper)),
            theta_lipschitz=1.0, envelope_modulus=lambda kappa: 0.0)
    elif split == "prox":
        value, grad = _gaussian_likelihood(yv, sigma2)

        @numba.njit
        def u_value(theta, x):
            return 0.5 * theta[0] * (x * x).sum()

        @numba.njit
        def u_prox(theta, lam, x):
            return x / (1.0 + lam * theta[0])

        @numba.njit
        def u_grad(theta, x):
            return theta[0] * x

        model = PotentialModel(
            dim=yv.shape[0], smooth_value=value, smooth_grad=grad,
            nonsmooth_value=u_value, nonsmooth_prox=u_prox, nonsmooth_grad=u_grad,
            lipschitz_grad=prec, lipschitz_nonsmooth=math.inf,
            strong_convexity=prec,
            minimizer_bounds=MinimizerBounds(rv1=math.sqrt(ysq)),
            theta_lipschitz=0.0, envelope_modulus=lambda kappa: 1.0)
    else:
        raise InvalidArgument(f"unknown split {split!r}")
    est = EstimatorSpec(Homogeneous(2.0), _half_sq_stat)
    return ProblemInstance(model, est, domain, yv, name="gaussian_conjugate")


@functools.lru_cache(maxsize=32)
def builtin_laplace_scalar(y: float, sigma2: float, lower: float = 0.1, upper: float = 5.0,
                           inhomogeneous: bool = False) -> ProblemInstance:
    """Scalar Gaussian likelihood with Laplace prior ``exp(-theta |x|)``.

    The homogeneous variant uses the closed-form prior term ``-1/theta``.
    ``inhomogeneous=True`` instead attaches the prior chain ``V̄ = 0,
    Ū = theta |x|`` and the two-chain estimator; since ``V̄`` is not strongly
    convex only the coercivity metadata is declared in that case.
    """
    sigma2 = _check_sigma2(sigma2)
    yv = np.atleast_1d(np.asarray(y, dtype=float)).copy()
    if yv.shape != (1,):
        raise InvalidArgument("laplace_scalar takes a scalar observation")
    domain = ParameterDomain(np.array([lower]), np.array([upper]))
    value, grad = _gaussian_likelihood(yv, sigma2)
    prior = None
    m = 1.0 / sigma2
    if inhomogeneous:
        prior = PriorSplit(_zero_value, _zero_grad, _abs_value, _abs_prox)
        m = None
    model = PotentialModel(
        dim=1, smooth_value=value, smooth_grad=grad,
        nonsmooth_value=_abs_value, nonsmooth_prox=_abs_prox,
        lipschitz_grad=1.0 / sigma2, lipschitz_nonsmooth=float(upper),
        strong_convexity=m, coercivity=(float(lower), 0.0),
        minimizer_bounds=MinimizerBounds(rv1=float(abs(yv[0]))),
        prior_split=prior, theta_lipschitz=0.0, envelope_modulus=lambda kappa: 1.0,
        kinks=(0.0,))
    variant = Inhomogeneous() if inhomogeneous else Homogeneous(1.0)
    est = EstimatorSpec(variant, _abs_stat)
    return ProblemInstance(model, est, domain, yv, name="laplace_scalar")


def builtin_group_lasso(A, y, sigma2: float, blocks: Sequence[Sequence[int]],
                        lower=0.1, upper=5.0) -> ProblemInstance:
    """Linear-Gaussian likelihood with block-weighted l1 prior ``sum_i theta_i |x_{A_i}|_1``."""
    sigma2 = _check_sigma2(sigma2)
    A = np.atleast_2d(np.asarray(A, dtype=float)).copy()
    yv = np.atleast_1d(np.asarray(y, dtype=float)).copy()
    n, d = A.shape
    if yv.shape != (n,):
        raise InvalidArgument(f"y has shape {yv.shape}, A has {n} rows")
    if d > 32:
        raise InvalidArgument("group lasso builtin is meant for d <= 32")
    block_id = np.full(d, -1, dtype=np.int64)
    for i, b in enumerate(blocks):
        if len(b) == 0:
            raise InvalidArgument("blocks must be nonempty")
        for j in b:
            if not 0 <= j < d:
                raise InvalidArgument(f"block index {j} outside 0..{d - 1}")
            if block_id[j] != -1:
                raise InvalidArgument(f"coordinate {j} appears in two blocks")
            block_id[j] = i
    k = len(blocks)
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (k,)).copy()
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (k,)).copy()
    domain = ParameterDomain(lo, hi)
    sizes = np.array([len(b) for b in blocks], dtype=float)

    AtA = A.T @ A
    Aty = A.T @ yv

    @numba.njit
    def value(theta, x):
        r = A @ x - yv
        return 0.5 * (r * r).sum() / sigma2

    @numba.njit
    def grad(theta, x):
        return (AtA @ x - Aty) / sigma2

    @numba.njit
    def u_value(theta, x):
        s = 0.0
        for j in range(x.shape[0]):
            if block_id[j] >= 0:
                s += theta[block_id[j]] * abs(x[j])
        return s

    @numba.njit
    def u_prox(theta, lam, x):
        out = x.copy()
        for j in range(x.shape[0]):
            if block_id[j] >= 0:
                t = lam * theta[block_id[j]]
                v = x[j]
                out[j] = v - t if v > t else (v + t if v < -t else 0.0)
        return out

    @numba.njit
    def stat(theta, x):
        out = np.zeros(k)
        for j in range(x.shape[0]):
            if block_id[j] >= 0:
                out[block_id[j]] += abs(x[j])
        return out

    eig = np.linalg.eigvalsh(AtA)
    m = eig[0] / sigma2 if eig[0] > 1e-12 * max(eig[-1], 1.0) else None
    covered = bool(np.all(block_id >= 0))
    x_ls = np.linalg.pinv(A) @ yv
    res = A @ x_ls - yv
    model = PotentialModel(
        dim=d, smooth_value=value, smooth_grad=grad,
        nonsmooth_value=u_value, nonsmooth_prox=u_prox,
        lipschitz_grad=float(eig[-1] / sigma2),
        lipschitz_nonsmooth=float(np.sqrt((hi ** 2 * sizes).sum())),
        strong_convexity=None if m is None else float(m),
        coercivity=(float(lo.min()), 0.0) if covered else None,
        minimizer_bounds=MinimizerBounds(rv1=float(np.linalg.norm(x_ls)),
                                         rv2=float(0.5 * res @ res / sigma2)),
        theta_lipschitz=0.0, envelope_modulus=lambda kappa: 1.0,
        kinks=(0.0,) if d == 1 else ())
    est = EstimatorSpec(SeparablyHomogeneous(tuple(tuple(b) for b in blocks), (1.0,) * k),
                        stat, stat_dim=k)
    return ProblemInstance(model, est, domain, yv, name="group_lasso")


@functools.lru_cache(maxsize=8)
def quadratic_model(dim: int = 1, precision: float = 1.0) -> PotentialModel:
    """theta-independent ``V(x) = precision |x|^2 / 2`` with ``U = 0``.

    Its drift map is the linear contraction ``(1 - gamma * precision) x``.
    """
    precision = float(precision)

    @numba.njit
    def value(theta, x):
        return 0.5 * precision * (x * x).sum()

    @numba.njit
    def grad(theta, x):
        return precision * x

    return PotentialModel(
        dim=dim, smooth_value=value, smooth_grad=grad,
        nonsmooth_value=_zero_value, nonsmooth_prox=_identity_prox, nonsmooth_grad=_zero_grad,
        lipschitz_grad=precision, lipschitz_nonsmooth=0.0, strong_convexity=precision,
        theta_lipschitz=0.0, envelope_modulus=lambda kappa: 0.0)


def mirror_prior(model: PotentialModel) -> PotentialModel:
    """Copy of ``model`` whose prior chain targets the posterior itself.

    With identical pieces the two-chain estimator has zero mean at every theta;
    used to check the driver for drift-free behaviour.
    """
    split = PriorSplit(model.smooth_value, model.smooth_grad, model.nonsmooth_value,
                       model.nonsmooth_prox, model.nonsmooth_grad)
    return replace(model, prior_split=split)


def spot_check(instance: ProblemInstance, n_pairs: int = 1000, seed: int = 0,
               scale: float = 5.0) -> dict:
    """Sample-based checks of the declared metadata.

    Returns the worst observed ratios ``|∇V(x)-∇V(x')| / (L |x-x'|)`` and
    ``|U(x)-U(x')| / (M |x-x'|)`` (both should be <= 1), the smallest potential
    value seen (should be >= 0) and the largest prox-certificate violation.
    """
    from .prox import ProxFn, prox_residual

    model, dom = instance.model, instance.domain
    rng = np.random.default_rng(seed)
    worst_l = worst_m = 0.0
    min_val = math.inf
    worst_res = -math.inf
    for _ in range(n_pairs):
        theta = rng.uniform(dom.lower, dom.upper)
        x = scale * rng.standard_normal(model.dim)
        xp = scale * rng.standard_normal(model.dim)
        dx = float(np.linalg.norm(x - xp))
        dg = float(np.linalg.norm(model.smooth_grad(theta, x) - model.smooth_grad(theta, xp)))
        du = abs(model.nonsmooth_value(theta, x) - model.nonsmooth_value(theta, xp))
        if model.lipschitz_grad > 0:
            worst_l = max(worst_l, dg / (model.lipschitz_grad * dx))
        elif dg > 0:
            worst_l = math.inf
        if model.lipschitz_nonsmooth > 0:
            worst_m = max(worst_m, du / (model.lipschitz_nonsmooth * dx))
        elif du > 0:
            worst_m = math.inf
        min_val = min(min_val, model.smooth_value(theta, x), model.nonsmooth_value(theta, x))
        pf = ProxFn(lambda z, t=theta: model.nonsmooth_value(t, z),
                    lambda lam, z, t=theta: model.nonsmooth_prox(t, lam, z),
                    model.lipschitz_nonsmooth)
        worst_res = max(worst_res, prox_residual(pf, rng.uniform(0.01, 2.0), x))
    return {"grad_lipschitz_ratio": worst_l, "nonsmooth_lipschitz_ratio": worst_m,
            "min_potential": min_val, "prox_residual": worst_res}
