"""Closed-form proximal operators and Moreau-Yosida envelopes.

Only operators with exact closed forms are provided (l1, weighted block l1,
quadratic).  The envelope of a convex ``U`` with parameter ``lam`` is

    U^lam(x) = U(p) + |x - p|^2 / (2 lam),   p = prox^lam_U(x),

and its gradient is ``(x - p) / lam``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numba
import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class ProxFn:
    """A convex, Lipschitz function bundled with its proximal map.

    ``prox(lam, x)`` returns ``argmin_z U(z) + |x - z|^2 / (2 lam)``.
    """

    value: Callable[[np.ndarray], float]
    prox: Callable[[float, np.ndarray], np.ndarray]
    lipschitz: float


def _check_lam(lam: float) -> float:
    lam = float(lam)
    if not lam > 0.0:
        raise InvalidArgument(f"smoothing parameter must be positive, got {lam}")
    return lam


def moreau_envelope(p: ProxFn, lam: float, x) -> float:
    lam = _check_lam(lam)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    q = np.asarray(p.prox(lam, x), dtype=float)
    r = x - q
    return float(p.value(q) + r @ r / (2.0 * lam))


def moreau_gradient(p: ProxFn, lam: float, x) -> np.ndarray:
    lam = _check_lam(lam)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return (x - np.asarray(p.prox(lam, x), dtype=float)) / lam


@numba.njit(cache=True)
def soft_threshold(x, level):
    """Coordinatewise shrinkage of ``x`` toward zero by ``level``."""
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        v = x[i]
        if v > level:
            out[i] = v - level
        elif v < -level:
            out[i] = v + level
        else:
            out[i] = 0.0
    return out


def prox_l1(weight: float, lam: float, x) -> np.ndarray:
    """Proximal map of ``weight * |.|_1``."""
    weight = float(weight)
    if weight < 0.0:
        raise InvalidArgument(f"l1 weight must be nonnegative, got {weight}")
    lam = _check_lam(lam)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return soft_threshold(x, lam * weight)


def prox_block_l1(weights, blocks, lam: float, x) -> np.ndarray:
    """Proximal map of ``sum_i weights[i] * |x[blocks[i]]|_1``.

    Coordinates outside every block are left untouched.
    """
    lam = _check_lam(lam)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = x.copy()
    for w, idx in zip(weights, blocks):
        if w < 0.0:
            raise InvalidArgument(f"block weight must be nonnegative, got {w}")
        idx = np.asarray(idx, dtype=np.int64)
        out[idx] = soft_threshold(x[idx], lam * w)
    return out


def prox_quadratic(weight: float, lam: float, x) -> np.ndarray:
    """Proximal map of ``weight * |.|^2 / 2``."""
    lam = _check_lam(lam)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return x / (1.0 + lam * float(weight))


def l1(weight: float = 1.0, dim: int = 1) -> ProxFn:
    """``weight * |.|_1`` on R^dim; Euclidean Lipschitz constant ``weight * sqrt(dim)``."""
    return ProxFn(
        value=lambda x: float(weight * np.abs(x).sum()),
        prox=lambda lam, x: prox_l1(weight, lam, x),
        lipschitz=float(weight) * float(np.sqrt(dim)),
    )


def _probe_points(x: np.ndarray) -> Iterable[np.ndarray]:
    yield np.zeros_like(x)
    yield x
    scale = float(np.linalg.norm(x))
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = scale
        yield e
        yield -e


def prox_residual(p: ProxFn, lam: float, x, probes=None) -> float:
    """Worst violation of the prox optimality certificate.

    For ``q = prox^lam(x)`` a correct prox satisfies, for every ``z``,
    ``lam * (U(z) - U(q)) >= <x - q, z - q>``.  The return value is the largest
    ``<x - q, z - q> - lam * (U(z) - U(q))`` over the probe set, so it is
    ``<= 0`` (up to rounding) for a correct implementation.
    """
    lam = _check_lam(lam)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    q = np.asarray(p.prox(lam, x), dtype=float)
    uq = p.value(q)
    r = x - q
    zs = list(_probe_points(x))
    if probes is not None:
        zs.extend(np.atleast_1d(np.asarray(z, dtype=float)) for z in probes)
    return max(float(r @ (z - q) - lam * (p.value(z) - uq)) for z in zs)
