"""Inner loops shared by the samplers and the SAPG driver.

Each loop is written once in numba-compatible Python and built twice: compiled
(used when every model callable is itself a numba dispatcher) and interpreted
(for user models written in plain numpy).  Both builds execute the same
floating-point operations in the same order.
"""

from __future__ import annotations

import math
from types import SimpleNamespace

import numba
import numpy as np

ULA, MYULA, PULA = 0, 1, 2


def _build(wrap):
    @wrap
    def drift(kind, sgrad, prox, ngrad, theta, x, gamma, kappa):
        if kind == ULA:
            return x - gamma * (sgrad(theta, x) + ngrad(theta, x))
        p = prox(theta, kappa * gamma, x)
        if kind == MYULA:
            return x - gamma * sgrad(theta, x) - (x - p) / kappa
        return p - gamma * sgrad(theta, p)

    @wrap
    def chain_loop(kind, sgrad, prox, ngrad, stat, theta, x, gamma, kappa, noise,
                   stat_sum, record):
        # advances x in place over noise.shape[0] steps
        scale = math.sqrt(2.0 * gamma)
        keep = record.shape[0] > 0
        for k in range(noise.shape[0]):
            x[:] = drift(kind, sgrad, prox, ngrad, theta, x, gamma, kappa) + scale * noise[k]
            stat_sum += stat(theta, x)
            if keep:
                record[k] = x

    @wrap
    def sapg_block(kind, kappa, sgrad, prox, ngrad, stat, psgrad, pprox, pngrad, two_chain,
                   hbar_num, hbar_deg, lower, upper, theta, theta_num, delta_sum, x, xbar,
                   gammas, deltas, batches, noise, pnoise, out_theta, out_bar, out_grad):
        # iteration i uses gammas[i], batches[i], weight deltas[i] and step deltas[i + 1]
        pos = 0
        for i in range(batches.shape[0]):
            gamma = gammas[i]
            scale = math.sqrt(2.0 * gamma)
            m = batches[i]
            est = np.zeros(theta.shape[0])
            for _ in range(m):
                x[:] = drift(kind, sgrad, prox, ngrad, theta, x, gamma, kappa) + scale * noise[pos]
                est += stat(theta, x)
                if two_chain:
                    xbar[:] = (drift(kind, psgrad, pprox, pngrad, theta, xbar, gamma, kappa)
                               + scale * pnoise[pos])
                    est -= stat(theta, xbar)
                pos += 1
            est /= m
            if not two_chain:
                est -= hbar_num / (hbar_deg * theta)
            out_theta[i] = theta
            theta_num += deltas[i] * theta
            delta_sum[0] += deltas[i]
            out_bar[i] = theta_num / delta_sum[0]
            out_grad[i] = est
            theta[:] = np.minimum(np.maximum(theta - deltas[i + 1] * est, lower), upper)

    return SimpleNamespace(drift=drift, chain_loop=chain_loop, sapg_block=sapg_block)


_interpreted = _build(lambda f: f)
_compiled = None


@numba.njit
def no_stat(theta, x):
    return np.zeros(0)


def is_dispatcher(fn) -> bool:
    return isinstance(fn, numba.core.registry.CPUDispatcher)


def loops_for(*fns):
    """Compiled loops if every callable is a numba dispatcher, else interpreted ones."""
    global _compiled
    if all(is_dispatcher(f) for f in fns):
        if _compiled is None:
            _compiled = _build(numba.njit)
        return _compiled
    return _interpreted
