"""Stochastic fixed-form optimizer for factorized Gaussian approximations.

Given a target supplying per-block gradients and Hessians of the joint log
density, the optimizer runs a fixed number N of iterations with constant
step c = 1/sqrt(N).  Each iteration draws from the current factors,
refreshes each factor's (mean, covariance) from its running natural-side
state, mixes the new gradient/Hessian into that state with weights
(1-c, c), and averages the last N/2 iterations; the averaged state yields
the returned factors.  For exactly quadratic targets the returned factor
equals the target regardless of the draws, which the tests exploit.

Per-block draws come from independent Philox substreams keyed on
(seed, block), so a block's draw sequence does not depend on how many
other blocks are present.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf

from . import seeds
from .errors import ConfigError, DecompositionError, DimensionError, \
    InvalidInputError
from .expfam import GaussianFactor

_HESS_SYM_TOL = 1e-8


@dataclass(frozen=True)
class BlockTargetOracle:
    """Callback bundle describing a block-factorized target.

    `eval(theta, k)` receives the full stacked parameter vector and a block
    index and returns that block's gradient and Hessian of the joint log
    density.
    """

    block_dims: Sequence[int]
    eval: Callable

    @property
    def K(self) -> int:
        return len(self.block_dims)


@dataclass
class FfvbState:
    """Per-block running state of one optimizer invocation."""

    t: list
    g: list
    gamma: list
    t_bar: list
    g_bar: list
    gamma_bar: list
    n_iter: int
    c: float = field(init=False)

    def __post_init__(self):
        self.c = 1.0 / np.sqrt(self.n_iter)


def _chol_or_raise(matrix, iteration, block):
    low, info = dpotrf(matrix, lower=1, clean=1)
    if info != 0:
        raise DecompositionError(
            "running precision of block %d lost positive definiteness at "
            "iteration %d (step size too large for this target)"
            % (block, iteration), pivot=int(max(info, 0)),
            block=block, iteration=iteration)
    return low


def _oracle_eval(oracle, theta, k, dim):
    grad, hess = oracle.eval(theta, k)
    grad = np.asarray(grad, dtype=float).reshape(-1)
    hess = np.asarray(hess, dtype=float)
    if grad.shape != (dim,) or hess.shape != (dim, dim):
        raise DimensionError(
            "oracle returned shapes %s/%s for block %d of dim %d"
            % (grad.shape, hess.shape, k, dim))
    if np.max(np.abs(hess - hess.T), initial=0.0) > _HESS_SYM_TOL:
        raise InvalidInputError(
            "oracle Hessian for block %d is not symmetric to %g"
            % (k, _HESS_SYM_TOL))
    return grad, 0.5 * (hess + hess.T)


def ffvb_fit(oracle: BlockTargetOracle, init=None, n_iter: int = 100,
             seed: int = 0) -> list[GaussianFactor]:
    """Fit one Gaussian factor per block; deterministic given the seed.

    init is a list of (mu_k, sigma_k) pairs, one per block; None starts
    every block at (0, I).
    """
    if n_iter < 2 or n_iter % 2 != 0:
        raise ConfigError("iteration count must be an even integer >= 2")
    dims = [int(d) for d in oracle.block_dims]
    if any(d < 1 for d in dims):
        raise ConfigError("block dims must be positive")
    K = len(dims)
    if init is None:
        init = [(np.zeros(d), np.eye(d)) for d in dims]
    if len(init) != K:
        raise DimensionError("need one (mu, sigma) pair per block")

    mus, gammas0 = [], []
    for k, (mu_k, sigma_k) in enumerate(init):
        factor = GaussianFactor(mu=mu_k, sigma=sigma_k)  # validates
        if factor.dim != dims[k]:
            raise DimensionError("init block %d has dim %d, expected %d"
                                 % (k, factor.dim, dims[k]))
        mus.append(factor.mu.copy())
        low = _chol_or_raise(factor.sigma, 0, k)
        inv_low = solve_triangular(low, np.eye(dims[k]), lower=True)
        gammas0.append(inv_low.T @ inv_low)

    state = FfvbState(
        t=[mu.copy() for mu in mus],
        g=[np.zeros(d) for d in dims],
        gamma=gammas0,
        t_bar=[np.zeros(d) for d in dims],
        g_bar=[np.zeros(d) for d in dims],
        gamma_bar=[np.zeros((d, d)) for d in dims],
        n_iter=n_iter)
    c = state.c

    streams = [seeds.generator(seeds.derive_seed(seed, k)) for k in range(K)]
    draws = [streams[k].standard_normal((n_iter, dims[k])) for k in range(K)]

    # Factor used for drawing: refreshed at the top of each block update,
    # hence one iteration behind the running state, matching the update
    # schedule of the optimizer.
    gamma_chol = [_chol_or_raise(state.gamma[k], 0, k) for k in range(K)]

    half = n_iter // 2
    w = 2.0 / n_iter
    for i in range(n_iter):
        theta = np.concatenate([
            mus[k] + solve_triangular(gamma_chol[k], draws[k][i],
                                      lower=True, trans="T")
            for k in range(K)])
        pos = 0
        for k in range(K):
            d = dims[k]
            theta_k = theta[pos:pos + d]
            pos += d

            low = _chol_or_raise(state.gamma[k], i + 1, k)
            gamma_chol[k] = low
            wv = solve_triangular(low, state.g[k], lower=True)
            mus[k] = state.t[k] + solve_triangular(low, wv, lower=True,
                                                   trans="T")

            grad, hess = _oracle_eval(oracle, theta, k, d)
            state.g[k] = (1.0 - c) * state.g[k] + c * grad
            state.gamma[k] = (1.0 - c) * state.gamma[k] - c * hess
            state.t[k] = (1.0 - c) * state.t[k] + c * theta_k
            if i >= half:
                state.g_bar[k] += w * grad
                state.gamma_bar[k] -= w * hess
                state.t_bar[k] += w * theta_k

    factors = []
    for k in range(K):
        low = _chol_or_raise(state.gamma_bar[k], n_iter + 1, k)
        inv_low = solve_triangular(low, np.eye(dims[k]), lower=True)
        sigma = inv_low.T @ inv_low
        wv = solve_triangular(low, state.g_bar[k], lower=True)
        mu = state.t_bar[k] + solve_triangular(low, wv, lower=True, trans="T")
        factors.append(GaussianFactor(mu=mu, sigma=0.5 * (sigma + sigma.T)))
    return factors
