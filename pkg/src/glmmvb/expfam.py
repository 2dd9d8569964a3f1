"""Gaussian and Wishart factor algebra.

Factors are immutable moment-parameterized records; natural parameters are
computed on demand.  Products of per-piece posteriors divided by a power of
the prior reduce to sums of natural parameters, which is what the combine
operations implement:

    combined precision      = sum_j P_j - (M - 1) P_prior
    combined Wishart dof    = sum_j nu_j - (M - 1) nu_prior
    combined Wishart scale  = (sum_j S_j^{-1} - (M - 1) S_prior^{-1})^{-1}

Sums run in list order (piece index ascending) so recombination is
reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf

from .errors import DecompositionError, DimensionError, InvalidInputError, \
    RecombinationError

_SYM_TOL = 1e-10


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("%s must be a square matrix, got shape %s"
                             % (name, a.shape))
    return a


def _check_symmetric(a, name, tol=_SYM_TOL):
    if not np.all(np.abs(a - a.T) <= tol):
        raise InvalidInputError("%s is not symmetric to within %g" % (name, tol))


def cholesky_lower(a, context=""):
    """Lower Cholesky factor; raises DecompositionError naming the pivot."""
    c, info = dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise DecompositionError(
            "%smatrix is not positive definite (pivot %d)"
            % (context and context + ": ", info), pivot=int(info))
    if info < 0:
        raise InvalidInputError("illegal matrix passed to Cholesky")
    return c


def spd_inverse(a, context=""):
    """Inverse of an SPD matrix via Cholesky, symmetrized."""
    low = cholesky_lower(a, context)
    inv_low = solve_triangular(low, np.eye(a.shape[0]), lower=True)
    inv = inv_low.T @ inv_low
    return 0.5 * (inv + inv.T)


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianFactor:
    """Multivariate normal factor stored as (mu, sigma)."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        sigma = _as_matrix(self.sigma, "sigma")
        if sigma.shape[0] != mu.shape[0]:
            raise DimensionError("mu has length %d but sigma is %s"
                                 % (mu.shape[0], sigma.shape))
        _check_symmetric(sigma, "sigma")
        cholesky_lower(sigma, "sigma")
        object.__setattr__(self, "mu", _freeze(mu))
        object.__setattr__(self, "sigma", _freeze(0.5 * (sigma + sigma.T)))

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def logpdf(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        low = cholesky_lower(self.sigma, "sigma")
        w = solve_triangular(low, x - self.mu, lower=True)
        return float(-0.5 * w @ w - np.sum(np.log(np.diag(low)))
                     - 0.5 * self.dim * np.log(2.0 * np.pi))


@dataclass(frozen=True)
class WishartFactor:
    """Wishart factor W(nu, scale) for a precision matrix."""

    nu: float
    scale: np.ndarray

    def __post_init__(self):
        scale = _as_matrix(self.scale, "scale")
        _check_symmetric(scale, "scale")
        cholesky_lower(scale, "scale")
        nu = float(self.nu)
        if not nu > scale.shape[0] - 1:
            raise InvalidInputError(
                "degrees of freedom %.6g must exceed dim - 1 = %d"
                % (nu, scale.shape[0] - 1))
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "scale", _freeze(0.5 * (scale + scale.T)))

    @property
    def dim(self) -> int:
        return self.scale.shape[0]

    def mean(self) -> np.ndarray:
        """E(Q) = nu * scale."""
        return self.nu * self.scale


def gaussian_natural(factor: GaussianFactor):
    """Natural parameters (h, P) with P = sigma^{-1}, h = P mu."""
    precision = spd_inverse(factor.sigma, "sigma")
    return precision @ factor.mu, precision


def gaussian_from_natural(h, precision) -> GaussianFactor:
    """Factor with precision P and precision-weighted mean h."""
    h = np.asarray(h, dtype=float).reshape(-1)
    precision = _as_matrix(precision, "precision")
    sigma = spd_inverse(precision, "precision")
    low = cholesky_lower(precision, "precision")
    w = solve_triangular(low, h, lower=True)
    mu = solve_triangular(low, w, lower=True, trans="T")
    return GaussianFactor(mu=mu, sigma=sigma)


def combine_gaussians(pieces, prior: GaussianFactor) -> GaussianFactor:
    """Product of per-piece Gaussian posteriors with prior correction."""
    pieces = list(pieces)
    if not pieces:
        raise InvalidInputError("need at least one piece to combine")
    dim = pieces[0].dim
    for k, piece in enumerate(pieces):
        if piece.dim != dim:
            raise DimensionError("piece %d has dim %d, expected %d"
                                 % (k, piece.dim, dim))
    if prior.dim != dim:
        raise DimensionError("prior has dim %d, expected %d" % (prior.dim, dim))
    if len(pieces) == 1:
        return pieces[0]
    h_total = np.zeros(dim)
    p_total = np.zeros((dim, dim))
    for piece in pieces:
        h, precision = gaussian_natural(piece)
        h_total += h
        p_total += precision
    weight = len(pieces) - 1
    h0, p0 = gaussian_natural(prior)
    h_total -= weight * h0
    p_total -= weight * p0
    try:
        return gaussian_from_natural(h_total, 0.5 * (p_total + p_total.T))
    except DecompositionError as exc:
        raise RecombinationError(
            "combined Gaussian precision is not positive definite; the "
            "pieces carry less information than the prior correction "
            "removes (%s)" % exc) from exc


def combine_wisharts(pieces, prior: WishartFactor) -> WishartFactor:
    """Product of per-piece Wishart posteriors with prior correction."""
    pieces = list(pieces)
    if not pieces:
        raise InvalidInputError("need at least one piece to combine")
    dim = pieces[0].dim
    for k, piece in enumerate(pieces):
        if piece.dim != dim:
            raise DimensionError("piece %d has dim %d, expected %d"
                                 % (k, piece.dim, dim))
    if prior.dim != dim:
        raise DimensionError("prior has dim %d, expected %d" % (prior.dim, dim))
    if len(pieces) == 1:
        return pieces[0]
    nu_total = 0.0
    r_total = np.zeros((dim, dim))
    for piece in pieces:
        nu_total += piece.nu
        r_total += spd_inverse(piece.scale, "piece scale")
    weight = len(pieces) - 1
    nu_total -= weight * prior.nu
    r_total -= weight * spd_inverse(prior.scale, "prior scale")
    if not nu_total > dim - 1:
        raise RecombinationError(
            "combined Wishart dof %.6g does not exceed dim - 1 = %d"
            % (nu_total, dim - 1))
    try:
        scale = spd_inverse(0.5 * (r_total + r_total.T), "combined scale")
    except DecompositionError as exc:
        raise RecombinationError(
            "combined Wishart scale is not positive definite (%s)"
            % exc) from exc
    return WishartFactor(nu=nu_total, scale=scale)
