"""Symmetric block-arrow matrices and their blockwise factorizations.

The joint precision of (fixed effects, per-subject random effects) has a
dense p x p corner, a dense border of p x u blocks, and a block-diagonal
tail of u x u blocks.  All production linear algebra stays in this form;
`to_dense` exists for tests and small-scale cross-checks only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DecompositionError, DimensionError, InvalidInputError
from ..kernels import STATUS_BAD_BLOCK, STATUS_OK, active as _K


@dataclass(frozen=True)
class BlockArrowMatrix:
    """Arrow-shaped symmetric matrix: corner (p,p), border (m,p,u) stacked
    blocks, diag (m,u,u) stacked blocks."""

    corner: np.ndarray
    border: np.ndarray
    diag: np.ndarray

    def __post_init__(self):
        corner = np.ascontiguousarray(self.corner, dtype=float)
        border = np.ascontiguousarray(self.border, dtype=float)
        diag = np.ascontiguousarray(self.diag, dtype=float)
        if corner.ndim != 2 or corner.shape[0] != corner.shape[1]:
            raise DimensionError("corner must be square")
        if border.ndim != 3 or diag.ndim != 3:
            raise DimensionError("border and diag must be stacked 3-D blocks")
        m, p, u = border.shape
        if p != corner.shape[0]:
            raise DimensionError("border blocks must be p x u")
        if diag.shape != (m, u, u):
            raise DimensionError("diag blocks must be (m, u, u)")
        if not np.all(np.abs(corner - corner.T) <= 1e-10):
            raise InvalidInputError("corner is not symmetric")
        if not np.all(np.abs(diag - np.swapaxes(diag, 1, 2)) <= 1e-10):
            raise InvalidInputError("a diagonal block is not symmetric")
        object.__setattr__(self, "corner", corner)
        object.__setattr__(self, "border", border)
        object.__setattr__(self, "diag", diag)

    @property
    def p(self) -> int:
        return self.corner.shape[0]

    @property
    def u(self) -> int:
        return self.diag.shape[1]

    @property
    def m(self) -> int:
        return self.diag.shape[0]

    @property
    def dim(self) -> int:
        return self.p + self.m * self.u

    def to_dense(self) -> np.ndarray:
        """Dense reconstruction; test / small-scale use only."""
        p, u, m = self.p, self.u, self.m
        out = np.zeros((self.dim, self.dim))
        out[:p, :p] = self.corner
        for i in range(m):
            lo = p + i * u
            out[:p, lo:lo + u] = self.border[i]
            out[lo:lo + u, :p] = self.border[i].T
            out[lo:lo + u, lo:lo + u] = self.diag[i]
        return out


def _factor_or_raise(matrix: BlockArrowMatrix):
    status, bad, Ls, C, Ld = _K.arrow_factor(
        matrix.corner, matrix.border, matrix.diag)
    if status != STATUS_OK:
        which = ("tail block %d" % bad) if status == STATUS_BAD_BLOCK \
            else "corner Schur complement"
        raise DecompositionError(
            "arrow matrix is not positive definite (%s)" % which,
            block=int(bad))
    return Ls, C, Ld


def _split(matrix: BlockArrowMatrix, vec, name):
    vec = np.ascontiguousarray(vec, dtype=float)
    if vec.shape != (matrix.dim,):
        raise DimensionError("%s must have length %d, got %s"
                             % (name, matrix.dim, vec.shape))
    return vec[:matrix.p], vec[matrix.p:].reshape(matrix.m, matrix.u)


def arrow_solve_and_marginals(matrix: BlockArrowMatrix, rhs):
    """Solve matrix @ x = rhs and return the inverse's arrow blocks.

    Returns (solution, corner_cov, border_cov, diag_cov, logdet); the
    factorization costs O(m) u x u Cholesky factors plus one p x p solve.
    """
    Ls, C, Ld = _factor_or_raise(matrix)
    rhs_beta, rhs_b = _split(matrix, rhs, "rhs")
    x_beta, x_b = _K.arrow_solve(Ls, C, Ld, rhs_beta, rhs_b)
    corner_cov, border_cov, diag_cov = _K.arrow_marginals(Ls, C, Ld)
    logdet = _K.arrow_logdet(Ls, Ld)
    return (np.concatenate([x_beta, x_b.reshape(-1)]),
            corner_cov, border_cov, diag_cov, float(logdet))


def sample_gaussian_arrow(mu, matrix: BlockArrowMatrix,
                          rng: np.random.Generator) -> np.ndarray:
    """One draw from N(mu, matrix^{-1}) via the blockwise Cholesky.

    The draw is mu + L^{-T} z with z standard normal of length dim, laid
    out fixed-effects first; an identity precision therefore returns the
    raw z offset by mu.
    """
    Ls, C, Ld = _factor_or_raise(matrix)
    z = rng.standard_normal(matrix.dim)
    mu_beta, mu_b = _split(matrix, mu, "mu")
    z_beta = z[:matrix.p]
    z_b = z[matrix.p:].reshape(matrix.m, matrix.u)
    x_beta, x_b = _K.arrow_sample(Ls, C, Ld, mu_beta, mu_b, z_beta, z_b)
    return np.concatenate([x_beta, x_b.reshape(-1)])
