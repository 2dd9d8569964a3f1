"""Model specification and exact joint-log-density derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, EmptyDataError, InvalidInputError
from ..kernels import active as _K
from .arrow import BlockArrowMatrix
from .data import Dataset
from .families import Family

DEFAULT_TAU0 = 1000.0


@dataclass(frozen=True)
class Prior:
    """Gaussian prior on the fixed effects, Wishart prior on the
    random-effects precision."""

    mu_beta0: np.ndarray    # (p,)
    sigma_beta0: np.ndarray  # (p, p) SPD
    nu0: float
    S0: np.ndarray          # (u, u) SPD

    def __post_init__(self):
        object.__setattr__(self, "mu_beta0",
                           np.ascontiguousarray(self.mu_beta0, dtype=float))
        object.__setattr__(self, "sigma_beta0",
                           np.ascontiguousarray(self.sigma_beta0, dtype=float))
        object.__setattr__(self, "S0",
                           np.ascontiguousarray(self.S0, dtype=float))
        object.__setattr__(self, "nu0", float(self.nu0))


def default_prior(p: int, u: int, tau0: float = DEFAULT_TAU0) -> Prior:
    """Vague default: zero mean, tau0-scaled identities, nu0 = u + 1."""
    return Prior(mu_beta0=np.zeros(p), sigma_beta0=tau0 * np.eye(p),
                 nu0=u + 1.0, S0=tau0 * np.eye(u))


@dataclass(frozen=True)
class GlmmModel:
    """A GLMM instance: family, grouped design, and priors.

    Immutable after construction; all arrays are C-contiguous float64 so
    they can go straight into the kernels.
    """

    family: Family
    subject_ids: tuple
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    offsets: np.ndarray
    row_start: np.ndarray
    prior: Prior
    subj_idx: np.ndarray

    def __post_init__(self):
        if self.m < 1:
            raise EmptyDataError("model needs at least one subject")
        self.family.validate_response(self.y)
        if self.prior.mu_beta0.shape != (self.p,) \
                or self.prior.sigma_beta0.shape != (self.p, self.p):
            raise DimensionError("fixed-effect prior dims disagree with X")
        if self.prior.S0.shape != (self.u, self.u):
            raise DimensionError("random-effect prior dims disagree with Z")

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def u(self) -> int:
        return self.Z.shape[1]

    @property
    def m(self) -> int:
        return self.row_start.shape[0] - 1

    @property
    def n_total(self) -> int:
        return self.y.shape[0]

    @property
    def dim_alpha(self) -> int:
        return self.p + self.m * self.u

    def subset(self, subject_indices) -> "GlmmModel":
        """Sub-model over the given subjects, same family and prior."""
        indices = sorted(int(i) for i in subject_indices)
        if not indices:
            raise EmptyDataError("empty subject subset")
        rows = np.concatenate([
            np.arange(self.row_start[i], self.row_start[i + 1])
            for i in indices])
        counts = [int(self.row_start[i + 1] - self.row_start[i])
                  for i in indices]
        row_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        subj_idx = np.repeat(np.arange(len(indices), dtype=np.int64), counts)
        return GlmmModel(
            family=self.family,
            subject_ids=tuple(self.subject_ids[i] for i in indices),
            y=np.ascontiguousarray(self.y[rows]),
            X=np.ascontiguousarray(self.X[rows]),
            Z=np.ascontiguousarray(self.Z[rows]),
            offsets=np.ascontiguousarray(self.offsets[rows]),
            row_start=row_start, prior=self.prior, subj_idx=subj_idx)


def build_model(dataset: Dataset, family: Family, fixed_columns=None,
                random_columns=None, prior: Prior | None = None,
                tau0: float = DEFAULT_TAU0) -> GlmmModel:
    """Assemble a model from a dataset, selecting design columns.

    Column indices are 0-based into the dataset's x/z columns; None keeps
    every column.  The default prior uses the given tau0.
    """
    if fixed_columns is None:
        fixed_columns = range(dataset.X.shape[1])
    if random_columns is None:
        random_columns = range(dataset.Z.shape[1])
    fixed_columns = [int(c) for c in fixed_columns]
    random_columns = [int(c) for c in random_columns]
    if not fixed_columns or not random_columns:
        raise InvalidInputError("need at least one fixed and one random column")
    X = np.ascontiguousarray(dataset.X[:, fixed_columns])
    Z = np.ascontiguousarray(dataset.Z[:, random_columns])
    if prior is None:
        prior = default_prior(X.shape[1], Z.shape[1], tau0)
    return GlmmModel(
        family=family, subject_ids=dataset.subject_ids,
        y=np.ascontiguousarray(dataset.y), X=X, Z=Z,
        offsets=np.ascontiguousarray(dataset.offsets),
        row_start=np.ascontiguousarray(dataset.row_start, dtype=np.int64),
        prior=prior, subj_idx=dataset.subject_index_of_row())


def prior_precision_beta(model: GlmmModel) -> np.ndarray:
    from ..expfam import spd_inverse

    return spd_inverse(model.prior.sigma_beta0, "sigma_beta0")


def grad_hessian(model: GlmmModel, alpha_star, eq_b):
    """Gradient and Hessian of log p(y|beta,b) p(b|EQ) p(beta) at alpha.

    alpha stacks (beta, b_1, ..., b_m); eq_b is the u x u expected
    random-effects precision replicated down the block diagonal.  The
    Hessian comes back in block-arrow form and is never densified here.
    """
    alpha_star = np.ascontiguousarray(alpha_star, dtype=float)
    if alpha_star.shape != (model.dim_alpha,):
        raise DimensionError("alpha must have length %d, got %s"
                             % (model.dim_alpha, alpha_star.shape))
    eq_b = np.ascontiguousarray(eq_b, dtype=float)
    if eq_b.shape != (model.u, model.u):
        raise DimensionError("EQ must be %d x %d" % (model.u, model.u))
    beta = alpha_star[:model.p]
    b = alpha_star[model.p:].reshape(model.m, model.u)
    g_beta, g_b, h_corner, h_border, h_diag = _K.grad_hess(
        model.y, model.X, model.Z, model.offsets, model.row_start,
        model.subj_idx, model.family.kernel_tag, model.family.phi,
        prior_precision_beta(model), model.prior.mu_beta0, eq_b, beta, b)
    gradient = np.concatenate([g_beta, g_b.reshape(-1)])
    hessian = BlockArrowMatrix(corner=h_corner, border=h_border, diag=h_diag)
    return gradient, hessian
