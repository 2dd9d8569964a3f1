"""Hybrid variational fit: stochastic Gaussian block within a closed-form
Wishart update.

Each outer iteration (a) refines the joint Gaussian factor over
(fixed effects, random effects) with the stochastic fixed-form update,
holding E(Q) = nu_q * S_q fixed, entirely in block-arrow form; and then
(b) refreshes the Wishart factor in closed form,

    nu_q = nu0 + m,
    S_q  = (S0^{-1} + sum_i (mu_{b_i} mu_{b_i}^T + Sigma_{b_i}))^{-1}.

The loop stops when the mean absolute change of the stacked parameter
vector (alpha mean, alpha covariance diagonal, nu_q, vech S_q) drops below
epsilon, or after max_outer iterations.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace

import numpy as np

from . import seeds
from .errors import ConfigError, DecompositionError, DimensionError, \
    EmptyDataError
from .expfam import GaussianFactor, WishartFactor, spd_inverse
from .glmm.arrow import BlockArrowMatrix
from .glmm.model import GlmmModel, Prior, prior_precision_beta
from .jsonutil import dump as json_dump, load as json_load
from .kernels import STATUS_BAD_BLOCK, STATUS_OK, active as _K

_DELTA_DEFINITION = "mean-abs(mu_alpha, diag_sigma_alpha, nu_q, vech_S_q)"

_fit_counter_lock = threading.Lock()
_fit_counter = 0


def fit_invocations() -> int:
    """Number of mfvb_fit calls in this process (used by caching tests)."""
    return _fit_counter


def _bump_fit_counter() -> None:
    global _fit_counter
    with _fit_counter_lock:
        _fit_counter += 1


@dataclass(frozen=True)
class FitConfig:
    """Knobs of one variational fit."""

    n_inner: int = 100
    epsilon: float = 1e-5
    max_outer: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_inner < 2 or self.n_inner % 2 != 0:
            raise ConfigError("n_inner must be an even integer >= 2")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.max_outer < 1:
            raise ConfigError("max_outer must be >= 1")


@dataclass(frozen=True)
class SubjectPosterior:
    subject_id: str
    mu_b: np.ndarray            # (u,)
    sigma_b: np.ndarray         # (u, u)
    cross_cov_beta_b: np.ndarray  # (p, u)


@dataclass(frozen=True)
class VariationalFit:
    """Converged joint Gaussian factor plus the Wishart factor."""

    family_tag: str
    q_alpha_mu: np.ndarray
    q_alpha_precision: BlockArrowMatrix
    beta_marginal: GaussianFactor
    per_subject: tuple
    q_Q: WishartFactor
    iterations_used: int
    converged: bool
    seed: int
    delta_history: tuple = ()

    @property
    def p(self) -> int:
        return self.beta_marginal.dim

    @property
    def u(self) -> int:
        return self.q_Q.dim

    @property
    def m(self) -> int:
        return len(self.per_subject)


def wishart_update(prior: Prior, mu_b, sigma_b):
    """Closed-form Wishart refresh from the random-effect marginals."""
    mu_b = np.asarray(mu_b, dtype=float)
    sigma_b = np.asarray(sigma_b, dtype=float)
    m = mu_b.shape[0]
    s_inv = spd_inverse(prior.S0, "S0") \
        + np.einsum("mk,ml->kl", mu_b, mu_b) + sigma_b.sum(axis=0)
    return prior.nu0 + m, spd_inverse(0.5 * (s_inv + s_inv.T), "S_q inverse")


def _initial_wishart(prior: Prior, u: int):
    # Unit-precision start, E(Q) = I.  Starting from the vague prior
    # instead puts E(Q) = nu0 * tau0 * I (~2000 I), which reproduces itself
    # through the update and stalls the whole fit; see the fit tests.
    return prior.nu0, np.eye(u) / prior.nu0


def mfvb_fit(model: GlmmModel, config: FitConfig = FitConfig()) \
        -> VariationalFit:
    """Alternate the Gaussian and Wishart updates until the stopping rule
    fires; deterministic given (model, config)."""
    _bump_fit_counter()
    if model.m < 1:
        raise EmptyDataError("cannot fit a model with no subjects")
    p, u, m = model.p, model.u, model.m
    prior = model.prior
    prior_prec = prior_precision_beta(model)

    nu_q, s_q = _initial_wishart(prior, u)
    t_beta = np.zeros(p)
    t_b = np.zeros((m, u))
    gamma_corner = np.eye(p)
    gamma_border = np.zeros((m, p, u))
    gamma_diag = np.broadcast_to(np.eye(u), (m, u, u)).copy()

    fit = None
    prev = None
    converged = False
    history = []
    iterations = 0
    for outer in range(config.max_outer):
        iterations = outer + 1
        eq = nu_q * s_q
        rng = seeds.generator(seeds.derive_seed(config.rng_seed, outer))
        z = rng.standard_normal((config.n_inner, p + m * u))
        (status, bad_iter, bad_block, mu_beta, mu_b,
         gbar_corner, gbar_border, gbar_diag) = _K.alpha_inner_loop(
            model.y, model.X, model.Z, model.offsets, model.row_start,
            model.subj_idx, model.family.kernel_tag, model.family.phi,
            prior_prec, prior.mu_beta0, eq,
            t_beta, t_b, gamma_corner, gamma_border, gamma_diag, z)
        if status != STATUS_OK:
            which = ("tail block %d" % bad_block) \
                if status == STATUS_BAD_BLOCK else "corner block"
            raise DecompositionError(
                "running precision lost positive definiteness at inner "
                "iteration %d of outer iteration %d (%s)"
                % (bad_iter, iterations, which),
                block=int(bad_block), iteration=int(bad_iter))

        status, bad, Ls, C, Ld = _K.arrow_factor(
            gbar_corner, gbar_border, gbar_diag)
        if status != STATUS_OK:
            raise DecompositionError(
                "averaged precision is indefinite at outer iteration %d"
                % iterations, block=int(bad), iteration=iterations)
        corner_cov, border_cov, diag_cov = _K.arrow_marginals(Ls, C, Ld)

        nu_q, s_q = wishart_update(prior, mu_b, diag_cov)

        fit = VariationalFit(
            family_tag=model.family.tag,
            q_alpha_mu=np.concatenate([mu_beta, mu_b.reshape(-1)]),
            q_alpha_precision=BlockArrowMatrix(
                corner=gbar_corner, border=gbar_border, diag=gbar_diag),
            beta_marginal=GaussianFactor(mu=mu_beta, sigma=corner_cov),
            per_subject=tuple(
                SubjectPosterior(
                    subject_id=model.subject_ids[i], mu_b=mu_b[i].copy(),
                    sigma_b=diag_cov[i].copy(),
                    cross_cov_beta_b=border_cov[i].copy())
                for i in range(m)),
            q_Q=WishartFactor(nu=nu_q, scale=s_q),
            iterations_used=iterations, converged=False, seed=config.rng_seed)

        if prev is not None:
            delta = stacked_param_delta(prev, fit)
            history.append(delta)
            if delta < config.epsilon:
                converged = True
                break
        prev = fit
        t_beta = mu_beta
        t_b = mu_b
        gamma_corner = gbar_corner
        gamma_border = gbar_border
        gamma_diag = gbar_diag

    return replace(fit, converged=converged, iterations_used=iterations,
                   delta_history=tuple(history))


def _vech(matrix: np.ndarray) -> np.ndarray:
    """Row-major lower triangle, diagonal included."""
    return matrix[np.tril_indices(matrix.shape[0])]


def _stacked_params(fit: VariationalFit) -> np.ndarray:
    diag_sigma = np.concatenate(
        [np.diag(fit.beta_marginal.sigma)]
        + [np.diag(s.sigma_b) for s in fit.per_subject])
    return np.concatenate([fit.q_alpha_mu, diag_sigma, [fit.q_Q.nu],
                           _vech(fit.q_Q.scale)])


def stacked_param_delta(prev: VariationalFit, next_fit: VariationalFit) \
        -> float:
    """Mean absolute change of the stacked variational parameter vector."""
    if (prev.p, prev.u, prev.m) != (next_fit.p, next_fit.u, next_fit.m):
        raise DimensionError("fits are structurally different")
    a = _stacked_params(prev)
    b = _stacked_params(next_fit)
    return float(np.sum(np.abs(a - b)) / a.shape[0])


# ---------------------------------------------------------------------------
# serialization


def fit_to_dict(fit: VariationalFit) -> dict:
    """JSON document for one fit: moments only, 17-significant-digit floats
    on write."""
    return {
        "family": fit.family_tag,
        "p": fit.p,
        "u": fit.u,
        "m": fit.m,
        "mu_beta": fit.beta_marginal.mu,
        "sigma_beta": fit.beta_marginal.sigma.reshape(-1),
        "nu_q": fit.q_Q.nu,
        "S_q": fit.q_Q.scale.reshape(-1),
        "per_subject": [
            {"subject_id": s.subject_id, "mu_b": s.mu_b,
             "sigma_b": s.sigma_b.reshape(-1)}
            for s in fit.per_subject],
        "converged": fit.converged,
        "iterations_used": fit.iterations_used,
        "seed": fit.seed,
        "delta_definition": _DELTA_DEFINITION,
    }


def write_fit_json(fit: VariationalFit, path) -> None:
    json_dump(fit_to_dict(fit), path)


@dataclass(frozen=True)
class FitSummary:
    """Deserialized fit document; enough for recombination and reporting."""

    family_tag: str
    beta_marginal: GaussianFactor
    q_Q: WishartFactor
    per_subject: tuple
    converged: bool
    iterations_used: int
    seed: int
    combined: bool = False

    @property
    def p(self) -> int:
        return self.beta_marginal.dim

    @property
    def u(self) -> int:
        return self.q_Q.dim


def summary_from_dict(doc: dict) -> FitSummary:
    p, u = int(doc["p"]), int(doc["u"])
    return FitSummary(
        family_tag=doc["family"],
        beta_marginal=GaussianFactor(
            mu=np.array(doc["mu_beta"], dtype=float),
            sigma=np.array(doc["sigma_beta"], dtype=float).reshape(p, p)),
        q_Q=WishartFactor(
            nu=float(doc["nu_q"]),
            scale=np.array(doc["S_q"], dtype=float).reshape(u, u)),
        per_subject=tuple(
            SubjectPosterior(
                subject_id=entry["subject_id"],
                mu_b=np.array(entry["mu_b"], dtype=float),
                sigma_b=np.array(entry["sigma_b"], dtype=float).reshape(u, u),
                cross_cov_beta_b=np.zeros((p, u)))
            for entry in doc["per_subject"]),
        converged=bool(doc["converged"]),
        iterations_used=int(doc["iterations_used"]),
        seed=int(doc["seed"]),
        combined=bool(doc.get("combined", False)))


def read_fit_json(path) -> FitSummary:
    return summary_from_dict(json_load(path))
