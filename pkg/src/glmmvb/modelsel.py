"""Cross-validated predictive model selection.

Candidate models are column subsets of the dataset's design pools.  Each
candidate is fitted once per piece; leaving fold j out of the combination
is then pure factor algebra (the prior-correction exponent drops by one),
so no refitting happens.  The held-out score of a fold plugs the combined
posterior means into the per-subject Laplace-approximated log predictive
density, and the selection score is the average over folds; the largest
score wins, with exact ties broken by parsimony and then candidate order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import seeds
from .dnr import CombinedPosterior, Partition, piece_subject_indices, \
    recombine
from .errors import ConfigError, GlmmVbError, InvalidInputError, \
    NumericalError, PieceError
from .glmm.data import Dataset
from .glmm.families import Family
from .glmm.model import build_model
from .jsonutil import dump as json_dump
from .kernels import STATUS_NEWTON_FAIL, STATUS_OK, active as _K
from .mfvb import FitConfig, mfvb_fit


@dataclass(frozen=True)
class CandidateModel:
    """Column subsets (0-based, intercept column 0 always present)."""

    fixed_columns: tuple
    random_columns: tuple
    family: Family

    def __post_init__(self):
        fixed = tuple(sorted(set(int(c) for c in self.fixed_columns)))
        random = tuple(sorted(set(int(c) for c in self.random_columns)))
        if not fixed or fixed[0] != 0:
            raise InvalidInputError("fixed columns must include intercept 0")
        if not random or random[0] != 0:
            raise InvalidInputError("random columns must include intercept 0")
        object.__setattr__(self, "fixed_columns", fixed)
        object.__setattr__(self, "random_columns", random)

    @property
    def n_covariates(self) -> int:
        return len(self.fixed_columns) + len(self.random_columns)

    def label(self, dataset: Dataset | None = None) -> str:
        if dataset is None:
            fixed = "+".join("x%d" % (c + 1) for c in self.fixed_columns)
            random = "+".join("z%d" % (c + 1) for c in self.random_columns)
        else:
            fixed = "+".join(dataset.x_names[c] for c in self.fixed_columns)
            random = "+".join(dataset.z_names[c] for c in self.random_columns)
        return "%s|%s" % (fixed, random)


@dataclass(frozen=True)
class LpdsReport:
    per_model: tuple  # of (CandidateModel, lpds, per_fold tuple)
    best_index: int


_MAX_CANDIDATES = 4096


def enumerate_candidates(fixed_pool, random_pool, family: Family) -> list:
    """Cross product of pool subsets, binary counting, fixed pool major.

    Pools hold the optional column indices; intercepts are implicit and
    always included.  Bit k of the subset counter selects pool element k.
    """
    fixed_pool = [int(c) for c in fixed_pool]
    random_pool = [int(c) for c in random_pool]
    if 0 in fixed_pool or 0 in random_pool:
        raise InvalidInputError("pools must not contain the intercept column")
    total = 2 ** (len(fixed_pool) + len(random_pool))
    if total > _MAX_CANDIDATES:
        raise ConfigError(
            "%d candidate models exceed the guard of %d; exhaustive "
            "search does not scale to pools this large"
            % (total, _MAX_CANDIDATES))
    candidates = []
    for fmask in range(2 ** len(fixed_pool)):
        fixed = (0,) + tuple(c for k, c in enumerate(fixed_pool)
                             if fmask >> k & 1)
        for rmask in range(2 ** len(random_pool)):
            random = (0,) + tuple(c for k, c in enumerate(random_pool)
                                  if rmask >> k & 1)
            candidates.append(CandidateModel(
                fixed_columns=fixed, random_columns=random, family=family))
    return candidates


def loo_combine(fits, leave_out: int, model) -> CombinedPosterior:
    """Recombine all pieces except one; the prior exponent adjusts itself
    because it is tied to the number of factors being multiplied."""
    fits = list(fits)
    if len(fits) < 2:
        raise ConfigError("leave-one-piece-out needs at least two pieces")
    if not 0 <= leave_out < len(fits):
        raise InvalidInputError("fold index %d out of range" % leave_out)
    kept = [fit for j, fit in enumerate(fits) if j != leave_out]
    return recombine(kept, model)


def laplace_predictive(subject, beta_hat, Q_hat, family: Family) -> float:
    """Log predictive density of one subject's responses given plug-in
    parameter estimates, with the random effects integrated out by the
    Laplace method.

    subject is (y_i, X_i, Z_i, offsets_i) with offsets possibly None.
    Exact when Z_i is zero, since the Gaussian integral then cancels.
    """
    y_i, X_i, Z_i, off_i = subject
    y_i = np.ascontiguousarray(y_i, dtype=float).reshape(-1)
    X_i = np.ascontiguousarray(X_i, dtype=float)
    Z_i = np.ascontiguousarray(Z_i, dtype=float)
    if off_i is None:
        off_i = np.zeros(y_i.shape[0])
    off_i = np.ascontiguousarray(off_i, dtype=float).reshape(-1)
    beta_hat = np.ascontiguousarray(beta_hat, dtype=float).reshape(-1)
    Q_hat = np.ascontiguousarray(Q_hat, dtype=float)
    row_start = np.array([0, y_i.shape[0]], dtype=np.int64)
    status, bad, values = _K.laplace_batch(
        y_i, X_i, Z_i, off_i, row_start, family.kernel_tag, family.phi,
        beta_hat, Q_hat)
    if status == STATUS_NEWTON_FAIL:
        raise NumericalError("mode search failed for the subject",
                             subject_id=None)
    if status != STATUS_OK:
        raise InvalidInputError("Q_hat must be symmetric positive definite")
    return float(values[0])


def _fold_predictive_sum(model, subject_indices, beta_hat, Q_hat):
    sub = model.subset(subject_indices)
    status, bad, values = _K.laplace_batch(
        sub.y, sub.X, sub.Z, sub.offsets, sub.row_start,
        sub.family.kernel_tag, sub.family.phi, beta_hat, Q_hat)
    if status != STATUS_OK:
        raise NumericalError(
            "predictive mode search failed",
            subject_id=str(sub.subject_ids[bad]) if bad >= 0 else None)
    return float(np.sum(values))


def cross_validated_lpds(candidates, dataset: Dataset, partition: Partition,
                         config: FitConfig = FitConfig(),
                         jobs: int = 1) -> LpdsReport:
    """Score every candidate by M-fold cross-validated log predictive
    density; piece fits are computed once per candidate and reused across
    folds."""
    candidates = list(candidates)
    if not candidates:
        raise InvalidInputError("no candidate models")
    if partition.M < 2:
        raise ConfigError("cross-validation needs at least two pieces")

    models = [build_model(dataset, cand.family, cand.fixed_columns,
                          cand.random_columns) for cand in candidates]
    groups = [piece_subject_indices(partition, model) for model in models]

    def fit_cell(cell):
        ci, j = cell
        piece_model = models[ci].subset(groups[ci][j])
        from dataclasses import replace

        from . import seeds

        piece_config = replace(
            config, rng_seed=seeds.derive_seed(config.rng_seed, j))
        return mfvb_for_selection(piece_model, piece_config, ci, j)

    def mfvb_for_selection(piece_model, piece_config, ci, j):
        from .mfvb import mfvb_fit

        try:
            return mfvb_fit(piece_model, piece_config)
        except Exception as exc:
            raise PieceError(
                "candidate %d fold %d failed: %s" % (ci, j, exc),
                piece=j) from exc

    cells = [(ci, j) for ci in range(len(candidates))
             for j in range(partition.M)]
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            flat = list(pool.map(fit_cell, cells))
    else:
        flat = [fit_cell(cell) for cell in cells]
    fits = {cell: fit for cell, fit in zip(cells, flat)}

    per_model = []
    for ci, cand in enumerate(candidates):
        cand_fits = [fits[(ci, j)] for j in range(partition.M)]
        per_fold = []
        for j in range(partition.M):
            loo = loo_combine(cand_fits, j, models[ci])
            beta_hat = loo.beta.mu
            q_hat = loo.Q.mean()
            try:
                per_fold.append(_fold_predictive_sum(
                    models[ci], groups[ci][j], beta_hat, q_hat))
            except NumericalError as exc:
                raise NumericalError(
                    "candidate %d fold %d: %s" % (ci, j, exc),
                    subject_id=exc.subject_id) from exc
        per_model.append((cand, float(np.mean(per_fold)), tuple(per_fold)))

    best_index = min(
        range(len(candidates)),
        key=lambda i: (-per_model[i][1], candidates[i].n_covariates, i))
    return LpdsReport(per_model=tuple(per_model), best_index=best_index)


# ---------------------------------------------------------------------------
# serialization


def report_to_dict(report: LpdsReport, dataset: Dataset | None = None) -> dict:
    return {
        "best_index": report.best_index,
        "models": [
            {
                "candidate": cand.label(dataset),
                "fixed_cols": list(cand.fixed_columns),
                "random_cols": list(cand.random_columns),
                "lpds": lpds,
                "per_fold": list(per_fold),
            }
            for cand, lpds, per_fold in report.per_model],
    }


def write_report_json(report: LpdsReport, path,
                      dataset: Dataset | None = None) -> None:
    json_dump(report_to_dict(report, dataset), path)


def write_report_csv(report: LpdsReport, path,
                     dataset: Dataset | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("candidate,fixed_cols,random_cols,lpds\n")
        for cand, lpds, _ in report.per_model:
            fh.write("%s,%s,%s,%s\n" % (
                cand.label(dataset),
                "+".join(str(c) for c in cand.fixed_columns),
                "+".join(str(c) for c in cand.random_columns),
                repr(lpds)))
