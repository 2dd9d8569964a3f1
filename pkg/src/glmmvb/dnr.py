"""Divide and recombine: partition subjects, fit pieces, merge posteriors.

Only the shared parameters are recombined: the fixed-effect Gaussian
marginal and the random-effects-precision Wishart factor, both through the
natural-parameter sums in `expfam`.  Each random effect lives in exactly
one piece, so its per-piece posterior is already the final answer and is
carried through unchanged.

Piece fits are independent: piece j uses the derived seed
seeds.derive_seed(master, j), so results do not depend on scheduling or
worker count.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import seeds
from .errors import GlmmVbError, InvalidInputError, PieceError
from .expfam import GaussianFactor, WishartFactor, combine_gaussians, \
    combine_wisharts
from .glmm.model import GlmmModel
from .jsonutil import dump as json_dump
from .mfvb import FitConfig, fit_to_dict, mfvb_fit


@dataclass(frozen=True)
class Partition:
    """Balanced random assignment of subjects to pieces."""

    M: int
    assignment: dict  # subject_id -> piece index
    seed: int

    @classmethod
    def build(cls, subject_ids, M: int, seed: int) -> "Partition":
        """Reconstructible exactly from (subject ids, M, seed)."""
        subject_ids = list(subject_ids)
        if len(set(subject_ids)) != len(subject_ids):
            raise InvalidInputError("duplicate subject ids")
        m = len(subject_ids)
        if m == 0:
            raise InvalidInputError("no subjects to partition")
        if not 1 <= M <= m:
            raise InvalidInputError("piece count %d out of range" % M)
        rng = seeds.generator(seed)
        order = rng.permutation(m)
        base, extra = divmod(m, M)
        sizes = [base + 1 if j < extra else base for j in range(M)]
        assignment = {}
        pos = 0
        for j, size in enumerate(sizes):
            for k in range(pos, pos + size):
                assignment[subject_ids[order[k]]] = j
            pos += size
        return cls(M=M, assignment=dict(assignment), seed=seed)

    def piece_sizes(self) -> list:
        sizes = [0] * self.M
        for piece in self.assignment.values():
            sizes[piece] += 1
        return sizes


def make_partition(subject_ids, target_piece_size: int = 200,
                   seed: int = 0) -> Partition:
    """Random balanced partition with pieces of roughly the target size."""
    subject_ids = list(subject_ids)
    if not subject_ids:
        raise InvalidInputError("no subjects to partition")
    if target_piece_size < 1:
        raise InvalidInputError("target piece size must be >= 1")
    M = max(1, round(len(subject_ids) / target_piece_size))
    M = min(M, len(subject_ids))
    return Partition.build(subject_ids, M, seed)


def piece_subject_indices(partition: Partition, model: GlmmModel) -> list:
    """Subject indices per piece, in original dataset order."""
    missing = [sid for sid in model.subject_ids
               if sid not in partition.assignment]
    if missing:
        raise InvalidInputError(
            "partition does not cover subjects %s" % missing[:5])
    groups = [[] for _ in range(partition.M)]
    for i, sid in enumerate(model.subject_ids):
        groups[partition.assignment[sid]].append(i)
    if any(not g for g in groups):
        raise InvalidInputError("a piece has no subjects from this model")
    return groups


def fit_pieces(model: GlmmModel, partition: Partition,
               config: FitConfig = FitConfig(), jobs: int = 1) -> list:
    """Fit every piece; scheduling-independent by construction."""
    groups = piece_subject_indices(partition, model)

    def fit_one(j):
        piece_config = replace(
            config, rng_seed=seeds.derive_seed(config.rng_seed, j))
        try:
            return mfvb_fit(model.subset(groups[j]), piece_config)
        except GlmmVbError as exc:
            raise PieceError("piece %d failed: %s" % (j, exc), piece=j) \
                from exc

    if jobs is None:
        jobs = 1
    if jobs > 1 and partition.M > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, partition.M)) as pool:
            return list(pool.map(fit_one, range(partition.M)))
    return [fit_one(j) for j in range(partition.M)]


@dataclass(frozen=True)
class CombinedPosterior:
    """Recombined shared-parameter posteriors plus the per-piece fits."""

    beta: GaussianFactor
    Q: WishartFactor
    pieces: tuple


def recombine(fits, model: GlmmModel) -> CombinedPosterior:
    """Merge per-piece posteriors against the model's prior."""
    fits = list(fits)
    prior_beta = GaussianFactor(mu=model.prior.mu_beta0,
                                sigma=model.prior.sigma_beta0)
    prior_q = WishartFactor(nu=model.prior.nu0, scale=model.prior.S0)
    beta = combine_gaussians([f.beta_marginal for f in fits], prior_beta)
    q = combine_wisharts([f.q_Q for f in fits], prior_q)
    return CombinedPosterior(beta=beta, Q=q, pieces=tuple(fits))


# ---------------------------------------------------------------------------
# serialization


def write_partition_csv(partition: Partition, subject_ids, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "piece"])
        for sid in subject_ids:
            writer.writerow([sid, partition.assignment[sid]])


def read_partition_csv(path, seed: int = 0) -> Partition:
    assignment = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "piece"]:
            raise InvalidInputError("%s: bad partition header" % path)
        for row in reader:
            if not row:
                continue
            assignment[row[0]] = int(row[1])
    if not assignment:
        raise InvalidInputError("%s: empty partition" % path)
    return Partition(M=max(assignment.values()) + 1,
                     assignment=assignment, seed=seed)


def combined_to_dict(combined: CombinedPosterior, family_tag: str,
                     seed: int) -> dict:
    """Combined-fit JSON: same schema as a single fit plus a piece
    manifest; per-subject posteriors are the per-piece ones, concatenated
    in piece order."""
    per_subject = []
    manifest = []
    for j, fit in enumerate(combined.pieces):
        manifest.append({
            "piece": j,
            "m": fit.m,
            "converged": fit.converged,
            "iterations_used": fit.iterations_used,
            "seed": fit.seed,
        })
        per_subject.extend(
            {"subject_id": s.subject_id, "mu_b": s.mu_b,
             "sigma_b": s.sigma_b.reshape(-1)}
            for s in fit.per_subject)
    return {
        "family": family_tag,
        "p": combined.beta.dim,
        "u": combined.Q.dim,
        "m": len(per_subject),
        "mu_beta": combined.beta.mu,
        "sigma_beta": combined.beta.sigma.reshape(-1),
        "nu_q": combined.Q.nu,
        "S_q": combined.Q.scale.reshape(-1),
        "per_subject": per_subject,
        "converged": all(f.converged for f in combined.pieces),
        "iterations_used": max(f.iterations_used for f in combined.pieces),
        "seed": seed,
        "combined": True,
        "pieces": manifest,
    }


def write_combined_json(combined: CombinedPosterior, family_tag: str,
                        seed: int, path) -> None:
    json_dump(combined_to_dict(combined, family_tag, seed), path)


def write_fit_or_combined_json(fits, combined, family_tag, seed, path):
    if len(fits) == 1:
        json_dump(fit_to_dict(fits[0]), path)
    else:
        write_combined_json(combined, family_tag, seed, path)
