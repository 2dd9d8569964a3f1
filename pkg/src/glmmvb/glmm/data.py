"""Grouped-dataset container and CSV ingestion.

CSV layout: header ``subject_id,y,x1..xp,z1..zu[,offset]``, UTF-8, ``.``
decimal separator, rows grouped contiguously by subject.  Design matrices
carry explicit intercept columns when a model wants them; nothing is added
implicitly.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError


def _fmt(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class Dataset:
    """Raw grouped observations plus the full candidate design columns."""

    subject_ids: tuple
    y: np.ndarray           # (n_total,)
    X: np.ndarray           # (n_total, p_avail)
    Z: np.ndarray           # (n_total, u_avail)
    offsets: np.ndarray     # (n_total,)
    row_start: np.ndarray   # (m + 1,) int64
    x_names: tuple
    z_names: tuple

    def __post_init__(self):
        n = self.y.shape[0]
        if self.X.shape[0] != n or self.Z.shape[0] != n \
                or self.offsets.shape[0] != n:
            raise InvalidInputError("column lengths disagree")
        if self.row_start[0] != 0 or self.row_start[-1] != n:
            raise InvalidInputError("row_start does not cover the data")
        if len(self.subject_ids) != self.m:
            raise InvalidInputError("subject id count mismatch")
        if np.any(np.diff(self.row_start) < 1):
            raise InvalidInputError("every subject needs at least one row")
        if len(set(self.subject_ids)) != len(self.subject_ids):
            raise InvalidInputError("duplicate subject ids")

    @property
    def m(self) -> int:
        return self.row_start.shape[0] - 1

    @property
    def n_total(self) -> int:
        return self.y.shape[0]

    def subject_index_of_row(self) -> np.ndarray:
        idx = np.zeros(self.n_total, dtype=np.int64)
        for i in range(self.m):
            idx[self.row_start[i]:self.row_start[i + 1]] = i
        return idx

    def subset_subjects(self, indices) -> "Dataset":
        """New dataset containing the given subjects, original order kept."""
        indices = sorted(int(i) for i in indices)
        rows = np.concatenate([
            np.arange(self.row_start[i], self.row_start[i + 1])
            for i in indices])
        counts = [int(self.row_start[i + 1] - self.row_start[i])
                  for i in indices]
        row_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return Dataset(
            subject_ids=tuple(self.subject_ids[i] for i in indices),
            y=self.y[rows].copy(), X=self.X[rows].copy(),
            Z=self.Z[rows].copy(), offsets=self.offsets[rows].copy(),
            row_start=row_start, x_names=self.x_names, z_names=self.z_names)


def from_arrays(subject_ids, y, X, Z, offsets=None, x_names=None,
                z_names=None, row_start=None) -> Dataset:
    y = np.ascontiguousarray(y, dtype=float)
    X = np.ascontiguousarray(X, dtype=float)
    Z = np.ascontiguousarray(Z, dtype=float)
    if X.ndim != 2 or Z.ndim != 2:
        raise InvalidInputError("X and Z must be 2-D")
    if offsets is None:
        offsets = np.zeros(y.shape[0])
    offsets = np.ascontiguousarray(offsets, dtype=float)
    if row_start is None:
        raise InvalidInputError("row_start is required")
    row_start = np.ascontiguousarray(row_start, dtype=np.int64)
    if x_names is None:
        x_names = tuple("x%d" % (j + 1) for j in range(X.shape[1]))
    if z_names is None:
        z_names = tuple("z%d" % (j + 1) for j in range(Z.shape[1]))
    return Dataset(subject_ids=tuple(subject_ids), y=y, X=X, Z=Z,
                   offsets=offsets, row_start=row_start,
                   x_names=tuple(x_names), z_names=tuple(z_names))


def read_csv(path) -> Dataset:
    """Parse the grouped CSV format; non-contiguous subjects are an error."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError("%s: empty file" % path) from None
        header = [h.strip() for h in header]
        if header[:2] != ["subject_id", "y"]:
            raise InvalidInputError(
                "%s: header must start with subject_id,y" % path)
        x_cols = [h for h in header if re.fullmatch(r"x\d+", h)]
        z_cols = [h for h in header if re.fullmatch(r"z\d+", h)]
        has_offset = header[-1] == "offset"
        expected = ["subject_id", "y"] + x_cols + z_cols \
            + (["offset"] if has_offset else [])
        if header != expected or not x_cols or not z_cols:
            raise InvalidInputError(
                "%s: header must be subject_id,y,x1..xp,z1..zu[,offset]"
                % path)
        p, u = len(x_cols), len(z_cols)
        ids, y, X, Z, offs = [], [], [], [], []
        starts = [0]
        seen = set()
        current = None
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidInputError("%s:%d: expected %d fields, got %d"
                                        % (path, ln, len(header), len(row)))
            sid = row[0]
            if sid != current:
                if sid in seen:
                    raise InvalidInputError(
                        "%s:%d: subject %r is not contiguous" % (path, ln, sid))
                seen.add(sid)
                if current is not None:
                    starts.append(len(y))
                ids.append(sid)
                current = sid
            try:
                y.append(float(row[1]))
                X.append([float(v) for v in row[2:2 + p]])
                Z.append([float(v) for v in row[2 + p:2 + p + u]])
                offs.append(float(row[2 + p + u]) if has_offset else 0.0)
            except ValueError as exc:
                raise InvalidInputError("%s:%d: %s" % (path, ln, exc)) from None
        if not y:
            raise InvalidInputError("%s: no data rows" % path)
        starts.append(len(y))
    return from_arrays(ids, np.array(y), np.array(X), np.array(Z),
                       np.array(offs), x_names=x_cols, z_names=z_cols,
                       row_start=np.array(starts, dtype=np.int64))


def write_csv(dataset: Dataset, path, write_offset=None) -> None:
    """Emit the grouped CSV format with round-trip-exact floats."""
    if write_offset is None:
        write_offset = bool(np.any(dataset.offsets != 0.0))
    header = ["subject_id", "y"] + list(dataset.x_names) \
        + list(dataset.z_names) + (["offset"] if write_offset else [])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i, sid in enumerate(dataset.subject_ids):
            for r in range(dataset.row_start[i], dataset.row_start[i + 1]):
                fields = [str(sid), _fmt(dataset.y[r])]
                fields += [_fmt(v) for v in dataset.X[r]]
                fields += [_fmt(v) for v in dataset.Z[r]]
                if write_offset:
                    fields.append(_fmt(dataset.offsets[r]))
                fh.write(",".join(fields) + "\n")
