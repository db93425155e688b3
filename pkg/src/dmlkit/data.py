"""Tabular and panel data containers, CSV loading, and fold assignment.

Datasets hold named numeric columns plus a role map (outcome, treatment,
instrument, controls, unit, time, group).  All containers are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, SchemaError, ValidationError
from .rng import SplitMix64

ROLE_NAMES = ("outcome", "treatment", "instrument", "controls", "unit", "time", "group")


def _role_columns(roles: dict) -> list[str]:
    cols: list[str] = []
    for role, value in roles.items():
        if role not in ROLE_NAMES:
            raise SchemaError(f"unknown role '{role}'")
        if role == "controls":
            cols.extend(value)
        else:
            cols.append(value)
    return cols


@dataclass(frozen=True)
class Dataset:
    """A rectangular numeric sample with named columns and column roles."""

    columns: dict[str, np.ndarray]
    roles: dict[str, object]
    n: int = field(default=0)

    def __post_init__(self):
        n = None
        for name, col in self.columns.items():
            if n is None:
                n = col.shape[0]
            elif col.shape[0] != n:
                raise ValidationError(f"column '{name}' has length {col.shape[0]}, expected {n}")
            col.setflags(write=False)
        for col in _role_columns(self.roles):
            if col not in self.columns:
                raise SchemaError(f"role column '{col}' not present")
        object.__setattr__(self, "n", 0 if n is None else n)

    def has_role(self, role: str) -> bool:
        return role in self.roles

    def col(self, name: str) -> np.ndarray:
        return self.columns[name]

    def role_vector(self, role: str) -> np.ndarray:
        if role not in self.roles:
            raise SchemaError(f"role '{role}' required but not mapped")
        return self.columns[self.roles[role]]

    def controls_matrix(self) -> np.ndarray:
        """Control columns stacked as an (n, p) matrix; p may be zero."""
        names = self.roles.get("controls", ())
        if not names:
            return np.empty((self.n, 0))
        return np.column_stack([self.columns[c] for c in names])

    def outcome(self) -> np.ndarray:
        return self.role_vector("outcome")

    def treatment(self) -> np.ndarray:
        return self.role_vector("treatment")

    def instrument(self) -> np.ndarray:
        return self.role_vector("instrument")


def dataset_from_arrays(n: int, roles: dict, **named: np.ndarray) -> Dataset:
    """Convenience constructor used by simulations and tests."""
    cols = {}
    for name, arr in named.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            for j in range(arr.shape[1]):
                cols[f"{name}{j + 1}"] = np.ascontiguousarray(arr[:, j])
        else:
            cols[name] = arr.copy()
    return Dataset(columns=cols, roles=roles, n=n)


def load_csv(path: str, schema: dict) -> Dataset:
    """Load a comma-delimited file with a header row into a Dataset.

    Only columns named in ``schema`` are parsed; every cell of a role
    column must be numeric and non-empty, otherwise the offending row and
    column are reported.  Row order is preserved.
    """
    needed = _role_columns(schema)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        pos = {c: header.index(c) for c in needed}
        data: dict[str, list[float]] = {c: [] for c in needed}
        for rownum, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            for c, j in pos.items():
                cell = row[j].strip() if j < len(row) else ""
                if cell == "":
                    raise ValidationError(f"{path}: missing value in column '{c}' at row {rownum}")
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric value '{cell}' in column '{c}' at row {rownum}"
                    ) from None
                if not math.isfinite(val):
                    raise ValidationError(f"{path}: non-finite value in column '{c}' at row {rownum}")
                data[c].append(val)
    columns = {c: np.asarray(v, dtype=np.float64) for c, v in data.items()}
    n = len(next(iter(columns.values()))) if columns else 0
    return Dataset(columns=columns, roles=dict(schema), n=n)


@dataclass(frozen=True)
class FoldPartition:
    """A seeded disjoint cover of 0..n-1 by K folds, indices in 1..K."""

    K: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        self.assignment.setflags(write=False)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def fold_rows(self, k: int) -> np.ndarray:
        return np.nonzero(self.assignment == k)[0]

    def complement_rows(self, k: int) -> np.ndarray:
        return np.nonzero(self.assignment != k)[0]


def make_folds(n: int, K: int, seed: int) -> FoldPartition:
    """Shuffle 0..n-1 (Fisher-Yates on the seeded stream) and slice into
    K contiguous blocks; the first n mod K folds get one extra row."""
    if K < 2 or K > n:
        raise ValueError(f"fold count K={K} must satisfy 2 <= K <= n={n}")
    perm = SplitMix64(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    base, extra = divmod(n, K)
    start = 0
    for k in range(1, K + 1):
        size = base + (1 if k <= extra else 0)
        assignment[perm[start:start + size]] = k
        start += size
    return FoldPartition(K=K, assignment=assignment, seed=seed)


@dataclass(frozen=True)
class PanelDataset:
    """A balanced panel: wide (unit x period) views plus first differences."""

    base: Dataset
    unit_ids: np.ndarray
    periods: np.ndarray
    row_index: np.ndarray  # (units, T) -> row in base

    def __post_init__(self):
        for arr in (self.unit_ids, self.periods, self.row_index):
            arr.setflags(write=False)

    @property
    def units(self) -> int:
        return self.unit_ids.shape[0]

    @property
    def T(self) -> int:
        return self.periods.shape[0]

    def wide(self, column: str) -> np.ndarray:
        """(units, T) matrix of ``column``, rows ordered by unit id."""
        return self.base.col(column)[self.row_index]

    def wide_role(self, role: str) -> np.ndarray:
        if role not in self.base.roles:
            raise SchemaError(f"role '{role}' required but not mapped")
        return self.wide(self.base.roles[role])

    def diff_role(self, role: str) -> np.ndarray:
        """(units, T-1) first differences A_it - A_it-1 for t = 2..T."""
        wide = self.wide_role(role)
        return wide[:, 1:] - wide[:, :-1]

    def controls_at(self, t_index: int) -> np.ndarray:
        """(units, p) control matrix at the t_index-th period."""
        names = self.base.roles.get("controls", ())
        if not names:
            return np.empty((self.units, 0))
        return np.column_stack([self.wide(c)[:, t_index] for c in names])

    def group_vector(self) -> np.ndarray:
        """Per-unit first-treatment time; non-finite codes never-treated."""
        return self.wide_role("group")[:, 0]


def build_panel(ds: Dataset) -> PanelDataset:
    """Arrange a long dataset into a balanced panel, rejecting unbalanced units."""
    for role in ("unit", "time"):
        if role not in ds.roles:
            raise SchemaError(f"role '{role}' required to build a panel")
    unit = ds.role_vector("unit")
    time = ds.role_vector("time")
    unit_ids = np.unique(unit)
    periods = np.unique(time)
    T = periods.shape[0]
    if T < 2:
        raise ValidationError("panel needs at least two periods")
    row_index = np.full((unit_ids.shape[0], T), -1, dtype=np.int64)
    u_pos = {u: i for i, u in enumerate(unit_ids)}
    t_pos = {t: j for j, t in enumerate(periods)}
    for row in range(ds.n):
        i, j = u_pos[unit[row]], t_pos[time[row]]
        if row_index[i, j] != -1:
            raise ValidationError(f"duplicate observation for unit {unit[row]:g} at time {time[row]:g}")
        row_index[i, j] = row
    bad = unit_ids[np.nonzero((row_index == -1).any(axis=1))[0]]
    if bad.size:
        shown = ", ".join(f"{u:g}" for u in bad[:10])
        raise ValidationError(f"unbalanced panel; units missing periods: {shown}")
    if "group" in ds.roles:
        g = ds.role_vector("group")[row_index]
        if not np.all(np.isnan(g) | (g == g[:, :1])):
            raise ValidationError("group (first-treatment time) must be constant within unit")
    return PanelDataset(base=ds, unit_ids=unit_ids, periods=periods, row_index=row_index)


def _check_binary(ds: Dataset, role: str) -> None:
    v = ds.role_vector(role)
    if not np.all((v == 0.0) | (v == 1.0)):
        raise ValidationError(f"role '{role}' must be binary 0/1 for this score")


def validate(ds: Dataset, score_kind: str) -> None:
    """Check that ``ds`` provides every role the named score requires."""
    from .scores import score_requirements_roles  # local import to avoid a cycle

    needed, binary = score_requirements_roles(score_kind)
    missing = [r for r in needed if r not in ds.roles]
    if missing:
        raise ValidationError(f"score '{score_kind}': role(s) {','.join(missing)} required")
    for role in binary:
        _check_binary(ds, role)
