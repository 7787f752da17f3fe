"""Tabular dataset handling: schema, loading, and covariate binning.

A dataset is columnar and immutable after construction: one float vector of
outcomes, one 0/1 arm vector, and one column per baseline covariate.
Numeric covariates are binned into tertile levels (or explicit cut points),
categorical covariates use their observed categories; the resulting
``BinnedCovariate`` levels are the atoms from which subgroups are built.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LoadError, SchemaError

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str  # NUMERIC or CATEGORICAL
    levels: tuple[str, ...] = ()  # declared levels, categorical only

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL and len(self.levels) < 2:
            raise SchemaError(
                f"covariate {self.name!r}: categorical needs >= 2 declared levels"
            )


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariate declarations plus optional loader directives."""

    covariates: tuple[Covariate, ...]
    arm_labels: tuple[str, str] | None = None  # (label for 0, label for 1)
    cut_points: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise SchemaError("covariate names must be unique")
        for name in self.cut_points:
            if name not in names:
                raise SchemaError(f"cut points given for unknown covariate {name!r}")

    def __iter__(self):
        return iter(self.covariates)

    def names(self) -> list[str]:
        return [c.name for c in self.covariates]

    def covariate(self, name: str) -> Covariate:
        for c in self.covariates:
            if c.name == name:
                return c
        raise SchemaError(f"unknown covariate {name!r}")


@dataclass(frozen=True)
class Dataset:
    """Immutable columnar trial data with a fixed row order."""

    schema: CovariateSchema
    outcome: np.ndarray  # float, shape (N,)
    arm: np.ndarray  # int8 in {0, 1}, shape (N,)
    columns: dict[str, np.ndarray]  # numeric -> float, categorical -> level codes

    def __post_init__(self):
        n = len(self.outcome)
        if len(self.arm) != n:
            raise SchemaError("outcome and arm lengths differ")
        for name, col in self.columns.items():
            if len(col) != n:
                raise SchemaError(f"column {name!r} length {len(col)} != {n}")
        if not (np.any(self.arm == 0) and np.any(self.arm == 1)):
            raise SchemaError("arm column must contain both 0 and 1")
        self.outcome.setflags(write=False)
        self.arm.setflags(write=False)
        for col in self.columns.values():
            col.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.outcome)

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.arm == 1))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.arm == 0))

    @classmethod
    def from_columns(
        cls,
        schema: CovariateSchema,
        outcome: np.ndarray,
        arm: np.ndarray,
        raw_columns: dict[str, np.ndarray],
    ) -> "Dataset":
        """Build a dataset from in-memory columns.

        Categorical columns may arrive as strings; they are converted to
        integer codes into the declared level list.
        """
        columns: dict[str, np.ndarray] = {}
        for cov in schema:
            try:
                col = raw_columns[cov.name]
            except KeyError:
                raise SchemaError(f"missing column {cov.name!r}") from None
            if cov.kind == NUMERIC:
                columns[cov.name] = np.asarray(col, dtype=np.float64)
            else:
                if np.issubdtype(np.asarray(col).dtype, np.integer):
                    codes = np.asarray(col, dtype=np.int32)
                    if codes.size and (codes.min() < 0 or codes.max() >= len(cov.levels)):
                        raise SchemaError(f"column {cov.name!r}: code out of range")
                else:
                    lookup = {lev: i for i, lev in enumerate(cov.levels)}
                    codes = np.empty(len(col), dtype=np.int32)
                    for i, v in enumerate(col):
                        try:
                            codes[i] = lookup[str(v)]
                        except KeyError:
                            raise LoadError(
                                f"column {cov.name!r}, row {i + 1}: "
                                f"value {v!r} not among declared levels"
                            ) from None
                columns[cov.name] = codes
        return cls(
            schema=schema,
            outcome=np.asarray(outcome, dtype=np.float64),
            arm=np.asarray(arm, dtype=np.int8),
            columns=columns,
        )

    def category_strings(self, name: str) -> np.ndarray:
        """Decode a categorical column back to its level strings."""
        cov = self.schema.covariate(name)
        if cov.kind != CATEGORICAL:
            raise SchemaError(f"column {name!r} is not categorical")
        return np.asarray(cov.levels, dtype=object)[self.columns[name]]


@dataclass(frozen=True)
class BinnedCovariate:
    """A covariate discretized into ordered levels that partition the rows."""

    name: str
    levels: tuple[str, ...]
    assignment: np.ndarray  # int codes into levels, shape (N,)
    cut_points: tuple[float, ...] | None = None  # numeric sources only
    degenerate: bool = False  # fewer than 2 non-empty levels

    def __post_init__(self):
        self.assignment.setflags(write=False)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level_counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_levels)


def _parse_float(text: str, line_no: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise LoadError(
            f"line {line_no}, column {col!r}: cannot parse {text!r} as a number"
        ) from None
    if math.isnan(value):
        raise LoadError(f"line {line_no}, column {col!r}: missing value")
    return value


def load_dataset(
    path,
    schema: CovariateSchema,
    outcome_col: str,
    arm_col: str,
    delimiter: str = ",",
) -> Dataset:
    """Read a delimited text file (header row required) into a Dataset.

    Numeric parsing always uses the decimal point regardless of locale.
    Missing cells, unparseable numbers, undeclared categorical levels and
    arm values outside the declared mapping are reported with the file line
    and column that caused them.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        col_index: dict[str, int] = {}
        for i, h in enumerate(header):
            col_index.setdefault(h, i)
        for needed in [outcome_col, arm_col] + schema.names():
            if needed not in col_index:
                raise SchemaError(f"{path}: missing column {needed!r}")

        arm_map: dict[str, int] = {"0": 0, "1": 1}
        if schema.arm_labels is not None:
            arm_map = {schema.arm_labels[0]: 0, schema.arm_labels[1]: 1}

        outcomes: list[float] = []
        arms: list[int] = []
        raw: dict[str, list] = {c.name: [] for c in schema}
        cat_lookup = {
            c.name: {lev: i for i, lev in enumerate(c.levels)}
            for c in schema
            if c.kind == CATEGORICAL
        }

        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise LoadError(f"line {line_no}: expected {len(header)} cells, got {len(row)}")
            outcomes.append(_parse_float(row[col_index[outcome_col]].strip(), line_no, outcome_col))
            arm_txt = row[col_index[arm_col]].strip()
            if arm_txt not in arm_map:
                raise LoadError(
                    f"line {line_no}, column {arm_col!r}: arm value {arm_txt!r} "
                    f"is not one of {sorted(arm_map)}"
                )
            arms.append(arm_map[arm_txt])
            for cov in schema:
                cell = row[col_index[cov.name]].strip()
                if cell == "":
                    raise LoadError(f"line {line_no}, column {cov.name!r}: missing value")
                if cov.kind == NUMERIC:
                    raw[cov.name].append(_parse_float(cell, line_no, cov.name))
                else:
                    if cell not in cat_lookup[cov.name]:
                        raise LoadError(
                            f"line {line_no}, column {cov.name!r}: value {cell!r} "
                            f"not among declared levels"
                        )
                    raw[cov.name].append(cat_lookup[cov.name][cell])

    if not outcomes:
        raise LoadError(f"{path}: no data rows")
    columns = {}
    for cov in schema:
        dtype = np.float64 if cov.kind == NUMERIC else np.int32
        columns[cov.name] = np.asarray(raw[cov.name], dtype=dtype)
    return Dataset(
        schema=schema,
        outcome=np.asarray(outcomes, dtype=np.float64),
        arm=np.asarray(arms, dtype=np.int8),
        columns=columns,
    )


def save_dataset(dataset: Dataset, path, outcome_col="outcome", arm_col="arm", delimiter=","):
    """Write a dataset back to delimited text (audit/round-trip helper)."""
    names = dataset.schema.names()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow([outcome_col, arm_col] + names)
        decoded = {}
        for cov in dataset.schema:
            if cov.kind == CATEGORICAL:
                decoded[cov.name] = dataset.category_strings(cov.name)
        for i in range(dataset.n):
            row = [repr(float(dataset.outcome[i])), str(int(dataset.arm[i]))]
            for cov in dataset.schema:
                if cov.kind == NUMERIC:
                    row.append(repr(float(dataset.columns[cov.name][i])))
                else:
                    row.append(str(decoded[cov.name][i]))
            writer.writerow(row)


def _interval_label(lo: float, hi: float) -> str:
    left = "(-inf" if math.isinf(lo) else f"({lo:g}"
    right = "inf)" if math.isinf(hi) else f"{hi:g}]"
    return f"{left},{right}"


def bin_by_cuts(values: np.ndarray, cuts, name: str = "") -> BinnedCovariate:
    """Bin a numeric vector at explicit cut points (levels are (lo, hi]).

    Duplicate cut points are merged and empty levels dropped, so the result
    may have fewer levels than ``len(cuts) + 1``; a result with fewer than
    two non-empty levels is flagged degenerate.
    """
    values = np.asarray(values, dtype=np.float64)
    uniq = sorted(set(float(c) for c in cuts))
    edges = [-math.inf] + uniq + [math.inf]
    assignment = np.searchsorted(np.asarray(uniq), values, side="left").astype(np.int32)
    labels = [_interval_label(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]

    counts = np.bincount(assignment, minlength=len(labels))
    keep = np.flatnonzero(counts > 0)
    remap = np.full(len(labels), -1, dtype=np.int32)
    remap[keep] = np.arange(len(keep), dtype=np.int32)
    assignment = remap[assignment]
    labels = [labels[i] for i in keep]
    return BinnedCovariate(
        name=name,
        levels=tuple(labels),
        assignment=assignment,
        cut_points=tuple(uniq),
        degenerate=len(labels) < 2,
    )


def tertile_bin(values: np.ndarray, name: str = "") -> BinnedCovariate:
    """Bin a numeric vector into tertile levels.

    The cut points are the order statistics at ranks ceil(n/3) and
    ceil(2n/3) of the sorted values. Ties can collapse a level to empty, in
    which case it is dropped and the result has fewer levels; a single-level
    result is flagged degenerate and excluded from subgroup generation by
    callers.
    """
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 3:
        raise ValueError("tertile binning needs at least 3 values")
    ordered = np.sort(values)
    q1 = float(ordered[math.ceil(n / 3) - 1])
    q2 = float(ordered[math.ceil(2 * n / 3) - 1])
    return bin_by_cuts(values, [q1, q2], name=name)


def bin_categorical(dataset: Dataset, name: str) -> BinnedCovariate:
    """One level per observed category, in declared level order."""
    cov = dataset.schema.covariate(name)
    codes = dataset.columns[name]
    observed = np.unique(codes)
    remap = np.full(len(cov.levels), -1, dtype=np.int32)
    remap[observed] = np.arange(len(observed), dtype=np.int32)
    assignment = remap[codes]
    labels = tuple(cov.levels[int(i)] for i in observed)
    return BinnedCovariate(
        name=name,
        levels=labels,
        assignment=assignment,
        cut_points=None,
        degenerate=len(labels) < 2,
    )


def parse_schema_file(path) -> CovariateSchema:
    """Read the sidecar schema file.

    One covariate per line, in display order::

        AGE: numeric
        SEX: categorical F | M

    Directives::

        !arm placebo | treated      (labels mapping to arm 0 and 1)
        !cuts LBEGFG1B: 60, 90      (explicit bin cuts overriding tertiles)

    ``#`` starts a comment; blank lines are ignored.
    """
    covariates: list[Covariate] = []
    arm_labels = None
    cuts: dict[str, tuple[float, ...]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("!arm"):
                parts = [p.strip() for p in line[len("!arm") :].split("|")]
                if len(parts) != 2 or not all(parts):
                    raise SchemaError(f"{path}:{line_no}: !arm needs 'LABEL0 | LABEL1'")
                arm_labels = (parts[0], parts[1])
                continue
            if line.startswith("!cuts"):
                body = line[len("!cuts") :].strip()
                if ":" not in body:
                    raise SchemaError(f"{path}:{line_no}: !cuts needs 'NAME: v1, v2'")
                name, values = body.split(":", 1)
                try:
                    cuts[name.strip()] = tuple(float(v) for v in values.split(","))
                except ValueError:
                    raise SchemaError(f"{path}:{line_no}: unparseable cut value") from None
                continue
            if ":" not in line:
                raise SchemaError(f"{path}:{line_no}: expected 'NAME: kind'")
            name, rest = line.split(":", 1)
            name = name.strip()
            rest = rest.strip()
            if rest == NUMERIC:
                covariates.append(Covariate(name=name, kind=NUMERIC))
            elif rest.startswith(CATEGORICAL):
                levels = tuple(
                    lev.strip() for lev in rest[len(CATEGORICAL) :].split("|") if lev.strip()
                )
                if len(levels) < 2:
                    raise SchemaError(
                        f"{path}:{line_no}: categorical {name!r} needs >= 2 levels"
                    )
                covariates.append(Covariate(name=name, kind=CATEGORICAL, levels=levels))
            else:
                raise SchemaError(f"{path}:{line_no}: unknown kind {rest!r}")
    if not covariates:
        raise SchemaError(f"{path}: no covariates declared")
    return CovariateSchema(covariates=tuple(covariates), arm_labels=arm_labels, cut_points=cuts)


def write_schema_file(schema: CovariateSchema, path):
    """Inverse of parse_schema_file, used by the trial simulator's exports."""
    lines = []
    if schema.arm_labels is not None:
        lines.append(f"!arm {schema.arm_labels[0]} | {schema.arm_labels[1]}")
    for name, cuts in sorted(schema.cut_points.items()):
        lines.append(f"!cuts {name}: " + ", ".join(f"{c:g}" for c in cuts))
    for cov in schema:
        if cov.kind == NUMERIC:
            lines.append(f"{cov.name}: numeric")
        else:
            lines.append(f"{cov.name}: categorical " + " | ".join(cov.levels))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def bin_all(dataset: Dataset) -> list[BinnedCovariate]:
    """Bin every covariate; degenerate (single-level) results are excluded.

    Numeric covariates use tertiles unless the schema declares explicit cut
    points for them; categorical covariates use observed categories.
    """
    out: list[BinnedCovariate] = []
    for cov in dataset.schema:
        if cov.kind == NUMERIC:
            cuts = dataset.schema.cut_points.get(cov.name)
            if cuts is not None:
                binned = bin_by_cuts(dataset.columns[cov.name], cuts, name=cov.name)
            else:
                binned = tertile_bin(dataset.columns[cov.name], name=cov.name)
        else:
            binned = bin_categorical(dataset, cov.name)
        if not binned.degenerate:
            out.append(binned)
    return out
