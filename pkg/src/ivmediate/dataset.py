"""Trial data container, CSV ingestion and design-matrix assembly."""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EmptyAfterFiltering,
    MissingColumn,
    NonBinaryAssignment,
    ParseError,
)

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "NA"})
MISSING_POLICIES = ("drop-row", "error")


def _frozen(arr, ndim) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    if ndim == 2 and out.ndim == 1:
        out = out.reshape(-1, 1) if out.size else out.reshape(-1, 0)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LoadReport:
    rows_read: int
    rows_kept: int
    dropped_by_column: dict = field(default_factory=dict)
    reasons: tuple = ()

    @property
    def rows_dropped(self) -> int:
        return self.rows_read - self.rows_kept

    def summary(self) -> str:
        parts = [f"rows_read={self.rows_read}", f"rows_kept={self.rows_kept}",
                 f"rows_dropped={self.rows_dropped}"]
        for col, count in sorted(self.dropped_by_column.items()):
            parts.append(f"dropped[{col}]={count}")
        return "load_report " + " ".join(parts)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Complete-case trial data.

    ``x`` holds the covariates whose interaction with assignment serves as
    instruments; ``z`` holds covariates that are only controlled for.
    """

    y: np.ndarray
    r: np.ndarray
    m: np.ndarray
    x: np.ndarray
    z: np.ndarray = None
    x_names: tuple = ()
    z_names: tuple = ()
    outcome_name: str = "Y"
    assignment_name: str = "R"
    mediator_name: str = "M"
    load_report: LoadReport | None = None

    def __post_init__(self):
        y = _frozen(self.y, 1)
        n = y.shape[0]
        r = _frozen(self.r, 1)
        m = _frozen(self.m, 1)
        x = _frozen(self.x, 2)
        z = _frozen(np.empty((n, 0)) if self.z is None else self.z, 2)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

        if n < 2:
            raise DataError(f"need at least 2 subjects, got {n}")
        for name, arr in (("r", r), ("m", m), ("x", x), ("z", z)):
            if arr.shape[0] != n:
                raise DataError(f"{name} has {arr.shape[0]} rows, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains missing or non-finite values")
        if not np.all(np.isfinite(y)):
            raise DataError("y contains missing or non-finite values")
        if not np.all((r == 0) | (r == 1)):
            raise NonBinaryAssignment("assignment must contain only 0 and 1")
        if r.min() == r.max():
            raise NonBinaryAssignment("assignment needs at least one subject in each arm")

        x_names = tuple(self.x_names) or tuple(f"X{j + 1}" for j in range(x.shape[1]))
        z_names = tuple(self.z_names) or tuple(f"Z{j + 1}" for j in range(z.shape[1]))
        if len(x_names) != x.shape[1] or len(z_names) != z.shape[1]:
            raise DataError("covariate names do not match covariate columns")
        if len(set(x_names)) != len(x_names) or len(set(z_names)) != len(z_names):
            raise DataError("covariate names must be unique")
        if set(x_names) & set(z_names):
            raise DataError("instrumented and non-instrumented covariate names overlap")
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "z_names", z_names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]

    @property
    def x_means(self) -> np.ndarray:
        return self.x.mean(axis=0)

    def with_outcome(self, y) -> "Dataset":
        return replace(self, y=y)

    def with_mediator(self, m) -> "Dataset":
        return replace(self, m=m)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(self, y=self.y[rows], r=self.r[rows], m=self.m[rows],
                       x=self.x[rows], z=self.z[rows], load_report=None)


@dataclass(frozen=True)
class ColumnMap:
    outcome: str
    assignment: str
    mediator: str
    x: tuple = ()
    z: tuple = ()

    @classmethod
    def coerce(cls, value) -> "ColumnMap":
        if isinstance(value, ColumnMap):
            return value
        if isinstance(value, Mapping):
            try:
                return cls(outcome=value["outcome"], assignment=value["assignment"],
                           mediator=value["mediator"], x=tuple(value.get("x", ())),
                           z=tuple(value.get("z", ())))
            except KeyError as exc:
                raise ConfigError(f"column map is missing {exc.args[0]!r}") from None
        raise ConfigError(f"cannot interpret column map {value!r}")

    def columns(self) -> list:
        return [self.outcome, self.assignment, self.mediator, *self.x, *self.z]


def _parse_cell(text):
    """Return (value, status) with status in {'ok', 'missing', 'unparseable'}."""
    token = text.strip()
    if token in MISSING_TOKENS:
        return math.nan, "missing"
    try:
        value = float(token)
    except ValueError:
        return math.nan, "unparseable"
    if not math.isfinite(value):
        return math.nan, "unparseable"
    return value, "ok"


def load_csv(path, column_map, missing_policy: str = "drop-row",
             delimiter: str = ",") -> Dataset:
    """Read a trial CSV into a complete-case :class:`Dataset`.

    Under ``missing_policy="drop-row"`` rows with an empty, ``NA`` or
    unparseable cell in any mapped column are dropped and counted in the
    attached :class:`LoadReport`; under ``"error"`` the first such cell
    raises :class:`ParseError` with its row and column.
    """
    cmap = ColumnMap.coerce(column_map)
    if missing_policy not in MISSING_POLICIES:
        raise ConfigError(f"missing_policy must be one of {MISSING_POLICIES}")
    used = cmap.columns()
    if len(set(used)) != len(used):
        raise ConfigError("a column is mapped to more than one role")

    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyAfterFiltering(f"{path} is empty") from None
        missing = [c for c in used if c not in header]
        if missing:
            raise MissingColumn(f"column(s) not found in {path}: {', '.join(missing)}")
        index = [header.index(c) for c in used]

        rows = []
        dropped = Counter()
        reasons = []
        n_read = 0
        for line_no, record in enumerate(reader, start=2):
            if not record or all(not cell.strip() for cell in record):
                continue
            n_read += 1
            values = []
            bad = None
            for col, idx in zip(used, index):
                cell = record[idx] if idx < len(record) else ""
                value, status = _parse_cell(cell)
                if status != "ok" and bad is None:
                    bad = (col, status, cell)
                values.append(value)
            if bad is not None:
                col, status, cell = bad
                if missing_policy == "error":
                    raise ParseError(f"{status} value {cell!r} at line {line_no}, column {col!r}",
                                     row=line_no, column=col)
                dropped[col] += 1
                reasons.append(f"line {line_no}: {status} {col}")
                continue
            rows.append(values)

    if not rows:
        raise EmptyAfterFiltering(f"no complete rows left in {path}")
    data = np.array(rows, dtype=np.float64)
    assignment = data[:, 1]
    if not np.all((assignment == 0) | (assignment == 1)):
        bad_vals = sorted(set(assignment[(assignment != 0) & (assignment != 1)].tolist()))
        raise NonBinaryAssignment(
            f"assignment column {cmap.assignment!r} has values outside {{0,1}}: {bad_vals[:5]}")

    report = LoadReport(rows_read=n_read, rows_kept=len(rows),
                        dropped_by_column=dict(dropped), reasons=tuple(reasons))
    logger.info(report.summary())

    p = len(cmap.x)
    return Dataset(
        y=data[:, 0], r=assignment, m=data[:, 2],
        x=data[:, 3:3 + p], z=data[:, 3 + p:],
        x_names=cmap.x, z_names=cmap.z,
        outcome_name=cmap.outcome, assignment_name=cmap.assignment,
        mediator_name=cmap.mediator, load_report=report,
    )


@dataclass(frozen=True, eq=False)
class DesignBundle:
    """Design matrices in fixed column order.

    first_stage: ``[1, R, X, Z, R*X]``
    second-stage layout: ``[1, X, Z, R, <mediator>]``
    """

    first_stage: np.ndarray
    restricted_first_stage: np.ndarray
    exogenous: np.ndarray
    x_means: np.ndarray
    first_stage_names: tuple
    second_stage_names: tuple

    @property
    def second_stage_template(self) -> tuple:
        return self.second_stage_names

    def second_stage(self, mediator) -> np.ndarray:
        return np.column_stack([self.exogenous, mediator])


def build_designs(data: Dataset) -> DesignBundle:
    n = data.n
    ones = np.ones(n)
    rx = data.r[:, None] * data.x
    restricted = np.column_stack([ones, data.r, data.x, data.z])
    first = np.column_stack([restricted, rx])
    exog = np.column_stack([ones, data.x, data.z, data.r])
    for arr in (first, restricted, exog):
        arr.setflags(write=False)
    means = data.x.mean(axis=0)
    means.setflags(write=False)
    a = data.assignment_name
    return DesignBundle(
        first_stage=first,
        restricted_first_stage=restricted,
        exogenous=exog,
        x_means=means,
        first_stage_names=("const", a, *data.x_names, *data.z_names,
                           *(f"{a}:{name}" for name in data.x_names)),
        second_stage_names=("const", *data.x_names, *data.z_names, a, data.mediator_name),
    )


def dataset_from_columns(columns: Mapping[str, Sequence[float]], column_map) -> Dataset:
    """Build a :class:`Dataset` from in-memory named columns."""
    cmap = ColumnMap.coerce(column_map)
    missing = [c for c in cmap.columns() if c not in columns]
    if missing:
        raise MissingColumn(f"column(s) not found: {', '.join(missing)}")

    def block(names):
        if not names:
            return np.empty((len(columns[cmap.outcome]), 0))
        return np.column_stack([np.asarray(columns[c], dtype=float) for c in names])

    return Dataset(y=columns[cmap.outcome], r=columns[cmap.assignment],
                   m=columns[cmap.mediator], x=block(cmap.x), z=block(cmap.z),
                   x_names=cmap.x, z_names=cmap.z, outcome_name=cmap.outcome,
                   assignment_name=cmap.assignment, mediator_name=cmap.mediator)
