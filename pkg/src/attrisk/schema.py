"""Typed tables and synthesis plans.

Datasets are stored column-wise as numpy arrays. Categorical cells hold
1-based level codes in the order the levels were declared, counts are
``int64`` and continuous cells are ``float64``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ParseError, PlanError, PlanOrderError, PlanTypeError, SchemaError

KINDS = ("categorical", "count", "continuous")
ROLES = ("synthesized", "unsynthesized-predictor", "unused")
FAMILIES = ("normal", "poisson", "multinomial-logit")

FAMILY_ALIASES = {
    "normal": "normal",
    "norm": "normal",
    "gaussian": "normal",
    "poisson": "poisson",
    "pois": "poisson",
    "multinomial-logit": "multinomial-logit",
    "multinomial": "multinomial-logit",
    "multinom": "multinomial-logit",
    "categorical": "multinomial-logit",
}

FAMILY_KIND = {"normal": "continuous", "poisson": "count", "multinomial-logit": "categorical"}

INTERCEPT = "Intercept"


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    levels: tuple[str, ...] | None = None
    role: str | None = None

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise SchemaError(f"invalid column name {self.name!r}")
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role is not None and self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.kind == "categorical":
            if not self.levels:
                raise SchemaError(f"categorical column {self.name!r} needs a non-empty level list")
            levels = tuple(str(level) for level in self.levels)
            if len(set(levels)) != len(levels):
                raise SchemaError(f"categorical column {self.name!r} has duplicate levels")
            object.__setattr__(self, "levels", levels)
        elif self.levels is not None:
            raise SchemaError(f"column {self.name!r}: levels only apply to categorical columns")

    @property
    def n_levels(self) -> int:
        return len(self.levels) if self.levels else 0

    def to_json(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.levels is not None:
            out["levels"] = list(self.levels)
        if self.role is not None:
            out["role"] = self.role
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "ColumnSchema":
        try:
            levels = obj.get("levels")
            return cls(
                name=obj["name"],
                kind=obj["kind"],
                levels=tuple(levels) if levels is not None else None,
                role=obj.get("role"),
            )
        except KeyError as exc:
            raise SchemaError(f"column declaration missing field {exc.args[0]!r}") from None


def _coerce_column(col: ColumnSchema, values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise SchemaError(f"column {col.name!r} must be one-dimensional")
    if col.kind == "continuous":
        arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise DomainError(f"continuous value must be finite at row {bad + 1} column {col.name!r}")
        return arr
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or not np.all(arr == np.round(arr)):
            raise DomainError(f"column {col.name!r} requires integer values")
    elif arr.dtype.kind not in "iub" and arr.size:
        raise DomainError(f"column {col.name!r} requires integer values")
    arr = arr.astype(np.int64)
    if col.kind == "count":
        if arr.size and arr.min() < 0:
            bad = int(np.flatnonzero(arr < 0)[0])
            raise DomainError(f"count must be ≥ 0 at row {bad + 1} (column {col.name!r})")
    else:
        k = col.n_levels
        outside = (arr < 1) | (arr > k)
        if outside.any():
            bad = int(np.flatnonzero(outside)[0])
            raise DomainError(
                f"level code {arr[bad]} outside 1..{k} at row {bad + 1} (column {col.name!r})"
            )
    return arr


class Dataset:
    """An immutable typed table."""

    def __init__(self, columns: Sequence[ColumnSchema], data: Mapping[str, Iterable], tag: str = "confidential"):
        columns = tuple(columns)
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")
        arrays = {}
        n = None
        for col in columns:
            if col.name not in data:
                raise SchemaError(f"missing column {col.name!r}")
            arr = _coerce_column(col, data[col.name])
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise SchemaError(f"column {col.name!r} has {arr.shape[0]} cells, expected {n}")
            arr.setflags(write=False)
            arrays[col.name] = arr
        if not n:
            raise SchemaError("a dataset needs at least one column and one row")
        self.columns = columns
        self.tag = tag
        self._data = arrays
        self._by_name = {c.name: c for c in columns}

    @property
    def n(self) -> int:
        return next(iter(self._data.values())).shape[0]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def schema(self, name: str) -> ColumnSchema:
        try:
            return self._by_name[name]
        except KeyError:
            raise SchemaError(f"unknown column {name!r}") from None

    def __getitem__(self, name: str) -> np.ndarray:
        self.schema(name)
        return self._data[name]

    def __contains__(self, name: str) -> bool:
        return name in self._data

    def replace(self, tag: str | None = None, **values) -> "Dataset":
        """Return a copy with some columns replaced."""
        data = dict(self._data)
        for name, vals in values.items():
            self.schema(name)
            data[name] = vals
        return Dataset(self.columns, data, tag=self.tag if tag is None else tag)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.columns, {k: v[rows] for k, v in self._data.items()}, tag=self.tag)

    def labels(self, name: str) -> list[str]:
        col = self.schema(name)
        if col.kind != "categorical":
            raise SchemaError(f"column {name!r} is not categorical")
        return [col.levels[c - 1] for c in self._data[name]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.columns == other.columns
            and self.tag == other.tag
            and all(np.array_equal(self._data[k], other._data[k]) for k in self._data)
            and all(self._data[k].dtype == other._data[k].dtype for k in self._data)
        )

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, columns={list(self.names)}, tag={self.tag!r})"


def format_cell(col: ColumnSchema, value) -> str:
    if col.kind == "continuous":
        return format(float(value), ".17g")
    if col.kind == "categorical":
        return col.levels[int(value) - 1]
    return str(int(value))


def write_dataset(data: Dataset, path) -> None:
    """Write ``data`` as header-bearing comma separated text."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(data.names)
        cols = [(c, data[c.name]) for c in data.columns]
        for r in range(data.n):
            writer.writerow([format_cell(c, arr[r]) for c, arr in cols])


def _parse_cell(col: ColumnSchema, text: str, row: int, codes: Mapping[str, int] | None):
    cell = text.strip()
    if col.kind == "continuous":
        try:
            value = float(cell)
        except ValueError:
            raise ParseError(f"non-numeric value {text!r} at row {row} column {col.name!r}") from None
        if not math.isfinite(value):
            raise DomainError(f"continuous value must be finite at row {row} column {col.name!r}")
        return value
    if col.kind == "count":
        try:
            value = int(cell)
        except ValueError:
            raise ParseError(f"non-integer value {text!r} at row {row} column {col.name!r}") from None
        if value < 0:
            raise DomainError(f"count must be ≥ 0 at row {row} (column {col.name!r})")
        return value
    try:
        return codes[text]
    except KeyError:
        raise DomainError(f"unknown level {text!r} at row {row} column {col.name!r}") from None


def load_dataset(path, schema: Sequence[ColumnSchema], tag: str = "confidential") -> Dataset:
    """Read a header-bearing CSV file into a validated :class:`Dataset`.

    Row numbers in error messages count data rows from 1. Columns present
    in the file but absent from ``schema`` are ignored.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        positions = {}
        for col in schema:
            if col.name not in header:
                raise SchemaError(f"{path}: missing column {col.name!r}")
            positions[col.name] = header.index(col.name)
        codes = {
            c.name: {label: k + 1 for k, label in enumerate(c.levels)}
            for c in schema
            if c.kind == "categorical"
        }
        values = {c.name: [] for c in schema}
        for row, record in enumerate(reader, start=1):
            if not record:
                continue
            if len(record) != len(header):
                raise ParseError(f"{path}: row {row} has {len(record)} cells, expected {len(header)}")
            for col in schema:
                values[col.name].append(
                    _parse_cell(col, record[positions[col.name]], row, codes.get(col.name))
                )
    if not values or not next(iter(values.values())):
        raise SchemaError(f"{path}: no data rows")
    data = {}
    for col in schema:
        dtype = np.float64 if col.kind == "continuous" else np.int64
        data[col.name] = np.array(values[col.name], dtype=dtype)
    return Dataset(schema, data, tag=tag)


@dataclass(frozen=True)
class ModelSpec:
    outcome: str
    predictors: tuple[str, ...] = ()
    family: str = "normal"

    def __post_init__(self):
        family = FAMILY_ALIASES.get(str(self.family).lower())
        if family is None:
            raise PlanTypeError(f"unknown family {self.family!r} for outcome {self.outcome!r}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if self.outcome in self.predictors:
            raise PlanError(f"outcome {self.outcome!r} cannot be its own predictor")
        if len(set(self.predictors)) != len(self.predictors):
            raise PlanError(f"duplicate predictors for outcome {self.outcome!r}")

    def to_json(self) -> dict:
        return {"outcome": self.outcome, "predictors": list(self.predictors), "family": self.family}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ModelSpec":
        try:
            return cls(obj["outcome"], tuple(obj.get("predictors", ())), obj["family"])
        except KeyError as exc:
            raise PlanError(f"step declaration missing field {exc.args[0]!r}") from None

    def __str__(self) -> str:
        rhs = " + ".join(self.predictors) if self.predictors else "1"
        return f"{self.outcome} ~ {rhs}"


@dataclass(frozen=True)
class SynthesisPlan:
    steps: tuple[ModelSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)


@dataclass(frozen=True)
class ValidatedPlan:
    """A plan whose column references have been resolved against a dataset."""

    steps: tuple[ModelSpec, ...]
    columns: tuple[ColumnSchema, ...]
    synthesized: tuple[str, ...]
    _by_name: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        self._by_name.update({c.name: c for c in self.columns})

    def __len__(self) -> int:
        return len(self.steps)

    def column(self, name: str) -> ColumnSchema:
        return self._by_name[name]

    @property
    def context_columns(self) -> tuple[str, ...]:
        """Unsynthesized columns referenced as predictors, in first-use order."""
        seen = []
        for step in self.steps:
            for p in step.predictors:
                if p not in self.synthesized and p not in seen:
                    seen.append(p)
        return tuple(seen)

    def design_names(self, s: int) -> tuple[str, ...]:
        names = [INTERCEPT]
        for p in self.steps[s].predictors:
            col = self._by_name[p]
            if col.kind == "categorical":
                names.extend(f"{p}[{level}]" for level in col.levels[1:])
            else:
                names.append(p)
        return tuple(names)

    def design(self, s: int, values: Mapping[str, np.ndarray]) -> np.ndarray:
        """Design matrix of step ``s`` built from ``values``.

        ``values`` maps column names to arrays (or scalars) that broadcast to
        a common length; the result has one row per broadcast element.
        """
        step = self.steps[s]
        blocks = []
        arrays = [np.asarray(values[p]) for p in step.predictors]
        (length,) = np.broadcast_shapes((1,), *(np.shape(v) for v in values.values()))
        blocks.append(np.ones((length, 1)))
        for p, arr in zip(step.predictors, arrays):
            col = self._by_name[p]
            arr = np.broadcast_to(arr, (length,))
            if col.kind == "categorical":
                codes = np.arange(2, col.n_levels + 1)
                blocks.append((arr[:, None] == codes[None, :]).astype(np.float64))
            else:
                blocks.append(arr.astype(np.float64)[:, None])
        return np.hstack(blocks)

    def draw_names(self, s: int) -> tuple[str, ...]:
        """Parameter names expected in the draws matrix of step ``s``."""
        step = self.steps[s]
        coef = self.design_names(s)
        if step.family == "normal":
            return coef + ("sigma",)
        if step.family == "poisson":
            return coef
        k = self._by_name[step.outcome].n_levels
        return tuple(f"mu{c}_{name}" for c in range(2, k + 1) for name in coef)

    def to_json(self) -> dict:
        return {"columns": [c.to_json() for c in self.columns], "steps": [s.to_json() for s in self.steps]}


def validate_plan(plan: SynthesisPlan, data: Dataset | Sequence[ColumnSchema]) -> ValidatedPlan:
    """Check that ``plan`` is a valid sequential factorization over ``data``.

    Raises :class:`PlanOrderError` on forward references and
    :class:`PlanTypeError` when a family does not fit its outcome's kind.
    """
    columns = tuple(data.columns if isinstance(data, Dataset) else data)
    by_name = {c.name: c for c in columns}
    if not plan.steps:
        raise PlanError("a synthesis plan needs at least one step")
    outcomes = [s.outcome for s in plan.steps]
    for name in outcomes:
        if name not in by_name:
            raise SchemaError(f"plan outcome {name!r} is not a dataset column")
    if len(set(outcomes)) != len(outcomes):
        dup = next(o for o in outcomes if outcomes.count(o) > 1)
        raise PlanError(f"column {dup!r} is the outcome of more than one step")
    for s, step in enumerate(plan.steps):
        col = by_name[step.outcome]
        if FAMILY_KIND[step.family] != col.kind:
            raise PlanTypeError(
                f"step {s + 1} ({step}): family {step.family!r} requires a "
                f"{FAMILY_KIND[step.family]} outcome, {step.outcome!r} is {col.kind}"
            )
        if col.role in ("unused", "unsynthesized-predictor"):
            raise PlanError(f"step {s + 1}: outcome {step.outcome!r} is declared {col.role}")
        for p in step.predictors:
            if p not in by_name:
                raise SchemaError(f"step {s + 1}: unknown predictor {p!r}")
            if by_name[p].role == "unused":
                raise PlanError(f"step {s + 1}: predictor {p!r} is declared unused")
            if p in outcomes and outcomes.index(p) >= s:
                raise PlanOrderError(
                    f"step {s + 1} ({step}): predictor {p!r} is synthesized in a later step "
                    f"({outcomes.index(p) + 1})"
                )
    for col in columns:
        if col.role == "synthesized" and col.name not in outcomes:
            raise PlanError(f"column {col.name!r} is declared synthesized but no step produces it")
    return ValidatedPlan(steps=plan.steps, columns=columns, synthesized=tuple(outcomes))


def read_plan(path) -> tuple[list[ColumnSchema], SynthesisPlan]:
    """Read a plan document with ``columns`` and ``steps`` arrays."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SchemaError(f"plan file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or "columns" not in doc or "steps" not in doc:
        raise SchemaError(f"{path}: plan document needs 'columns' and 'steps'")
    columns = [ColumnSchema.from_json(c) for c in doc["columns"]]
    steps = [ModelSpec.from_json(s) for s in doc["steps"]]
    return columns, SynthesisPlan(tuple(steps))


def write_plan(plan: ValidatedPlan, path) -> None:
    Path(path).write_text(json.dumps(plan.to_json(), indent=2) + "\n", encoding="utf-8")
