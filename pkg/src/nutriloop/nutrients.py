"""Nutrient schema and mask-aware nutrient vectors.

The schema is loaded from a flat CSV shipped with the package (one line per
field: name, unit, group) and is the single source of truth for field order,
units and grouping. A NutrientVector pairs a value array with a presence mask;
masked-out entries are ignored by all arithmetic and metrics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping

import numpy as np

from .errors import ContractViolation

VALID_UNITS = frozenset({"kcal", "g", "mg", "mcg"})
VALID_GROUPS = frozenset({"macronutrient", "mineral", "vitamin"})

# The six fields that directly drive meal planning and feedback.
CORE_FIELDS = ("energy", "protein", "carbohydrate", "fat", "fiber", "sodium")

FIELD_COUNT = 40


@dataclass(frozen=True)
class NutrientField:
    name: str
    unit: str
    group: str


class NutrientSchema:
    """Ordered, immutable list of the 40 tracked nutrient fields."""

    def __init__(self, fields: Iterable[NutrientField]):
        self.fields = tuple(fields)
        if len(self.fields) != FIELD_COUNT:
            raise ContractViolation(
                f"schema must have exactly {FIELD_COUNT} fields, got {len(self.fields)}"
            )
        self.names = tuple(f.name for f in self.fields)
        if len(set(self.names)) != len(self.names):
            raise ContractViolation("schema field names must be unique")
        for f in self.fields:
            if f.unit not in VALID_UNITS:
                raise ContractViolation(f"field {f.name}: unknown unit {f.unit!r}")
            if f.group not in VALID_GROUPS:
                raise ContractViolation(f"field {f.name}: unknown group {f.group!r}")
        missing_core = [n for n in CORE_FIELDS if n not in self.names]
        if missing_core:
            raise ContractViolation(f"schema is missing core fields: {missing_core}")
        self._index = {name: i for i, name in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.fields)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ContractViolation(f"unknown nutrient field: {name!r}") from None

    def field(self, name: str) -> NutrientField:
        return self.fields[self.index(name)]

    def unit(self, name: str) -> str:
        return self.field(name).unit

    @property
    def core_names(self) -> tuple[str, ...]:
        return CORE_FIELDS

    @property
    def micronutrient_names(self) -> tuple[str, ...]:
        """Vitamins and minerals beyond the core set."""
        return tuple(
            f.name
            for f in self.fields
            if f.group in ("mineral", "vitamin") and f.name not in CORE_FIELDS
        )

    def names_by_unit(self, unit: str) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields if f.unit == unit)

    @classmethod
    def from_csv_text(cls, text: str) -> "NutrientSchema":
        reader = csv.DictReader(text.splitlines())
        fields = [
            NutrientField(row["name"].strip(), row["unit"].strip(), row["group"].strip())
            for row in reader
        ]
        return cls(fields)


@lru_cache(maxsize=1)
def load_default_schema() -> NutrientSchema:
    text = resources.files("nutriloop.data").joinpath("nutrient_fields.csv").read_text()
    return NutrientSchema.from_csv_text(text)


class NutrientVector:
    """40 nutrient amounts plus a per-field presence mask.

    Values of masked-out fields are stored as 0 so that equal vectors
    serialize identically. Arithmetic results may be negative (signed
    residuals); non-negativity is enforced where the domain demands it
    (meal records, reference rows, budgets), not here.
    """

    __slots__ = ("schema", "values", "mask")

    def __init__(self, schema: NutrientSchema, values: np.ndarray, mask: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if values.shape != (len(schema),) or mask.shape != (len(schema),):
            raise ContractViolation("values/mask length must match the schema")
        values = np.where(mask, values, 0.0)
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    def __setattr__(self, name, value):
        raise AttributeError("NutrientVector is immutable")

    @classmethod
    def zeros(cls, schema: NutrientSchema, present: bool = False) -> "NutrientVector":
        n = len(schema)
        return cls(schema, np.zeros(n), np.full(n, present))

    @classmethod
    def from_dict(cls, schema: NutrientSchema, amounts: Mapping[str, float]) -> "NutrientVector":
        values = np.zeros(len(schema))
        mask = np.zeros(len(schema), dtype=bool)
        for name, value in amounts.items():
            i = schema.index(name)
            values[i] = float(value)
            mask[i] = True
        return cls(schema, values, mask)

    def to_dict(self) -> dict[str, float]:
        """Present fields only, in schema order."""
        return {
            name: float(self.values[i])
            for i, name in enumerate(self.schema.names)
            if self.mask[i]
        }

    def get(self, name: str) -> float | None:
        i = self.schema.index(name)
        return float(self.values[i]) if self.mask[i] else None

    def present(self, name: str) -> bool:
        return bool(self.mask[self.schema.index(name)])

    def present_count(self) -> int:
        return int(self.mask.sum())

    def restrict(self, names: Iterable[str]) -> "NutrientVector":
        """Keep only the given fields present (intersection with current mask)."""
        keep = np.zeros(len(self.schema), dtype=bool)
        for name in names:
            keep[self.schema.index(name)] = True
        return NutrientVector(self.schema, self.values, self.mask & keep)

    def clamp_nonnegative(self) -> "NutrientVector":
        return NutrientVector(self.schema, np.maximum(self.values, 0.0), self.mask.copy())

    def scale(self, factor: float) -> "NutrientVector":
        return NutrientVector(self.schema, self.values * factor, self.mask.copy())

    def __add__(self, other: "NutrientVector") -> "NutrientVector":
        return nv_add(self, other)

    def __sub__(self, other: "NutrientVector") -> "NutrientVector":
        return nv_sub(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NutrientVector):
            return NotImplemented
        return (
            self.schema.names == other.schema.names
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return f"NutrientVector({self.to_dict()!r})"


def _check_same_schema(a: NutrientVector, b: NutrientVector) -> None:
    if a.schema.names != b.schema.names:
        raise ContractViolation("nutrient vectors use different schemas")


def nv_add(a: NutrientVector, b: NutrientVector) -> NutrientVector:
    """Field-wise sum; a field is present iff present in either operand."""
    _check_same_schema(a, b)
    mask = a.mask | b.mask
    values = np.where(a.mask, a.values, 0.0) + np.where(b.mask, b.values, 0.0)
    return NutrientVector(a.schema, values, mask)


def nv_sub(a: NutrientVector, b: NutrientVector) -> NutrientVector:
    """Field-wise a minus b; mask follows a, masked b entries count as 0.

    Results may be negative (signed residuals / overconsumption).
    """
    _check_same_schema(a, b)
    values = a.values - np.where(b.mask, b.values, 0.0)
    return NutrientVector(a.schema, values, a.mask.copy())


def nv_sum(schema: NutrientSchema, vectors: Iterable[NutrientVector]) -> NutrientVector:
    total = NutrientVector.zeros(schema)
    for v in vectors:
        total = nv_add(total, v)
    return total
