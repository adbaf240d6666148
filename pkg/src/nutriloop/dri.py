"""Reference-intake table ingestion.

Parses the three daily-allowance source tables (minerals, vitamins,
macronutrients), cleans the numeric cells, converts units to the schema's
canonical units, and full-outer-joins the tables into one reference keyed by
(category, life stage). The merged reference is persisted as a flat CSV so
the join stays inspectable and diffable.

Cell cleaning rules: footnote markers (``*``, daggers), thousands separators
and parenthesized range annotations are stripped; placeholder cells (``ND``,
``NA``, dashes, empty) become missing values. Life-stage labels are
canonicalized (trimmed, unicode dashes to ASCII hyphen, whitespace collapsed)
so the three tables share one key space.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import (
    ConfigurationError,
    IntegrityError,
    RdaParseError,
    ReferenceLookupError,
)
from .nutrients import NutrientSchema, NutrientVector, load_default_schema

CATEGORIES = ("infants", "children", "males", "females", "pregnancy", "lactation")
TABLE_KINDS = ("minerals", "vitamins", "macronutrients")

_SEX_TO_CATEGORY = {"male": "males", "female": "females"}

_DASHES = "‐‑‒–—−"
_FOOTNOTE_MARKS = "*†‡§"
_PLACEHOLDERS = {"", "nd", "na", "n/a", "-", "--", "—"}

_HEADER_UNIT_RE = re.compile(r"^(?P<label>.*?)\s*\(\s*(?P<unit>kcal|g|mg|mcg)\s*/\s*d\s*\)\s*$", re.I)
_PAREN_RE = re.compile(r"\([^)]*\)")


def canonicalize_label(text: str) -> str:
    """Trim, map unicode dashes to '-', collapse internal whitespace."""
    out = text.strip()
    for ch in _DASHES:
        out = out.replace(ch, "-")
    out = re.sub(r"\s+", " ", out)
    return out


def clean_numeric_cell(cell: str) -> Decimal | None:
    """Apply the cleaning rules; returns None for placeholder cells."""
    text = _PAREN_RE.sub("", cell)
    for ch in _FOOTNOTE_MARKS:
        text = text.replace(ch, "")
    text = text.replace(",", "").strip()
    if text.lower() in _PLACEHOLDERS:
        return None
    try:
        return Decimal(text)
    except InvalidOperation:
        raise ValueError(f"cannot clean numeric cell {cell!r}")


def format_decimal(d: Decimal) -> str:
    s = format(d, "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return s


@dataclass
class RawRdaTable:
    """One parsed source table; values are cleaned Decimals or None."""

    kind: str
    columns: list[tuple[str, str]]  # (label, unit) per nutrient column
    keys: list[tuple[str, str]]  # (category, life_stage)
    values: list[list[Decimal | None]]

    def row(self, key: tuple[str, str]) -> list[Decimal | None]:
        return self.values[self.keys.index(key)]


def parse_rda_table(raw_text: str | bytes, kind: str) -> RawRdaTable:
    """Parse one comma-separated source table into cleaned rows."""
    if kind not in TABLE_KINDS:
        raise ConfigurationError(f"unknown table kind {kind!r}")
    if isinstance(raw_text, bytes):
        raw_text = raw_text.decode("utf-8")
    reader = csv.reader(io.StringIO(raw_text))
    try:
        header = next(reader)
    except StopIteration:
        raise RdaParseError("empty table", line=1) from None

    if len(header) < 3:
        raise RdaParseError("header must have key columns plus nutrient columns", line=1)
    if "categ" not in header[0].lower() or not any(
        word in header[1].lower() for word in ("life", "stage")
    ):
        raise RdaParseError(
            f"expected 'Category','Life Stage' key columns, got {header[:2]!r}", line=1
        )

    columns: list[tuple[str, str]] = []
    for col in header[2:]:
        m = _HEADER_UNIT_RE.match(col.strip())
        if not m:
            raise RdaParseError(f"nutrient column {col!r} lacks a '(unit/d)' suffix", line=1)
        label = canonicalize_label(m.group("label")).lower()
        columns.append((label, m.group("unit").lower()))

    keys: list[tuple[str, str]] = []
    values: list[list[Decimal | None]] = []
    seen: set[tuple[str, str]] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise RdaParseError(
                f"row has {len(row)} cells, header has {len(header)}", line=lineno
            )
        category = canonicalize_label(row[0]).lower()
        if category not in CATEGORIES:
            raise RdaParseError(f"unknown category {row[0]!r}", line=lineno)
        stage = canonicalize_label(row[1])
        key = (category, stage)
        if key in seen:
            raise IntegrityError(f"duplicate key {key} in {kind} table (line {lineno})")
        seen.add(key)
        cleaned: list[Decimal | None] = []
        for col_idx, cell in enumerate(row[2:]):
            try:
                cleaned.append(clean_numeric_cell(cell))
            except ValueError as exc:
                raise RdaParseError(str(exc), line=lineno) from None
        keys.append(key)
        values.append(cleaned)

    return RawRdaTable(kind=kind, columns=columns, keys=keys, values=values)


_UNIT_EXPONENT = {"g": 0, "mg": -3, "mcg": -6}


class CanonicalUnitsTable:
    """Maps source column labels to schema fields with audited conversion factors."""

    def __init__(self, rows: list[tuple[str, str, str, Decimal]], schema: NutrientSchema):
        self.by_label: dict[str, tuple[str, str, Decimal]] = {}
        for label, field_name, source_unit, factor in rows:
            if field_name not in schema:
                raise ConfigurationError(f"units table maps {label!r} to unknown field {field_name!r}")
            schema_unit = schema.unit(field_name)
            if source_unit == "kcal" or schema_unit == "kcal":
                expected = Decimal(1) if source_unit == schema_unit else None
            else:
                try:
                    exp = _UNIT_EXPONENT[source_unit] - _UNIT_EXPONENT[schema_unit]
                except KeyError:
                    raise ConfigurationError(f"unsupported unit on column {label!r}") from None
                expected = Decimal(10) ** exp
            if expected is None or factor != expected:
                raise ConfigurationError(
                    f"column {label!r}: factor {factor} inconsistent with "
                    f"{source_unit}->{schema_unit}"
                )
            self.by_label[label] = (field_name, source_unit, factor)

    @classmethod
    def from_csv_text(cls, text: str, schema: NutrientSchema) -> "CanonicalUnitsTable":
        reader = csv.DictReader(io.StringIO(text))
        rows = [
            (
                row["column_label"].strip().lower(),
                row["field"].strip(),
                row["source_unit"].strip().lower(),
                Decimal(row["factor"].strip()),
            )
            for row in reader
        ]
        return cls(rows, schema)


@lru_cache(maxsize=1)
def load_default_units_table() -> CanonicalUnitsTable:
    text = resources.files("nutriloop.data").joinpath("dri_column_units.csv").read_text()
    return CanonicalUnitsTable.from_csv_text(text, load_default_schema())


def normalize_units(table: RawRdaTable, units: CanonicalUnitsTable) -> RawRdaTable:
    """Convert every nutrient column into its schema unit."""
    schema = load_default_schema()
    new_columns: list[tuple[str, str]] = []
    factors: list[Decimal] = []
    for label, source_unit in table.columns:
        entry = units.by_label.get(label)
        if entry is None:
            raise ConfigurationError(f"column {label!r} missing from the canonical units table")
        field_name, expected_unit, factor = entry
        if source_unit != expected_unit:
            raise ConfigurationError(
                f"column {label!r} is in {source_unit}, units table expects {expected_unit}"
            )
        new_columns.append((field_name, schema.unit(field_name)))
        factors.append(factor)
    new_values = [
        [None if v is None else v * factors[i] for i, v in enumerate(row)]
        for row in table.values
    ]
    return RawRdaTable(kind=table.kind, columns=new_columns, keys=list(table.keys), values=new_values)


class DriReference:
    """Merged daily-allowance reference: one row per (category, life stage)."""

    def __init__(self, schema: NutrientSchema, rows: dict[tuple[str, str], dict[str, Decimal]]):
        self.schema = schema
        self.rows = rows

    def __len__(self) -> int:
        return len(self.rows)

    def keys(self) -> list[tuple[str, str]]:
        return list(self.rows.keys())

    def stages(self, category: str) -> list[str]:
        return [stage for cat, stage in self.rows if cat == category]

    def vector(self, key: tuple[str, str]) -> NutrientVector:
        try:
            row = self.rows[key]
        except KeyError:
            raise ReferenceLookupError(f"no reference row for {key}") from None
        return NutrientVector.from_dict(
            self.schema, {name: float(v) for name, v in row.items()}
        )

    def resolve(
        self, sex: str, life_stage: str, category_override: str | None = None
    ) -> tuple[str, str]:
        """Resolve a profile to exactly one reference key."""
        if category_override is not None:
            if category_override not in CATEGORIES:
                raise ReferenceLookupError(f"unknown category override {category_override!r}")
            category = category_override
        else:
            try:
                category = _SEX_TO_CATEGORY[sex]
            except KeyError:
                raise ReferenceLookupError(f"unknown sex {sex!r}") from None
        stage = canonicalize_label(life_stage)
        if (category, stage) in self.rows:
            return (category, stage)
        candidates = [s for s in self.stages(category) if s.startswith(stage)]
        if len(candidates) == 1:
            return (category, candidates[0])
        if not candidates:
            raise ReferenceLookupError(f"no life stage matching {life_stage!r} in {category!r}")
        raise ReferenceLookupError(
            f"ambiguous life stage {life_stage!r} in {category!r}: matches {candidates}"
        )


def merge_tables(
    minerals: RawRdaTable, vitamins: RawRdaTable, macros: RawRdaTable
) -> DriReference:
    """Full outer join across (category, life stage); no value is invented."""
    schema = load_default_schema()
    merged: dict[tuple[str, str], dict[str, Decimal]] = {}
    for table in (minerals, vitamins, macros):
        for key, row_values in zip(table.keys, table.values):
            row = merged.setdefault(key, {})
            for (field_name, _unit), value in zip(table.columns, row_values):
                if value is None:
                    continue
                if field_name in row and row[field_name] != value:
                    raise IntegrityError(
                        f"conflicting values for {key}/{field_name}: "
                        f"{row[field_name]} vs {value}"
                    )
                row[field_name] = value
    return DriReference(schema, merged)


def lookup_rda(
    ref: DriReference, sex: str, life_stage: str, category_override: str | None = None
) -> NutrientVector:
    """Return the daily-allowance row for a (sex, life stage) as a vector."""
    return ref.vector(ref.resolve(sex, life_stage, category_override))


def save_reference(ref: DriReference, path: str | Path) -> None:
    """Persist the merged reference as one flat CSV row per key, schema order."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["category", "life_stage", *ref.schema.names])
    for (category, stage), row in ref.rows.items():
        cells = [category, stage]
        for name in ref.schema.names:
            value = row.get(name)
            cells.append("" if value is None else format_decimal(value))
        writer.writerow(cells)
    path.write_text(buf.getvalue())


def load_reference(path: str | Path, schema: NutrientSchema | None = None) -> DriReference:
    schema = schema or load_default_schema()
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header[:2] != ["category", "life_stage"] or tuple(header[2:]) != schema.names:
        raise IntegrityError("merged reference header does not match the schema")
    rows: dict[tuple[str, str], dict[str, Decimal]] = {}
    for row in reader:
        key = (row[0], row[1])
        if key in rows:
            raise IntegrityError(f"duplicate key {key} in merged reference")
        rows[key] = {
            name: Decimal(cell) for name, cell in zip(schema.names, row[2:]) if cell != ""
        }
    return DriReference(schema, rows)


def _read_packaged(name: str) -> str:
    return resources.files("nutriloop.data").joinpath(name).read_text()


@lru_cache(maxsize=1)
def build_default_reference() -> DriReference:
    """Parse, normalize and merge the packaged source tables."""
    units = load_default_units_table()
    tables = []
    for kind, fname in (
        ("minerals", "dri/minerals.csv"),
        ("vitamins", "dri/vitamins.csv"),
        ("macronutrients", "dri/macronutrients.csv"),
    ):
        tables.append(normalize_units(parse_rda_table(_read_packaged(fname), kind), units))
    return merge_tables(*tables)


def build_reference_from_paths(
    minerals_path: str | Path,
    vitamins_path: str | Path,
    macros_path: str | Path,
    units: CanonicalUnitsTable | None = None,
) -> DriReference:
    units = units or load_default_units_table()
    minerals = normalize_units(parse_rda_table(Path(minerals_path).read_text(), "minerals"), units)
    vitamins = normalize_units(parse_rda_table(Path(vitamins_path).read_text(), "vitamins"), units)
    macros = normalize_units(
        parse_rda_table(Path(macros_path).read_text(), "macronutrients"), units
    )
    return merge_tables(minerals, vitamins, macros)
