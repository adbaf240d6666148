"""User profiles, meal records and daily plans."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import TYPE_CHECKING
from zoneinfo import ZoneInfo

from .errors import ContractViolation
from .nutrients import NutrientSchema, NutrientVector, nv_sub

if TYPE_CHECKING:
    from .dri import DriReference

SEXES = ("male", "female")
MEALTIMES = ("breakfast", "lunch", "dinner", "snack")
PLANNED_MEALTIMES = ("breakfast", "lunch", "dinner")
MEAL_SOURCES = ("image+text", "text_only", "manual")

WEIGHT_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MealHabit:
    mealtime: str
    weight: float


@dataclass
class UserProfile:
    user_id: str
    sex: str
    life_stage: str
    cuisine_frequencies: dict[str, float] = field(default_factory=dict)
    allergies: set[str] = field(default_factory=set)
    meal_habits: list[MealHabit] = field(default_factory=list)
    timezone: str = "UTC"
    # Pregnancy/lactation (and child/infant) reference rows are reachable only
    # through an explicit override; the default resolver maps sex directly.
    category_override: str | None = None

    def tzinfo(self) -> ZoneInfo:
        return ZoneInfo(self.timezone)

    def habit_weights(self) -> dict[str, float]:
        return {h.mealtime: h.weight for h in self.meal_habits}

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "sex": self.sex,
            "life_stage": self.life_stage,
            "cuisine_frequencies": dict(self.cuisine_frequencies),
            "allergies": sorted(self.allergies),
            "meal_habits": [[h.mealtime, h.weight] for h in self.meal_habits],
            "timezone": self.timezone,
            "category_override": self.category_override,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "UserProfile":
        return cls(
            user_id=doc["user_id"],
            sex=doc["sex"],
            life_stage=doc["life_stage"],
            cuisine_frequencies=dict(doc.get("cuisine_frequencies", {})),
            allergies=set(doc.get("allergies", [])),
            meal_habits=[MealHabit(m, w) for m, w in doc.get("meal_habits", [])],
            timezone=doc.get("timezone", "UTC"),
            category_override=doc.get("category_override"),
        )


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_profile(profile: UserProfile, ref: "DriReference") -> ValidationReport:
    """Check every profile invariant; an empty report means valid."""
    problems: list[str] = []
    if profile.sex not in SEXES:
        problems.append(f"unknown sex {profile.sex!r}")
    else:
        try:
            ref.resolve(profile.sex, profile.life_stage, profile.category_override)
        except Exception as exc:
            problems.append(f"no reference row for profile: {exc}")

    weights = [h.weight for h in profile.meal_habits]
    if not profile.meal_habits:
        problems.append("meal_habits is empty")
    else:
        if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
            problems.append(f"meal habit weights sum to {sum(weights)}, expected 1")
        if any(w < 0 for w in weights):
            problems.append("meal habit weights must be non-negative")
        seen = [h.mealtime for h in profile.meal_habits]
        if len(set(seen)) != len(seen):
            problems.append("duplicate mealtime in meal_habits")
        for h in profile.meal_habits:
            if h.mealtime not in PLANNED_MEALTIMES:
                problems.append(
                    f"mealtime {h.mealtime!r} cannot carry a habit weight "
                    "(snacks are unplanned intake)"
                )

    for cuisine, freq in profile.cuisine_frequencies.items():
        if not (0.0 <= freq <= 1.0):
            problems.append(f"cuisine frequency for {cuisine!r} outside [0, 1]")

    try:
        ZoneInfo(profile.timezone)
    except Exception:
        problems.append(f"unknown timezone {profile.timezone!r}")

    return ValidationReport(tuple(problems))


@dataclass(frozen=True)
class FoodItem:
    name: str
    mass_g: float
    occluded: bool = False


@dataclass
class MealRecord:
    meal_id: str
    user_id: str
    date: dt.date
    mealtime: str
    timestamp: dt.datetime
    items: list[FoodItem]
    nutrients: NutrientVector
    source: str
    confidence: float | None = None

    def validate(self, tz: ZoneInfo | None = None) -> None:
        if self.mealtime not in MEALTIMES:
            raise ContractViolation(f"unknown mealtime {self.mealtime!r}")
        if self.source not in MEAL_SOURCES:
            raise ContractViolation(f"unknown meal source {self.source!r}")
        if self.source in ("image+text", "text_only"):
            if self.confidence is None:
                raise ContractViolation("model-estimated meals must carry a confidence")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ContractViolation("confidence must lie in [0, 1]")
        if (self.nutrients.values[self.nutrients.mask] < 0).any():
            raise ContractViolation("meal nutrient amounts must be non-negative")
        if tz is not None and self.timestamp.tzinfo is not None:
            if self.timestamp.astimezone(tz).date() != self.date:
                raise ContractViolation(
                    f"timestamp {self.timestamp.isoformat()} does not fall on "
                    f"{self.date.isoformat()} in timezone {tz.key}"
                )

    def to_dict(self) -> dict:
        return {
            "meal_id": self.meal_id,
            "user_id": self.user_id,
            "date": self.date.isoformat(),
            "mealtime": self.mealtime,
            "timestamp": self.timestamp.isoformat(),
            "items": [[i.name, i.mass_g, i.occluded] for i in self.items],
            "nutrients": self.nutrients.to_dict(),
            "source": self.source,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, schema: NutrientSchema, doc: dict) -> "MealRecord":
        return cls(
            meal_id=doc["meal_id"],
            user_id=doc["user_id"],
            date=dt.date.fromisoformat(doc["date"]),
            mealtime=doc["mealtime"],
            timestamp=dt.datetime.fromisoformat(doc["timestamp"]),
            items=[FoodItem(n, m, bool(o)) for n, m, o in doc.get("items", [])],
            nutrients=NutrientVector.from_dict(schema, doc.get("nutrients", {})),
            source=doc["source"],
            confidence=doc.get("confidence"),
        )


@dataclass
class DailyPlan:
    user_id: str
    date: dt.date
    targets: NutrientVector
    consumed: NutrientVector
    remaining: NutrientVector
    meals_logged: list[str] = field(default_factory=list)
    meals_remaining: list[str] = field(default_factory=list)

    def identity_holds(self) -> bool:
        """remaining == targets - consumed over the target mask, exactly."""
        return self.remaining == nv_sub(self.targets, self.consumed)

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "date": self.date.isoformat(),
            "targets": self.targets.to_dict(),
            "consumed": self.consumed.to_dict(),
            "remaining": self.remaining.to_dict(),
            "meals_logged": list(self.meals_logged),
            "meals_remaining": list(self.meals_remaining),
        }

    @classmethod
    def from_dict(cls, schema: NutrientSchema, doc: dict) -> "DailyPlan":
        return cls(
            user_id=doc["user_id"],
            date=dt.date.fromisoformat(doc["date"]),
            targets=NutrientVector.from_dict(schema, doc["targets"]),
            consumed=NutrientVector.from_dict(schema, doc["consumed"]),
            remaining=NutrientVector.from_dict(schema, doc["remaining"]),
            meals_logged=list(doc.get("meals_logged", [])),
            meals_remaining=list(doc.get("meals_remaining", [])),
        )
