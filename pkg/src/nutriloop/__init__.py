"""Closed-loop meal-level nutrition management engine."""

from .nutrients import (
    CORE_FIELDS,
    NutrientField,
    NutrientSchema,
    NutrientVector,
    load_default_schema,
    nv_add,
    nv_sub,
)
from .records import (
    DailyPlan,
    FoodItem,
    MealHabit,
    MealRecord,
    UserProfile,
    ValidationReport,
    validate_profile,
)
from .dri import (
    DriReference,
    build_default_reference,
    lookup_rda,
    merge_tables,
    normalize_units,
    parse_rda_table,
)
from .planning import (
    AdjustmentPolicy,
    Allocation,
    MealBudget,
    PlanHistory,
    adjust_targets,
    allocate_remaining,
    apply_meal,
    generate_daily_plan,
    residual_window,
)
from .store import FileStateStore

__version__ = "0.1.0"

__all__ = [
    "AdjustmentPolicy",
    "Allocation",
    "CORE_FIELDS",
    "DailyPlan",
    "DriReference",
    "FileStateStore",
    "FoodItem",
    "MealBudget",
    "MealHabit",
    "MealRecord",
    "NutrientField",
    "NutrientSchema",
    "NutrientVector",
    "PlanHistory",
    "UserProfile",
    "ValidationReport",
    "adjust_targets",
    "allocate_remaining",
    "apply_meal",
    "build_default_reference",
    "generate_daily_plan",
    "load_default_schema",
    "lookup_rda",
    "merge_tables",
    "normalize_units",
    "nv_add",
    "nv_sub",
    "parse_rda_table",
    "residual_window",
    "validate_profile",
]
