"""The two feedback loops: per-meal budget updates and per-day target adjustment.

Meal level: every logged meal is added to the day's consumed totals and the
remaining budget is recomputed as targets minus consumed (signed; negative
means overconsumption). Remaining amounts are clamped to zero only when
allocating budgets for the meals still left in the day.

Day level: when a new day's plan is generated, the mean signed residual over
the last k days moves the new targets. The residual for nutrient n on day t
is target minus achieved; with policy direction s=+1 a deficit raises the
next target. The update magnitude is proportional (gain alpha) with a
per-step and cumulative clamp expressed as a fraction of the reference
allowance, and a dead-band epsilon under which no change is made.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace

import numpy as np

from .dri import DriReference, lookup_rda
from .errors import ContractViolation, IdempotencyError, WindowError
from .nutrients import NutrientSchema, NutrientVector, nv_add, nv_sub
from .records import DailyPlan, MealRecord, UserProfile


@dataclass(frozen=True)
class AdjustmentPolicy:
    s: int = +1  # +1: deficit raises tomorrow's target (compensatory)
    k: int = 1
    alpha: float = 0.3
    clamp_frac: float = 0.15
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.s not in (+1, -1):
            raise ContractViolation("policy direction s must be +1 or -1")
        if self.k < 1:
            raise ContractViolation("window length k must be >= 1")
        if not (0.0 < self.alpha <= 1.0):
            raise ContractViolation("alpha must lie in (0, 1]")
        if not (0.0 < self.clamp_frac <= 0.5):
            raise ContractViolation("clamp_frac must lie in (0, 0.5]")
        if self.epsilon < 0.0:
            raise ContractViolation("epsilon must be non-negative")


@dataclass(frozen=True)
class PlanDay:
    date: dt.date
    targets: NutrientVector
    achieved: NutrientVector


@dataclass
class PlanHistory:
    user_id: str
    days: list[PlanDay] = field(default_factory=list)

    def append(self, day: PlanDay) -> None:
        if self.days and day.date <= self.days[-1].date:
            raise ContractViolation("history dates must be strictly increasing")
        self.days.append(day)

    def __len__(self) -> int:
        return len(self.days)

    @property
    def last_date(self) -> dt.date | None:
        return self.days[-1].date if self.days else None

    @classmethod
    def from_plans(cls, user_id: str, plans: list[DailyPlan]) -> "PlanHistory":
        history = cls(user_id)
        for plan in sorted(plans, key=lambda p: p.date):
            history.append(PlanDay(plan.date, plan.targets, plan.consumed))
        return history


@dataclass(frozen=True)
class MealBudget:
    mealtime: str
    share: NutrientVector


@dataclass(frozen=True)
class Allocation:
    budgets: tuple[MealBudget, ...]
    exhausted: bool = False


def residual_window(history: PlanHistory, nutrient: str, k: int) -> float:
    """Mean signed residual (target - achieved) over the last k days."""
    if k < 1:
        raise ContractViolation("window length k must be >= 1")
    if len(history) < k:
        raise WindowError(
            f"window of {k} days requested but history has only {len(history)}"
        )
    residuals = []
    for day in history.days[-k:]:
        target = day.targets.get(nutrient)
        achieved = day.achieved.get(nutrient)
        if target is None:
            raise WindowError(f"nutrient {nutrient!r} has no target in the window")
        residuals.append(target - (achieved if achieved is not None else 0.0))
    return float(np.mean(residuals))


def adjust_targets(
    history: PlanHistory,
    ref_targets: NutrientVector,
    policy: AdjustmentPolicy,
) -> tuple[NutrientVector, NutrientVector]:
    """Compute next-day targets and the applied per-nutrient change.

    For each unmasked nutrient: no change inside the dead-band; otherwise a
    step of sign(s*E) and magnitude min(alpha*|E|, clamp_frac*ref), applied to
    the previous day's target and bounded cumulatively to within
    clamp_frac*ref of the reference allowance.
    """
    if len(history) < policy.k:
        raise WindowError(
            f"window of {policy.k} days requested but history has only {len(history)}"
        )
    schema = ref_targets.schema
    prev = history.days[-1].targets
    new_values = np.zeros(len(schema))
    deltas = np.zeros(len(schema))
    for i, name in enumerate(schema.names):
        if not ref_targets.mask[i]:
            continue
        ref_value = float(ref_targets.values[i])
        prev_value = prev.get(name)
        if prev_value is None:
            prev_value = ref_value
        residual = residual_window(history, name, policy.k)
        if abs(residual) <= policy.epsilon:
            step = 0.0
        else:
            magnitude = min(policy.alpha * abs(residual), policy.clamp_frac * ref_value)
            step = float(np.sign(policy.s * residual)) * magnitude
        lo = (1.0 - policy.clamp_frac) * ref_value
        hi = (1.0 + policy.clamp_frac) * ref_value
        new_value = min(max(prev_value + step, lo), hi)
        new_values[i] = new_value
        deltas[i] = new_value - prev_value
    mask = ref_targets.mask.copy()
    return (
        NutrientVector(schema, new_values, mask),
        NutrientVector(schema, deltas, mask),
    )


def generate_daily_plan(
    profile: UserProfile,
    ref: DriReference,
    history: PlanHistory,
    policy: AdjustmentPolicy,
    date: dt.date,
) -> DailyPlan:
    """Start a fresh day: allowance-based targets, adjusted from history."""
    if history.last_date is not None and date <= history.last_date:
        raise ContractViolation(
            f"plan date {date} must be later than last history entry {history.last_date}"
        )
    base = lookup_rda(ref, profile.sex, profile.life_stage, profile.category_override)
    if len(history) > 0:
        # Cold start: shorten the window to the history that exists.
        effective = policy if len(history) >= policy.k else replace(policy, k=len(history))
        targets, _delta = adjust_targets(history, base, effective)
    else:
        targets = base
    consumed = NutrientVector.zeros(targets.schema)
    return DailyPlan(
        user_id=profile.user_id,
        date=date,
        targets=targets,
        consumed=consumed,
        remaining=nv_sub(targets, consumed),
        meals_logged=[],
        meals_remaining=[h.mealtime for h in profile.meal_habits],
    )


def apply_meal(plan: DailyPlan, meal: MealRecord) -> DailyPlan:
    """Fold one logged meal into the plan; returns a new plan object."""
    if meal.user_id != plan.user_id or meal.date != plan.date:
        raise ContractViolation(
            f"meal {meal.meal_id} is for {(meal.user_id, meal.date)}, "
            f"plan is for {(plan.user_id, plan.date)}"
        )
    if meal.meal_id in plan.meals_logged:
        raise IdempotencyError(f"meal {meal.meal_id} already logged for this plan")
    consumed = nv_add(plan.consumed, meal.nutrients)
    remaining = nv_sub(plan.targets, consumed)
    meals_remaining = list(plan.meals_remaining)
    if meal.mealtime in meals_remaining:
        meals_remaining.remove(meal.mealtime)
    return DailyPlan(
        user_id=plan.user_id,
        date=plan.date,
        targets=plan.targets,
        consumed=consumed,
        remaining=remaining,
        meals_logged=[*plan.meals_logged, meal.meal_id],
        meals_remaining=meals_remaining,
    )


def allocate_remaining(plan: DailyPlan, habits: dict[str, float]) -> Allocation:
    """Split the clamped remaining budget across the meals left in the day.

    Habit weights for the remaining meals are renormalized; the last meal's
    share absorbs rounding so the shares sum to the clamped remaining exactly.
    """
    if not plan.meals_remaining:
        return Allocation(budgets=(), exhausted=True)
    schema = plan.targets.schema
    clamped = plan.remaining.clamp_nonnegative()
    raw = np.array([max(habits.get(m, 0.0), 0.0) for m in plan.meals_remaining])
    total = raw.sum()
    weights = raw / total if total > 0 else np.full(len(raw), 1.0 / len(raw))

    budgets: list[MealBudget] = []
    allocated = np.zeros(len(schema))
    for i, mealtime in enumerate(plan.meals_remaining):
        if i < len(plan.meals_remaining) - 1:
            share_values = clamped.values * weights[i]
        else:
            share_values = np.maximum(clamped.values - allocated, 0.0)
        allocated = allocated + share_values
        budgets.append(
            MealBudget(mealtime, NutrientVector(schema, share_values, clamped.mask.copy()))
        )
    return Allocation(budgets=tuple(budgets), exhausted=False)
