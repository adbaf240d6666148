"""Four-role pipeline: controller, vision, file and dialog duties.

The controller classifies each incoming message with a deterministic rule
cascade, picks the canonical minimal workflow for that class from a committed
policy table, and dispatches the steps to the worker roles. General and light
nutrition questions are answered directly with zero worker invocations.
Every worker invocation lands in a timestamped trace; plan-optimality and
latency are computed from these traces.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .backends import (
    _KNOWLEDGE_SNIPPETS,
    MealAnalysis,
    backend_analyze_image,
    backend_complete_text,
)
from .dri import DriReference
from .errors import (
    ConfigurationError,
    ContractViolation,
    IdempotencyError,
    IntegrityError,
    NotFoundError,
    TransportError,
)
from .nutrients import NutrientVector
from .planning import (
    AdjustmentPolicy,
    MealBudget,
    PlanHistory,
    allocate_remaining,
    apply_meal,
    generate_daily_plan,
)
from .records import DailyPlan, MealRecord, UserProfile
from .store import FileStateStore

WORKER_ROLES = ("vision", "file", "dialog")

DEFAULT_CONFIDENCE_THRESHOLD = 0.5


class RequestClass(str, Enum):
    GENERAL_QUESTION = "general_question"
    LIGHT_NUTRITION_QUESTION = "light_nutrition_question"
    MEAL_LOG = "meal_log"
    NEXT_MEAL_RECOMMENDATION = "next_meal_recommendation"
    MEAL_LOG_AND_RECOMMEND = "meal_log_and_recommend"
    PLAN_STATUS_QUERY = "plan_status_query"


DIRECT_CLASSES = (RequestClass.GENERAL_QUESTION, RequestClass.LIGHT_NUTRITION_QUESTION)


@dataclass
class AgentMessage:
    user_id: str
    date: dt.date
    mealtime: str = "lunch"
    meal_id: str | None = None
    text: str | None = None
    image_ref: str | None = None
    received_at: dt.datetime = field(default_factory=lambda: dt.datetime.now(dt.timezone.utc))

    def validate(self) -> None:
        if not self.text and not self.image_ref:
            raise ContractViolation("message must carry text or an image reference")

    def resolved_meal_id(self) -> str:
        """Content-derived default so re-submissions of the same meal collide."""
        if self.meal_id:
            return self.meal_id
        digest = hashlib.sha256(
            "|".join(
                [self.user_id, self.date.isoformat(), self.mealtime,
                 self.image_ref or "", self.text or ""]
            ).encode()
        ).hexdigest()
        return f"meal-{digest[:12]}"


_RECOMMEND_PATTERNS = (
    "what should i eat", "what should i have", "recommend", "suggest",
    "next meal", "meal idea", "what to eat", "what do i eat",
)
_LOG_PATTERNS = (
    "log my", "log this", "log a ", "i ate", "i had", "just ate", "just had",
    "ate a", "had a", "finished my",
)
_STATUS_PATTERNS = (
    "how am i doing", "plan status", "remaining", "progress", "left today",
    "how much", "my plan", "my targets", "status",
)
_NUTRITION_TOPICS = (
    "vitamin", "protein", "carb", "fiber", "fibre", "mineral", "nutrient",
    "calorie", "iron", "sodium", "calcium", "zinc", "nutrition", "folate",
)


_TYPICAL_MEALTIME_CLOCK = {
    "breakfast": dt.time(8, 0),
    "lunch": dt.time(12, 30),
    "dinner": dt.time(19, 0),
    "snack": dt.time(16, 0),
}


def _record_timestamp(msg: AgentMessage, tz) -> dt.datetime:
    """Receipt time when it falls on the meal's date; typical mealtime otherwise.

    Backfilled entries (yesterday's forgotten dinner) still get a timestamp
    that lies on the logged date in the user's timezone.
    """
    received = msg.received_at
    if received.tzinfo is not None and received.astimezone(tz).date() == msg.date:
        return received
    clock = _TYPICAL_MEALTIME_CLOCK.get(msg.mealtime, dt.time(12, 0))
    return dt.datetime.combine(msg.date, clock, tzinfo=tz)


def classify_request(msg: AgentMessage) -> RequestClass:
    """Deterministic intake classification over message shape and keywords."""
    msg.validate()
    text = (msg.text or "").lower()
    wants_advice = any(p in text for p in _RECOMMEND_PATTERNS)
    wants_log = any(p in text for p in _LOG_PATTERNS)
    if msg.image_ref:
        return RequestClass.MEAL_LOG_AND_RECOMMEND if wants_advice else RequestClass.MEAL_LOG
    if wants_log and wants_advice:
        return RequestClass.MEAL_LOG_AND_RECOMMEND
    if wants_log:
        return RequestClass.MEAL_LOG
    if wants_advice:
        return RequestClass.NEXT_MEAL_RECOMMENDATION
    if any(p in text for p in _STATUS_PATTERNS):
        return RequestClass.PLAN_STATUS_QUERY
    if any(p in text for p in _NUTRITION_TOPICS):
        return RequestClass.LIGHT_NUTRITION_QUESTION
    return RequestClass.GENERAL_QUESTION


@dataclass(frozen=True)
class WorkflowStep:
    role: str
    action: str


@dataclass(frozen=True)
class Workflow:
    request_class: RequestClass
    steps: tuple[WorkflowStep, ...]

    def __post_init__(self):
        for step in self.steps:
            if step.role not in WORKER_ROLES:
                raise ContractViolation(f"unknown worker role {step.role!r}")
        if self.request_class not in DIRECT_CLASSES and not self.steps:
            raise ContractViolation(
                f"class {self.request_class.value} requires a non-empty workflow"
            )


class WorkflowPolicyTable:
    """Committed mapping: request class -> canonical minimal workflow and s*."""

    def __init__(self, entries: dict[str, dict]):
        self._workflows: dict[RequestClass, Workflow] = {}
        self._min_steps: dict[RequestClass, int] = {}
        for name, entry in entries.items():
            cls = RequestClass(name)
            steps = tuple(WorkflowStep(role, action) for role, action in entry["steps"])
            declared = int(entry["min_steps"])
            if declared != len(steps):
                raise ConfigurationError(
                    f"policy table for {name}: min_steps {declared} != {len(steps)} steps"
                )
            self._workflows[cls] = Workflow(cls, steps)
            self._min_steps[cls] = declared

    @classmethod
    def load(cls, path: str | Path | None = None) -> "WorkflowPolicyTable":
        if path is None:
            text = resources.files("nutriloop.data").joinpath("workflow_policy.json").read_text()
        else:
            text = Path(path).read_text()
        return cls(json.loads(text))

    def workflow(self, request_class: RequestClass) -> Workflow:
        try:
            return self._workflows[request_class]
        except KeyError:
            raise ConfigurationError(
                f"no workflow policy for class {request_class.value!r}"
            ) from None

    def min_steps(self, request_class: RequestClass) -> int:
        try:
            return self._min_steps[request_class]
        except KeyError:
            raise ConfigurationError(
                f"no workflow policy for class {request_class.value!r}"
            ) from None


@lru_cache(maxsize=1)
def load_default_policy_table() -> WorkflowPolicyTable:
    return WorkflowPolicyTable.load()


def plan_workflow(request_class: RequestClass, policy_table: WorkflowPolicyTable) -> Workflow:
    return policy_table.workflow(request_class)


@dataclass
class TraceStep:
    role: str
    action: str
    started_at: float
    finished_at: float
    ok: bool = True
    error: str | None = None


@dataclass
class WorkflowTrace:
    request_class: RequestClass
    steps: list[TraceStep] = field(default_factory=list)
    tau_in: float | None = None
    tau_out: float | None = None

    @property
    def executed_count(self) -> int:
        return len(self.steps)

    @property
    def failed(self) -> bool:
        return any(not s.ok for s in self.steps)

    def to_dict(self) -> dict:
        return {
            "request_class": self.request_class.value,
            "steps": [
                {"role": s.role, "action": s.action, "started_at": s.started_at,
                 "finished_at": s.finished_at, "ok": s.ok, "error": s.error}
                for s in self.steps
            ],
            "tau_in": self.tau_in,
            "tau_out": self.tau_out,
            "executed_count": self.executed_count,
        }


@dataclass
class VisionResult:
    analysis: MealAnalysis | None
    source: str | None  # image+text | text_only
    clarification: str | None = None

    @property
    def needs_clarification(self) -> bool:
        return self.clarification is not None


def vision_analyze(msg: AgentMessage, backend,
                   confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD) -> VisionResult:
    """Image analysis with text-only fallback and a clarification outcome.

    The prompt context passed to the backend always includes the user's note
    so any mentioned reference object (fork, coin, hand) anchors the scale.
    """
    msg.validate()
    if msg.image_ref:
        analysis = backend_analyze_image(backend, msg.image_ref, prompt_context=msg.text or "")
        if analysis.confidence >= confidence_threshold:
            return VisionResult(analysis=analysis, source="image+text")
    if msg.text:
        estimate = backend.estimate_from_text(msg.text)
        if estimate is not None and estimate.confidence >= confidence_threshold:
            return VisionResult(analysis=estimate, source="text_only")
    return VisionResult(
        analysis=None,
        source=None,
        clarification=(
            "I could not identify the meal with enough confidence. Could you "
            "describe what you ate and roughly how much, or retake the photo "
            "with a common object (fork, coin) next to the food for scale?"
        ),
    )


@dataclass(frozen=True)
class CatalogItem:
    name: str
    cuisine: str
    allergens: frozenset[str]
    portion_g: float
    nutrients: dict[str, float]


class FoodCatalog:
    def __init__(self, items: list[CatalogItem]):
        self.items = list(items)
        self._by_name = {i.name: i for i in self.items}

    def __len__(self) -> int:
        return len(self.items)

    def get(self, name: str) -> CatalogItem:
        return self._by_name[name]

    @classmethod
    def load(cls, path: str | Path | None = None) -> "FoodCatalog":
        if path is None:
            text = resources.files("nutriloop.data").joinpath("food_catalog.json").read_text()
        else:
            text = Path(path).read_text()
        items = [
            CatalogItem(
                name=doc["name"],
                cuisine=doc["cuisine"],
                allergens=frozenset(doc.get("allergens", [])),
                portion_g=float(doc["portion_g"]),
                nutrients={k: float(v) for k, v in doc["nutrients"].items()},
            )
            for doc in json.loads(text)
        ]
        return cls(items)


@lru_cache(maxsize=1)
def load_default_catalog() -> FoodCatalog:
    return FoodCatalog.load()


@dataclass
class RecommendedPortion:
    name: str
    cuisine: str
    portion_g: float
    portion_scale: float
    nutrients: dict[str, float]


@dataclass
class Recommendation:
    mealtime: str | None
    items: list[RecommendedPortion]
    conservative: bool
    note: str

    def to_dict(self) -> dict:
        return {
            "mealtime": self.mealtime,
            "items": [
                {"name": i.name, "cuisine": i.cuisine, "portion_g": round(i.portion_g, 1),
                 "portion_scale": round(i.portion_scale, 4), "nutrients": i.nutrients}
                for i in self.items
            ],
            "conservative": self.conservative,
            "note": self.note,
        }


MIN_PORTION_SCALE = 0.2
MAX_RECOMMENDED_ITEMS = 3


def dialog_recommend(plan: DailyPlan, budgets: list[MealBudget], profile: UserProfile,
                     catalog: FoodCatalog, backend) -> Recommendation:
    """Pick foods and portions that best fill the next meal's budget.

    Candidates containing any profile allergen are removed before ranking;
    the backend only ever sees safe candidates. Portions are scaled greedily
    against the remaining meal budget so the recommended totals never exceed
    it on any core nutrient.
    """
    if not budgets:
        raise ContractViolation("dialog_recommend requires at least one meal budget")
    budget = budgets[0]
    schema = plan.targets.schema
    safe = [item for item in catalog.items if not (item.allergens & profile.allergies)]
    if not safe:
        return Recommendation(
            mealtime=budget.mealtime, items=[], conservative=True,
            note="no safe candidates: every catalog item conflicts with an allergy",
        )

    core_budget = {
        name: value
        for name in schema.core_names
        if (value := budget.share.get(name)) is not None and value > 0.0
    }
    sparse_data = not plan.meals_logged

    payload = {
        "kind": "rank_candidates",
        "budget": core_budget,
        "cuisine_frequencies": profile.cuisine_frequencies,
        "candidates": [
            {"name": i.name, "cuisine": i.cuisine, "nutrients": i.nutrients}
            for i in safe
        ],
    }
    ranking = json.loads(backend_complete_text(backend, json.dumps(payload)))["ranking"]

    if not core_budget:
        # Targets met (or exceeded): named light options only, nothing counted.
        light = sorted(
            ranking, key=lambda n: (catalog.get(n).nutrients.get("energy", 0.0), n)
        )
        suggestions = [
            RecommendedPortion(catalog.get(n).name, catalog.get(n).cuisine, 0.0, 0.0, {})
            for n in light[:MAX_RECOMMENDED_ITEMS]
        ]
        return Recommendation(
            mealtime=budget.mealtime, items=suggestions, conservative=True,
            note=(
                "Today's targets are already met; if hungry, keep it light - "
                "these are low-impact options."
            ),
        )

    picks: list[RecommendedPortion] = []
    residual = dict(core_budget)
    for name in ranking:
        if len(picks) >= MAX_RECOMMENDED_ITEMS:
            break
        item = catalog.get(name)
        limits = [
            residual[n] / item.nutrients[n]
            for n in residual
            if item.nutrients.get(n, 0.0) > 0.0
        ]
        scale = min(1.0, min(limits)) if limits else 1.0
        if scale < MIN_PORTION_SCALE:
            continue
        scaled = {k: v * scale for k, v in item.nutrients.items()}
        for n in residual:
            residual[n] = max(residual[n] - scaled.get(n, 0.0), 0.0)
        picks.append(
            RecommendedPortion(
                name=item.name, cuisine=item.cuisine,
                portion_g=item.portion_g * scale, portion_scale=scale,
                nutrients=scaled,
            )
        )

    note = "Portions sized to the remaining budget for this meal."
    if sparse_data:
        note = "Few meals logged yet, so this is a conservative suggestion. " + note
    return Recommendation(
        mealtime=budget.mealtime, items=picks,
        conservative=sparse_data or not picks, note=note,
    )


def direct_answer(text: str) -> str:
    """Controller-level answer for general and light nutrition questions."""
    lowered = text.lower()
    for topic, blurb in _KNOWLEDGE_SNIPPETS.items():
        if topic in lowered:
            return blurb
    return (
        "I can help with meal logging, plan status and next-meal ideas. "
        "Ask about a nutrient, or send a meal photo with a short note."
    )


@dataclass
class WorkflowResult:
    ok: bool
    payload: dict
    error_code: str | None = None
    retriable: bool = False


class Orchestrator:
    """Controller-side execution engine binding workers to real resources."""

    def __init__(self, store: FileStateStore, ref: DriReference, backends: dict[str, object],
                 policy_table: WorkflowPolicyTable, catalog: FoodCatalog,
                 adjustment: AdjustmentPolicy | None = None,
                 confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD):
        self.store = store
        self.ref = ref
        self.backends = backends
        self.policy_table = policy_table
        self.catalog = catalog
        self.adjustment = adjustment or AdjustmentPolicy()
        self.confidence_threshold = confidence_threshold
        self._user_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)

    # -- plan lifecycle ------------------------------------------------------

    def ensure_plan(self, user_id: str, date: dt.date) -> DailyPlan:
        """Return the day's plan, generating it on first touch of a new day."""
        if self.store.has_plan(user_id, date):
            return self.store.read_plan(user_id, date)
        profile = self.store.read_profile(user_id)
        existing = self.store.list_plan_dates(user_id)
        if any(d >= date for d in existing):
            raise NotFoundError(
                f"no plan for {user_id!r} on {date.isoformat()} (not a new day)"
            )
        history = PlanHistory.from_plans(
            user_id, [self.store.read_plan(user_id, d) for d in existing]
        )
        plan = generate_daily_plan(profile, self.ref, history, self.adjustment, date)
        self.store.update_plan_status(plan)
        return plan

    # -- message entry point ---------------------------------------------------

    def handle_message(self, msg: AgentMessage, tau_in: float | None = None,
                       workflow: Workflow | None = None) -> tuple[WorkflowResult, WorkflowTrace]:
        tau_in = time.perf_counter() if tau_in is None else tau_in
        request_class = classify_request(msg)
        if request_class in DIRECT_CLASSES:
            trace = WorkflowTrace(request_class=request_class, tau_in=tau_in)
            result = WorkflowResult(ok=True, payload={"text": direct_answer(msg.text or "")})
            trace.tau_out = time.perf_counter()
            return result, trace
        if workflow is not None:
            with self._user_locks[msg.user_id]:
                return self.execute_workflow(workflow, msg, tau_in=tau_in)
        return self.run_class(request_class, msg, tau_in=tau_in)

    def run_class(self, request_class: RequestClass, msg: AgentMessage,
                  tau_in: float | None = None) -> tuple[WorkflowResult, WorkflowTrace]:
        """Execute the canonical workflow for a known request class."""
        tau_in = time.perf_counter() if tau_in is None else tau_in
        wf = plan_workflow(request_class, self.policy_table)
        with self._user_locks[msg.user_id]:
            return self.execute_workflow(wf, msg, tau_in=tau_in)

    # -- workflow execution ---------------------------------------------------

    def execute_workflow(self, workflow: Workflow, msg: AgentMessage,
                         tau_in: float | None = None) -> tuple[WorkflowResult, WorkflowTrace]:
        trace = WorkflowTrace(
            request_class=workflow.request_class,
            tau_in=time.perf_counter() if tau_in is None else tau_in,
        )
        scratch: dict[str, object] = {}
        result: WorkflowResult | None = None
        for step in workflow.steps:
            started = time.perf_counter()
            try:
                outcome = self._run_step(step, msg, scratch)
            except TransportError as exc:
                if exc.retriable:
                    try:
                        outcome = self._run_step(step, msg, scratch)
                    except TransportError as retry_exc:
                        trace.steps.append(TraceStep(step.role, step.action, started,
                                                     time.perf_counter(), ok=False,
                                                     error=str(retry_exc)))
                        result = WorkflowResult(ok=False, payload={},
                                                error_code="backend_failure", retriable=True)
                        break
                else:
                    trace.steps.append(TraceStep(step.role, step.action, started,
                                                 time.perf_counter(), ok=False, error=str(exc)))
                    result = WorkflowResult(ok=False, payload={},
                                            error_code="backend_failure", retriable=False)
                    break
            except (IdempotencyError, NotFoundError, IntegrityError, ContractViolation) as exc:
                trace.steps.append(TraceStep(step.role, step.action, started,
                                             time.perf_counter(), ok=False, error=str(exc)))
                code = {
                    IdempotencyError: "duplicate",
                    NotFoundError: "not_found",
                    IntegrityError: "integrity",
                    ContractViolation: "contract",
                }[type(exc)]
                result = WorkflowResult(ok=False, payload={"detail": str(exc)}, error_code=code)
                break
            trace.steps.append(TraceStep(step.role, step.action, started, time.perf_counter()))
            if isinstance(outcome, WorkflowResult):  # early terminal outcome
                result = outcome
                break
        if result is None:
            result = WorkflowResult(ok=True, payload=self._final_payload(workflow, scratch))
        trace.tau_out = time.perf_counter()
        return result, trace

    def _backend(self, role: str):
        backend = self.backends.get(role)
        if backend is None:
            raise TransportError(f"no backend registered for role {role!r}", retriable=False)
        return backend

    def _run_step(self, step: WorkflowStep, msg: AgentMessage, scratch: dict):
        handler = getattr(self, f"_step_{step.role}_{step.action}", None)
        if handler is None:
            raise ConfigurationError(f"unknown workflow step {step.role}.{step.action}")
        return handler(msg, scratch)

    # vision.analyze
    def _step_vision_analyze(self, msg: AgentMessage, scratch: dict):
        result = vision_analyze(msg, self._backend("vision"), self.confidence_threshold)
        if result.needs_clarification:
            return WorkflowResult(
                ok=True,
                payload={"clarification": result.clarification},
            )
        analysis = result.analysis
        if analysis.nutrients.present_count() == 0:
            raise IntegrityError("vision analysis carries no nutrient values")
        scratch["analysis"] = analysis
        scratch["source"] = result.source
        return None

    # file.append_meal
    def _step_file_append_meal(self, msg: AgentMessage, scratch: dict):
        analysis: MealAnalysis = scratch.get("analysis")  # type: ignore[assignment]
        if analysis is None:
            raise IntegrityError("append_meal invoked without a meal analysis payload")
        tz = self.store.read_profile(msg.user_id).tzinfo()
        record = MealRecord(
            meal_id=msg.resolved_meal_id(),
            user_id=msg.user_id,
            date=msg.date,
            mealtime=msg.mealtime,
            timestamp=_record_timestamp(msg, tz),
            items=analysis.items,
            nutrients=analysis.nutrients,
            source=scratch.get("source", "image+text"),
            confidence=analysis.confidence,
        )
        scratch["meal"] = record
        scratch["meal_seq"] = self.store.append_meal(record)
        return None

    # file.update_plan
    def _step_file_update_plan(self, msg: AgentMessage, scratch: dict):
        record: MealRecord = scratch.get("meal")  # type: ignore[assignment]
        if record is None:
            raise IntegrityError("update_plan invoked without an appended meal")
        plan = self.ensure_plan(msg.user_id, msg.date)
        plan = apply_meal(plan, record)
        self.store.update_plan_status(plan)
        scratch["plan"] = plan
        return None

    # file.read_day_summary
    def _step_file_read_day_summary(self, msg: AgentMessage, scratch: dict):
        plan = self.ensure_plan(msg.user_id, msg.date)
        plan, meals = self.store.read_day_summary(msg.user_id, msg.date)
        scratch["plan"] = plan
        scratch["meals"] = meals
        return None

    # dialog.recommend
    def _step_dialog_recommend(self, msg: AgentMessage, scratch: dict):
        plan: DailyPlan = scratch.get("plan")  # type: ignore[assignment]
        if plan is None:
            raise IntegrityError("recommend invoked without a plan payload")
        profile = self.store.read_profile(msg.user_id)  # fresh read; no caching
        allocation = allocate_remaining(plan, profile.habit_weights())
        if allocation.exhausted:
            return WorkflowResult(
                ok=False,
                payload={"advisory": "all planned meals are logged for today"},
                error_code="plan_exhausted",
            )
        recommendation = dialog_recommend(
            plan, list(allocation.budgets), profile, self.catalog, self._backend("dialog")
        )
        scratch["recommendation"] = recommendation
        scratch["allocation"] = allocation
        return None

    # -- response assembly ----------------------------------------------------

    def _core_view(self, vector: NutrientVector) -> dict[str, float]:
        schema = vector.schema
        return {
            name: round(float(vector.values[schema.index(name)]), 6)
            for name in schema.core_names
            if vector.present(name)
        }

    def plan_view(self, plan: DailyPlan) -> dict:
        return {
            "user_id": plan.user_id,
            "date": plan.date.isoformat(),
            "targets": plan.targets.to_dict(),
            "consumed": plan.consumed.to_dict(),
            "remaining": plan.remaining.to_dict(),
            "remaining_core": self._core_view(plan.remaining),
            "meals_logged": list(plan.meals_logged),
            "meals_remaining": list(plan.meals_remaining),
        }

    def _final_payload(self, workflow: Workflow, scratch: dict) -> dict:
        payload: dict = {}
        if "meal" in scratch:
            record: MealRecord = scratch["meal"]  # type: ignore[assignment]
            analysis: MealAnalysis = scratch["analysis"]  # type: ignore[assignment]
            payload["meal_id"] = record.meal_id
            payload["source"] = record.source
            payload["analysis"] = analysis.to_dict()
            payload["seq"] = scratch.get("meal_seq")
        if "plan" in scratch:
            plan: DailyPlan = scratch["plan"]  # type: ignore[assignment]
            payload["plan"] = self.plan_view(plan)
            payload["remaining_core"] = self._core_view(plan.remaining)
        if "meals" in scratch:
            payload["meals"] = [m.to_dict() for m in scratch["meals"]]
        if "recommendation" in scratch:
            recommendation: Recommendation = scratch["recommendation"]  # type: ignore[assignment]
            payload["recommendation"] = recommendation.to_dict()
        return payload
