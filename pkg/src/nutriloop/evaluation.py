"""Evaluation harness: nutrient metrics, workflow metrics, adjustment metrics.

Per-nutrient mean absolute error is computed over non-missing predictions
only (the mask decides which meals count for each field); coverage is the
fraction of meals with a non-missing prediction. Plan optimality is the
policy-defined minimal step count divided by the executed step count, in
(0, 1]. End-to-end latency is the receipt-to-final-serialization span.
Directional agreement is measured on synthetic completion scenarios against
random-sign and static baselines, with percentile-bootstrap confidence
intervals over scenario-level means.
"""

from __future__ import annotations

import datetime as dt
import json
import random
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .agents import (
    AgentMessage,
    Orchestrator,
    RequestClass,
    TraceStep,
    WorkflowPolicyTable,
    WorkflowTrace,
    load_default_catalog,
    load_default_policy_table,
)
from .backends import MockVisionBackend, MockTextBackend, MockVisionFixture, _stable_seed
from .dri import build_default_reference, lookup_rda
from .errors import (
    ConfigurationError,
    ContractViolation,
    IntegrityError,
    UndefinedMetricError,
)
from .nutrients import NutrientSchema, NutrientVector, load_default_schema
from .planning import AdjustmentPolicy, PlanDay, PlanHistory, adjust_targets
from .records import MealHabit, UserProfile
from .store import FileStateStore

# ---------------------------------------------------------------------------
# Nutrient metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    predicted: NutrientVector
    truth: NutrientVector

    def __post_init__(self):
        if self.predicted.schema.names != self.truth.schema.names:
            raise ContractViolation("prediction and truth use different schemas")


@dataclass
class MetricsReport:
    per_field: dict[str, dict]  # name -> {mae, coverage, n, unit, group}
    rollups: dict[str, dict]  # field set -> {mae_kcal, mae_g, mae_mg, mae_mcg, coverage}
    meal_count: int

    def to_dict(self) -> dict:
        return {
            "meal_count": self.meal_count,
            "per_field": self.per_field,
            "rollups": self.rollups,
        }


def compute_coverage(records: list[PredictionRecord]) -> dict[str, float]:
    """Per-field fraction of meals with a non-missing prediction."""
    if not records:
        raise ContractViolation("coverage requires at least one record")
    schema = records[0].predicted.schema
    mask = np.stack([r.predicted.mask for r in records])
    coverage = mask.mean(axis=0)
    return {name: float(coverage[i]) for i, name in enumerate(schema.names)}


def compute_mae(records: list[PredictionRecord]) -> MetricsReport:
    """Mask-aware per-field MAE plus unit- and field-set roll-ups."""
    if not records:
        raise ContractViolation("MAE requires at least one record")
    schema = records[0].predicted.schema
    for r in records:
        if r.predicted.schema.names != schema.names:
            raise ContractViolation("records use inconsistent schemas")

    pred = np.stack([r.predicted.values for r in records])
    mask = np.stack([r.predicted.mask for r in records])
    truth = np.stack([r.truth.values for r in records])
    n_j = mask.sum(axis=0)
    abs_err = np.abs(pred - truth) * mask
    with np.errstate(invalid="ignore"):
        mae = np.where(n_j > 0, abs_err.sum(axis=0) / np.maximum(n_j, 1), np.nan)
    coverage = mask.mean(axis=0)

    per_field: dict[str, dict] = {}
    for i, f in enumerate(schema.fields):
        per_field[f.name] = {
            "mae": None if n_j[i] == 0 else float(mae[i]),
            "coverage": float(coverage[i]),
            "n": int(n_j[i]),
            "unit": f.unit,
            "group": f.group,
        }

    field_sets = {
        "full40": schema.names,
        "core": schema.core_names,
        "micronutrients": schema.micronutrient_names,
    }
    rollups: dict[str, dict] = {}
    for set_name, names in field_sets.items():
        entry: dict = {}
        for unit in ("kcal", "g", "mg", "mcg"):
            defined = [
                per_field[n]["mae"]
                for n in names
                if schema.unit(n) == unit and per_field[n]["mae"] is not None
            ]
            entry[f"mae_{unit}"] = float(np.mean(defined)) if defined else None
        entry["coverage"] = float(np.mean([per_field[n]["coverage"] for n in names]))
        rollups[set_name] = entry
    return MetricsReport(per_field=per_field, rollups=rollups, meal_count=len(records))


def run_vision_batch(backend: MockVisionBackend, refs: list[str] | None = None) -> list[PredictionRecord]:
    """Run the vision backend over fixture images and pair with ground truth."""
    fixture = backend.fixture
    if refs is None:
        refs = sorted(r for r in fixture.image_refs() if r.startswith("img-"))
    return [
        PredictionRecord(
            predicted=backend.analyze_image(ref).nutrients,
            truth=fixture.ground_truth(ref),
        )
        for ref in refs
    ]


# ---------------------------------------------------------------------------
# Workflow metrics
# ---------------------------------------------------------------------------


def compute_po(trace: WorkflowTrace, policy_table: WorkflowPolicyTable) -> float:
    """Plan optimality: minimal over executed step count, in (0, 1]."""
    s_star = policy_table.min_steps(trace.request_class)
    if s_star < 1:
        raise ContractViolation(
            f"plan optimality is undefined for class {trace.request_class.value} (s*=0)"
        )
    executed = trace.executed_count
    if executed < s_star:
        raise IntegrityError(
            f"trace executed {executed} steps but the minimum for "
            f"{trace.request_class.value} is {s_star}"
        )
    return s_star / executed


def compute_latency(trace: WorkflowTrace) -> float:
    """End-to-end latency: receipt to final serialization, in seconds."""
    if trace.tau_in is None or trace.tau_out is None:
        raise IntegrityError("trace is missing a tau_in/tau_out timestamp")
    return trace.tau_out - trace.tau_in


def batch_stats(values: list[float]) -> dict:
    if not values:
        raise ContractViolation("batch stats require at least one value")
    return {
        "mean": float(np.mean(values)),
        "max": float(np.max(values)),
        "min": float(np.min(values)),
        "count": len(values),
    }


def load_trace_fixture(path: str | Path | None = None) -> list[tuple[str, WorkflowTrace]]:
    """Hand-labeled request traces: id, class and executed worker steps."""
    if path is None:
        text = resources.files("nutriloop.data").joinpath("workflow_traces.jsonl").read_text()
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"trace fixture file {path} does not exist")
        text = path.read_text()
    traces: list[tuple[str, WorkflowTrace]] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        steps = [TraceStep(role, action, 0.0, 0.0) for role, action in doc["executed"]]
        traces.append((doc["trace_id"], WorkflowTrace(RequestClass(doc["class"]), steps)))
    return traces


# ---------------------------------------------------------------------------
# Synthetic completion scenarios and directional agreement
# ---------------------------------------------------------------------------

SCENARIO_CLASSES = ("insufficient", "near_target", "excessive")

_CLASS_BANDS = {
    "insufficient": (-0.80, -0.50),
    "near_target": (-0.05, +0.05),
    "excessive": (+0.50, +0.80),
}

PER_NUTRIENT_PERTURBATION = 0.10


@dataclass(frozen=True)
class Scenario:
    kind: str
    targets: dict[str, float]
    achieved: dict[str, float]


@dataclass
class ScenarioSet:
    scenarios: list[Scenario]
    seed: int

    def __len__(self) -> int:
        return len(self.scenarios)


def _class_counts(count: int, class_mix: dict[str, float]) -> dict[str, int]:
    if abs(sum(class_mix.values()) - 1.0) > 1e-9 or any(v < 0 for v in class_mix.values()):
        raise ConfigurationError("class mix proportions must be non-negative and sum to 1")
    raw = {k: count * v for k, v in class_mix.items()}
    counts = {k: int(np.floor(v)) for k, v in raw.items()}
    shortfall = count - sum(counts.values())
    for k in sorted(raw, key=lambda k: raw[k] - counts[k], reverse=True)[:shortfall]:
        counts[k] += 1
    return counts


def gen_scenarios(count: int, class_mix: dict[str, float] | None = None, seed: int = 0,
                  base_targets: dict[str, float] | None = None) -> ScenarioSet:
    """Synthetic completion scenarios with class-banded deviations.

    Achieved intake is target * (1 + delta + u) per nutrient, where delta
    is drawn from the class band and u is a +-10% per-nutrient perturbation,
    floored at zero.
    """
    if count < 1:
        raise ConfigurationError("scenario count must be >= 1")
    class_mix = class_mix or {k: 1.0 / 3.0 for k in SCENARIO_CLASSES}
    for k in class_mix:
        if k not in SCENARIO_CLASSES:
            raise ConfigurationError(f"unknown scenario class {k!r}")
    if base_targets is None:
        base_targets = default_scenario_targets()
    counts = _class_counts(count, class_mix)
    rng = random.Random(seed)
    scenarios: list[Scenario] = []
    for kind in SCENARIO_CLASSES:
        lo, hi = _CLASS_BANDS[kind]
        for _ in range(counts.get(kind, 0)):
            delta = rng.uniform(lo, hi)
            achieved = {}
            for name, target in base_targets.items():
                u = rng.uniform(-PER_NUTRIENT_PERTURBATION, PER_NUTRIENT_PERTURBATION)
                achieved[name] = max(target * (1.0 + delta + u), 0.0)
            scenarios.append(Scenario(kind, dict(base_targets), achieved))
    return ScenarioSet(scenarios=scenarios, seed=seed)


def default_scenario_targets(profile_sex: str = "female", life_stage: str = "19-30 y") -> dict[str, float]:
    """Core-nutrient targets from the reference row (unmasked fields only)."""
    ref = build_default_reference()
    row = lookup_rda(ref, profile_sex, life_stage)
    return {
        name: value
        for name in row.schema.core_names
        if (value := row.get(name)) is not None
    }


@dataclass
class DaSummary:
    mean_da: float
    n_pairs: int
    per_scenario: list[float]
    ci: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "mean_da": self.mean_da,
            "n_pairs": self.n_pairs,
            "per_scenario": self.per_scenario,
            "ci": list(self.ci) if self.ci else None,
        }


def compute_da(plan_updates: list[tuple[float, float]], s: int = +1,
               epsilon: float = 1e-6) -> float:
    """Fraction of counted (residual, target-change) pairs with the intended sign.

    Pairs with |residual| <= epsilon are excluded; a zero target change counts
    as disagreement (its sign matches neither +1 nor -1).
    """
    if s not in (+1, -1):
        raise ContractViolation("policy direction s must be +1 or -1")
    counted = [(e, d) for e, d in plan_updates if abs(e) > epsilon]
    if not counted:
        raise UndefinedMetricError("no pairs remain after the zero-residual exclusion")
    agreements = sum(1 for e, d in counted if np.sign(d) == np.sign(s * e))
    return agreements / len(counted)


def bootstrap_ci(values: list[float], level: float = 0.95, resamples: int = 10_000,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of scenario-level values."""
    if len(values) < 2:
        raise ContractViolation("bootstrap CI requires at least 2 values")
    arr = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(arr), size=(resamples, len(arr)))
    means = arr[idx].mean(axis=1)
    lo = float(np.quantile(means, (1.0 - level) / 2.0))
    hi = float(np.quantile(means, 1.0 - (1.0 - level) / 2.0))
    return (lo, hi)


def scenario_updates_engine(scenario_set: ScenarioSet, policy: AdjustmentPolicy,
                            flip_p: float = 0.0, seed: int = 0) -> list[dict[str, float]]:
    """Next-day target changes the plan engine produces for each scenario.

    With flip_p > 0, each change's sign is flipped with that probability
    (seeded per scenario and nutrient) to emulate a stochastic live model.
    """
    schema = load_default_schema()
    updates: list[dict[str, float]] = []
    for i, scenario in enumerate(scenario_set.scenarios):
        targets = NutrientVector.from_dict(schema, scenario.targets)
        achieved = NutrientVector.from_dict(schema, scenario.achieved)
        history = PlanHistory("scenario")
        history.append(PlanDay(dt.date(2025, 1, 1), targets, achieved))
        _new, delta = adjust_targets(history, targets, policy)
        row: dict[str, float] = {}
        for name in scenario.targets:
            d = delta.get(name) or 0.0
            if flip_p > 0.0:
                rng = random.Random(_stable_seed(seed, scenario_set.seed, i, name))
                if rng.random() < flip_p:
                    d = -d
            row[name] = d
        updates.append(row)
    return updates


def scenario_updates_random(scenario_set: ScenarioSet, seed: int = 0) -> list[dict[str, float]]:
    """Random-sign baseline: a unit change of uniform random sign per pair."""
    updates: list[dict[str, float]] = []
    for i, scenario in enumerate(scenario_set.scenarios):
        rng = random.Random(_stable_seed("random-baseline", seed, scenario_set.seed, i))
        updates.append({name: rng.choice((-1.0, 1.0)) for name in scenario.targets})
    return updates


def scenario_updates_static(scenario_set: ScenarioSet) -> list[dict[str, float]]:
    """Static baseline: next-day targets never move."""
    return [{name: 0.0 for name in s.targets} for s in scenario_set.scenarios]


def da_summary(scenario_set: ScenarioSet, updates: list[dict[str, float]], s: int = +1,
               epsilon: float = 1e-6, ci_seed: int = 0,
               resamples: int = 10_000) -> DaSummary:
    """Scenario-level DA values, their overall mean and a bootstrap CI."""
    all_pairs: list[tuple[float, float]] = []
    per_scenario: list[float] = []
    for scenario, row in zip(scenario_set.scenarios, updates):
        pairs = [
            (scenario.targets[n] - scenario.achieved[n], row[n]) for n in scenario.targets
        ]
        all_pairs.extend(pairs)
        per_scenario.append(compute_da(pairs, s=s, epsilon=epsilon))
    mean_da = compute_da(all_pairs, s=s, epsilon=epsilon)
    counted = sum(1 for e, _ in all_pairs if abs(e) > epsilon)
    ci = bootstrap_ci(per_scenario, seed=ci_seed, resamples=resamples) if len(per_scenario) >= 2 else None
    return DaSummary(mean_da=mean_da, n_pairs=counted, per_scenario=per_scenario, ci=ci)


@dataclass
class DaReport:
    rows: dict[str, DaSummary]

    def to_dict(self) -> dict:
        return {method: summary.to_dict() for method, summary in self.rows.items()}


# ---------------------------------------------------------------------------
# Full suite
# ---------------------------------------------------------------------------


@dataclass
class EvalConfig:
    seed: int = 0
    scenario_count: int = 20
    class_mix: dict[str, float] = field(
        default_factory=lambda: {k: 1.0 / 3.0 for k in SCENARIO_CLASSES}
    )
    mask_drop_p: float = 0.39
    noise: float = 0.0
    flip_p: float = 0.1  # sign-perturbation rate emulating live-model noise
    random_seeds: int = 50
    bootstrap_resamples: int = 10_000
    delay_s: float = 0.002
    latency_requests: int = 50
    overhead_budget_s: float = 0.2
    meal_fixture_path: str | None = None
    trace_fixture_path: str | None = None
    profile_sex: str = "female"
    profile_life_stage: str = "19-30 y"
    workdir: str | None = None


def _eval_profile(config: EvalConfig) -> UserProfile:
    return UserProfile(
        user_id="eval-user",
        sex=config.profile_sex,
        life_stage=config.profile_life_stage,
        cuisine_frequencies={"british": 0.5, "chinese": 0.5},
        allergies=set(),
        meal_habits=[
            MealHabit("breakfast", 0.25), MealHabit("lunch", 0.4), MealHabit("dinner", 0.35)
        ],
    )


def _latency_batch(config: EvalConfig, fixture: MockVisionFixture, workdir: Path) -> dict:
    """Drive the orchestrator over synthetic requests with injected delays."""
    schema = load_default_schema()
    ref = build_default_reference()
    backends = {
        "vision": MockVisionBackend(fixture, seed=config.seed, delay_s=config.delay_s),
        "dialog": MockTextBackend("dialog", delay_s=config.delay_s),
    }
    date = dt.date(2025, 6, 2)
    refs = sorted(r for r in fixture.image_refs() if r.startswith("img-"))
    rows: list[dict] = []
    with FileStateStore(workdir / "latency-store", schema, ref) as store:
        orchestrator = Orchestrator(
            store, ref, backends, load_default_policy_table(), load_default_catalog()
        )
        store.write_profile(_eval_profile(config))
        kinds = ["log", "status", "recommend"]
        for i in range(config.latency_requests):
            kind = kinds[i % len(kinds)]
            if kind == "log":
                msg = AgentMessage(
                    user_id="eval-user", date=date, mealtime="snack",
                    meal_id=f"latency-{i}", text="my snack",
                    image_ref=refs[i % len(refs)],
                )
                injected = config.delay_s  # one vision call
            elif kind == "status":
                msg = AgentMessage(user_id="eval-user", date=date, text="plan status")
                injected = 0.0
            else:
                msg = AgentMessage(
                    user_id="eval-user", date=date, text="what should I eat next?"
                )
                injected = config.delay_s  # one dialog call
            result, trace = orchestrator.handle_message(msg)
            rows.append(
                {
                    "request": i,
                    "kind": kind,
                    "injected_s": injected,
                    "latency_s": compute_latency(trace),
                    "ok": result.ok,
                }
            )
    latencies = [r["latency_s"] for r in rows]
    return {
        "stats": batch_stats(latencies),
        "overhead_budget_s": config.overhead_budget_s,
        "within_budget": all(
            r["injected_s"] <= r["latency_s"] <= r["injected_s"] + config.overhead_budget_s
            for r in rows
        ),
        "requests": rows,
    }


def run_eval_suite(config: EvalConfig | None = None) -> dict:
    """Produce the full structured evaluation report (all three sections)."""
    config = config or EvalConfig()
    fixture = MockVisionFixture.load(config.meal_fixture_path)
    workdir = Path(config.workdir) if config.workdir else None
    if workdir is None:
        import tempfile

        workdir = Path(tempfile.mkdtemp(prefix="nutriloop-eval-"))
    workdir.mkdir(parents=True, exist_ok=True)

    # Section 1: nutrient metrics (mock-driven structure of the MAE/coverage table)
    clean_backend = MockVisionBackend(fixture, noise=config.noise, seed=config.seed)
    clean_records = run_vision_batch(clean_backend)
    clean_report = compute_mae(clean_records)

    masked_backend = MockVisionBackend(
        fixture, noise=config.noise,
        mask_spec={"micronutrients": config.mask_drop_p}, seed=config.seed,
    )
    masked_records = run_vision_batch(masked_backend)
    masked_report = compute_mae(masked_records)

    # Section 2: workflow metrics
    policy_table = load_default_policy_table()
    fixture_traces = load_trace_fixture(config.trace_fixture_path)
    po_rows = [
        {"trace_id": trace_id, "class": trace.request_class.value,
         "executed": trace.executed_count,
         "min_steps": policy_table.min_steps(trace.request_class),
         "po": compute_po(trace, policy_table)}
        for trace_id, trace in fixture_traces
    ]
    latency_section = _latency_batch(config, fixture, workdir)

    # Section 3: adjustment metrics (directional agreement)
    scenario_set = gen_scenarios(config.scenario_count, config.class_mix, config.seed)
    policy = AdjustmentPolicy()
    engine = da_summary(
        scenario_set, scenario_updates_engine(scenario_set, policy),
        ci_seed=config.seed, resamples=config.bootstrap_resamples,
    )
    engine_noisy = da_summary(
        scenario_set,
        scenario_updates_engine(scenario_set, policy, flip_p=config.flip_p, seed=config.seed),
        ci_seed=config.seed, resamples=config.bootstrap_resamples,
    )
    random_summary = da_summary(
        scenario_set, scenario_updates_random(scenario_set, seed=0),
        ci_seed=config.seed, resamples=config.bootstrap_resamples,
    )
    random_means = [random_summary.mean_da]
    for seed_offset in range(1, config.random_seeds):
        updates = scenario_updates_random(scenario_set, seed=seed_offset)
        pairs = [
            (s.targets[n] - s.achieved[n], row[n])
            for s, row in zip(scenario_set.scenarios, updates)
            for n in s.targets
        ]
        random_means.append(compute_da(pairs))
    static = da_summary(
        scenario_set, scenario_updates_static(scenario_set),
        ci_seed=config.seed, resamples=config.bootstrap_resamples,
    )
    da_report = DaReport(
        rows={"engine": engine, "engine_noisy": engine_noisy,
              "random": random_summary, "static": static}
    )

    return {
        "config": {
            "seed": config.seed,
            "scenario_count": config.scenario_count,
            "class_mix": config.class_mix,
            "mask_drop_p": config.mask_drop_p,
            "noise": config.noise,
            "flip_p": config.flip_p,
            "random_seeds": config.random_seeds,
            "delay_s": config.delay_s,
            "latency_requests": config.latency_requests,
        },
        "nutrient_metrics": {
            "zero_noise": clean_report.to_dict(),
            "micronutrient_dropout": masked_report.to_dict(),
        },
        "workflow_metrics": {
            "plan_optimality": {
                "stats": batch_stats([r["po"] for r in po_rows]),
                "traces": po_rows,
            },
            "latency": latency_section,
        },
        "adjustment_metrics": {
            "da": da_report.to_dict(),
            "random_mean_over_seeds": float(np.mean(random_means)),
            "random_seed_count": config.random_seeds,
        },
    }
