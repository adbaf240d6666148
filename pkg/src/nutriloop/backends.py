"""Model backend abstraction: deterministic mocks plus a remote-HTTP adapter.

Every worker role (vision, dialog, controller_assist, file_assist) talks to a
backend through two operations: image analysis and structured text
completion. Mock backends are pure functions of (fixture, seed, inputs) and
are the only backends the test suite needs; the remote adapter speaks a
single-endpoint wire contract and is exercised by contract tests against a
local stub server.

Text completion uses a JSON envelope as the prompt (``{"kind": ..., ...}``)
and returns a JSON document, so the mock and remote modes share one surface.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import httpx

from .errors import (
    ConfigurationError,
    ContractViolation,
    FixtureMissError,
    TransportError,
)
from .nutrients import NutrientSchema, NutrientVector, load_default_schema
from .records import FoodItem

ROLES = ("vision", "dialog", "controller_assist", "file_assist")
MODES = ("mock", "remote")


@dataclass(frozen=True)
class BackendDescriptor:
    role: str
    mode: str
    config: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigurationError(f"unknown backend role {self.role!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown backend mode {self.mode!r}")


@dataclass
class MealAnalysis:
    """Structured output of the meal-picture / text nutrition analyzer."""

    items: list[FoodItem]
    nutrients: NutrientVector
    confidence: float
    used_reference_object: bool = False

    def to_dict(self) -> dict:
        return {
            "items": [[i.name, i.mass_g, i.occluded] for i in self.items],
            "nutrients": self.nutrients.to_dict(),
            "confidence": self.confidence,
            "used_reference_object": self.used_reference_object,
        }


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


class MockVisionFixture:
    """Ground-truth table for the mock vision backend.

    Maps image references (and free-text phrases for the text-only fallback)
    to items, a full nutrient vector and an authored confidence.
    """

    def __init__(self, images: dict[str, dict], text_estimates: dict[str, dict],
                 schema: NutrientSchema):
        self.schema = schema
        self.images = images
        self.text_estimates = {self._norm(k): v for k, v in text_estimates.items()}

    @staticmethod
    def _norm(text: str) -> str:
        return " ".join("".join(c.lower() if c.isalnum() or c.isspace() else " " for c in text).split())

    @classmethod
    def load(cls, path: str | Path | None = None, schema: NutrientSchema | None = None) -> "MockVisionFixture":
        schema = schema or load_default_schema()
        if path is None:
            text = resources.files("nutriloop.data").joinpath("meal_fixtures.json").read_text()
        else:
            path = Path(path)
            if not path.exists():
                raise ConfigurationError(f"meal fixture file {path} does not exist")
            text = path.read_text()
        doc = json.loads(text)
        return cls(doc.get("images", {}), doc.get("text_estimates", {}), schema)

    def image_refs(self) -> list[str]:
        return list(self.images.keys())

    def ground_truth(self, image_ref: str) -> NutrientVector:
        entry = self.images.get(image_ref)
        if entry is None:
            raise FixtureMissError(f"no fixture entry for image {image_ref!r}")
        return NutrientVector.from_dict(self.schema, entry["nutrients"])

    def _entry_to_analysis(self, entry: dict, used_reference: bool) -> MealAnalysis:
        return MealAnalysis(
            items=[FoodItem(n, m, bool(o)) for n, m, o in entry.get("items", [])],
            nutrients=NutrientVector.from_dict(self.schema, entry["nutrients"]),
            confidence=float(entry.get("confidence", 0.9)),
            used_reference_object=used_reference,
        )

    def lookup_image(self, image_ref: str, used_reference: bool) -> MealAnalysis:
        entry = self.images.get(image_ref)
        if entry is None:
            raise FixtureMissError(f"no fixture entry for image {image_ref!r}")
        return self._entry_to_analysis(entry, used_reference)

    def lookup_text(self, text: str) -> MealAnalysis | None:
        norm = self._norm(text)
        if not norm:
            return None
        if norm in self.text_estimates:
            return self._entry_to_analysis(self.text_estimates[norm], False)
        hits = [k for k in self.text_estimates if k in norm]
        if len(hits) == 1:
            return self._entry_to_analysis(self.text_estimates[hits[0]], False)
        return None


def resolve_mask_spec(mask_spec: dict[str, float], schema: NutrientSchema) -> dict[str, float]:
    """Expand group selectors into a per-field drop-probability map."""
    groups = {
        "all": schema.names,
        "core": schema.core_names,
        "micronutrients": schema.micronutrient_names,
        "macronutrients": tuple(f.name for f in schema.fields if f.group == "macronutrient"),
        "minerals": tuple(f.name for f in schema.fields if f.group == "mineral"),
        "vitamins": tuple(f.name for f in schema.fields if f.group == "vitamin"),
    }
    per_field: dict[str, float] = {}
    for selector, p in mask_spec.items():
        if not (0.0 <= p <= 1.0):
            raise ConfigurationError(f"drop probability for {selector!r} outside [0, 1]")
        if selector in groups:
            for name in groups[selector]:
                per_field.setdefault(name, p)
    for selector, p in mask_spec.items():
        if selector in schema:
            per_field[selector] = p  # field names override group selectors
        elif selector not in groups:
            raise ConfigurationError(f"unknown mask_spec selector {selector!r}")
    return per_field


class MockVisionBackend:
    """Fixture-driven vision backend with seeded noise and field dropout."""

    role = "vision"
    mode = "mock"

    def __init__(self, fixture: MockVisionFixture, noise: float = 0.0,
                 mask_spec: dict[str, float] | None = None, seed: int = 0,
                 delay_s: float = 0.0, fail_times: int = 0,
                 blob_reader=None):
        if noise < 0:
            raise ConfigurationError("noise amplitude must be >= 0")
        self.fixture = fixture
        self.noise = noise
        self.mask_probs = resolve_mask_spec(mask_spec or {}, fixture.schema)
        self.seed = seed
        self.delay_s = delay_s
        self._fail_times = fail_times
        # Resolves content-addressed upload refs back to fixture keys: the
        # blob payload carries a "fixture:<key>" marker in mock deployments.
        self._blob_reader = blob_reader

    def _resolve_ref(self, image_ref: str) -> str:
        if image_ref in self.fixture.images:
            return image_ref
        if self._blob_reader is not None:
            data = self._blob_reader(image_ref)
            if data and data.startswith(b"fixture:"):
                return data[len(b"fixture:"):].strip().decode()
        return image_ref

    def _maybe_fail(self) -> None:
        if self._fail_times > 0:
            self._fail_times -= 1
            raise TransportError("vision backend unavailable")

    def _perturb(self, image_ref: str, analysis: MealAnalysis) -> MealAnalysis:
        if self.noise == 0.0 and not self.mask_probs:
            return analysis
        schema = self.fixture.schema
        values = analysis.nutrients.values.copy()
        mask = analysis.nutrients.mask.copy()
        for i, name in enumerate(schema.names):
            if not mask[i]:
                continue
            if self.noise > 0.0:
                rng = random.Random(_stable_seed(self.seed, image_ref, name, "noise"))
                values[i] = max(values[i] * (1.0 + rng.uniform(-self.noise, self.noise)), 0.0)
            p = self.mask_probs.get(name, 0.0)
            if p > 0.0:
                rng = random.Random(_stable_seed(self.seed, image_ref, name, "mask"))
                if rng.random() < p:
                    mask[i] = False
        return MealAnalysis(
            items=analysis.items,
            nutrients=NutrientVector(schema, values, mask),
            confidence=analysis.confidence,
            used_reference_object=analysis.used_reference_object,
        )

    def analyze_image(self, image_ref: str, prompt_context: str = "") -> MealAnalysis:
        self._maybe_fail()
        if self.delay_s:
            time.sleep(self.delay_s)
        used_reference = "scale" in prompt_context.lower() or "reference" in prompt_context.lower()
        resolved = self._resolve_ref(image_ref)
        return self._perturb(resolved, self.fixture.lookup_image(resolved, used_reference))

    def estimate_from_text(self, text: str) -> MealAnalysis | None:
        self._maybe_fail()
        if self.delay_s:
            time.sleep(self.delay_s)
        return self.fixture.lookup_text(text)


class MockTextBackend:
    """Deterministic completion backend for dialog/controller/file roles."""

    mode = "mock"

    def __init__(self, role: str = "dialog", seed: int = 0, delay_s: float = 0.0,
                 fail_times: int = 0):
        if role not in ROLES:
            raise ConfigurationError(f"unknown backend role {role!r}")
        self.role = role
        self.seed = seed
        self.delay_s = delay_s
        self._fail_times = fail_times

    def complete_text(self, prompt: str) -> str:
        if not prompt:
            raise ContractViolation("prompt must be non-empty")
        if self._fail_times > 0:
            self._fail_times -= 1
            raise TransportError(f"{self.role} backend unavailable")
        if self.delay_s:
            time.sleep(self.delay_s)
        try:
            envelope = json.loads(prompt)
        except json.JSONDecodeError:
            envelope = {"kind": "answer", "text": prompt}
        kind = envelope.get("kind")
        if kind == "rank_candidates":
            return json.dumps({"ranking": self._rank(envelope)})
        if kind == "answer":
            return json.dumps({"text": self._answer(envelope.get("text", ""))})
        raise ContractViolation(f"mock text backend cannot handle kind {kind!r}")

    @staticmethod
    def _rank(envelope: dict) -> list[str]:
        """Score candidates by how much of the gap they fill, times preference.

        With no positive budget left, preference alone orders the candidates.
        """
        budget: dict[str, float] = envelope.get("budget", {})
        preferences: dict[str, float] = envelope.get("cuisine_frequencies", {})
        has_gap = any(v > 0.0 for v in budget.values())
        scored: list[tuple[float, str]] = []
        for cand in envelope.get("candidates", []):
            nutrients: dict[str, float] = cand.get("nutrients", {})
            weighted = 0.0
            weight_total = 0.0
            for name, avail in budget.items():
                if avail <= 0.0:
                    continue
                weight_total += 1.0
                weighted += min(nutrients.get(name, 0.0), avail) / avail
            gap_fill = weighted / weight_total if weight_total else 1.0
            pref = preferences.get(cand.get("cuisine", ""), 0.05)
            scored.append((gap_fill * pref if has_gap else pref, cand["name"]))
        scored.sort(key=lambda t: (-t[0], t[1]))
        return [name for _score, name in scored]

    @staticmethod
    def _answer(text: str) -> str:
        lowered = text.lower()
        for topic, blurb in _KNOWLEDGE_SNIPPETS.items():
            if topic in lowered:
                return blurb
        return (
            "I can help with meal logging, plan status and next-meal ideas. "
            "Ask about a nutrient, or send a meal photo with a short note."
        )


_KNOWLEDGE_SNIPPETS = {
    "vitamin d": (
        "Vitamin D supports calcium absorption and bone health; adults "
        "generally aim for 15 mcg per day from food and sunlight."
    ),
    "vitamin c": (
        "Vitamin C is an antioxidant found in citrus, peppers and greens; "
        "typical adult targets are 75-90 mg per day."
    ),
    "protein": (
        "Protein supplies amino acids for tissue maintenance; typical adult "
        "allowances are around 46-56 g per day depending on body size."
    ),
    "fiber": (
        "Dietary fiber aids digestion and satiety; common adult targets are "
        "25-38 g per day from whole grains, legumes and vegetables."
    ),
    "iron": (
        "Iron carries oxygen in the blood; allowances range from 8 to 18 mg "
        "per day depending on life stage and sex."
    ),
    "sodium": (
        "Sodium is an electrolyte; most guidance keeps intake near 1500 mg "
        "per day for adults."
    ),
}


class RemoteBackend:
    """HTTP adapter speaking the single-endpoint wire contract.

    Request document: {"role", "kind", "prompt" | "image_ref" + "prompt_context"}.
    Response document: the structured analysis/completion payload. Credentials
    come from the environment variable named in the config and are never
    stored in files.
    """

    mode = "remote"

    def __init__(self, role: str, endpoint: str, credential_env: str | None = None,
                 timeout_s: float = 30.0, max_in_flight: int = 4,
                 schema: NutrientSchema | None = None):
        if role not in ROLES:
            raise ConfigurationError(f"unknown backend role {role!r}")
        self.role = role
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.schema = schema or load_default_schema()
        self._slots = threading.Semaphore(max_in_flight)
        self._token = None
        if credential_env is not None:
            self._token = os.environ.get(credential_env)
            if not self._token:
                raise ConfigurationError(
                    f"credential environment variable {credential_env!r} is not set"
                )

    def _post(self, payload: dict) -> dict:
        headers = {}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        with self._slots:
            try:
                response = httpx.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
            except httpx.HTTPError as exc:
                raise TransportError(f"backend call failed: {exc}") from exc
        if response.status_code != 200:
            raise TransportError(f"backend returned HTTP {response.status_code}")
        return response.json()

    def analyze_image(self, image_ref: str, prompt_context: str = "") -> MealAnalysis:
        doc = self._post(
            {"role": self.role, "kind": "analyze_image", "image_ref": image_ref,
             "prompt_context": prompt_context}
        )
        return MealAnalysis(
            items=[FoodItem(n, m, bool(o)) for n, m, o in doc.get("items", [])],
            nutrients=NutrientVector.from_dict(self.schema, doc.get("nutrients", {})),
            confidence=float(doc.get("confidence", 0.0)),
            used_reference_object=bool(doc.get("used_reference_object", False)),
        )

    def estimate_from_text(self, text: str) -> MealAnalysis | None:
        doc = self._post({"role": self.role, "kind": "estimate_text", "text": text})
        if not doc.get("nutrients"):
            return None
        return MealAnalysis(
            items=[FoodItem(n, m, bool(o)) for n, m, o in doc.get("items", [])],
            nutrients=NutrientVector.from_dict(self.schema, doc["nutrients"]),
            confidence=float(doc.get("confidence", 0.0)),
        )

    def complete_text(self, prompt: str) -> str:
        if not prompt:
            raise ContractViolation("prompt must be non-empty")
        doc = self._post({"role": self.role, "kind": "complete", "prompt": prompt})
        return doc.get("completion", "")


def backend_analyze_image(backend, image_ref: str, prompt_context: str = "") -> MealAnalysis:
    if getattr(backend, "role", None) != "vision":
        raise ContractViolation("image analysis requires a vision-role backend")
    return backend.analyze_image(image_ref, prompt_context)


def backend_complete_text(backend, prompt: str) -> str:
    if getattr(backend, "role", None) not in ("dialog", "controller_assist", "file_assist"):
        raise ContractViolation("text completion requires a text-role backend")
    return backend.complete_text(prompt)


@lru_cache(maxsize=1)
def load_default_meal_fixture() -> MockVisionFixture:
    return MockVisionFixture.load()
