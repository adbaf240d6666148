"""HTTP boundary: meal logging, plan status, recommendations and chat.

Every response is wrapped in an envelope carrying the request id and the
server-side timestamps: tau_in is stamped when the request is received,
tau_out when the response payload is serialized, and their difference is the
end-to-end latency the evaluation harness measures.
"""

from __future__ import annotations

import datetime as dt
import json
import time
import uuid
from dataclasses import dataclass

from fastapi import Depends, FastAPI, File, Form, Header, Request, UploadFile
from fastapi.responses import Response

from .agents import (
    DIRECT_CLASSES,
    AgentMessage,
    FoodCatalog,
    Orchestrator,
    RequestClass,
    WorkflowPolicyTable,
    WorkflowResult,
    WorkflowTrace,
    classify_request,
    direct_answer,
    load_default_catalog,
    load_default_policy_table,
)
from .backends import MockTextBackend, MockVisionBackend, MockVisionFixture, RemoteBackend
from .config import AppConfig
from .dri import build_default_reference
from .errors import ContractViolation, NotFoundError
from .nutrients import load_default_schema
from .planning import AdjustmentPolicy
from .records import UserProfile, validate_profile
from .store import FileStateStore

_ERROR_STATUS = {
    "duplicate": 409,
    "plan_exhausted": 409,
    "not_found": 404,
    "backend_failure": 502,
    "contract": 400,
    "integrity": 500,
}


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, retriable: bool = False):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.retriable = retriable


@dataclass
class ServiceContext:
    config: AppConfig
    store: FileStateStore
    orchestrator: Orchestrator

    def close(self) -> None:
        self.store.close()


def build_context(config: AppConfig | None = None) -> ServiceContext:
    config = config or AppConfig()
    schema = load_default_schema()
    ref = build_default_reference()
    store = FileStateStore(config.store_root, schema, ref)
    fixture = MockVisionFixture.load(config.meal_fixture_path)
    if config.backend_mode == "mock":
        backends = {
            "vision": MockVisionBackend(
                fixture, delay_s=config.backend_delay_s, blob_reader=store.get_blob
            ),
            "dialog": MockTextBackend("dialog", delay_s=config.backend_delay_s),
        }
    else:
        if not config.remote_endpoint:
            raise ContractViolation("remote backend mode requires remote_endpoint")
        backends = {
            "vision": RemoteBackend("vision", config.remote_endpoint,
                                    config.remote_credential_env),
            "dialog": RemoteBackend("dialog", config.remote_endpoint,
                                    config.remote_credential_env),
        }
    catalog = FoodCatalog.load(config.catalog_path) if config.catalog_path else load_default_catalog()
    policy_table = (
        WorkflowPolicyTable.load(config.policy_table_path)
        if config.policy_table_path else load_default_policy_table()
    )
    adjustment = AdjustmentPolicy(
        s=config.adjust_direction, k=config.adjust_window_days,
        alpha=config.adjust_gain, clamp_frac=config.adjust_clamp_frac,
        epsilon=config.adjust_epsilon,
    )
    orchestrator = Orchestrator(
        store, ref, backends, policy_table, catalog,
        adjustment=adjustment, confidence_threshold=config.confidence_threshold,
    )
    return ServiceContext(config=config, store=store, orchestrator=orchestrator)


def _envelope(request_id: str, tau_in: float, result: WorkflowResult,
              trace: WorkflowTrace | None = None) -> Response:
    """Assemble the response document; tau_out is the serialization stamp."""
    body: dict = {"request_id": request_id, "tau_in": tau_in}
    status = 200
    if result.ok:
        body["result"] = result.payload
    else:
        status = _ERROR_STATUS.get(result.error_code or "", 500)
        body["error"] = {
            "code": result.error_code,
            "message": result.payload.get("detail") or result.payload.get("advisory")
            or "request failed",
            "retriable": result.retriable,
        }
        if result.payload:
            body["error"]["payload"] = result.payload
    tau_out = time.perf_counter()
    if trace is not None:
        trace.tau_out = tau_out
        body["trace"] = {
            "request_class": trace.request_class.value,
            "executed_count": trace.executed_count,
            "steps": [{"role": s.role, "action": s.action, "ok": s.ok} for s in trace.steps],
        }
    body["tau_out"] = tau_out
    body["latency_s"] = tau_out - tau_in
    return Response(content=json.dumps(body), status_code=status, media_type="application/json")


def create_app(ctx: ServiceContext) -> FastAPI:
    app = FastAPI(title="nutriloop", version="0.1.0")
    orchestrator = ctx.orchestrator
    store = ctx.store

    def check_token(x_api_token: str = Header(default="")):
        if x_api_token != ctx.config.api_token:
            raise ApiError(401, "unauthorized", "invalid or missing API token")

    @app.exception_handler(ApiError)
    async def _handle_api_error(request: Request, exc: ApiError):
        return Response(
            content=json.dumps(
                {
                    "request_id": getattr(request.state, "request_id", ""),
                    "error": {"code": exc.code, "message": exc.message,
                              "retriable": exc.retriable},
                }
            ),
            status_code=exc.status,
            media_type="application/json",
        )

    def _request_meta(request: Request) -> tuple[str, float]:
        tau_in = time.perf_counter()
        request_id = request.headers.get("x-request-id") or f"req-{uuid.uuid4().hex[:12]}"
        request.state.request_id = request_id
        return request_id, tau_in

    def _require_user(user_id: str) -> UserProfile:
        try:
            return store.read_profile(user_id)
        except NotFoundError:
            raise ApiError(404, "not_found", f"unknown user {user_id!r}")

    def _user_today(profile: UserProfile) -> dt.date:
        return dt.datetime.now(profile.tzinfo()).date()

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/users/{user_id}/meals", dependencies=[Depends(check_token)])
    async def log_meal(user_id: str, request: Request,
                       meta: str = Form(...),
                       image: UploadFile | None = File(default=None)):
        request_id, tau_in = _request_meta(request)
        profile = _require_user(user_id)
        try:
            doc = json.loads(meta)
            date = dt.date.fromisoformat(doc["date"]) if "date" in doc else _user_today(profile)
            msg = AgentMessage(
                user_id=user_id,
                date=date,
                mealtime=doc.get("mealtime", "lunch"),
                meal_id=doc.get("meal_id"),
                text=doc.get("text"),
                received_at=dt.datetime.now(dt.timezone.utc),
            )
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise ApiError(400, "malformed", f"bad meal meta: {exc}")
        if image is not None:
            msg.image_ref = store.put_blob(await image.read())
        if not msg.text and not msg.image_ref:
            raise ApiError(400, "malformed", "meal submission needs text or an image")
        result, trace = orchestrator.run_class(RequestClass.MEAL_LOG, msg, tau_in=tau_in)
        return _envelope(request_id, tau_in, result, trace)

    @app.get("/users/{user_id}/plan", dependencies=[Depends(check_token)])
    def plan_view(user_id: str, request: Request, date: str | None = None):
        request_id, tau_in = _request_meta(request)
        profile = _require_user(user_id)
        try:
            day = dt.date.fromisoformat(date) if date else _user_today(profile)
        except ValueError as exc:
            raise ApiError(400, "malformed", str(exc))
        try:
            plan = orchestrator.ensure_plan(user_id, day)
        except NotFoundError as exc:
            raise ApiError(404, "not_found", str(exc))
        result = WorkflowResult(ok=True, payload={"plan": orchestrator.plan_view(plan)})
        return _envelope(request_id, tau_in, result)

    @app.post("/users/{user_id}/recommendation", dependencies=[Depends(check_token)])
    def recommend(user_id: str, request: Request, body: dict | None = None):
        request_id, tau_in = _request_meta(request)
        profile = _require_user(user_id)
        body = body or {}
        try:
            date = dt.date.fromisoformat(body["date"]) if "date" in body else _user_today(profile)
        except ValueError as exc:
            raise ApiError(400, "malformed", str(exc))
        msg = AgentMessage(user_id=user_id, date=date, text="what should I eat next?")
        result, trace = orchestrator.run_class(
            RequestClass.NEXT_MEAL_RECOMMENDATION, msg, tau_in=tau_in
        )
        return _envelope(request_id, tau_in, result, trace)

    @app.post("/chat", dependencies=[Depends(check_token)])
    def chat(request: Request, body: dict):
        request_id, tau_in = _request_meta(request)
        text = (body or {}).get("text", "")
        if not text or not text.strip():
            raise ApiError(400, "malformed", "chat body must carry non-empty text")
        user_id = (body or {}).get("user_id")
        probe = AgentMessage(user_id=user_id or "anonymous", date=dt.date.today(), text=text)
        request_class = classify_request(probe)
        if request_class in DIRECT_CLASSES:
            result = WorkflowResult(ok=True, payload={"text": direct_answer(text),
                                                      "request_class": request_class.value})
            trace = WorkflowTrace(request_class=request_class, tau_in=tau_in)
            return _envelope(request_id, tau_in, result, trace)
        if not user_id:
            raise ApiError(400, "malformed",
                           "this request touches personal data; provide user_id")
        profile = _require_user(user_id)
        date_text = (body or {}).get("date")
        date = dt.date.fromisoformat(date_text) if date_text else _user_today(profile)
        msg = AgentMessage(
            user_id=user_id, date=date, mealtime=(body or {}).get("mealtime", "lunch"),
            text=text,
        )
        result, trace = orchestrator.run_class(request_class, msg, tau_in=tau_in)
        return _envelope(request_id, tau_in, result, trace)

    @app.get("/users/{user_id}/profile", dependencies=[Depends(check_token)])
    def get_profile(user_id: str, request: Request):
        request_id, tau_in = _request_meta(request)
        profile = _require_user(user_id)
        result = WorkflowResult(ok=True, payload={"profile": profile.to_dict()})
        return _envelope(request_id, tau_in, result)

    @app.put("/users/{user_id}/profile", dependencies=[Depends(check_token)])
    def put_profile(user_id: str, request: Request, body: dict):
        request_id, tau_in = _request_meta(request)
        try:
            doc = dict(body)
            doc["user_id"] = user_id
            profile = UserProfile.from_dict(doc)
        except (KeyError, ValueError, TypeError) as exc:
            raise ApiError(400, "malformed", f"bad profile document: {exc}")
        report = validate_profile(profile, orchestrator.ref)
        if not report.ok:
            raise ApiError(400, "invalid_profile", "; ".join(report.violations))
        seq = store.write_profile(profile)
        result = WorkflowResult(ok=True, payload={"profile": profile.to_dict(), "seq": seq})
        return _envelope(request_id, tau_in, result)

    return app


def create_default_app(config: AppConfig | None = None) -> FastAPI:
    return create_app(build_context(config))
