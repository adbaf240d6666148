import datetime as dt
import json

import pytest
from fastapi.testclient import TestClient

from nutriloop.api import ServiceContext, create_app
from nutriloop.agents import Orchestrator, load_default_catalog, load_default_policy_table
from nutriloop.backends import MockTextBackend, MockVisionBackend
from nutriloop.config import AppConfig
from nutriloop.store import FileStateStore

TOKEN = {"x-api-token": "test-token"}
DATE = "2025-06-02"


@pytest.fixture
def service(tmp_path, schema, reference, meal_fixture, profile):
    config = AppConfig(store_root=str(tmp_path / "store"), api_token="test-token")
    store = FileStateStore(config.store_root, schema, reference)
    store.write_profile(profile)
    backends = {
        "vision": MockVisionBackend(meal_fixture, blob_reader=store.get_blob),
        "dialog": MockTextBackend("dialog"),
    }
    orchestrator = Orchestrator(
        store, reference, backends, load_default_policy_table(), load_default_catalog()
    )
    ctx = ServiceContext(config=config, store=store, orchestrator=orchestrator)
    client = TestClient(create_app(ctx))
    yield client, ctx
    ctx.close()


def _log_meal(client, meal_id="m1", image_key="img-001", text="my lunch",
              mealtime="lunch", date=DATE):
    meta = {"date": date, "mealtime": mealtime, "meal_id": meal_id, "text": text}
    files = {}
    if image_key:
        files["image"] = (f"{image_key}.jpg", f"fixture:{image_key}".encode(), "image/jpeg")
    return client.post(
        "/users/u1/meals", data={"meta": json.dumps(meta)}, files=files or None,
        headers=TOKEN,
    )


class TestAuth:
    def test_missing_token_is_401(self, service):
        client, _ctx = service
        assert client.get("/users/u1/plan").status_code == 401

    def test_health_is_open(self, service):
        client, _ctx = service
        assert client.get("/health").status_code == 200


class TestMealLogging:
    def test_meal_log_reduces_remaining(self, service, meal_fixture):
        client, _ctx = service
        plan_before = client.get(f"/users/u1/plan?date={DATE}", headers=TOKEN).json()
        remaining_before = plan_before["result"]["plan"]["remaining_core"]

        response = _log_meal(client)
        assert response.status_code == 200
        body = response.json()
        assert body["result"]["meal_id"] == "m1"
        truth = meal_fixture.ground_truth("img-001")
        remaining_after = body["result"]["remaining_core"]
        for name in ("energy", "protein", "carbohydrate", "fiber", "sodium"):
            expected = remaining_before[name] - truth.get(name)
            assert remaining_after[name] == pytest.approx(expected, abs=1e-6)

    def test_duplicate_meal_id_409_state_unchanged(self, service):
        client, ctx = service
        assert _log_meal(client).status_code == 200
        plan_state = ctx.store.read_plan("u1", dt.date.fromisoformat(DATE)).to_dict()
        response = _log_meal(client)
        assert response.status_code == 409
        assert response.json()["error"]["code"] == "duplicate"
        assert ctx.store.read_plan("u1", dt.date.fromisoformat(DATE)).to_dict() == plan_state

    def test_text_only_meal(self, service):
        client, _ctx = service
        response = _log_meal(client, meal_id="m2", image_key=None, text="a banana")
        assert response.status_code == 200
        assert response.json()["result"]["source"] == "text_only"

    def test_unknown_user_404(self, service):
        client, _ctx = service
        meta = {"date": DATE, "mealtime": "lunch", "text": "hello"}
        response = client.post("/users/ghost/meals", data={"meta": json.dumps(meta)},
                               headers=TOKEN)
        assert response.status_code == 404

    def test_malformed_meta_400(self, service):
        client, _ctx = service
        response = client.post("/users/u1/meals", data={"meta": "{not json"}, headers=TOKEN)
        assert response.status_code == 400

    def test_backend_failure_502_retriable(self, service, meal_fixture):
        client, ctx = service
        ctx.orchestrator.backends["vision"] = MockVisionBackend(meal_fixture, fail_times=5)
        response = _log_meal(client, meal_id="m9")
        assert response.status_code == 502
        assert response.json()["error"]["retriable"] is True

    def test_clarification_flow(self, service):
        client, _ctx = service
        response = _log_meal(client, meal_id="m request", image_key="blurry-001",
                             text="mystery stew")
        assert response.status_code == 200
        assert "clarification" in response.json()["result"]


class TestPlanView:
    def test_new_day_auto_creates(self, service, reference):
        client, _ctx = service
        response = client.get(f"/users/u1/plan?date={DATE}", headers=TOKEN)
        assert response.status_code == 200
        plan = response.json()["result"]["plan"]
        assert plan["consumed"] == {}
        assert plan["targets"]["energy"] == 2000.0
        assert plan["meals_remaining"] == ["breakfast", "lunch", "dinner"]

    def test_after_meal_consumed_matches(self, service, meal_fixture):
        client, _ctx = service
        _log_meal(client)
        plan = client.get(f"/users/u1/plan?date={DATE}", headers=TOKEN).json()["result"]["plan"]
        assert plan["consumed"]["energy"] == pytest.approx(
            meal_fixture.ground_truth("img-001").get("energy")
        )
        assert plan["meals_logged"] == ["m1"]

    def test_past_date_with_no_data_404(self, service):
        client, _ctx = service
        client.get(f"/users/u1/plan?date={DATE}", headers=TOKEN)
        response = client.get("/users/u1/plan?date=2025-06-01", headers=TOKEN)
        assert response.status_code == 404

    def test_unknown_user_404(self, service):
        client, _ctx = service
        assert client.get("/users/ghost/plan", headers=TOKEN).status_code == 404


class TestRecommendation:
    def test_allergy_filter_end_to_end(self, service, catalog, profile):
        client, ctx = service
        profile.allergies = {"seafood"}
        ctx.store.write_profile(profile)
        response = client.post("/users/u1/recommendation", json={"date": DATE}, headers=TOKEN)
        assert response.status_code == 200
        items = response.json()["result"]["recommendation"]["items"]
        for item in items:
            assert "seafood" not in catalog.get(item["name"]).allergens

    def test_exhausted_plan_409_with_advisory(self, service):
        client, ctx = service
        plan = ctx.orchestrator.ensure_plan("u1", dt.date.fromisoformat(DATE))
        plan.meals_remaining = []
        ctx.store.update_plan_status(plan)
        response = client.post("/users/u1/recommendation", json={"date": DATE}, headers=TOKEN)
        assert response.status_code == 409
        assert "advisory" in response.json()["error"]["payload"]

    def test_sparse_data_flagged(self, service):
        client, _ctx = service
        response = client.post("/users/u1/recommendation", json={"date": DATE}, headers=TOKEN)
        assert response.json()["result"]["recommendation"]["conservative"] is True


class TestChat:
    def test_general_question_zero_worker_steps(self, service):
        client, _ctx = service
        response = client.post("/chat", json={"text": "what is vitamin D?"}, headers=TOKEN)
        assert response.status_code == 200
        body = response.json()
        assert body["trace"]["executed_count"] == 0
        assert body["result"]["text"]

    def test_personal_request_routed_to_meal_flow(self, service):
        client, _ctx = service
        response = client.post(
            "/chat",
            json={"text": "log my lunch: a banana", "user_id": "u1", "date": DATE},
            headers=TOKEN,
        )
        assert response.status_code == 200
        body = response.json()
        assert body["trace"]["request_class"] == "meal_log"
        assert body["result"]["source"] == "text_only"

    def test_personal_request_without_user_400(self, service):
        client, _ctx = service
        response = client.post("/chat", json={"text": "log my lunch: a banana"}, headers=TOKEN)
        assert response.status_code == 400

    def test_empty_body_400(self, service):
        client, _ctx = service
        assert client.post("/chat", json={"text": "  "}, headers=TOKEN).status_code == 400


class TestProfileEndpoints:
    def test_round_trip(self, service, profile):
        client, _ctx = service
        got = client.get("/users/u1/profile", headers=TOKEN).json()["result"]["profile"]
        assert got["life_stage"] == "19-30 y"
        got["allergies"] = ["seafood"]
        put = client.put("/users/u1/profile", json=got, headers=TOKEN)
        assert put.status_code == 200
        again = client.get("/users/u1/profile", headers=TOKEN).json()["result"]["profile"]
        assert again["allergies"] == ["seafood"]

    def test_invalid_weight_sum_rejected(self, service):
        client, _ctx = service
        got = client.get("/users/u1/profile", headers=TOKEN).json()["result"]["profile"]
        got["meal_habits"] = [["breakfast", 0.5], ["lunch", 0.4]]
        response = client.put("/users/u1/profile", json=got, headers=TOKEN)
        assert response.status_code == 400
        assert "sum" in response.json()["error"]["message"]

    def test_profile_edit_changes_next_recommendation(self, service, catalog):
        client, _ctx = service
        got = client.get("/users/u1/profile", headers=TOKEN).json()["result"]["profile"]
        got["allergies"] = ["seafood", "dairy", "gluten"]
        client.put("/users/u1/profile", json=got, headers=TOKEN)
        response = client.post("/users/u1/recommendation", json={"date": DATE}, headers=TOKEN)
        for item in response.json()["result"]["recommendation"]["items"]:
            assert not catalog.get(item["name"]).allergens & {"seafood", "dairy", "gluten"}


class TestEnvelope:
    def test_timestamps_and_request_id(self, service):
        client, _ctx = service
        response = client.get(f"/users/u1/plan?date={DATE}", headers=TOKEN,
                              )
        body = response.json()
        assert body["request_id"].startswith("req-")
        assert body["tau_in"] < body["tau_out"]
        assert body["latency_s"] == pytest.approx(body["tau_out"] - body["tau_in"])

    def test_trace_steps_within_envelope_interval(self, service):
        client, _ctx = service
        response = _log_meal(client, meal_id="t1", image_key="img-010")
        body = response.json()
        assert body["trace"]["executed_count"] == 3
        assert body["tau_in"] < body["tau_out"]

    def test_client_request_id_echoed(self, service):
        client, _ctx = service
        response = client.get(f"/users/u1/plan?date={DATE}",
                              headers={**TOKEN, "x-request-id": "my-id-7"})
        assert response.json()["request_id"] == "my-id-7"
