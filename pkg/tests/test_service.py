"""Prompt composition, the chat pipeline, HTTP endpoints, and config."""

from __future__ import annotations

import datetime as dt

import pytest
from fastapi.testclient import TestClient

from memorybank import MemoryBankEngine
from memorybank.config import ServiceConfig, build_engine, load_config
from memorybank.core import UTC, UserMemory
from memorybank.engine import DEFAULT_TOP_K
from memorybank.errors import (
    AdapterUnavailableError,
    EmptyTextError,
    InvalidConfigError,
)
from memorybank.fixtures import (
    PROBE_QUESTION,
    STRESS_USER_TEXT,
    probe_time,
    seed_demo_user,
)
from memorybank.prompts import compose_prompt
from memorybank.retrieval import SearchHit
from memorybank.service import create_app
from memorybank.summarization import load_templates

from conftest import T0, at


class FailingAdapter:
    identity = "failing"

    def complete(self, prompt: str) -> str:
        raise AdapterUnavailableError("backend down")


def memory_with_hits(texts):
    memory = UserMemory(user_id="u")
    hits = []
    for i, text in enumerate(texts, start=1):
        memory.append_turn(text, f"reply {i}", T0 + dt.timedelta(minutes=i))
        pid = memory.turns[-1].turn_id
        hits.append(SearchHit(piece_id=pid, score=1.0 - i * 0.01, rank=i))
    return memory, hits


class TestComposePrompt:
    def test_new_user_only_dialogue_and_query(self):
        composed = compose_prompt(UserMemory(user_id="u"), [], "", "hello there")
        assert [name for name, _ in composed.sections] == ["user_query"]
        assert "hello there" in composed.rendered
        headers = load_templates("en").headers
        assert headers["retrieved_memory"] not in composed.rendered
        assert headers["global_portrait"] not in composed.rendered

    def test_sections_in_fixed_order_each_once(self):
        memory, hits = memory_with_hits(["remembered fact X"])
        memory.global_portrait = "portrait P"
        memory.global_events = "summary G"
        composed = compose_prompt(memory, hits, "current dialogue line", "the query")
        names = [name for name, _ in composed.sections]
        assert names == [
            "retrieved_memory",
            "global_portrait",
            "global_event_summary",
            "current_dialogue",
            "user_query",
        ]
        rendered = composed.rendered
        for needle in ("User: remembered fact X", "portrait P", "summary G"):
            assert rendered.count(needle) == 1
        assert rendered.index("remembered fact X") < rendered.index("portrait P")
        assert rendered.index("portrait P") < rendered.index("summary G")

    def test_budget_drops_lowest_rank_first(self):
        memory, hits = memory_with_hits([f"hit number {i} " + "x" * 120 for i in range(10)])
        composed = compose_prompt(memory, hits, "", "the query", budget=600)
        assert composed.dropped_hits > 0
        assert "hit number 0" in composed.rendered  # rank-1 always kept
        kept = [name for name, _ in composed.sections]
        assert "retrieved_memory" in kept
        assert len(composed.rendered) <= 600

    def test_rank_one_retained_even_when_over_budget(self):
        memory, hits = memory_with_hits(["y" * 500])
        composed = compose_prompt(memory, hits, "", "q", budget=100)
        assert composed.dropped_hits == 0
        assert "y" * 500 in composed.rendered

    def test_total_function_on_empty_everything(self):
        composed = compose_prompt(UserMemory(user_id="u"), [], "", "")
        assert composed.sections == []
        assert composed.rendered == ""


class TestChatPipeline:
    def test_demo_probe_ranks_stress_piece_first(self, engine):
        stress_id = seed_demo_user(engine)
        result = engine.chat("gary", PROBE_QUESTION, probe_time())
        assert result.used_memory[0].piece_id == stress_id
        assert result.used_memory[0].rank == 1
        piece = engine.get_piece("gary", stress_id)
        assert piece.forgetting.strength == 2
        assert piece.forgetting.last_recall_at == probe_time()
        assert STRESS_USER_TEXT.split(".")[0] in result.reply

    def test_used_memory_equals_reinforced_set(self, engine):
        seed_demo_user(engine)
        result = engine.chat("gary", PROBE_QUESTION, probe_time())
        used = {hit.piece_id for hit in result.used_memory}
        for piece in engine.enumerate_pieces("gary"):
            if piece.piece_id in used:
                assert piece.forgetting.strength == 2
            elif piece.kind.value == "turn" and "relieve stress" not in piece.text:
                assert piece.forgetting.strength == 1

    def test_empty_message_rejected_without_state_change(self, engine):
        seed_demo_user(engine)
        before = len(engine.enumerate_pieces("gary"))
        with pytest.raises(EmptyTextError):
            engine.chat("gary", "   ", probe_time())
        assert len(engine.enumerate_pieces("gary")) == before

    def test_adapter_failure_appends_nothing(self):
        engine = MemoryBankEngine(llm=FailingAdapter())
        engine.append_turn("ada", "hello world", "hi", T0)
        with pytest.raises(AdapterUnavailableError):
            engine.chat("ada", "are you there?", at(days=1))
        assert len(engine.day_log("ada", at(days=1).date())) == 0

    def test_chat_appends_exchange(self, engine):
        result = engine.chat("newbie", "first ever message", T0)
        log = engine.day_log("newbie", T0.date())
        assert len(log) == 1
        assert log[0].ai_text == result.reply

    def test_session_context_included_within_gap(self, engine):
        engine.chat("ada", "my dog is named Biscuit", T0)
        result = engine.chat("ada", "what a good name", at(minutes=5))
        names = [name for name, _ in result.prompt.sections]
        assert "current_dialogue" in names

    def test_no_stale_context_after_gap(self, engine):
        engine.chat("ada", "my dog is named Biscuit", T0)
        result = engine.chat("ada", "hello again", at(days=2))
        names = [name for name, _ in result.prompt.sections]
        assert "current_dialogue" not in names

    def test_store_turn_false_keeps_log(self, engine):
        seed_demo_user(engine)
        before = len(engine.enumerate_pieces("gary"))
        engine.chat("gary", PROBE_QUESTION, probe_time(), store_turn=False)
        assert len(engine.enumerate_pieces("gary")) == before

    def test_portrait_returned(self, engine):
        seed_demo_user(engine)
        result = engine.chat("gary", PROBE_QUESTION, probe_time())
        assert "stressed" in result.portrait

    def test_restart_preserves_chat_behavior(self, tmp_path):
        seeding = MemoryBankEngine(data_dir=tmp_path)
        seed_demo_user(seeding)

        # Same request sequence against two fresh loads of one snapshot.
        def run_sequence():
            engine = MemoryBankEngine(data_dir=tmp_path, autosave=False)
            first = engine.chat("gary", PROBE_QUESTION, probe_time())
            second = engine.chat("gary", "and what about my sleep?", probe_time(hour=11))
            return first, second

        a1, a2 = run_sequence()
        b1, b2 = run_sequence()
        assert [h.piece_id for h in a1.used_memory] == [h.piece_id for h in b1.used_memory]
        assert [h.piece_id for h in a2.used_memory] == [h.piece_id for h in b2.used_memory]
        assert (a1.reply, a2.reply) == (b1.reply, b2.reply)


class TestRetentionWeighting:
    def test_weighting_prefers_fresh_pieces(self):
        engine = MemoryBankEngine()
        engine.append_turn("ada", "the harbor lantern glows", "", T0)
        engine.append_turn("ada", "the harbor lantern glows", "", at(days=9))
        old_id, new_id = [p.piece_id for p in engine.enumerate_pieces("ada")]
        now = at(days=10)
        plain = engine.search("ada", "harbor lantern", now=now)
        weighted = engine.search("ada", "harbor lantern", now=now, weight_by_retention=True)
        # identical similarity: tie-break gives the older piece first
        assert plain[0].piece_id == old_id
        # retention multiplies the fresher piece ahead
        assert weighted[0].piece_id == new_id
        assert weighted[0].score < plain[0].score

    def test_sweep_removes_from_retrieval(self, engine):
        engine.append_turn("ada", "ancient fact", "", T0)
        engine.append_turn("ada", "ancient fact", "", T0 + dt.timedelta(seconds=1))
        engine.sweep_user("ada", at(days=500))
        assert engine.search("ada", "ancient fact") == []


@pytest.fixture
def client(tmp_path):
    engine = MemoryBankEngine(data_dir=tmp_path)
    seed_demo_user(engine)
    app = create_app(engine)
    return TestClient(app)


class TestHttpApi:
    def test_healthz(self, client):
        assert client.get("/v1/healthz").json() == {"status": "ok"}

    def test_ingest_turn(self, client):
        resp = client.post(
            "/v1/users/zoe/turns",
            json={"user_text": "hi", "ai_text": "hello", "at": "2023-05-02T10:00:00+00:00"},
        )
        assert resp.status_code == 201
        body = resp.json()
        assert body["turn_id"] == body["piece_id"]

    def test_ingest_empty_text_is_422(self, client):
        resp = client.post("/v1/users/zoe/turns", json={"user_text": "  ", "ai_text": ""})
        assert resp.status_code == 422

    def test_non_monotonic_is_409(self, client):
        client.post(
            "/v1/users/zoe/turns",
            json={"user_text": "later", "ai_text": "", "at": "2023-06-01T00:00:00+00:00"},
        )
        resp = client.post(
            "/v1/users/zoe/turns",
            json={"user_text": "earlier", "ai_text": "", "at": "2023-05-01T00:00:00+00:00"},
        )
        assert resp.status_code == 409
        assert resp.json()["error"] == "NonMonotonicTimestampError"

    def test_chat_probe_via_http(self, client):
        resp = client.post(
            "/v1/users/gary/chat",
            json={"message": PROBE_QUESTION, "at": probe_time().isoformat()},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["used_memory"][0]["piece_id"] == "turn-00000001"
        assert body["used_memory"][0]["rank"] == 1
        assert body["used_memory"][0]["strength"] == 2
        assert body["used_memory"][0]["retention"] == 1.0
        assert "stressed" in body["portrait"]

    def test_search_endpoint(self, client):
        resp = client.get(
            "/v1/users/gary/memory/search",
            params={"q": "relieve stress", "k": 3, "at": probe_time().isoformat()},
        )
        assert resp.status_code == 200
        hits = resp.json()["hits"]
        assert hits[0]["piece_id"] == "turn-00000001"
        assert len(hits) <= 3

    def test_unknown_user_404(self, client):
        assert client.get("/v1/users/ghost/portrait").status_code == 404

    def test_consolidate_and_summaries(self, client):
        client.post(
            "/v1/users/zoe/turns",
            json={"user_text": "I am happy about my garden.", "ai_text": "lovely",
                  "at": "2023-05-02T10:00:00+00:00"},
        )
        resp = client.post("/v1/users/zoe/consolidate")
        assert resp.status_code == 200
        assert resp.json()["days"] == ["2023-05-02"]
        portrait = client.get("/v1/users/zoe/portrait").json()
        assert "happy" in portrait["global_portrait"]
        summary = client.get("/v1/users/zoe/summary/global").json()
        assert "garden" in summary["global_events"]

    def test_pieces_and_curve(self, client):
        pieces = client.get(
            "/v1/users/gary/pieces", params={"at": probe_time().isoformat()}
        ).json()["pieces"]
        assert any(p["kind"] == "daily_event_summary" for p in pieces)
        first = pieces[0]["piece_id"]
        curve = client.get(
            f"/v1/users/gary/pieces/{first}/curve",
            params={"points": 10, "at": probe_time().isoformat()},
        ).json()
        assert len(curve["samples"]) >= 10
        assert curve["samples"][0]["retention"] == 1.0
        missing = client.get("/v1/users/gary/pieces/nope/curve")
        assert missing.status_code == 404

    def test_admin_sweep(self, client):
        resp = client.post("/v1/admin/sweep", json={"now": "2024-06-01T00:00:00+00:00"})
        assert resp.status_code == 200
        forgotten = resp.json()["forgotten"]
        assert forgotten["gary"]  # year-old pieces decay below 0.05

    def test_users_listing(self, client):
        assert "gary" in client.get("/v1/users").json()["users"]


class TestConfig:
    def test_defaults_validate(self):
        config = load_config()
        assert config.top_k == DEFAULT_TOP_K
        assert config.language == "en"

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "svc.conf"
        path.write_text(
            "# deployment\n"
            "top_k = 4\n"
            "decay_threshold = 0.2\n"
            "language = zh\n"
            "timezone = Asia/Shanghai\n",
            encoding="utf-8",
        )
        config = load_config(path, {"top_k": 9})
        assert config.top_k == 9  # override wins
        assert config.decay_threshold == 0.2
        assert config.language == "zh"

    def test_invalid_values_report_fields(self, tmp_path):
        path = tmp_path / "svc.conf"
        path.write_text("top_k = 0\ndecay_mode = whenever\n", encoding="utf-8")
        with pytest.raises(InvalidConfigError) as err:
            load_config(path)
        message = str(err.value)
        assert "top_k" in message
        assert "decay_mode" in message

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "svc.conf"
        path.write_text("mystery = 1\n", encoding="utf-8")
        with pytest.raises(InvalidConfigError):
            load_config(path)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "svc.conf"
        path.write_text("just some words\n", encoding="utf-8")
        with pytest.raises(InvalidConfigError):
            load_config(path)

    def test_bad_type_rejected(self, tmp_path):
        path = tmp_path / "svc.conf"
        path.write_text("top_k = lots\n", encoding="utf-8")
        with pytest.raises(InvalidConfigError):
            load_config(path)

    def test_build_engine_wires_policy(self, tmp_path):
        config = load_config(
            None,
            {
                "data_dir": str(tmp_path),
                "decay_mode": "stochastic",
                "decay_seed": 11,
                "top_k": 3,
                "time_unit_hours": 12.0,
            },
        )
        engine = build_engine(config)
        assert engine.policy.mode == "stochastic"
        assert engine.policy.rng_seed == 11
        assert engine.policy.time_unit == dt.timedelta(hours=12)
        assert engine.top_k == 3

    def test_env_api_key_used(self, monkeypatch):
        monkeypatch.setenv("MEMORYBANK_LLM_API_KEY", "sekret")
        config = ServiceConfig(llm_kind="remote", llm_endpoint="http://lm.local", llm_model="m")
        config.validate()
        engine = build_engine(config)
        assert engine.llm.api_key == "sekret"
