"""Document round-trips, atomicity, and corruption reporting."""

from __future__ import annotations

import datetime as dt
import json
import os

import pytest

from memorybank import MemoryBankEngine
from memorybank.core import UTC
from memorybank.errors import (
    CorruptDocumentError,
    DocumentNotFoundError,
    StorageIOError,
    VersionMismatchError,
)
from memorybank.persistence import (
    load_user,
    render_document,
    save_user,
    user_document_path,
)
from memorybank.retrieval import HashingEmbedder

from conftest import T0, at, build_random_memory


def populated_engine(tmp_path, autosave=True) -> MemoryBankEngine:
    engine = MemoryBankEngine(data_dir=tmp_path, autosave=autosave)
    engine.append_turn("ada", "I am stressed about the exam.", "breathe deeply", T0)
    engine.append_turn("ada", "Also the garden needs work.", "weekend project!", at(minutes=30))
    engine.consolidate("ada")
    engine.chat("ada", "what did I say about the exam?", at(days=2))
    return engine


class TestRoundTrip:
    def test_save_then_load_equal(self, tmp_path):
        engine = populated_engine(tmp_path)
        memory = engine._get("ada")
        save_user(memory, tmp_path)
        loaded = load_user(tmp_path, "ada")
        assert loaded == memory

    def test_double_save_byte_identical(self, tmp_path):
        engine = populated_engine(tmp_path)
        memory = engine._get("ada")
        path1 = save_user(memory, tmp_path)
        first = path1.read_bytes()
        path2 = save_user(memory, tmp_path)
        assert path1 == path2
        assert path2.read_bytes() == first

    def test_random_memories_round_trip(self, tmp_path):
        for seed in range(25):
            engine = MemoryBankEngine(data_dir=tmp_path)
            user = f"user{seed}"
            build_random_memory(engine, user, seed)
            memory = engine._get(user)
            save_user(memory, tmp_path)
            assert load_user(tmp_path, user) == memory

    def test_unicode_and_float_fidelity(self, tmp_path):
        engine = MemoryBankEngine(data_dir=tmp_path, embedder=HashingEmbedder(dim=16))
        engine.append_turn("ada", "雨が降っています — tiny détour", "noted", T0)
        memory = engine._get("ada")
        save_user(memory, tmp_path)
        loaded = load_user(tmp_path, "ada")
        assert loaded.embeddings == memory.embeddings
        assert loaded.turns[0].user_text == "雨が降っています — tiny détour"


class TestErrors:
    def test_missing_document(self, tmp_path):
        with pytest.raises(DocumentNotFoundError):
            load_user(tmp_path, "ghost")

    def test_truncated_file_is_corrupt(self, tmp_path):
        engine = populated_engine(tmp_path)
        path = save_user(engine._get("ada"), tmp_path)
        path.write_text(path.read_text(encoding="utf-8")[:80], encoding="utf-8")
        with pytest.raises(CorruptDocumentError):
            load_user(tmp_path, "ada")

    def test_version_mismatch(self, tmp_path):
        engine = populated_engine(tmp_path)
        path = save_user(engine._get("ada"), tmp_path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        doc["schema_version"] = 2
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(VersionMismatchError) as err:
            load_user(tmp_path, "ada")
        assert err.value.found == 2

    def test_corrupt_reports_field_path(self, tmp_path):
        engine = populated_engine(tmp_path)
        path = save_user(engine._get("ada"), tmp_path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        doc["pieces"][0]["kind"] = "nonsense"
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(CorruptDocumentError) as err:
            load_user(tmp_path, "ada")
        assert "$.pieces[0].kind" in str(err.value)

    def test_unwritable_location(self, tmp_path):
        blocker = tmp_path / "users"
        blocker.write_text("a regular file where the directory should be")
        engine = MemoryBankEngine()
        engine.append_turn("ada", "hello", "", T0)
        with pytest.raises(StorageIOError) as err:
            save_user(engine._get("ada"), tmp_path)
        assert "ada" in str(err.value)

    def test_invariant_violation_is_corrupt(self, tmp_path):
        engine = populated_engine(tmp_path)
        path = save_user(engine._get("ada"), tmp_path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        doc["turns"][0]["user_text"] = "tampered so piece text mismatches"
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(CorruptDocumentError):
            load_user(tmp_path, "ada")


class TestAtomicity:
    def test_crash_between_tmp_write_and_rename(self, tmp_path, monkeypatch):
        engine = populated_engine(tmp_path, autosave=False)
        memory = engine._get("ada")
        path = save_user(memory, tmp_path)
        original = path.read_bytes()

        engine.append_turn("ada", "newer turn that will be lost", "", at(days=3))

        def crash(src, dst):
            raise OSError("simulated crash before rename")

        monkeypatch.setattr(os, "replace", crash)
        with pytest.raises(StorageIOError):
            save_user(memory, tmp_path)
        monkeypatch.undo()

        assert path.read_bytes() == original
        loaded = load_user(tmp_path, "ada")
        assert len(loaded.turns) == 3  # the pre-crash state

    def test_no_stray_temp_visible_via_loader(self, tmp_path):
        engine = populated_engine(tmp_path)
        save_user(engine._get("ada"), tmp_path)
        stray = user_document_path(tmp_path, "ada").with_name(".ada.memjson.tmp")
        stray.write_text("garbage")
        assert load_user(tmp_path, "ada").user_id == "ada"


class TestEmbedderIdentity:
    def test_identity_recorded(self, tmp_path):
        engine = populated_engine(tmp_path)
        memory = engine._get("ada")
        assert memory.embedder_identity == "hashing-384"
        text = render_document(memory)
        assert '"embedder_identity": "hashing-384"' in text

    def test_mismatched_identity_triggers_rebuild(self, tmp_path):
        engine = populated_engine(tmp_path)
        engine.save_user("ada")

        other = MemoryBankEngine(data_dir=tmp_path, embedder=HashingEmbedder(dim=64))
        hits = other.search("ada", "stressed exam")
        assert hits  # still searchable after re-embedding
        memory = other._get("ada")
        assert memory.embedder_identity == "hashing-64"
        assert all(vec.dim == 64 for vec in memory.embeddings.values())

    def test_matching_identity_reuses_vectors(self, tmp_path):
        engine = populated_engine(tmp_path)
        engine.save_user("ada")
        stored = {pid: vec for pid, vec in engine._get("ada").embeddings.items()}

        fresh = MemoryBankEngine(data_dir=tmp_path)
        memory = fresh._get("ada")
        assert memory.embeddings == stored
