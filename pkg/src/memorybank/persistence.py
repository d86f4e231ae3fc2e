"""Durable on-disk form of a user's memory.

One self-contained text document per user at
``{data_dir}/users/{user_id}.memjson``: human-inspectable JSON with a
fixed field order and shortest round-trip float formatting, so
identical state always serializes to byte-identical files. Writes are
atomic (temp file + rename).
"""

from __future__ import annotations

import contextlib
import datetime as dt
import json
import os
import secrets
from pathlib import Path

from .core import (
    ConversationTurn,
    MemoryPiece,
    PieceKind,
    UserMemory,
    check_invariants,
)
from .errors import (
    CorruptDocumentError,
    DocumentNotFoundError,
    SerializationError,
    StorageIOError,
    VersionMismatchError,
)
from .forgetting import ForgettingState
from .retrieval import EmbeddingVector

SCHEMA_VERSION = 1
DOCUMENT_SUFFIX = ".memjson"


def user_document_path(data_dir: Path | str, user_id: str) -> Path:
    return Path(data_dir) / "users" / f"{user_id}{DOCUMENT_SUFFIX}"


def list_user_ids(data_dir: Path | str) -> list[str]:
    users_dir = Path(data_dir) / "users"
    if not users_dir.is_dir():
        return []
    return sorted(p.name[: -len(DOCUMENT_SUFFIX)] for p in users_dir.glob(f"*{DOCUMENT_SUFFIX}"))


def _turn_doc(turn: ConversationTurn) -> dict:
    return {
        "turn_id": turn.turn_id,
        "user_text": turn.user_text,
        "ai_text": turn.ai_text,
        "at": turn.at.isoformat(),
    }


def _piece_doc(piece: MemoryPiece, vector: EmbeddingVector | None) -> dict:
    return {
        "piece_id": piece.piece_id,
        "kind": piece.kind.value,
        "text": piece.text,
        "at": piece.at.isoformat(),
        "source_day": piece.source_day.isoformat(),
        "forgetting": {
            "strength": piece.forgetting.strength,
            "last_recall_at": piece.forgetting.last_recall_at.isoformat(),
            "created_at": piece.forgetting.created_at.isoformat(),
            "forgotten": piece.forgetting.forgotten,
        },
        "recalls": [r.isoformat() for r in piece.recalls],
        "embedding": None if vector is None else vector.to_list(),
    }


def render_document(memory: UserMemory) -> str:
    """Canonical JSON text for a user's memory."""
    pieces = sorted(memory.pieces.values(), key=lambda p: (p.at, p.piece_id))
    doc = {
        "schema_version": SCHEMA_VERSION,
        "user_id": memory.user_id,
        "turns": [_turn_doc(t) for t in memory.turns],
        "daily_events": {d.isoformat(): memory.daily_events[d] for d in sorted(memory.daily_events)},
        "global_events": memory.global_events,
        "daily_portraits": {
            d.isoformat(): memory.daily_portraits[d] for d in sorted(memory.daily_portraits)
        },
        "global_portrait": memory.global_portrait,
        "pieces": [_piece_doc(p, memory.embeddings.get(p.piece_id)) for p in pieces],
        "embedder_identity": memory.embedder_identity,
    }
    try:
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"
    except (TypeError, ValueError) as exc:
        raise SerializationError(f"cannot serialize memory for {memory.user_id}: {exc}") from exc


def save_user(memory: UserMemory, data_dir: Path | str) -> Path:
    """Write the user's document atomically; returns the path written."""
    path = user_document_path(data_dir, memory.user_id)
    text = render_document(memory)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{secrets.token_hex(4)}.tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        with contextlib.suppress(OSError):
            tmp.unlink(missing_ok=True)
        raise StorageIOError(path, exc) from exc
    return path


def _req(obj, key: str, kinds, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise CorruptDocumentError(f"{path}.{key}", "missing field")
    value = obj[key]
    if not isinstance(value, kinds):
        raise CorruptDocumentError(
            f"{path}.{key}", f"expected {kinds}, got {type(value).__name__}"
        )
    return value


def _parse_ts(value, path: str) -> dt.datetime:
    if not isinstance(value, str):
        raise CorruptDocumentError(path, "timestamp must be a string")
    try:
        parsed = dt.datetime.fromisoformat(value)
    except ValueError as exc:
        raise CorruptDocumentError(path, f"bad timestamp: {exc}") from exc
    if parsed.tzinfo is None:
        raise CorruptDocumentError(path, "timestamp lacks a UTC offset")
    return parsed


def _parse_day(value, path: str) -> dt.date:
    if not isinstance(value, str):
        raise CorruptDocumentError(path, "day must be a string")
    try:
        return dt.date.fromisoformat(value)
    except ValueError as exc:
        raise CorruptDocumentError(path, f"bad day: {exc}") from exc


def _parse_turn(doc, path: str) -> ConversationTurn:
    return ConversationTurn(
        turn_id=_req(doc, "turn_id", str, path),
        user_text=_req(doc, "user_text", str, path),
        ai_text=_req(doc, "ai_text", str, path),
        at=_parse_ts(_req(doc, "at", str, path), f"{path}.at"),
    )


def _parse_piece(doc, path: str) -> tuple[MemoryPiece, EmbeddingVector | None]:
    kind_raw = _req(doc, "kind", str, path)
    try:
        kind = PieceKind(kind_raw)
    except ValueError as exc:
        raise CorruptDocumentError(f"{path}.kind", f"unknown kind {kind_raw!r}") from exc
    fdoc = _req(doc, "forgetting", dict, path)
    fpath = f"{path}.forgetting"
    strength = _req(fdoc, "strength", int, fpath)
    try:
        state = ForgettingState(
            strength=strength,
            last_recall_at=_parse_ts(_req(fdoc, "last_recall_at", str, fpath), f"{fpath}.last_recall_at"),
            created_at=_parse_ts(_req(fdoc, "created_at", str, fpath), f"{fpath}.created_at"),
            forgotten=_req(fdoc, "forgotten", bool, fpath),
        )
    except ValueError as exc:
        raise CorruptDocumentError(fpath, str(exc)) from exc
    recalls_doc = _req(doc, "recalls", list, path)
    recalls = [
        _parse_ts(r, f"{path}.recalls[{i}]") for i, r in enumerate(recalls_doc)
    ]
    vector = None
    embedding = doc.get("embedding")
    if embedding is not None:
        if not isinstance(embedding, list):
            raise CorruptDocumentError(f"{path}.embedding", "must be a list of floats")
        try:
            vector = EmbeddingVector.from_normalized(embedding)
        except ValueError as exc:
            raise CorruptDocumentError(f"{path}.embedding", str(exc)) from exc
    piece = MemoryPiece(
        piece_id=_req(doc, "piece_id", str, path),
        kind=kind,
        text=_req(doc, "text", str, path),
        at=_parse_ts(_req(doc, "at", str, path), f"{path}.at"),
        forgetting=state,
        source_day=_parse_day(_req(doc, "source_day", str, path), f"{path}.source_day"),
        recalls=recalls,
    )
    return piece, vector


def parse_document(text: str) -> UserMemory:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptDocumentError("<document>", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CorruptDocumentError("<document>", "top level must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise VersionMismatchError(version)

    memory = UserMemory(user_id=_req(doc, "user_id", str, "$"))
    for i, tdoc in enumerate(_req(doc, "turns", list, "$")):
        memory.turns.append(_parse_turn(tdoc, f"$.turns[{i}]"))
    for day_raw, text_value in _req(doc, "daily_events", dict, "$").items():
        if not isinstance(text_value, str):
            raise CorruptDocumentError(f"$.daily_events[{day_raw}]", "must be a string")
        memory.daily_events[_parse_day(day_raw, f"$.daily_events[{day_raw}]")] = text_value
    memory.global_events = _req(doc, "global_events", str, "$")
    for day_raw, text_value in _req(doc, "daily_portraits", dict, "$").items():
        if not isinstance(text_value, str):
            raise CorruptDocumentError(f"$.daily_portraits[{day_raw}]", "must be a string")
        memory.daily_portraits[_parse_day(day_raw, f"$.daily_portraits[{day_raw}]")] = text_value
    memory.global_portrait = _req(doc, "global_portrait", str, "$")
    for i, pdoc in enumerate(_req(doc, "pieces", list, "$")):
        piece, vector = _parse_piece(pdoc, f"$.pieces[{i}]")
        if piece.piece_id in memory.pieces:
            raise CorruptDocumentError(f"$.pieces[{i}].piece_id", "duplicate piece_id")
        memory.pieces[piece.piece_id] = piece
        if vector is not None:
            memory.embeddings[piece.piece_id] = vector
    identity = doc.get("embedder_identity")
    if identity is not None and not isinstance(identity, str):
        raise CorruptDocumentError("$.embedder_identity", "must be a string or null")
    memory.embedder_identity = identity

    try:
        check_invariants(memory)
    except ValueError as exc:
        raise CorruptDocumentError("<invariants>", str(exc)) from exc
    return memory


def load_user(data_dir: Path | str, user_id: str) -> UserMemory:
    """Reconstruct a user's memory from disk.

    Stored embeddings come back verbatim; callers compare
    ``embedder_identity`` against the configured adapter and rebuild
    when it differs.
    """
    path = user_document_path(data_dir, user_id)
    if not path.exists():
        raise DocumentNotFoundError(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageIOError(path, exc) from exc
    return parse_document(text)
