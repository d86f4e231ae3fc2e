"""Chronological per-user memory storage.

Holds the append-only turn log, the derived daily/global summaries and
portraits, and the flat collection of memory pieces (turn pairs and
summaries) that retrieval and forgetting operate on.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from enum import Enum
from zoneinfo import ZoneInfo

from .errors import EmptyTextError, NonMonotonicTimestampError
from .forgetting import ForgettingState
from .retrieval import EmbeddingVector

UTC = dt.timezone.utc

# Canonical rendering of one dialogue pair; embeddings and golden tests
# rely on this exact form.
TURN_TEMPLATE = "User: {user_text}\nAI: {ai_text}"

TURN_PIECE_PREFIX = "turn-"
GLOBAL_EVENTS_PIECE_ID = "events-global"
GLOBAL_PORTRAIT_PIECE_ID = "portrait-global"


def render_turn(user_text: str, ai_text: str) -> str:
    return TURN_TEMPLATE.format(user_text=user_text, ai_text=ai_text)


def ensure_utc(at: dt.datetime) -> dt.datetime:
    """Normalize to UTC; naive datetimes are taken to already be UTC."""
    if at.tzinfo is None:
        return at.replace(tzinfo=UTC)
    return at.astimezone(UTC)


def local_day(at: dt.datetime, tz: dt.tzinfo = UTC) -> dt.date:
    """Calendar day a timestamp belongs to under the deployment timezone."""
    return ensure_utc(at).astimezone(tz).date()


def daily_events_piece_id(day: dt.date) -> str:
    return f"events-{day.isoformat()}"


def daily_portrait_piece_id(day: dt.date) -> str:
    return f"portrait-{day.isoformat()}"


class PieceKind(str, Enum):
    TURN = "turn"
    DAILY_EVENT_SUMMARY = "daily_event_summary"
    GLOBAL_EVENT_SUMMARY = "global_event_summary"
    DAILY_PORTRAIT = "daily_portrait"
    GLOBAL_PORTRAIT = "global_portrait"


@dataclass
class ConversationTurn:
    """One user+AI exchange, timestamped."""

    turn_id: str
    user_text: str
    ai_text: str
    at: dt.datetime


@dataclass
class MemoryPiece:
    """Atomic retrievable unit: a rendered turn pair or a summary.

    recalls keeps the reinforcement history so decay curves can show
    reset markers; the live aging state itself is ``forgetting``.
    """

    piece_id: str
    kind: PieceKind
    text: str
    at: dt.datetime
    forgetting: ForgettingState
    source_day: dt.date
    recalls: list[dt.datetime] = field(default_factory=list)


@dataclass
class UserMemory:
    """Per-user aggregate: turn log, summaries, portraits, and pieces."""

    user_id: str
    turns: list[ConversationTurn] = field(default_factory=list)
    daily_events: dict[dt.date, str] = field(default_factory=dict)
    global_events: str = ""
    daily_portraits: dict[dt.date, str] = field(default_factory=dict)
    global_portrait: str = ""
    pieces: dict[str, MemoryPiece] = field(default_factory=dict)
    embeddings: dict[str, EmbeddingVector] = field(default_factory=dict)
    embedder_identity: str | None = None

    def append_turn(
        self,
        user_text: str,
        ai_text: str,
        at: dt.datetime,
        tz: dt.tzinfo = UTC,
    ) -> tuple[ConversationTurn, MemoryPiece]:
        """Append one exchange and register its turn piece (S=1, t=0).

        The log is monotone: ``at`` must not precede the last stored
        turn. Equal timestamps are allowed and keep insertion order.
        """
        if not user_text.strip():
            raise EmptyTextError("user_text must be non-empty")
        at = ensure_utc(at)
        if self.turns and at < self.turns[-1].at:
            raise NonMonotonicTimestampError(at, self.turns[-1].at)
        turn = ConversationTurn(
            turn_id=f"{TURN_PIECE_PREFIX}{len(self.turns) + 1:08d}",
            user_text=user_text,
            ai_text=ai_text,
            at=at,
        )
        piece = MemoryPiece(
            piece_id=turn.turn_id,
            kind=PieceKind.TURN,
            text=render_turn(user_text, ai_text),
            at=at,
            forgetting=ForgettingState.fresh(at),
            source_day=local_day(at, tz),
        )
        self.turns.append(turn)
        self.pieces[piece.piece_id] = piece
        return turn, piece

    def day_log(self, day: dt.date, tz: dt.tzinfo = UTC) -> list[ConversationTurn]:
        """All turns falling on ``day`` in the configured timezone, in order."""
        return [t for t in self.turns if local_day(t.at, tz) == day]

    def days(self, tz: dt.tzinfo = UTC) -> list[dt.date]:
        """Distinct calendar days present in the turn log, ascending."""
        return sorted({local_day(t.at, tz) for t in self.turns})

    def enumerate_pieces(self, include_forgotten: bool = False) -> list[MemoryPiece]:
        """Pieces sorted by (at, piece_id); tombstones excluded by default."""
        out = [
            p
            for p in self.pieces.values()
            if include_forgotten or not p.forgetting.forgotten
        ]
        out.sort(key=lambda p: (p.at, p.piece_id))
        return out

    def live_pieces(self) -> list[MemoryPiece]:
        return self.enumerate_pieces(include_forgotten=False)

    def put_summary_piece(self, piece: MemoryPiece, vector: EmbeddingVector | None = None) -> None:
        """Insert or replace a summary piece (re-consolidation replaces)."""
        self.pieces[piece.piece_id] = piece
        if vector is not None:
            self.embeddings[piece.piece_id] = vector
        elif piece.piece_id in self.embeddings:
            del self.embeddings[piece.piece_id]


def check_invariants(memory: UserMemory, tz: dt.tzinfo = UTC) -> None:
    """Raise ValueError when a structural invariant does not hold.

    Used after persistence loads and in property tests.
    """
    seen_ids = set()
    last_key = None
    for turn in memory.turns:
        if turn.turn_id in seen_ids:
            raise ValueError(f"duplicate turn_id {turn.turn_id}")
        seen_ids.add(turn.turn_id)
        if not turn.user_text.strip():
            raise ValueError(f"turn {turn.turn_id} has empty user_text")
        key = (turn.at, turn.turn_id)
        if last_key is not None and key < last_key:
            raise ValueError(f"turn log not ordered at {turn.turn_id}")
        last_key = key

    turn_ids = {t.turn_id for t in memory.turns}
    live_turn_pieces = {
        p.piece_id
        for p in memory.pieces.values()
        if p.kind is PieceKind.TURN and not p.forgetting.forgotten
    }
    all_turn_pieces = {
        p.piece_id for p in memory.pieces.values() if p.kind is PieceKind.TURN
    }
    if not all_turn_pieces <= turn_ids:
        raise ValueError("turn piece without matching turn")
    if not live_turn_pieces <= turn_ids:
        raise ValueError("live turn piece without matching turn")

    by_id = {t.turn_id: t for t in memory.turns}
    for pid in all_turn_pieces:
        turn = by_id[pid]
        piece = memory.pieces[pid]
        if piece.text != render_turn(turn.user_text, turn.ai_text):
            raise ValueError(f"piece {pid} text does not match turn rendering")

    for piece in memory.pieces.values():
        if not piece.text:
            raise ValueError(f"piece {piece.piece_id} has empty text")
        st = piece.forgetting
        if st.strength < 1:
            raise ValueError(f"piece {piece.piece_id} strength < 1")
        if st.last_recall_at < st.created_at:
            raise ValueError(f"piece {piece.piece_id} last_recall before creation")

    for day in memory.daily_events:
        if not memory.day_log(day, tz):
            raise ValueError(f"daily_events entry for {day} has no turns")

    if memory.embeddings and memory.embedder_identity is None:
        raise ValueError("embeddings present without embedder_identity")


def resolve_timezone(name: str) -> dt.tzinfo:
    if name.upper() == "UTC":
        return UTC
    return ZoneInfo(name)
