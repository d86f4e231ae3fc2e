"""Engine facade tying storage, retrieval, consolidation, and aging together.

Drives the end-to-end chat pipeline: embed the query, search the user's
index, reinforce the recalled pieces, compose the prompt, complete it
through the language-model adapter, and append the exchange to the log.

Concurrency: one write lock per user serializes all mutations of that
user's memory; distinct users proceed fully in parallel. Index swaps on
rebuild are atomic reference assignments, so readers never observe a
partial index.
"""

from __future__ import annotations

import datetime as dt
import math
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import persistence
from .core import (
    GLOBAL_EVENTS_PIECE_ID,
    GLOBAL_PORTRAIT_PIECE_ID,
    ConversationTurn,
    MemoryPiece,
    PieceKind,
    UTC,
    UserMemory,
    ensure_utc,
    local_day,
    render_turn,
)
from .errors import EmptyDayError, EmptyTextError, UnknownUserError
from .forgetting import (
    DecayPolicy,
    ForgettingState,
    reinforce,
    retention,
    sweep,
)
from .prompts import DEFAULT_PROMPT_BUDGET, ComposedPrompt, compose_prompt
from .retrieval import Embedder, EmbeddingVector, HashingEmbedder, MemoryIndex, SearchHit
from .summarization import (
    LanguageModelAdapter,
    MockLanguageModel,
    load_templates,
    personality_day,
    portrait_global,
    summarize_day,
    summarize_global,
)

DEFAULT_TOP_K = 6

_USER_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,63}$")

# The prompt composer injects the global summary and portrait as their
# own sections; keeping them out of retrieval candidacy ensures no
# prompt element appears twice.
_UNINDEXED_KINDS = frozenset({PieceKind.GLOBAL_EVENT_SUMMARY, PieceKind.GLOBAL_PORTRAIT})


@dataclass
class HitDetail:
    """Inspection view of one retrieval hit, post-reinforcement."""

    piece_id: str
    rank: int
    score: float
    text: str
    kind: str
    at: dt.datetime
    source_day: dt.date
    strength: int
    retention: float


@dataclass
class ChatResult:
    reply: str
    used_memory: list[SearchHit]
    portrait: str
    details: list[HitDetail]
    prompt: ComposedPrompt


@dataclass
class CurveSeries:
    """Server-computed retention samples for one piece's decay curve."""

    piece_id: str
    samples: list[tuple[dt.datetime, float]]
    resets: list[dt.datetime]
    strength: int


@dataclass
class ConsolidationResult:
    days: list[dt.date]
    global_events: str
    global_portrait: str


class MemoryBankEngine:
    """Embeddable long-term memory engine for one deployment."""

    def __init__(
        self,
        data_dir: Path | str | None = None,
        embedder: Embedder | None = None,
        llm: LanguageModelAdapter | None = None,
        policy: DecayPolicy | None = None,
        top_k: int = DEFAULT_TOP_K,
        tz: dt.tzinfo = UTC,
        language: str = "en",
        prompt_budget: int = DEFAULT_PROMPT_BUDGET,
        retention_weighting: bool = False,
        summary_context_budget: int = 6000,
        session_gap: dt.timedelta = dt.timedelta(minutes=30),
        autosave: bool | None = None,
    ):
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.embedder = embedder or HashingEmbedder()
        self.llm = llm or MockLanguageModel()
        self.policy = policy or DecayPolicy()
        self.policy.validate()
        self.top_k = top_k
        self.tz = tz
        self.language = language
        self.pack = load_templates(language)
        self.prompt_budget = prompt_budget
        self.retention_weighting = retention_weighting
        self.summary_context_budget = summary_context_budget
        self.session_gap = session_gap
        self.autosave = (self.data_dir is not None) if autosave is None else autosave
        self._users: dict[str, UserMemory] = {}
        self._indexes: dict[str, MemoryIndex] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._registry_lock = threading.Lock()

    # -- user registry -------------------------------------------------

    def _lock_for(self, user_id: str) -> threading.RLock:
        with self._registry_lock:
            if user_id not in self._locks:
                self._locks[user_id] = threading.RLock()
            return self._locks[user_id]

    def user_ids(self) -> list[str]:
        ids = set(self._users)
        if self.data_dir is not None:
            ids.update(persistence.list_user_ids(self.data_dir))
        return sorted(ids)

    def has_user(self, user_id: str) -> bool:
        if user_id in self._users:
            return True
        if self.data_dir is not None:
            return persistence.user_document_path(self.data_dir, user_id).exists()
        return False

    def _build_index(self, memory: UserMemory) -> MemoryIndex:
        entries = []
        for piece in memory.live_pieces():
            vector = memory.embeddings.get(piece.piece_id)
            if vector is None:
                vector = self.embedder.embed(piece.text)
                memory.embeddings[piece.piece_id] = vector
                memory.embedder_identity = self.embedder.identity
            if piece.kind not in _UNINDEXED_KINDS:
                entries.append((piece.piece_id, vector, piece.at))
        return MemoryIndex.rebuild(entries, dim=self.embedder.dim)

    def _load_from_disk(self, user_id: str) -> UserMemory:
        memory = persistence.load_user(self.data_dir, user_id)
        if memory.embedder_identity is not None and memory.embedder_identity != self.embedder.identity:
            # Stored vectors came from a different encoder: rebuild.
            memory.embeddings = {}
            memory.embedder_identity = None
        return memory

    def _get(self, user_id: str, create: bool = False) -> UserMemory:
        if user_id in self._users:
            return self._users[user_id]
        if self.data_dir is not None and persistence.user_document_path(
            self.data_dir, user_id
        ).exists():
            memory = self._load_from_disk(user_id)
            index = self._build_index(memory)
            self._users[user_id] = memory
            self._indexes[user_id] = index
            return memory
        if not create:
            raise UnknownUserError(user_id)
        if not _USER_ID_RE.match(user_id):
            raise ValueError(
                "user_id must be 1-64 chars of letters, digits, '.', '_', '-' "
                "and start alphanumeric"
            )
        memory = UserMemory(user_id=user_id)
        self._users[user_id] = memory
        self._indexes[user_id] = MemoryIndex(dim=self.embedder.dim)
        return memory

    def _index(self, user_id: str) -> MemoryIndex:
        return self._indexes[user_id]

    def _save(self, memory: UserMemory) -> None:
        if self.autosave and self.data_dir is not None:
            persistence.save_user(memory, self.data_dir)

    def save_user(self, user_id: str) -> Path:
        if self.data_dir is None:
            raise ValueError("engine has no data_dir configured")
        with self._lock_for(user_id):
            return persistence.save_user(self._get(user_id), self.data_dir)

    def save_all(self) -> list[Path]:
        return [self.save_user(uid) for uid in sorted(self._users)]

    # -- storage operations ---------------------------------------------

    def append_turn(
        self, user_id: str, user_text: str, ai_text: str, at: dt.datetime
    ) -> ConversationTurn:
        """Append one exchange; its turn piece is embedded and indexed."""
        with self._lock_for(user_id):
            memory = self._get(user_id, create=True)
            turn = self._append(memory, user_text, ai_text, at)
            self._save(memory)
            return turn

    def _append(
        self, memory: UserMemory, user_text: str, ai_text: str, at: dt.datetime
    ) -> ConversationTurn:
        turn, piece = memory.append_turn(user_text, ai_text, at, self.tz)
        vector = self.embedder.embed(piece.text)
        memory.embeddings[piece.piece_id] = vector
        memory.embedder_identity = self.embedder.identity
        self._indexes[memory.user_id].upsert(piece.piece_id, vector, piece.at)
        return turn

    def day_log(self, user_id: str, day: dt.date) -> list[ConversationTurn]:
        return self._get(user_id).day_log(day, self.tz)

    def last_turn_at(self, user_id: str) -> dt.datetime | None:
        turns = self._get(user_id).turns
        return turns[-1].at if turns else None

    def enumerate_pieces(self, user_id: str, include_forgotten: bool = False) -> list[MemoryPiece]:
        return self._get(user_id).enumerate_pieces(include_forgotten)

    def get_piece(self, user_id: str, piece_id: str) -> MemoryPiece:
        memory = self._get(user_id)
        if piece_id not in memory.pieces:
            raise KeyError(piece_id)
        return memory.pieces[piece_id]

    # -- consolidation ---------------------------------------------------

    def _put_piece(self, memory: UserMemory, piece: MemoryPiece) -> None:
        vector = self.embedder.embed(piece.text)
        memory.put_summary_piece(piece, vector)
        memory.embedder_identity = self.embedder.identity
        if piece.kind not in _UNINDEXED_KINDS:
            self._indexes[memory.user_id].upsert(piece.piece_id, vector, piece.at)

    def consolidate(self, user_id: str, day: dt.date | None = None) -> ConsolidationResult:
        """Summarize one day (or every day) and refresh the global units.

        Re-consolidating a day replaces its summary pieces instead of
        duplicating them; the global summary and portrait are recomputed
        from all daily units each time.
        """
        with self._lock_for(user_id):
            memory = self._get(user_id)
            days = [day] if day is not None else memory.days(self.tz)
            if not days:
                raise EmptyDayError(f"user {user_id} has no turns to consolidate")
            for d in days:
                turns = memory.day_log(d, self.tz)
                if not turns:
                    raise EmptyDayError(f"no turns on {d.isoformat()}")
                text, piece = summarize_day(
                    turns, self.llm, self.pack, self.tz, self.summary_context_budget
                )
                memory.daily_events[d] = text
                self._put_piece(memory, piece)
                ptext, ppiece = personality_day(
                    turns, self.llm, self.pack, self.tz, self.summary_context_budget
                )
                memory.daily_portraits[d] = ptext
                self._put_piece(memory, ppiece)

            ordered_days = sorted(memory.daily_events)
            memory.global_events = summarize_global(
                [memory.daily_events[d] for d in ordered_days], self.llm, self.pack
            )
            memory.global_portrait = portrait_global(
                [memory.daily_portraits[d] for d in sorted(memory.daily_portraits)],
                self.llm,
                self.pack,
            )
            last_turn = memory.turns[-1]
            last_day = ordered_days[-1]
            for pid, kind, text in (
                (GLOBAL_EVENTS_PIECE_ID, PieceKind.GLOBAL_EVENT_SUMMARY, memory.global_events),
                (GLOBAL_PORTRAIT_PIECE_ID, PieceKind.GLOBAL_PORTRAIT, memory.global_portrait),
            ):
                self._put_piece(
                    memory,
                    MemoryPiece(
                        piece_id=pid,
                        kind=kind,
                        text=text,
                        at=last_turn.at,
                        forgetting=ForgettingState.fresh(last_turn.at),
                        source_day=last_day,
                    ),
                )
            self._save(memory)
            return ConsolidationResult(
                days=days,
                global_events=memory.global_events,
                global_portrait=memory.global_portrait,
            )

    # -- retrieval --------------------------------------------------------

    def search(
        self,
        user_id: str,
        query_text: str,
        k: int | None = None,
        now: dt.datetime | None = None,
        weight_by_retention: bool | None = None,
    ) -> list[SearchHit]:
        """Top-k pieces for a query text; tombstoned pieces never appear.

        With retention weighting enabled, similarity is multiplied by the
        piece's current retention before ranking.
        """
        if not query_text.strip():
            raise EmptyTextError("query must be non-empty")
        k = k or self.top_k
        weighted = self.retention_weighting if weight_by_retention is None else weight_by_retention
        memory = self._get(user_id)
        index = self._index(user_id)
        query = self.embedder.embed(query_text)
        if not weighted:
            return index.search(query, k)
        now = ensure_utc(now or dt.datetime.now(UTC))
        full = index.search(query, max(k, len(index)) if len(index) else k)
        rescored = []
        for hit in full:
            piece = memory.pieces[hit.piece_id]
            r = retention(piece.forgetting, now, self.policy.time_unit)
            rescored.append((hit.score * r, piece.at, hit.piece_id))
        rescored.sort(key=lambda item: (-item[0], item[1], item[2]))
        return [
            SearchHit(piece_id=pid, score=score, rank=rank)
            for rank, (score, _, pid) in enumerate(rescored[:k], start=1)
        ]

    def hit_detail(self, user_id: str, hit: SearchHit, now: dt.datetime) -> HitDetail:
        piece = self._get(user_id).pieces[hit.piece_id]
        return HitDetail(
            piece_id=piece.piece_id,
            rank=hit.rank,
            score=hit.score,
            text=piece.text,
            kind=piece.kind.value,
            at=piece.at,
            source_day=piece.source_day,
            strength=piece.forgetting.strength,
            retention=retention(piece.forgetting, now, self.policy.time_unit),
        )

    # -- chat ---------------------------------------------------------------

    def _session_context(self, memory: UserMemory, now: dt.datetime) -> tuple[str, str]:
        """(query context, current-dialogue section) from the live session.

        A session is a run of turns with gaps below ``session_gap``
        ending within one gap of ``now``; a probe hours later starts a
        fresh session and gets no stale context.
        """
        session: list[ConversationTurn] = []
        boundary = now
        for turn in reversed(memory.turns):
            if boundary - turn.at > self.session_gap:
                break
            session.append(turn)
            boundary = turn.at
        if not session:
            return "", ""
        session.reverse()
        last = session[-1]
        query_ctx = render_turn(last.user_text, last.ai_text)
        dialogue = "\n".join(render_turn(t.user_text, t.ai_text) for t in session[-3:])
        return query_ctx, dialogue

    def chat(
        self,
        user_id: str,
        message: str,
        now: dt.datetime | None = None,
        store_turn: bool = True,
    ) -> ChatResult:
        """One full conversational exchange against the user's memory.

        Pipeline: embed query, search top-k, reinforce every injected
        hit, compose the prompt, complete, then append the new turn.
        The turn is appended only after a successful completion, so an
        adapter failure loses no data. With ``store_turn=False`` the
        exchange is not logged (recalled pieces are still reinforced);
        the evaluation harness probes a fixed bank this way.
        """
        if not message.strip():
            raise EmptyTextError("message must be non-empty")
        now = ensure_utc(now or dt.datetime.now(UTC))
        with self._lock_for(user_id):
            memory = self._get(user_id, create=True)
            index = self._index(user_id)
            query_ctx, dialogue = self._session_context(memory, now)
            query_text = f"{query_ctx}\n{message}" if query_ctx else message
            hits = index.search(self.embedder.embed(query_text), self.top_k) if len(index) else []

            composed = compose_prompt(
                memory, hits, dialogue, message, self.pack, self.prompt_budget
            )
            # Recall = injection into the prompt: hits dropped by the
            # budget were not injected and are not reinforced.
            injected = hits[: len(hits) - composed.dropped_hits]
            for hit in injected:
                piece = memory.pieces[hit.piece_id]
                piece.forgetting = reinforce(piece.forgetting, now)
                piece.recalls.append(now)

            prompt = self.pack.template("chat").render(composed.rendered)
            reply = self.llm.complete(prompt)

            if store_turn:
                self._append(memory, message, reply, now)
            self._save(memory)
            details = [self.hit_detail(user_id, h, now) for h in injected]
            return ChatResult(
                reply=reply,
                used_memory=injected,
                portrait=memory.global_portrait,
                details=details,
                prompt=composed,
            )

    # -- aging ----------------------------------------------------------------

    def sweep_user(
        self,
        user_id: str,
        now: dt.datetime | None = None,
        policy: DecayPolicy | None = None,
    ) -> list[str]:
        now = ensure_utc(now or dt.datetime.now(UTC))
        policy = policy or self.policy
        with self._lock_for(user_id):
            memory = self._get(user_id)
            forgotten = sweep(memory.pieces.values(), now, policy)
            index = self._indexes[user_id]
            for pid in forgotten:
                index.remove(pid)
            if forgotten:
                self._save(memory)
            return forgotten

    def sweep_all(
        self, now: dt.datetime | None = None, policy: DecayPolicy | None = None
    ) -> dict[str, list[str]]:
        return {uid: self.sweep_user(uid, now, policy) for uid in self.user_ids()}

    def retention_of(self, user_id: str, piece_id: str, now: dt.datetime | None = None) -> float:
        now = ensure_utc(now or dt.datetime.now(UTC))
        piece = self.get_piece(user_id, piece_id)
        return retention(piece.forgetting, now, self.policy.time_unit)

    def curve(
        self,
        user_id: str,
        piece_id: str,
        now: dt.datetime | None = None,
        points: int = 60,
    ) -> CurveSeries:
        """Retention-versus-time samples with reset markers at recalls.

        Strength at a sample time is 1 plus the number of recalls up to
        that time; each recall resets elapsed time to zero.
        """
        now = ensure_utc(now or dt.datetime.now(UTC))
        piece = self.get_piece(user_id, piece_id)
        state = piece.forgetting
        start = state.created_at
        if now < start:
            now = start
        resets = sorted(r for r in piece.recalls if start < r <= now)
        span = (now - start).total_seconds()
        times = [start + dt.timedelta(seconds=span * i / max(points - 1, 1)) for i in range(points)]
        times = sorted(set(times) | set(resets))
        unit = self.policy.time_unit.total_seconds()
        samples = []
        for t in times:
            strength = 1 + sum(1 for r in resets if r <= t)
            last_reset = max([start] + [r for r in resets if r <= t])
            elapsed = (t - last_reset).total_seconds() / unit
            samples.append((t, math.exp(-elapsed / strength)))
        return CurveSeries(
            piece_id=piece_id, samples=samples, resets=resets, strength=state.strength
        )

    # -- summaries -----------------------------------------------------------

    def portrait(self, user_id: str) -> tuple[str, dict[dt.date, str]]:
        memory = self._get(user_id)
        return memory.global_portrait, dict(memory.daily_portraits)

    def global_summary(self, user_id: str) -> str:
        return self._get(user_id).global_events
