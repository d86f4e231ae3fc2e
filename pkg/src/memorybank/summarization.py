"""Hierarchical consolidation of dialogue into summaries and portraits.

Each day of conversation condenses into a daily event summary and a
daily personality insight; daily units synthesize into one global event
summary and one global user portrait. All four steps go through a
pluggable language-model adapter; a deterministic mock adapter ships so
the full pipeline runs offline and golden tests stay byte-stable.
"""

from __future__ import annotations

import datetime as dt
import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Protocol, Sequence, runtime_checkable

from .core import (
    ConversationTurn,
    MemoryPiece,
    PieceKind,
    UTC,
    daily_events_piece_id,
    daily_portrait_piece_id,
    local_day,
    render_turn,
)
from .errors import AdapterUnavailableError, EmptyDayError, EmptyInputError
from .forgetting import ForgettingState

TEMPLATE_IDS = ("daily_event", "global_event", "daily_personality", "global_personality", "chat")

SUPPORTED_LANGUAGES = ("en", "zh")

# Words the mock personality rule recognizes in user messages.
EMOTION_LEXICON = (
    "angry",
    "anxious",
    "bored",
    "calm",
    "curious",
    "excited",
    "frustrated",
    "grateful",
    "happy",
    "lonely",
    "nervous",
    "proud",
    "relaxed",
    "sad",
    "stressed",
    "tired",
    "worried",
)


@dataclass(frozen=True)
class PromptTemplate:
    """Template text with a single ``{content}`` slot."""

    template_id: str
    text: str

    def render(self, content: str) -> str:
        return self.text.replace("{content}", content)

    @property
    def instruction(self) -> str:
        """The fixed instruction line preceding the content slot."""
        return self.text.split("\n{content}", 1)[0]


@dataclass(frozen=True)
class TemplatePack:
    """One language's prompt templates, section headers, and reply forms."""

    language: str
    templates: dict[str, PromptTemplate]
    headers: dict[str, str]
    chat_reply: dict[str, str]

    def template(self, template_id: str) -> PromptTemplate:
        return self.templates[template_id]


def load_templates(language: str = "en") -> TemplatePack:
    if language not in SUPPORTED_LANGUAGES:
        raise ValueError(f"unsupported language {language!r}; choose from {SUPPORTED_LANGUAGES}")
    raw = resources.files("memorybank").joinpath("templates", f"{language}.json").read_text("utf-8")
    doc = json.loads(raw)
    templates = {
        tid: PromptTemplate(template_id=tid, text=text)
        for tid, text in doc["templates"].items()
    }
    return TemplatePack(
        language=doc["language"],
        templates=templates,
        headers=doc["headers"],
        chat_reply=doc["chat_reply"],
    )


@runtime_checkable
class LanguageModelAdapter(Protocol):
    """Completion contract; the mock implementation is deterministic."""

    identity: str

    def complete(self, prompt: str) -> str: ...


# Latin terminators end a sentence only before whitespace/EOL; CJK
# terminators end one unconditionally (no space convention).
_SENTENCE_END = re.compile(r"[.!?](?=\s|$)|[。！？]")


def first_sentence(text: str) -> str:
    """Text up to and including the first sentence terminator."""
    text = text.strip()
    m = _SENTENCE_END.search(text)
    return text[: m.end()] if m else text


def _user_lines(payload: str) -> list[str]:
    return [line[len("User: "):] for line in payload.splitlines() if line.startswith("User: ")]


class MockLanguageModel:
    """Deterministic offline adapter with fixed, documented rules.

    - Event summarization over dialogue: first sentence of each user
      message, joined by "; " and prefixed "Events: ".
    - Event/personality synthesis over prior summaries (no dialogue
      lines in the payload): returns the payload verbatim, preserving
      chronological order.
    - Personality over dialogue: "Traits observed in N turns: ..." with
      emotion words matched against a fixed lexicon.
    - Chat: echoes the top-ranked remembered item, or the query when no
      memory section is present.
    """

    identity = "mock-scripted"

    def __init__(self):
        self._packs = [load_templates(lang) for lang in SUPPORTED_LANGUAGES]

    def complete(self, prompt: str) -> str:
        for pack in self._packs:
            for tid in TEMPLATE_IDS:
                instruction = pack.template(tid).instruction
                if prompt.startswith(instruction + "\n") or prompt == instruction:
                    payload = prompt[len(instruction):].lstrip("\n")
                    return self._dispatch(tid, payload, pack)
        # Unknown prompt shape: behave as an identity function.
        return prompt

    def _dispatch(self, template_id: str, payload: str, pack: TemplatePack) -> str:
        if template_id in ("daily_event", "global_event"):
            users = _user_lines(payload)
            if users:
                return "Events: " + "; ".join(first_sentence(u) for u in users)
            return payload
        if template_id == "daily_personality":
            users = _user_lines(payload)
            joined = " ".join(users)
            hits = sorted(
                w
                for w in EMOTION_LEXICON
                if re.search(rf"\b{re.escape(w)}\b", joined, re.IGNORECASE)
            )
            traits = ", ".join(hits) if hits else "none noted"
            return f"Traits observed in {len(users)} turns: {traits}"
        if template_id == "global_personality":
            return payload
        return self._chat_reply(payload, pack)

    def _chat_reply(self, payload: str, pack: TemplatePack) -> str:
        memory_header = pack.headers["retrieved_memory"]
        query_header = pack.headers["user_query"]
        memory_section = _section(payload, memory_header)
        if memory_section:
            m = re.search(r"(?ms)^1\. (.*?)(?=^\d+\. |\Z)", memory_section)
            if m:
                return pack.chat_reply["with_memory"].replace(
                    "{memory}", m.group(1).rstrip()
                )
        query = (_section(payload, query_header) or "").strip()
        return pack.chat_reply["without_memory"].replace("{query}", query)


def _section(payload: str, header: str) -> str | None:
    """Body of one ``## ...`` section, or None when the header is absent."""
    lines = payload.splitlines()
    try:
        start = lines.index(header) + 1
    except ValueError:
        return None
    body = []
    for line in lines[start:]:
        if line.startswith("## "):
            break
        body.append(line)
    return "\n".join(body)


class RemoteChatModel:
    """Client for a chat-completion HTTP endpoint.

    Convention: POST {base}/v1/chat/completions with
    ``{"model": ..., "messages": [{"role": "user", "content": ...}]}``;
    the reply is ``choices[0].message.content``.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.identity = f"remote:{model}"

    def complete(self, prompt: str) -> str:
        import httpx

        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(
                f"{self.endpoint}/v1/chat/completions",
                json={
                    "model": self.model,
                    "messages": [{"role": "user", "content": prompt}],
                },
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:  # noqa: BLE001 - wrapped with cause
            raise AdapterUnavailableError(
                f"chat endpoint {self.endpoint} failed: {exc}", cause=exc
            ) from exc


def render_dialogue(turns: Sequence[ConversationTurn]) -> str:
    return "\n".join(render_turn(t.user_text, t.ai_text) for t in turns)


def _chunk_turns(
    turns: Sequence[ConversationTurn], budget: int
) -> list[list[ConversationTurn]]:
    """Greedy split so each chunk's rendering fits the adapter window."""
    chunks: list[list[ConversationTurn]] = [[]]
    size = 0
    for turn in turns:
        rendered = len(render_turn(turn.user_text, turn.ai_text)) + 1
        if chunks[-1] and size + rendered > budget:
            chunks.append([])
            size = 0
        chunks[-1].append(turn)
        size += rendered
    return chunks


def _one_day(turns: Sequence[ConversationTurn], tz: dt.tzinfo) -> dt.date:
    if not turns:
        raise EmptyDayError("no turns to consolidate")
    days = {local_day(t.at, tz) for t in turns}
    if len(days) != 1:
        raise ValueError(f"turns span multiple days: {sorted(days)}")
    return days.pop()


def _summarize_chunked(
    turns: Sequence[ConversationTurn],
    adapter: LanguageModelAdapter,
    per_chunk: PromptTemplate,
    merge: PromptTemplate,
    context_budget: int,
) -> str:
    chunks = _chunk_turns(turns, context_budget)
    partials = [adapter.complete(per_chunk.render(render_dialogue(c))) for c in chunks]
    if len(partials) == 1:
        return partials[0]
    return adapter.complete(merge.render("\n".join(partials)))


def summarize_day(
    turns: Sequence[ConversationTurn],
    adapter: LanguageModelAdapter,
    pack: TemplatePack | None = None,
    tz: dt.tzinfo = UTC,
    context_budget: int = 6000,
) -> tuple[str, MemoryPiece]:
    """Condense one day's dialogue into its event summary piece.

    The piece is timestamped at the day's last turn and starts fresh
    (S=1). Days whose rendering exceeds ``context_budget`` characters
    are summarized chunk-wise and merged.
    """
    pack = pack or load_templates()
    day = _one_day(turns, tz)
    text = _summarize_chunked(
        turns,
        adapter,
        pack.template("daily_event"),
        pack.template("global_event"),
        context_budget,
    )
    piece = MemoryPiece(
        piece_id=daily_events_piece_id(day),
        kind=PieceKind.DAILY_EVENT_SUMMARY,
        text=text,
        at=turns[-1].at,
        forgetting=ForgettingState.fresh(turns[-1].at),
        source_day=day,
    )
    return text, piece


def personality_day(
    turns: Sequence[ConversationTurn],
    adapter: LanguageModelAdapter,
    pack: TemplatePack | None = None,
    tz: dt.tzinfo = UTC,
    context_budget: int = 6000,
) -> tuple[str, MemoryPiece]:
    """Distill one day's dialogue into its personality-insight piece."""
    pack = pack or load_templates()
    day = _one_day(turns, tz)
    text = _summarize_chunked(
        turns,
        adapter,
        pack.template("daily_personality"),
        pack.template("global_personality"),
        context_budget,
    )
    piece = MemoryPiece(
        piece_id=daily_portrait_piece_id(day),
        kind=PieceKind.DAILY_PORTRAIT,
        text=text,
        at=turns[-1].at,
        forgetting=ForgettingState.fresh(turns[-1].at),
        source_day=day,
    )
    return text, piece


def summarize_global(
    daily_summaries: Sequence[str],
    adapter: LanguageModelAdapter,
    pack: TemplatePack | None = None,
) -> str:
    """Synthesize all daily event summaries (chronological) into one."""
    if not daily_summaries:
        raise EmptyInputError("no daily summaries to synthesize")
    pack = pack or load_templates()
    prompt = pack.template("global_event").render("\n".join(daily_summaries))
    return adapter.complete(prompt)


def portrait_global(
    daily_portraits: Sequence[str],
    adapter: LanguageModelAdapter,
    pack: TemplatePack | None = None,
) -> str:
    """Aggregate daily personality insights into the global portrait."""
    if not daily_portraits:
        raise EmptyInputError("no daily portraits to aggregate")
    pack = pack or load_templates()
    prompt = pack.template("global_personality").render("\n".join(daily_portraits))
    return adapter.complete(prompt)
