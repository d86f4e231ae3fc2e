"""Conversation prompt assembly.

A chat prompt stacks five sections in fixed order: retrieved memory,
global user portrait, global event summary, current dialogue, and the
user query. Section headers are fixed per language pack; empty sections
are omitted together with their headers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import MemoryPiece, UserMemory
from .retrieval import SearchHit
from .summarization import TemplatePack, load_templates

SECTION_ORDER = (
    "retrieved_memory",
    "global_portrait",
    "global_event_summary",
    "current_dialogue",
    "user_query",
)

DEFAULT_PROMPT_BUDGET = 4000


@dataclass
class ComposedPrompt:
    """Ordered non-empty sections plus their rendered concatenation."""

    sections: list[tuple[str, str]]
    rendered: str
    dropped_hits: int = 0


def _memory_body(hits: Sequence[SearchHit], pieces: dict[str, MemoryPiece]) -> str:
    lines = []
    for hit in hits:
        piece = pieces[hit.piece_id]
        lines.append(f"{hit.rank}. ({piece.source_day.isoformat()}) {piece.text}")
    return "\n".join(lines)


def _render(sections: list[tuple[str, str]], headers: dict[str, str]) -> str:
    return "\n\n".join(f"{headers[name]}\n{body}" for name, body in sections)


def compose_prompt(
    user_memory: UserMemory,
    hits: Sequence[SearchHit],
    current_context: str,
    user_query: str,
    pack: TemplatePack | None = None,
    budget: int = DEFAULT_PROMPT_BUDGET,
) -> ComposedPrompt:
    """Assemble the prompt; total function, all sections may be empty.

    When the rendering exceeds ``budget`` characters, memory items drop
    lowest-rank first; the rank-1 hit and the query are never dropped.
    """
    pack = pack or load_templates()
    kept = list(hits)

    def build(current_hits: Sequence[SearchHit]) -> list[tuple[str, str]]:
        sections = []
        if current_hits:
            sections.append(("retrieved_memory", _memory_body(current_hits, user_memory.pieces)))
        if user_memory.global_portrait:
            sections.append(("global_portrait", user_memory.global_portrait))
        if user_memory.global_events:
            sections.append(("global_event_summary", user_memory.global_events))
        if current_context:
            sections.append(("current_dialogue", current_context))
        if user_query:
            sections.append(("user_query", user_query))
        return sections

    sections = build(kept)
    rendered = _render(sections, pack.headers)
    while len(rendered) > budget and len(kept) > 1:
        kept.pop()
        sections = build(kept)
        rendered = _render(sections, pack.headers)
    return ComposedPrompt(
        sections=sections, rendered=rendered, dropped_hits=len(hits) - len(kept)
    )
