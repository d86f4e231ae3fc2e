"""Demo bank: one user's May-3 conversation plus a later probing question.

Used by the acceptance suite, the seed-demo CLI command, and UI
integration tests. The first turn is the stress-relief exchange whose
piece the probe must retrieve at rank 1.
"""

from __future__ import annotations

import datetime as dt

from .core import UTC
from .engine import MemoryBankEngine

DEMO_USER = "gary"
DEMO_DAY = dt.date(2023, 5, 3)
PROBE_DAY = dt.date(2023, 5, 10)

STRESS_USER_TEXT = (
    "I've been feeling a bit stressed out lately and my sleep hasn't been great. "
    "Do you have any good ways to relieve stress?"
)
STRESS_AI_TEXT = (
    "It's true that prolonged work or life stress can affect our physical and "
    "mental health. There are many ways to relieve stress, such as doing moderate "
    "exercise, listening to music, reading, talking to friends, etc. You can try "
    "to add more entertainment and leisure activities into your daily life, and "
    "reduce work pressure and negative effects."
)

PROBE_QUESTION = "What good ways did you recommend me to relieve stress?"

_EXTRA_TURNS = (
    (
        "Any movies or TV shows worth watching this weekend?",
        "Plenty! A slow-burn detective series could be fun, or a feel-movie night "
        "with a classic comedy. Documentaries about nature are also lovely for "
        "winding down in the evening.",
    ),
    (
        "I played chess with a friend today and lost badly.",
        "Losing a match can sting, but every game teaches something. Reviewing "
        "the middlegame afterwards is a quick path to improvement, and playing "
        "regularly keeps it enjoyable.",
    ),
)


def seed_demo_user(
    engine: MemoryBankEngine,
    user_id: str = DEMO_USER,
    consolidate: bool = True,
) -> str:
    """Load the demo conversation; returns the stress piece's id."""
    cursor = dt.datetime(DEMO_DAY.year, DEMO_DAY.month, DEMO_DAY.day, 9, 30, tzinfo=UTC)
    stress_turn = engine.append_turn(user_id, STRESS_USER_TEXT, STRESS_AI_TEXT, cursor)
    for user_text, ai_text in _EXTRA_TURNS:
        cursor += dt.timedelta(minutes=12)
        engine.append_turn(user_id, user_text, ai_text, cursor)
    if consolidate:
        engine.consolidate(user_id)
    return stress_turn.turn_id


def probe_time(hour: int = 10) -> dt.datetime:
    return dt.datetime(PROBE_DAY.year, PROBE_DAY.month, PROBE_DAY.day, hour, 0, tzinfo=UTC)
