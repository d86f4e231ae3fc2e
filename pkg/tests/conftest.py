"""Shared fixtures and helpers for the suite."""

from __future__ import annotations

import datetime as dt
import random

import pytest

from memorybank import MemoryBankEngine
from memorybank.core import UTC
from memorybank.forgetting import DecayPolicy

T0 = dt.datetime(2023, 5, 1, 9, 0, tzinfo=UTC)


def at(days: float = 0, minutes: float = 0, base: dt.datetime = T0) -> dt.datetime:
    return base + dt.timedelta(days=days, minutes=minutes)


@pytest.fixture
def engine() -> MemoryBankEngine:
    return MemoryBankEngine()


@pytest.fixture
def disk_engine(tmp_path) -> MemoryBankEngine:
    return MemoryBankEngine(data_dir=tmp_path)


def build_random_memory(engine: MemoryBankEngine, user_id: str, seed: int) -> None:
    """Populate one user through public ops only, so invariants hold."""
    rng = random.Random(seed)
    n_days = rng.randint(1, 4)
    cursor = T0
    for _ in range(n_days):
        for _ in range(rng.randint(1, 4)):
            engine.append_turn(
                user_id,
                " ".join(rng.choice(WORDS) for _ in range(rng.randint(2, 8))),
                " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 8))),
                cursor,
            )
            cursor += dt.timedelta(minutes=rng.randint(1, 300))
        cursor = (cursor + dt.timedelta(days=1)).replace(hour=9, minute=0)
    if rng.random() < 0.8:
        engine.consolidate(user_id)
    for _ in range(rng.randint(0, 3)):
        engine.chat(user_id, rng.choice(WORDS) + " " + rng.choice(WORDS), cursor)
        cursor += dt.timedelta(minutes=rng.randint(1, 90))
    if rng.random() < 0.5:
        engine.sweep_user(
            user_id,
            cursor + dt.timedelta(days=rng.randint(0, 20)),
            DecayPolicy(mode="threshold", threshold=rng.choice([0.0, 0.05, 0.4])),
        )


WORDS = (
    "harbor", "violin", "garden", "puzzle", "stretch", "coffee", "laughed",
    "worried", "股票", "открытие", "sunset", "练习", "bicycle", "quiet",
    "thunder", "maple", "stressed", "recipe", "sailing", "chess",
)
