"""Exponential-decay memory aging: retention, reinforcement, and sweeps.

Retention follows R = exp(-t/S) where t is elapsed time since the last
recall (measured in configurable units, one day by default) and S is a
discrete strength counter that starts at 1 and grows by 1 per recall.
Recalling a piece resets t to 0, so decay restarts from R = 1 on a
flatter curve.
"""

from __future__ import annotations

import datetime as dt
import math
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol

from .errors import (
    AlreadyForgottenError,
    ClockBeforeLastRecallError,
    InvalidPolicyError,
)

DEFAULT_TIME_UNIT = dt.timedelta(hours=24)


@dataclass
class ForgettingState:
    """Aging state of one memory piece.

    strength: discrete S counter, >= 1.
    last_recall_at: when t was last reset (creation or latest recall).
    created_at: when the piece entered memory.
    forgotten: tombstone flag; tombstoned pieces are never reinforced.
    """

    strength: int
    last_recall_at: dt.datetime
    created_at: dt.datetime
    forgotten: bool = False

    def __post_init__(self):
        if self.strength < 1:
            raise ValueError(f"strength must be >= 1, got {self.strength}")
        if self.last_recall_at < self.created_at:
            raise ValueError("last_recall_at precedes created_at")

    @classmethod
    def fresh(cls, at: dt.datetime) -> "ForgettingState":
        """State of a piece on first mention: S = 1, t = 0."""
        return cls(strength=1, last_recall_at=at, created_at=at)


@dataclass
class DecayPolicy:
    """How a sweep decides which pieces to forget.

    threshold mode tombstones every piece whose retention fell below
    ``threshold``. stochastic mode keeps a piece with probability equal
    to its retention, using a draw seeded from (rng_seed, piece_id) so
    results do not depend on iteration order.
    """

    mode: str = "threshold"
    threshold: float = 0.05
    rng_seed: int = 0
    time_unit: dt.timedelta = field(default=DEFAULT_TIME_UNIT)

    def validate(self) -> None:
        problems = []
        if self.mode not in ("threshold", "stochastic"):
            problems.append(f"mode must be 'threshold' or 'stochastic', got {self.mode!r}")
        if not (0.0 <= self.threshold <= 1.0):
            problems.append(f"threshold must be in [0, 1], got {self.threshold}")
        if self.time_unit <= dt.timedelta(0):
            problems.append(f"time_unit must be positive, got {self.time_unit}")
        if problems:
            raise InvalidPolicyError("; ".join(problems))


class _AgedPiece(Protocol):
    """Anything sweepable: carries an id and a forgetting state."""

    piece_id: str
    forgetting: ForgettingState


def elapsed_units(
    state: ForgettingState,
    now: dt.datetime,
    time_unit: dt.timedelta = DEFAULT_TIME_UNIT,
) -> float:
    """Elapsed time t since last recall, in units of ``time_unit``."""
    if now < state.last_recall_at:
        raise ClockBeforeLastRecallError(
            f"clock {now.isoformat()} precedes last recall "
            f"{state.last_recall_at.isoformat()}"
        )
    return (now - state.last_recall_at).total_seconds() / time_unit.total_seconds()


def retention(
    state: ForgettingState,
    now: dt.datetime,
    time_unit: dt.timedelta = DEFAULT_TIME_UNIT,
) -> float:
    """Fraction of the piece still retained at ``now``: exp(-t/S)."""
    if state.forgotten:
        raise AlreadyForgottenError("retention of a tombstoned piece is undefined")
    t = elapsed_units(state, now, time_unit)
    return math.exp(-t / state.strength)


def reinforce(state: ForgettingState, now: dt.datetime) -> ForgettingState:
    """Recall the piece: S grows by 1 and t resets to 0.

    Pure: returns a new state; created_at is preserved.
    """
    if state.forgotten:
        raise AlreadyForgottenError("cannot reinforce a tombstoned piece")
    if now < state.last_recall_at:
        raise ClockBeforeLastRecallError(
            f"clock {now.isoformat()} precedes last recall "
            f"{state.last_recall_at.isoformat()}"
        )
    return replace(state, strength=state.strength + 1, last_recall_at=now)


def _stochastic_draw(seed: int, piece_id: str) -> float:
    # Per-piece derived seed keeps the sweep deterministic regardless of
    # how the caller orders the collection.
    return random.Random(f"{seed}:{piece_id}").random()


def sweep(
    pieces: Iterable[_AgedPiece],
    now: dt.datetime,
    policy: DecayPolicy,
) -> list[str]:
    """Tombstone decayed pieces in place; returns forgotten ids sorted by piece_id.

    Already-forgotten pieces are skipped, which makes threshold-mode
    sweeps idempotent at a fixed ``now``.
    """
    policy.validate()
    forgotten: list[str] = []
    for piece in sorted(pieces, key=lambda p: p.piece_id):
        state = piece.forgetting
        if state.forgotten:
            continue
        r = retention(state, now, policy.time_unit)
        if policy.mode == "threshold":
            drop = r < policy.threshold
        else:
            drop = _stochastic_draw(policy.rng_seed, piece.piece_id) >= r
        if drop:
            piece.forgetting = replace(state, forgotten=True)
            forgotten.append(piece.piece_id)
    return forgotten
