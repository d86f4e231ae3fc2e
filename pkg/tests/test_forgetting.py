"""Retention formula, reinforcement rule, and sweep behavior."""

from __future__ import annotations

import datetime as dt
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memorybank.core import UTC
from memorybank.errors import (
    AlreadyForgottenError,
    ClockBeforeLastRecallError,
    InvalidPolicyError,
)
from memorybank.forgetting import (
    DEFAULT_TIME_UNIT,
    DecayPolicy,
    ForgettingState,
    reinforce,
    retention,
    sweep,
)

T0 = dt.datetime(2023, 5, 1, tzinfo=UTC)

# exp(-1) evaluated with mpmath at 30 digits: 0.367879441171442321595523770161
EXP_MINUS_1 = 0.36787944117144233
# exp(-5) = 0.00673794699908546709663604842315, exp(-0.5) = 0.606530659712633423603799534991
EXP_MINUS_5 = 0.006737946999085467
EXP_MINUS_HALF = 0.6065306597126334


def state(strength=1, last_days=0.0, created_days=0.0, forgotten=False) -> ForgettingState:
    return ForgettingState(
        strength=strength,
        last_recall_at=T0 + dt.timedelta(days=last_days),
        created_at=T0 + dt.timedelta(days=created_days),
        forgotten=forgotten,
    )


class Piece:
    """Minimal sweepable object."""

    def __init__(self, piece_id, forgetting):
        self.piece_id = piece_id
        self.forgetting = forgetting


class TestRetention:
    def test_zero_elapsed_is_one(self):
        assert retention(state(), T0) == 1.0

    def test_one_unit_matches_exp_minus_one(self):
        value = retention(state(), T0 + DEFAULT_TIME_UNIT)
        assert value == pytest.approx(EXP_MINUS_1, rel=1e-12)

    def test_scale_property_five_over_five(self):
        value = retention(state(strength=5), T0 + 5 * DEFAULT_TIME_UNIT)
        assert value == pytest.approx(EXP_MINUS_1, rel=1e-12)

    def test_custom_time_unit(self):
        value = retention(state(), T0 + dt.timedelta(hours=1), dt.timedelta(hours=1))
        assert value == pytest.approx(EXP_MINUS_1, rel=1e-12)

    def test_clock_before_last_recall(self):
        with pytest.raises(ClockBeforeLastRecallError):
            retention(state(last_days=1), T0)

    def test_forgotten_state_rejected(self):
        with pytest.raises(AlreadyForgottenError):
            retention(state(forgotten=True), T0)


class TestReinforce:
    def test_increments_strength_and_resets_clock(self):
        aged = state(strength=1)
        now = T0 + dt.timedelta(days=5)
        fresh = reinforce(aged, now)
        assert fresh.strength == 2
        assert fresh.last_recall_at == now
        assert fresh.created_at == aged.created_at
        assert retention(fresh, now) == 1.0

    def test_n_reinforcements_from_one(self):
        current = state()
        for n in range(1, 8):
            current = reinforce(current, T0 + dt.timedelta(days=n))
            assert current.strength == 1 + n

    def test_pure_function(self):
        before = state()
        reinforce(before, T0 + dt.timedelta(days=1))
        assert before.strength == 1
        assert before.last_recall_at == T0

    def test_forgotten_rejected(self):
        with pytest.raises(AlreadyForgottenError):
            reinforce(state(forgotten=True), T0)

    def test_clock_before_last_recall(self):
        with pytest.raises(ClockBeforeLastRecallError):
            reinforce(state(last_days=2), T0)


class TestSweep:
    def test_threshold_examples(self):
        # R = exp(-5) ~ 0.0067 < 0.1 forgotten; R = exp(-0.5) ~ 0.61 kept.
        now = T0 + dt.timedelta(days=5)
        decayed = Piece("a", state(strength=1))
        fresh = Piece("b", state(strength=2, last_days=4, created_days=0))
        assert retention(decayed.forgetting, now) == pytest.approx(EXP_MINUS_5, rel=1e-12)
        assert retention(fresh.forgetting, now) == pytest.approx(EXP_MINUS_HALF, rel=1e-12)
        forgotten = sweep([decayed, fresh], now, DecayPolicy(threshold=0.1))
        assert forgotten == ["a"]
        assert decayed.forgetting.forgotten
        assert not fresh.forgetting.forgotten

    def test_threshold_zero_never_forgets(self):
        pieces = [Piece(f"p{i}", state()) for i in range(5)]
        assert sweep(pieces, T0 + dt.timedelta(days=400), DecayPolicy(threshold=0.0)) == []

    def test_stochastic_deterministic_for_seed(self):
        def build():
            return [
                Piece(f"p{i}", state(strength=1 + i % 3, last_days=0))
                for i in range(30)
            ]

        now = T0 + dt.timedelta(days=3)
        policy = DecayPolicy(mode="stochastic", rng_seed=123)
        first = sweep(build(), now, policy)
        second = sweep(build(), now, policy)
        assert first == second
        assert first  # at 3 days with S<=3 some pieces must fall

    def test_stochastic_order_independent(self):
        now = T0 + dt.timedelta(days=3)
        policy = DecayPolicy(mode="stochastic", rng_seed=9)
        forward = [Piece(f"p{i}", state()) for i in range(20)]
        backward = [Piece(f"p{i}", state()) for i in reversed(range(20))]
        assert sweep(forward, now, policy) == sweep(backward, now, policy)

    def test_threshold_idempotent(self):
        pieces = [Piece(f"p{i}", state(strength=1 + i)) for i in range(6)]
        now = T0 + dt.timedelta(days=4)
        policy = DecayPolicy(threshold=0.3)
        first = sweep(pieces, now, policy)
        assert first
        assert sweep(pieces, now, policy) == []

    def test_already_forgotten_skipped(self):
        piece = Piece("a", state(forgotten=True))
        assert sweep([piece], T0 + dt.timedelta(days=50), DecayPolicy(threshold=0.9)) == []

    def test_results_sorted_by_piece_id(self):
        pieces = [Piece(pid, state()) for pid in ("z", "m", "a")]
        forgotten = sweep(pieces, T0 + dt.timedelta(days=50), DecayPolicy(threshold=0.5))
        assert forgotten == ["a", "m", "z"]

    @pytest.mark.parametrize(
        "policy",
        [
            DecayPolicy(mode="sometimes"),
            DecayPolicy(threshold=1.5),
            DecayPolicy(threshold=-0.1),
            DecayPolicy(time_unit=dt.timedelta(0)),
        ],
    )
    def test_invalid_policy(self, policy):
        with pytest.raises(InvalidPolicyError):
            sweep([], T0, policy)


class TestStateValidation:
    def test_strength_floor(self):
        with pytest.raises(ValueError):
            ForgettingState(strength=0, last_recall_at=T0, created_at=T0)

    def test_recall_before_creation(self):
        with pytest.raises(ValueError):
            ForgettingState(
                strength=1, last_recall_at=T0, created_at=T0 + dt.timedelta(days=1)
            )


# Curve-shape invariants, property-tested.

strengths = st.integers(min_value=1, max_value=50)
elapsed = st.floats(min_value=0.0, max_value=100.0, allow_nan=False)
gaps = st.floats(min_value=1e-3, max_value=10.0, allow_nan=False)


@settings(max_examples=300)
@given(s=strengths, t=elapsed, gap=gaps)
def test_retention_monotone_decreasing(s, t, gap):
    early = retention(state(strength=s), T0 + dt.timedelta(days=t))
    late = retention(state(strength=s), T0 + dt.timedelta(days=t + gap))
    assert early > late


@settings(max_examples=300)
@given(s=strengths, offset=st.floats(min_value=1e-3, max_value=100.0), delta=gaps)
def test_early_loss_exceeds_late_loss(s, offset, delta):
    def r(days):
        return retention(state(strength=s), T0 + dt.timedelta(days=days))

    early_loss = r(0) - r(delta)
    late_loss = r(offset) - r(offset + delta)
    assert early_loss > late_loss


@settings(max_examples=300)
@given(s=strengths, recall_after=elapsed, horizon=st.floats(min_value=1e-3, max_value=100.0))
def test_spacing_effect(s, recall_after, horizon):
    recalled_at = T0 + dt.timedelta(days=recall_after)
    probe_at = recalled_at + dt.timedelta(days=horizon)
    without = retention(state(strength=s), probe_at)
    with_recall = retention(reinforce(state(strength=s), recalled_at), probe_at)
    assert with_recall > without


@settings(max_examples=300)
@given(s=strengths, t=elapsed, factor=st.integers(min_value=2, max_value=8))
def test_scale_property(s, t, factor):
    base = retention(state(strength=s), T0 + dt.timedelta(days=t))
    scaled = retention(
        state(strength=s * factor), T0 + dt.timedelta(days=t * factor)
    )
    assert scaled == pytest.approx(base, rel=1e-9)


@settings(max_examples=200)
@given(s=strengths, t=elapsed)
def test_retention_in_unit_interval(s, t):
    value = retention(state(strength=s), T0 + dt.timedelta(days=t))
    assert 0.0 < value <= 1.0
    assert math.isfinite(value)
