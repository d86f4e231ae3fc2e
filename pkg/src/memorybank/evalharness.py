"""Quantitative evaluation: synthetic banks, probing questions, metrics.

Builds a multi-user memory store of scripted conversations with planted
facts, then asks probing questions days later and measures whether the
ground-truth piece is retrieved and whether the reply contains the
expected answer. Four metrics aggregate per model: retrieval accuracy,
response correctness, contextual coherence (human-labeled, imported),
and a ranking score s = 1/r over human model rankings.

The scripted generator needs no network or keys, so the whole protocol
runs deterministically from a seed.
"""

from __future__ import annotations

import datetime as dt
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .core import UTC
from .engine import MemoryBankEngine
from .errors import (
    IncompleteLabelsError,
    InvalidScheduleError,
    UnknownProbeError,
)
from .retrieval import HashingEmbedder
from .summarization import LanguageModelAdapter, MockLanguageModel

NAME_POOL = (
    "gary", "alice", "bob", "carol", "david", "emma", "frank", "grace",
    "henry", "iris", "jack", "karen", "liam", "mona", "nathan", "olivia",
    "peter", "quinn", "rosa", "sam",
)

PERSONALITY_POOL = (
    "decisive and straightforward",
    "warm and patient",
    "curious and analytical",
    "outspoken and helpful",
    "quiet and observant",
    "playful and energetic",
    "methodical and calm",
    "ambitious and driven",
    "easygoing and friendly",
    "thoughtful and reserved",
    "bold and adventurous",
    "meticulous and kind",
    "witty and pragmatic",
    "gentle and empathetic",
    "stoic and reliable",
)

TOPIC_POOL = (
    "astronomy", "baking", "chess", "cycling", "gardening", "photography",
    "pottery", "sailing", "calligraphy", "archery", "birdwatching", "camping",
    "carpentry", "fencing", "fishing", "genealogy", "geocaching", "juggling",
    "kayaking", "knitting", "meteorology", "origami", "painting", "quilting",
    "robotics", "rollerblading", "sculpture", "skiing", "snorkeling",
    "surfing", "volleyball", "weaving", "yoga", "zoology", "woodturning",
    "beekeeping",
)

_CODE_ADJ = (
    "amber", "cobalt", "crimson", "emerald", "golden", "indigo", "ivory",
    "jade", "onyx", "scarlet", "silver", "teal", "umber", "violet",
)
_CODE_NOUN = (
    "falcon", "harbor", "lantern", "meadow", "nebula", "orchid", "pebble",
    "quarry", "raven", "saddle", "thicket", "walnut", "zephyr", "bison",
)

_FILLER_USER = (
    "That wraps up the {topic} talk for now.",
    "Good notes on {topic}, I enjoyed this.",
    "The {topic} chat made my afternoon nicer.",
    "We should revisit {topic} another evening.",
    "Plenty to digest about {topic} already.",
)
_FILLER_AI = (
    "Any time, {topic} suits you.",
    "Always happy to discuss {topic}.",
    "Looking forward to more {topic} stories.",
    "Glad the {topic} ideas helped.",
    "Of course, {topic} it is.",
)

RETRIEVAL_LABELS = (0, 1)
GRADED_LABELS = (0.0, 0.5, 1.0)

NEVER_PLANTED_PIECE_ID = "__never-planted__"


@dataclass
class VirtualUserProfile:
    name: str
    hobbies: list[str]
    personality: str
    topics: list[str]

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("profile name must be non-empty")
        if not self.personality.strip():
            raise ValueError("profile personality must be non-empty")

    @property
    def user_id(self) -> str:
        return self.name.lower()


@dataclass
class ProbeLabels:
    retrieval: int | None = None
    correctness: float | None = None
    coherence: float | None = None
    rank: int | None = None

    def validate(self, where: str) -> None:
        if self.retrieval is not None and self.retrieval not in RETRIEVAL_LABELS:
            raise ValueError(f"{where}: retrieval label must be in {RETRIEVAL_LABELS}")
        if self.correctness is not None and self.correctness not in GRADED_LABELS:
            raise ValueError(f"{where}: correctness label must be in {GRADED_LABELS}")
        if self.coherence is not None and self.coherence not in GRADED_LABELS:
            raise ValueError(f"{where}: coherence label must be in {GRADED_LABELS}")
        if self.rank is not None and (not isinstance(self.rank, int) or self.rank < 1):
            raise ValueError(f"{where}: rank must be a positive integer")


@dataclass
class ProbeRecord:
    """A probing question planted against one ground-truth memory piece."""

    probe_id: str
    user_id: str
    question: str
    asked_on: dt.date
    ground_truth_piece_id: str
    expected_answer_fragment: str
    planted_on: dt.date
    horizon_end: dt.date
    negative_control: bool = False
    labels: dict[str, ProbeLabels] = field(default_factory=dict)
    model_outputs: dict[str, str] = field(default_factory=dict)

    def labels_for(self, model: str) -> ProbeLabels:
        return self.labels.setdefault(model, ProbeLabels())


@dataclass
class ModelMetrics:
    model: str
    retrieval: float | None
    correctness: float | None
    coherence: float | None
    ranking: float | None
    probes: int


@dataclass
class MetricsReport:
    language: str
    rows: list[ModelMetrics]

    def row(self, model: str) -> ModelMetrics:
        for row in self.rows:
            if row.model == model:
                return row
        raise KeyError(model)


def default_profiles(count: int = 15, seed: int = 7) -> list[VirtualUserProfile]:
    """Deterministic roster of virtual users with hobbies and traits."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(f"profiles:{seed}")
    profiles = []
    for i in range(count):
        name = NAME_POOL[i % len(NAME_POOL)]
        if i >= len(NAME_POOL):
            name = f"{name}{i // len(NAME_POOL) + 1}"
        hobbies = rng.sample(TOPIC_POOL, 3)
        profiles.append(
            VirtualUserProfile(
                name=name,
                hobbies=list(hobbies),
                personality=PERSONALITY_POOL[i % len(PERSONALITY_POOL)],
                topics=[],
            )
        )
    return profiles


class ScriptedDialogueGenerator:
    """Offline conversation source planting one codeword fact per topic."""

    def __init__(self, seed: int):
        self.seed = seed

    def rng_for(self, user_id: str) -> random.Random:
        return random.Random(f"dialogue:{self.seed}:{user_id}")

    def topics_for(self, user_id: str, needed: int) -> list[str]:
        rng = self.rng_for(user_id)
        pool = list(TOPIC_POOL)
        if needed <= len(pool):
            return rng.sample(pool, needed)
        extra = [f"{t} revisited" for t in pool]
        return rng.sample(pool + extra, needed)

    def codeword(self, rng: random.Random, used: set[str]) -> str:
        while True:
            word = f"{rng.choice(_CODE_ADJ)}-{rng.choice(_CODE_NOUN)}-{rng.randint(10, 99)}"
            if word not in used:
                used.add(word)
                return word

    def conversation(
        self, rng: random.Random, topic: str, codeword: str
    ) -> tuple[list[tuple[str, str]], int]:
        """Turn pairs for one topic; returns (pairs, index of the fact pair)."""
        pairs = [
            (
                f"Today I want to chat about {topic}.",
                f"Sounds fun, {topic} is a great subject. What's on your mind?",
            ),
            (
                f"By the way, my {topic} code word is {codeword}. Please remember it.",
                f"Got it. Your {topic} code word is {codeword}; I'll keep it in mind.",
            ),
            (
                rng.choice(_FILLER_USER).format(topic=topic),
                rng.choice(_FILLER_AI).format(topic=topic),
            ),
        ]
        return pairs, 1


def _adapter_conversation(
    generator: LanguageModelAdapter,
    profile: VirtualUserProfile,
    topic: str,
) -> list[tuple[str, str]]:
    """Conversation text from a real generator model; scripted fallback."""
    prompt = (
        f"Play the role of a user named {profile.name} whose personality is "
        f"{profile.personality}, chatting with an AI companion about {topic}. "
        "Write two short exchanges, each as a 'User:' line followed by an 'AI:' line."
    )
    completion = generator.complete(prompt)
    pairs: list[tuple[str, str]] = []
    current_user: str | None = None
    for line in completion.splitlines():
        line = line.strip()
        if line.startswith("User:"):
            current_user = line[len("User:"):].strip()
        elif line.startswith("AI:") and current_user:
            pairs.append((current_user, line[len("AI:"):].strip()))
            current_user = None
    return pairs


def _validate_schedule(probe: ProbeRecord) -> None:
    if probe.asked_on > probe.horizon_end:
        raise InvalidScheduleError(
            f"probe {probe.probe_id} asks on {probe.asked_on.isoformat()} but the "
            f"horizon ends {probe.horizon_end.isoformat()}"
        )
    if probe.asked_on < probe.planted_on:
        raise InvalidScheduleError(
            f"probe {probe.probe_id} asks before its fact was planted"
        )


def generate_bank(
    engine: MemoryBankEngine,
    profiles: Sequence[VirtualUserProfile] | None = None,
    days: int = 10,
    topics_per_day: int = 2,
    generator: LanguageModelAdapter | None = None,
    seed: int = 7,
    start_day: dt.date = dt.date(2023, 5, 1),
    consolidate: bool = True,
    negative_controls: int = 0,
) -> list[ProbeRecord]:
    """Populate the engine with the synthetic bank; returns planted probes.

    Every (user, day, topic) conversation plants one codeword fact whose
    probe is asked on the bank's final day, after all conversations.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    if topics_per_day < 2:
        raise ValueError("each day must cover at least two topics")
    profiles = list(profiles) if profiles is not None else default_profiles(seed=seed)
    if not profiles:
        raise ValueError("profiles must be non-empty")

    scripted = ScriptedDialogueGenerator(seed)
    final_day = start_day + dt.timedelta(days=days - 1)
    probes: list[ProbeRecord] = []

    for profile in profiles:
        user_id = profile.user_id
        rng = scripted.rng_for(user_id)
        topics = scripted.topics_for(user_id, days * topics_per_day)
        profile.topics = topics[: topics_per_day * min(days, 3)]
        used_codewords: set[str] = set()
        for day_index in range(days):
            day = start_day + dt.timedelta(days=day_index)
            cursor = dt.datetime(day.year, day.month, day.day, 9, 0, tzinfo=UTC)
            for topic_index in range(topics_per_day):
                topic = topics[day_index * topics_per_day + topic_index]
                codeword = scripted.codeword(rng, used_codewords)
                pairs, fact_index = scripted.conversation(rng, topic, codeword)
                if generator is not None:
                    generated = _adapter_conversation(generator, profile, topic)
                    if generated:
                        fact_pair = pairs[fact_index]
                        pairs = generated + [fact_pair]
                        fact_index = len(pairs) - 1
                gt_piece_id = None
                for pair_index, (user_text, ai_text) in enumerate(pairs):
                    turn = engine.append_turn(user_id, user_text, ai_text, cursor)
                    if pair_index == fact_index:
                        gt_piece_id = turn.turn_id
                    cursor += dt.timedelta(minutes=3)
                probe = ProbeRecord(
                    probe_id=f"{user_id}-d{day_index + 1:02d}-t{topic_index + 1}",
                    user_id=user_id,
                    question=f"What is my {topic} code word?",
                    asked_on=final_day,
                    ground_truth_piece_id=gt_piece_id,
                    expected_answer_fragment=codeword,
                    planted_on=day,
                    horizon_end=final_day,
                )
                _validate_schedule(probe)
                probes.append(probe)
        if consolidate:
            engine.consolidate(user_id)

    for profile in profiles[: max(negative_controls, 0)]:
        probes.append(
            ProbeRecord(
                probe_id=f"{profile.user_id}-control",
                user_id=profile.user_id,
                question="What is my submarine passphrase?",
                asked_on=final_day,
                ground_truth_piece_id=NEVER_PLANTED_PIECE_ID,
                expected_answer_fragment="__absent__",
                planted_on=start_day,
                horizon_end=final_day,
                negative_control=True,
            )
        )

    probes.sort(key=lambda p: (p.asked_on, p.user_id, p.probe_id))
    return probes


def run_probe(
    engine: MemoryBankEngine, probe: ProbeRecord, model_name: str = "scripted"
) -> ProbeRecord:
    """Ask one probing question through the chat pipeline and auto-label.

    retrieval = 1 iff the ground-truth piece was injected into the
    prompt; correctness = 1 iff the expected fragment appears
    (case-folded) in the reply. Coherence stays unset for human labels.
    """
    if not engine.has_user(probe.user_id):
        raise UnknownProbeError(
            f"probe {probe.probe_id} targets unknown user {probe.user_id!r}"
        )
    _validate_schedule(probe)
    asked_at = dt.datetime(
        probe.asked_on.year, probe.asked_on.month, probe.asked_on.day, 20, 0, tzinfo=UTC
    )
    # Probing evaluates the bank as built: the probe exchange itself is
    # not stored, though recalled pieces are still reinforced.
    result = engine.chat(probe.user_id, probe.question, asked_at, store_turn=False)
    probe.model_outputs[model_name] = result.reply
    labels = probe.labels_for(model_name)
    used_ids = {hit.piece_id for hit in result.used_memory}
    labels.retrieval = 1 if probe.ground_truth_piece_id in used_ids else 0
    labels.correctness = (
        1.0
        if probe.expected_answer_fragment.casefold() in result.reply.casefold()
        else 0.0
    )
    return probe


def run_probes(
    engine: MemoryBankEngine, probes: Sequence[ProbeRecord], model_name: str = "scripted"
) -> list[ProbeRecord]:
    """Run probes sequentially in (asked_on, user, probe_id) order.

    Reinforcement side-effects make probe order observable, so the
    order is fixed and deterministic.
    """
    ordered = sorted(probes, key=lambda p: (p.asked_on, p.user_id, p.probe_id))
    for probe in ordered:
        run_probe(engine, probe, model_name)
    return ordered


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _competition_ranks(given: dict[str, int]) -> dict[str, int]:
    """Normalize arbitrary rank labels so ties share the better rank."""
    return {
        model: 1 + sum(1 for other in given.values() if other < rank)
        for model, rank in given.items()
    }


def score_metrics(
    probes: Sequence[ProbeRecord], models: Sequence[str] | None = None, language: str = "en"
) -> MetricsReport:
    """Aggregate per-model metric means; negative controls are excluded.

    Ranking requires a complete rank tuple per probe; probes without
    any rank labels simply do not contribute to the ranking mean.
    """
    scored = [p for p in probes if not p.negative_control]
    if models is None:
        models = sorted({m for p in scored for m in p.model_outputs})
    missing = [
        (p.probe_id, m) for p in scored for m in models if m not in p.model_outputs
    ]
    if missing:
        raise IncompleteLabelsError(missing)
    for probe in scored:
        for model, labels in probe.labels.items():
            labels.validate(f"{probe.probe_id}/{model}")

    rows = []
    per_model_rank_scores: dict[str, list[float]] = {m: [] for m in models}
    for probe in scored:
        given = {
            m: probe.labels[m].rank
            for m in models
            if m in probe.labels and probe.labels[m].rank is not None
        }
        if not given:
            continue
        if set(given) != set(models):
            absent = sorted(set(models) - set(given))
            raise IncompleteLabelsError([(probe.probe_id, m) for m in absent])
        for model, rank in _competition_ranks(given).items():
            per_model_rank_scores[model].append(1.0 / rank)

    for model in models:
        labeled = [p.labels_for(model) for p in scored]
        rows.append(
            ModelMetrics(
                model=model,
                retrieval=_mean([l.retrieval for l in labeled if l.retrieval is not None]),
                correctness=_mean([l.correctness for l in labeled if l.correctness is not None]),
                coherence=_mean([l.coherence for l in labeled if l.coherence is not None]),
                ranking=_mean(per_model_rank_scores[model]),
                probes=len(scored),
            )
        )
    return MetricsReport(language=language, rows=rows)


def retrieval_accuracy(probes: Sequence[ProbeRecord], model: str = "scripted") -> float:
    """Mean retrieval label over non-control probes for one model."""
    labels = [
        p.labels_for(model).retrieval for p in probes if not p.negative_control
    ]
    if any(l is None for l in labels) or not labels:
        raise IncompleteLabelsError(
            [(p.probe_id, model) for p in probes if p.labels_for(model).retrieval is None]
        )
    return sum(labels) / len(labels)


def import_labels(path: Path | str, probes: Sequence[ProbeRecord]) -> int:
    """Merge human labels from a tab-delimited file.

    One record per line: probe_id, model, coherence, rank. Either value
    may be '-' to leave it unset. Returns the number of records merged.
    """
    by_id = {p.probe_id: p for p in probes}
    merged = 0
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = re.split(r"\t|,", line)
        if len(parts) != 4:
            raise ValueError(
                f"{path}:{lineno}: expected 'probe_id<TAB>model<TAB>coherence<TAB>rank'"
            )
        probe_id, model, coherence_raw, rank_raw = (p.strip() for p in parts)
        if probe_id not in by_id:
            raise UnknownProbeError(f"{path}:{lineno}: unknown probe {probe_id!r}")
        labels = by_id[probe_id].labels_for(model)
        if coherence_raw != "-":
            labels.coherence = float(coherence_raw)
        if rank_raw != "-":
            labels.rank = int(rank_raw)
        labels.validate(f"{path}:{lineno}")
        merged += 1
    return merged


def probes_fingerprint(probes: Sequence[ProbeRecord]) -> str:
    """Canonical serialization of probe outcomes, for determinism checks."""
    records = []
    for p in sorted(probes, key=lambda p: p.probe_id):
        records.append(
            {
                "probe_id": p.probe_id,
                "user_id": p.user_id,
                "question": p.question,
                "asked_on": p.asked_on.isoformat(),
                "ground_truth_piece_id": p.ground_truth_piece_id,
                "fragment": p.expected_answer_fragment,
                "negative_control": p.negative_control,
                "outputs": dict(sorted(p.model_outputs.items())),
                "labels": {
                    m: [l.retrieval, l.correctness, l.coherence, l.rank]
                    for m, l in sorted(p.labels.items())
                },
            }
        )
    return json.dumps(records, ensure_ascii=False, indent=1)


@dataclass
class EvalRun:
    engine: MemoryBankEngine
    probes: list[ProbeRecord]
    report: MetricsReport
    seed: int


def run_full_eval(
    seed: int = 7,
    users: int = 15,
    days: int = 10,
    topics_per_day: int = 2,
    language: str = "en",
    top_k: int = 6,
    negative_controls: int = 0,
    model_name: str = "scripted",
) -> EvalRun:
    """End-to-end desk-scale evaluation with the offline stack."""
    engine = MemoryBankEngine(
        embedder=HashingEmbedder(),
        llm=MockLanguageModel(),
        top_k=top_k,
        language=language,
    )
    profiles = default_profiles(users, seed)
    probes = generate_bank(
        engine,
        profiles,
        days=days,
        topics_per_day=topics_per_day,
        seed=seed,
        negative_controls=negative_controls,
    )
    run_probes(engine, probes, model_name)
    report = score_metrics(probes, [model_name], language=language)
    return EvalRun(engine=engine, probes=probes, report=report, seed=seed)
