"""Testing-dashboard semantics, accuracy metrics, balance stats, and the game.

Classification records are device-local (they describe the device's own
model) and are replaced wholesale on every retrain: the dashboard always
shows the latest model's verdicts. The dashboard sorts misclassifications
before correct results; within each block, newest first.

The evaluation game runs timed rounds against a target label cycle. A round
scores 10x the confidence the model assigns to the target on the image
observed at round end; mid-round classifications never count. Targets are
drawn from a seeded shuffle with no repeats until every label has appeared.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .domain import ReplicatedProject, Split
from .errors import EmptyTestSet, NoLabels
from .ids import LabelId, SampleId
from .image import ImageBlob
from .training import TrainedModel, classify, predicted_label

GAME_TIME_LIMIT_S = 90.0
GAME_ROUND_LENGTH_S = 5.0
GAME_POINTS_PER_CONFIDENCE = 10.0


@dataclass
class ClassificationRecord:
    sample_id: SampleId
    label: LabelId  # the sample's true label when evaluated
    model_version: int
    predicted: LabelId
    confidence: list[float]  # aligned with the model's label_order
    correct: bool
    recorded_at: int
    user_corrected_label: LabelId | None = None


def evaluate_all(
    project: ReplicatedProject,
    model: TrainedModel,
    blobs,
    recorded_at: int = 0,
) -> list[ClassificationRecord]:
    """Classify every live test sample under this model.

    Returns the device's new record set (callers replace, never append).
    An empty test set is an empty result, not a failure.
    """
    records = []
    test_samples = sorted(
        (s for s in project.live_samples() if s.split is Split.TESTING),
        key=lambda s: s.id,
    )
    for sample in test_samples:
        conf = classify(model, blobs[sample.blob])
        predicted = predicted_label(model, conf)
        records.append(
            ClassificationRecord(
                sample_id=sample.id,
                label=sample.label,
                model_version=model.version,
                predicted=predicted,
                confidence=[float(c) for c in conf],
                correct=predicted == sample.label,
                recorded_at=recorded_at,
            )
        )
    return records


def dashboard_order(records: Iterable[ClassificationRecord]) -> list[ClassificationRecord]:
    """Misclassified first, then recorded_at descending, then SampleId."""
    return sorted(records, key=lambda r: (r.correct, -r.recorded_at, r.sample_id))


def micro_accuracy(records: Iterable[ClassificationRecord]) -> float:
    records = list(records)
    if not records:
        raise EmptyTestSet("no classification records")
    return sum(1 for r in records if r.correct) / len(records)


def weighted_accuracy(records: Iterable[ClassificationRecord], test_counts: dict[LabelId, int]) -> float:
    """Per-label accuracy weighted by label test-set size, summed.

    Algebraically equal to total-correct/N; both paths are computed and
    cross-checked on every call.
    """
    counts = {label: n for label, n in test_counts.items() if n > 0}
    total = sum(counts.values())
    if total == 0:
        raise EmptyTestSet("no test images")
    correct_by_label: dict[LabelId, int] = {label: 0 for label in counts}
    total_correct = 0
    for record in records:
        if record.label in counts and record.correct:
            correct_by_label[record.label] += 1
            total_correct += 1
    weighted = sum((n / total) * (correct_by_label[label] / n) for label, n in counts.items())
    micro = total_correct / total
    assert abs(weighted - micro) <= 1e-12, f"weighted {weighted} != micro {micro}"
    return weighted


@dataclass
class BalanceRow:
    train_pct: float
    test_pct: float


def balance_stats(project: ReplicatedProject) -> dict[LabelId, BalanceRow]:
    """Share (in percent) of each split's live samples held by each label."""
    live_labels = [l.id for l in project.live_labels()]
    train_counts = {label: 0 for label in live_labels}
    test_counts = {label: 0 for label in live_labels}
    for sample in project.live_samples():
        bucket = train_counts if sample.split is Split.TRAINING else test_counts
        bucket[sample.label] += 1
    train_total = sum(train_counts.values())
    test_total = sum(test_counts.values())
    return {
        label: BalanceRow(
            train_pct=100.0 * train_counts[label] / train_total if train_total else 0.0,
            test_pct=100.0 * test_counts[label] / test_total if test_total else 0.0,
        )
        for label in live_labels
    }


# --- the evaluation game -----------------------------------------------------


@dataclass
class GameRound:
    target: LabelId
    final_confidence: float
    score: float


@dataclass
class GameSession:
    seed: int
    time_limit_s: float
    round_length_s: float
    rounds: list[GameRound] = field(default_factory=list)
    total_score: float = 0.0
    high_score: float = 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rounds": [
                {"target": r.target, "final_confidence": r.final_confidence, "score": r.score}
                for r in self.rounds
            ],
            "total_score": self.total_score,
            "high_score": self.high_score,
        }


class TargetCycle:
    """Seeded target drawing: no label repeats until all have been used."""

    def __init__(self, labels: list[LabelId], seed: int):
        if not labels:
            raise NoLabels("game needs at least one live label")
        self._labels = list(labels)
        self._rng = random.Random(seed)
        self._queue: list[LabelId] = []

    def next(self) -> LabelId:
        if not self._queue:
            self._queue = list(self._labels)
            self._rng.shuffle(self._queue)
        return self._queue.pop(0)


def max_rounds(time_limit_s: float = GAME_TIME_LIMIT_S, round_length_s: float = GAME_ROUND_LENGTH_S) -> int:
    return int(time_limit_s // round_length_s)


def score_round(confidences: np.ndarray | list[float], target_index: int) -> tuple[float, float]:
    final_confidence = float(confidences[target_index])
    return final_confidence, GAME_POINTS_PER_CONFIDENCE * final_confidence


def run_game(
    label_order: list[LabelId],
    classify_fn: Callable[[ImageBlob], np.ndarray],
    round_feed: Iterator[ImageBlob] | Iterable[ImageBlob],
    seed: int,
    high_score: float = 0.0,
    time_limit_s: float = GAME_TIME_LIMIT_S,
    round_length_s: float = GAME_ROUND_LENGTH_S,
) -> GameSession:
    """Headless game run: the feed supplies each round's end-of-round image.

    The 5 s round clock is simulated by the feed; the session ends after
    floor(time_limit/round_length) rounds or when the feed runs out.
    """
    cycle = TargetCycle(label_order, seed)
    index = {label: i for i, label in enumerate(label_order)}
    session = GameSession(seed=seed, time_limit_s=time_limit_s, round_length_s=round_length_s)
    feed = iter(round_feed)
    for _ in range(max_rounds(time_limit_s, round_length_s)):
        try:
            image = next(feed)
        except StopIteration:
            break
        target = cycle.next()
        final_confidence, score = score_round(classify_fn(image), index[target])
        session.rounds.append(GameRound(target, final_confidence, score))
    session.total_score = sum(r.score for r in session.rounds)
    session.high_score = max(high_score, session.total_score)
    return session


class InteractiveGame:
    """Clock-driven variant for the local API: real timers live in the caller.

    The caller asks for a target, shows it for a round, then submits the
    end-of-round confidences. The session refuses new rounds once the time
    limit has elapsed or the round cap is hit.
    """

    def __init__(
        self,
        label_order: list[LabelId],
        seed: int,
        clock_s: Callable[[], float],
        high_score: float = 0.0,
        time_limit_s: float = GAME_TIME_LIMIT_S,
        round_length_s: float = GAME_ROUND_LENGTH_S,
    ):
        self._cycle = TargetCycle(label_order, seed)
        self._index = {label: i for i, label in enumerate(label_order)}
        self._clock = clock_s
        self._started = clock_s()
        self._current_target: LabelId | None = None
        self.session = GameSession(seed=seed, time_limit_s=time_limit_s, round_length_s=round_length_s, high_score=high_score)
        self._prior_high = high_score

    def time_left(self) -> float:
        return max(0.0, self.session.time_limit_s - (self._clock() - self._started))

    def over(self) -> bool:
        return (
            self.time_left() < self.session.round_length_s
            or len(self.session.rounds) >= max_rounds(self.session.time_limit_s, self.session.round_length_s)
        )

    def next_target(self) -> LabelId:
        if self._current_target is None:
            self._current_target = self._cycle.next()
        return self._current_target

    def finish_round(self, confidences: np.ndarray | list[float]) -> GameRound:
        target = self.next_target()
        final_confidence, score = score_round(confidences, self._index[target])
        round_ = GameRound(target, final_confidence, score)
        self.session.rounds.append(round_)
        self._current_target = None
        return round_

    def finish(self) -> GameSession:
        self.session.total_score = sum(r.score for r in self.session.rounds)
        self.session.high_score = max(self._prior_high, self.session.total_score)
        return self.session
