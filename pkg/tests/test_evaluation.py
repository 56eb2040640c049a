import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coml.domain import Split
from coml.errors import EmptyTestSet, NoLabels
from coml.evaluation import (
    ClassificationRecord,
    InteractiveGame,
    TargetCycle,
    balance_stats,
    dashboard_order,
    evaluate_all,
    max_rounds,
    micro_accuracy,
    run_game,
    weighted_accuracy,
)
from coml.image import solid_color
from coml.training import classify, train

from conftest import build_project
from test_training import build_dataset

L1 = "00000000-0000-4000-8000-00000000000a"
L2 = "00000000-0000-4000-8000-00000000000b"
L3 = "00000000-0000-4000-8000-00000000000c"


def rec(i, correct, recorded_at=0, label=L1, predicted=None):
    return ClassificationRecord(
        sample_id=f"{i:08x}-0000-4000-8000-000000000000",
        label=label,
        model_version=1,
        predicted=predicted or (label if correct else L3),
        confidence=[1.0],
        correct=correct,
        recorded_at=recorded_at,
    )


# --- dashboard ordering -------------------------------------------------------


def test_misclassified_sort_first():
    records = [rec(1, True), rec(2, False), rec(3, True), rec(4, False), rec(5, True)]
    ordered = dashboard_order(records)
    assert [r.correct for r in ordered] == [False, False, True, True, True]


def test_all_correct_pure_recency():
    records = [rec(i, True, recorded_at=i * 10) for i in range(5)]
    ordered = dashboard_order(records)
    assert [r.recorded_at for r in ordered] == [40, 30, 20, 10, 0]


@settings(max_examples=80, deadline=None)
@given(st.permutations(list(range(8))), st.data())
def test_order_invariant_under_permutation(perm, data):
    base = [
        rec(i, correct=data.draw(st.booleans()), recorded_at=data.draw(st.integers(0, 3)))
        for i in range(8)
    ]
    shuffled = [base[i] for i in perm]
    assert dashboard_order(shuffled) == dashboard_order(base)
    ordered = dashboard_order(shuffled)
    wrongs = [r for r in ordered if not r.correct]
    assert ordered[: len(wrongs)] == wrongs  # misclassified block strictly first


# --- weighted accuracy --------------------------------------------------------


def test_all_correct_is_one():
    records = [rec(i, True) for i in range(10)]
    assert weighted_accuracy(records, {L1: 10}) == 1.0


def test_plants_table_fixture_174_162():
    # Table-3-shaped fixture: 174 test images, 162 correct
    counts = {L1: 60, L2: 60, L3: 54}
    records = []
    i = 0
    wrong_left = 12
    for label, n in counts.items():
        for _ in range(n):
            correct = not (wrong_left > 0)
            if wrong_left > 0:
                wrong_left -= 1
            records.append(rec(i, correct, label=label))
            i += 1
    acc = weighted_accuracy(records, counts)
    assert abs(acc - 162 / 174) < 1e-12
    assert round(acc, 2) == 0.93


def test_random_assignment_equals_brute_force(rng):
    for _ in range(50):
        labels = [L1, L2, L3][: rng.randrange(1, 4)]
        records = []
        counts = {label: 0 for label in labels}
        for i in range(rng.randrange(1, 60)):
            label = rng.choice(labels)
            counts[label] += 1
            records.append(rec(i, rng.random() < 0.5, label=label))
        brute = sum(1 for r in records if r.correct) / len(records)
        assert abs(weighted_accuracy(records, counts) - brute) <= 1e-12
        assert abs(micro_accuracy(records) - brute) <= 1e-12


def test_empty_test_set():
    with pytest.raises(EmptyTestSet):
        weighted_accuracy([], {})


# --- balance stats ------------------------------------------------------------


def test_balance_even_split():
    project = build_project({"a": (10, 5), "b": (10, 5)})
    rows = balance_stats(project)
    for row in rows.values():
        assert row.train_pct == 50.0
        assert row.test_pct == 50.0


def test_balance_makeup_fixture_to_tenth_percent():
    # five labels; two designated testing shares land on 9.2% and 5.0%
    project = build_project(
        {
            "glossier": (100, 46),
            "neutrogena": (100, 25),
            "covergirl": (100, 150),
            "clinique": (100, 150),
            "fenty": (100, 129),
        }
    )
    by_name = {}
    names = {label.id: label.name for label in project.live_labels()}
    for label_id, row in balance_stats(project).items():
        by_name[names[label_id]] = row
    assert round(by_name["glossier"].test_pct, 1) == 9.2
    assert round(by_name["neutrogena"].test_pct, 1) == 5.0
    assert abs(sum(r.train_pct for r in by_name.values()) - 100.0) <= 1e-9
    assert abs(sum(r.test_pct for r in by_name.values()) - 100.0) <= 1e-9


def test_balance_matches_hand_count(rng):
    spec = {f"label{i}": (rng.randrange(0, 30), rng.randrange(0, 30)) for i in range(4)}
    spec["label0"] = (max(spec["label0"][0], 1), max(spec["label0"][1], 1))
    project = build_project(spec)
    rows = balance_stats(project)
    names = {label.id: label.name for label in project.live_labels()}
    train_total = sum(t for t, _ in spec.values())
    test_total = sum(e for _, e in spec.values())
    for label_id, row in rows.items():
        t, e = spec[names[label_id]]
        assert abs(row.train_pct - 100.0 * t / train_total) <= 1e-9
        assert abs(row.test_pct - (100.0 * e / test_total if test_total else 0.0)) <= 1e-9


# --- evaluate_all ---------------------------------------------------------


def test_evaluate_all_separable_all_correct():
    project, blobs = build_dataset(
        {"red": (230, 20, 20), "blue": (20, 20, 230)}, per_label=10, test_per_label=4
    )
    model = train(project, blobs, seed=1)
    records = evaluate_all(project, model, blobs, recorded_at=99)
    live_test = [s for s in project.live_samples() if s.split is Split.TESTING]
    assert len(records) == len(live_test) == 8
    assert all(r.correct for r in records)
    assert all(r.recorded_at == 99 and r.model_version == model.version for r in records)


def test_evaluate_all_excludes_cascade_tombstones():
    project, blobs = build_dataset(
        {"red": (230, 20, 20), "blue": (20, 20, 230), "green": (20, 230, 20)}, per_label=6, test_per_label=3
    )
    model = train(project, blobs, seed=1)
    # tombstone one label after capture: its test samples drop out
    victim = model.label_order[0]
    project.labels[victim].deleted = True
    for sample in project.samples.values():
        if sample.label == victim:
            sample.deleted = True
    records = evaluate_all(project, model, blobs)
    assert len(records) == 6
    assert all(r.label != victim for r in records)


def test_evaluate_all_matches_brute_force_loop():
    project, blobs = build_dataset(
        {"red": (230, 20, 20), "blue": (20, 20, 230)}, per_label=8, test_per_label=5
    )
    model = train(project, blobs, seed=3)
    records = {r.sample_id: r for r in evaluate_all(project, model, blobs)}
    for sample in project.live_samples():
        if sample.split is not Split.TESTING:
            continue
        conf = classify(model, blobs[sample.blob])
        top = model.label_order[int(np.argmax(conf))]
        record = records[sample.id]
        assert record.predicted == top
        assert record.correct == (top == sample.label)
        assert np.allclose(record.confidence, conf)


# --- the game -------------------------------------------------------------


def scripted_game(confidences, labels=(L1, L2, L3), seed=0):
    """Run a game where round i ends with target confidence confidences[i]."""
    labels = list(labels)
    rounds = iter(confidences)

    cycle = TargetCycle(labels, seed)
    # predict the target sequence so the fake classifier can aim at it
    targets = [cycle.next() for _ in range(len(confidences))]
    index = {label: i for i, label in enumerate(labels)}
    feed = [solid_color(1, 1, (0, 0, 0))] * len(confidences)
    state = {"i": 0}

    def classify_fn(image):
        value = confidences[state["i"]]
        vec = np.zeros(len(labels))
        vec[index[targets[state["i"]]]] = value
        rest = (1 - value) / (len(labels) - 1) if len(labels) > 1 else 0.0
        for j in range(len(labels)):
            if j != index[targets[state["i"]]]:
                vec[j] = rest
        state["i"] += 1
        return vec

    return run_game(labels, classify_fn, feed, seed)


def test_confidence_075_scores_7_5():
    session = scripted_game([0.75])
    assert session.rounds[0].score == 7.5
    assert session.total_score == 7.5


def test_scripted_feed_totals_16_exactly():
    session = scripted_game([0.2, 0.5, 0.9])
    assert [r.score for r in session.rounds] == [2.0, 5.0, 9.0]
    assert session.total_score == 16.0


def test_max_rounds_18_and_upper_bound():
    assert max_rounds() == 18
    session = scripted_game([1.0] * 30)  # feed longer than the time limit allows
    assert len(session.rounds) == 18
    assert session.total_score == 180.0


def test_feed_shorter_than_limit_ends_session():
    session = scripted_game([0.5] * 4)
    assert len(session.rounds) == 4


def test_no_labels_raises():
    with pytest.raises(NoLabels):
        run_game([], lambda img: np.array([]), [], seed=0)


def test_target_cycle_no_repeats_until_exhaustion():
    labels = [L1, L2, L3]
    cycle = TargetCycle(labels, seed=11)
    drawn = [cycle.next() for _ in range(9)]
    assert set(drawn[:3]) == set(labels)
    assert set(drawn[3:6]) == set(labels)
    assert set(drawn[6:9]) == set(labels)
    # seeded: same seed, same order
    again = TargetCycle(labels, seed=11)
    assert [again.next() for _ in range(9)] == drawn


def test_high_score_monotone_across_sessions():
    best = 0.0
    for confidences in ([0.5, 0.5], [0.9], [0.1, 0.1, 0.1]):
        session = scripted_game(confidences)
        session.high_score = max(best, session.total_score)
        assert session.high_score >= best
        best = session.high_score
    assert best == 10.0  # the first session's 10.0 survives both weaker runs


def test_score_bounds_property(rng):
    for _ in range(30):
        confidences = [rng.random() for _ in range(rng.randrange(1, 19))]
        session = scripted_game(confidences)
        assert 0.0 <= session.total_score <= 10.0 * len(session.rounds)


def test_interactive_game_time_limit():
    clock = {"t": 0.0}
    game = InteractiveGame([L1, L2], seed=1, clock_s=lambda: clock["t"])
    played = 0
    while not game.over():
        game.next_target()
        game.finish_round([1.0, 0.0])
        played += 1
        clock["t"] += 5.0
    session = game.finish()
    assert len(session.rounds) == played == 18
    # a fresh game with a stalled clock is capped by max rounds instead
    game2 = InteractiveGame([L1], seed=2, clock_s=lambda: 0.0)
    while not game2.over():
        game2.finish_round([1.0])
    assert len(game2.finish().rounds) == 18
