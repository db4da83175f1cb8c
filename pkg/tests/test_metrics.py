import re

import numpy as np
import pytest

from trajkit.evaluation import ConfusionMatrix, confusion, metrics, topk_accuracy
from trajkit.evaluation.report import confusion_svg, metrics_table_csv, parse_confusion_csv

from oracles import brute_metrics, brute_topk


def test_confusion_examples():
    cm = confusion([0, 0, 1], [0, 1, 1], [0, 1])
    np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 1]])
    cm = confusion(list("abc"), list("abc"), list("abc"))
    np.testing.assert_array_equal(cm.counts, np.eye(3))
    with pytest.raises(ValueError, match="unknown label"):
        confusion(["a"], ["z"], ["a", "b"])


def test_confusion_counts_against_pair_counting(rng):
    t = rng.integers(0, 6, 500)
    p = rng.integers(0, 6, 500)
    cm = confusion(t, p, range(6))
    for i in range(6):
        for j in range(6):
            assert cm.counts[i, j] == sum(1 for a, b in zip(t, p) if a == i and b == j)
    assert cm.total == 500


def test_perfect_predictions():
    y = [0, 1, 2, 2, 1]
    probs = np.eye(3)[y]
    r = metrics(confusion(y, y, range(3)), probs, y, topk=(1, 3))
    for v in (r.overall_accuracy, r.macro_accuracy, r.weighted_precision, r.weighted_recall,
              r.weighted_f1, r.iba, r.topk[1], r.topk[3]):
        assert v == 1.0


def test_hand_arithmetic():
    cm = ConfusionMatrix(np.array([[1, 1], [0, 1]]), ["a", "b"])
    r = metrics(cm)
    assert r.overall_accuracy == pytest.approx(2 / 3)
    assert r.per_class_recall == {"a": 0.5, "b": 1.0}
    assert r.macro_accuracy == 0.75
    assert r.top3 is None and r.topk == {}


def test_random_run_matches_brute_force(rng):
    C = 7
    true = rng.integers(0, C, 300)
    pred = np.where(rng.random(300) < 0.5, true, rng.integers(0, C, 300))
    r = metrics(confusion(true, pred, range(C)))
    oracle = brute_metrics(list(true), list(pred), C)
    for k, v in oracle.items():
        assert abs(getattr(r, k) - v) < 1e-12, k
    assert abs(r.overall_accuracy - r.weighted_recall) < 1e-12


def test_topk(rng):
    probs = np.array([[0.5, 0.3, 0.2], [0.1, 0.2, 0.7]])
    assert topk_accuracy(probs, [1, 1], 2) == 1.0
    assert topk_accuracy(probs, [2, 0], 3) == 1.0
    with pytest.raises(ValueError):
        topk_accuracy(probs, [0, 0], 4)
    p = rng.dirichlet(np.ones(9), size=200)
    p[:20, :2] = 0.05  # ties resolved toward the lower class index
    y = rng.integers(0, 9, 200)
    for k in range(1, 10):
        assert topk_accuracy(p, y, k) == brute_topk(p, y, k)


def test_topk_requires_probabilities():
    with pytest.raises(ValueError, match="probabilities"):
        metrics(confusion([0], [0], [0, 1]), topk=(3,))


def test_svg_cells_match_csv(rng):
    t = rng.integers(0, 4, 80)
    p = rng.integers(0, 4, 80)
    names = np.array(["w", "x", "y", "z"])
    cm = confusion(names[t], names[p], list(names))
    classes, counts = parse_confusion_csv("# header\n" + cm.to_csv())
    assert classes == cm.classes
    svg = confusion_svg(cm, "t", header="trajkit 0.1.0 config=abc")
    assert "<!-- trajkit 0.1.0 config=abc -->" in svg
    cells = re.findall(r'data-row="(\d+)" data-col="(\d+)" data-value="([0-9.]+)"', svg)
    assert len(cells) == 16
    for i, j, v in cells:
        i, j = int(i), int(j)
        assert abs(float(v) - counts[i, j] / counts[i].sum()) < 5e-7


def test_metrics_table_csv():
    r = metrics(confusion([0, 1], [0, 0], [0, 1]))
    text = metrics_table_csv({"m": r})
    head, row = text.strip().split("\n")
    assert head.startswith("model,overall_accuracy,macro_accuracy")
    assert row.startswith("m,0.500000,0.500000")
