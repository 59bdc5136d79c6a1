import numpy as np
import pytest

from napmon.metrics import accuracy, auroc


def pairwise_auroc(scores, labels):
    """O(n^2) Mann-Whitney oracle: P(ood > id) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    pos = scores[labels]
    neg = scores[~labels]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def test_auroc_perfect_separation():
    assert auroc([0, 0, 1, 1], [False, False, True, True]) == 1.0
    assert auroc([1, 1, 0, 0], [False, False, True, True]) == 0.0


def test_auroc_all_ties():
    assert auroc([3, 3, 3, 3], [False, True, False, True]) == 0.5


def test_auroc_single_class_rejected():
    with pytest.raises(ValueError):
        auroc([1, 2], [True, True])
    with pytest.raises(ValueError):
        auroc([1, 2], [False, False])


def test_auroc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for trial in range(30):
        n = 200
        # Mix of continuous and heavily tied integer scores.
        if trial % 2:
            scores = rng.integers(0, 8, size=n).astype(float)
        else:
            scores = rng.normal(size=n)
        labels = rng.integers(0, 2, size=n).astype(bool)
        if labels.all() or not labels.any():
            continue
        assert auroc(scores, labels) == pytest.approx(
            pairwise_auroc(scores, labels), abs=1e-12
        )


def test_auroc_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=100)
    labels = rng.integers(0, 2, size=100).astype(bool)
    base = auroc(scores, labels)
    assert auroc(3 * scores + 7, labels) == pytest.approx(base, abs=1e-12)
    assert auroc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)


def test_auroc_complement_without_ties():
    rng = np.random.default_rng(2)
    scores = rng.permutation(50).astype(float)  # all distinct
    labels = np.array([i % 3 == 0 for i in range(50)])
    assert auroc(scores, labels) + auroc(scores, ~labels) == pytest.approx(1.0)


def test_accuracy_all_correct_and_inverted():
    labels = np.array([True, False, True, False])
    assert accuracy(labels, labels) == 1.0
    assert accuracy(~labels, labels) == 0.0


def test_accuracy_counting_oracle():
    rng = np.random.default_rng(3)
    verdicts = rng.integers(0, 2, size=300).astype(bool)
    labels = rng.integers(0, 2, size=300).astype(bool)
    tp = ((verdicts) & (labels)).sum() / labels.sum()
    tn = ((~verdicts) & (~labels)).sum() / (~labels).sum()
    assert accuracy(verdicts, labels) == pytest.approx((tp + tn) / 2)


def test_accuracy_single_class_rejected():
    with pytest.raises(ValueError):
        accuracy([True, False], [True, True])
    with pytest.raises(ValueError):
        accuracy([], [])
