"""Detection metrics: balanced accuracy and rank-based AUROC."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def auroc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Probability that a random OOD score exceeds a random ID score.

    Mann-Whitney rank formulation with ties counted half. ``labels`` is
    True for OOD (the positive class). Exact and O(n log n); invariant
    under strictly increasing transforms of the scores.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both an OOD and an ID score present")
    ranks = rankdata(scores)  # average ranks on ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def accuracy(verdicts: Sequence[bool], labels: Sequence[bool]) -> float:
    """Balanced accuracy: mean of the per-class correct rates."""
    verdicts = np.asarray(verdicts, dtype=bool).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if verdicts.shape != labels.shape:
        raise ValueError("verdicts and labels must have equal length")
    if verdicts.size == 0:
        raise ValueError("accuracy of an empty verdict set is undefined")
    if labels.all() or not labels.any():
        raise ValueError("balanced accuracy needs both classes present")
    tpr = float((verdicts & labels).sum() / labels.sum())
    tnr = float((~verdicts & ~labels).sum() / (~labels).sum())
    return (tpr + tnr) / 2
