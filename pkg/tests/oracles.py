"""Brute-force reference implementations used only by the tests."""

from fractions import Fraction
from itertools import product


def pairwise_auc(scores, labels):
    """Enumerate every (positive, negative) pair; ties count one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y != 1]
    total = Fraction(0)
    for p, n in product(pos, neg):
        total += 1 if p > n else Fraction(1, 2) if p == n else 0
    return float(total / (len(pos) * len(neg)))


def sweep_average_precision(scores, labels):
    """Sum of precision times recall gain over every distinct score threshold."""
    n_pos = sum(1 for y in labels if y == 1)
    area, prev_recall = Fraction(0), Fraction(0)
    for t in sorted(set(scores), reverse=True):
        flagged = [y for s, y in zip(scores, labels) if s >= t]
        tp = sum(1 for y in flagged if y == 1)
        recall = Fraction(tp, n_pos)
        area += (recall - prev_recall) * Fraction(tp, len(flagged))
        prev_recall = recall
    return float(area)
