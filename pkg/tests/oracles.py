"""Slow, obviously-correct reference implementations used by the tests."""
import numpy as np


def brute_force_fps(points, k, start):
    """Reference FPS: recompute every candidate's min distance from scratch."""
    chosen = [start]
    while len(chosen) < k:
        best, best_d = None, -1.0
        for i in range(len(points)):
            if i in chosen:
                continue
            d = min(float(np.sum((points[i] - points[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def analytic_iou(a_lo, a_hi, b_lo, b_hi):
    """IoU from explicit corner coordinates."""
    a_lo, a_hi, b_lo, b_hi = map(np.asarray, (a_lo, a_hi, b_lo, b_hi))
    inter = np.prod(np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0, None))
    va, vb = np.prod(a_hi - a_lo), np.prod(b_hi - b_lo)
    return inter / (va + vb - inter)


def pr_area(flags, num_gt):
    """All-point AP by walking the PR curve point by point."""
    points, tp = [], 0
    for k, f in enumerate(flags, start=1):
        tp += bool(f)
        points.append((tp / num_gt, tp / k))
    area, prev_recall = 0.0, 0.0
    for i, (recall, _) in enumerate(points):
        if recall > prev_recall:
            envelope = max(p for _, p in points[i:])
            area += (recall - prev_recall) * envelope
            prev_recall = recall
    return area


def all_matchings(eligible):
    """Every injective partial map pred -> GT over an eligibility matrix.

    Yields tuples ``m`` with ``m[i]`` the GT index of prediction ``i`` or -1.
    """
    n_pred, n_gt = eligible.shape

    def rec(i, used):
        if i == n_pred:
            yield ()
            return
        for rest in rec(i + 1, used):
            yield (-1,) + rest
        for j in range(n_gt):
            if eligible[i, j] and j not in used:
                for rest in rec(i + 1, used | {j}):
                    yield (j,) + rest

    yield from rec(0, frozenset())


def exhaustive_best_flags(eligible):
    """Among maximum-cardinality matchings, the TP pattern with the highest
    AP (preds are in descending-score order)."""
    best_count, best = -1, []
    for m in all_matchings(eligible):
        flags = tuple(j >= 0 for j in m)
        count = sum(flags)
        if count > best_count:
            best_count, best = count, [flags]
        elif count == best_count:
            best.append(flags)
    return best_count, best

