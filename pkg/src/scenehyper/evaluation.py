"""
Detection evaluation: greedy matching, all-point interpolated AP, mAP over
IoU thresholds, and the prediction dump format.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ParseError, ReportError
from .geometry import Box3D, box_iou_matrix


def _sort_by_score(preds: Sequence[Box3D]) -> list[int]:
    scores = np.array([p.score for p in preds], dtype=np.float64)
    return list(np.argsort(-scores, kind="stable"))


def match_predictions(preds: Sequence[Box3D], gts: Sequence[Box3D], iou_threshold: float) -> list[bool]:
    """TP/FP flag for each prediction, in the given (score-descending) order.

    Each prediction takes the unmatched same-category GT of highest IoU; it is
    a true positive when that IoU reaches the threshold.
    """
    flags = []
    if not preds:
        return flags
    if gts:
        iou = box_iou_matrix([p.center for p in preds], [p.size for p in preds],
                             [g.center for g in gts], [g.size for g in gts])
    gt_cat = np.array([g.category for g in gts], dtype=np.int64)
    taken = np.zeros(len(gts), dtype=bool)
    for i, p in enumerate(preds):
        if not gts:
            flags.append(False)
            continue
        cand = np.where((gt_cat == p.category) & ~taken, iou[i], -1.0)
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold and cand[j] >= 0:
            taken[j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(flags: Sequence[bool], scores: Sequence[float], num_gt: int) -> float:
    """Area under the precision envelope over recall (all-point interpolation)."""
    if num_gt <= 0:
        return 0.0
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    recall = tp / num_gt
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class DetectionReport:
    thresholds: list
    ap: dict  # threshold -> {category: AP}
    mean_ap: dict  # threshold -> mAP
    counts: dict  # threshold -> {category: {"tp", "fp", "gt"}}
    config: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        for key, value in sorted(self.config.items()):
            lines.append(f"config.{key}: {value}")
        for t in self.thresholds:
            lines.append(f"mAP@{t:g}: {self.mean_ap[t]:.6f}")
            for cat in sorted(self.ap[t]):
                c = self.counts[t][cat]
                lines.append(
                    f"AP@{t:g}.category_{cat}: {self.ap[t][cat]:.6f} "
                    f"(tp={c['tp']} fp={c['fp']} gt={c['gt']})"
                )
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "mean_ap": {f"{t:g}": v for t, v in self.mean_ap.items()},
            "ap": {f"{t:g}": {str(c): v for c, v in a.items()} for t, a in self.ap.items()},
            "counts": {f"{t:g}": {str(c): v for c, v in a.items()} for t, a in self.counts.items()},
            "config": self.config,
        }

    def write(self, path, summary_path=None) -> None:
        Path(path).write_text(self.to_text())
        if summary_path is not None:
            Path(summary_path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def mean_ap(all_preds: Mapping[str, Sequence[Box3D]], all_gts: Mapping[str, Sequence[Box3D]],
            thresholds: Sequence[float] = (0.25, 0.5), config: dict | None = None) -> DetectionReport:
    """Per-category AP pooled over scenes (matching stays within a scene).

    Categories without any GT are excluded from the mean.
    """
    unknown = set(all_preds) - set(all_gts)
    if unknown:
        raise ReportError(f"predictions for scenes without ground truth: {sorted(unknown)[:3]}")
    gt_counts: dict[int, int] = {}
    for boxes in all_gts.values():
        for g in boxes:
            gt_counts[g.category] = gt_counts.get(g.category, 0) + 1
    if not gt_counts:
        raise ReportError("no ground-truth boxes to evaluate against")

    scene_ids = list(all_gts)
    ap, means, counts = {}, {}, {}
    for t in thresholds:
        ap[t], counts[t] = {}, {}
        for cat in sorted(gt_counts):
            flags, scores = [], []
            for sid in scene_ids:
                preds = [p for p in all_preds.get(sid, ()) if p.category == cat]
                if not preds:
                    continue
                preds = [preds[i] for i in _sort_by_score(preds)]
                gts = [g for g in all_gts[sid] if g.category == cat]
                flags += match_predictions(preds, gts, t)
                scores += [p.score for p in preds]
            ap[t][cat] = average_precision(flags, scores, gt_counts[cat])
            tp = int(sum(flags))
            counts[t][cat] = {"tp": tp, "fp": len(flags) - tp, "gt": gt_counts[cat]}
        means[t] = float(np.mean(list(ap[t].values())))
    return DetectionReport(list(thresholds), ap, means, counts, dict(config or {}))


def class_accuracy(all_preds: Mapping[str, Sequence[Box3D]], all_gts: Mapping[str, Sequence[Box3D]],
                   categories: Sequence[int] | None = None, iou_threshold: float = 0.25) -> float:
    """Category accuracy on localized objects.

    For each GT box (optionally restricted to ``categories``) the highest
    scored prediction overlapping it by at least ``iou_threshold``, ignoring
    category, is taken; the GT counts as correct when that prediction's
    category matches. GTs with no overlapping prediction count as wrong.
    """
    total = correct = 0
    for sid, gts in all_gts.items():
        preds = list(all_preds.get(sid, ()))
        for g in gts:
            if categories is not None and g.category not in categories:
                continue
            total += 1
            if not preds:
                continue
            iou = box_iou_matrix([p.center for p in preds], [p.size for p in preds],
                                 [g.center], [g.size])[:, 0]
            hits = [i for i in _sort_by_score(preds) if iou[i] >= iou_threshold]
            if hits and preds[hits[0]].category == g.category:
                correct += 1
    if total == 0:
        raise ReportError("no ground-truth boxes in the requested categories")
    return correct / total


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_prediction_dump(preds: Mapping[str, Sequence[Box3D]], path) -> None:
    lines = []
    for sid, boxes in preds.items():
        for b in boxes:
            vals = " ".join(_fmt(v) for v in (b.score, *b.center, *b.size))
            lines.append(f"{sid} {b.category} {vals}")
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_prediction_dump(path) -> dict[str, list[Box3D]]:
    out: dict[str, list[Box3D]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 9:
            raise ParseError(f"expected 9 fields, got {len(tokens)}", path, lineno)
        try:
            cat = int(tokens[1])
            vals = [float(t) for t in tokens[2:]]
        except ValueError as exc:
            raise ParseError(f"bad field: {exc}", path, lineno) from exc
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", path, lineno)
        if min(vals[4:]) <= 0:
            raise ParseError("box size must be positive", path, lineno)
        out.setdefault(tokens[0], []).append(Box3D(tuple(vals[1:4]), tuple(vals[4:]), cat, vals[0]))
    return out
