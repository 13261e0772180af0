"""Geometry-aware rewards for box, point-in-mask and point-in-box outputs.

Each reward is an F1-style combination of a soft recall and precision built
from per-target credits.  Two matching modes are offered:

``literal``
    every target independently takes its best prediction; one prediction may
    credit several targets, so precision can exceed 1.
``exclusive``
    one-to-one assignment maximizing total credit, so precision stays in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import iou_matrix, point_in_box

F1_EPS = 1e-6
MODES = ("literal", "exclusive")


class UndefinedRecall(ValueError):
    """Raised when there are no targets to recall."""


@dataclass(frozen=True)
class LabeledBox:
    box: tuple
    label: str

    def __post_init__(self):
        x0, y0, x1, y1 = (float(v) for v in self.box)
        if x0 > x1 or y0 > y1:
            raise ValueError(f"box corners out of order: {self.box}")
        object.__setattr__(self, "box", (x0, y0, x1, y1))


@dataclass(frozen=True)
class LabeledPoint:
    point: tuple
    label: str


@dataclass
class RewardReport:
    recall: float
    precision: float
    reward: float
    # (matched prediction index or None, credit) per target
    per_gt: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "recall": self.recall,
            "precision": self.precision,
            "reward": self.reward,
            "per_gt": [{"pred": p, "credit": c} for p, c in self.per_gt],
        }


def f1_combine(recall: float, precision: float, eps: float = F1_EPS) -> float:
    return 2.0 * precision * recall / (precision + recall + eps)


def _report(credit_rows, matched, n, m, eps) -> RewardReport:
    total = float(sum(credit_rows))
    recall = total / n
    precision = total / m if m > 0 else 0.0
    return RewardReport(recall, precision, f1_combine(recall, precision, eps),
                        list(zip(matched, (float(c) for c in credit_rows))))


def _assign(credit: np.ndarray):
    """Best one-to-one assignment of targets (rows) to predictions (cols).

    Returns per-row (col or None, credit).  Zero-credit pairings are reported
    as unmatched.
    """
    n = credit.shape[0]
    matched: list = [None] * n
    got = np.zeros(n)
    if credit.size == 0:
        return matched, got
    rows, cols = linear_sum_assignment(credit, maximize=True)
    for r, c in zip(rows, cols):
        if credit[r, c] > 0:
            matched[r] = int(c)
            got[r] = credit[r, c]
    return matched, got


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def box_iou_reward(preds: Sequence[LabeledBox], gts: Sequence[LabeledBox],
                   mode: str = "exclusive", eps: float = F1_EPS) -> RewardReport:
    """F1 of IoU credits between predicted and target boxes.

    In ``literal`` mode each target picks its max-IoU prediction regardless
    of label, and the credit is zeroed afterwards if labels differ.  In
    ``exclusive`` mode label mismatches carry zero credit up front and the
    assignment maximizes the total credit.
    """
    _check_mode(mode)
    n, m = len(gts), len(preds)
    if n == 0:
        raise UndefinedRecall("box_iou_reward needs at least one target")
    if m == 0:
        return _report(np.zeros(n), [None] * n, n, m, eps)
    ious = iou_matrix([g.box for g in gts], [p.box for p in preds])
    same = np.array([[g.label == p.label for p in preds] for g in gts])
    if mode == "literal":
        best = ious.argmax(axis=1)
        credit = np.where(same[np.arange(n), best], ious[np.arange(n), best], 0.0)
        matched = [int(b) if c > 0 else None for b, c in zip(best, credit)]
        return _report(credit, matched, n, m, eps)
    matched, credit = _assign(np.where(same, ious, 0.0))
    return _report(credit, matched, n, m, eps)


def point_in_mask_reward(preds: Sequence[LabeledPoint],
                         gt_masks: Sequence[tuple],
                         mode: str = "exclusive", eps: float = F1_EPS) -> RewardReport:
    """F1 of binary credits: a mask scores 1 when a same-label point lands in it."""
    _check_mode(mode)
    n, m = len(gt_masks), len(preds)
    if n == 0:
        raise UndefinedRecall("point_in_mask_reward needs at least one mask")
    hit = np.zeros((n, m))
    for j, (mask, label) in enumerate(gt_masks):
        for i, p in enumerate(preds):
            if p.label == label and mask.contains(p.point):
                hit[j, i] = 1.0
    if mode == "literal":
        credit = hit.max(axis=1) if m else np.zeros(n)
        matched = [int(np.argmax(hit[j])) if credit[j] > 0 else None for j in range(n)]
        return _report(credit, matched, n, m, eps)
    matched, credit = _assign(hit)
    return _report(credit, matched, n, m, eps)


def point_in_box_reward(pred, target) -> int:
    return int(point_in_box(pred, target))

