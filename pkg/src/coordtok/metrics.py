"""Confidence-free evaluation: per-category recall / precision / F1 over IoU or
OKS thresholds, score-threshold sweeps, point hits, counting and GUI accuracy.

Datasets are passed as aligned per-image lists.  Recall and precision are
computed per category over the whole dataset, macro-averaged over the
categories that have ground truth, and F1 is their harmonic mean.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import iou_matrix, point_in_box
from .rewards import LabeledBox

THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
SWEEP_STEPS = 101
DEFAULT_OKS_K = 0.1


class InvalidInput(ValueError):
    pass


class UndefinedOKS(ValueError):
    pass


def harmonic(r: float, p: float) -> float:
    return 2 * r * p / (r + p) if r + p > 0 else 0.0


def greedy_pairs(sim: np.ndarray, threshold: float = 0.0):
    """One-to-one greedy matching on a (gt, pred) similarity matrix.

    Candidate pairs are visited by similarity descending, ties broken by
    (gt index, pred index); a pair is accepted when its similarity reaches
    ``threshold`` and neither side is taken yet.  Returns ``(gt, pred, sim)``
    triples in acceptance order.
    """
    if sim.size == 0:
        return []
    g, p = np.nonzero(sim >= threshold) if threshold > 0 else np.nonzero(sim > 0)
    if g.size == 0:
        return []
    vals = sim[g, p]
    order = np.lexsort((p, g, -vals))
    used_g, used_p = set(), set()
    out = []
    for k in order:
        a, b = int(g[k]), int(p[k])
        if a in used_g or b in used_p:
            continue
        used_g.add(a)
        used_p.add(b)
        out.append((a, b, float(vals[k])))
    return out


def match_detections(preds: Sequence[LabeledBox], gts: Sequence[LabeledBox],
                     iou_threshold: float = 0.5):
    """Greedy per-category matching; returns ``(gt_index, pred_index, iou)`` triples."""
    if not 0 < iou_threshold <= 1:
        raise InvalidInput(f"threshold must lie in (0, 1], got {iou_threshold}")
    out = []
    for label in {g.label for g in gts}:
        gi = [j for j, g in enumerate(gts) if g.label == label]
        pi = [i for i, p in enumerate(preds) if p.label == label]
        sim = iou_matrix([gts[j].box for j in gi], [preds[i].box for i in pi])
        for a, b, s in greedy_pairs(sim, iou_threshold):
            out.append((gi[a], pi[b], s))
    return sorted(out)


@dataclass
class ThresholdSuite:
    """Per-threshold macro recall / precision / F1."""
    thresholds: tuple
    recall: list
    precision: list
    f1: list
    categories: list = field(default_factory=list)

    def at(self, t: float) -> float:
        for k, th in enumerate(self.thresholds):
            if abs(th - t) < 1e-9:
                return self.f1[k]
        raise KeyError(t)

    @property
    def f1_at_50(self) -> float:
        return self.f1[0]

    @property
    def f1_at_95(self) -> float:
        return self.f1[-1]

    @property
    def f1_mean(self) -> float:
        return float(np.mean(self.f1))

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "recall": list(self.recall),
            "precision": list(self.precision),
            "f1": list(self.f1),
            "f1_at_50": self.f1_at_50,
            "f1_at_95": self.f1_at_95,
            "f1_mean": self.f1_mean,
            "recall_mean": float(np.mean(self.recall)),
            "precision_mean": float(np.mean(self.precision)),
            "categories": list(self.categories),
        }


@dataclass
class DetectionEvalResult(ThresholdSuite):
    @property
    def f1_miou(self) -> float:
        return self.f1_mean

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["f1_miou"] = d.pop("f1_mean")
        return d

    def table(self) -> str:
        return format_table(["F1@0.5", "F1@0.95", "F1@mIoU"],
                            [[self.f1_at_50, self.f1_at_95, self.f1_miou]])


def format_table(header, rows, row_names=None, scale=100.0, digits=1) -> str:
    """Aligned plain-text table; floats are scaled (percent by default)."""
    cells = []
    for r in rows:
        cells.append([f"{v * scale:.{digits}f}" if isinstance(v, float) else str(v) for v in r])
    if row_names is not None:
        header = [""] + list(header)
        cells = [[n] + c for n, c in zip(row_names, cells)]
    widths = [max(len(str(h)), *(len(c[k]) for c in cells)) if cells else len(str(h))
              for k, h in enumerate(header)]
    line = "  ".join(str(h).rjust(w) for h, w in zip(header, widths))
    out = [line, "-" * len(line)]
    for c in cells:
        out.append("  ".join(v.rjust(w) for v, w in zip(c, widths)))
    return "\n".join(out)


def _as_dataset(preds, gts):
    """Accept a single image (flat lists) or aligned per-image lists."""
    def flat(x):
        return len(x) == 0 or not isinstance(x[0], (list, tuple))
    if flat(preds) and flat(gts):
        return [list(preds)], [list(gts)]
    if len(preds) != len(gts):
        raise InvalidInput(f"{len(preds)} prediction images vs {len(gts)} ground-truth images")
    return [list(p) for p in preds], [list(g) for g in gts]


def _suite(tp, n_pred, n_gt, thresholds, cls=ThresholdSuite):
    """Macro-average per-category counts; ``tp[label]`` is per-threshold."""
    cats = sorted(c for c in n_gt if n_gt[c] > 0)
    if not cats:
        raise InvalidInput("no ground-truth instances to evaluate")
    T = len(thresholds)
    R = np.zeros(T)
    P = np.zeros(T)
    for c in cats:
        hits = np.asarray(tp.get(c, np.zeros(T)), dtype=np.float64)
        R += hits / n_gt[c]
        if n_pred.get(c, 0) > 0:
            P += hits / n_pred[c]
    R /= len(cats)
    P /= len(cats)
    f1 = [harmonic(float(r), float(p)) for r, p in zip(R, P)]
    return cls(tuple(thresholds), R.tolist(), P.tolist(), f1, cats)


def _accumulate(sim_fn, preds_ds, gts_ds, thresholds):
    tp: dict = defaultdict(lambda: np.zeros(len(thresholds)))
    n_pred: dict = defaultdict(int)
    n_gt: dict = defaultdict(int)
    th = np.asarray(thresholds)
    for preds, gts in zip(preds_ds, gts_ds):
        labels = {g.label for g in gts} | {p.label for p in preds}
        for label in labels:
            gi = [g for g in gts if g.label == label]
            pi = [p for p in preds if p.label == label]
            n_gt[label] += len(gi)
            n_pred[label] += len(pi)
            if not gi or not pi:
                continue
            # greedy at threshold t accepts exactly the full-greedy pairs with sim >= t
            accepted = np.array([s for _, _, s in greedy_pairs(sim_fn(gi, pi), min(th))])
            if accepted.size:
                tp[label] += (accepted[None, :] >= th[:, None]).sum(axis=1)
    return tp, n_pred, n_gt


def _box_sim(gi, pi):
    return iou_matrix([g.box for g in gi], [p.box for p in pi])


def detection_f1(preds, gts, thresholds=THRESHOLDS) -> DetectionEvalResult:
    """Macro R/P/F1 at each IoU threshold with greedy IoU-descending matching.

    A category with predictions but no ground truth anywhere is not averaged;
    within an averaged category, false positives on images without that
    category still count against precision.
    """
    preds_ds, gts_ds = _as_dataset(preds, gts)
    tp, n_pred, n_gt = _accumulate(_box_sim, preds_ds, gts_ds, thresholds)
    return _suite(tp, n_pred, n_gt, thresholds, DetectionEvalResult)


def score_threshold_sweep(scored_preds, gts, metric: str = "f1_at_50",
                          steps: int = SWEEP_STEPS):
    """Best confidence cut-off in ``{0, 0.01, ..., 1}``; lowest threshold wins ties.

    ``scored_preds`` holds ``(LabeledBox, confidence)`` pairs, per image or flat.
    Returns ``(best_threshold, best_value, result_at_best)``.
    """
    def flat(x):
        return len(x) == 0 or isinstance(x[0], tuple) and isinstance(x[0][0], LabeledBox)
    if flat(scored_preds):
        scored_ds, gts_ds = [list(scored_preds)], [list(gts)]
    else:
        scored_ds, gts_ds = [list(s) for s in scored_preds], [list(g) for g in gts]
    for img in scored_ds:
        for _, c in img:
            if not 0 <= c <= 1:
                raise InvalidInput(f"confidence {c} outside [0, 1]")
    best = (None, -1.0, None)
    for k in range(steps):
        t = k / (steps - 1)
        kept = [[b for b, c in img if c >= t - 1e-12] for img in scored_ds]
        res = detection_f1(kept, gts_ds)
        v = getattr(res, metric)
        if v > best[1] + 1e-15:
            best = (round(t, 2), v, res)
    return best


def _point_hits(masks, points):
    return np.array([[1.0 if m.contains(p.point) else 0.0 for p in points] for m in masks])


def point_f1(pred_points, gt_masks):
    """Macro (R, P, F1) where a point hits a same-label mask containing it.

    ``gt_masks`` holds ``(RasterMask, label)`` pairs, per image or flat.
    """
    def flat(x):
        return len(x) == 0 or not isinstance(x[0], list)
    if flat(pred_points) and flat(gt_masks):
        preds_ds, gts_ds = [list(pred_points)], [list(gt_masks)]
    else:
        preds_ds, gts_ds = [list(p) for p in pred_points], [list(g) for g in gt_masks]
    if len(preds_ds) != len(gts_ds):
        raise InvalidInput("point and mask lists are not aligned")
    tp: dict = defaultdict(lambda: np.zeros(1))
    n_pred: dict = defaultdict(int)
    n_gt: dict = defaultdict(int)
    for preds, gts in zip(preds_ds, gts_ds):
        for label in {lab for _, lab in gts} | {p.label for p in preds}:
            mi = [m for m, lab in gts if lab == label]
            pi = [p for p in preds if p.label == label]
            n_gt[label] += len(mi)
            n_pred[label] += len(pi)
            if mi and pi:
                tp[label] += len(greedy_pairs(_point_hits(mi, pi), 1.0))
    s = _suite(tp, n_pred, n_gt, (1.0,))
    return s.recall[0], s.precision[0], s.f1[0]


def count_mae(pred_counts: Mapping, gt_counts: Mapping) -> float:
    if set(pred_counts) != set(gt_counts):
        raise InvalidInput("predicted and ground-truth counts cover different images")
    if not gt_counts:
        raise InvalidInput("no images to evaluate")
    return float(np.mean([abs(pred_counts[k] - gt_counts[k]) for k in gt_counts]))


def gui_accuracy(pred_points: Sequence, targets: Sequence) -> float:
    """Fraction of queries whose point lands in the target box (``None`` misses)."""
    if len(pred_points) != len(targets):
        raise InvalidInput(f"{len(pred_points)} points vs {len(targets)} targets")
    if not targets:
        raise InvalidInput("no queries to evaluate")
    hits = sum(p is not None and point_in_box(p, b) for p, b in zip(pred_points, targets))
    return hits / len(targets)


@dataclass
class KeypointInstance:
    """One instance: a box plus named keypoints ``name -> (x, y, visible)``.

    Missing predictions may be ``None``.  ``falloff`` maps keypoint names to
    per-name constants; unnamed keypoints use ``DEFAULT_OKS_K``.
    """
    box: tuple
    keypoints: dict
    label: str = "person"
    falloff: Optional[dict] = None

    @property
    def scale(self) -> float:
        x0, y0, x1, y1 = self.box
        return math.sqrt(max(x1 - x0, 0.0) * max(y1 - y0, 0.0))


def oks(pred: KeypointInstance, gt: KeypointInstance) -> float:
    """Mean over visible ground-truth keypoints of ``exp(-d^2 / (2 s^2 k^2))``."""
    visible = [n for n, v in gt.keypoints.items() if v is not None and (len(v) < 3 or v[2])]
    if not visible:
        raise UndefinedOKS("ground truth has no visible keypoints")
    s = gt.scale
    table = gt.falloff or {}
    total = 0.0
    for name in visible:
        q = pred.keypoints.get(name)
        if q is None:
            continue
        g = gt.keypoints[name]
        d2 = (q[0] - g[0]) ** 2 + (q[1] - g[1]) ** 2
        k = table.get(name, DEFAULT_OKS_K)
        denom = 2.0 * s * s * k * k
        if denom == 0:
            total += 1.0 if d2 == 0 else 0.0
        else:
            total += math.exp(-d2 / denom)
    return total / len(visible)


def _oks_sim(gi, pi):
    return np.array([[oks(p, g) for p in pi] for g in gi])


def keypoint_f1(preds, gts, thresholds=THRESHOLDS) -> ThresholdSuite:
    """Macro R/P/F1 at each OKS threshold with greedy OKS-descending matching."""
    preds_ds, gts_ds = _as_dataset(preds, gts)
    tp, n_pred, n_gt = _accumulate(_oks_sim, preds_ds, gts_ds, thresholds)
    return _suite(tp, n_pred, n_gt, thresholds)
