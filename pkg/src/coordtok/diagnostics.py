"""Failure detectors for generated sequences, strip-and-re-evaluate ablations,
and coordinate token accounting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .codec import ImageExtent, dequantize_box
from .metrics import DetectionEvalResult, detection_f1, format_table
from .rewards import LabeledBox
from .seqfmt import (BOX_END, BOX_START, REF_END, REF_START, PayloadKind,
                     PredictionRecord, coord_value, lex, parse)

MIN_RUN = 10
LARGE_BOX_RATIO = 0.95
DETECTORS = ("duplicates", "large_box")


class InvalidInput(ValueError):
    pass


@dataclass
class BoxGroup:
    phrase: str
    bins: tuple
    start: int   # token index of the first coordinate
    stop: int    # one past the last coordinate


def _tokens(seq):
    return lex(seq) if isinstance(seq, str) else list(seq)


def box_groups(tokens) -> list:
    """Complete 4-coordinate groups inside terminated or trailing payloads."""
    out = []
    phrase = None
    in_ref = False
    in_payload = False
    pending: list = []
    parts: list = []
    for i, tok in enumerate(tokens):
        if tok == REF_START:
            in_ref, in_payload, parts, phrase = True, False, [], None
        elif tok == REF_END:
            if in_ref:
                phrase = "".join(parts)
            in_ref = False
        elif tok == BOX_START:
            in_payload, pending = True, []
        elif tok == BOX_END:
            in_payload = False
        elif in_ref:
            parts.append(tok)
        elif in_payload:
            v = coord_value(tok)
            if v is None:
                continue
            pending.append((i, v))
            if len(pending) == 4:
                out.append(BoxGroup(phrase or "", tuple(v for _, v in pending),
                                    pending[0][0], pending[-1][0] + 1))
                pending = []
    return out


def max_coord_run(tokens) -> int:
    """Longest run of equal coordinate values, skipping non-coordinate tokens."""
    best = cur = 0
    prev = None
    for tok in tokens:
        v = coord_value(tok)
        if v is None:
            continue
        cur = cur + 1 if v == prev else 1
        prev = v
        best = max(best, cur)
    return best


@dataclass
class DuplicateFlag:
    flagged: bool
    run_length: int
    pred_count: int
    gt_count: int
    removed_spans: list = field(default_factory=list)

    def to_dict(self):
        return {"flagged": self.flagged, "run_length": self.run_length,
                "pred_count": self.pred_count, "gt_count": self.gt_count,
                "removed_spans": [list(s) for s in self.removed_spans]}


def detect_duplicates(seq, gt_count: int, min_run: int = MIN_RUN) -> DuplicateFlag:
    """Flag a degenerate repeat: a coordinate run of ``min_run`` or more and
    more than twice as many predicted boxes as ground-truth objects.

    When flagged, ``removed_spans`` lists the token ranges of every box group
    that repeats an earlier group of the same phrase.
    """
    if gt_count < 0:
        raise InvalidInput("gt_count must be >= 0")
    toks = _tokens(seq)
    groups = box_groups(toks)
    run = max_coord_run(toks)
    m = len(groups)
    flagged = run >= min_run and m > 2 * gt_count
    spans = []
    if flagged:
        seen = set()
        for g in groups:
            key = (g.phrase, g.bins)
            if key in seen:
                spans.append((g.start, g.stop))
            else:
                seen.add(key)
    return DuplicateFlag(flagged, run, m, gt_count, spans)


@dataclass
class LargeBoxFlag:
    flagged: bool
    box_area_ratio: float

    def to_dict(self):
        return {"flagged": self.flagged, "box_area_ratio": self.box_area_ratio}


def _box_geoms(records):
    return [(r.phrase, g) for r in records
            if not r.absent and r.kind in (PayloadKind.BOX, PayloadKind.KEYPOINT_JSON)
            for g in r.geometries]


def detect_large_box(records: Sequence[PredictionRecord], extent: ImageExtent,
                     ratio: float = LARGE_BOX_RATIO) -> LargeBoxFlag:
    """Flag an output made of exactly one box covering more than ``ratio`` of the image."""
    boxes = _box_geoms(records)
    if len(boxes) != 1:
        return LargeBoxFlag(False, 0.0)
    x0, y0, x1, y1 = dequantize_box(boxes[0][1], extent)
    area = max(x1 - x0, 0.0) * max(y1 - y0, 0.0) / (extent.width * extent.height)
    return LargeBoxFlag(area > ratio, area)


def labeled_boxes(records, extent: ImageExtent) -> list:
    """Dequantize box records into pixel-space :class:`LabeledBox` items."""
    out = []
    for phrase, g in _box_geoms(records):
        x0, y0, x1, y1 = dequantize_box(g, extent)
        out.append(LabeledBox((min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)), phrase))
    return out


@dataclass
class AblationReport:
    detector: str
    before: DetectionEvalResult
    after: DetectionEvalResult
    removed: int
    total: int
    flagged_images: int
    n_images: int

    @property
    def removal_ratio(self) -> float:
        """Removed predictions over all predictions."""
        return self.removed / self.total if self.total else 0.0

    @property
    def f1_gain(self) -> float:
        return self.after.f1_at_50 - self.before.f1_at_50

    def to_dict(self) -> dict:
        return {
            "detector": self.detector,
            "f1_at_50_before": self.before.f1_at_50,
            "f1_at_50_after": self.after.f1_at_50,
            "f1_gain": self.f1_gain,
            "removal_ratio": self.removal_ratio,
            "removal_ratio_basis": "removed predictions / total predictions",
            "removed": self.removed,
            "total_predictions": self.total,
            "flagged_images": self.flagged_images,
            "n_images": self.n_images,
            "before": self.before.to_dict(),
            "after": self.after.to_dict(),
        }

    def table(self) -> str:
        return format_table(["F1@0.5", "F1@0.5 after", "Remov."],
                            [[self.before.f1_at_50, self.after.f1_at_50, self.removal_ratio]],
                            row_names=[self.detector])


def strip_and_reeval(sequences, gts, extents, detector: str = "duplicates") -> AblationReport:
    """Evaluate, drop what ``detector`` flags, and evaluate again.

    ``sequences`` are raw outputs per image (token lists or strings), ``gts``
    pixel-space :class:`LabeledBox` lists, ``extents`` one :class:`ImageExtent`
    per image.  Duplicate removal keeps the first copy of each repeated box;
    large-box removal drops the offending box.
    """
    if detector not in DETECTORS:
        raise InvalidInput(f"detector must be one of {DETECTORS}, got {detector!r}")
    if not (len(sequences) == len(gts) == len(extents)):
        raise InvalidInput("sequences, gts and extents must be aligned")
    before, after = [], []
    removed = total = flagged = 0
    for seq, gt, ext in zip(sequences, gts, extents):
        toks = _tokens(seq)
        records, _ = parse(toks, PayloadKind.BOX)
        boxes = labeled_boxes(records, ext)
        before.append(boxes)
        total += len(boxes)
        kept = boxes
        if detector == "duplicates":
            flag = detect_duplicates(toks, len(gt))
            if flag.flagged:
                flagged += 1
                kept = dedupe_boxes(boxes)
        else:
            if detect_large_box(records, ext).flagged:
                flagged += 1
                kept = []
        removed += len(boxes) - len(kept)
        after.append(kept)
    return AblationReport(detector, detection_f1(before, gts), detection_f1(after, gts),
                          removed, total, flagged, len(sequences))


def dedupe_boxes(boxes: Sequence[LabeledBox]) -> list:
    seen = set()
    out = []
    for b in boxes:
        key = (b.label, b.box)
        if key not in seen:
            seen.add(key)
            out.append(b)
    return out


# ---------------------------------------------------------------------------
# token accounting

SCHEMES = ("special_token", "digit_absolute")


def digit_tokens(box) -> int:
    """Atomic tokens of ``[x0, y0, x1, y1]``: one per digit, comma and bracket."""
    return sum(len(str(abs(int(v)))) + (int(v) < 0) for v in box) + 3 + 2


@dataclass
class TokenCount:
    scheme: str
    boxes: int
    coordinate_tokens: int
    separator_tokens: int

    @property
    def tokens_per_box(self) -> float:
        return self.coordinate_tokens / self.boxes if self.boxes else 0.0

    @property
    def tokens_total(self) -> int:
        return self.coordinate_tokens + self.separator_tokens

    def to_dict(self):
        return {"scheme": self.scheme, "boxes": self.boxes,
                "tokens_per_box": self.tokens_per_box,
                "coordinate_tokens": self.coordinate_tokens,
                "separator_tokens": self.separator_tokens,
                "tokens_total": self.tokens_total}


def token_efficiency(records: Sequence[PredictionRecord], scheme: str = "special_token",
                     extent: Optional[ImageExtent] = None) -> TokenCount:
    """Count tokens needed to write the boxes of ``records`` under ``scheme``.

    ``special_token`` spends one token per coordinate and reports the
    between-box separators apart.  ``digit_absolute`` writes each box as
    ``[x0, y0, x1, y1]`` text, in pixels when ``extent`` is given (bin values
    otherwise), and counts every digit, comma and bracket as part of the box.
    """
    if scheme not in SCHEMES:
        raise InvalidInput(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    n_boxes = coord = sep = 0
    for r in records:
        if r.absent:
            continue
        if r.kind is not PayloadKind.BOX:
            raise InvalidInput(f"token accounting needs box records, got {r.kind.value}")
        geoms = r.geometries
        n_boxes += len(geoms)
        if scheme == "special_token":
            coord += 4 * len(geoms)
            sep += max(len(geoms) - 1, 0)
        else:
            for g in geoms:
                vals = g if extent is None else [round(v) for v in dequantize_box(g, extent)]
                coord += digit_tokens(vals)
    return TokenCount(scheme, n_boxes, coord, sep)


__all__ = [
    "DuplicateFlag", "LargeBoxFlag", "AblationReport", "TokenCount", "BoxGroup",
    "detect_duplicates", "detect_large_box", "strip_and_reeval", "token_efficiency",
    "digit_tokens", "box_groups", "max_coord_run", "labeled_boxes", "dedupe_boxes",
]
