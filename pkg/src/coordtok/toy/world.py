"""Synthetic detection scenes and the token vocabulary the toy policy speaks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import seqfmt
from ..codec import NUM_BINS, ImageExtent, quantize
from ..rewards import LabeledBox
from ..seqfmt import PayloadKind, PredictionRecord

CATEGORIES = ("person", "car", "dog", "chair", "bottle")
NUM_CATEGORIES = len(CATEGORIES)
EXTENT = ImageExtent(1000.0, 1000.0)

# structural ids, then categories, then the 1000 coordinate ids last
REF_START, REF_END, BOX_START, BOX_END, COMMA, NONE, EOS = range(7)
CAT_BASE = 7
COORD_BASE = CAT_BASE + NUM_CATEGORIES
VOCAB_SIZE = COORD_BASE + NUM_BINS

MAX_OBJECTS = 4
BOX_SIDE = (60.0, 400.0)
OBS_BOX_NOISE = 15.0
# probability that a further object reuses a category already in the scene
REPEAT_PROB = 0.2


class ToyVocab:
    """Id <-> surface mapping.  Coordinates occupy the final 1000 ids."""

    size = VOCAB_SIZE
    coord_base = COORD_BASE

    @staticmethod
    def is_coord(t: int) -> bool:
        return COORD_BASE <= t < VOCAB_SIZE

    @staticmethod
    def is_category(t: int) -> bool:
        return CAT_BASE <= t < COORD_BASE

    @staticmethod
    def surface(ids) -> list:
        """Render ids as grammar tokens, stopping at end-of-sequence.

        A comma inside a payload becomes the box separator, elsewhere the
        record separator.
        """
        out = []
        in_payload = False
        for t in ids:
            t = int(t)
            if t == EOS:
                break
            if t >= COORD_BASE:
                out.append(f"<{t - COORD_BASE}>")
            elif t >= CAT_BASE:
                out.append(CATEGORIES[t - CAT_BASE])
            elif t == COMMA:
                out.append(seqfmt.BOX_SEP if in_payload else seqfmt.RECORD_SEP)
            elif t == NONE:
                out.append(seqfmt.NONE_LITERAL)
            else:
                if t == BOX_START:
                    in_payload = True
                elif t == BOX_END:
                    in_payload = False
                out.append(seqfmt.MARKERS[t])
        return out


@dataclass(frozen=True)
class Scene:
    """Objects on a 1000x1000 canvas plus a noisy per-category summary.

    ``obs_count[c]`` is the true count of category ``c`` perturbed by a
    uniform -1/0/+1 (floored at 1 when present, 0 when absent);
    ``obs_box[c]`` is the mean box of the category plus Gaussian noise,
    quantized to bins.
    """
    categories: np.ndarray  # (n,) int
    boxes: np.ndarray       # (n, 4) float
    obs_count: np.ndarray   # (5,) int
    obs_box: np.ndarray     # (5, 4) int bins

    @property
    def n_objects(self) -> int:
        return int(self.categories.shape[0])

    def gt_boxes(self) -> list:
        return [LabeledBox(tuple(b), CATEGORIES[c]) for c, b in zip(self.categories, self.boxes)]

    def gt_records(self) -> list:
        recs = []
        for c in range(NUM_CATEGORIES):
            sel = self.boxes[self.categories == c]
            if len(sel) == 0:
                recs.append(PredictionRecord(CATEGORIES[c], PayloadKind.BOX, absent=True))
            else:
                bins = [tuple(int(v) for v in quantize(b, EXTENT.width)) for b in sel]
                recs.append(PredictionRecord(CATEGORIES[c], PayloadKind.BOX, sorted(bins)))
        return recs

    def gt_tokens(self) -> np.ndarray:
        """Target id sequence: every category queried in order, then end-of-sequence."""
        ids = []
        for c, rec in enumerate(self.gt_records()):
            if c:
                ids.append(COMMA)
            ids += [REF_START, CAT_BASE + c, REF_END, BOX_START]
            if rec.absent:
                ids.append(NONE)
            else:
                for k, g in enumerate(rec.geometries):
                    if k:
                        ids.append(COMMA)
                    ids += [COORD_BASE + v for v in g]
            ids.append(BOX_END)
        ids.append(EOS)
        return np.asarray(ids, dtype=np.int64)


def generate_scene(seed, repeat_prob: float = REPEAT_PROB) -> Scene:
    """Deterministic scene for ``seed`` (an int or a numpy Generator)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = int(rng.integers(1, MAX_OBJECTS + 1))
    cats: list = []
    for _ in range(n):
        if cats and rng.random() < repeat_prob:
            cats.append(cats[int(rng.integers(len(cats)))])
        else:
            cats.append(int(rng.integers(NUM_CATEGORIES)))
    boxes = np.empty((n, 4))
    for k in range(n):
        w, h = rng.uniform(*BOX_SIDE, size=2)
        x0 = rng.uniform(0, EXTENT.width - w)
        y0 = rng.uniform(0, EXTENT.height - h)
        boxes[k] = (x0, y0, x0 + w, y0 + h)
    categories = np.asarray(cats, dtype=np.int64)
    obs_count = np.zeros(NUM_CATEGORIES, dtype=np.int64)
    obs_box = np.zeros((NUM_CATEGORIES, 4), dtype=np.int64)
    for c in range(NUM_CATEGORIES):
        sel = categories == c
        k = int(sel.sum())
        if k:
            obs_count[c] = max(1, k + int(rng.integers(-1, 2)))
            noisy = boxes[sel].mean(axis=0) + rng.normal(0.0, OBS_BOX_NOISE, size=4)
            obs_box[c] = quantize(noisy, EXTENT.width)
    for a in (categories, boxes, obs_count, obs_box):
        a.setflags(write=False)
    return Scene(categories, boxes, obs_count, obs_box)
