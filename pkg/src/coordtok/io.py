"""Ground-truth and prediction files.

Ground truth is COCO-style JSON::

    {"images": [{"id", "width", "height"}],
     "categories": [{"id", "name", "keypoints"?: [names], "keypoint_falloff"?: {name: k}}],
     "annotations": [{"image_id", "category_id", "bbox": [x, y, w, h],
                      "segmentation"?: [[x0, y0, x1, y1, ...]] | [x0, y0, ...],
                      "keypoints"?: [x, y, v, ...], "count"?: int}]}

Predictions are either raw model outputs, one ``image_id<TAB>sequence`` per
line, or a JSON list of structured items (see :func:`load_predictions`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .codec import ImageExtent, dequantize, dequantize_box
from .geometry import RasterMask, polygon_aabb, rasterize
from .metrics import KeypointInstance
from .rewards import LabeledBox, LabeledPoint
from .seqfmt import ParseDiagnostic, PayloadKind, lex, parse


class LoadError(ValueError):
    """Malformed input file; the message names the offending record."""


@dataclass
class Annotation:
    image_id: object
    category_id: object
    box: tuple                         # corners, clamped to the image
    polygon: Optional[list] = None     # [(x, y), ...]
    keypoints: Optional[dict] = None   # name -> (x, y, v)
    count: Optional[int] = None


@dataclass
class GroundTruthSet:
    images: dict          # id -> ImageExtent
    categories: dict      # id -> name
    annotations: list
    keypoint_names: dict = field(default_factory=dict)    # category id -> [names]
    falloff: dict = field(default_factory=dict)           # category id -> {name: k}
    _masks: dict = field(default_factory=dict, repr=False)
    _by_image: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for k, a in enumerate(self.annotations):
            self._by_image.setdefault(a.image_id, []).append(k)

    @property
    def image_ids(self) -> list:
        return list(self.images)

    def extent(self, image_id) -> ImageExtent:
        return self.images[image_id]

    def category_id(self, name: str):
        for cid, n in self.categories.items():
            if n == name:
                return cid
        return None

    def annotations_for(self, image_id) -> list:
        return [self.annotations[k] for k in self._by_image.get(image_id, [])]

    def boxes(self, image_id) -> list:
        return [LabeledBox(a.box, self.categories[a.category_id])
                for a in self.annotations_for(image_id)]

    def mask(self, k: int) -> RasterMask:
        """Mask of annotation ``k``: its polygon, or its box when no polygon is given.

        Rasterized on first use and cached.
        """
        if k not in self._masks:
            a = self.annotations[k]
            if a.polygon is not None:
                poly = a.polygon
            else:
                x0, y0, x1, y1 = a.box
                poly = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
            self._masks[k] = rasterize(poly, self.images[a.image_id])
        return self._masks[k]

    def masks(self, image_id) -> list:
        return [(self.mask(k), self.categories[self.annotations[k].category_id])
                for k in self._by_image.get(image_id, [])]

    def keypoint_instances(self, image_id) -> list:
        out = []
        for a in self.annotations_for(image_id):
            if a.keypoints is None:
                continue
            out.append(KeypointInstance(a.box, dict(a.keypoints), self.categories[a.category_id],
                                        self.falloff.get(a.category_id)))
        return out

    def count(self, image_id) -> int:
        """Object count of an image: the sum of explicit ``count`` fields, else annotations."""
        anns = self.annotations_for(image_id)
        explicit = [a.count for a in anns if a.count is not None]
        return sum(explicit) if explicit else len(anns)


def _need(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise LoadError(f"{where}: missing field {key!r}")
    return obj[key]


def _num(v, where, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != v or v in (float("inf"), float("-inf")):
        raise LoadError(f"{where}: expected a finite number, got {v!r}")
    if positive and v <= 0:
        raise LoadError(f"{where}: expected a positive number, got {v!r}")
    return float(v)


def _id(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, str)):
        raise LoadError(f"{where}: ids must be integers or strings, got {v!r}")
    return v


def _clamp_box(x, y, w, h, ext: ImageExtent):
    x0 = min(max(x, 0.0), ext.width)
    y0 = min(max(y, 0.0), ext.height)
    x1 = min(max(x + w, 0.0), ext.width)
    y1 = min(max(y + h, 0.0), ext.height)
    return (x0, y0, x1, y1)


def _polygon(seg, where):
    if isinstance(seg, list) and seg and isinstance(seg[0], list):
        if len(seg) != 1:
            raise LoadError(f"{where}: only single-part polygons are supported")
        seg = seg[0]
    if not isinstance(seg, list) or len(seg) < 6 or len(seg) % 2:
        raise LoadError(f"{where}: polygon needs an even list of >= 6 numbers")
    vals = [_num(v, where) for v in seg]
    return list(zip(vals[0::2], vals[1::2]))


def parse_ground_truth(doc) -> GroundTruthSet:
    """Validate a decoded ground-truth document."""
    if not isinstance(doc, dict):
        raise LoadError("ground truth must be a JSON object")
    images = {}
    for k, im in enumerate(_need(doc, "images", "root")):
        where = f"images[{k}]"
        iid = _id(_need(im, "id", where), where)
        if iid in images:
            raise LoadError(f"{where}: duplicate image id {iid!r}")
        images[iid] = ImageExtent(_num(_need(im, "width", where), where, True),
                                  _num(_need(im, "height", where), where, True))
    categories, kp_names, falloff = {}, {}, {}
    for k, c in enumerate(_need(doc, "categories", "root")):
        where = f"categories[{k}]"
        cid = _id(_need(c, "id", where), where)
        name = _need(c, "name", where)
        if not isinstance(name, str) or not name:
            raise LoadError(f"{where}: name must be a non-empty string")
        if cid in categories:
            raise LoadError(f"{where}: duplicate category id {cid!r}")
        categories[cid] = name
        if "keypoints" in c:
            kp_names[cid] = list(c["keypoints"])
        if "keypoint_falloff" in c:
            falloff[cid] = {n: _num(v, where, True) for n, v in c["keypoint_falloff"].items()}
    anns = []
    for k, a in enumerate(_need(doc, "annotations", "root")):
        where = f"annotations[{k}]"
        iid = _id(_need(a, "image_id", where), where)
        cid = _id(_need(a, "category_id", where), where)
        if iid not in images:
            raise LoadError(f"{where}: unknown image_id {iid!r}")
        if cid not in categories:
            raise LoadError(f"{where}: unknown category_id {cid!r}")
        bbox = _need(a, "bbox", where)
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise LoadError(f"{where}: bbox must be [x, y, w, h]")
        x, y, w, h = (_num(v, where) for v in bbox)
        if w < 0 or h < 0:
            raise LoadError(f"{where}: negative bbox size")
        poly = _polygon(a["segmentation"], where) if a.get("segmentation") else None
        kps = None
        if a.get("keypoints") is not None:
            flat = a["keypoints"]
            names = kp_names.get(cid)
            if names is None:
                raise LoadError(f"{where}: keypoints given but category {cid!r} names none")
            if not isinstance(flat, list) or len(flat) != 3 * len(names):
                raise LoadError(f"{where}: keypoints must hold x, y, v for {len(names)} names")
            vals = [_num(v, where) for v in flat]
            kps = {n: (vals[3 * i], vals[3 * i + 1], int(vals[3 * i + 2]))
                   for i, n in enumerate(names)}
        count = a.get("count")
        if count is not None and (isinstance(count, bool) or not isinstance(count, int) or count < 0):
            raise LoadError(f"{where}: count must be a non-negative integer")
        anns.append(Annotation(iid, cid, _clamp_box(x, y, w, h, images[iid]), poly, kps, count))
    return GroundTruthSet(images, categories, anns, kp_names, falloff)


def load_ground_truth(path) -> GroundTruthSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise LoadError(f"{path}: not valid JSON ({e})") from None
    return parse_ground_truth(doc)


def dump_ground_truth(gt: GroundTruthSet) -> dict:
    """Inverse of :func:`parse_ground_truth` (boxes come back clamped)."""
    cats = []
    for cid, name in gt.categories.items():
        c = {"id": cid, "name": name}
        if cid in gt.keypoint_names:
            c["keypoints"] = gt.keypoint_names[cid]
        if cid in gt.falloff:
            c["keypoint_falloff"] = gt.falloff[cid]
        cats.append(c)
    anns = []
    for a in gt.annotations:
        x0, y0, x1, y1 = a.box
        d = {"image_id": a.image_id, "category_id": a.category_id,
             "bbox": [x0, y0, x1 - x0, y1 - y0]}
        if a.polygon is not None:
            d["segmentation"] = [[v for p in a.polygon for v in p]]
        if a.keypoints is not None:
            d["keypoints"] = [v for n in gt.keypoint_names[a.category_id] for v in a.keypoints[n]]
        if a.count is not None:
            d["count"] = a.count
        anns.append(d)
    return {"images": [{"id": i, "width": e.width, "height": e.height} for i, e in gt.images.items()],
            "categories": cats, "annotations": anns}


# ---------------------------------------------------------------------------
# predictions

@dataclass
class ImagePredictions:
    tokens: list = field(default_factory=list)
    records: list = field(default_factory=list)
    boxes: list = field(default_factory=list)        # LabeledBox, pixels
    scores: list = field(default_factory=list)       # float or None, aligned with boxes
    points: list = field(default_factory=list)       # LabeledPoint, pixels
    keypoints: list = field(default_factory=list)    # KeypointInstance
    diagnostics: list = field(default_factory=list)  # ParseDiagnostic


@dataclass
class PredictionSet:
    images: dict
    # (line or item number, image id, diagnostic dict)
    diagnostics: list = field(default_factory=list)

    @property
    def has_scores(self) -> bool:
        return any(s is not None for p in self.images.values() for s in p.scores)

    def get(self, image_id) -> ImagePredictions:
        return self.images.get(image_id) or ImagePredictions()

    def diagnostics_by_image(self) -> dict:
        out: dict = {}
        for _, iid, d in self.diagnostics:
            out.setdefault(str(iid), []).append(d)
        return out


def _resolve_id(raw, gt: GroundTruthSet):
    if raw in gt.images:
        return raw
    s = str(raw).strip()
    for iid in gt.images:
        if str(iid) == s:
            return iid
    return None


def _ordered(b):
    x0, y0, x1, y1 = b
    return (min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def _absorb_records(pred: ImagePredictions, records, ext: ImageExtent):
    for r in records:
        pred.records.append(r)
        if r.absent:
            continue
        if r.kind is PayloadKind.BOX:
            for g in r.geometries:
                pred.boxes.append(LabeledBox(_ordered(dequantize_box(g, ext)), r.phrase))
                pred.scores.append(None)
        elif r.kind is PayloadKind.POINT:
            for g in r.geometries:
                pred.points.append(LabeledPoint((dequantize(g[0], ext.width),
                                                 dequantize(g[1], ext.height)), r.phrase))
        elif r.kind is PayloadKind.POLYGON:
            for g in r.geometries:
                pts = [(dequantize(g[i], ext.width), dequantize(g[i + 1], ext.height))
                       for i in range(0, len(g), 2)]
                pred.boxes.append(LabeledBox(tuple(polygon_aabb(pts)), r.phrase))
                pred.scores.append(None)
        elif r.kind is PayloadKind.KEYPOINT_JSON:
            for g, kp in zip(r.geometries, r.keypoints or []):
                box = _ordered(dequantize_box(g, ext))
                pts = {n: (None if p is None else
                           (dequantize(p[0], ext.width), dequantize(p[1], ext.height)))
                       for n, p in kp.items()}
                pred.keypoints.append(KeypointInstance(box, pts, r.phrase))
                pred.boxes.append(LabeledBox(box, r.phrase))
                pred.scores.append(None)


def _load_tsv(text, gt, kind, out: PredictionSet):
    # only newlines end a line; model output may contain other break characters
    for ln, line in enumerate(text.split("\n"), 1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        if "\t" not in line:
            out.diagnostics.append((ln, None, ParseDiagnostic(0, "recoverable",
                                    "line has no tab separator").to_dict()))
            continue
        raw_id, seq = line.split("\t", 1)
        iid = _resolve_id(raw_id, gt)
        if iid is None:
            out.diagnostics.append((ln, raw_id, ParseDiagnostic(0, "recoverable",
                                    f"unknown image_id {raw_id!r}").to_dict()))
            continue
        toks = lex(seq)
        records, diags = parse(toks, kind)
        pred = out.images.setdefault(iid, ImagePredictions())
        pred.tokens += toks
        pred.diagnostics += diags
        for d in diags:
            out.diagnostics.append((ln, iid, d.to_dict()))
        _absorb_records(pred, records, gt.extent(iid))


def _load_json_items(items, gt, out: PredictionSet):
    """Structured items, all in pixels::

        {"image_id", "label", "bbox": [x0, y0, x1, y1], "score"?: c}
        {"image_id", "label", "point": [x, y]}
        {"image_id", "label", "bbox": [...], "keypoints": {name: [x, y] | null}}
        {"image_id", "sequence": "<raw model output>"}
    """
    if not isinstance(items, list):
        raise LoadError("prediction JSON must be a list of items")
    for k, it in enumerate(items):
        where = f"item {k}"
        try:
            raw_id = _id(_need(it, "image_id", where), where)
            iid = _resolve_id(raw_id, gt)
            if iid is None:
                out.diagnostics.append((k, raw_id, ParseDiagnostic(0, "recoverable",
                                        f"unknown image_id {raw_id!r}").to_dict()))
                continue
            pred = out.images.setdefault(iid, ImagePredictions())
            if "sequence" in it:
                kind = PayloadKind.parse(it.get("kind", "box"))
                toks = lex(it["sequence"])
                records, diags = parse(toks, kind)
                pred.tokens += toks
                pred.diagnostics += diags
                out.diagnostics += [(k, iid, d.to_dict()) for d in diags]
                _absorb_records(pred, records, gt.extent(iid))
                continue
            label = _need(it, "label", where)
            if not isinstance(label, str):
                raise LoadError(f"{where}: label must be a string")
            if "point" in it:
                x, y = (_num(v, where) for v in it["point"])
                pred.points.append(LabeledPoint((x, y), label))
                continue
            box = tuple(_num(v, where) for v in _need(it, "bbox", where))
            if len(box) != 4 or box[0] > box[2] or box[1] > box[3]:
                raise LoadError(f"{where}: bbox must be [x0, y0, x1, y1] with ordered corners")
            score = it.get("score")
            if score is not None:
                score = _num(score, where)
                if not 0 <= score <= 1:
                    raise LoadError(f"{where}: score {score} outside [0, 1]")
            pred.boxes.append(LabeledBox(box, label))
            pred.scores.append(score)
            if "keypoints" in it:
                kps = {n: (None if p is None else (_num(p[0], where), _num(p[1], where)))
                       for n, p in it["keypoints"].items()}
                pred.keypoints.append(KeypointInstance(box, kps, label))
        except (LoadError, ValueError, TypeError, KeyError, IndexError) as e:
            out.diagnostics.append((k, it.get("image_id") if isinstance(it, dict) else None,
                                    ParseDiagnostic(0, "recoverable", str(e)).to_dict()))


def load_predictions(path, gt: GroundTruthSet, kind: PayloadKind = PayloadKind.BOX) -> PredictionSet:
    """Read a ``.json`` item list or a tab-separated sequence file.

    Unknown image ids and malformed lines become diagnostics, never exceptions.
    """
    text = Path(path).read_text()
    out = PredictionSet({})
    stripped = text.lstrip()
    if str(path).endswith(".json") or stripped.startswith("["):
        try:
            items = json.loads(text)
        except json.JSONDecodeError as e:
            raise LoadError(f"{path}: not valid JSON ({e})") from None
        _load_json_items(items, gt, out)
    else:
        _load_tsv(text, gt, kind, out)
    return out
