"""Structured output grammar.

A response is a comma-joined list of phrase blocks::

    <|object_ref_start|>PHRASE<|object_ref_end|><|box_start|>PAYLOAD<|box_end|>

where PAYLOAD is a run of ``<N>`` coordinate tokens (boxes, points or one
polygon), the literal ``None`` for an absent phrase, or a JSON object for
keypoints.  Token sequences are plain ``list[str]``; ``"".join(tokens)``
gives the raw text back.
"""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Optional

from .codec import NUM_BINS, bin_to_text, text_to_bin, NotACoordinate

REF_START = "<|object_ref_start|>"
REF_END = "<|object_ref_end|>"
BOX_START = "<|box_start|>"
BOX_END = "<|box_end|>"
MARKERS = (REF_START, REF_END, BOX_START, BOX_END)
NONE_LITERAL = "None"
RECORD_SEP = ","
BOX_SEP = ", "
POINT_SEP = ","

_LEX_RE = re.compile(
    r"<\|object_ref_start\|>|<\|object_ref_end\|>|<\|box_start\|>|<\|box_end\|>|<\d{1,3}>"
)
_COORD_RUN_RE = re.compile(r"(?:<\d{1,3}>)+")
_SEPARATOR_RE = re.compile(r"[\s,]*")


class PayloadKind(enum.Enum):
    BOX = "box"
    POINT = "point"
    POLYGON = "polygon"
    KEYPOINT_JSON = "keypoint"

    @classmethod
    def parse(cls, name: str) -> "PayloadKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown payload kind {name!r}; "
                             f"expected one of {[k.value for k in cls]}") from None


class InvalidRecord(ValueError):
    pass


class ParseError(ValueError):
    """Raised by strict parsing; carries the diagnostics collected so far."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(f"@{d.position}: {d.message}" for d in self.diagnostics))


@dataclass(frozen=True)
class ParseDiagnostic:
    position: int
    severity: str  # "recoverable" | "fatal"
    message: str

    def to_dict(self):
        return {"position": self.position, "severity": self.severity, "message": self.message}


@dataclass
class PredictionRecord:
    phrase: str
    kind: PayloadKind
    geometries: list = field(default_factory=list)
    absent: bool = False
    keypoints: Optional[list] = None

    def validate(self):
        if not isinstance(self.phrase, str) or not self.phrase:
            raise InvalidRecord("phrase must be a non-empty string")
        if any(m in self.phrase for m in MARKERS) or _LEX_RE.search(self.phrase):
            raise InvalidRecord(f"phrase {self.phrase!r} contains grammar tokens")
        if self.absent:
            if self.geometries or self.keypoints:
                raise InvalidRecord("absent record cannot carry geometries")
            return self
        if not self.geometries:
            raise InvalidRecord("present record needs at least one geometry")
        for g in self.geometries:
            _check_bins(g)
            n = len(g)
            if self.kind in (PayloadKind.BOX, PayloadKind.KEYPOINT_JSON) and n != 4:
                raise InvalidRecord(f"box needs 4 bins, got {n}")
            if self.kind is PayloadKind.POINT and n != 2:
                raise InvalidRecord(f"point needs 2 bins, got {n}")
            if self.kind is PayloadKind.POLYGON and (n < 8 or n % 2):
                raise InvalidRecord(f"polygon needs an even count >= 8 bins, got {n}")
        if self.kind is PayloadKind.POLYGON and len(self.geometries) > 1:
            raise InvalidRecord("one polygon per phrase block")
        if self.kind is PayloadKind.KEYPOINT_JSON:
            kps = self.keypoints or []
            if len(kps) != len(self.geometries):
                raise InvalidRecord("keypoints must have one map per instance")
            for kp in kps:
                for name, pt in kp.items():
                    if not isinstance(name, str) or not name:
                        raise InvalidRecord("keypoint names must be non-empty strings")
                    if pt is not None:
                        _check_bins(pt)
                        if len(pt) != 2:
                            raise InvalidRecord("keypoint needs 2 bins")
        elif self.keypoints:
            raise InvalidRecord("keypoints only allowed on keypoint records")
        return self

    @property
    def n_geometries(self) -> int:
        return 0 if self.absent else len(self.geometries)


def _check_bins(g):
    for b in g:
        if not isinstance(b, int) or isinstance(b, bool) or not 0 <= b < NUM_BINS:
            raise InvalidRecord(f"bin {b!r} outside 0..{NUM_BINS - 1}")


def box_sort_key(g):
    return (g[0], g[1], g[2], g[3])


# ---------------------------------------------------------------------------
# lexing

def lex(raw: str) -> list:
    """Split text into marker tokens, ``<N>`` coordinate tokens and text runs."""
    out = []
    buf = []
    pos = 0
    for m in _LEX_RE.finditer(raw):
        s = m.group(0)
        if s[1] != "|":
            try:
                text_to_bin(s)
            except NotACoordinate:
                continue  # stays inside the surrounding text run
        if m.start() > pos:
            buf.append(raw[pos:m.start()])
        if buf:
            out.append("".join(buf))
            buf = []
        out.append(s)
        pos = m.end()
    if pos < len(raw):
        buf.append(raw[pos:])
    if buf:
        out.append("".join(buf))
    return out


def is_marker(tok: str) -> bool:
    return tok in MARKERS


def coord_value(tok: str):
    """Bin value of a coordinate token, or ``None`` for anything else."""
    if len(tok) < 3 or tok[0] != "<" or tok[1] == "|":
        return None
    try:
        return text_to_bin(tok)
    except NotACoordinate:
        return None


def detokenize(tokens) -> str:
    return "".join(tokens)


# ---------------------------------------------------------------------------
# serialization

def _coords(g):
    return [bin_to_text(b) for b in g]


def _keypoint_payload(rec: PredictionRecord) -> str:
    obj = {}
    for k, (g, kp) in enumerate(zip(rec.geometries, rec.keypoints or [])):
        obj[f"{rec.phrase}{k + 1}"] = {
            "box": "".join(_coords(g)),
            "keypoints": {name: (None if pt is None else "".join(_coords(pt)))
                          for name, pt in kp.items()},
        }
    return json.dumps(obj, ensure_ascii=False)


def serialize(records) -> list:
    """Render records to a token sequence (boxes sorted by x0, then y0, x1, y1)."""
    toks = []
    for i, rec in enumerate(records):
        rec.validate()
        if i:
            toks.append(RECORD_SEP)
        toks += [REF_START, rec.phrase, REF_END, BOX_START]
        if rec.absent:
            toks.append(NONE_LITERAL)
        elif rec.kind is PayloadKind.KEYPOINT_JSON:
            toks += lex(_keypoint_payload(rec))
        elif rec.kind is PayloadKind.POLYGON:
            for g in rec.geometries:
                toks += _coords(g)
        else:
            geoms = rec.geometries
            sep = POINT_SEP
            if rec.kind is PayloadKind.BOX:
                geoms = sorted(geoms, key=box_sort_key)
                sep = BOX_SEP
            for k, g in enumerate(geoms):
                if k:
                    toks.append(sep)
                toks += _coords(g)
        toks.append(BOX_END)
    return toks


def serialize_text(records) -> str:
    return detokenize(serialize(records))


# ---------------------------------------------------------------------------
# parsing

class _Diags:
    def __init__(self, strict):
        self.items = []
        self.strict = strict

    def add(self, position, message, severity="recoverable"):
        if self.items and self.items[-1].position >= position:
            # keep positions strictly increasing: fold into the previous entry
            last = self.items.pop()
            d = ParseDiagnostic(last.position, _worst(last.severity, severity),
                                f"{last.message}; {message}")
        else:
            d = ParseDiagnostic(position, severity, message)
        self.items.append(d)
        if self.strict:
            raise ParseError(self.items)


def _worst(a, b):
    return "fatal" if "fatal" in (a, b) else "recoverable"


def _is_separator(text: str) -> bool:
    return _SEPARATOR_RE.fullmatch(text) is not None


_GROUP = {PayloadKind.BOX: 4, PayloadKind.POINT: 2}


def _build_record(phrase, payload, kind, diags, end_pos, terminated):
    """payload: list of (index, token) strictly inside the box markers."""
    if kind is PayloadKind.KEYPOINT_JSON:
        text = "".join(t for _, t in payload)
        start = payload[0][0] if payload else end_pos
        if text.strip() == NONE_LITERAL:
            rec = PredictionRecord(phrase, kind, absent=True)
        else:
            insts = _keypoint_instances(text, start, diags)
            rec = PredictionRecord(phrase, kind, [b for _, b, _ in insts],
                                   keypoints=[kp for _, _, kp in insts])
        if not terminated:
            diags.add(end_pos, "unterminated payload")
        return rec

    coords = []
    saw_none = False
    for idx, tok in payload:
        v = coord_value(tok)
        if v is not None:
            coords.append(v)
            continue
        stripped = tok.strip(" \t\r\n,")
        if _is_separator(tok):
            continue
        if stripped == NONE_LITERAL and not coords:
            saw_none = True
            continue
        diags.add(idx, f"unexpected text {tok[:20]!r} in payload")

    if saw_none and not coords:
        if not terminated:
            diags.add(end_pos, "unterminated payload")
        return PredictionRecord(phrase, kind, absent=True)
    if saw_none:
        diags.add(payload[0][0], "None mixed with coordinates; None ignored")

    geoms = []
    problems = []
    if kind is PayloadKind.POLYGON:
        if len(coords) % 2:
            problems.append("odd coordinate count, trailing value dropped")
            coords = coords[:-1]
        if coords and len(coords) < 8:
            problems.append(f"polygon with {len(coords) // 2} vertices dropped")
        elif coords:
            geoms.append(tuple(coords))
    else:
        g = _GROUP[kind]
        full = len(coords) // g * g
        if full != len(coords):
            problems.append(f"incomplete trailing group of {len(coords) - full} dropped")
        geoms = [tuple(coords[i:i + g]) for i in range(0, full, g)]
    if not coords and not problems:
        problems.append("empty payload")
    if not terminated:
        problems.insert(0, "unterminated payload")
    if problems:
        diags.add(end_pos, "; ".join(problems))
    return PredictionRecord(phrase, kind, geoms)


def parse(tokens, expected: PayloadKind = PayloadKind.BOX, strict: bool = False):
    """Lenient parse of a token sequence (or raw string) into records.

    Returns ``(records, diagnostics)``.  Malformed spans yield recoverable
    diagnostics and are skipped; with ``strict=True`` the first diagnostic
    raises :class:`ParseError`.  The only fatal diagnostic is an unparseable
    keypoint JSON skeleton.
    """
    if isinstance(tokens, str):
        tokens = lex(tokens)
    toks = list(tokens)
    n = len(toks)
    diags = _Diags(strict)
    records = []

    if expected is PayloadKind.KEYPOINT_JSON and REF_START not in toks:
        text = "".join(toks)
        if not text.strip():
            return records, diags.items
        insts = _keypoint_instances(text, 0, diags)
        return _group_instances(insts), diags.items

    i = 0
    while i < n:
        tok = toks[i]
        if tok == REF_START:
            j = i + 1
            parts = []
            while j < n and toks[j] not in MARKERS:
                parts.append(toks[j])
                j += 1
            if j >= n:
                diags.add(n, "unterminated phrase")
                break
            if toks[j] != REF_END:
                diags.add(j, f"expected {REF_END}, found {toks[j]}")
                i = j
                continue
            phrase = "".join(parts)
            if not phrase:
                diags.add(j, "empty phrase")
            k = j + 1
            while k < n and toks[k] not in MARKERS and _is_separator(toks[k]):
                k += 1
            if k >= n:
                diags.add(n, "missing payload")
                break
            if toks[k] != BOX_START:
                diags.add(k, f"expected {BOX_START}, found {toks[k][:20]!r}")
                i = k
                continue
            m = k + 1
            payload = []
            while m < n and toks[m] not in MARKERS:
                payload.append((m, toks[m]))
                m += 1
            terminated = m < n and toks[m] == BOX_END
            before = len(diags.items)
            rec = _build_record(phrase, payload, expected, diags, m, terminated)
            bad = [p for p in range(i + 1, j) if coord_value(toks[p]) is not None]
            if bad:
                diags.add(max(bad[0], m), "coordinate token inside phrase; block skipped")
            elif rec.absent or rec.geometries:
                if phrase:
                    records.append(rec)
            elif len(diags.items) == before:
                diags.add(m, "no geometry recovered")
            i = m + 1 if terminated else m
        elif tok in MARKERS:
            diags.add(i, f"unexpected {tok}")
            i += 1
        elif coord_value(tok) is not None:
            diags.add(i, "coordinate outside payload")
            i += 1
        else:
            if not _is_separator(tok):
                diags.add(i, f"stray text {tok[:20]!r}")
            i += 1
    return records, diags.items


def parse_text(raw: str, expected: PayloadKind = PayloadKind.BOX, strict: bool = False):
    return parse(lex(raw), expected, strict)


# ---------------------------------------------------------------------------
# keypoint JSON

def _quote_coord_runs(text: str) -> str:
    """Wrap bare ``<a><b>...`` runs in quotes so the JSON skeleton parses."""
    out = []
    pos = 0
    in_str = False
    esc = False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
            i += 1
            continue
        if ch == '"':
            in_str = True
            i += 1
            continue
        if ch == "<":
            m = _COORD_RUN_RE.match(text, i)
            if m:
                out.append(text[pos:i])
                out.append('"' + m.group(0) + '"')
                pos = i = m.end()
                continue
        i += 1
    out.append(text[pos:])
    return "".join(out)


def _coord_string(value, want):
    if value is None:
        return None
    if not isinstance(value, str):
        raise ValueError("coordinates must be a token string")
    s = value.strip()
    if s == NONE_LITERAL:
        return None
    toks = _COORD_RUN_RE.fullmatch(s)
    if toks is None:
        raise ValueError(f"not a coordinate run: {s[:30]!r}")
    bins = tuple(text_to_bin(t) for t in re.findall(r"<\d{1,3}>", s))
    if len(bins) != want:
        raise ValueError(f"expected {want} coordinates, got {len(bins)}")
    return bins


def _load_skeleton(text: str):
    quoted = _quote_coord_runs(text.strip())
    try:
        obj = json.loads(quoted)
    except json.JSONDecodeError:
        try:
            obj = json.loads("[" + quoted + "]")
        except json.JSONDecodeError as e:
            raise ValueError(str(e)) from None
    if isinstance(obj, list):
        merged = {}
        for part in obj:
            if not isinstance(part, dict):
                raise ValueError("top level must be an object of instances")
            merged.update(part)
        obj = merged
    if not isinstance(obj, dict):
        raise ValueError("top level must be an object of instances")
    return obj


def _keypoint_instances(text, position, diags):
    try:
        obj = _load_skeleton(text)
    except (ValueError, NotACoordinate) as e:
        diags.add(position, f"unparseable keypoint JSON: {e}", severity="fatal")
        return []
    out = []
    for name, inst in obj.items():
        if not isinstance(inst, dict) or "box" not in inst or "keypoints" not in inst:
            diags.add(position, f"instance {name!r} lacks box/keypoints; skipped")
            continue
        try:
            box = _coord_string(inst["box"], 4)
            if box is None:
                raise ValueError("box is None")
            kps = inst["keypoints"]
            if not isinstance(kps, dict):
                raise ValueError("keypoints must be an object")
            kp = {str(k): _coord_string(v, 2) for k, v in kps.items()}
        except (ValueError, NotACoordinate) as e:
            diags.add(position, f"instance {name!r}: {e}; skipped")
            continue
        out.append((str(name), box, kp))
    return out


def _instance_phrase(name: str) -> str:
    base = name.rstrip("0123456789")
    return base or name


def _group_instances(insts):
    records = {}
    for name, box, kp in insts:
        ph = _instance_phrase(name)
        rec = records.setdefault(ph, PredictionRecord(ph, PayloadKind.KEYPOINT_JSON, [], keypoints=[]))
        rec.geometries.append(box)
        rec.keypoints.append(kp)
    return list(records.values())


def parse_keypoint_json(tokens):
    """Extract ``(instance_name, box_bins, {name: (x, y) | None})`` triples.

    Accepts either a bare JSON object or phrase blocks whose payloads are
    JSON.  Returns ``(instances, diagnostics)``.
    """
    if isinstance(tokens, str):
        tokens = lex(tokens)
    toks = list(tokens)
    diags = _Diags(False)
    if REF_START not in toks:
        text = "".join(toks)
        if not text.strip():
            return [], diags.items
        return _keypoint_instances(text, 0, diags), diags.items
    out = []
    i = 0
    n = len(toks)
    while i < n:
        if toks[i] == BOX_START:
            j = i + 1
            while j < n and toks[j] not in MARKERS:
                j += 1
            text = "".join(toks[i + 1:j])
            if text.strip() and text.strip() != NONE_LITERAL:
                out += _keypoint_instances(text, i + 1, diags)
            i = j
        else:
            i += 1
    return out, diags.items
