"""Readers and writers for detection records, ground truth and vocabularies.

Detection files are JSON Lines, one record per line::

    {"image_id": "img_1", "polygon": [[0, 0], [10, 0], [10, 5], [0, 5]],
     "score": 0.93, "transcription": "HELLO", "model": "pan", "scale": 1280}

Ground-truth files follow the ICDAR layout, one file per image and one word
per line: ``x1,y1,x2,y2,x3,y3,x4,y4,transcription``.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Union

from .errors import BadPolygon, EmptyWord, InvalidPolygon, ParseError, ScoreRange
from .geometry import Polygon

log = logging.getLogger(__name__)

DONT_CARE = "###"
DETECTION_FIELDS = ("image_id", "polygon", "score", "transcription", "model", "scale")

Stream = Union[IO[bytes], IO[str], Iterable[Union[bytes, str]]]


@dataclass(frozen=True)
class Detection:
    """One predicted word region.

    ``region`` is in inference-image pixels until merged into the original
    frame. ``index`` is the 1-based line of the record in its source file and
    only serves as the last tie-breaker between equal scores.
    """

    image_id: str
    region: Polygon
    score: float
    transcription: Optional[str] = None
    model: str = ""
    scale: float = 1.0
    index: int = 0

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score!r} outside [0, 1]")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale {self.scale!r} must be positive")

    def tie_key(self) -> tuple:
        """Ordering among equal scores: (model, scale, file order), then geometry."""
        return (self.model, self.scale, self.index, self.region.vertices, self.transcription or "")


@dataclass(frozen=True)
class GroundTruthWord:
    image_id: str
    region: Polygon
    transcription: str
    dont_care: bool = False

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")


class WordClass(enum.Enum):
    IV = "IV"
    OOV = "OOV"


def normalize(word: str, case_fold: bool = True) -> str:
    """Case-fold only; punctuation and accents are left alone."""
    return word.lower() if case_fold else word


@dataclass(frozen=True)
class Vocabulary:
    words: frozenset = field(default_factory=frozenset)
    case_fold: bool = True

    @classmethod
    def from_words(cls, words: Iterable[str], case_fold: bool = True, sentinel: str = DONT_CARE) -> "Vocabulary":
        normed = {normalize(w, case_fold) for w in words if w and w != sentinel}
        normed.discard("")
        return cls(frozenset(normed), case_fold)

    def normalize(self, word: str) -> str:
        return normalize(word, self.case_fold)

    def __contains__(self, word: str) -> bool:
        return self.normalize(word) in self.words

    def __len__(self) -> int:
        return len(self.words)

    def describe(self) -> dict:
        return {"size": len(self.words), "case_fold": self.case_fold}


def _lines(stream: Stream) -> Iterator[tuple[int, str]]:
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(f"invalid UTF-8: {exc}", lineno) from None
        if lineno == 1:
            raw = raw.lstrip("\ufeff")
        yield lineno, raw.rstrip("\r\n")


def _number(value, what: str, lineno: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{what} must be a number, got {value!r}", lineno)
    return float(value)


def _parse_polygon(value, lineno: int) -> Polygon:
    if not isinstance(value, list):
        raise ParseError("polygon must be an array of [x, y] pairs", lineno)
    pts = []
    for pt in value:
        if not (isinstance(pt, list) and len(pt) == 2):
            raise ParseError(f"polygon vertex {pt!r} is not an [x, y] pair", lineno)
        pts.append((_number(pt[0], "x", lineno), _number(pt[1], "y", lineno)))
    if len(pts) < 3:
        raise BadPolygon(f"polygon needs at least 3 vertices, got {len(pts)}", lineno)
    try:
        return Polygon(pts)
    except InvalidPolygon as exc:
        raise BadPolygon(str(exc), lineno) from None


def parse_detection_record(
    text: str,
    lineno: int,
    declared_model: Optional[str] = None,
    declared_scale: Optional[float] = None,
) -> Detection:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(rec, dict):
        raise ParseError("record must be a JSON object", lineno)
    unknown = sorted(set(rec) - set(DETECTION_FIELDS))
    if unknown:
        log.warning("line %d: ignoring unknown fields %s", lineno, ", ".join(unknown))

    image_id = rec.get("image_id")
    if not isinstance(image_id, str) or not image_id:
        raise ParseError("image_id must be a non-empty string", lineno)
    if "polygon" not in rec:
        raise ParseError("missing field 'polygon'", lineno)
    region = _parse_polygon(rec["polygon"], lineno)
    if "score" not in rec:
        raise ParseError("missing field 'score'", lineno)
    score = _number(rec["score"], "score", lineno)
    if not 0.0 <= score <= 1.0:
        raise ScoreRange(f"score {score!r} outside [0, 1]", lineno)
    transcription = rec.get("transcription")
    if transcription is not None and not isinstance(transcription, str):
        raise ParseError("transcription must be a string or null", lineno)

    model = rec.get("model", declared_model)
    if not isinstance(model, str):
        raise ParseError("missing or non-string field 'model'", lineno)
    if declared_model is not None and model != declared_model:
        raise ParseError(f"model {model!r} differs from declared {declared_model!r}", lineno)
    if "scale" in rec:
        scale = _number(rec["scale"], "scale", lineno)
    elif declared_scale is not None:
        scale = float(declared_scale)
    else:
        raise ParseError("missing field 'scale'", lineno)
    if not (math.isfinite(scale) and scale > 0):
        raise ParseError(f"scale {scale!r} must be positive", lineno)
    if declared_scale is not None and scale != float(declared_scale):
        raise ParseError(f"scale {scale!r} differs from declared {declared_scale!r}", lineno)

    return Detection(image_id, region, score, transcription, model, scale, lineno)


def parse_detections(
    stream: Stream,
    declared_model: Optional[str] = None,
    declared_scale: Optional[float] = None,
) -> list[Detection]:
    """Parse a JSON Lines detection stream.

    Records may omit ``model``/``scale`` when the caller declares them;
    declared values that disagree with a record are a ``ParseError``. Blank
    lines are skipped. Scores outside [0, 1] raise ``ScoreRange`` rather than
    being clamped.
    """
    return [
        parse_detection_record(text, lineno, declared_model, declared_scale)
        for lineno, text in _lines(stream)
        if text.strip()
    ]


def detection_to_record(d: Detection) -> dict:
    rec = {"image_id": d.image_id, "polygon": d.region.to_list(), "score": d.score}
    if d.transcription is not None:
        rec["transcription"] = d.transcription
    rec["model"] = d.model
    rec["scale"] = d.scale
    return rec


def serialize_detections(dets: Iterable[Detection]) -> str:
    return "".join(json.dumps(detection_to_record(d), ensure_ascii=False) + "\n" for d in dets)


def parse_ground_truth(stream: Stream, image_id: str, sentinel: str = DONT_CARE) -> list[GroundTruthWord]:
    """Parse one ICDAR-style ground-truth file.

    Commas inside the transcription survive: everything after the eighth
    coordinate is re-joined.
    """
    words = []
    for lineno, text in _lines(stream):
        if not text.strip():
            continue
        fields = text.split(",")
        if len(fields) < 9:
            raise ParseError(f"expected 8 coordinates and a transcription, got {len(fields)} fields", lineno)
        try:
            coords = [float(v) for v in fields[:8]]
        except ValueError:
            raise ParseError("coordinates must be decimal numbers", lineno) from None
        if not all(math.isfinite(c) for c in coords):
            raise ParseError("coordinates must be finite", lineno)
        transcription = ",".join(fields[8:])
        if not transcription:
            raise ParseError("empty transcription", lineno)
        try:
            region = Polygon.from_flat(coords)
        except InvalidPolygon as exc:
            raise BadPolygon(str(exc), lineno) from None
        words.append(GroundTruthWord(image_id, region, transcription, transcription == sentinel))
    return words


def gt_image_id(path: Path) -> str:
    """``gt_img_12.txt`` and ``img_12.txt`` both name image ``img_12``."""
    stem = path.stem
    return stem[3:] if stem.startswith("gt_") and len(stem) > 3 else stem


def load_ground_truth_dir(directory: Union[str, Path], sentinel: str = DONT_CARE) -> dict[str, list[GroundTruthWord]]:
    """Read every ``*.txt`` file under ``directory`` keyed by image id."""
    out: dict[str, list[GroundTruthWord]] = {}
    for path in sorted(Path(directory).glob("*.txt")):
        image_id = gt_image_id(path)
        if image_id in out:
            raise ParseError(f"duplicate ground truth for image {image_id!r}", 1, str(path))
        with path.open("rb") as fh:
            try:
                out[image_id] = parse_ground_truth(fh, image_id, sentinel)
            except ParseError as exc:
                raise exc.with_source(str(path)) from None
    return out


def build_vocabulary(gt_words: Iterable[GroundTruthWord], case_fold: bool = True) -> Vocabulary:
    return Vocabulary.from_words((w.transcription for w in gt_words if not w.dont_care), case_fold)


def read_vocabulary(stream: Stream, case_fold: bool = True, sentinel: str = DONT_CARE) -> Vocabulary:
    words = (text.strip() for _, text in _lines(stream))
    return Vocabulary.from_words((w for w in words if w), case_fold, sentinel)


def format_vocabulary(v: Vocabulary) -> str:
    return "".join(w + "\n" for w in sorted(v.words))


def classify_word(transcription: str, v: Vocabulary, sentinel: Optional[str] = DONT_CARE) -> WordClass:
    if not transcription or (sentinel is not None and transcription == sentinel):
        raise EmptyWord(f"cannot classify {transcription!r}")
    return WordClass.IV if v.normalize(transcription) in v.words else WordClass.OOV


def parse_image_sizes(stream: Stream) -> dict[str, float]:
    """Two-column table ``image_id,longer_side`` (comma, tab or spaces)."""
    sizes: dict[str, float] = {}
    for lineno, text in _lines(stream):
        text = text.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.replace(",", " ").split()
        if len(parts) != 2:
            raise ParseError("expected 'image_id,longer_side'", lineno)
        try:
            size = float(parts[1])
        except ValueError:
            raise ParseError(f"bad size {parts[1]!r}", lineno) from None
        if not (math.isfinite(size) and size > 0):
            raise ParseError(f"size {size!r} must be positive", lineno)
        if parts[0] in sizes:
            raise ParseError(f"duplicate image id {parts[0]!r}", lineno)
        sizes[parts[0]] = size
    return sizes

