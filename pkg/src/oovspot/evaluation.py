"""IV/OOV-split scoring of detection and end-to-end recognition output.

Detections are matched greedily to ground truth by IoU, one-to-one, in
descending score order. Ground-truth words are split into in-vocabulary and
out-of-vocabulary by a training vocabulary; precision, recall and h-mean are
micro-averaged over the whole dataset per split, and the "All" figure is the
plain average of the IV and OOV figures.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import ConfigError, FrameMismatch, MissingTranscription
from .geometry import as_convex, convex_iou
from .ingest import DONT_CARE, Detection, GroundTruthWord, Vocabulary, classify_word, normalize

TASKS = ("detection", "end_to_end")
SPLITS = ("IV", "OOV", "combined")
FP_ATTRIBUTIONS = ("auto", "both", "transcription")


def hmean(p: float, r: float) -> float:
    if p + r == 0:
        return 0.0
    return 2.0 * p * r / (p + r)


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...] = ()
    unmatched_detections: tuple[int, ...] = ()
    unmatched_gt: tuple[int, ...] = ()
    dont_care_absorbed: tuple[int, ...] = ()


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class SplitMetrics:
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    precision: float = 0.0
    recall: float = 0.0
    fscore: float = 0.0

    @classmethod
    def from_counts(cls, c: Counts) -> "SplitMetrics":
        p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
        r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
        return cls(c.tp, c.fp, c.fn, p, r, hmean(p, r))


def aggregate_all(iv: SplitMetrics, oov: SplitMetrics) -> SplitMetrics:
    """Average IV and OOV rates componentwise; counts are summed for reference."""
    return SplitMetrics(
        iv.true_positives + oov.true_positives,
        iv.false_positives + oov.false_positives,
        iv.false_negatives + oov.false_negatives,
        (iv.precision + oov.precision) / 2.0,
        (iv.recall + oov.recall) / 2.0,
        (iv.fscore + oov.fscore) / 2.0,
    )


def _single_image(dets: Sequence[Detection], gts: Sequence[GroundTruthWord]) -> None:
    ids = {d.image_id for d in dets} | {g.image_id for g in gts}
    if len(ids) > 1:
        raise FrameMismatch(f"inputs span several images: {sorted(ids)}")


def match(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthWord],
    iou_threshold: float = 0.5,
    strict: bool = False,
) -> MatchResult:
    """Greedy one-to-one IoU matching for one image.

    Detections are visited by descending score (ties by ``Detection.tie_key``);
    each claims the unclaimed ground-truth word with the highest IoU at or
    above ``iou_threshold``. Don't-care words are never claimed, so any number
    of detections may be absorbed by them.
    """
    _single_image(dets, gts)
    gt_regions = [as_convex(g.region, strict) for g in gts]
    gt_keys = [(g.region.vertices, g.transcription) for g in gts]
    det_regions = [as_convex(d.region, strict) for d in dets]
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].tie_key()))

    claimed = [False] * len(gts)
    pairs, spurious, absorbed = [], [], []
    for di in order:
        best, best_iou = -1, 0.0
        for gi, region in enumerate(gt_regions):
            if claimed[gi]:
                continue
            ov = convex_iou(det_regions[di], region)
            if ov <= 0.0 or ov < iou_threshold:
                continue
            if best < 0 or ov > best_iou or (ov == best_iou and gt_keys[gi] < gt_keys[best]):
                best, best_iou = gi, ov
        if best < 0:
            spurious.append(di)
        elif gts[best].dont_care:
            absorbed.append(di)
        else:
            claimed[best] = True
            pairs.append((di, best))
    missed = [gi for gi, g in enumerate(gts) if not g.dont_care and not claimed[gi]]
    return MatchResult(tuple(pairs), tuple(sorted(spurious)), tuple(missed), tuple(sorted(absorbed)))


def _gt_split(g: GroundTruthWord, vocab: Vocabulary) -> str:
    # don't-care words were already excluded through their flag
    return classify_word(g.transcription, vocab, sentinel=None).value


def _det_split(d: Detection, vocab: Vocabulary) -> str:
    if not d.transcription:
        raise MissingTranscription(f"detection {d.index} of {d.image_id!r} has no transcription")
    return classify_word(d.transcription, vocab).value


def _attribute_fp(counts: dict, d: Optional[Detection], vocab: Vocabulary, mode: str) -> None:
    if mode == "both":
        counts["IV"].fp += 1
        counts["OOV"].fp += 1
    elif d is None:
        raise ValueError("transcription attribution needs the detections")
    else:
        counts[_det_split(d, vocab)].fp += 1
    counts["combined"].fp += 1


def detection_counts(
    m: MatchResult,
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthWord],
    vocab: Vocabulary,
    fp_attribution: str = "both",
) -> dict[str, Counts]:
    counts = {s: Counts() for s in SPLITS}
    for _, gi in m.pairs:
        counts[_gt_split(gts[gi], vocab)].tp += 1
        counts["combined"].tp += 1
    for gi in m.unmatched_gt:
        counts[_gt_split(gts[gi], vocab)].fn += 1
        counts["combined"].fn += 1
    for di in m.unmatched_detections:
        _attribute_fp(counts, dets[di] if dets else None, vocab, fp_attribution)
    return counts


def e2e_counts(
    m: MatchResult,
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthWord],
    vocab: Vocabulary,
    case_fold: bool = True,
    fp_attribution: str = "transcription",
) -> dict[str, Counts]:
    counts = {s: Counts() for s in SPLITS}
    for di, gi in m.pairs:
        d, g = dets[di], gts[gi]
        if not d.transcription:
            raise MissingTranscription(f"detection {d.index} of {d.image_id!r} has no transcription")
        split = _gt_split(g, vocab)
        if normalize(d.transcription, case_fold) == normalize(g.transcription, case_fold):
            counts[split].tp += 1
            counts["combined"].tp += 1
        else:
            # a misread word is both a false alarm and a miss, charged to the GT's split
            for s in (split, "combined"):
                counts[s].fp += 1
                counts[s].fn += 1
    for gi in m.unmatched_gt:
        counts[_gt_split(gts[gi], vocab)].fn += 1
        counts["combined"].fn += 1
    for di in m.unmatched_detections:
        _attribute_fp(counts, dets[di], vocab, fp_attribution)
    return counts


def detection_metrics(
    m: MatchResult,
    gts: Sequence[GroundTruthWord],
    split: str,
    vocab: Vocabulary,
    dets: Sequence[Detection] = (),
    fp_attribution: str = "both",
) -> SplitMetrics:
    return SplitMetrics.from_counts(detection_counts(m, dets, gts, vocab, fp_attribution)[split])


def e2e_metrics(
    m: MatchResult,
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthWord],
    split: str,
    vocab: Vocabulary,
    case_fold: bool = True,
    fp_attribution: str = "transcription",
) -> SplitMetrics:
    return SplitMetrics.from_counts(e2e_counts(m, dets, gts, vocab, case_fold, fp_attribution)[split])


@dataclass(frozen=True)
class EvalConfig:
    task: str = "detection"
    iou_threshold: float = 0.5
    case_fold: bool = True
    # how unmatched detections reach the IV/OOV precision denominators:
    # "both" charges each to both splits, "transcription" classifies the
    # detection's own text, "auto" picks "both" for detection and
    # "transcription" for end-to-end
    fp_attribution: str = "auto"
    dont_care: str = DONT_CARE
    strict_convex: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.fp_attribution not in FP_ATTRIBUTIONS:
            raise ConfigError(f"fp_attribution must be one of {FP_ATTRIBUTIONS}, got {self.fp_attribution!r}")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ConfigError(f"iou_threshold must lie in [0, 1], got {self.iou_threshold!r}")

    @property
    def resolved_fp_attribution(self) -> str:
        if self.fp_attribution != "auto":
            return self.fp_attribution
        return "both" if self.task == "detection" else "transcription"


@dataclass(frozen=True)
class EvalReport:
    task: str
    oov: SplitMetrics
    iv: SplitMetrics
    all: SplitMetrics
    combined: SplitMetrics
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "config": self.config,
            "OOV": asdict(self.oov),
            "IV": asdict(self.iv),
            "All": asdict(self.all),
            "combined": asdict(self.combined),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def format_text(self) -> str:
        lines = [f"task: {self.task}"]
        for key in sorted(self.config):
            value = self.config[key]
            if isinstance(value, dict):
                value = " ".join(f"{k}={value[k]}" for k in sorted(value))
            lines.append(f"{key}: {value}")
        lines.append("")
        lines.append(f"{'split':<9}{'TP':>7}{'FP':>7}{'FN':>7}{'precision':>11}{'recall':>9}{'hmean':>9}")
        for name, sm in (("OOV", self.oov), ("IV", self.iv), ("All", self.all), ("combined", self.combined)):
            lines.append(
                f"{name:<9}{sm.true_positives:>7}{sm.false_positives:>7}{sm.false_negatives:>7}"
                f"{100 * sm.precision:>11.2f}{100 * sm.recall:>9.2f}{100 * sm.fscore:>9.2f}"
            )
        return "\n".join(lines) + "\n"


def _by_image(items: Iterable) -> dict[str, list]:
    out: dict[str, list] = defaultdict(list)
    for it in items:
        out[it.image_id].append(it)
    return out


def evaluate(
    dets: Iterable[Detection],
    gts: Union[Iterable[GroundTruthWord], Mapping[str, Sequence[GroundTruthWord]]],
    vocab: Vocabulary,
    cfg: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Match every image, pool counts over the dataset, then compute rates."""
    if isinstance(gts, Mapping):
        gts = [g for words in gts.values() for g in words]
    det_groups = _by_image(dets)
    gt_groups = _by_image(gts)
    mode = cfg.resolved_fp_attribution

    totals = {s: Counts() for s in SPLITS}
    for image_id in sorted(set(det_groups) | set(gt_groups)):
        d, g = det_groups.get(image_id, []), gt_groups.get(image_id, [])
        m = match(d, g, cfg.iou_threshold, cfg.strict_convex)
        if cfg.task == "detection":
            per_image = detection_counts(m, d, g, vocab, mode)
        else:
            per_image = e2e_counts(m, d, g, vocab, cfg.case_fold, mode)
        for s in SPLITS:
            totals[s] = totals[s] + per_image[s]

    iv = SplitMetrics.from_counts(totals["IV"])
    oov = SplitMetrics.from_counts(totals["OOV"])
    config = {
        "iou_threshold": cfg.iou_threshold,
        "case_fold": "on" if cfg.case_fold else "off",
        "fp_attribution": mode,
        "dont_care": cfg.dont_care,
        "vocabulary": {"size": len(vocab), "case_fold": "on" if vocab.case_fold else "off"},
    }
    return EvalReport(cfg.task, oov, iv, aggregate_all(iv, oov), SplitMetrics.from_counts(totals["combined"]), config)
