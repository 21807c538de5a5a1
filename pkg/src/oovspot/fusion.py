"""Multi-model, multi-scale detection ensembling.

Detections from every model and inference scale are mapped back to the
original image frame, rescored with soft-NMS, filtered by a final score
threshold and, once recognition has run, stripped of words recognised as
the ignore sentinel.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, InvalidScale
from .geometry import as_convex, axis_aligned_iou, convex_iou, rescale_polygon
from .ingest import Detection, normalize

DEFAULT_SCALES = (512, 960, 1280, 1600)
DECAY_MODES = ("linear", "gaussian")
OVERLAP_MEASURES = ("polygon_iou", "axis_aligned_iou")


@dataclass(frozen=True)
class FusionConfig:
    decay_mode: str = "gaussian"
    sigma: float = 0.5
    overlap_threshold: float = 0.3
    prune_score: float = 0.001
    final_threshold: float = 0.92
    ignore_sentinel: str = "ignore"
    overlap_measure: str = "polygon_iou"
    case_fold: bool = True
    strict_convex: bool = False

    def __post_init__(self):
        if self.decay_mode not in DECAY_MODES:
            raise ConfigError(f"decay_mode must be one of {DECAY_MODES}, got {self.decay_mode!r}")
        if self.overlap_measure not in OVERLAP_MEASURES:
            raise ConfigError(f"overlap_measure must be one of {OVERLAP_MEASURES}, got {self.overlap_measure!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"sigma must be positive, got {self.sigma!r}")
        for name in ("overlap_threshold", "prune_score", "final_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
        if self.prune_score > self.final_threshold:
            raise ConfigError("prune_score must not exceed final_threshold")


def group_by_image(dets: Iterable[Detection]) -> dict[str, list[Detection]]:
    groups: dict[str, list[Detection]] = defaultdict(list)
    for d in dets:
        groups[d.image_id].append(d)
    return {k: groups[k] for k in sorted(groups)}


SizeSpec = Union[float, Mapping[str, float]]


def merge_to_original_frame(batches: Sequence[tuple[Sequence[Detection], SizeSpec]]) -> list[Detection]:
    """Concatenate batches after mapping each region from its inference scale
    to the original image's longer side.

    The size may be one number for the whole batch or a per-image mapping.
    """
    merged = []
    for dets, size in batches:
        for d in dets:
            if isinstance(size, Mapping):
                try:
                    original = size[d.image_id]
                except KeyError:
                    raise InvalidScale(f"no original size known for image {d.image_id!r}") from None
            else:
                original = size
            merged.append(replace(d, region=rescale_polygon(d.region, d.scale, original)))
    return merged


def _decayed(score: float, overlap: float, cfg: FusionConfig) -> float:
    if cfg.decay_mode == "linear":
        if overlap >= cfg.overlap_threshold:
            return score * (1.0 - overlap)
        return score
    return score * math.exp(-(overlap * overlap) / cfg.sigma)


def _soft_nms_image(dets: Sequence[Detection], cfg: FusionConfig) -> list[Detection]:
    n = len(dets)
    if n == 0:
        return []
    order = sorted(range(n), key=lambda i: dets[i].tie_key())
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    if cfg.overlap_measure == "polygon_iou":
        regions = [as_convex(d.region, cfg.strict_convex) for d in dets]
        overlap = convex_iou
    else:
        regions = [d.region for d in dets]
        overlap = axis_aligned_iou
    bounds = np.array([r.bounds for r in regions], dtype=np.float64)
    x1, y1, x2, y2 = bounds.T

    scores = np.array([d.score for d in dets], dtype=np.float64)
    active = np.ones(n, dtype=bool)
    kept: list[int] = []
    first = True
    while True:
        masked = np.where(active, scores, -1.0)
        top = masked.max()
        if top < 0.0:
            break
        ties = np.flatnonzero(masked == top)
        m = int(ties[np.argmin(rank[ties])]) if ties.size > 1 else int(ties[0])
        active[m] = False
        kept.append(m)
        if first:
            # untouched scores never change, so this check only needs doing once
            active &= scores >= cfg.prune_score
            first = False

        bx1, by1, bx2, by2 = bounds[m]
        near = np.flatnonzero(active & (x1 < bx2) & (x2 > bx1) & (y1 < by2) & (y2 > by1))
        rm = regions[m]
        for j in near.tolist():
            ov = overlap(rm, regions[j])
            if ov <= 0.0:
                continue
            s = _decayed(float(scores[j]), ov, cfg)
            scores[j] = s
            if s < cfg.prune_score:
                active[j] = False

    kept.sort(key=lambda i: (-scores[i], rank[i]))
    return [replace(dets[i], score=float(scores[i])) for i in kept]


def soft_nms(dets: Sequence[Detection], cfg: FusionConfig = FusionConfig()) -> list[Detection]:
    """Sequential greedy soft-NMS, run independently per image.

    Each round keeps the highest-scoring remaining detection and decays every
    other remaining detection by its overlap with it. Detections whose score
    drops below ``cfg.prune_score`` are discarded. Equal scores are resolved
    by ``Detection.tie_key`` so the result does not depend on input order.
    Output is grouped by image id (sorted), score-descending within an image.
    """
    out: list[Detection] = []
    for group in group_by_image(dets).values():
        out.extend(_soft_nms_image(group, cfg))
    return out


def threshold_filter(dets: Iterable[Detection], tau: float) -> list[Detection]:
    return [d for d in dets if d.score >= tau]


def ignore_filter(dets: Iterable[Detection], sentinel: str = "ignore", case_fold: bool = True) -> list[Detection]:
    target = normalize(sentinel, case_fold)
    return [d for d in dets if d.transcription is None or normalize(d.transcription, case_fold) != target]


def run_ensemble(
    batches: Sequence[Sequence[Detection]],
    original_sizes: SizeSpec,
    cfg: FusionConfig = FusionConfig(),
    stats: Optional[dict] = None,
) -> list[Detection]:
    """merge -> soft-NMS -> final threshold -> ignore filter.

    ``stats``, when given, receives the detection count after each stage.
    """
    merged = merge_to_original_frame([(b, original_sizes) for b in batches])
    rescored = soft_nms(merged, cfg)
    kept = threshold_filter(rescored, cfg.final_threshold)
    result = ignore_filter(kept, cfg.ignore_sentinel, cfg.case_fold)
    if stats is not None:
        stats.update(merged=len(merged), post_nms=len(rescored), post_threshold=len(kept), post_ignore=len(result))
    return result
