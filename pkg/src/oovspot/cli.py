"""Batch driver: ``oovspot fuse | eval | build-vocab``.

Runs are described by a JSON config file; command-line flags override the
matching keys. Relative paths in the config resolve against the config
file's directory. Example::

    {
      "inputs": [{"path": "dets/pan_512.jsonl", "model": "pan", "scale": 512}],
      "image_sizes": "sizes.csv",
      "gt_dir": "gt",
      "vocabulary": "vocab.txt",
      "fusion": {"decay_mode": "gaussian", "sigma": 0.5, "final_threshold": 0.92},
      "evaluation": {"task": "end_to_end", "iou_threshold": 0.5, "case_fold": true},
      "outputs": {"fused": "out/fused.jsonl", "log": "out/fuse.log",
                  "report": "out/report.txt", "report_json": "out/report.json"}
    }
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, OOVSpotError, ParseError
from .evaluation import EvalConfig, evaluate
from .fusion import DEFAULT_SCALES, FusionConfig, run_ensemble
from .ingest import (
    Detection,
    Vocabulary,
    build_vocabulary,
    format_vocabulary,
    load_ground_truth_dir,
    parse_detections,
    parse_image_sizes,
    read_vocabulary,
    serialize_detections,
)

log = logging.getLogger("oovspot")

TASK_ALIASES = {"e2e": "end_to_end", "end_to_end": "end_to_end", "detection": "detection"}


@dataclass(frozen=True)
class InputSpec:
    path: Path
    model: str
    scale: float


@dataclass
class RunConfig:
    inputs: list[InputSpec] = field(default_factory=list)
    image_sizes: Optional[Path] = None
    gt_dir: Optional[Path] = None
    vocabulary: Optional[Path] = None
    vocabulary_from_gt: Optional[Path] = None
    detections: Optional[Path] = None
    scales: tuple = DEFAULT_SCALES
    fusion: FusionConfig = field(default_factory=FusionConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    fused_out: Optional[Path] = None
    log_out: Optional[Path] = None
    report_out: Optional[Path] = None
    report_json_out: Optional[Path] = None

    def json_report_path(self) -> Optional[Path]:
        if self.report_json_out is not None or self.report_out is None:
            return self.report_json_out
        candidate = self.report_out.with_suffix(".json")
        if candidate == self.report_out:
            candidate = self.report_out.with_name(self.report_out.name + ".json")
        return candidate


def _known(section: dict, cls, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - names)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")
    return dict(section)


def load_config(path: Optional[Path], overrides: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        base = path.parent

    def resolve(value) -> Optional[Path]:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    allowed = {"inputs", "image_sizes", "gt_dir", "vocabulary", "vocabulary_from_gt", "detections",
               "scales", "fusion", "evaluation", "outputs"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    inputs = []
    for i, item in enumerate(raw.get("inputs", [])):
        try:
            scale = float(item["scale"])
            inputs.append(InputSpec(resolve(item["path"]), str(item["model"]), scale))
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"inputs[{i}] needs 'path', 'model' and numeric 'scale'") from None
        if not scale > 0:
            raise ConfigError(f"inputs[{i}]: scale must be positive, got {scale}")

    fusion = _known(raw.get("fusion", {}), FusionConfig, "fusion")
    evaluation = _known(raw.get("evaluation", {}), EvalConfig, "evaluation")
    if "task" in evaluation:
        evaluation["task"] = TASK_ALIASES.get(evaluation["task"], evaluation["task"])

    if overrides.final_threshold is not None:
        fusion["final_threshold"] = overrides.final_threshold
    if overrides.sigma is not None:
        fusion["sigma"] = overrides.sigma
    if overrides.decay is not None:
        fusion["decay_mode"] = overrides.decay
    if overrides.iou_threshold is not None:
        evaluation["iou_threshold"] = overrides.iou_threshold
    if overrides.case_fold is not None:
        evaluation["case_fold"] = overrides.case_fold == "on"
        fusion["case_fold"] = overrides.case_fold == "on"
    if overrides.task is not None:
        evaluation["task"] = TASK_ALIASES[overrides.task]

    try:
        fusion_cfg = FusionConfig(**fusion)
        eval_cfg = EvalConfig(**evaluation)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    scales = tuple(float(s) for s in raw.get("scales", DEFAULT_SCALES))
    if any(not s > 0 for s in scales):
        raise ConfigError(f"scales must be positive: {scales}")

    outputs = raw.get("outputs", {})
    unknown = sorted(set(outputs) - {"fused", "log", "report", "report_json"})
    if unknown:
        raise ConfigError(f"unknown outputs keys: {', '.join(unknown)}")

    return RunConfig(
        inputs=inputs,
        image_sizes=resolve(raw.get("image_sizes")),
        gt_dir=resolve(raw.get("gt_dir")),
        vocabulary=resolve(raw.get("vocabulary")),
        vocabulary_from_gt=resolve(raw.get("vocabulary_from_gt")),
        detections=resolve(raw.get("detections")),
        scales=scales,
        fusion=fusion_cfg,
        evaluation=eval_cfg,
        fused_out=resolve(outputs.get("fused")),
        log_out=resolve(outputs.get("log")),
        report_out=resolve(outputs.get("report")),
        report_json_out=resolve(outputs.get("report_json")),
    )


def _require_file(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} configured")
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _require_dir(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} configured")
    if not path.is_dir():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _read_detections(path: Path, model: Optional[str] = None, scale: Optional[float] = None) -> list[Detection]:
    with path.open("rb") as fh:
        try:
            return parse_detections(fh, model, scale)
        except ParseError as exc:
            raise exc.with_source(str(path)) from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def cmd_fuse(cfg: RunConfig) -> list[Detection]:
    if not cfg.inputs:
        raise ConfigError("no detection inputs configured")
    for source in cfg.inputs:
        _require_file(source.path, "detection file")
    sizes_path = _require_file(cfg.image_sizes, "image size table")
    if cfg.fused_out is None:
        raise ConfigError("no fused output path configured (outputs.fused or --out)")
    for source in cfg.inputs:
        if source.scale not in cfg.scales:
            log.warning("input %s uses scale %g outside configured scales %s", source.path, source.scale, cfg.scales)

    with sizes_path.open("rb") as fh:
        try:
            sizes = parse_image_sizes(fh)
        except ParseError as exc:
            raise exc.with_source(str(sizes_path)) from None
    batches = [_read_detections(source.path, source.model, source.scale) for source in cfg.inputs]

    stats: dict = {}
    fused = run_ensemble(batches, sizes, cfg.fusion, stats)
    _write(cfg.fused_out, serialize_detections(fused))

    # paths relative to the log keep it identical when the run directory moves
    anchor = (cfg.log_out or cfg.fused_out).parent
    lines = []
    for source, b in zip(cfg.inputs, batches):
        rel = Path(os.path.relpath(source.path, anchor)).as_posix()
        lines.append(f"input {rel} model={source.model} scale={source.scale:g} detections={len(b)}")
    lines.append(" ".join(f"{k}={stats[k]}" for k in ("merged", "post_nms", "post_threshold", "post_ignore")))
    for line in lines:
        log.info(line)
    if cfg.log_out is not None:
        _write(cfg.log_out, "\n".join(lines) + "\n")
    return fused


def _load_vocabulary(cfg: RunConfig) -> Vocabulary:
    case_fold = cfg.evaluation.case_fold
    if cfg.vocabulary is not None:
        with _require_file(cfg.vocabulary, "vocabulary file").open("rb") as fh:
            return read_vocabulary(fh, case_fold, cfg.evaluation.dont_care)
    if cfg.vocabulary_from_gt is not None:
        train = load_ground_truth_dir(_require_dir(cfg.vocabulary_from_gt, "vocabulary GT directory"),
                                      cfg.evaluation.dont_care)
        return build_vocabulary((w for words in train.values() for w in words), case_fold)
    raise ConfigError("no vocabulary configured (vocabulary or vocabulary_from_gt)")


def cmd_eval(cfg: RunConfig):
    det_path = _require_file(cfg.detections or cfg.fused_out, "detection file")
    gt_dir = _require_dir(cfg.gt_dir, "ground-truth directory")
    if cfg.vocabulary is not None:
        _require_file(cfg.vocabulary, "vocabulary file")
    if cfg.report_out is None:
        raise ConfigError("no report output path configured (outputs.report or --out)")

    dets = _read_detections(det_path)
    gts = load_ground_truth_dir(gt_dir, cfg.evaluation.dont_care)
    vocab = _load_vocabulary(cfg)
    report = evaluate(dets, gts, vocab, cfg.evaluation)

    _write(cfg.report_out, report.format_text())
    _write(cfg.json_report_path(), report.to_json())
    oov = report.oov
    print(f"OOV precision={100 * oov.precision:.2f} recall={100 * oov.recall:.2f} hmean={100 * oov.fscore:.2f}")
    return report


def cmd_build_vocab(gt_dir: Path, out: Path, case_fold: bool = True, sentinel: str = "###") -> Vocabulary:
    words = load_ground_truth_dir(_require_dir(gt_dir, "ground-truth directory"), sentinel)
    vocab = build_vocabulary((w for ws in words.values() for w in ws), case_fold)
    _write(out, format_vocabulary(vocab))
    log.info("wrote %d words to %s", len(vocab), out)
    return vocab


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--iou-threshold", type=float)
    common.add_argument("--final-threshold", type=float)
    common.add_argument("--sigma", type=float)
    common.add_argument("--decay", choices=["linear", "gaussian"])
    common.add_argument("--case-fold", choices=["on", "off"])
    common.add_argument("--task", choices=["detection", "e2e"])
    common.add_argument("--out", type=Path, help="primary output path of the subcommand")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="oovspot", description="Ensemble and score OOV scene-text output.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fuse", parents=[common], help="soft-NMS ensemble of detection files")
    sub.add_parser("eval", parents=[common], help="IV/OOV detection or end-to-end scoring")
    bv = sub.add_parser("build-vocab", parents=[common], help="vocabulary from a GT directory")
    bv.add_argument("gt_dir", nargs="?", type=Path)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args)
        if args.command == "fuse":
            if args.out is not None:
                cfg.fused_out = args.out
            cmd_fuse(cfg)
        elif args.command == "eval":
            if args.out is not None:
                cfg.report_out = args.out
                cfg.report_json_out = None
            cmd_eval(cfg)
        else:
            gt_dir = args.gt_dir or cfg.vocabulary_from_gt
            if gt_dir is None:
                raise ConfigError("build-vocab needs a GT directory")
            out = args.out or cfg.vocabulary
            if out is None:
                raise ConfigError("build-vocab needs --out")
            cmd_build_vocab(gt_dir, out, cfg.evaluation.case_fold, cfg.evaluation.dont_care)
    except (OOVSpotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
