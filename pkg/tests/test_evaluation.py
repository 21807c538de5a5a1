import random
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oovspot.errors import ConfigError, FrameMismatch, MissingTranscription
from oovspot.evaluation import (
    Counts,
    EvalConfig,
    MatchResult,
    SplitMetrics,
    aggregate_all,
    detection_counts,
    detection_metrics,
    e2e_counts,
    e2e_metrics,
    evaluate,
    hmean,
    match,
)
from oovspot.geometry import Polygon
from oovspot.ingest import Detection, GroundTruthWord, Vocabulary, load_ground_truth_dir, parse_detections

from oracles import random_scene

GOLDEN = Path(__file__).parent / "fixtures" / "golden"
VOCAB = Vocabulary(frozenset({"hello", "world"}), case_fold=True)


def det(score, region, text=None, image_id="img", index=0):
    return Detection(image_id, region, score, text, "pan", 512.0, index)


def gt(region, text, image_id="img"):
    return GroundTruthWord(image_id, region, text, text == "###")


class TestHmean:
    def test_reported_rows(self):
        assert round(100 * hmean(0.6985, 0.7620), 2) == pytest.approx(72.89, abs=0.01)
        assert round(100 * hmean(0.2028, 0.4842), 2) == pytest.approx(28.59, abs=0.01)

    def test_zero(self):
        assert hmean(0, 0.7) == 0
        assert hmean(0, 0) == 0

    @settings(max_examples=300)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_bounds_and_symmetry(self, p, r):
        h = hmean(p, r)
        assert h == pytest.approx(hmean(r, p), abs=1e-15)
        assert 0 <= h <= (p + r) / 2 + 1e-15
        assert h <= max(p, r) + 1e-15
        assert hmean(p, p) == pytest.approx(p, abs=1e-15)


class TestMatch:
    def test_single_pair(self):
        # iou 0.6: overlap 0.75 over union 1.25
        m = match([det(0.9, Polygon.box(0.25, 0, 1.25, 1))], [gt(Polygon.box(0, 0, 1, 1), "a")])
        assert m == MatchResult(((0, 0),), (), (), ())

    def test_greedy_by_score(self):
        g = Polygon.box(0, 0, 10, 10)
        # both iou 0.7 against g, mirrored
        a = Polygon.box(0, 0, 7, 10)
        b = Polygon.box(3, 0, 10, 10)
        m = match([det(0.8, a), det(0.9, b)], [gt(g, "word")])
        assert m.pairs == ((1, 0),)
        assert m.unmatched_detections == (0,)

    def test_dont_care_absorbs(self):
        g = Polygon.box(0, 0, 10, 10)
        m = match([det(0.9, Polygon.box(0, 0, 10, 8))], [gt(g, "###")])
        assert m == MatchResult((), (), (), (0,))

    def test_below_threshold(self):
        m = match([det(0.9, Polygon.box(0.5, 0, 1.5, 1))], [gt(Polygon.box(0, 0, 1, 1), "a")], 0.5)
        assert m == MatchResult((), (0,), (0,), ())

    def test_picks_highest_iou(self):
        g1, g2 = Polygon.box(0, 0, 10, 10), Polygon.box(2, 0, 12, 10)
        m = match([det(0.9, Polygon.box(2, 0, 11, 10))], [gt(g1, "a"), gt(g2, "b")])
        assert m.pairs == ((0, 1),)

    def test_frame_mismatch(self):
        with pytest.raises(FrameMismatch):
            match([det(0.9, Polygon.box(0, 0, 1, 1), image_id="a")], [gt(Polygon.box(0, 0, 1, 1), "x", "b")])


def check_match_invariants(m, dets, gts):
    det_seen = [d for d, _ in m.pairs] + list(m.unmatched_detections) + list(m.dont_care_absorbed)
    assert sorted(det_seen) == list(range(len(dets)))
    gt_seen = [g for _, g in m.pairs] + list(m.unmatched_gt)
    assert sorted(gt_seen) == [i for i, g in enumerate(gts) if not g.dont_care]


@pytest.mark.parametrize("seed", range(40))
def test_match_invariants_and_permutation(seed):
    rng = np.random.default_rng(seed)
    dets, gts = random_scene(rng, int(rng.integers(0, 15)), int(rng.integers(0, 10)))
    m = match(dets, gts)
    check_match_invariants(m, dets, gts)

    pd, pg = list(range(len(dets))), list(range(len(gts)))
    random.Random(seed).shuffle(pd)
    random.Random(seed + 1).shuffle(pg)
    m2 = match([dets[i] for i in pd], [gts[i] for i in pg])
    assert {(pd[a], pg[b]) for a, b in m2.pairs} == set(m.pairs)
    assert {pd[a] for a in m2.dont_care_absorbed} == set(m.dont_care_absorbed)


@pytest.mark.parametrize("seed", range(30))
def test_count_partitions_and_e2e_subset(seed):
    rng = np.random.default_rng(1000 + seed)
    dets, gts = random_scene(rng, 12, 8)
    m = match(dets, gts)
    dc = detection_counts(m, dets, gts, VOCAB)
    ec = e2e_counts(m, dets, gts, VOCAB)
    for c in (dc, ec):
        assert c["IV"].tp + c["OOV"].tp == c["combined"].tp
        assert c["IV"].fn + c["OOV"].fn == c["combined"].fn
    assert dc["IV"].fp == dc["OOV"].fp == dc["combined"].fp == len(m.unmatched_detections)
    assert ec["IV"].fp + ec["OOV"].fp == ec["combined"].fp
    for s in ("IV", "OOV", "combined"):
        assert ec[s].tp <= dc[s].tp


@pytest.mark.parametrize("seed", range(20))
def test_raising_threshold_never_adds_tp(seed):
    rng = np.random.default_rng(2000 + seed)
    dets, gts = random_scene(rng, 12, 8)
    tps = [len(match(dets, gts, t).pairs) for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert tps == sorted(tps, reverse=True)


class TestSplitMetrics:
    def test_formulas(self):
        sm = SplitMetrics.from_counts(Counts(tp=2, fp=1, fn=2))
        assert (sm.precision, sm.recall) == (pytest.approx(2 / 3), 0.5)
        assert sm.fscore == pytest.approx(4 / 7)
        assert round(sm.fscore, 4) == 0.5714

    def test_empty(self):
        assert SplitMetrics.from_counts(Counts()) == SplitMetrics()

    def test_perfect(self):
        sm = SplitMetrics.from_counts(Counts(tp=3))
        assert (sm.precision, sm.recall, sm.fscore) == (1.0, 1.0, 1.0)

    def test_reported_validation_row(self):
        assert round(100 * hmean(0.4108, 0.4173), 2) == pytest.approx(41.40, abs=0.01)


def scene_for_metrics():
    g_iv = gt(Polygon.box(0, 0, 10, 10), "Hello")
    g_oov = gt(Polygon.box(20, 0, 30, 10), "zebra")
    g_miss = gt(Polygon.box(40, 0, 50, 10), "world")
    dets = [
        det(0.9, Polygon.box(0, 0, 10, 10), "HELLO", index=1),
        det(0.8, Polygon.box(20, 0, 30, 10), "zebro", index=2),
        det(0.7, Polygon.box(80, 80, 90, 90), "quark", index=3),
    ]
    return dets, [g_iv, g_oov, g_miss]


def test_detection_metrics_per_split():
    dets, gts = scene_for_metrics()
    m = match(dets, gts)
    iv = detection_metrics(m, gts, "IV", VOCAB)
    oov = detection_metrics(m, gts, "OOV", VOCAB)
    assert (iv.true_positives, iv.false_positives, iv.false_negatives) == (1, 1, 1)
    assert (oov.true_positives, oov.false_positives, oov.false_negatives) == (1, 1, 0)
    by_text = detection_metrics(m, gts, "OOV", VOCAB, dets, "transcription")
    assert by_text.false_positives == 1
    assert detection_metrics(m, gts, "IV", VOCAB, dets, "transcription").false_positives == 0


def test_e2e_metrics_per_split():
    dets, gts = scene_for_metrics()
    m = match(dets, gts)
    iv = e2e_metrics(m, dets, gts, "IV", VOCAB)
    oov = e2e_metrics(m, dets, gts, "OOV", VOCAB)
    # HELLO matches Hello under case folding; "zebro" misreads zebra; "quark" is a spurious OOV word
    assert (iv.true_positives, iv.false_positives, iv.false_negatives) == (1, 0, 1)
    assert (oov.true_positives, oov.false_positives, oov.false_negatives) == (0, 2, 1)
    strict = e2e_metrics(m, dets, gts, "IV", VOCAB, case_fold=False)
    assert (strict.true_positives, strict.false_positives, strict.false_negatives) == (0, 1, 2)


def test_e2e_missing_transcription():
    g = gt(Polygon.box(0, 0, 10, 10), "hello")
    d = det(0.9, Polygon.box(0, 0, 10, 10))
    with pytest.raises(MissingTranscription):
        e2e_metrics(match([d], [g]), [d], [g], "IV", VOCAB)


class TestAggregate:
    def test_equal(self):
        sm = SplitMetrics(1, 2, 3, 0.3, 0.4, hmean(0.3, 0.4))
        agg = aggregate_all(sm, sm)
        assert (agg.precision, agg.recall, agg.fscore) == (sm.precision, sm.recall, sm.fscore)
        assert aggregate_all(agg, agg) == aggregate_all(agg, agg)

    def test_midpoint(self):
        assert aggregate_all(SplitMetrics(fscore=1.0), SplitMetrics(fscore=0.0)).fscore == 0.5
        assert aggregate_all(SplitMetrics(fscore=0.62), SplitMetrics(fscore=0.48)).fscore == pytest.approx(0.55)


class TestEvaluate:
    def test_empty(self):
        report = evaluate([], [], VOCAB)
        for sm in (report.oov, report.iv, report.all, report.combined):
            assert sm == SplitMetrics()

    def test_single_oov_hit(self):
        g = gt(Polygon.box(0, 0, 10, 10), "xylograph")
        d = det(0.9, Polygon.box(0, 0, 10, 9), "xylograph")
        report = evaluate([d], [g], VOCAB, EvalConfig(task="end_to_end"))
        assert (report.oov.precision, report.oov.recall, report.oov.fscore) == (1.0, 1.0, 1.0)
        assert report.iv == SplitMetrics()

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            EvalConfig(task="recognition")
        with pytest.raises(ConfigError):
            EvalConfig(iou_threshold=1.5)
        with pytest.raises(ConfigError):
            EvalConfig(fp_attribution="gt")

    def test_detections_on_image_without_gt_are_fp(self):
        d = det(0.9, Polygon.box(0, 0, 1, 1), "x", image_id="lonely")
        report = evaluate([d], [], VOCAB)
        assert report.combined.false_positives == 1

    def test_micro_averaging(self):
        # image a: 1 TP; image b: 3 FN. Micro recall is 1/4, per-image mean would be 1/2.
        ga = [gt(Polygon.box(0, 0, 10, 10), "zebra", "a")]
        gb = [gt(Polygon.box(20 * i, 0, 20 * i + 10, 10), "zebra", "b") for i in range(3)]
        d = det(0.9, Polygon.box(0, 0, 10, 10), image_id="a")
        report = evaluate([d], ga + gb, VOCAB)
        assert report.oov.recall == 0.25


def golden_inputs():
    gts = load_ground_truth_dir(GOLDEN / "gt")
    vocab = Vocabulary.from_words((GOLDEN / "vocab.txt").read_text().split())
    with (GOLDEN / "expected_fused.jsonl").open("rb") as fh:
        dets = parse_detections(fh)
    return dets, gts, vocab


def test_golden_evaluation_counts():
    dets, gts, vocab = golden_inputs()
    det_report = evaluate(dets, gts, vocab, EvalConfig(task="detection"))
    assert (det_report.iv.true_positives, det_report.iv.false_positives, det_report.iv.false_negatives) == (2, 2, 1)
    assert (det_report.oov.true_positives, det_report.oov.false_positives, det_report.oov.false_negatives) == (3, 2, 1)
    assert det_report.all.fscore == pytest.approx(13 / 21, abs=1e-12)

    e2e = evaluate(dets, gts, vocab, EvalConfig(task="end_to_end"))
    assert (e2e.iv.true_positives, e2e.iv.false_positives, e2e.iv.false_negatives) == (2, 2, 1)
    assert (e2e.oov.true_positives, e2e.oov.false_positives, e2e.oov.false_negatives) == (2, 1, 2)
    assert e2e.oov.fscore == pytest.approx(4 / 7, abs=1e-12)
