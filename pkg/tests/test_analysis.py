"""
Unit Tests for Analysis Service
Decisive boxes, score differences and per-sequence reports
"""

import csv
import itertools
import random

import pytest

from siamadapt.geometry import BBox, iou
from siamadapt.services.analysis_service import (
    analyze_run, compare_reports, decisive_boxes, score_difference, sequence_report, write_report,
)
from siamadapt.services.tracker_service import FrameRecord, write_trajectory
from siamadapt.utils.errors import ReportError, ValidationError

GT = BBox(10.0, 10.0, 20.0, 20.0)


def brute_force(candidates, gt):
    positives = [(b, s) for b, s in candidates if iou(b, gt) >= 0.5]
    negatives = [(b, s) for b, s in candidates if iou(b, gt) < 0.5]
    p_c = max((s for _, s in positives), default=None)
    n_c = max((s for _, s in negatives), default=0.0)
    if p_c is None:
        return 0.0, 0.0
    return p_c, n_c


def random_candidates(rng, count):
    candidates = []
    for _ in range(count):
        x, y = rng.uniform(0, 30), rng.uniform(0, 30)
        candidates.append((BBox(x, y, rng.uniform(5, 25), rng.uniform(5, 25)), rng.random()))
    return candidates


def records_for(boxes, candidate_lists):
    return [FrameRecord(i, box, 1.0 if i == 0 else 0.5, candidates=cands)
            for i, (box, cands) in enumerate(zip(boxes, candidate_lists))]


# ==================== DECISIVE BOX TESTS ====================

class TestDecisiveBoxes:
    """Test suite for decisive_boxes"""

    def test_split_at_half_overlap(self):
        """Test the top positive and top negative are picked on each side of IoU 0.5"""
        candidates = [
            (BBox(10, 10, 20, 20), 0.6),
            (BBox(12, 12, 20, 20), 0.7),
            (BBox(60, 60, 20, 20), 0.9),
            (BBox(40, 40, 20, 20), 0.2),
        ]
        result = decisive_boxes(candidates, GT)
        assert result.p_bbox == BBox(12, 12, 20, 20)
        assert result.p_c == pytest.approx(0.7)
        assert result.n_bbox == BBox(60, 60, 20, 20)
        assert result.n_c == pytest.approx(0.9)
        assert result.n_o == 0.0
        assert result.d == pytest.approx(-0.2)
        assert result.fault

    def test_no_positive(self):
        """Test an empty positive side gives P_c = N_c = D = 0"""
        result = decisive_boxes([(BBox(60, 60, 5, 5), 0.8)], GT)
        assert result.p_bbox is None
        assert (result.p_c, result.n_c, result.d) == (0.0, 0.0, 0.0)
        assert not result.fault

    def test_no_negative(self):
        """Test an empty negative side gives N_c = 0 and D = P_c"""
        result = decisive_boxes([(GT, 0.4)], GT)
        assert result.n_bbox is None
        assert result.n_c == 0.0
        assert result.d == pytest.approx(0.4)
        assert result.p_o == pytest.approx(1.0)

    def test_out_of_range_score(self):
        """Test a score outside [0, 1] raises ValidationError"""
        with pytest.raises(ValidationError):
            decisive_boxes([(GT, 1.5)], GT)

    def test_order_invariant(self):
        """Test shuffling the candidate list leaves the picks unchanged, ties included"""
        candidates = [(BBox(10, 10, 20, 20), 0.5), (BBox(11, 10, 20, 20), 0.5), (BBox(70, 0, 10, 10), 0.3),
                      (BBox(0, 70, 10, 10), 0.3)]
        reference = decisive_boxes(candidates, GT)
        for order in itertools.permutations(candidates):
            assert decisive_boxes(list(order), GT) == reference

    def test_matches_brute_force(self):
        """Test P_c and N_c on random candidate sets"""
        rng = random.Random(7)
        for _ in range(50):
            candidates = random_candidates(rng, rng.randint(1, 12))
            result = decisive_boxes(candidates, GT)
            assert (result.p_c, result.n_c) == pytest.approx(brute_force(candidates, GT))
            assert -1.0 <= result.d <= 1.0

    def test_raising_positive_score_raises_d(self):
        """Test D never drops when the best positive scores higher"""
        negative = (BBox(60, 60, 20, 20), 0.5)
        last = -1.0
        for score in (0.1, 0.3, 0.5, 0.7, 0.9):
            d = decisive_boxes([(GT, score), negative], GT).d
            assert d >= last
            last = d

    def test_prediction_overlap(self):
        """Test the tracker's own box overlap is carried along"""
        result = decisive_boxes([(GT, 0.5)], GT, prediction=BBox(10, 10, 20, 10))
        assert result.pred_overlap == pytest.approx(0.5)


class TestScoreDifference:
    """Test suite for score_difference"""

    def test_example(self):
        """Test P_c = 0.8 and N_c = 0.3 give 0.5"""
        assert score_difference(0.8, 0.3) == pytest.approx(0.5)

    def test_antisymmetric(self):
        """Test swapping the scores negates D"""
        for p_c, n_c in ((0.9, 0.1), (0.2, 0.7), (0.5, 0.5)):
            assert score_difference(p_c, n_c) == pytest.approx(-score_difference(n_c, p_c))

    def test_clipped(self):
        """Test D stays in [-1, 1]"""
        assert score_difference(1.0, 0.0) == 1.0
        assert score_difference(0.0, 1.0) == -1.0


# ==================== REPORT TESTS ====================

class TestSequenceReport:
    """Test suite for sequence_report"""

    def test_first_frame_excluded(self):
        """Test one row per tracked frame"""
        records = records_for([GT] * 3, [[], [(GT, 0.9)], [(GT, 0.8)]])
        report = sequence_report('seq', records, [GT] * 3)
        assert report.frames == [1, 2]
        assert len(report.rows()) == 2
        assert report.mean_d == pytest.approx(0.85)

    def test_first_frame_included(self):
        """Test frame 0 uses the ground-truth box as its only candidate"""
        records = records_for([GT] * 2, [[], [(GT, 0.9)]])
        report = sequence_report('seq', records, [GT] * 2, exclude_first_frame=False)
        assert report.frames == [0, 1]
        assert report.diagnostics[0].p_c == 1.0

    def test_perfect_tracker(self):
        """Test candidates centred on the ground truth never produce a fault"""
        candidates = [(GT, 0.9), (BBox(11, 11, 20, 20), 0.6), (BBox(70, 70, 20, 20), 0.1)]
        records = records_for([GT] * 4, [[]] + [candidates] * 3)
        report = sequence_report('seq', records, [GT] * 4)
        assert report.faults == 0
        assert all(d.d >= 0 for d in report.diagnostics)
        assert report.mean_overlap == pytest.approx(1.0)

    def test_missing_dump(self):
        """Test a tracked frame without candidates raises ReportError"""
        records = records_for([GT] * 2, [[], []])
        with pytest.raises(ReportError):
            sequence_report('seq', records, [GT] * 2)

    def test_length_mismatch(self):
        """Test records and ground truth must line up"""
        with pytest.raises(ReportError):
            sequence_report('seq', records_for([GT] * 2, [[], [(GT, 0.5)]]), [GT] * 3)

    def test_write_report(self, tmp_path):
        """Test the CSV has a header and one row per analysed frame"""
        records = records_for([GT] * 3, [[], [(GT, 0.9)], [(GT, 0.8), (BBox(60, 60, 5, 5), 0.95)]])
        path = write_report(sequence_report('seq', records, [GT] * 3), tmp_path / 'seq.csv')
        with open(path, newline='') as f:
            rows = list(csv.DictReader(f))
        assert [int(row['frame']) for row in rows] == [1, 2]
        assert float(rows[1]['d']) == pytest.approx(-0.15)


# ==================== RUN ANALYSIS TESTS ====================

class TestAnalyzeRun:
    """Test suite for analyze_run and compare_reports"""

    def test_bundle(self, tmp_path):
        """Test one CSV per trajectory under analysis/"""
        records = records_for([GT] * 3, [[], [(GT, 0.9)], [(GT, 0.8)]])
        write_trajectory(records, tmp_path / 'frames' / 'a.jsonl')
        write_trajectory(records, tmp_path / 'frames' / 'b.jsonl')
        reports = analyze_run(tmp_path, {'a': [GT] * 3, 'b': [GT] * 3})
        assert [r.sequence for r in reports] == ['a', 'b']
        assert (tmp_path / 'analysis' / 'a.csv').exists()
        assert (tmp_path / 'analysis' / 'b.csv').exists()

    def test_empty_bundle(self, tmp_path):
        """Test a bundle without trajectories raises ReportError"""
        with pytest.raises(ReportError):
            analyze_run(tmp_path, {})

    def test_missing_ground_truth(self, tmp_path):
        """Test a trajectory with no ground truth raises ReportError"""
        write_trajectory(records_for([GT] * 2, [[], [(GT, 0.9)]]), tmp_path / 'frames' / 'a.jsonl')
        with pytest.raises(ReportError):
            analyze_run(tmp_path, {})

    def test_compare(self):
        """Test the paired D difference between two runs"""
        gts = [GT] * 3
        far = (BBox(70, 70, 20, 20), 0.6)
        base = sequence_report('s', records_for(gts, [[], [(GT, 0.5), far], [(GT, 0.5), far]]), gts)
        adjusted = sequence_report('s', records_for(gts, [[], [(GT, 0.9), far], [(GT, 0.7), far]]), gts)
        result = compare_reports([base], [adjusted])
        assert result['paired_frames'] == 2
        assert result['mean_d_base'] == pytest.approx(-0.1)
        assert result['mean_delta_d'] == pytest.approx(0.3)
        assert result['faults_base'] == 2
        assert result['faults_adjusted'] == 0

    def test_compare_disjoint(self):
        """Test runs with no shared sequence raise ReportError"""
        gts = [GT] * 2
        a = sequence_report('a', records_for(gts, [[], [(GT, 0.5)]]), gts)
        b = sequence_report('b', records_for(gts, [[], [(GT, 0.5)]]), gts)
        with pytest.raises(ReportError):
            compare_reports([a], [b])
