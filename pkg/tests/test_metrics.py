import numpy as np
import pytest

from locomode.metrics import (
    EvalReport,
    PredictionTrace,
    StableDetection,
    build_report,
    detect_stable,
    predict_rate,
    steady_accuracy,
    transition_accuracy,
)
from locomode.modes import GaitEventKind, LocomotionMode, TransitionKind
from locomode.recording import TransitionEvent

W, SA = int(LocomotionMode.W), int(LocomotionMode.SA)


def make_trace(voted, t_c=6000, kind=TransitionKind.W_SA, stride=60, labels=None,
               raw=None, span=600, p_label=300):
    """Trace whose windows straddle t_c; transitional tags follow the span."""
    n = len(voted)
    first_end = t_c - span - 5 * stride
    ends = first_end + stride * np.arange(n)
    lookups = ends + p_label
    span_index = np.where((lookups >= t_c - span) & (lookups < t_c), 0, -1)
    if labels is None:
        labels = np.where(lookups < t_c, int(kind.source), int(kind.target))
    transition = TransitionEvent(kind, t_c, kind.event)
    return PredictionTrace(
        trial_id="t",
        window_ends=ends,
        raw=np.asarray(raw if raw is not None else voted),
        voted=np.asarray(voted),
        labels=np.asarray(labels),
        span_index=span_index,
        transitions=(transition,),
    ), transition


def brute_force_detect(trace, transition, span=600, horizon=600, run=5):
    """Independent scanner: check every length-run slice of the scan range."""
    t_c = transition.transition_point
    target = int(transition.kind.target)
    selected = [i for i in range(len(trace.window_ends))
                if t_c - span <= trace.window_ends[i] <= t_c + horizon]
    for j in range(len(selected)):
        if j >= run - 1:
            last = selected[j - run + 1: j + 1]
            if all(trace.voted[i] == target for i in last):
                return int(trace.window_ends[selected[j]])
    return None


class TestDetectStable:
    def test_five_run_ends_at_seventh_window(self):
        voted = [W, W, SA, SA, SA, SA, SA, SA, SA, SA]
        # t_c chosen so the scan range opens exactly at the first window
        trace, tr = make_trace(voted, t_c=6300)
        assert trace.window_ends[0] == tr.transition_point - 600
        det = detect_stable(trace, tr)
        assert det is not None
        assert det.t_d == trace.window_ends[6]  # 5th element of the run at index 2

    def test_p_stable_arithmetic(self):
        det = StableDetection(
            TransitionEvent(TransitionKind.W_SA, 6000, GaitEventKind.HC), 5760)
        assert det.p_stable_ms == pytest.approx(200.0)

    def test_no_run_before_horizon(self):
        voted = [W] * 30
        trace, tr = make_trace(voted)
        assert detect_stable(trace, tr) is None

    def test_run_must_be_consecutive(self):
        voted = [SA, SA, W, SA, SA, W, SA, SA, W, SA, SA, W, SA, SA, W, SA]
        trace, tr = make_trace(voted, t_c=6600)
        assert detect_stable(trace, tr) is None

    def test_gap_over_span_raises(self):
        # trace windows end long before the transition's search span
        voted = np.full(10, SA)
        ends = 1199 + 60 * np.arange(10)
        trace = PredictionTrace("t", ends, voted, voted, voted, np.full(10, -1), ())
        tr = TransitionEvent(TransitionKind.W_SA, 60000, GaitEventKind.HC)
        with pytest.raises(ValueError, match="gap"):
            detect_stable(trace, tr)

    def test_matches_brute_force_on_random_traces(self, rng):
        kinds = list(TransitionKind)
        mismatches = 0
        for _ in range(10_000):
            kind = kinds[int(rng.integers(0, 15))]
            n = int(rng.integers(6, 40))
            t_c = int(rng.integers(3000, 9000))
            # blocky random predictions make runs likely but not certain
            voted = []
            while len(voted) < n:
                voted += [int(rng.integers(0, 9))] * int(rng.integers(1, 7))
            voted = voted[:n]
            trace, tr = make_trace(voted, t_c=t_c, kind=kind,
                                   stride=int(rng.choice([30, 60, 120])))
            expected = brute_force_detect(trace, tr)
            got = detect_stable(trace, tr)
            if expected is None:
                mismatches += got is not None
            else:
                mismatches += got is None or got.t_d != expected
        assert mismatches == 0


class TestPredictRate:
    def test_43_of_50(self):
        ev = TransitionEvent(TransitionKind.W_SA, 6000, GaitEventKind.HC)
        detections = [StableDetection(ev, 6000 - 120)] * 43 + [None] * 7
        assert predict_rate(detections, 50) == pytest.approx(0.86)

    def test_no_detections(self):
        assert predict_rate([None, None], 2) == 0.0

    def test_zero_p_stable_not_positive(self):
        ev = TransitionEvent(TransitionKind.W_SA, 6000, GaitEventKind.HC)
        assert predict_rate([StableDetection(ev, 6000)], 1) == 0.0

    def test_empty_transitions_error(self):
        with pytest.raises(ValueError):
            predict_rate([], 0)

    def test_brute_force_recount(self, rng):
        ev = TransitionEvent(TransitionKind.W_SA, 6000, GaitEventKind.HC)
        for _ in range(200):
            n = int(rng.integers(1, 40))
            detections = [None if rng.uniform() < 0.3
                          else StableDetection(ev, int(rng.integers(5000, 7000)))
                          for _ in range(n)]
            manual = sum(1 for d in detections
                         if d is not None and (6000 - d.t_d) / 1.2 > 0) / n
            assert predict_rate(detections, n) == pytest.approx(manual)


class TestAccuracies:
    def test_steady_all_correct(self):
        voted = np.full(8, W)
        trace = PredictionTrace("t", 1199 + 60 * np.arange(8), voted, voted,
                                voted.copy(), np.full(8, -1), ())
        assert steady_accuracy([trace]) == 1.0

    def test_steady_95_of_100(self, rng):
        labels = np.full(100, W)
        voted = labels.copy()
        voted[rng.choice(100, 5, replace=False)] = SA
        trace = PredictionTrace("t", 1199 + 60 * np.arange(100), voted, voted,
                                labels, np.full(100, -1), ())
        assert steady_accuracy([trace]) == pytest.approx(0.95)

    def test_steady_matches_confusion_trace(self, rng):
        voted = rng.integers(0, 9, 200)
        labels = rng.integers(0, 9, 200)
        trace = PredictionTrace("t", 1199 + 60 * np.arange(200), voted, voted,
                                labels, np.full(200, -1), ())
        confusion = np.zeros((9, 9), dtype=int)
        for lab, v in zip(labels, voted):
            confusion[lab, v] += 1
        assert steady_accuracy([trace]) == pytest.approx(np.trace(confusion) / 200)

    def test_transition_accuracy_perfect_switch_at_td(self):
        voted = [W] * 10 + [SA] * 10
        trace, tr = make_trace(voted, t_c=6600)
        t_d = int(trace.window_ends[10])
        det = StableDetection(tr, t_d)
        assert transition_accuracy([trace], [[det]]) == 1.0

    def test_transition_accuracy_never_switching(self):
        voted = [W] * 20
        trace, tr = make_trace(voted, t_c=6600)
        t_d = int(trace.window_ends[12])
        det = StableDetection(tr, t_d)
        mask = trace.span_index == 0
        expected = (trace.window_ends[mask] < t_d).mean()
        assert transition_accuracy([trace], [[det]]) == pytest.approx(expected)

    def test_transition_accuracy_brute_force(self, rng):
        for _ in range(300):
            n = int(rng.integers(12, 40))
            voted = rng.integers(0, 9, n)
            trace, tr = make_trace(list(voted), t_c=6600)
            use_det = rng.uniform() < 0.7
            det = StableDetection(tr, int(rng.integers(5500, 7000))) if use_det else None
            t_d = det.t_d if det else tr.transition_point
            matches = total = 0
            for i in range(n):
                if trace.span_index[i] != 0:
                    continue
                ref = int(tr.kind.source) if trace.window_ends[i] < t_d else int(tr.kind.target)
                matches += int(trace.voted[i] == ref)
                total += 1
            assert transition_accuracy([trace], [[det]]) == pytest.approx(matches / total)


class TestBuildReport:
    def make_perfect_trace(self):
        voted = [W] * 10 + [SA] * 15
        trace, tr = make_trace(voted, t_c=6600)
        return trace

    def test_perfect_trace_report(self):
        trace = self.make_perfect_trace()
        report = build_report([trace], p_label_ms=250.0)
        assert report.acc_ss == 1.0
        assert report.n_transitions == 1
        assert report.n_detected == 1
        assert 0.0 <= report.predict_rate <= 1.0
        assert report.acc_overall == pytest.approx(
            (report.acc_ss * report.n_steady + report.acc_ts * report.n_transitional)
            / (report.n_steady + report.n_transitional))

    def test_confusion_totals(self):
        trace = self.make_perfect_trace()
        report = build_report([trace], 250.0)
        confusion = np.array(report.confusion)
        assert confusion.sum() == report.n_windows
        for code in range(9):
            assert confusion[code].sum() == int((trace.labels == code).sum())

    def test_overall_between_component_accuracies(self, rng):
        voted = list(rng.integers(0, 9, 30))
        trace, _ = make_trace(voted, t_c=6600)
        report = build_report([trace], 250.0)
        lo, hi = sorted([report.acc_ss, report.acc_ts])
        assert lo - 1e-9 <= report.acc_overall <= hi + 1e-9

    def test_report_roundtrip(self, tmp_path):
        report = build_report([self.make_perfect_trace()], 250.0)
        path = tmp_path / "r.json"
        report.save(path)
        loaded = EvalReport.load(path)
        assert loaded == report

    def test_double_entry_recount(self):
        trace = self.make_perfect_trace()
        report = build_report([trace], 250.0)
        # independent recomputation through the public metric functions
        detections = [[detect_stable(trace, tr) for tr in trace.transitions]]
        assert report.acc_ss == pytest.approx(steady_accuracy([trace]))
        assert report.acc_ts == pytest.approx(transition_accuracy([trace], detections))
        flat = [d for dets in detections for d in dets]
        assert report.predict_rate == pytest.approx(predict_rate(flat, 1))
