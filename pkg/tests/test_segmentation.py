import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locomode.modes import GaitEventKind, LocomotionMode, TransitionKind
from locomode.recording import (
    EmgRecording,
    ModeAnnotation,
    PressureRecording,
    Segment,
    Trial,
    TransitionEvent,
    ValidationError,
)
from locomode.segmentation import (
    WindowSpec,
    build_state_track,
    fft_magnitude,
    segment_trial,
)


def trial_with_segments(segments, transitions=()):
    t_total = segments[-1].end
    rng = np.random.default_rng(0)
    emg = EmgRecording("s", "t", rng.standard_normal((t_total, 8)).astype(np.float32))
    n_p = max(2, t_total // 30)
    pressure = PressureRecording(np.ones(n_p, dtype=np.float32), np.ones(n_p, dtype=np.float32))
    return Trial(emg, pressure, ModeAnnotation(tuple(segments)), tuple(transitions))


class TestStateTrack:
    def test_single_transition_span(self):
        segs = (Segment(LocomotionMode.W, 0, 6000), Segment(LocomotionMode.SA, 6000, 9000))
        ev = TransitionEvent(TransitionKind.W_SA, 6000, GaitEventKind.HC)
        track = build_state_track(ModeAnnotation(segs), (ev,))
        assert np.all(track.span_index[5400:6000] == 0)
        assert np.all(track.span_index[:5400] == -1)
        assert np.all(track.span_index[6000:] == -1)
        assert track.mode[5999] == int(LocomotionMode.W)
        assert track.mode[6000] == int(LocomotionMode.SA)

    def test_no_transitions_all_steady(self):
        segs = (Segment(LocomotionMode.W, 0, 3000),)
        track = build_state_track(ModeAnnotation(segs), ())
        assert np.all(track.span_index == -1)

    def test_overlap_resolves_to_later_transition(self):
        # two transitions 360 samples (300 ms) apart: overlap goes to the later one
        segs = (Segment(LocomotionMode.ST, 0, 2000),
                Segment(LocomotionMode.W, 2000, 2360),
                Segment(LocomotionMode.SA, 2360, 4000))
        evs = (TransitionEvent(TransitionKind.ST_W, 2000, GaitEventKind.TO),
               TransitionEvent(TransitionKind.W_SA, 2360, GaitEventKind.HC))
        track = build_state_track(ModeAnnotation(segs), evs)
        # brute-force painter: paint in order, later overwrites
        expected = np.full(4000, -1)
        expected[2000 - 600:2000] = 0
        expected[2360 - 600:2360] = 1
        assert np.array_equal(track.span_index, expected)

    def test_span_clipped_at_trial_start(self):
        segs = (Segment(LocomotionMode.ST, 0, 300), Segment(LocomotionMode.W, 300, 2000))
        evs = (TransitionEvent(TransitionKind.ST_W, 300, GaitEventKind.TO),)
        track = build_state_track(ModeAnnotation(segs), evs)
        assert np.all(track.span_index[:300] == 0)


class TestSegmentTrial:
    def test_window_count_formula(self):
        t_total = 1260 + 600
        trial = trial_with_segments([Segment(LocomotionMode.W, 0, t_total)])
        spec = WindowSpec(1200, 60, 600)
        track = build_state_track(trial.annotation, ())
        ws = segment_trial(trial, trial.emg.samples, spec, track)
        assert len(ws) == 2
        assert list(ws.ends) == [1199, 1259]

    def test_label_is_mode_at_advance_time(self):
        # SA starts at 3599 = a window end (2999) + p_label (600)
        segs = (Segment(LocomotionMode.W, 0, 3599), Segment(LocomotionMode.SA, 3599, 4800))
        ev = TransitionEvent(TransitionKind.W_SA, 3599, GaitEventKind.HC)
        trial = trial_with_segments(segs, (ev,))
        spec = WindowSpec(1200, 60, 600)
        track = build_state_track(trial.annotation, trial.transitions)
        ws = segment_trial(trial, trial.emg.samples, spec, track)
        # window ending exactly 600 samples before the SA segment start
        idx = list(ws.ends).index(2999)
        assert ws.labels[idx] == int(LocomotionMode.SA)
        # one stride earlier the lookup is still inside W
        assert ws.labels[idx - 1] == int(LocomotionMode.W)

    def test_too_short_trial(self):
        trial = trial_with_segments([Segment(LocomotionMode.W, 0, 1500)])
        spec = WindowSpec(1200, 60, 600)
        with pytest.raises(ValidationError, match="too short"):
            segment_trial(trial, trial.emg.samples, spec, build_state_track(trial.annotation, ()))

    def test_matches_naive_labeling_oracle(self, rng):
        for _ in range(10):
            n_segs = rng.integers(2, 5)
            bounds = np.sort(rng.choice(np.arange(1, 80), size=n_segs - 1, replace=False)) * 60
            bounds = [0] + [int(b) + 2400 for b in bounds] + [2400 + 80 * 60 + 1800]
            modes = rng.permutation(9)[:n_segs]
            segs = [Segment(LocomotionMode(int(m)), a, b)
                    for m, a, b in zip(modes, bounds, bounds[1:])]
            trial = trial_with_segments(segs)
            spec = WindowSpec(1200, 60, int(rng.integers(0, 10)) * 60)
            track = build_state_track(trial.annotation, ())
            ws = segment_trial(trial, trial.emg.samples, spec, track)
            # naive per-window oracle
            t_total = trial.emg.n_samples
            expected = []
            end = spec.window_len - 1
            while end + spec.p_label < t_total:
                expected.append(int(trial.annotation.mode_at(end + spec.p_label)))
                end += spec.stride
            assert list(ws.labels) == expected

    def test_transitional_tag_follows_lookup_sample(self):
        segs = (Segment(LocomotionMode.W, 0, 3000), Segment(LocomotionMode.SA, 3000, 4200))
        ev = TransitionEvent(TransitionKind.W_SA, 3000, GaitEventKind.HC)
        trial = trial_with_segments(segs, (ev,))
        spec = WindowSpec(1200, 60, 300)
        track = build_state_track(trial.annotation, trial.transitions)
        ws = segment_trial(trial, trial.emg.samples, spec, track)
        lookups = ws.ends + spec.p_label
        in_span = (lookups >= 2400) & (lookups < 3000)
        assert np.array_equal(ws.span_index >= 0, in_span)

    def test_shift_equivariance(self):
        # delaying the trial content by one stride shifts labels by one window
        segs = (Segment(LocomotionMode.W, 0, 3000), Segment(LocomotionMode.SA, 3000, 4200))
        trial = trial_with_segments(segs)
        spec = WindowSpec(1200, 60, 300)
        ws = segment_trial(trial, trial.emg.samples, spec,
                           build_state_track(trial.annotation, ()))
        shifted_segs = (Segment(LocomotionMode.W, 0, 3060), Segment(LocomotionMode.SA, 3060, 4260))
        shifted = trial_with_segments(shifted_segs)
        ws2 = segment_trial(shifted, shifted.emg.samples, spec,
                            build_state_track(shifted.annotation, ()))
        assert list(ws2.labels[1:len(ws)]) == list(ws.labels[: len(ws) - 1])


@settings(max_examples=60, deadline=None)
@given(
    extra=st.integers(0, 500),
    stride=st.integers(1, 200),
    p_label=st.integers(0, 700),
)
def test_window_count_property(extra, stride, p_label):
    window_len = 1200
    t_total = window_len + p_label + extra
    trial = trial_with_segments([Segment(LocomotionMode.W, 0, t_total)])
    spec = WindowSpec(window_len, stride, p_label)
    ws = segment_trial(trial, trial.emg.samples, spec,
                       build_state_track(trial.annotation, ()))
    assert len(ws) == (t_total - window_len - p_label) // stride + 1
    assert np.all(ws.ends + p_label < t_total)


class TestFftMagnitude:
    def test_constant_concentrates_in_bin_zero(self):
        x = np.full((1, 1200, 8), 2.5, dtype=np.float32)
        mag = fft_magnitude(x)
        assert mag.shape == (1, 1200, 8)
        assert mag[0, 0, 0] == pytest.approx(1200 * 2.5, rel=1e-6)
        assert np.max(mag[0, 1:, :]) < 1e-3

    def test_unit_sinusoid_bins(self):
        k = 17
        t = np.arange(1200)
        x = np.sin(2 * np.pi * k * t / 1200).astype(np.float32)[None, :, None]
        x = np.repeat(x, 8, axis=2)
        mag = fft_magnitude(x)
        assert mag[0, k, 0] == pytest.approx(600.0, rel=1e-5)
        assert mag[0, 1200 - k, 0] == pytest.approx(600.0, rel=1e-5)
        others = np.delete(mag[0, :, 0], [k, 1200 - k])
        assert np.max(others) < 1.0

    def test_parseval(self, rng):
        x = rng.standard_normal((1, 1200, 8)).astype(np.float32)
        mag = fft_magnitude(x).astype(np.float64)
        lhs = (mag ** 2).sum(axis=1) / 1200.0
        rhs = (x.astype(np.float64) ** 2).sum(axis=1)
        assert np.allclose(lhs, rhs, rtol=1e-6)

    def test_spectrum_symmetry_exact(self, rng):
        x = rng.standard_normal((1, 1200, 8)).astype(np.float32)
        mag = fft_magnitude(x)
        for k in range(1, 600):
            assert np.array_equal(mag[0, k, :], mag[0, 1200 - k, :])

    def test_rejects_non_finite(self):
        x = np.full((1, 1200, 8), np.nan, dtype=np.float32)
        with pytest.raises(ValidationError):
            fft_magnitude(x)


class TestWindowSet:
    def test_window_and_batch_agree(self, rng):
        trial = trial_with_segments([Segment(LocomotionMode.W, 0, 4200)])
        spec = WindowSpec(1200, 60, 300)
        ws = segment_trial(trial, trial.emg.samples, spec,
                           build_state_track(trial.annotation, ()))
        time, freq, labels = ws.batch([0, 3])
        w0 = ws.window(0)
        assert np.array_equal(time[0, 0], w0.time_data[0])
        assert np.array_equal(freq[0, 0], w0.freq_data[0])
        assert labels[0] == w0.label

    def test_channel_subset(self):
        trial = trial_with_segments([Segment(LocomotionMode.W, 0, 4200)])
        spec = WindowSpec(1200, 60, 300)
        ws = segment_trial(trial, trial.emg.samples, spec,
                           build_state_track(trial.annotation, ()),
                           channel_indices=(0, 4, 7))
        time, freq, _ = ws.batch([1])
        assert time.shape == (1, 1, 1200, 3)
        assert np.array_equal(time[0, 0, :, 1], trial.emg.samples[60:1260, 4])
