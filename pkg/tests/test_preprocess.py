import numpy as np
import pytest

from locomode.modes import GaitEventKind, TransitionKind
from locomode.preprocess import (
    ChannelStats,
    apply_normalization,
    binarize_contact,
    condition_emg,
    default_emg_cascades,
    derive_transition_points,
    detect_gait_events,
    fit_channel_stats,
    mean_pressure,
    rectify,
    upsample_linear,
)
from locomode.recording import ModeAnnotation, Segment, ValidationError
from locomode.modes import LocomotionMode


class TestRectify:
    def test_values(self):
        assert np.array_equal(rectify(np.array([-1.0, 2.0, -3.0])), [1.0, 2.0, 3.0])

    def test_idempotent(self, rng):
        x = rng.standard_normal(100)
        assert np.array_equal(rectify(rectify(x)), rectify(x))

    def test_zero_mean_noise_becomes_positive(self, rng):
        x = rng.standard_normal(10_000)
        assert rectify(x).mean() > 0.5  # E|N(0,1)| ~ 0.798


class TestChannelStats:
    def test_two_point_channel(self):
        stats = fit_channel_stats(np.array([[0.0], [2.0]]))
        assert stats.mean[0] == pytest.approx(1.0)
        assert stats.sd[0] == pytest.approx(1.0)  # population estimator

    def test_standardized_output(self, rng):
        x = rng.standard_normal((5_000, 8)) * 3.0 + 7.0
        stats = fit_channel_stats(x)
        z = apply_normalization(x, stats)
        assert np.allclose(z.mean(axis=0), 0.0, atol=1e-4)
        assert np.allclose(z.std(axis=0), 1.0, atol=1e-3)

    def test_constant_channel_rejected(self):
        x = np.ones((100, 2))
        x[:, 0] = np.arange(100)
        with pytest.raises(ValidationError, match="zero variance"):
            fit_channel_stats(x)

    def test_train_stats_transfer_to_stationary_test(self, rng):
        # same generating process: held-out data stays near standard after transfer
        train = rng.standard_normal((20_000, 8)) * 2.0 + 5.0
        test = rng.standard_normal((20_000, 8)) * 2.0 + 5.0
        z = apply_normalization(test, fit_channel_stats(train))
        assert np.all(np.abs(z.mean(axis=0)) < 0.5)

    def test_sd_must_be_positive(self):
        with pytest.raises(ValidationError):
            ChannelStats(np.zeros(2), np.array([1.0, 0.0]))


class TestUpsample:
    def test_ramp_31_samples(self):
        out = upsample_linear(np.array([0.0, 30.0]))
        assert out.shape == (31,)
        assert np.array_equal(out, np.arange(31.0))

    def test_constant(self):
        out = upsample_linear(np.full(5, 3.25))
        assert out.shape == ((5 - 1) * 30 + 1,)
        assert np.all(out == 3.25)

    def test_exact_at_original_instants(self, rng):
        series = rng.standard_normal(40)
        out = upsample_linear(series)
        assert np.array_equal(out[::30], series)

    def test_matches_closed_form(self):
        series = np.array([1.0, 4.0, -2.0])
        out = upsample_linear(series, factor=4)
        expected = np.array([1.0, 1.75, 2.5, 3.25, 4.0, 2.5, 1.0, -0.5, -2.0])
        assert np.max(np.abs(out - expected)) == 0.0

    def test_too_short(self):
        with pytest.raises(ValidationError):
            upsample_linear(np.array([1.0]))


class TestMeanPressure:
    def test_identical_ramps_pass_through(self):
        ramp = np.linspace(0, 1, 50)
        assert np.allclose(mean_pressure(ramp, ramp), ramp)

    def test_scale_invariance(self):
        ramp = np.linspace(0, 1, 50)
        out = mean_pressure(ramp * 10.0, ramp * 1.0)
        assert np.allclose(out, ramp)

    def test_range_in_unit_interval(self, rng):
        heel = np.abs(rng.standard_normal(200))
        toe = np.abs(rng.standard_normal(200))
        out = mean_pressure(heel, toe)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_flat_trace_rejected(self):
        with pytest.raises(ValidationError, match="flat"):
            mean_pressure(np.ones(10), np.linspace(0, 1, 10))


class TestBinarize:
    def test_clean_square_wave(self):
        x = np.array([0.0] * 100 + [1.0] * 100 + [0.0] * 100)
        contact = binarize_contact(x, 0.5, 50.0)
        assert np.array_equal(contact, x >= 0.5)

    def test_single_sample_spike_suppressed(self):
        x = np.zeros(300)
        x[150] = 1.0
        contact = binarize_contact(x, 0.5, 50.0)
        assert not contact.any()

    def test_short_dropout_merged(self):
        x = np.ones(400)
        x[200:210] = 0.0
        contact = binarize_contact(x, 0.5, 50.0)
        assert contact.all()

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            binarize_contact(np.zeros(10), threshold=1.5)

    def test_debounce_brute_force_small_cases(self, rng):
        # iterative shortest-run merging leaves no run under the minimum
        for _ in range(50):
            x = (rng.uniform(size=rng.integers(30, 90)) > 0.5).astype(float)
            contact = binarize_contact(x, 0.5, min_duration_ms=5.0, fs=1200.0)
            runs = np.diff(np.flatnonzero(np.concatenate(
                [[True], np.diff(contact) != 0, [True]])))
            if len(runs) > 1:
                assert runs.min() >= 6


class TestGaitEvents:
    def test_simple_edges(self):
        track = detect_gait_events(np.array([False, False, True, True, False]))
        assert [(k.value, i) for k, i in track.events] == [("HC", 2), ("TO", 4)]

    def test_constant_input_no_events(self):
        assert len(detect_gait_events(np.ones(50, dtype=bool))) == 0
        assert len(detect_gait_events(np.zeros(50, dtype=bool))) == 0

    def test_alternation_enforced(self):
        x = np.array([False, True, False, True, False, True])
        track = detect_gait_events(x)
        kinds = [k for k, _ in track.events]
        assert all(a is not b for a, b in zip(kinds, kinds[1:]))


class TestDeriveTransitionPoints:
    def make_events(self):
        from locomode.preprocess import GaitEventTrack
        return GaitEventTrack((
            (GaitEventKind.TO, 1000),
            (GaitEventKind.HC, 1500),
            (GaitEventKind.TO, 2290),
            (GaitEventKind.HC, 3000),
        ))

    def test_hc_transition_anchored_to_hc(self):
        annotation = ModeAnnotation((
            Segment(LocomotionMode.W, 0, 3000),
            Segment(LocomotionMode.SA, 3000, 4000),
        ))
        out = derive_transition_points(annotation, self.make_events())
        assert len(out) == 1
        assert out[0].kind is TransitionKind.W_SA
        assert out[0].transition_point == 3000
        assert out[0].source_event is GaitEventKind.HC

    def test_st_to_w_anchored_to_to_not_hc(self):
        annotation = ModeAnnotation((
            Segment(LocomotionMode.ST, 0, 2290),
            Segment(LocomotionMode.W, 2290, 4000),
        ))
        out = derive_transition_points(annotation, self.make_events())
        assert out[0].source_event is GaitEventKind.TO
        assert out[0].transition_point == 2290

    def test_nearest_event_of_required_kind(self):
        # boundary at 2950 sits between TO@2290 and HC@3000; W->SA needs HC
        annotation = ModeAnnotation((
            Segment(LocomotionMode.W, 0, 2950),
            Segment(LocomotionMode.SA, 2950, 4000),
        ))
        out = derive_transition_points(annotation, self.make_events())
        assert out[0].transition_point == 3000

    def test_unanchored_transition_raises(self):
        annotation = ModeAnnotation((
            Segment(LocomotionMode.W, 0, 9000),
            Segment(LocomotionMode.SA, 9000, 9600),
        ))
        with pytest.raises(ValidationError, match="unanchored"):
            derive_transition_points(annotation, self.make_events())

    def test_untracked_boundary_skipped(self):
        annotation = ModeAnnotation((
            Segment(LocomotionMode.W, 0, 3000),
            Segment(LocomotionMode.ST, 3000, 4000),  # W->ST is untracked
        ))
        assert derive_transition_points(annotation, self.make_events()) == []


class TestConditionEmg:
    def test_notch_removes_mains_hum(self, rng):
        # rectification folds a residual 50 Hz line to 100 Hz (full-wave
        # rectified sine has only even harmonics), so compare that bin
        fs = 1200.0
        t = np.arange(6000) / fs
        clean = rng.standard_normal((6000, 1))
        hum = 5.0 * np.sin(2 * np.pi * 50.0 * t)[:, None]
        with_notch = condition_emg(clean + hum, default_emg_cascades())
        without = condition_emg(clean + hum, default_emg_cascades(notch_enabled=False))
        spectrum_with = np.abs(np.fft.rfft(with_notch[2400:, 0].astype(np.float64)))
        spectrum_without = np.abs(np.fft.rfft(without[2400:, 0].astype(np.float64)))
        bin_100 = int(round(100 * (len(with_notch) - 2400) / fs))
        assert spectrum_without[bin_100] > 5 * spectrum_with[bin_100]

    def test_output_nonnegative(self, rng):
        out = condition_emg(rng.standard_normal((2400, 8)), default_emg_cascades())
        assert np.all(out >= 0)
        assert out.dtype == np.float32
