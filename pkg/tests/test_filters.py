import numpy as np
import pytest

from locomode.filters import BiquadCascade, design_bandpass, design_notch, filter_forward

FS = 1200.0


def probe_gain_db(cascade, freq, fs=FS, seconds=3.0):
    """Steady-state gain of a unit sinusoid through the cascade, in dB.

    Uses quadrature demodulation over the final integer number of cycles,
    which rejects the start-up transient and off-frequency residue.
    """
    n = int(seconds * fs)
    t = np.arange(n) / fs
    x = np.sin(2 * np.pi * freq * t)
    y = filter_forward(x, cascade)
    # analyse the last full second (transient decayed), whole cycles only
    cycles = int(freq * 1.0)
    span = int(round(cycles * fs / freq))
    tail = slice(n - span, n)
    ref = np.exp(-2j * np.pi * freq * t[tail])
    amplitude = 2 * np.abs(np.mean(y[tail] * ref))
    return 20 * np.log10(max(amplitude, 1e-300))


class TestBandpass:
    def setup_method(self):
        self.cascade = design_bandpass(FS, 20.0, 500.0, 8)

    def test_four_biquads(self):
        assert self.cascade.n_sections == 4

    def test_minus_3db_at_edges(self):
        assert probe_gain_db(self.cascade, 20.0) == pytest.approx(-3.01, abs=0.5)
        assert probe_gain_db(self.cascade, 500.0) == pytest.approx(-3.01, abs=0.5)

    def test_stopband_attenuation(self):
        assert probe_gain_db(self.cascade, 5.0) <= -40.0
        assert probe_gain_db(self.cascade, 590.0) <= -40.0

    def test_passband_flat(self):
        for freq in (100.0, 200.0, 300.0):
            assert probe_gain_db(self.cascade, freq) == pytest.approx(0.0, abs=0.5)

    def test_rejects_cutoff_at_nyquist(self):
        with pytest.raises(ValueError, match="Nyquist"):
            design_bandpass(FS, 20.0, 600.0, 8)

    def test_rejects_odd_order(self):
        with pytest.raises(ValueError, match="even"):
            design_bandpass(FS, 20.0, 500.0, 7)

    def test_impulse_response_decays(self):
        impulse = np.zeros(2 * int(FS))
        impulse[0] = 1.0
        response = filter_forward(impulse, self.cascade)
        assert np.max(np.abs(response[int(FS):])) < 1e-6


class TestNotch:
    def setup_method(self):
        self.cascade = design_notch(FS, 50.0, 2.0)

    def test_single_section(self):
        assert self.cascade.n_sections == 1

    def test_deep_notch_at_50(self):
        assert probe_gain_db(self.cascade, 50.0) <= -30.0

    def test_narrow(self):
        assert probe_gain_db(self.cascade, 100.0) == pytest.approx(0.0, abs=1.0)
        assert probe_gain_db(self.cascade, 40.0) >= -1.0
        assert probe_gain_db(self.cascade, 60.0) >= -1.0

    def test_rejects_nyquist_violation(self):
        with pytest.raises(ValueError, match="Nyquist"):
            design_notch(FS, 700.0)


class TestStability:
    def test_designed_cascades_stable(self):
        for cascade in (design_bandpass(FS, 20, 500, 8), design_notch(FS, 50)):
            for row in cascade.sections:
                poles = np.roots(row[3:])
                assert np.all(np.abs(poles) < 1.0)

    def test_unstable_section_rejected(self):
        # pole at z = 2
        with pytest.raises(ValueError, match="unstable"):
            BiquadCascade(np.array([[1.0, 0, 0, 1.0, -2.5, 1.0]]), "bad")


class TestFilterForward:
    def test_zero_in_zero_out(self):
        cascade = design_bandpass(FS, 20, 500, 8)
        assert np.all(filter_forward(np.zeros(100), cascade) == 0)

    def test_identity_cascade(self):
        identity = BiquadCascade(np.array([[1.0, 0, 0, 1.0, 0, 0]]), "identity")
        impulse = np.zeros(16)
        impulse[0] = 1.0
        assert np.array_equal(filter_forward(impulse, identity), impulse)

    def test_causal(self):
        # output before the impulse arrives must be exactly zero
        cascade = design_bandpass(FS, 20, 500, 8)
        impulse = np.zeros(64)
        impulse[10] = 1.0
        y = filter_forward(impulse, cascade)
        assert np.all(y[:10] == 0)

    def test_rejects_non_finite(self):
        cascade = design_notch(FS, 50)
        with pytest.raises(ValueError, match="finite"):
            filter_forward(np.array([1.0, np.nan]), cascade)

    def test_multichannel_axis(self, rng):
        cascade = design_notch(FS, 50)
        x = rng.standard_normal((256, 8))
        y = filter_forward(x, cascade)
        assert y.shape == x.shape
        single = filter_forward(x[:, 3], cascade)
        assert np.allclose(y[:, 3], single)

    def test_coefficient_text(self):
        text = design_notch(FS, 50).coefficient_text()
        assert "notch" in text
        assert len(text.strip().splitlines()) == 3
