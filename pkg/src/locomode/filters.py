"""IIR filter design and causal application for sEMG conditioning.

Designs come from scipy's analog Butterworth prototype via the bilinear
transform with frequency prewarping (band edges land exactly at -3 dB) and
from the standard two-pole notch. Application is causal, forward-only, with
zero initial state: a window never sees future samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

__all__ = ["BiquadCascade", "design_bandpass", "design_notch", "filter_forward"]


@dataclass(frozen=True)
class BiquadCascade:
    """Cascade of second-order sections, scipy sos layout (b0,b1,b2,1,a1,a2)."""

    sections: np.ndarray  # (n_sections, 6) float64
    description: str

    def __post_init__(self) -> None:
        sec = np.atleast_2d(np.asarray(self.sections, dtype=np.float64))
        object.__setattr__(self, "sections", sec)
        if sec.ndim != 2 or sec.shape[1] != 6:
            raise ValueError(f"sections must be (n, 6), got {sec.shape}")
        for row in sec:
            poles = np.roots(row[3:])
            if np.any(np.abs(poles) >= 1.0):
                raise ValueError("unstable section: pole on or outside the unit circle")

    @property
    def n_sections(self) -> int:
        return int(self.sections.shape[0])

    def response_db(self, freqs, fs: float) -> np.ndarray:
        """Magnitude response in dB at the given frequencies (analysis aid)."""
        w = 2 * np.pi * np.asarray(freqs, dtype=float) / fs
        _, h = sps.sosfreqz(self.sections, worN=w)
        return 20 * np.log10(np.maximum(np.abs(h), 1e-300))

    def coefficient_text(self) -> str:
        """Plain-text coefficient dump for inspection files."""
        lines = [f"# {self.description}", "# b0 b1 b2 a0 a1 a2"]
        for row in self.sections:
            lines.append(" ".join(f"{c:.17g}" for c in row))
        return "\n".join(lines) + "\n"


def design_bandpass(fs: float, lo: float, hi: float, order: int = 8) -> BiquadCascade:
    """Butterworth bandpass of the given total order as order/2 biquads.

    ``order`` counts poles of the final bandpass (an order-8 design yields
    4 cascaded biquads); the -3 dB points sit at ``lo`` and ``hi``.
    """
    if order < 2 or order % 2 != 0:
        raise ValueError(f"order must be a positive even number, got {order}")
    if not 0 < lo < hi:
        raise ValueError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    if hi >= fs / 2:
        raise ValueError(f"cutoff at or above Nyquist: hi={hi} with fs={fs}")
    sos = sps.butter(order // 2, [lo, hi], btype="bandpass", output="sos", fs=fs)
    return BiquadCascade(sos, f"butterworth bandpass order {order}, {lo}-{hi} Hz at fs={fs}")


def design_notch(fs: float, f0: float, bandwidth: float = 2.0) -> BiquadCascade:
    """Single-biquad notch at ``f0`` with the given -3 dB bandwidth."""
    if not 0 < f0 < fs / 2:
        raise ValueError(f"cutoff at or above Nyquist: f0={f0} with fs={fs}")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    b, a = sps.iirnotch(f0, f0 / bandwidth, fs=fs)
    sos = np.hstack([b, a])[None, :]
    return BiquadCascade(sos, f"notch {f0} Hz, bandwidth {bandwidth} Hz at fs={fs}")


def filter_forward(x: np.ndarray, cascade: BiquadCascade) -> np.ndarray:
    """Apply the cascade causally (zero initial state) along the first axis."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return sps.sosfilt(cascade.sections, x, axis=0)
