"""Band-passed velocity pulse used to excite the glottal end."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

__all__ = ["ExcitationParameterError", "ExcitationSignal", "make_band_passed_pulse", "write_signal"]


class ExcitationParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ExcitationSignal:
    samples: np.ndarray
    sample_rate: float
    band: tuple[float, float]

    def __len__(self) -> int:
        return len(self.samples)


def _lowpass_taps(sample_rate: float, transition: float) -> int:
    # Blackman windowed-sinc: transition width ~ 5.5 fs / taps
    taps = int(np.ceil(5.5 * sample_rate / transition))
    return taps | 1


def make_band_passed_pulse(
    sample_rate: float,
    length: int,
    band: tuple[float, float] = (2.0, 20_000.0),
    amplitude: float = 1.0,
    transition: float | None = None,
) -> ExcitationSignal:
    """Unit impulse through a windowed-sinc band-pass, scaled to ``amplitude`` peak.

    The upper edge is a linear-phase Blackman low-pass whose transition
    width defaults to 10% of the edge frequency; it is placed at the start of
    the signal so the pulse peaks after half the kernel length. The lower edge
    subtracts a Blackman low-pass at ``band[0]`` spanning the whole signal,
    scaled to cancel the DC gain, so the samples sum to zero. A 50 ms signal
    cannot resolve a 2 Hz edge: below roughly ``3 * sample_rate / length``
    the response rolls off to zero at DC, and it is flat above that.
    """
    low, high = band
    nyquist = sample_rate / 2.0
    if not (0 < low < high < nyquist):
        raise ExcitationParameterError(f"band {band} must satisfy 0 < low < high < {nyquist}")
    if transition is None:
        transition = 0.1 * high
    taps = _lowpass_taps(sample_rate, transition)
    if length < 4 * taps:
        raise ExcitationParameterError(
            f"length {length} shorter than 4x the {taps}-tap kernel; raise the rate-independent "
            "transition width or the signal length"
        )
    lp = signal.firwin(taps, high, window="blackman", fs=sample_rate)
    n_low = length if length % 2 else length - 1
    pedestal = signal.firwin(n_low, low, window="blackman", fs=sample_rate)
    pedestal /= pedestal.sum()

    h = np.zeros(length)
    h[:taps] = lp
    h[:n_low] -= lp.sum() * pedestal
    peak = np.max(np.abs(h))
    return ExcitationSignal(amplitude * h / peak, float(sample_rate), (float(low), float(high)))


def write_signal(sig: ExcitationSignal, path) -> None:
    """Two columns: sample index, velocity in m/s."""
    data = np.column_stack([np.arange(len(sig.samples)), sig.samples])
    np.savetxt(path, data, fmt=["%d", "%.17g"], delimiter=",",
               header=f"sample_rate_hz={sig.sample_rate!r} band_hz={sig.band[0]!r}:{sig.band[1]!r}")
