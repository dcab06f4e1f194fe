"""Transfer functions, formant picking and positional errors."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from scipy.signal import find_peaks

__all__ = [
    "FormantExtractionError",
    "FormantSet",
    "Normalization",
    "SpectrumError",
    "TransferFunction",
    "extract_formants",
    "positional_error",
    "transfer_function",
]

_FLOOR = 1e-300
MIN_PROMINENCE_DB = 3.0


class SpectrumError(ValueError):
    pass


class FormantExtractionError(ValueError):
    def __init__(self, message: str, found: list[float]):
        super().__init__(f"{message}; peaks found: {found}")
        self.found = found


class Normalization(str, Enum):
    RAW = "raw"
    EXCITATION = "excitation"


@dataclass(frozen=True)
class TransferFunction:
    freqs: np.ndarray
    magnitude: np.ndarray  # dB
    bin_width: float
    normalization: Normalization = Normalization.RAW

    def write(self, path) -> None:
        """Two columns: frequency in Hz, magnitude in dB."""
        np.savetxt(path, np.column_stack([self.freqs, self.magnitude]), fmt="%.10g", delimiter=",",
                   header=f"bin_width_hz={self.bin_width!r} normalization={self.normalization.value}")

    @classmethod
    def read(cls, path) -> TransferFunction:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
        meta = dict(tok.partition("=")[::2] for tok in first.lstrip("#").split())
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        bw = float(meta.get("bin_width_hz", data[1, 0] - data[0, 0]))
        return cls(data[:, 0].copy(), data[:, 1].copy(), bw, Normalization(meta.get("normalization", "raw")))


@dataclass(frozen=True)
class FormantSet:
    f1: float
    f2: float
    f3: float
    peak_magnitudes: tuple[float, ...]

    @property
    def frequencies(self) -> tuple[float, float, float]:
        return (self.f1, self.f2, self.f3)


def transfer_function(trace, excitation=None, normalization: Normalization | str = Normalization.RAW) -> TransferFunction:
    """Magnitude spectrum of a recorded trace, in dB.

    The FFT spans exactly the trace (rectangular window, no padding), so a
    50 ms trace gives 20 Hz bins. With ``normalization="excitation"`` the
    spectrum is divided bin-wise by the excitation spectrum computed over
    the same length.
    """
    normalization = Normalization(normalization)
    samples = np.asarray(getattr(trace, "samples", trace), dtype=float)
    rate = float(trace.sample_rate)
    n = len(samples)
    if n == 0:
        raise SpectrumError("empty trace")
    if not np.any(samples):
        raise SpectrumError("all-zero trace has no spectrum")
    spec = np.abs(np.fft.rfft(samples))
    if normalization is Normalization.EXCITATION:
        if excitation is None:
            raise SpectrumError("excitation normalization needs the excitation signal")
        src = np.zeros(n)
        e = np.asarray(getattr(excitation, "samples", excitation), dtype=float)[:n]
        src[: len(e)] = e
        spec = spec / np.maximum(np.abs(np.fft.rfft(src)), _FLOOR)
    freqs = np.arange(len(spec)) * (rate / n)
    return TransferFunction(freqs, 20.0 * np.log10(np.maximum(spec, _FLOOR)), rate / n, normalization)


def extract_formants(tf: TransferFunction, count: int = 3, search_band: tuple[float, float] = (100.0, 5000.0)) -> FormantSet:
    """First ``count`` spectral peaks by frequency inside ``search_band``.

    A local maximum counts when it stands at least 3 dB above the lowest
    points separating it from higher terrain on both sides (topographic
    prominence), which rejects ripple on the flanks of a resonance.
    """
    lo, hi = search_band
    if tf.freqs[0] > lo or tf.freqs[-1] < hi:
        raise FormantExtractionError(f"spectrum does not cover {search_band} Hz", [])
    peaks, _ = find_peaks(tf.magnitude, prominence=MIN_PROMINENCE_DB)
    in_band = [k for k in peaks if lo <= tf.freqs[k] <= hi]
    found = [float(tf.freqs[k]) for k in in_band]
    if len(in_band) < count:
        raise FormantExtractionError(f"need {count} peaks in {search_band} Hz, found {len(in_band)}", found)
    chosen = in_band[:count]
    freqs = [float(tf.freqs[k]) for k in chosen]
    mags = tuple(float(tf.magnitude[k]) for k in chosen)
    if count < 3:
        freqs += [float("nan")] * (3 - count)
    return FormantSet(freqs[0], freqs[1], freqs[2], mags)


def positional_error(measured: float, reference: float) -> float:
    """Signed error of ``measured`` relative to ``reference``, in percent."""
    if not reference > 0:
        raise ValueError(f"reference must be positive, got {reference}")
    return 100.0 * (measured - reference) / reference


@dataclass(frozen=True)
class FormantReport:
    """The per-run formant record written next to traces and spectra."""

    vowel: str
    mode: str
    resolution: str
    solver: str
    f1: float
    f2: float
    f3: float
    err1: float | None = None
    err2: float | None = None
    err3: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> FormantReport:
        return cls(**json.loads(text))
