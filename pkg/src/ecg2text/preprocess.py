"""Signal conditioning, spectra, R-peak detection and beat segmentation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .dataset_io import LEAD_NAMES, EcgRecord
from .errors import NyquistNotch, SignalTooShort


@dataclass
class Spectrum:
    magnitudes: np.ndarray
    freqs: np.ndarray

    def __post_init__(self):
        if self.magnitudes.shape != self.freqs.shape:
            raise ValueError("magnitudes and freqs must align")


@dataclass
class BeatSegment:
    data: np.ndarray  # (n_leads, pre + post + 1)
    r_index: int
    window: tuple[int, int]


def _as_finite(x, min_len=1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < min_len:
        raise SignalTooShort(f"need a 1-D signal of at least {min_len} samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite values")
    return x


def fft_magnitude(x, fs: float, one_sided: bool = True) -> Spectrum:
    """|DFT| of ``x`` with bin frequencies ``k * fs / N``.

    The one-sided form keeps bins ``0..N//2``.
    """
    x = _as_finite(x, min_len=2)
    n = x.size
    mags = np.abs(np.fft.fft(x))
    if one_sided:
        mags = mags[: n // 2 + 1]
    return Spectrum(mags, np.arange(mags.size) * fs / n)


def window_filter(x, n: int = 5) -> np.ndarray:
    """Centered ``n``-point moving average with edge replication."""
    x = _as_finite(x)
    if n < 1 or n % 2 == 0:
        raise ValueError(f"window size must be odd and >= 1, got {n}")
    if n > x.size:
        raise ValueError(f"window {n} longer than signal ({x.size})")
    if n == 1:
        return x.copy()
    half = n // 2
    padded = np.pad(x, half, mode="edge")
    csum = np.concatenate([[0.0], np.cumsum(padded)])
    return (csum[n:] - csum[:-n]) / n


def notch_filter(x, fs: float, f0: float = 50.0, q: float = 30.0) -> np.ndarray:
    """Zero-phase biquad notch at ``f0`` with quality factor ``q``."""
    if not fs > 0:
        raise ValueError("fs must be positive")
    if not 0 < f0 < fs / 2:
        raise NyquistNotch(f"notch at {f0} Hz is not below Nyquist ({fs / 2} Hz)")
    x = _as_finite(x)
    b, a = sps.iirnotch(f0, q, fs=fs)
    return sps.filtfilt(b, a, x)


def nyquist_fir(x) -> np.ndarray:
    """Two-tap average ``(x[n] + x[n-1]) / 2`` run forward and backward.

    Has a zero at Nyquist; the backward pass removes the half-sample delay.
    """
    x = _as_finite(x)
    fwd = np.empty_like(x)
    fwd[0] = x[0]
    fwd[1:] = 0.5 * (x[1:] + x[:-1])
    out = np.empty_like(fwd)
    out[-1] = fwd[-1]
    out[:-1] = 0.5 * (fwd[:-1] + fwd[1:])
    return out


def remove_powerline(x, fs: float, f0: float = 50.0, q: float = 30.0):
    """Notch filter with the Nyquist fallback. Returns (signal, method)."""
    try:
        return notch_filter(x, fs, f0, q), "biquad_notch"
    except NyquistNotch:
        return nyquist_fir(x), "nyquist_fir"


def _moving_average(x, width):
    width = max(1, int(width))
    return np.convolve(x, np.ones(width) / width, mode="same")


def detect_r_peaks(x, fs: float, refractory_s: float = 0.2,
                   search_window_s: float = 0.075) -> list[int]:
    """Pan-Tompkins style QRS detector.

    Bandpass 5-15 Hz, derivative, squaring, 150 ms moving-window integration,
    then dual adaptive thresholds with searchback. Detections are snapped to
    the signal maximum within ``search_window_s`` of the integrator peak.
    """
    x = _as_finite(x)
    if fs < 50:
        raise ValueError("fs must be at least 50 Hz")
    if x.size < 2 * fs:
        raise SignalTooShort("signal shorter than two seconds")
    x = x - np.median(x)
    if not np.any(x):
        return []

    sos = sps.butter(2, [5.0, 15.0], btype="bandpass", fs=fs, output="sos")
    band = sps.sosfiltfilt(sos, x)
    mwi = _moving_average(np.gradient(band) ** 2, round(0.150 * fs))
    if mwi.max() <= 0:
        return []

    refractory = int(round(refractory_s * fs))
    cand, _ = sps.find_peaks(mwi, distance=max(1, refractory // 2))
    if cand.size == 0:
        return []

    init = mwi[: int(2 * fs)]
    spki, npki = init.max() / 3.0, init.mean() / 2.0
    thr = npki + 0.25 * (spki - npki)
    qrs: list[int] = []
    rr: list[int] = []
    skipped: list[int] = []
    for p in cand:
        v = mwi[p]
        if qrs and p - qrs[-1] < refractory:
            if v > mwi[qrs[-1]]:
                qrs[-1] = int(p)  # stronger candidate inside the refractory window
            continue
        if rr and qrs:
            avg = np.mean(rr[-8:])
            if p - qrs[-1] > 1.66 * avg and skipped:
                back = [s for s in skipped if s - qrs[-1] >= refractory
                        and p - s >= refractory and mwi[s] > thr / 2]
                if back:
                    s = max(back, key=lambda i: mwi[i])
                    rr.append(s - qrs[-1])
                    qrs.append(int(s))
                    spki = 0.25 * mwi[s] + 0.75 * spki
        if v > thr:
            if qrs:
                rr.append(int(p) - qrs[-1])
            qrs.append(int(p))
            spki = 0.125 * v + 0.875 * spki
            skipped = []
        else:
            npki = 0.125 * v + 0.875 * npki
            skipped.append(int(p))
        thr = npki + 0.25 * (spki - npki)

    half = int(round(search_window_s * fs))
    refined = []
    for p in qrs:
        lo, hi = max(0, p - half), min(x.size, p + half + 1)
        refined.append(lo + int(np.argmax(x[lo:hi])))
    out: list[int] = []
    for p in sorted(refined):
        if out and p - out[-1] < refractory:
            if x[p] > x[out[-1]]:
                out[-1] = p
            continue
        out.append(p)
    return out


def segment_beats(record: EcgRecord | np.ndarray, r_peaks, pre: int = 24,
                  post: int = 24) -> list[BeatSegment]:
    """Fixed windows around each R peak; peaks whose window leaves the record are skipped."""
    if pre < 1 or post < 1:
        raise ValueError("pre and post must be >= 1")
    leads = record.leads if isinstance(record, EcgRecord) else np.atleast_2d(record)
    n = leads.shape[1]
    beats = []
    for r in r_peaks:
        r = int(r)
        if r - pre < 0 or r + post >= n:
            continue
        beats.append(BeatSegment(leads[:, r - pre: r + post + 1].copy(), r, (pre, post)))
    return beats


@dataclass
class PreprocessConfig:
    window_n: int = 5
    f0: float = 50.0
    q: float = 30.0
    pre: int = 24
    post: int = 24
    detect_lead: str = "II"

    def __post_init__(self):
        if self.window_n < 1 or self.window_n % 2 == 0:
            raise ValueError("window_n must be a positive odd integer")
        if not (self.f0 > 0 and self.q > 0):
            raise ValueError("f0 and q must be positive")
        if self.pre < 1 or self.post < 1:
            raise ValueError("pre and post must be >= 1")
        if self.detect_lead not in LEAD_NAMES:
            raise ValueError(f"unknown detector lead {self.detect_lead!r}")


@dataclass
class Processed:
    record: EcgRecord
    filtered: np.ndarray
    r_peaks: list[int]
    beats: list[BeatSegment]
    meta: dict = field(default_factory=dict)


def preprocess_record(record: EcgRecord, cfg: PreprocessConfig | None = None) -> Processed:
    """Window filter, power-line removal, R peaks on the detector lead, segmentation."""
    cfg = cfg or PreprocessConfig()
    filtered = np.empty_like(record.leads)
    method = None
    for i, lead in enumerate(record.leads):
        smoothed = window_filter(lead, cfg.window_n)
        filtered[i], method = remove_powerline(smoothed, record.fs, cfg.f0, cfg.q)
    det = filtered[record.lead_names.index(cfg.detect_lead)]
    peaks = detect_r_peaks(det, record.fs)
    beats = segment_beats(filtered, peaks, cfg.pre, cfg.post)
    meta = {"powerline_filter": method, "n_peaks": len(peaks), "n_beats": len(beats)}
    return Processed(record, filtered, peaks, beats, meta)
