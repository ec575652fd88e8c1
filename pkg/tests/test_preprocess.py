import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ecg2text.dataset_io import EcgRecord
from ecg2text.errors import NyquistNotch, SignalTooShort
from ecg2text.preprocess import (PreprocessConfig, detect_r_peaks, fft_magnitude, notch_filter,
                                 nyquist_fir, preprocess_record, remove_powerline,
                                 segment_beats, window_filter)
from oracles import naive_dft

signals = hnp.arrays(np.float64, st.integers(2, 96),
                     elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False))


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def spike_train(fs=100.0, seconds=10.0, period=1.0, width=0.012, start=0.5):
    t = np.arange(int(seconds * fs)) / fs
    centers = np.arange(start, seconds - 0.2, period)
    x = sum(np.exp(-0.5 * ((t - c) / width) ** 2) for c in centers)
    return x, np.rint(centers * fs).astype(int)


def f1_score(found, truth, tol=3):
    found, truth = list(found), list(truth)
    used, tp = set(), 0
    for p in found:
        hits = [i for i, t in enumerate(truth) if abs(t - p) <= tol and i not in used]
        if hits:
            used.add(hits[0])
            tp += 1
    fp, fn = len(found) - tp, len(truth) - tp
    return 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 1.0


# --- FFT -----------------------------------------------------------------------------

def test_fft_dc_only():
    s = fft_magnitude(np.full(8, 2.5), fs=100)
    assert s.magnitudes[0] == pytest.approx(20.0)
    assert np.allclose(s.magnitudes[1:], 0.0, atol=1e-12)
    assert s.freqs.tolist() == [0.0, 12.5, 25.0, 37.5, 50.0]


def test_fft_single_tone_matches_naive_dft():
    t = np.arange(100) / 100.0
    x = np.sin(2 * np.pi * 10 * t)
    s = fft_magnitude(x, fs=100)
    ref = np.abs(naive_dft(x))[:51]
    assert np.allclose(s.magnitudes, ref, atol=1e-9)
    peak = int(np.argmax(s.magnitudes))
    assert s.freqs[peak] == 10.0
    assert s.magnitudes[peak] == pytest.approx(50.0, rel=1e-12)
    assert np.all(np.delete(s.magnitudes, peak) < 1e-9)


@given(signals)
def test_fft_matches_naive_dft(x):
    ref = np.abs(naive_dft(x))
    got = fft_magnitude(x, fs=1.0, one_sided=False).magnitudes
    scale = max(1.0, float(np.max(ref)))
    assert np.max(np.abs(got - ref)) <= 1e-9 * scale


@given(signals)
def test_parseval(x):
    full = fft_magnitude(x, fs=1.0, one_sided=False).magnitudes
    energy = float(np.sum(x * x))
    assert np.sum(full ** 2) / x.size == pytest.approx(energy, rel=1e-9, abs=1e-9)


def test_fft_rejects_short_or_nonfinite():
    with pytest.raises(SignalTooShort):
        fft_magnitude([1.0], 100)
    with pytest.raises(ValueError):
        fft_magnitude([1.0, np.nan], 100)


# --- window filter -----------------------------------------------------------------

def test_window_filter_hand_example():
    assert window_filter([0.0, 3.0, 0.0], 3).tolist() == [1.0, 1.0, 1.0]


def test_window_filter_sliding_oracle(rng):
    x = rng.normal(size=23)
    n = 5
    padded = [x[0]] * 2 + list(x) + [x[-1]] * 2
    ref = [sum(padded[i:i + n]) / n for i in range(x.size)]
    assert np.allclose(window_filter(x, n), ref, atol=1e-12)


@given(signals)
def test_window_filter_unit_and_constant(x):
    assert np.array_equal(window_filter(x, 1), x)
    c = np.full(x.size, 3.25)
    n = min(x.size, 9)
    n -= 1 - n % 2  # largest odd window that fits
    assert np.allclose(window_filter(c, n), c, atol=1e-12)


@given(signals, signals)
def test_window_filter_linear(a, b):
    n = min(a.size, b.size)
    a, b = a[:n], b[:n]
    k = 3 if n >= 3 else 1
    lhs = window_filter(2.0 * a - b, k)
    rhs = 2.0 * window_filter(a, k) - window_filter(b, k)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_window_filter_shift_equivariant_interior(rng):
    x = rng.normal(size=60)
    y = window_filter(x, 5)
    ys = window_filter(np.roll(x, 3), 5)
    assert np.allclose(ys[8:-8], np.roll(y, 3)[8:-8], atol=1e-12)


@pytest.mark.parametrize("n", [0, 2, 7])
def test_window_filter_bad_sizes(n):
    with pytest.raises(ValueError):
        window_filter(np.zeros(5), n)


# --- notch ----------------------------------------------------------------------------

def tone(f, fs=500.0, seconds=4.0):
    return np.sin(2 * np.pi * f * np.arange(int(fs * seconds)) / fs)


def test_notch_kills_50hz_tone():
    x = tone(50.0)
    y = notch_filter(x, 500.0, 50.0, 30.0)
    core = slice(500, -500)  # exclude filtfilt edge transients
    assert rms(y[core]) <= 0.1 * rms(x[core])


def test_notch_passband():
    x = tone(5.0)
    y = notch_filter(x, 500.0)
    assert rms(y) == pytest.approx(rms(x), rel=0.02)


def test_notch_unity_below_band_edge():
    f = 0.8 * 50.0 * (1 - 1 / 60)
    x = tone(f)
    y = notch_filter(x, 500.0)
    core = slice(500, -500)
    gain_db = 20 * np.log10(rms(y[core]) / rms(x[core]))
    assert abs(gain_db) <= 1.0


def test_notch_preserves_dc():
    assert np.allclose(notch_filter(np.full(1000, 1.7), 500.0), 1.7, atol=1e-6)


def test_notch_twice_attenuates_at_least_as_much():
    x = tone(50.0)
    once = notch_filter(x, 500.0)
    twice = notch_filter(once, 500.0)
    # whole-signal energy: the second pass redistributes edge transients
    assert rms(twice) <= rms(once)


def test_notch_zero_phase():
    x = tone(5.0)
    y = notch_filter(x, 500.0)
    lags = range(-20, 21)
    xc = [np.dot(x[500:-500], np.roll(y, k)[500:-500]) for k in lags]
    assert list(lags)[int(np.argmax(xc))] == 0


def test_notch_at_nyquist_raises_and_falls_back():
    x = tone(50.0, fs=100.0) + 0.3
    with pytest.raises(NyquistNotch):
        notch_filter(x, 100.0, 50.0)
    y, method = remove_powerline(x, 100.0, 50.0)
    assert method == "nyquist_fir"
    assert np.allclose(y[5:-5], 0.3, atol=1e-9)
    assert np.allclose(nyquist_fir(np.full(10, 2.0)), 2.0)


def test_notch_bad_fs():
    with pytest.raises(ValueError):
        notch_filter(np.zeros(10), 0.0)


# --- R-peak detection ---------------------------------------------------------------

def test_detector_flat_signal():
    assert detect_r_peaks(np.zeros(1000), 100.0) == []


def test_detector_too_short():
    with pytest.raises(SignalTooShort):
        detect_r_peaks(np.zeros(150), 100.0)


def test_detector_clean_spike_train():
    x, truth = spike_train()
    found = detect_r_peaks(x, 100.0)
    assert 9 <= len(found) <= 10
    assert all(min(abs(truth - p)) <= 3 for p in found)


def test_detector_noisy_spike_train():
    x, truth = spike_train()
    noise = np.random.default_rng(3).normal(size=x.size)
    x = x + noise * np.sqrt(np.mean(x ** 2) / 10 ** (20 / 10))
    assert f1_score(detect_r_peaks(x, 100.0), truth) >= 0.99


@given(st.floats(0.45, 1.6), st.floats(0.25, 0.6), st.integers(0, 10_000))
def test_detector_output_ordered_with_refractory_gap(period, start, seed):
    x, _ = spike_train(period=period, start=start)
    x = x + 0.05 * np.random.default_rng(seed).normal(size=x.size)
    found = detect_r_peaks(x, 100.0)
    assert all(b - a >= 20 for a, b in zip(found, found[1:]))


# --- segmentation ----------------------------------------------------------------------

def test_segment_index_arithmetic():
    x = np.arange(100.0)
    (beat,) = segment_beats(x, [5], pre=2, post=2)
    assert beat.data[0].tolist() == [3.0, 4.0, 5.0, 6.0, 7.0]
    assert beat.r_index == 5 and beat.window == (2, 2)


def test_segment_skips_boundary_peaks():
    assert segment_beats(np.zeros(100), [1], pre=5, post=5) == []
    assert segment_beats(np.zeros(100), [97], pre=5, post=5) == []


def test_segment_ten_second_record():
    rec = EcgRecord("r", np.zeros((12, 1000)), 100.0)
    peaks = list(range(50, 1000, 100))
    beats = segment_beats(rec, peaks)
    assert len(beats) in (9, 10)
    assert {b.data.shape for b in beats} == {(12, 49)}


def test_segment_rejects_empty_window():
    with pytest.raises(ValueError):
        segment_beats(np.zeros(10), [5], pre=0)


def test_preprocess_record_metadata():
    x, truth = spike_train()
    rec = EcgRecord("r", np.tile(x, (12, 1)), 100.0)
    out = preprocess_record(rec, PreprocessConfig())
    assert out.meta["powerline_filter"] == "nyquist_fir"
    assert out.meta["n_beats"] == len(out.beats) > 0
    assert all(b.data.shape == (12, 49) for b in out.beats)
