import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ecg2text.errors import EmptyRecord
from ecg2text.features import (ALL_FEATURES, DEFAULT_SUBSET, FREQ_FEATURES, TIME_FEATURES,
                               InputLayout, assemble_input, export_csv, fit_standardizer,
                               freq_features, lead_features, time_features)
from ecg2text.preprocess import BeatSegment, Spectrum, fft_magnitude
from oracles import naive_freq_features, naive_time_features

beats = hnp.arrays(np.float64, st.integers(2, 80),
                   elements=st.floats(-5, 5, allow_nan=False, allow_infinity=False))

T = {name: i for i, name in enumerate(TIME_FEATURES)}


def close(a, b):
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def spectrum(F):
    F = np.asarray(F, dtype=float)
    return Spectrum(F, np.arange(F.size, dtype=float))


def test_feature_counts():
    assert len(TIME_FEATURES) == 16 and len(FREQ_FEATURES) == 10
    assert len(DEFAULT_SUBSET) == 22
    assert not {"mode", "k_moment", "mean_square", "kurtosis_factor"} & set(DEFAULT_SUBSET)


# --- time domain ----------------------------------------------------------------

def test_constant_beat():
    v, flags = time_features(np.full(10, 2.0), with_flags=True)
    for name in ("max", "min", "mean", "median", "mode", "rms"):
        assert v[T[name]] == 2.0
    assert v[T["range"]] == 0.0 and v[T["std"]] == 0.0
    assert v[T["waveform_factor"]] == 1.0 and v[T["pulse_factor"]] == 1.0
    assert v[T["skewness"]] == 0.0 and v[T["kurtosis"]] == 0.0
    assert {"skewness", "kurtosis"} <= flags


def test_two_sample_hand_values():
    v = time_features([3.0, 4.0])
    assert v[T["rms"]] == pytest.approx(math.sqrt(12.5), rel=1e-15)
    assert v[T["mean_square"]] == 12.5
    assert v[T["range"]] == 1.0


def test_zero_beat_flags_factors():
    v, flags = time_features(np.zeros(6), with_flags=True)
    assert not v.any()
    assert {"waveform_factor", "pulse_factor", "margin_factor", "kurtosis_factor"} <= flags


def test_mode_ties_go_to_smallest():
    assert time_features([0.2, 0.1, 0.2, 0.1, 0.3])[T["mode"]] == 0.1
    assert time_features([1.0004, 1.0001, 2.0])[T["mode"]] == 1.0


def test_time_features_match_oracle_on_random_beats(rng):
    for _ in range(100):
        n = int(rng.integers(2, 120))
        x = rng.normal(size=n) * rng.uniform(0.1, 3)
        if rng.random() < 0.3:
            x = np.round(x, 2)  # repeated values exercise the mode
        assert close(time_features(x), naive_time_features(x))


@given(beats)
def test_time_feature_invariants(x):
    v = time_features(x)
    assert np.all(np.isfinite(v))
    assert v[T["range"]] >= 0 and v[T["std"]] >= 0
    assert v[T["rms"]] ** 2 == pytest.approx(v[T["mean_square"]], rel=1e-12, abs=1e-300)


@given(beats, st.floats(0.1, 10))
def test_gain_equivariance(x, gain):
    a, b = time_features(x), time_features(gain * x)
    for name in ("max", "min", "mean", "rms"):
        assert b[T[name]] == pytest.approx(gain * a[T[name]], rel=1e-9, abs=1e-9)
    for name in ("waveform_factor", "pulse_factor", "margin_factor"):
        assert b[T[name]] == pytest.approx(a[T[name]], rel=1e-9, abs=1e-9)
    if np.std(x) > 1e-3 * max(1.0, np.abs(x).max()):
        for name in ("skewness", "kurtosis"):
            assert b[T[name]] == pytest.approx(a[T[name]], rel=1e-7, abs=1e-7)


def test_time_features_need_two_samples():
    with pytest.raises(ValueError):
        time_features([1.0])


# --- frequency domain -------------------------------------------------------------

def test_four_bin_hand_evaluation():
    z = freq_features(spectrum([1, 2, 3, 4]))
    h = -sum(p * math.log2(p) for p in (0.1, 0.2, 0.3, 0.4))
    z6 = (2 * 1.5 ** 4 + 2 * 0.5 ** 4) / (4 * (5 / 3) ** 2)
    z8 = math.sqrt(sum((fk - z6) ** 2 * Fk for fk, Fk in zip((0, 1, 2, 3), (1, 2, 3, 4))) / 10)
    expected = [2.5, 5 / 3, h, 7.5, 0.0, z6, -0.4, z8, -1.0, 1.0]
    assert z6 == pytest.approx(0.9225, rel=1e-15)
    assert close(z, expected)


@given(st.integers(2, 300), st.floats(1e-6, 1e6))
def test_uniform_spectrum(n, c):
    z, flags = freq_features(spectrum(np.full(n, c)), with_flags=True)
    assert z[0] == pytest.approx(c, rel=1e-12)
    assert abs(z[1]) <= 1e-20 * c * c
    assert abs(z[2] - math.log2(n)) <= 1e-12
    assert z[3] == pytest.approx(c * c, rel=1e-12)
    assert z[4] == 0.0 and z[5] == 0.0
    assert {"fft_skew", "fft_kurt"} <= flags


def test_freq_features_match_oracle_on_random_spectra(rng):
    for _ in range(100):
        x = rng.normal(size=int(rng.integers(4, 130)))
        s = fft_magnitude(x, fs=100.0)
        assert close(freq_features(s), naive_freq_features(s.magnitudes, s.freqs))


def test_all_zero_spectrum():
    z, flags = freq_features(spectrum(np.zeros(5)), with_flags=True)
    assert not z.any()
    assert "fft_entropy" in flags and "fft_shape_std" in flags


@given(hnp.arrays(np.float64, st.integers(2, 64),
                  elements=st.floats(0, 100, allow_subnormal=False)))
def test_z1_is_the_mean(F):
    assert freq_features(spectrum(F))[0] == F.sum() / F.size


def test_z8_flag_centres_on_z7():
    s = spectrum([1, 2, 3, 4])
    z7 = freq_features(s)[6]
    alt = freq_features(s, z8_centered_on_z7=True)[7]
    assert alt == pytest.approx(math.sqrt(sum((f - z7) ** 2 * F for f, F in
                                              zip(range(4), (1, 2, 3, 4))) / 10))


def test_freq_features_reject_negative():
    with pytest.raises(ValueError):
        freq_features(spectrum([1.0, -1.0, 2.0]))


def test_lead_features_order():
    x = np.random.default_rng(0).normal(size=49)
    v = lead_features(x, 100.0)
    assert v.size == len(ALL_FEATURES) == 26
    assert np.array_equal(v[:16], time_features(x))
    assert np.array_equal(v[16:], freq_features(fft_magnitude(x, 100.0)))


# --- input assembly -----------------------------------------------------------------

def make_beats(rng, k=5, length=49):
    return [BeatSegment(rng.normal(size=(12, length)), 24 + 100 * i, (24, 24)) for i in range(k)]


def test_default_dimension(rng):
    v = assemble_input(make_beats(rng), 100.0)
    assert v.shape == (864,)
    assert InputLayout().dim == 864


def test_all_features_dimension(rng):
    layout = InputLayout(50, ALL_FEATURES)
    assert assemble_input(make_beats(rng), 100.0, layout).shape == (12 * (50 + 26),)


def test_per_beat_mode(rng):
    v = assemble_input(make_beats(rng, k=4), 100.0, InputLayout(aggregate="per_beat"))
    assert v.shape == (4, 864)


def test_empty_record():
    with pytest.raises(EmptyRecord):
        assemble_input([], 100.0)


def test_median_beat_and_offsets(rng):
    bs = make_beats(rng, k=3)
    layout = InputLayout(samples_per_lead=49)
    v = assemble_input(bs, 100.0, layout)
    med = np.median(np.stack([b.data for b in bs]), axis=0)
    sig_off, feat_off = layout.offsets["V1"]
    assert np.allclose(v[sig_off:sig_off + 49], med[6], atol=1e-12)
    idx = [ALL_FEATURES.index(f) for f in layout.features]
    assert np.allclose(v[feat_off:feat_off + 22], lead_features(med[6], 100.0)[idx])


def test_standardisation_round_trip(rng):
    raw = np.stack([assemble_input(make_beats(rng), 100.0) for _ in range(40)])
    mean, std = fit_standardizer(raw)
    layout = InputLayout(mean=mean, std=std)
    rng2 = np.random.default_rng(1234)
    again = np.stack([assemble_input(make_beats(rng2), 100.0, layout) for _ in range(40)])
    assert np.allclose(again.mean(axis=0), 0.0, atol=1e-6)
    assert np.allclose(again.std(axis=0), 1.0, atol=1e-6)


def test_constant_dimension_gets_unit_std():
    mean, std = fit_standardizer(np.array([[1.0, 2.0], [1.0, 4.0]]))
    assert std.tolist() == [1.0, 1.0] and mean.tolist() == [1.0, 3.0]


def test_assembly_is_deterministic(rng):
    bs = make_beats(rng)
    assert np.array_equal(assemble_input(bs, 100.0), assemble_input(bs, 100.0))


def test_layout_rejects_unknown_feature():
    with pytest.raises(ValueError):
        InputLayout(features=("max", "bogus"))


def test_export_csv(tmp_path, rng):
    layout = InputLayout()
    v = np.stack([assemble_input(make_beats(rng), 100.0) for _ in range(2)])
    export_csv(tmp_path / "f.csv", ["a", "b"], v, layout)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[0] == "record_id" and len(header) == 865
    assert header[1] == "I_s00" and header[-1] == "V6_fft_shape_kurt"
    assert np.array_equal(np.array(lines[1].split(",")[1:], dtype=float), v[0])
