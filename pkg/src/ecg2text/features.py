"""Time/frequency statistics per lead and model-input assembly."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_io import LEAD_NAMES
from .errors import EmptyRecord
from .preprocess import BeatSegment, Spectrum, fft_magnitude

TIME_FEATURES = (
    "max", "min", "range", "mean", "median", "mode", "std", "rms", "mean_square",
    "k_moment", "skewness", "kurtosis", "kurtosis_factor", "waveform_factor",
    "pulse_factor", "margin_factor",
)
FREQ_FEATURES = (
    "fft_mean", "fft_var", "fft_entropy", "fft_energy", "fft_skew", "fft_kurt",
    "fft_shape_mean", "fft_shape_std", "fft_shape_skew", "fft_shape_kurt",
)
ALL_FEATURES = TIME_FEATURES + FREQ_FEATURES
# 22 per lead x 12 leads = 264 feature dims
DEFAULT_SUBSET = tuple(f for f in ALL_FEATURES
                       if f not in ("mode", "k_moment", "mean_square", "kurtosis_factor"))


def _mode(x, decimals=3):
    vals, counts = np.unique(np.round(x, decimals), return_counts=True)
    return float(vals[np.argmax(counts)])


def time_features(beat, with_flags: bool = False):
    """Sixteen time-domain statistics in ``TIME_FEATURES`` order.

    Zero denominators (constant or all-zero beats) yield 0 for the affected
    feature and, with ``with_flags``, report its name.
    """
    x = np.asarray(beat, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("beat needs at least 2 samples")
    flags = set()
    n = x.size
    mean = x.mean()
    d = x - mean
    var_pop = np.mean(d * d)
    mean_square = np.mean(x * x)
    rms = np.sqrt(mean_square)
    ax = np.abs(x)
    abs_mean = ax.mean()
    peak = ax.max()

    if np.ptp(x) == 0:
        d = np.zeros_like(x)  # an inexact mean must not leave rounding residue
        var_pop = 0.0
    if var_pop ** 2 > 0:
        skew = np.mean(d ** 3) / var_pop ** 1.5
        kurt = np.mean(d ** 4) / var_pop ** 2
    else:
        skew = kurt = 0.0
        flags |= {"skewness", "kurtosis"}

    def ratio(num, den, name):
        if den > 0:
            return num / den
        flags.add(name)
        return 0.0

    values = np.array([
        x.max(), x.min(), x.max() - x.min(), mean, np.median(x), _mode(x),
        np.sqrt(np.sum(d * d) / (n - 1)), rms, mean_square, np.mean(x ** 3),
        skew, kurt,
        ratio(kurt, rms ** 4, "kurtosis_factor"),
        ratio(rms, abs_mean, "waveform_factor"),
        ratio(peak, abs_mean, "pulse_factor"),
        ratio(peak, np.mean(np.sqrt(ax)) ** 2, "margin_factor"),
    ])
    return (values, flags) if with_flags else values


def freq_features(spec: Spectrum, with_flags: bool = False,
                  z8_centered_on_z7: bool = False):
    """Ten spectral statistics Z1..Z10 over all ``N`` bins of ``spec``.

    Z7, Z9 and Z10 use ``f(k) - F(k)`` and Z8 centres on Z6, as tabulated.
    ``z8_centered_on_z7`` switches Z8 to centre on Z7 instead.
    """
    F = np.asarray(spec.magnitudes, dtype=np.float64)
    f = np.asarray(spec.freqs, dtype=np.float64)
    n = F.size
    if n < 2:
        raise ValueError("need at least 2 bins")
    if np.any(F < 0):
        raise ValueError("magnitudes must be nonnegative")
    flags = set()
    z1 = F.sum() / n
    # exactly flat spectra have zero spread even when z1 is inexact
    z2 = np.sum((F - z1) ** 2) / (n - 1) if np.ptp(F) > 0 else 0.0
    z4 = np.sum(F ** 2) / n
    total = F.sum()
    if z1 > 0:
        p = F / (z1 * n)
        nz = p > 0
        z3 = -np.sum(p[nz] * np.log2(p[nz]))
    else:
        z3 = 0.0
        flags.add("fft_entropy")
    if z2 ** 2 > 0:
        s = (F - z1) / np.sqrt(z2)
        z5 = np.sum(s ** 3) / n
        z6 = np.sum(s ** 4) / n
    else:
        z5 = z6 = 0.0
        flags |= {"fft_skew", "fft_kurt"}
    if total > 0:
        z7 = np.sum(f - F) / total
        centre = z7 if z8_centered_on_z7 else z6
        z8 = np.sqrt(np.sum((f - centre) ** 2 * F) / total)
        z9 = np.sum((f - F) ** 3 * F) / total
        z10 = np.sum((f - F) ** 4 * F) / total
    else:
        z7 = z8 = z9 = z10 = 0.0
        flags |= {"fft_shape_mean", "fft_shape_std", "fft_shape_skew", "fft_shape_kurt"}
    values = np.array([z1, z2, z3, z4, z5, z6, z7, z8, z9, z10])
    return (values, flags) if with_flags else values


def lead_features(beat, fs: float, z8_centered_on_z7: bool = False) -> np.ndarray:
    """All 26 features of one lead's beat, ``ALL_FEATURES`` order."""
    spec = fft_magnitude(beat, fs)
    return np.concatenate([time_features(beat),
                           freq_features(spec, z8_centered_on_z7=z8_centered_on_z7)])


@dataclass
class InputLayout:
    samples_per_lead: int = 50
    features: tuple[str, ...] = DEFAULT_SUBSET
    n_leads: int = 12
    aggregate: str = "median"  # or "per_beat"
    z8_centered_on_z7: bool = False
    mean: np.ndarray | None = field(default=None, repr=False)
    std: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = tuple(self.features)
        if self.samples_per_lead < 1:
            raise ValueError("samples_per_lead must be >= 1")
        bad = set(self.features) - set(ALL_FEATURES)
        if bad:
            raise ValueError(f"unknown features {sorted(bad)}")
        if self.aggregate not in ("median", "per_beat"):
            raise ValueError(f"unknown aggregate mode {self.aggregate!r}")

    @property
    def signal_dims(self) -> int:
        return self.n_leads * self.samples_per_lead

    @property
    def dim(self) -> int:
        return self.signal_dims + self.n_leads * len(self.features)

    @property
    def offsets(self) -> dict[str, tuple[int, int]]:
        """Per-lead (signal_offset, feature_offset) into the vector."""
        s, k = self.samples_per_lead, len(self.features)
        return {LEAD_NAMES[i]: (i * s, self.signal_dims + i * k) for i in range(self.n_leads)}

    def names(self) -> list[str]:
        lead_names = LEAD_NAMES[: self.n_leads]
        out = [f"{ld}_s{j:02d}" for ld in lead_names for j in range(self.samples_per_lead)]
        out += [f"{ld}_{f}" for ld in lead_names for f in self.features]
        return out

    def descriptor(self) -> dict:
        return {"samples_per_lead": self.samples_per_lead, "features": list(self.features),
                "n_leads": self.n_leads, "aggregate": self.aggregate,
                "z8_centered_on_z7": self.z8_centered_on_z7}


def _resample(beat_2d: np.ndarray, n_out: int) -> np.ndarray:
    n_in = beat_2d.shape[1]
    src = np.linspace(0.0, 1.0, n_in)
    dst = np.linspace(0.0, 1.0, n_out)
    return np.stack([np.interp(dst, src, row) for row in beat_2d])


def _vector(beat_2d: np.ndarray, fs: float, layout: InputLayout) -> np.ndarray:
    idx = [ALL_FEATURES.index(f) for f in layout.features]
    sig = _resample(beat_2d, layout.samples_per_lead).ravel()
    feats = np.concatenate([lead_features(lead, fs, layout.z8_centered_on_z7)[idx]
                            for lead in beat_2d])
    return np.concatenate([sig, feats])


def assemble_input(beats: Sequence[BeatSegment], fs: float,
                   layout: InputLayout | None = None, standardize: bool = True) -> np.ndarray:
    """Build the model input vector(s) for one record.

    ``median`` mode returns one vector built from the pointwise median beat;
    ``per_beat`` returns one row per beat. Stored standardization constants
    are applied when present.
    """
    layout = layout or InputLayout()
    if not beats:
        raise EmptyRecord("record has no usable beats")
    stack = np.stack([b.data[: layout.n_leads] for b in beats])
    if layout.aggregate == "median":
        out = _vector(np.median(stack, axis=0), fs, layout)
    else:
        out = np.stack([_vector(b, fs, layout) for b in stack])
    if standardize and layout.mean is not None:
        out = (out - layout.mean) / layout.std
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite model input")
    return out


def fit_standardizer(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and population std; constant dimensions get std 1."""
    vectors = np.asarray(vectors, dtype=np.float64)
    mean = vectors.mean(axis=0)
    std = vectors.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def export_csv(path: str | Path, record_ids: Sequence[str], vectors: np.ndarray,
               layout: InputLayout) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", *layout.names()])
        for rid, vec in zip(record_ids, vectors):
            w.writerow([rid, *(repr(float(v)) for v in vec)])
