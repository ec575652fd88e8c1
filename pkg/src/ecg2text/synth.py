"""Synthetic labelled 12-lead corpus with known R-peak positions.

Each beat is a sum of Gaussian waves (P, Q, R, S, T and an optional ST
shift) whose parameters depend on the class; leads are scaled copies with
a fixed per-lead pattern. White noise is added at a fixed SNR per lead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset_io import CLASSES, LEAD_NAMES, EcgRecord, save_record, write_manifest

# patients share per class, PTB-XL superclass table
PTBXL_PRIORS = {"NORM": 0.342, "MI": 0.197, "STTC": 0.189, "CD": 0.176, "HYP": 0.095}

# lead II carries the tallest positive R
LEAD_PATTERN = np.array([0.7, 1.0, 0.4, -0.8, 0.35, 0.7, -0.5, 0.3, 0.6, 0.9, 0.85, 0.7])

# wave name -> (offset from R in s, width in s, amplitude in mV)
_BASE_WAVES = {
    "P": (-0.16, 0.020, 0.12),
    "Q": (-0.03, 0.008, -0.10),
    "R": (0.00, 0.010, 1.00),
    "S": (0.03, 0.008, -0.20),
    "ST": (0.12, 0.050, 0.00),
    "T": (0.26, 0.040, 0.30),
}


def _waves(**changes):
    w = dict(_BASE_WAVES)
    w.update(changes)
    return w


DEFAULT_TEMPLATES = {
    "NORM": {"heart_rate": 70.0, "waves": _waves()},
    "MI": {"heart_rate": 82.0,
           "waves": _waves(Q=(-0.03, 0.012, -0.40), R=(0.0, 0.010, 0.75),
                           ST=(0.12, 0.050, 0.22), T=(0.26, 0.040, -0.15))},
    "STTC": {"heart_rate": 76.0,
             "waves": _waves(ST=(0.12, 0.050, -0.18), T=(0.26, 0.045, -0.30))},
    "CD": {"heart_rate": 60.0,
           "waves": _waves(R=(0.0, 0.022, 0.95), S=(0.06, 0.015, -0.25),
                           Rp=(0.05, 0.015, 0.45))},
    "HYP": {"heart_rate": 72.0,
            "waves": _waves(R=(0.0, 0.011, 1.90), S=(0.035, 0.010, -0.65),
                            T=(0.26, 0.040, 0.45))},
}

DEFAULT_REPORTS = {
    "NORM": ["sinus rhythm normal ecg", "sinus rhythm otherwise normal ecg"],
    "MI": ["sinus rhythm myocardial infarction", "sinus rhythm inferior myocardial infarction"],
    "STTC": ["sinus rhythm st t change", "sinus rhythm nonspecific st t change"],
    "CD": ["sinus rhythm conduction disturbance block", "sinus rhythm bundle branch block"],
    "HYP": ["sinus rhythm left ventricular hypertrophy",
            "sinus rhythm voltage left ventricular hypertrophy"],
}


@dataclass
class SynthSpec:
    n_records: int = 500
    priors: dict = field(default_factory=lambda: dict(PTBXL_PRIORS))
    templates: dict = field(default_factory=lambda: DEFAULT_TEMPLATES)
    reports: dict = field(default_factory=lambda: DEFAULT_REPORTS)
    snr_db: float = 20.0
    fs: float = 100.0
    duration_s: float = 10.0
    rate_jitter: float = 0.04
    amp_jitter: float = 0.06
    edge_s: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if set(self.priors) != set(CLASSES):
            raise ValueError("priors must cover every class")
        total = sum(self.priors.values())
        if total <= 0 or any(p < 0 for p in self.priors.values()):
            raise ValueError("priors must be nonnegative with positive sum")
        # the published shares sum to 0.999
        self.priors = {c: self.priors[c] / total for c in CLASSES}
        if not self.snr_db > 0:
            raise ValueError("SNR must be positive (dB)")


def allocate(n: int, priors: dict) -> dict[str, int]:
    """Largest-remainder class counts; remainder ties go to earlier classes."""
    exact = {c: n * priors[c] for c in CLASSES}
    counts = {c: int(np.floor(v)) for c, v in exact.items()}
    left = n - sum(counts.values())
    order = sorted(CLASSES, key=lambda c: (-(exact[c] - counts[c]), CLASSES.index(c)))
    for c in order[:left]:
        counts[c] += 1
    return counts


def beat_times(rng, heart_rate: float, spec: SynthSpec) -> np.ndarray:
    rr = 60.0 / heart_rate
    t0 = spec.edge_s + rng.uniform(0.0, 0.5 * rr)
    last = spec.duration_s - spec.edge_s
    return np.arange(t0, last, rr)


def synth_record(record_id: str, label: str, spec: SynthSpec, rng: np.random.Generator):
    """One record plus its ground-truth R-peak sample indices."""
    tpl = spec.templates[label]
    n = int(round(spec.duration_s * spec.fs))
    hr = tpl["heart_rate"] * (1.0 + spec.rate_jitter * rng.standard_normal())
    # R peaks sit on the sample grid so the true index is exact
    peaks = np.unique(np.rint(beat_times(rng, hr, spec) * spec.fs).astype(int))
    t = np.arange(n)
    base = np.zeros(n)
    for name, (off, width, amp) in tpl["waves"].items():
        a = amp * (1.0 + spec.amp_jitter * rng.standard_normal())
        s = width * spec.fs
        for r in peaks:
            c = r + off * spec.fs
            lo, hi = int(max(0, c - 5 * s - 1)), int(min(n, c + 5 * s + 2))
            base[lo:hi] += a * np.exp(-0.5 * ((t[lo:hi] - c) / s) ** 2)
    lead_scale = LEAD_PATTERN * (1.0 + 0.5 * spec.amp_jitter * rng.standard_normal(12))
    clean = lead_scale[:, None] * base[None, :]
    power = np.mean(clean ** 2, axis=1, keepdims=True)
    noise = rng.standard_normal(clean.shape) * np.sqrt(power / 10 ** (spec.snr_db / 10))
    leads = np.round((clean + noise) * 1000.0) / 1000.0
    report = spec.reports[label][int(rng.integers(len(spec.reports[label])))]
    rec = EcgRecord(record_id, leads, spec.fs, LEAD_NAMES, (1000.0,) * 12,
                    frozenset([label]), report)
    return rec, peaks.tolist()


def generate(spec: SynthSpec, out_dir: str | Path) -> Path:
    """Write records, ``.peaks`` sidecars and ``manifest.csv`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "records").mkdir(parents=True, exist_ok=True)
    counts = allocate(spec.n_records, spec.priors)
    labels = [c for c in CLASSES for _ in range(counts[c])]
    rng = np.random.default_rng(spec.seed)
    labels = [labels[i] for i in rng.permutation(len(labels))]
    rows = []
    for i, label in enumerate(labels):
        rid = f"r{i:04d}"
        rec, peaks = synth_record(rid, label, spec, np.random.default_rng([spec.seed, i]))
        path = out / "records" / rid
        save_record(rec, path)
        path.with_name(rid + ".peaks").write_text("".join(f"{p}\n" for p in peaks))
        rows.append((rid, f"records/{rid}", [label], rec.report))
    write_manifest(out / "manifest.csv", rows)
    return out / "manifest.csv"


def read_peaks(path: str | Path) -> list[int]:
    return [int(x) for x in Path(path).read_text().split()]
