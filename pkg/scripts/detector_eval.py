"""Score the R-peak detector against the synthetic ground truth.

    python3 scripts/detector_eval.py --n-records 200 --snr-db 10 --tol 3

A detection matches a true peak within ``tol`` samples; each true peak is
matched at most once. Prints pooled sensitivity, precision and F1.
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from ecg2text.dataset_io import load_manifest, read_record
from ecg2text.preprocess import PreprocessConfig, preprocess_record
from ecg2text.synth import SynthSpec, generate, read_peaks


def match(found, truth, tol: int):
    truth = np.asarray(truth)
    used = np.zeros(truth.size, bool)
    tp = 0
    for p in found:
        d = np.abs(truth - p)
        d[used] = tol + 1
        if d.size and d.min() <= tol:
            used[d.argmin()] = True
            tp += 1
    return tp, len(found) - tp, int((~used).sum())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-records", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--snr-db", type=float, default=20.0)
    ap.add_argument("--tol", type=int, default=3)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        manifest = generate(SynthSpec(n_records=args.n_records, seed=args.seed,
                                      snr_db=args.snr_db), Path(tmp))
        tp = fp = fn = 0
        for e in load_manifest(manifest):
            proc = preprocess_record(read_record(e.path), PreprocessConfig())
            a, b, c = match(proc.r_peaks, read_peaks(e.path.with_name(e.record_id + ".peaks")),
                            args.tol)
            tp, fp, fn = tp + a, fp + b, fn + c
    print(f"beats {tp + fn}, sensitivity {tp / (tp + fn):.4f}, "
          f"precision {tp / max(tp + fp, 1):.4f}, F1 {2 * tp / (2 * tp + fp + fn):.4f}")


if __name__ == "__main__":
    main()
