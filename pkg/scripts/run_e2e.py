"""Synthesize a corpus and run every pipeline stage on it.

    python3 scripts/run_e2e.py --work /tmp/e2e --n-records 500 --seed 0

Prints the metrics report and the wall time of each stage.
"""

import argparse
import json
import time
from pathlib import Path

from ecg2text.cli import main


def run(work: Path, n_records: int, seed: int) -> dict:
    work.mkdir(parents=True, exist_ok=True)
    corpus = work / "corpus"
    if main(["synth", "--out", str(corpus), "--n-records", str(n_records),
             "--seed", str(seed)]) != 0:
        raise SystemExit("synth failed")
    cfg = work / "config.json"
    cfg.write_text(json.dumps({"paths": {"manifest": str(corpus / "manifest.csv"),
                                         "out_dir": str(work / "out")}, "seed": seed}))
    timings = {}
    for cmd in ("preprocess", "train", "generate", "detect"):
        t0 = time.perf_counter()
        rc = main([cmd, "--config", str(cfg)])
        timings[cmd] = round(time.perf_counter() - t0, 2)
        if rc != 0:
            raise SystemExit(f"{cmd} exited with {rc}")
    out = work / "out"
    main(["evaluate", "--generations", str(out / "generations.csv"),
          "--scores", str(out / "scores.csv"), "--out", str(out / "metrics.json")])
    return {"timings_s": timings, "metrics": json.loads((out / "metrics.json").read_text())}


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, default=Path("e2e_run"))
    ap.add_argument("--n-records", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(json.dumps(run(args.work, args.n_records, args.seed), indent=2))
