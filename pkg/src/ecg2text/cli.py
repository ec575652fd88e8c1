"""Batch command line: ``ecg2text <command> [--config FILE] [flags]``.

Commands run one pipeline stage each and communicate through files in the
output folder::

    cache/<record_id>.npy   raw model inputs            (preprocess)
    summary.json, features.csv, failures.json            (preprocess)
    checkpoint.npz/.json, metrics.jsonl                  (train)
    generations.csv                                      (generate)
    scores.csv                                           (detect)
    metrics.json                                         (evaluate)

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
fault.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import synth as synth_mod
from .config import PipelineConfig, load_config, require_paths
from .dataset_io import CLASSES, build_vocab, load_manifest, pad_ids, read_record, tokenize
from .errors import ConfigError, EcgError, NumericalFault, UndefinedSimilarity
from .evaluate import (MetricsReport, bleu1, class_prototypes, classification_metrics,
                       greedy_decode, meteor, predict_labels, rouge1, text_report)
from .features import assemble_input, export_csv, fit_standardizer
from .preprocess import preprocess_record
from .text_embed import make_provider
from .trainer import EcgToText, detect_scores, fit, load_checkpoint, save_checkpoint, split

log = logging.getLogger("ecg2text")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class DataError(EcgError):
    """Missing or inconsistent upstream artifact."""


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _out(cfg: PipelineConfig) -> Path:
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_json(path: Path, what: str) -> dict:
    if not path.is_file():
        raise DataError(f"{what} not found: {path} (run the upstream command first)")
    return json.loads(path.read_text(encoding="utf-8"))


# --- preprocess ------------------------------------------------------------------

def cmd_preprocess(cfg: PipelineConfig) -> dict:
    """Per-record input vectors + summary; failures are listed, not fatal midway."""
    require_paths(cfg)
    out = _out(cfg)
    cache = out / "cache"
    cache.mkdir(exist_ok=True)
    entries = load_manifest(cfg.paths.manifest)
    layout = cfg.layout.layout()
    per_class = {c: {"records": 0, "beats": 0} for c in CLASSES}
    failures, ids, vectors = [], [], []
    for e in entries:
        try:
            rec = read_record(e.path)
            proc = preprocess_record(rec, cfg.preprocess)
            vec = assemble_input(proc.beats, rec.fs, layout, standardize=False)
        except (EcgError, ValueError, OSError) as exc:
            failures.append({"record_id": e.record_id, "error": type(exc).__name__,
                             "message": str(exc)})
            continue
        np.save(cache / f"{e.record_id}.npy", vec)
        ids.append(e.record_id)
        vectors.append(vec)
        for c in e.labels:
            per_class[c]["records"] += 1
            per_class[c]["beats"] += proc.meta["n_beats"]
    if vectors and layout.aggregate == "median":
        export_csv(out / "features.csv", ids, np.array(vectors), layout)
    summary = {"config_hash": cfg.config_hash(), "data_hash": cfg.data_hash(),
               "n_records": len(entries), "n_ok": len(ids), "n_failed": len(failures),
               "layout": layout.descriptor(), "input_dim": layout.dim,
               "per_class": per_class, "records": ids}
    (out / "summary.json").write_text(_dump(summary), encoding="utf-8")
    (out / "failures.json").write_text(_dump(failures), encoding="utf-8")
    if failures:
        raise DataError(f"{len(failures)} record(s) failed; see {out / 'failures.json'}")
    return summary


# --- train -------------------------------------------------------------------------

def _dataset(cfg: PipelineConfig):
    """Cached inputs aligned with manifest entries; checks the cache matches the config."""
    out = Path(cfg.paths.out_dir)
    summary = _read_json(out / "summary.json", "preprocess summary")
    if summary["data_hash"] != cfg.data_hash():
        raise ConfigError("feature cache was built under different preprocess/layout "
                          "settings; rerun preprocess")
    entries = {e.record_id: e for e in load_manifest(cfg.paths.manifest, check_files=False)}
    ids = [r for r in summary["records"] if r in entries]
    if not ids:
        raise DataError("no preprocessed records")
    X = np.stack([np.load(out / "cache" / f"{r}.npy") for r in ids])
    return ids, [entries[r] for r in ids], X


def _provider(cfg: PipelineConfig):
    def factory(vocab_size, d_model, m_max):
        return make_provider(vocab_size, d_model, m_max, d_emb=cfg.eval.d_emb,
                             seed=cfg.seed, embeddings=cfg.paths.embeddings)
    return factory


def cmd_train(cfg: PipelineConfig) -> dict:
    require_paths(cfg)
    out = _out(cfg)
    ids, entries, X = _dataset(cfg)
    labels = [e.labels for e in entries]
    tr, va, te = split(labels, cfg.train.split_ratios, cfg.seed)
    mean, std = fit_standardizer(X[tr])
    Z = (X - mean) / std
    vocab = build_vocab([entries[i].report for i in tr], cfg.eval.min_freq)
    m = cfg.eval.m_max
    targets = np.stack([pad_ids(tokenize(e.report, vocab, m), m) for e in entries])
    provider = _provider(cfg)(len(vocab), cfg.train.d_model, m)
    model = EcgToText(cfg.train, X.shape[1], provider, vocab, m)
    res = fit(model, Z[tr], targets[tr], Z[va], targets[va], [labels[i] for i in va],
              cfg.eval.descriptions, log_path=out / "metrics.jsonl")
    if res.checksum_before != res.checksum_after:
        raise NumericalFault("frozen provider changed during training")
    extra = {"standardizer": {"mean": mean.tolist(), "std": std.tolist()},
             "split": {"train": [ids[i] for i in tr], "val": [ids[i] for i in va],
                       "test": [ids[i] for i in te]},
             "data_hash": cfg.data_hash()}
    save_checkpoint(out / "checkpoint", model, res.optimizer, cfg.config_hash(), extra)
    last = res.log[-1]
    return {"config_hash": cfg.config_hash(), "epochs": len(res.log),
            "first_total": res.log[0]["train_total"], "last_total": last["train_total"],
            "provider_checksum": res.checksum_after}


# --- generate / detect --------------------------------------------------------------------

def _restore(cfg: PipelineConfig, checkpoint: str | None):
    path = Path(checkpoint) if checkpoint else Path(cfg.paths.out_dir) / "checkpoint"
    if not path.with_suffix(".json").is_file():
        raise DataError(f"checkpoint not found: {path}")
    model, _, meta = load_checkpoint(path, _provider(cfg), expected_hash=cfg.config_hash())
    return model, meta


def _records(cfg: PipelineConfig, meta: dict, subset: str):
    ids, entries, X = _dataset(cfg)
    by_id = dict(zip(ids, range(len(ids))))
    chosen = ids if subset == "all" else meta["split"][subset]
    missing = [r for r in chosen if r not in by_id]
    if missing:
        raise DataError(f"records missing from the cache: {missing[:5]}")
    rows = [by_id[r] for r in chosen]
    std = meta["standardizer"]
    Z = (X[rows] - np.array(std["mean"])) / np.array(std["std"])
    return chosen, [entries[i] for i in rows], Z


def cmd_generate(cfg: PipelineConfig, checkpoint: str | None = None,
                 subset: str = "test") -> Path:
    require_paths(cfg)
    model, meta = _restore(cfg, checkpoint)
    ids, entries, Z = _records(cfg, meta, subset)
    L = model.embed(Z).data
    path = _out(cfg) / "generations.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "labels", "reference", "hypothesis",
                    "bleu1", "rouge1_f", "meteor", "config_hash"])
        for rid, e, Li in zip(ids, entries, L):
            hyp = greedy_decode(Li, model.provider, model.vocab, model.m_max,
                                head=model.head, record_id=rid, reference=e.report).text
            w.writerow([rid, ";".join(sorted(e.labels, key=CLASSES.index)), e.report, hyp,
                        repr(bleu1(hyp, [e.report])), repr(rouge1(hyp, e.report)[2]),
                        repr(meteor(hyp, e.report)), cfg.config_hash()])
    return path


def cmd_detect(cfg: PipelineConfig, checkpoint: str | None = None,
               subset: str = "test") -> Path:
    require_paths(cfg)
    model, meta = _restore(cfg, checkpoint)
    ids, entries, Z = _records(cfg, meta, subset)
    protos = class_prototypes(model.provider, model.vocab, cfg.eval.descriptions, model.m_max)
    scores = detect_scores(model, Z, protos)
    path = _out(cfg) / "scores.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "labels", *CLASSES, "predicted", "config_hash"])
        for rid, e, row, pred in zip(ids, entries, scores, predict_labels(scores)):
            w.writerow([rid, ";".join(sorted(e.labels, key=CLASSES.index)),
                        *(repr(float(s)) for s in row), pred, cfg.config_hash()])
    return path


# --- evaluate ----------------------------------------------------------------------------

def _read_csv(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _read_lines(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    return path.read_text(encoding="utf-8").splitlines()


def cmd_evaluate(generations=None, scores=None, hypotheses=None, references=None,
                 out: str | Path | None = None) -> MetricsReport:
    """Metrics from a generations CSV, a scores CSV, or line-aligned text files."""
    report = MetricsReport()
    if hypotheses or references:
        if not (hypotheses and references):
            raise ConfigError("--hyp and --ref go together")
        hyps, refs = _read_lines(hypotheses), _read_lines(references)
        if len(hyps) != len(refs):
            raise DataError(f"{len(hyps)} hypotheses vs {len(refs)} references")
        report = text_report(hyps, [[r] for r in refs])
    elif generations:
        rows = _read_csv(generations)
        report = text_report([r["hypothesis"] for r in rows], [[r["reference"]] for r in rows])
    if scores:
        rows = _read_csv(scores)
        S = np.array([[float(r[c]) for c in CLASSES] for r in rows])
        labels = [frozenset(r["labels"].split(";")) for r in rows]
        acc, f1, auc, _ = classification_metrics(S, labels)
        report.accuracy, report.f1_macro, report.aucroc_macro = acc, f1, auc
    if not report.to_dict():
        raise ConfigError("evaluate needs --generations, --scores or --hyp/--ref")
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(_dump(report.to_dict()), encoding="utf-8")
    return report


# --- argument parsing ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ecg2text", description="ECG-to-report pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, checkpoint=False):
        sp.add_argument("--config", help="pipeline JSON config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--embeddings", help="EMB1 embedding file (replaces the stand-in)")
        sp.add_argument("--out", help="output folder (overrides paths.out_dir)")
        if checkpoint:
            sp.add_argument("--checkpoint", help="checkpoint path without suffix")
            sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))

    common(sub.add_parser("preprocess", help="filter, detect beats, cache model inputs"))
    common(sub.add_parser("train", help="fit the model on the cached inputs"))
    common(sub.add_parser("generate", help="write generated reports"), checkpoint=True)
    common(sub.add_parser("detect", help="write zero-shot class scores"), checkpoint=True)

    ev = sub.add_parser("evaluate", help="compute a metrics report")
    ev.add_argument("--generations")
    ev.add_argument("--scores")
    ev.add_argument("--hyp", help="hypotheses, one per line")
    ev.add_argument("--ref", help="references, one per line")
    ev.add_argument("--out", help="metrics JSON path (default: print only)")

    sy = sub.add_parser("synth", help="emit the synthetic labelled corpus")
    sy.add_argument("--out", required=True)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--n-records", type=int, default=500)
    sy.add_argument("--snr-db", type=float, default=20.0)
    return p


def _run(args) -> None:
    if args.command == "synth":
        spec = synth_mod.SynthSpec(n_records=args.n_records, seed=args.seed, snr_db=args.snr_db)
        print(f"manifest {synth_mod.generate(spec, args.out)}")
        return
    if args.command == "evaluate":
        report = cmd_evaluate(args.generations, args.scores, args.hyp, args.ref, args.out)
        print(json.dumps(report.to_dict(), sort_keys=True))
        return
    cfg = load_config(args.config, seed=args.seed, embeddings=args.embeddings,
                      out_dir=args.out)
    print(f"config_hash {cfg.config_hash()}")
    if args.command == "preprocess":
        s = cmd_preprocess(cfg)
        print(f"preprocessed {s['n_ok']}/{s['n_records']} records")
    elif args.command == "train":
        s = cmd_train(cfg)
        print(f"trained {s['epochs']} epochs: loss {s['first_total']:.4f} -> "
              f"{s['last_total']:.4f}")
    elif args.command == "generate":
        print(f"wrote {cmd_generate(cfg, args.checkpoint, args.split)}")
    elif args.command == "detect":
        print(f"wrote {cmd_detect(cfg, args.checkpoint, args.split)}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFault, UndefinedSimilarity, FloatingPointError) as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EcgError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
