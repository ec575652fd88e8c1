"""Record parsing, manifests and report tokenization.

Records use a small WFDB-style subset: a text header plus a format-16 signal
file (little-endian int16, frame interleaved, single segment).

Header layout::

    <record_id> <n_leads> <fs> <n_samples>
    <lead_name> <gain_lsb_per_mv>      # x12
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateRecord, ManifestError, RecordFormatError, UnknownLabel

LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
CLASSES = ("NORM", "MI", "STTC", "CD", "HYP")
N_LEADS = 12

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


@dataclass
class EcgRecord:
    record_id: str
    leads: np.ndarray  # (12, n_samples), millivolts
    fs: float
    lead_names: tuple[str, ...] = LEAD_NAMES
    gains: tuple[float, ...] = (1000.0,) * N_LEADS
    labels: frozenset[str] = frozenset()
    report: str = ""

    def __post_init__(self):
        self.leads = np.asarray(self.leads, dtype=np.float64)
        if self.leads.ndim != 2 or self.leads.shape[0] != N_LEADS:
            raise RecordFormatError(f"expected 12 leads, got shape {self.leads.shape}")
        if not self.fs > 0:
            raise RecordFormatError(f"fs must be positive, got {self.fs}")
        if not np.all(np.isfinite(self.leads)):
            raise RecordFormatError("non-finite sample values")
        if len(self.lead_names) != N_LEADS or len(self.gains) != N_LEADS:
            raise RecordFormatError("lead names / gains must have 12 entries")

    @property
    def n_samples(self) -> int:
        return self.leads.shape[1]

    def lead(self, name: str) -> np.ndarray:
        return self.leads[self.lead_names.index(name)]


def _fmt_number(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def parse_header(header_text: str):
    lines = [ln for ln in header_text.splitlines() if ln.strip()]
    if not lines:
        raise RecordFormatError("empty header")
    head = lines[0].split()
    if len(head) != 4:
        raise RecordFormatError(f"bad header line: {lines[0]!r}")
    record_id = head[0]
    try:
        n_leads, fs, n_samples = int(head[1]), float(head[2]), int(head[3])
    except ValueError as exc:
        raise RecordFormatError(f"bad header line: {lines[0]!r}") from exc
    if n_leads != N_LEADS:
        raise RecordFormatError(f"expected 12 channels, header declares {n_leads}")
    if not fs > 0:
        raise RecordFormatError(f"fs must be positive, got {fs}")
    if n_samples < 0:
        raise RecordFormatError("negative sample count")
    if len(lines) != 1 + n_leads:
        raise RecordFormatError(f"expected {n_leads} lead lines, got {len(lines) - 1}")
    names, gains = [], []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise RecordFormatError(f"bad lead line: {ln!r}")
        gain = float(parts[1])
        if not gain > 0:
            raise RecordFormatError(f"gain must be positive on lead {parts[0]}")
        names.append(parts[0])
        gains.append(gain)
    return record_id, fs, n_samples, tuple(names), tuple(gains)


def parse_record(header_text: str, signal_bytes: bytes) -> EcgRecord:
    """Decode a header and its format-16 signal into an :class:`EcgRecord`.

    Voltages are ``raw / gain`` in mV, leads kept in header order.
    """
    record_id, fs, n_samples, names, gains = parse_header(header_text)
    expected = 2 * N_LEADS * n_samples
    if len(signal_bytes) != expected:
        raise RecordFormatError(
            f"signal has {len(signal_bytes)} bytes, header implies {expected}")
    raw = np.frombuffer(signal_bytes, dtype="<i2").reshape(n_samples, N_LEADS)
    leads = raw.T.astype(np.float64) / np.asarray(gains)[:, None]
    return EcgRecord(record_id, leads, fs, names, gains)


def write_record(record: EcgRecord) -> tuple[str, bytes]:
    lines = [f"{record.record_id} {N_LEADS} {_fmt_number(record.fs)} {record.n_samples}"]
    lines += [f"{n} {_fmt_number(g)}" for n, g in zip(record.lead_names, record.gains)]
    raw = np.rint(record.leads * np.asarray(record.gains)[:, None])
    if raw.size and (raw.min() < -32768 or raw.max() > 32767):
        raise RecordFormatError("samples overflow int16 at the declared gain")
    data = raw.T.astype("<i2").tobytes()
    return "\n".join(lines) + "\n", data


def read_record(path: str | Path) -> EcgRecord:
    """Read ``<path>.hea`` / ``<path>.dat``."""
    path = Path(path)
    header = path.with_name(path.name + ".hea").read_text(encoding="utf-8")
    data = path.with_name(path.name + ".dat").read_bytes()
    return parse_record(header, data)


def save_record(record: EcgRecord, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header, data = write_record(record)
    path.with_name(path.name + ".hea").write_text(header, encoding="utf-8")
    path.with_name(path.name + ".dat").write_bytes(data)


# --- manifests -------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    record_id: str
    path: Path
    labels: frozenset[str]
    report: str


def parse_labels(text: str) -> frozenset[str]:
    labels = frozenset(t.strip() for t in text.split(";") if t.strip())
    unknown = labels - set(CLASSES)
    if unknown:
        raise UnknownLabel(f"unknown label(s): {sorted(unknown)}")
    return labels


def load_manifest(path: str | Path, check_files: bool = True) -> list[ManifestEntry]:
    """Read a manifest CSV with columns record_id, path, labels, report.

    Record paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    entries, seen = [], set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"record_id", "path", "labels", "report"} - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"manifest missing columns {sorted(missing)}")
        for row in reader:
            rid = row["record_id"]
            if rid in seen:
                raise DuplicateRecord(f"duplicate record_id {rid!r}")
            seen.add(rid)
            rec_path = path.parent / row["path"]
            if check_files and not rec_path.with_name(rec_path.name + ".hea").exists():
                raise ManifestError(f"missing record file for {rid!r}: {rec_path}")
            entries.append(ManifestEntry(rid, rec_path, parse_labels(row["labels"]),
                                         row["report"] or ""))
    return entries


def write_manifest(path: str | Path, rows: Iterable[tuple[str, str, Iterable[str], str]]) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "path", "labels", "report"])
        for rid, rel, labels, report in rows:
            w.writerow([rid, rel, ";".join(labels), report])


# --- vocabulary ------------------------------------------------------------

def split_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocab:
    itos: tuple[str, ...]
    stoi: dict = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        if tuple(self.itos[:4]) != SPECIALS:
            raise ValueError("specials must occupy ids 0-3")
        object.__setattr__(self, "stoi", {t: i for i, t in enumerate(self.itos)})

    def __len__(self):
        return len(self.itos)

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    @property
    def content_tokens(self) -> tuple[str, ...]:
        return self.itos[4:]

    def to_json(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_json(cls, tokens: Sequence[str]) -> "Vocab":
        return cls(tuple(tokens))


def build_vocab(corpus: Sequence[str], min_freq: int = 1) -> Vocab:
    """Frequency-ranked vocabulary; ties broken lexicographically."""
    if not corpus:
        raise ValueError("empty corpus")
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter(tok for text in corpus for tok in split_tokens(text))
    kept = sorted((t for t, c in counts.items() if c >= min_freq),
                  key=lambda t: (-counts[t], t))
    return Vocab(SPECIALS + tuple(kept))


def tokenize(text: str, vocab: Vocab, m_max: int) -> list[int]:
    """``[BOS] + ids + [EOS]``, truncated to ``m_max`` with EOS kept last."""
    if m_max < 3:
        raise ValueError("m_max must be >= 3")
    ids = [vocab.id(t) for t in split_tokens(text)][: m_max - 2]
    return [BOS, *ids, EOS]


def detokenize(ids: Iterable[int], vocab: Vocab) -> str:
    out = []
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i in (PAD, BOS, UNK):
            continue
        out.append(vocab.itos[i])
    return " ".join(out)


def pad_ids(ids: Sequence[int], length: int) -> np.ndarray:
    out = np.full(length, PAD, dtype=np.int64)
    out[: len(ids)] = ids[:length]
    return out
