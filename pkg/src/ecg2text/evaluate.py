"""Report decoding, zero-shot detection and evaluation metrics."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset_io import CLASSES, EOS, Vocab, detokenize, tokenize
from .errors import UndefinedSimilarity
from .nn_core.encoder import ConvHead
from .nn_core.tensor import Tensor
from .text_embed import EmbeddingProvider, embed_report, vocab_logits

DEFAULT_DESCRIPTIONS = {
    "NORM": "normal ecg",
    "MI": "myocardial infarction",
    "STTC": "st t change",
    "CD": "conduction disturbance block",
    "HYP": "left ventricular hypertrophy",
}


@dataclass
class GenerationResult:
    record_id: str
    tokens: list[int]
    text: str
    reference: str = ""


def greedy_decode(L, provider: EmbeddingProvider, vocab: Vocab, m_max: int | None = None,
                  head: ConvHead | None = None, record_id: str = "",
                  reference: str = "") -> GenerationResult:
    """Per-slot argmax over vocabulary scores, stopping at EOS.

    Scores are the tied logits, passed through ``head`` when given. Ties go
    to the smallest id.
    """
    L = L if isinstance(L, Tensor) else Tensor(np.asarray(L, dtype=np.float64))
    if L.ndim == 2:
        L = Tensor(L.data[None])
    logits = vocab_logits(L, provider)
    if head is not None:
        logits = head.logits(logits)
    scores = logits.data[0]
    m_max = scores.shape[0] if m_max is None else min(m_max, scores.shape[0])
    tokens = []
    for i in range(m_max):
        tok = int(np.argmax(scores[i]))  # first maximum = smallest id
        tokens.append(tok)
        if tok == EOS:
            break
    return GenerationResult(record_id, tokens, detokenize(tokens, vocab), reference)


def class_prototypes(provider: EmbeddingProvider, vocab: Vocab,
                     descriptions: Mapping[str, str] | None = None,
                     m_max: int = 16) -> dict[str, np.ndarray]:
    descriptions = descriptions or DEFAULT_DESCRIPTIONS
    missing = set(CLASSES) - set(descriptions)
    if missing:
        raise ValueError(f"no description for classes {sorted(missing)}")
    return {c: embed_report(tokenize(descriptions[c], vocab, m_max), provider).mean(axis=0)
            for c in CLASSES}


def _cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0:
        raise UndefinedSimilarity("pooled embedding has zero norm")
    if nb == 0:
        raise UndefinedSimilarity("prototype has zero norm")
    return float(a @ b / (na * nb))


def zero_shot_classify(L, prototypes: Mapping[str, np.ndarray]):
    """Cosine similarity of the mean-pooled slots to each class prototype.

    Returns ``(label, scores)`` with scores ordered as ``CLASSES``. Ties go
    to the lexicographically smallest class name.
    """
    L = L.data if isinstance(L, Tensor) else np.asarray(L, dtype=np.float64)
    pooled = L.reshape(-1, L.shape[-1]).mean(axis=0)
    scores = np.array([_cosine(pooled, prototypes[c]) for c in CLASSES])
    best = scores.max()
    label = min(c for c, s in zip(CLASSES, scores) if s == best)
    return label, scores


def predict_labels(scores: np.ndarray) -> list[str]:
    out = []
    for row in np.asarray(scores):
        best = row.max()
        out.append(min(c for c, s in zip(CLASSES, row) if s == best))
    return out


# --- text metrics ------------------------------------------------------------

def _toks(x) -> list[str]:
    return x.split() if isinstance(x, str) else list(x)


def _bleu1_counts(cand, refs):
    cc = Counter(cand)
    max_ref = Counter()
    for r in refs:
        for t, c in Counter(r).items():
            max_ref[t] = max(max_ref[t], c)
    clipped = sum(min(c, max_ref[t]) for t, c in cc.items())
    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda n: (abs(n - c), n))
    return clipped, c, r


def bleu1(candidate, references) -> float:
    """Clipped unigram precision times the brevity penalty."""
    cand = _toks(candidate)
    refs = [_toks(r) for r in references]
    if not cand or not refs:
        return 0.0
    clipped, c, r = _bleu1_counts(cand, refs)
    return clipped / c * math.exp(min(0.0, 1.0 - r / c))


def corpus_bleu1(candidates, references_list) -> float:
    """Corpus-level BLEU-1: pooled clipped counts and lengths."""
    clipped = total = ref_len = 0
    for cand, refs in zip(candidates, references_list):
        cand = _toks(cand)
        refs = [_toks(r) for r in refs]
        if not refs:
            continue
        k, c, r = _bleu1_counts(cand, refs)
        clipped, total, ref_len = clipped + k, total + c, ref_len + r
    if total == 0:
        return 0.0
    return clipped / total * math.exp(min(0.0, 1.0 - ref_len / total))


def rouge1(candidate, reference) -> tuple[float, float, float]:
    cand, ref = _toks(candidate), _toks(reference)
    if not cand or not ref:
        return 0.0, 0.0, 0.0
    overlap = sum((Counter(cand) & Counter(ref)).values())
    p, r = overlap / len(cand), overlap / len(ref)
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def _chunks(pairs) -> int:
    pairs = sorted(pairs)
    n = 0
    prev = None
    for ci, ri in pairs:
        if prev is None or ci != prev[0] + 1 or ri != prev[1] + 1:
            n += 1
        prev = (ci, ri)
    return n


def _align(cand, ref, max_enumerate=5000):
    """Exact-match alignment with the fewest chunks.

    Enumerates occurrence assignments while that is cheap; otherwise pairs
    occurrences in order.
    """
    options = []
    for tok in sorted(set(cand) & set(ref)):
        cpos = [i for i, t in enumerate(cand) if t == tok]
        rpos = [j for j, t in enumerate(ref) if t == tok]
        k = min(len(cpos), len(rpos))
        choices = [list(zip(cs, rs))
                   for cs in itertools.combinations(cpos, k)
                   for rs in itertools.permutations(rpos, k)]
        options.append(choices)
    total = math.prod(len(o) for o in options) if options else 1
    if total <= max_enumerate:
        best = None
        for combo in itertools.product(*options):
            pairs = [p for part in combo for p in part]
            score = _chunks(pairs)
            if best is None or score < best[0]:
                best = (score, pairs)
        return best[1] if best else []
    pairs = []
    for tok in sorted(set(cand) & set(ref)):
        cpos = [i for i, t in enumerate(cand) if t == tok]
        rpos = [j for j, t in enumerate(ref) if t == tok]
        pairs += list(zip(cpos, rpos))
    return pairs


def meteor(candidate, reference, alpha: float = 0.9, beta: float = 3.0,
           gamma: float = 0.5) -> float:
    """Exact-match METEOR: recall-weighted F-mean times a fragmentation penalty."""
    cand, ref = _toks(candidate), _toks(reference)
    if not cand or not ref:
        return 0.0
    pairs = _align(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (_chunks(pairs) / m) ** beta
    return f_mean * (1 - penalty)


# --- classification metrics ----------------------------------------------------

def auc_mann_whitney(scores, positive) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, bool)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positives and negatives")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(s.size)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    r = np.empty(s.size)
    r[order] = ranks
    u = r[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def classification_metrics(scores, labels: Sequence[frozenset | set | str]):
    """Accuracy (argmax in label set), macro F1 and macro one-vs-rest AUC.

    Classes whose AUC is undefined are skipped from the macro mean and
    listed in the returned ``details["auc_skipped"]``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    label_sets = [frozenset([l]) if isinstance(l, str) else frozenset(l) for l in labels]
    preds = predict_labels(scores)
    acc = float(np.mean([p in ls for p, ls in zip(preds, label_sets)]))
    f1s, aucs, skipped = [], [], []
    for ci, c in enumerate(CLASSES):
        pos = np.array([c in ls for ls in label_sets])
        pred = np.array([p == c for p in preds])
        tp = int(np.sum(pos & pred))
        fp = int(np.sum(~pos & pred))
        fn = int(np.sum(pos & ~pred))
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0)
        if pos.all() or not pos.any():
            skipped.append(c)
        else:
            aucs.append(auc_mann_whitney(scores[:, ci], pos))
    auc = float(np.mean(aucs)) if aucs else float("nan")
    return acc, float(np.mean(f1s)), auc, {"per_class_f1": dict(zip(CLASSES, f1s)),
                                           "auc_skipped": skipped}


@dataclass
class MetricsReport:
    bleu1: float | None = None
    rouge1_p: float | None = None
    rouge1_r: float | None = None
    rouge1_f: float | None = None
    meteor: float | None = None
    accuracy: float | None = None
    aucroc_macro: float | None = None
    f1_macro: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def text_report(hypotheses: Sequence[str], references: Sequence[Sequence[str]]) -> MetricsReport:
    """Corpus BLEU-1 over all references; sentence ROUGE-1 / METEOR against the first."""
    rouge = np.array([rouge1(h, refs[0]) for h, refs in zip(hypotheses, references)])
    met = [meteor(h, refs[0]) for h, refs in zip(hypotheses, references)]
    return MetricsReport(
        bleu1=corpus_bleu1(hypotheses, references),
        rouge1_p=float(rouge[:, 0].mean()), rouge1_r=float(rouge[:, 1].mean()),
        rouge1_f=float(rouge[:, 2].mean()), meteor=float(np.mean(met)))
