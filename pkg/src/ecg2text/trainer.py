"""Model assembly, optimisation loop, splits and checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_io import CLASSES, PAD, Vocab
from .errors import ConfigHashMismatch, NumericalFault
from .evaluate import class_prototypes, zero_shot_classify
from .nn_core import tensor as T
from .nn_core.encoder import ConvHead, Encoder, EncoderConfig
from .nn_core.tensor import Tensor
from .ot_loss import OTSettings, ot_term
from .text_embed import EmbeddingProvider, embed_report, vocab_logits

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 50
    n_layers: int = 5
    n_heads: int = 5
    d_model: int = 40
    d_ff: int = 128
    n_positions: int = 16
    dropout: float = 0.3
    warmup_steps: int = 2000
    lr_scale: float = 1.0
    lambda_ot: float = 1.0
    clip_norm: float = 1.0
    adam_betas: tuple[float, float] = (0.9, 0.98)
    adam_eps: float = 1e-9
    head_kernel: int = 1
    ot: OTSettings = field(default_factory=OTSettings)
    seed: int = 0
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if isinstance(self.ot, dict):
            self.ot = OTSettings(**self.ot)
        self.adam_betas = tuple(self.adam_betas)
        self.split_ratios = tuple(self.split_ratios)
        for name in ("batch_size", "epochs", "n_layers", "n_heads", "d_model", "warmup_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9 or min(self.split_ratios) < 0:
            raise ValueError("split ratios must be nonnegative and sum to 1")
        if self.lambda_ot < 0 or self.lr_scale < 0:
            raise ValueError("lambda_ot and lr_scale must be >= 0")

    def encoder_config(self, input_dim: int) -> EncoderConfig:
        return EncoderConfig(input_dim=input_dim, n_positions=self.n_positions,
                             d_model=self.d_model, n_layers=self.n_layers,
                             n_heads=self.n_heads, d_ff=self.d_ff, dropout=self.dropout)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        d["split_ratios"] = list(self.split_ratios)
        return d


def lr_schedule(step: int, d_model: int, warmup: int) -> float:
    """Inverse-sqrt decay after a linear warmup."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


class Adam:
    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.98), eps=1e-9):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class EcgToText:
    """Encoder -> frozen-provider mapping -> tied logits -> conv head."""

    def __init__(self, cfg: TrainConfig, input_dim: int, provider: EmbeddingProvider,
                 vocab: Vocab, m_max: int):
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder_config(input_dim), seed=cfg.seed)
        self.provider = provider
        self.head = ConvHead(len(vocab), kernel=cfg.head_kernel)
        self.vocab = vocab
        self.m_max = m_max

    def params(self) -> dict[str, Tensor]:
        out = self.encoder.params()
        out.update(self.provider.params())
        out.update(self.head.params())
        return out

    def embed(self, inputs, train=False, rng=None) -> Tensor:
        X = self.encoder(inputs, train=train, rng=rng)
        return self.provider.map(X, self.m_max)

    def logits(self, L: Tensor) -> Tensor:
        return self.head.logits(vocab_logits(L, self.provider))

    def loss(self, inputs, targets, train=False, rng=None):
        """Returns (total, ce, ot) tensors for a batch of padded targets."""
        L = self.embed(inputs, train, rng)
        ce = T.cross_entropy(self.logits(L), targets, targets != PAD)
        gt = [embed_report(row[row != PAD], self.provider) for row in targets]
        ot, _ = ot_term(L, gt, self.cfg.ot)
        total = T.add(ce, T.mul(ot, self.cfg.lambda_ot))
        return total, ce, ot


def param_norms(params: dict[str, Tensor]) -> dict[str, float]:
    return {k: float(np.linalg.norm(p.data)) for k, p in params.items()}


def _batches(n, size):
    return [np.arange(i, min(n, i + size)) for i in range(0, n, size)]


def evaluate_loss(model: EcgToText, inputs, targets, batch_size=64) -> dict[str, float]:
    sums = np.zeros(3)
    for idx in _batches(len(inputs), batch_size):
        parts = model.loss(inputs[idx], targets[idx])
        sums += np.array([float(p.data) for p in parts]) * len(idx)
    total, ce, ot = sums / max(1, len(inputs))
    return {"total": total, "ce": ce, "ot": ot}


def detect_scores(model: EcgToText, inputs, prototypes, batch_size=64) -> np.ndarray:
    out = []
    for idx in _batches(len(inputs), batch_size):
        L = model.embed(inputs[idx]).data
        out += [zero_shot_classify(row, prototypes)[1] for row in L]
    return np.array(out)


@dataclass
class FitResult:
    model: EcgToText
    optimizer: Adam
    log: list[dict]
    checksum_before: str
    checksum_after: str


def fit(model: EcgToText, train_inputs, train_targets, val_inputs=None, val_targets=None,
        val_labels=None, descriptions=None, log_path: str | Path | None = None) -> FitResult:
    """Adam on the learnable parameters; one log row per epoch."""
    cfg = model.cfg
    n = len(train_inputs)
    if n == 0:
        raise ValueError("empty training split")
    params = model.params()
    opt = Adam(params, cfg.adam_betas, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    drop_rng = np.random.default_rng([cfg.seed, 1])
    checksum_before = model.provider.checksum()
    protos = class_prototypes(model.provider, model.vocab, descriptions, model.m_max)
    rows = []
    fh = Path(log_path).open("w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n)
            sums, n_batches = np.zeros(3), 0
            for idx in _batches(n, cfg.batch_size):
                batch = order[idx]
                for p in params.values():
                    p.zero_grad()
                total, ce, ot = model.loss(train_inputs[batch], train_targets[batch],
                                           train=True, rng=drop_rng)
                if not np.isfinite(total.data):
                    raise NumericalFault(
                        f"non-finite loss at step {opt.t + 1}; parameter norms: "
                        f"{json.dumps(param_norms(params))}", step=opt.t + 1)
                total.backward()
                clip_grad_norm(params, cfg.clip_norm)
                lr = cfg.lr_scale * lr_schedule(opt.t + 1, cfg.d_model, cfg.warmup_steps)
                opt.step(lr)
                sums += [float(total.data), float(ce.data), float(ot.data)]
                n_batches += 1
            mean = sums / n_batches
            row = {"epoch": epoch, "step": opt.t, "train_total": mean[0],
                   "train_ce": mean[1], "train_ot": mean[2]}
            if val_inputs is not None and len(val_inputs):
                v = evaluate_loss(model, val_inputs, val_targets)
                row.update({f"val_{k}": x for k, x in v.items()})
                if val_labels is not None:
                    from .evaluate import classification_metrics
                    acc = classification_metrics(detect_scores(model, val_inputs, protos),
                                                 val_labels)[0]
                    row["val_dd_accuracy"] = acc
            rows.append(row)
            log.info("epoch %d total %.4f ce %.4f ot %.4f", epoch, *mean)
            if fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    finally:
        if fh:
            fh.close()
    return FitResult(model, opt, rows, checksum_before, model.provider.checksum())


# --- splits --------------------------------------------------------------------

def _largest_remainder(n, ratios):
    exact = [n * r for r in ratios]
    counts = [int(np.floor(x)) for x in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split(labels: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Stratified partition by first label; returns three index arrays.

    Global split sizes follow largest-remainder rounding; each class lands
    within one record of its proportional share.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    first = [l if isinstance(l, str) else min(l, key=CLASSES.index) for l in labels]
    classes = [c for c in CLASSES if c in set(first)]
    by_class = {c: [i for i, f in enumerate(first) if f == c] for c in classes}
    for c, idx in by_class.items():
        if len(idx) < 3:
            raise ValueError(f"class {c} has {len(idx)} records; need >= 3")
    k = len(ratios)
    goal = _largest_remainder(len(first), ratios)
    quota = {c: [int(np.floor(len(by_class[c]) * r)) for r in ratios] for c in classes}
    remaining = [goal[s] - sum(quota[c][s] for c in classes) for s in range(k)]
    frac = {c: [len(by_class[c]) * r - quota[c][s] for s, r in enumerate(ratios)]
            for c in classes}
    for c in sorted(classes, key=lambda c: -(len(by_class[c]) - sum(quota[c]))):
        need = len(by_class[c]) - sum(quota[c])
        picks = sorted(range(k), key=lambda s: (-remaining[s], -frac[c][s], s))[:need]
        for s in picks:
            quota[c][s] += 1
            remaining[s] -= 1
    rng = np.random.default_rng(seed)
    parts = [[] for _ in range(k)]
    for c in classes:
        idx = np.array(by_class[c])[rng.permutation(len(by_class[c]))]
        start = 0
        for s in range(k):
            parts[s] += idx[start:start + quota[c][s]].tolist()
            start += quota[c][s]
    return tuple(np.array(sorted(p), dtype=int) for p in parts)


# --- checkpoints -----------------------------------------------------------------

def save_checkpoint(path: str | Path, model: EcgToText, optimizer: Adam | None,
                    config_hash: str, extra: dict | None = None) -> None:
    """``<path>.npz`` with named arrays plus a ``<path>.json`` sidecar."""
    path = Path(path)
    arrays = {f"param/{k}": p.data for k, p in model.params().items()}
    if optimizer is not None:
        arrays.update({f"adam_m/{k}": v for k, v in optimizer.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in optimizer.v.items()})
    with path.with_suffix(".npz").open("wb") as fh:
        np.savez(fh, **arrays)
    meta = {
        "config_hash": config_hash,
        "provider_checksum": model.provider.checksum(),
        "step": optimizer.t if optimizer else 0,
        "train_config": model.cfg.to_dict(),
        "input_dim": model.encoder.cfg.input_dim,
        "m_max": model.m_max,
        "vocab": model.vocab.to_json(),
    }
    meta.update(extra or {})
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_checkpoint_meta(path: str | Path) -> dict:
    return json.loads(Path(path).with_suffix(".json").read_text())


def load_checkpoint(path: str | Path, provider_factory, expected_hash: str | None = None):
    """Rebuild the model from a checkpoint; ``provider_factory(vocab_size, d_model, m_max)``."""
    meta = read_checkpoint_meta(path)
    if expected_hash is not None and meta["config_hash"] != expected_hash:
        raise ConfigHashMismatch(
            f"checkpoint config hash {meta['config_hash']} != current {expected_hash}")
    cfg = TrainConfig(**meta["train_config"])
    vocab = Vocab.from_json(meta["vocab"])
    provider = provider_factory(len(vocab), cfg.d_model, meta["m_max"])
    if provider.checksum() != meta["provider_checksum"]:
        raise ConfigHashMismatch("frozen provider checksum differs from the checkpoint")
    model = EcgToText(cfg, meta["input_dim"], provider, vocab, meta["m_max"])
    with np.load(Path(path).with_suffix(".npz")) as data:
        params = model.params()
        for k, p in params.items():
            p.data = data[f"param/{k}"].copy()
        opt = Adam(params, cfg.adam_betas, cfg.adam_eps)
        opt.t = meta["step"]
        for k in params:
            if f"adam_m/{k}" in data:
                opt.m[k] = data[f"adam_m/{k}"].copy()
                opt.v[k] = data[f"adam_v/{k}"].copy()
    return model, opt, meta
