"""Frozen language-embedding providers.

A provider owns a frozen token-embedding table (row ``i`` = vocab id ``i``)
and maps encoder outputs ``X`` (batch, positions, d_model) into ``m``
language-embedding slots ``L`` (batch, m, d_emb).

``StandIn`` generates the table and one frozen transformer layer from a
seed. ``FileBacked`` reads precomputed embeddings from an ``EMB1`` file.
Either way only the projection and pooling weights are learned.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .nn_core import tensor as T
from .nn_core.encoder import _glorot, attention, encoder_layer, init_layer
from .nn_core.tensor import Tensor

MAGIC = b"EMB1"


def write_embedding_file(path: str | Path, table: np.ndarray) -> None:
    table = np.ascontiguousarray(table, dtype="<f4")
    if table.ndim != 2:
        raise ValueError("embedding table must be 2-D")
    rows, dim = table.shape
    with Path(path).open("wb") as fh:
        fh.write(MAGIC + struct.pack("<II", rows, dim))
        fh.write(table.tobytes())


def read_embedding_file(path: str | Path) -> np.ndarray:
    """Memory-map an ``EMB1`` file as a read-only (rows, dim) float32 array."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != MAGIC:
        raise ValueError(f"{path} is not an EMB1 file")
    rows, dim = struct.unpack("<II", head[4:])
    size = path.stat().st_size
    if size != 12 + 4 * rows * dim:
        raise ValueError(f"{path}: expected {12 + 4 * rows * dim} bytes, found {size}")
    return np.memmap(path, dtype="<f4", mode="r", offset=12, shape=(rows, dim))


class EmbeddingProvider:
    """Common mapping: learned projection -> [frozen layer] -> learned slot pooling."""

    frozen_heads = 4

    def __init__(self, table, d_model: int, n_slots: int, seed: int = 0):
        self.table = table
        self.d_emb = int(table.shape[1])
        self.d_model = d_model
        self.n_slots = n_slots
        rng = np.random.default_rng(seed)
        d = self.d_emb
        self.learned = {
            "map.proj_w": Tensor(_glorot(rng, d_model, d), requires_grad=True, name="map.proj_w"),
            "map.proj_b": Tensor(np.zeros(d), requires_grad=True, name="map.proj_b"),
            "map.queries": Tensor(rng.normal(size=(n_slots, d)), requires_grad=True,
                                  name="map.queries"),
            "map.pool_wk": Tensor(_glorot(rng, d, d), requires_grad=True, name="map.pool_wk"),
            "map.pool_wv": Tensor(_glorot(rng, d, d), requires_grad=True, name="map.pool_wv"),
            "map.slot_b": Tensor(np.zeros((n_slots, d)), requires_grad=True, name="map.slot_b"),
        }

    @property
    def vocab_size(self) -> int:
        return int(self.table.shape[0])

    def params(self) -> dict[str, Tensor]:
        return dict(self.learned)

    def frozen_arrays(self) -> dict[str, np.ndarray]:
        return {"table": np.asarray(self.table)}

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in sorted(self.frozen_arrays().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def table_f64(self) -> np.ndarray:
        return np.asarray(self.table, dtype=np.float64)

    def _frozen(self, h: Tensor) -> Tensor:
        return h

    def map(self, X: Tensor, m: int | None = None) -> Tensor:
        m = self.n_slots if m is None else m
        if not 1 <= m <= self.n_slots:
            raise ValueError(f"m must be in 1..{self.n_slots}")
        if X.shape[-1] != self.d_model:
            raise ValueError(f"mapper expects width {self.d_model}, got {X.shape[-1]}")
        p = self.learned
        h = self._frozen(T.linear(X, p["map.proj_w"], p["map.proj_b"]))
        q = T.index_rows(p["map.queries"], np.arange(m))
        k = T.matmul(h, p["map.pool_wk"])
        v = T.matmul(h, p["map.pool_wv"])
        pooled = attention(q, k, v)
        return T.add(pooled, T.index_rows(p["map.slot_b"], np.arange(m)))


class StandIn(EmbeddingProvider):
    """Seeded random table plus one frozen random transformer layer."""

    def __init__(self, vocab_size: int, d_model: int, n_slots: int, d_emb: int = 32,
                 seed: int = 0, learned_seed: int | None = None):
        frozen_rng = np.random.default_rng(seed)
        table = frozen_rng.normal(size=(vocab_size, d_emb))
        table.setflags(write=False)
        self.frozen_seed = seed
        self.layer = init_layer(frozen_rng, d_emb, 2 * d_emb, prefix="frozen.",
                                requires_grad=False)
        super().__init__(table, d_model, n_slots,
                         seed=seed + 1 if learned_seed is None else learned_seed)

    def frozen_arrays(self):
        out = {"table": self.table}
        out.update({k: v.data for k, v in self.layer.items()})
        return out

    def _frozen(self, h):
        return encoder_layer(h, self.layer, self.frozen_heads)


class FileBacked(EmbeddingProvider):
    """Table read from an ``EMB1`` file; learned mapper only."""

    def __init__(self, path: str | Path, d_model: int, n_slots: int, seed: int = 0):
        self.path = Path(path)
        super().__init__(read_embedding_file(self.path), d_model, n_slots, seed=seed)


def make_provider(vocab_size: int, d_model: int, n_slots: int, d_emb: int = 32,
                  seed: int = 0, embeddings: str | Path | None = None) -> EmbeddingProvider:
    if embeddings:
        prov = FileBacked(embeddings, d_model, n_slots, seed=seed)
        if prov.vocab_size < vocab_size:
            raise ValueError(f"embedding file has {prov.vocab_size} rows, vocab needs {vocab_size}")
        return prov
    return StandIn(vocab_size, d_model, n_slots, d_emb=d_emb, seed=seed)


def embed_report(tokens, provider: EmbeddingProvider) -> np.ndarray:
    """Ground-truth embeddings: one table row per token id."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= provider.vocab_size):
        raise IndexError("token id out of range for the embedding table")
    return provider.table_f64()[ids]


def llm_map(X: Tensor, provider: EmbeddingProvider, m: int | None = None) -> Tensor:
    return provider.map(X, m)


def vocab_logits(L: Tensor, provider: EmbeddingProvider) -> Tensor:
    """Tied-weight logits ``L @ table^T``."""
    if L.shape[-1] != provider.d_emb:
        raise ValueError(f"L width {L.shape[-1]} != embedding width {provider.d_emb}")
    return T.matmul(L, Tensor(provider.table_f64().T))
