"""Transformer encoder stack and the convolutional softmax head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalFault
from . import tensor as T
from .tensor import Tensor


def positional_encoding(n_pos: int, d_model: int) -> np.ndarray:
    if d_model < 2 or d_model % 2:
        raise ValueError(f"d_model must be even and >= 2, got {d_model}")
    pos = np.arange(n_pos)[:, None]
    i2 = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.empty((n_pos, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError("Q and K must share d_k")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("K and V must share positions")
    scores = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / np.sqrt(q.shape[-1]))
    return T.matmul(T.softmax(scores, axis=-1), v)


def _split_heads(x: Tensor, h: int) -> Tensor:
    b, p, d = x.shape
    return T.swapaxes(T.reshape(x, (b, p, h, d // h)), 1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, p, dk = x.shape
    return T.reshape(T.swapaxes(x, 1, 2), (b, p, h * dk))


def multi_head(x: Tensor, params: dict, h: int, kv: Tensor | None = None) -> Tensor:
    """Concat(head_1..head_h) W^O with head_i = Attention(x Wq_i, kv Wk_i, kv Wv_i).

    Per-head projections are stored side by side: ``wq`` is (d_model, h*d_k).
    ``x`` is (batch, positions, d_model).
    """
    d_model = x.shape[-1]
    if d_model % h:
        raise ValueError(f"d_model={d_model} not divisible by h={h}")
    kv = x if kv is None else kv
    q = _split_heads(T.matmul(x, params["wq"]), h)
    k = _split_heads(T.matmul(kv, params["wk"]), h)
    v = _split_heads(T.matmul(kv, params["wv"]), h)
    return T.matmul(_merge_heads(attention(q, k, v)), params["wo"])


def encoder_layer(x: Tensor, p: dict, h: int, dropout_p: float = 0.0,
                  rng: np.random.Generator | None = None, train: bool = False) -> Tensor:
    """Self-attention and feed-forward sub-layers, each ``LayerNorm(x + sublayer(x))``."""
    a = T.dropout(multi_head(x, p, h), dropout_p, rng, train)
    x = T.layer_norm(T.add(x, a), p["ln1_g"], p["ln1_b"])
    f = T.linear(T.relu(T.linear(x, p["w1"], p["b1"])), p["w2"], p["b2"])
    f = T.dropout(f, dropout_p, rng, train)
    return T.layer_norm(T.add(x, f), p["ln2_g"], p["ln2_b"])


def _glorot(rng, fan_in, fan_out, shape=None):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


def init_layer(rng: np.random.Generator, d_model: int, d_ff: int, prefix: str = "",
               requires_grad: bool = True) -> dict[str, Tensor]:
    def t(name, arr):
        return Tensor(arr, requires_grad=requires_grad, name=prefix + name)

    return {
        "wq": t("wq", _glorot(rng, d_model, d_model)),
        "wk": t("wk", _glorot(rng, d_model, d_model)),
        "wv": t("wv", _glorot(rng, d_model, d_model)),
        "wo": t("wo", _glorot(rng, d_model, d_model)),
        "ln1_g": t("ln1_g", np.ones(d_model)), "ln1_b": t("ln1_b", np.zeros(d_model)),
        "w1": t("w1", _glorot(rng, d_model, d_ff)), "b1": t("b1", np.zeros(d_ff)),
        "w2": t("w2", _glorot(rng, d_ff, d_model)), "b2": t("b2", np.zeros(d_model)),
        "ln2_g": t("ln2_g", np.ones(d_model)), "ln2_b": t("ln2_b", np.zeros(d_model)),
    }


def check_finite(x: Tensor, layer) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NumericalFault(f"non-finite activations at layer {layer}", layer=layer)
    return x


@dataclass
class EncoderConfig:
    input_dim: int = 864
    n_positions: int = 16
    d_model: int = 40
    n_layers: int = 5
    n_heads: int = 5
    d_ff: int = 128
    dropout: float = 0.3

    def __post_init__(self):
        if self.input_dim % self.n_positions:
            raise ValueError("input_dim must split evenly into n_positions")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_layers < 0 or self.n_heads < 1:
            raise ValueError("bad layer/head counts")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def channels(self) -> int:
        return self.input_dim // self.n_positions


class Encoder:
    """Feature embedding + positional encoding + ``n_layers`` encoder layers.

    Inputs of width ``input_dim`` are reshaped to ``n_positions`` x
    ``channels`` and projected to ``d_model`` per position.
    """

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c, d = cfg.channels, cfg.d_model
        self.embed_w = Tensor(_glorot(rng, c, d), requires_grad=True, name="embed.w")
        self.embed_b = Tensor(np.zeros(d), requires_grad=True, name="embed.b")
        self.layers = [init_layer(rng, d, cfg.d_ff, prefix=f"layer{i}.")
                       for i in range(cfg.n_layers)]
        self.pe = positional_encoding(cfg.n_positions, d)

    def params(self) -> dict[str, Tensor]:
        out = {"embed.w": self.embed_w, "embed.b": self.embed_b}
        for i, layer in enumerate(self.layers):
            out.update({f"layer{i}.{k}": v for k, v in layer.items()})
        return out

    def embed(self, inputs) -> Tensor:
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        if x.shape[-1] != self.cfg.input_dim:
            raise ValueError(f"expected inputs of width {self.cfg.input_dim}, got {x.shape[-1]}")
        x = Tensor(x.reshape(x.shape[0], self.cfg.n_positions, self.cfg.channels))
        return T.add(T.linear(x, self.embed_w, self.embed_b), self.pe)

    def __call__(self, inputs, train: bool = False, rng: np.random.Generator | None = None,
                 dropout_p: float | None = None) -> Tensor:
        p = self.cfg.dropout if dropout_p is None else dropout_p
        x = check_finite(T.dropout(self.embed(inputs), p, rng, train), "embed")
        for i, layer in enumerate(self.layers):
            x = check_finite(encoder_layer(x, layer, self.cfg.n_heads, p, rng, train), i)
        return x


def encoder_forward(inputs, encoder: Encoder, dropout_p: float | None = None,
                    train_mode: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    return encoder(inputs, train=train_mode, rng=rng, dropout_p=dropout_p)


class ConvHead:
    """1-D convolution over positions followed by a row softmax.

    Initialised to the identity map on logits (centre tap = I).
    """

    def __init__(self, vocab_size: int, kernel: int = 1, identity_init: bool = True):
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if vocab_size < 2:
            raise ValueError("vocab size must be >= 2")
        w = np.zeros((kernel, vocab_size, vocab_size))
        if identity_init:
            w[kernel // 2] = np.eye(vocab_size)
        self.w = Tensor(w, requires_grad=True, name="head.w")
        self.b = Tensor(np.zeros(vocab_size), requires_grad=True, name="head.b")

    def params(self) -> dict[str, Tensor]:
        return {"head.w": self.w, "head.b": self.b}

    def logits(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.w, self.b)

    def __call__(self, x: Tensor) -> Tensor:
        return T.softmax(self.logits(x), axis=-1)


def conv_softmax_head(x: Tensor, head: ConvHead) -> Tensor:
    return head(x)
