"""Attention-reduce, sum fusion, projection, and the end-to-end model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import EMBED_DIM, N_MELS, ModelConfig
from .encoders import (
    FilmParams,
    LstmParams,
    TransformerBlock,
    encode_mat,
    encode_mnt,
    encode_naive,
    sinusoidal_positions,
)
from .layers import LayerNorm, Linear, Module, uniform_init
from .tensor import Tensor
from .text import EmbeddingTable


class ReduceParams(Module):
    """Score map ``W_x`` (no bias) and attention vector ``v_a``."""

    def __init__(self, hidden: int, rng: np.random.Generator, attn_size: int | None = None):
        attn_size = attn_size or hidden
        self.w_x = Linear(hidden, attn_size, rng, bias=False)
        self.v_a = uniform_init(rng, (attn_size, 1), attn_size)


def attention_reduce(x: Tensor, mask, params: ReduceParams, return_weights: bool = False):
    """Collapse ``[N, T, C]`` to ``[N, C]`` by softmax(v_a . W_x x_t)-weighted sum.

    Masked steps get exactly zero weight.
    """
    n, steps, _ = x.shape
    scores = T.reshape(T.matmul(params.w_x(x), params.v_a), (n, 1, steps))
    m = None if mask is None else np.asarray(mask, dtype=bool)[:, None, :]
    weights = T.softmax(scores, mask=m)
    reduced = T.reshape(T.matmul(weights, x), (n, x.shape[-1]))
    if return_weights:
        return reduced, weights.data.reshape(n, steps)
    return reduced


class ProjectionParams(Module):
    def __init__(self, hidden: int, num_classes: int, rng: np.random.Generator, eps: float = 1e-5):
        self.norm = LayerNorm(hidden, eps, "feature")
        self.out = Linear(hidden, num_classes, rng)


def project(xbar: Tensor, ybar: Tensor, params: ProjectionParams, p_drop: float = 0.5,
            training: bool = False, rng=None) -> Tensor:
    """``W_p(LayerNorm(dropout(x + y)))`` -> class logits."""
    if xbar.shape != ybar.shape:
        raise T.ShapeError(f"project: {xbar.shape} vs {ybar.shape}")
    fused = T.dropout(T.add(xbar, ybar), p_drop, training, rng)
    return params.out(params.norm(fused))


@dataclass
class Batch:
    tokens: np.ndarray  # [N, T_x] int, pad = 0
    text_mask: np.ndarray  # [N, T_x] bool
    mel: np.ndarray  # [N, T_y, 80]
    audio_mask: np.ndarray  # [N, T_y] bool
    labels: np.ndarray | None = None  # [N] int

    def __len__(self) -> int:
        return self.tokens.shape[0]


class MultimodalModel(Module):
    """Embeddings + LSTMs -> variant encoder -> attention-reduce -> projection."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, rng: np.random.Generator,
                 embeddings: np.ndarray | None = None):
        self.cfg = cfg
        c = cfg.hidden
        self.embedding = EmbeddingTable(vocab_size, rng, trainable=cfg.train_embeddings, init=embeddings)
        self.text_lstm = LstmParams(EMBED_DIM, c, rng)
        self.audio_lstm = LstmParams(N_MELS, c, rng)
        if cfg.variant == "P":
            self.text_blocks, self.audio_blocks = [], []
        else:
            self.text_blocks = [TransformerBlock(cfg, rng) for _ in range(cfg.blocks)]
            self.audio_blocks = [TransformerBlock(cfg, rng) for _ in range(cfg.blocks)]
        self.film = FilmParams(c, cfg.blocks, rng, cfg.film_mode) if cfg.variant == "MNT" else None
        self.reduce_x = ReduceParams(c, rng)
        self.reduce_y = ReduceParams(c, rng)
        self.head = ProjectionParams(c, cfg.num_classes, rng, cfg.norm_eps)

    def features(self, batch: Batch) -> tuple[Tensor, Tensor]:
        """LSTM outputs ``(x, y)``, each ``[N, T, C]``."""
        x = self.text_lstm(self.embedding(batch.tokens))
        y = self.audio_lstm(Tensor(batch.mel))
        if self.cfg.positional:
            x = T.add(x, sinusoidal_positions(x.shape[1], x.shape[2]))
            y = T.add(y, sinusoidal_positions(y.shape[1], y.shape[2]))
        return x, y

    def encode(self, x, y, batch: Batch, training=False, rng=None, trace=None, deltas=None):
        masks = (batch.text_mask, batch.audio_mask)
        v = self.cfg.variant
        if v == "P":
            return x, y
        if v == "NT":
            return encode_naive(x, y, masks, self.text_blocks, self.audio_blocks, training, rng, trace)
        if v == "MAT":
            return encode_mat(x, y, masks, self.text_blocks, self.audio_blocks, training, rng, trace,
                              source=self.cfg.mat_source)
        return encode_mnt(x, y, masks, self.text_blocks, self.audio_blocks, self.film, training, rng,
                          trace, deltas=deltas)

    def __call__(self, batch: Batch, training: bool = False, rng=None, trace=None) -> Tensor:
        return forward(self, batch, training, rng, trace)


def forward(model: MultimodalModel, batch: Batch, training: bool = False, rng=None,
            trace: list | None = None) -> Tensor:
    """Logits ``[N, num_classes]``."""
    x, y = model.features(batch)
    xt, yt = model.encode(x, y, batch, training, rng, trace)
    xbar = attention_reduce(xt, batch.text_mask, model.reduce_x)
    ybar = attention_reduce(yt, batch.audio_mask, model.reduce_y)
    return project(xbar, ybar, model.head, model.cfg.dropout_proj, training, rng)


def probabilities(logits: Tensor) -> np.ndarray:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
