"""Sequential (LSTM) and hierarchical (Transformer) encoders.

The hierarchical stage comes in three flavours:

* naive: one self-attention tower per modality, no interaction;
* modulated attention: acoustic queries attend to the encoded linguistic
  sequence (keys and values are swapped for ``x~``);
* modulated normalisation: a linear map of pooled ``x~`` shifts the scale and
  shift of every layer norm in the acoustic tower.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .layers import LayerNorm, Linear, Module, uniform_init
from .tensor import Tensor


# ---------------------------------------------------------------------------
# LSTM


class LstmParams(Module):
    """Gate order along the 4C axis is (input, forget, cell, output)."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.w_ih = uniform_init(rng, (n_in, 4 * hidden), n_in)
        self.w_hh = uniform_init(rng, (hidden, 4 * hidden), hidden)
        self.b_ih = uniform_init(rng, (4 * hidden,), hidden)
        self.b_hh = uniform_init(rng, (4 * hidden,), hidden)
        self.b_ih.data[hidden:2 * hidden] = 1.0
        self.b_hh.data[hidden:2 * hidden] = 0.0
        self.hidden = hidden

    def __call__(self, seq: Tensor) -> Tensor:
        return lstm_forward(seq, self)


def lstm_forward(seq: Tensor, params: LstmParams) -> Tensor:
    """Unidirectional LSTM from a zero state over ``[..., T, D]``; returns ``[..., T, C]``.

    Post-padded batches are fine: outputs at valid steps never see later steps.
    """
    x = seq.data
    w_ih, w_hh, b_ih, b_hh = params.w_ih, params.w_hh, params.b_ih, params.b_hh
    if x.shape[-1] != w_ih.shape[0]:
        raise T.ShapeError(f"lstm: input size {x.shape[-1]} does not match weights {w_ih.shape}")
    if x.shape[-2] < 1:
        raise T.ShapeError("lstm: sequence must have at least one step")
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    n, steps, _ = x.shape
    c_size = w_hh.shape[0]
    xw = x @ w_ih.data + b_ih.data + b_hh.data
    h = np.zeros((n, c_size))
    c = np.zeros((n, c_size))
    hs = np.empty((n, steps, c_size))
    cache = []
    for t in range(steps):
        z = xw[:, t] + h @ w_hh.data
        ifo = T._sigmoid(np.concatenate([z[:, :2 * c_size], z[:, 3 * c_size:]], axis=1))
        i, f, o = ifo[:, :c_size], ifo[:, c_size:2 * c_size], ifo[:, 2 * c_size:]
        g = np.tanh(z[:, 2 * c_size:3 * c_size])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        cache.append((i, f, g, o, c_prev, h_prev, tc))

    def backward(grad):
        gh_all = grad[None] if squeeze else grad
        dxw = np.empty((n, steps, 4 * c_size))
        dw_hh = np.zeros_like(w_hh.data)
        dh_next = np.zeros((n, c_size))
        dc_next = np.zeros((n, c_size))
        for t in reversed(range(steps)):
            i, f, g, o, c_prev, h_prev, tc = cache[t]
            dh = gh_all[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            dc_next = dc * f
            dw_hh += h_prev.T @ dz
            dh_next = dz @ w_hh.data.T
            dxw[:, t] = dz
        flat = dxw.reshape(-1, 4 * c_size)
        db = flat.sum(axis=0)
        T._accumulate(b_ih, db)
        T._accumulate(b_hh, db)
        T._accumulate(w_hh, dw_hh)
        if w_ih.requires_grad:
            T._accumulate(w_ih, x.reshape(-1, x.shape[-1]).T @ flat)
        if seq.requires_grad:
            dx = dxw @ w_ih.data.T
            T._accumulate(seq, dx[0] if squeeze else dx)

    out = hs[0] if squeeze else hs
    return T._record(out, (seq, w_ih, w_hh, b_ih, b_hh), backward, "lstm")


# ---------------------------------------------------------------------------
# attention


class MhaParams(Module):
    """Per-head Q/K/V projections stored side by side as ``[C, C]`` maps, plus ``W_o``."""

    def __init__(self, hidden: int, heads: int, rng: np.random.Generator):
        self.q = Linear(hidden, hidden, rng)
        self.k = Linear(hidden, hidden, rng)
        self.v = Linear(hidden, hidden, rng)
        self.o = Linear(hidden, hidden, rng)
        self.heads = heads


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, steps, c = x.shape
    return T.transpose(T.reshape(x, (n, steps, heads, c // heads)), (0, 2, 1, 3))


def mha(q: Tensor, k: Tensor, v: Tensor, key_mask, params: MhaParams, scale: str = "head",
        trace: list | None = None) -> Tensor:
    """Multi-head attention over ``[N, T, C]`` inputs.

    ``key_mask`` is a ``[N, T_k]`` bool array (True = attend) or None.
    ``scale="head"`` divides scores by ``sqrt(C / h)``; ``"model"`` by ``sqrt(C)``.
    Attention maps ``[N, h, T_q, T_k]`` are appended to ``trace`` if given.
    """
    c = q.shape[-1]
    h = params.heads
    if c % h:
        raise T.ShapeError(f"mha: C={c} is not divisible by {h} heads")
    if k.shape[-1] != c or v.shape[-1] != c:
        raise T.ShapeError(f"mha: feature sizes differ: q {q.shape}, k {k.shape}, v {v.shape}")
    n, tq, _ = q.shape
    qh = _split_heads(params.q(q), h)
    kh = _split_heads(params.k(k), h)
    vh = _split_heads(params.v(v), h)
    denom = math.sqrt(c / h) if scale == "head" else math.sqrt(c)
    scores = T.matmul(qh, T.swapaxes(kh, -1, -2)) * (1.0 / denom)
    mask = None
    if key_mask is not None:
        mask = np.asarray(key_mask, dtype=bool)[:, None, None, :]
    weights = T.softmax(scores, mask=mask)
    if trace is not None:
        trace.append(weights.data.copy())
    ctx = T.matmul(weights, vh)
    merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (n, tq, c))
    return params.o(merged)


class TransformerBlock(Module):
    """Attention sublayer then MLP sublayer, each ``LayerNorm(x + Sublayer(x))``."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.attn = MhaParams(cfg.hidden, cfg.heads, rng)
        self.norm1 = LayerNorm(cfg.hidden, cfg.norm_eps, cfg.norm_axis)
        self.fc1 = Linear(cfg.hidden, cfg.mlp_hidden, rng)
        self.fc2 = Linear(cfg.mlp_hidden, cfg.hidden, rng)
        self.norm2 = LayerNorm(cfg.hidden, cfg.norm_eps, cfg.norm_axis)
        self.dropout = cfg.dropout_block
        self.scale = cfg.attention_scale

    def __call__(self, x: Tensor, mask, *, memory: Tensor | None = None, memory_mask=None,
                 film=None, training: bool = False, rng=None, trace: list | None = None) -> Tensor:
        return transformer_block(x, mask, self, memory=memory, memory_mask=memory_mask,
                                 film=film, training=training, rng=rng, trace=trace)


def transformer_block(x: Tensor, mask, params: TransformerBlock, *, memory: Tensor | None = None,
                      memory_mask=None, film=None, training: bool = False, rng=None,
                      trace: list | None = None) -> Tensor:
    """One block over ``[N, T, C]``.

    ``memory`` (with ``memory_mask``) replaces keys and values for cross
    attention. ``film`` is ``((dg1, db1), (dg2, db2))`` for the two norms.
    """
    if memory is None:
        memory, memory_mask = x, mask
    (dg1, db1), (dg2, db2) = film if film is not None else ((None, None), (None, None))
    attended = mha(x, memory, memory, memory_mask, params.attn, params.scale, trace)
    u = params.norm1(T.add(x, attended), mask=mask, delta_gamma=dg1, delta_beta=db1)
    hidden = T.relu(params.fc1(u))
    out = params.norm2(T.add(u, params.fc2(hidden)), mask=mask, delta_gamma=dg2, delta_beta=db2)
    return T.dropout(out, params.dropout, training, rng)


def _run_tower(blocks, x, mask, training, rng, trace, memory=None, memory_mask=None, films=None):
    for b, block in enumerate(blocks):
        film = films[b] if films is not None else None
        x = block(x, mask, memory=memory, memory_mask=memory_mask, film=film,
                  training=training, rng=rng, trace=trace)
    return x


def encode_naive(x, y, masks, text_blocks, audio_blocks, training=False, rng=None, trace=None):
    """Independent self-attention towers; returns ``(x~, y~)``."""
    mx, my = masks
    xt = _run_tower(text_blocks, x, mx, training, rng, trace)
    yt = _run_tower(audio_blocks, y, my, training, rng, trace)
    return xt, yt


def encode_mat(x, y, masks, text_blocks, audio_blocks, training=False, rng=None, trace=None,
               source: str = "encoded"):
    """Acoustic blocks attend to the linguistic sequence with the text key mask."""
    mx, my = masks
    if x.shape[-1] != y.shape[-1]:
        raise T.ShapeError(f"modulated attention needs equal feature sizes, got {x.shape} and {y.shape}")
    xt = _run_tower(text_blocks, x, mx, training, rng, trace)
    memory = xt if source == "encoded" else x
    yt = _run_tower(audio_blocks, y, my, training, rng, trace, memory=memory, memory_mask=mx)
    return xt, yt


class FilmParams(Module):
    """Pooled ``x~`` (C) -> deltas for every (block, norm layer).

    Channel mode emits ``4 * C * B`` values; scalar mode emits ``4 * B``.
    """

    def __init__(self, hidden: int, blocks: int, rng: np.random.Generator, mode: str = "channel"):
        width = hidden if mode == "channel" else 1
        self.proj = Linear(hidden, 4 * width * blocks, rng)
        self.blocks = blocks
        self.width = width


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean over the time axis of ``[N, T, C]`` restricted to ``mask`` (``[N, T]``)."""
    m = np.asarray(mask, dtype=np.float64)
    counts = m.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise T.MaskError("masked_mean: a sequence has no valid steps")
    pooled = T.tsum(T.mul(x, m[..., None]), axis=1)
    return T.mul(pooled, 1.0 / counts)


def film_predict(xt: Tensor, mask, params: FilmParams):
    """``deltas[b][layer] = (d_gamma, d_beta)``, each ``[N, width]``."""
    pooled = masked_mean(xt, mask)
    raw = params.proj(pooled)
    n = raw.shape[0]
    w = params.width
    shaped = T.reshape(raw, (n, params.blocks, 2, 2, w))
    deltas = []
    for b in range(params.blocks):
        layers = []
        for layer in range(2):
            layers.append((shaped[:, b, layer, 0, :], shaped[:, b, layer, 1, :]))
        deltas.append(layers)
    return deltas


def encode_mnt(x, y, masks, text_blocks, audio_blocks, film: FilmParams, training=False, rng=None,
               trace=None, deltas=None):
    """Acoustic self-attention tower whose layer norms are shifted by FiLM deltas."""
    mx, my = masks
    xt = _run_tower(text_blocks, x, mx, training, rng, trace)
    if deltas is None:
        deltas = film_predict(xt, mx, film)
    yt = _run_tower(audio_blocks, y, my, training, rng, trace, films=deltas)
    return xt, yt


def sinusoidal_positions(steps: int, channels: int) -> np.ndarray:
    pos = np.arange(steps)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, channels, 2) / channels))
    enc = np.zeros((steps, channels))
    enc[:, 0::2] = np.sin(pos * rate)
    enc[:, 1::2] = np.cos(pos * rate[: channels // 2])
    return enc
