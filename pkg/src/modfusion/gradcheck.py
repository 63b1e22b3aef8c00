"""Autodiff vs. central finite differences for every op and every model variant.

All checks run in float64 with dropout disabled. Large parameter tensors are
spot-checked on a subset of entries: the largest-gradient positions plus a
random sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .data import Example, collate
from .encoders import LstmParams, MhaParams, TransformerBlock, film_predict, FilmParams, mha
from .fusion import MultimodalModel, ProjectionParams, ReduceParams, attention_reduce, project
from .tensor import Tensor

TOLERANCE = 1e-4
EPS = 1e-3


@dataclass
class GradResult:
    name: str
    error: float
    checked: int
    kink: bool = False

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _positions(grad: np.ndarray, max_entries: int | None, rng: np.random.Generator) -> np.ndarray:
    n = grad.size
    if max_entries is None or n <= max_entries:
        return np.arange(n)
    half = max_entries // 2
    top = np.argsort(-np.abs(grad.reshape(-1)), kind="stable")[:half]
    rest = rng.choice(n, size=max_entries - half, replace=False)
    return np.unique(np.concatenate([top, rest]))


def check(name: str, loss_fn: Callable[[], Tensor], inputs: Sequence[tuple[str, Tensor]],
          eps: float = EPS, max_entries: int | None = 24, seed: int = 0) -> list[GradResult]:
    """Compare ``backward(loss_fn())`` against finite differences for each input."""
    rng = np.random.default_rng(seed)
    for _, x in inputs:
        x.grad = None
    T.backward(loss_fn())
    analytic = {label: (x.grad.copy() if x.grad is not None else np.zeros_like(x.data)) for label, x in inputs}

    def f():
        with T.no_grad():
            return float(loss_fn().data)

    results = []
    for label, x in inputs:
        pos = _positions(analytic[label], max_entries, rng)
        a = analytic[label].reshape(-1)[pos]
        numeric = T.finite_difference_grad(f, x, eps, indices=pos).reshape(-1)[pos]
        err = T.relative_error(a, numeric)
        kink = False
        if err >= TOLERANCE:
            # a ReLU kink inside [x - eps, x + eps] shows up as disagreement
            # between step sizes; a genuine gradient bug does not
            fine = T.finite_difference_grad(f, x, eps / 10, indices=pos).reshape(-1)[pos]
            if T.relative_error(fine, numeric) >= TOLERANCE:
                kink = True
                err = T.relative_error(a, fine)
        results.append(GradResult(f"{name}:{label}", err, len(pos), kink))
    return results


def _rand(rng, *shape) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=True)


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    # a generic scalar read-out with non-uniform weights
    return T.tsum(T.mul(out, w))


def op_checks(seed: int = 0) -> list[GradResult]:
    rng = np.random.default_rng(seed)
    results: list[GradResult] = []

    a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
    w = rng.normal(size=(3, 2))
    results += check("matmul", lambda: _weighted_sum(T.matmul(a, b), w), [("a", a), ("b", b)])

    a3, b3 = _rand(rng, 2, 3, 4), _rand(rng, 4, 5)
    w3 = rng.normal(size=(2, 3, 5))
    results += check("matmul_batched", lambda: _weighted_sum(T.matmul(a3, b3), w3), [("a", a3), ("b", b3)])

    x, y = _rand(rng, 2, 3, 4), _rand(rng, 4)
    wx = rng.normal(size=(2, 3, 4))
    results += check("add_mul_broadcast", lambda: _weighted_sum(T.mul(T.add(x, y), x), wx), [("x", x), ("y", y)])

    s = _rand(rng, 3, 5)
    ws = rng.normal(size=(3, 5))
    mask = np.array([[1, 1, 0, 1, 0], [1, 1, 1, 1, 1], [0, 0, 1, 0, 0]], dtype=bool)
    results += check("softmax", lambda: _weighted_sum(T.softmax(s), ws), [("x", s)])
    results += check("softmax_masked", lambda: _weighted_sum(T.softmax(s, mask=mask), ws), [("x", s)])

    for fn in (T.tanh, T.sigmoid, T.relu):
        z = _rand(rng, 4, 3)
        wz = rng.normal(size=(4, 3))
        results += check(fn.__name__, lambda fn=fn, z=z, wz=wz: _weighted_sum(fn(z), wz), [("x", z)])

    ln_x, gamma, beta = _rand(rng, 2, 4, 6), _rand(rng, 6), _rand(rng, 6)
    wl = rng.normal(size=(2, 4, 6))
    tmask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=bool)
    for axis, m in (("feature", None), ("temporal", None), ("temporal", tmask)):
        label = axis + ("_masked" if m is not None else "")
        results += check(f"layer_norm_{label}",
                         lambda axis=axis, m=m: _weighted_sum(T.layer_norm(ln_x, gamma, beta, axis=axis, mask=m), wl),
                         [("x", ln_x), ("gamma", gamma), ("beta", beta)])

    table = _rand(rng, 5, 7)
    idx = np.array([[2, 0, 4], [4, 4, 1]])
    wt = rng.normal(size=(2, 3, 7))
    results += check("take_rows", lambda: _weighted_sum(T.take_rows(table, idx, padding_idx=0), wt),
                     [("table", table)])

    logits = _rand(rng, 4, 5)
    targets = np.array([0, 3, 1, 4])
    results += check("cross_entropy", lambda: T.cross_entropy(logits, targets), [("logits", logits)])

    r = _rand(rng, 2, 3, 4)
    wr = rng.normal(size=(2, 4))
    results += check("sum_mean_getitem_reshape",
                     lambda: _weighted_sum(T.reshape(T.mean(r[:, 1:, :], axis=1), (2, 4)), wr) + T.tsum(r[0]),
                     [("x", r)])

    p, q = _rand(rng, 2, 3), _rand(rng, 2, 2)
    wc = rng.normal(size=(2, 5))
    results += check("concat", lambda: _weighted_sum(T.concat([p, q], axis=1), wc), [("p", p), ("q", q)])
    return results


def layer_checks(seed: int = 0) -> list[GradResult]:
    rng = np.random.default_rng(seed)
    results: list[GradResult] = []
    params_rng = np.random.default_rng(seed + 1)

    lstm = LstmParams(5, 4, params_rng)
    seq = _rand(rng, 2, 3, 5)
    wl = rng.normal(size=(2, 3, 4))
    results += check("lstm", lambda: _weighted_sum(lstm(seq), wl), [("seq", seq)] + lstm.trainable_parameters())

    attn = MhaParams(8, 2, params_rng)
    q, kv = _rand(rng, 2, 3, 8), _rand(rng, 2, 4, 8)
    km = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=bool)
    wm = rng.normal(size=(2, 3, 8))
    results += check("mha_cross", lambda: _weighted_sum(mha(q, kv, kv, km, attn), wm),
                     [("q", q), ("kv", kv)] + attn.trainable_parameters())

    cfg = ModelConfig(variant="NT", hidden=8, heads=2, mlp_hidden=16, blocks=2, num_classes=3)
    blocks = [TransformerBlock(cfg, params_rng) for _ in range(2)]
    x = _rand(rng, 2, 3, 8)
    mask = np.array([[1, 1, 0], [1, 1, 1]], dtype=bool)
    wb = rng.normal(size=(2, 3, 8))

    def stack():
        h = x
        for blk in blocks:
            h = blk(h, mask)
        return _weighted_sum(h, wb)

    named = [("x", x)] + [(f"block{i}.{n}", p) for i, blk in enumerate(blocks) for n, p in blk.trainable_parameters()]
    results += check("transformer_stack", stack, named)

    red = ReduceParams(8, params_rng)
    rx = _rand(rng, 2, 4, 8)
    rmask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
    wr = rng.normal(size=(2, 8))
    results += check("attention_reduce", lambda: _weighted_sum(attention_reduce(rx, rmask, red), wr),
                     [("x", rx)] + red.trainable_parameters())

    proj = ProjectionParams(8, 3, params_rng)
    xb, yb = _rand(rng, 2, 8), _rand(rng, 2, 8)
    results += check("project", lambda: T.cross_entropy(project(xb, yb, proj), np.array([0, 2])),
                     [("xbar", xb), ("ybar", yb)] + proj.trainable_parameters())

    film = FilmParams(8, 2, params_rng)
    fx = _rand(rng, 2, 3, 8)
    wf = rng.normal(size=(2, 2, 2, 2, 8))

    def film_loss():
        deltas = film_predict(fx, mask, film)
        total = None
        for b in range(2):
            for layer in range(2):
                for j in range(2):
                    term = _weighted_sum(deltas[b][layer][j], wf[:, b, layer, j])
                    total = term if total is None else total + term
        return total

    results += check("film_predict", film_loss, [("x", fx)] + film.trainable_parameters())
    return results


def toy_batch(rng: np.random.Generator, vocab_size: int = 7, tx=(3, 2), ty=(4, 3)):
    examples = []
    for i, (a, b) in enumerate(zip(tx, ty)):
        tokens = [int(t) for t in rng.integers(1, vocab_size, size=a)]
        examples.append(Example(f"toy{i}", tokens, rng.uniform(0.0, 1.0, size=(b, 80)), i % 3))
    return collate(examples)


def tiny_config(variant: str, **kw) -> ModelConfig:
    base = dict(variant=variant, hidden=8, heads=2, blocks=1, mlp_hidden=16, num_classes=3)
    base.update(kw)
    return ModelConfig(**base)


def model_checks(variants: Sequence[str] = ("P", "NT", "MAT", "MNT"), seed: int = 0,
                 max_entries: int | None = 12) -> list[GradResult]:
    """Full forward + cross-entropy gradient for each variant (T <= 4, C = 8, B = 1, h = 2)."""
    results: list[GradResult] = []
    for k, variant in enumerate(variants):
        rng = np.random.default_rng(seed + 10 * k)
        model = MultimodalModel(tiny_config(variant), 7, rng)
        if model.film is not None:
            # non-trivial deltas so the modulation path carries signal
            model.film.proj.weight.data *= 3.0
        batch = toy_batch(rng)
        results += check(f"model_{variant}", lambda: T.cross_entropy(model(batch), batch.labels),
                         model.trainable_parameters(), max_entries=max_entries, seed=seed + k)
    return results


def run_suite(seed: int = 0) -> list[GradResult]:
    return op_checks(seed) + layer_checks(seed) + model_checks(seed=seed)
