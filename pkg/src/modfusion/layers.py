"""Parameter containers shared by the encoders and the fusion head."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Attribute-discovered parameter container.

    Any :class:`Tensor` attribute is a parameter; attributes holding a
    ``Module`` or a list of modules are walked recursively in definition order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def num_parameters(self, trainable_only: bool = True) -> int:
        return sum(p.size for _, p in self.named_parameters() if p.requires_grad or not trainable_only)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise T.ShapeError(f"{name}: expected {p.shape}, got {value.shape}")
            p.data = value.astype(p.data.dtype, copy=True)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    """``x @ weight + bias`` with weight stored ``[in, out]``."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_init(rng, (n_in, n_out), n_in)
        if bias:
            self.bias = uniform_init(rng, (n_out,), n_in)
        else:
            self.bias = None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        return out if self.bias is None else out + self.bias


class LayerNorm(Module):
    """Learnable per-channel scale/shift around :func:`tensor.layer_norm`."""

    def __init__(self, channels: int, eps: float = 1e-5, axis: str = "feature"):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.eps = eps
        self.axis = axis

    def __call__(self, x: Tensor, mask=None, delta_gamma=None, delta_beta=None) -> Tensor:
        # delta_* are per-sample [N, C] (or [N, 1]) shifts added to gamma/beta
        gamma, beta = self.gamma, self.beta
        if delta_gamma is not None:
            gamma = T.add(T.reshape(delta_gamma, _lift(delta_gamma.shape, x.ndim)), gamma)
        if delta_beta is not None:
            beta = T.add(T.reshape(delta_beta, _lift(delta_beta.shape, x.ndim)), beta)
        return T.layer_norm(x, gamma, beta, eps=self.eps, axis=self.axis, mask=mask)


def _lift(shape: tuple[int, ...], ndim: int) -> tuple[int, ...]:
    # [N, C] -> [N, 1, ..., 1, C] so it broadcasts over the time axis
    return (shape[0],) + (1,) * (ndim - len(shape)) + tuple(shape[1:])
