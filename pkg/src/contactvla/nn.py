"""Small layer library on top of the autodiff kernel."""

from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from .autodiff import F, Parameter, Tensor, default_dtype


class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Parameter):
                yield key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")

    def parameters(self, trainable_only: bool = True) -> list[Tensor]:
        return [p for _, p in self.named_parameters() if p.requires_grad or not trainable_only]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict and set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for k, arr in state.items():
            if k in own:
                if own[k].shape != arr.shape:
                    raise ValueError(f"{k}: shape {arr.shape} != {own[k].shape}")
                own[k].data = np.array(arr, dtype=own[k].dtype)

    def freeze(self) -> None:
        for p in self.parameters(trainable_only=False):
            p.requires_grad = False

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters(trainable_only=False))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, p in self.named_parameters():
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(arr) -> Parameter:
    return Parameter(arr, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False, scale: float = 1.0):
        std = 0.0 if zero else scale / np.sqrt(d_in)
        self.weight = param(rng.normal(0.0, 1.0, (d_in, d_out)) * std)
        self.bias = param(np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def forward(self, x) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ValueError(f"Linear expects last dim {self.d_in}, got {x.shape[-1]}")
        y = F.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = param(np.ones(d))
        self.beta = param(np.zeros(d))

    def forward(self, x) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.table = param(rng.normal(0.0, 1.0, (n, d)))

    def forward(self, idx) -> Tensor:
        return F.gather(self.table, np.asarray(idx), axis=0)


class MLP(Module):
    """Two-layer perceptron with a GELU (or tanh) hidden layer."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 zero_out: bool = False, act: str = "gelu", out_scale: float = 1.0):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng, zero=zero_out, scale=out_scale)
        self.act = act

    def forward(self, x) -> Tensor:
        h = self.fc1(x)
        h = F.gelu(h) if self.act == "gelu" else F.tanh(h)
        return self.fc2(h)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, zero_value: bool = False):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng, bias=False)  # a key bias cannot change softmax output
        self.v = Linear(d, d, rng, zero=zero_value)
        self.o = Linear(d, d, rng, zero=zero_value)
        self.heads = heads
        self.d = d

    def _split(self, x: Tensor) -> Tensor:
        *lead, t, d = x.shape
        x = x.reshape(*lead, t, self.heads, d // self.heads)
        nd = x.ndim
        axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
        return F.transpose(x, axes)

    def forward(self, x_q, x_kv=None, return_weights: bool = False):
        x_kv = x_q if x_kv is None else x_kv
        q, k, v = self._split(self.q(x_q)), self._split(self.k(x_kv)), self._split(self.v(x_kv))
        dh = self.d // self.heads
        scores = F.matmul(q, F.transpose(k)) * np.asarray(1.0 / np.sqrt(dh), dtype=q.dtype)
        w = F.softmax(scores, axis=-1)
        out = F.matmul(w, v)
        nd = out.ndim
        axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
        out = F.transpose(out, axes)
        out = out.reshape(*out.shape[:-2], self.d)
        out = self.o(out)
        return (out, w) if return_weights else out


def sinusoid_table(positions, d: int, base: float = 10000.0) -> np.ndarray:
    """Interleaved sine/cosine encoding: [sin(p/base^(2i/d)), cos(p/base^(2i/d)), ...]."""
    pos = np.asarray(positions, dtype=np.float64)[..., None]
    i = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / base ** (i / d)
    out = np.zeros(pos.shape[:-1] + (d,), dtype=np.float64)
    out[..., 0::2] = np.sin(angle)
    out[..., 1::2] = np.cos(angle)[..., : d // 2]
    return out.astype(default_dtype())
