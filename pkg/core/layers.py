"""
Network layers over a shared parameter store.

Each layer owns a name prefix inside a ParamStore and reads its tensors from
the store on every call, so an optimizer can swap parameter tensors between
steps without rebuilding the layers.

Layers:
  Linear, LayerNorm          basic building blocks
  Prenet                     D -> p1 -> p2 -> hidden, ReLU + always-on dropout
  DecoderBlock / Decoder     pre-LN causal transformer
  Denoiser                   residual MLP, final layer zero-initialised
  Postnet                    same-padded conv stack with tanh, residual output
"""

from __future__ import annotations
import logging
from typing import Iterator

import numpy as np

from core import numerics as nx
from core.errors import CheckpointFormatError, ShapeError
from core.model_config import ModelConfig

logger = logging.getLogger(__name__)


class ParamStore:
    """Ordered name -> Tensor mapping of trainable parameters."""

    def __init__(self):
        self._params: dict[str, nx.Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> nx.Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = nx.Tensor(array, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> nx.Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[nx.Tensor]:
        return list(self._params.values())

    def count(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def set(self, name: str, array: np.ndarray):
        old = self._params[name]
        if np.shape(array) != old.shape:
            raise ShapeError("params.set", np.shape(array), old.shape, detail=name)
        self._params[name] = nx.Tensor(array, requires_grad=True, name=name)

    def bind(self, name: str, tensor: nx.Tensor):
        """Install an existing tensor (e.g. a gradient-check leaf) under name."""
        if tensor.shape != self._params[name].shape:
            raise ShapeError("params.bind", tensor.shape, self._params[name].shape, detail=name)
        self._params[name] = tensor

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._params.items()}

    def load(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise CheckpointFormatError(
                f"parameter names do not match the model (missing {sorted(missing)[:5]}, "
                f"unexpected {sorted(extra)[:5]})"
            )
        for name, arr in arrays.items():
            if arr.shape != self._params[name].shape:
                raise CheckpointFormatError(
                    f"{name}: checkpoint shape {arr.shape} != model shape {self._params[name].shape}"
                )
        for name, arr in arrays.items():
            self.set(name, arr)


def _scaled_normal(rng, shape, fan_in: int) -> np.ndarray:
    return rng.normal(shape) / np.sqrt(fan_in)


class Linear:
    def __init__(self, store: ParamStore, name: str, fan_in: int, fan_out: int, rng,
                 zero: bool = False, bias: bool = True):
        self.store = store
        self.name = name
        w = np.zeros((fan_in, fan_out)) if zero else _scaled_normal(rng, (fan_in, fan_out), fan_in)
        store.add(f"{name}.w", w)
        self.has_bias = bias
        if bias:
            store.add(f"{name}.b", np.zeros(fan_out))

    def __call__(self, x, fp32: bool = False) -> nx.Tensor:
        b = self.store[f"{self.name}.b"] if self.has_bias else None
        return nx.linear(x, self.store[f"{self.name}.w"], b, fp32=fp32)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int):
        self.store = store
        self.name = name
        store.add(f"{name}.g", np.ones(dim))
        store.add(f"{name}.b", np.zeros(dim))

    def __call__(self, x) -> nx.Tensor:
        return nx.layer_norm(x, self.store[f"{self.name}.g"], self.store[f"{self.name}.b"])


class Prenet:
    """Three linear layers; dropout after the first two is active in training and inference."""

    def __init__(self, store: ParamStore, cfg: ModelConfig, rng):
        p1, p2 = cfg.prenet_sizes
        self.p = cfg.prenet_dropout
        self.l1 = Linear(store, "prenet.0", cfg.mel_dim, p1, rng)
        self.l2 = Linear(store, "prenet.1", p1, p2, rng)
        self.l3 = Linear(store, "prenet.2", p2, cfg.hidden_dim, rng)

    def __call__(self, frames, rng) -> nx.Tensor:
        h = nx.dropout(nx.relu(self.l1(frames)), self.p, rng)
        h = nx.dropout(nx.relu(self.l2(h)), self.p, rng)
        return self.l3(h)


class DecoderBlock:
    def __init__(self, store: ParamStore, cfg: ModelConfig, index: int, rng):
        name = f"decoder.{index}"
        h = cfg.hidden_dim
        self.cfg = cfg
        self.ln1 = LayerNorm(store, f"{name}.ln1", h)
        self.q = Linear(store, f"{name}.q", h, h, rng)
        self.k = Linear(store, f"{name}.k", h, h, rng)
        self.v = Linear(store, f"{name}.v", h, h, rng)
        self.o = Linear(store, f"{name}.o", h, h, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", h)
        self.ff1 = Linear(store, f"{name}.ff1", h, cfg.ffn_dim, rng)
        self.ff2 = Linear(store, f"{name}.ff2", cfg.ffn_dim, h, rng)

    def _split_heads(self, x: nx.Tensor) -> nx.Tensor:
        t = x.shape[0]
        return nx.transpose(nx.reshape(x, (t, self.cfg.num_heads, self.cfg.head_dim)), (1, 0, 2))

    def __call__(self, x: nx.Tensor, mask: np.ndarray, rng, training: bool) -> nx.Tensor:
        fp32 = self.cfg.float32_matmul
        t = x.shape[0]
        a = self.ln1(x)
        q = self._split_heads(self.q(a, fp32))
        k = self._split_heads(self.k(a, fp32))
        v = self._split_heads(self.v(a, fp32))
        weights = nx.softmax(nx.masked_attention_score(q, k, mask), axis=-1)
        ctx = nx.matmul(weights, v, fp32=fp32)
        ctx = nx.reshape(nx.transpose(ctx, (1, 0, 2)), (t, self.cfg.hidden_dim))
        x = nx.add(x, nx.dropout(self.o(ctx, fp32), self.cfg.dropout, rng, active=training))
        f = self.ff2(nx.relu(self.ff1(self.ln2(x), fp32)), fp32)
        return nx.add(x, nx.dropout(f, self.cfg.dropout, rng, active=training))


class Decoder:
    def __init__(self, store: ParamStore, cfg: ModelConfig, rng):
        self.blocks = [DecoderBlock(store, cfg, i, rng) for i in range(cfg.num_blocks)]
        self.ln_f = LayerNorm(store, "decoder.ln_f", cfg.hidden_dim)

    def __call__(self, x: nx.Tensor, mask: np.ndarray, rng, training: bool) -> nx.Tensor:
        for block in self.blocks:
            x = block(x, mask, rng, training)
        return self.ln_f(x)


class Denoiser:
    """y1 = z + MLP(z); the last layer starts at zero so the initial map is the identity."""

    def __init__(self, store: ParamStore, cfg: ModelConfig, rng):
        d, hd = cfg.mel_dim, cfg.denoiser_hidden
        sizes = [d] + [hd] * (cfg.denoiser_layers - 1) + [d]
        self.layers = [
            Linear(store, f"denoiser.{i}", sizes[i], sizes[i + 1], rng, zero=(i == len(sizes) - 2))
            for i in range(len(sizes) - 1)
        ]

    def __call__(self, z) -> nx.Tensor:
        h = nx.as_tensor(z)
        for layer in self.layers[:-1]:
            h = nx.relu(layer(h))
        return nx.add(z, self.layers[-1](h))


class Postnet:
    def __init__(self, store: ParamStore, cfg: ModelConfig, rng):
        k, c, d = cfg.postnet_kernel, cfg.postnet_channels, cfg.mel_dim
        self.store = store
        chans = [d] + [c] * (cfg.postnet_blocks - 1) + [d]
        self.names = []
        for i in range(cfg.postnet_blocks):
            name = f"postnet.{i}"
            last = i == cfg.postnet_blocks - 1
            shape = (k, chans[i], chans[i + 1])
            w = np.zeros(shape) if last else _scaled_normal(rng, shape, k * chans[i])
            store.add(f"{name}.w", w)
            store.add(f"{name}.b", np.zeros(chans[i + 1]))
            self.names.append(name)

    def __call__(self, y1) -> nx.Tensor:
        h = nx.as_tensor(y1)
        for i, name in enumerate(self.names):
            h = nx.conv1d(h, self.store[f"{name}.w"], self.store[f"{name}.b"])
            if i < len(self.names) - 1:
                h = nx.tanh(h)
        return nx.add(y1, h)
