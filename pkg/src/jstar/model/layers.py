"""Parameter containers and the transducer predictor/joiner blocks."""
from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from .. import numcore as nc
from ..vocab import BLANK


class Module:
    """Holds parameters as attributes; names follow attribute nesting."""

    training = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, nc.Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}.{key}" if prefix else key
            if isinstance(value, nc.Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name)
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{name}.{i}")

    def parameters(self) -> list[nc.Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for child in value:
                    if isinstance(child, Module):
                        yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _param(arr: np.ndarray, name: str) -> nc.Tensor:
    return nc.Tensor(arr, requires_grad=True, name=name)


def uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.weight = _param(uniform(rng, (d_in, d_out), d_in), "weight")
        self.bias = _param(uniform(rng, (d_out,), d_in), "bias") if bias else None

    def __call__(self, x: nc.Tensor) -> nc.Tensor:
        return nc.linear(x, self.weight, self.bias)

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        y = nc._row_stable_matmul(x, self.weight.data)
        return y + self.bias.data if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = _param(np.ones(dim), "gain")
        self.bias = _param(np.zeros(dim), "bias")

    def __call__(self, x: nc.Tensor) -> nc.Tensor:
        return nc.layer_norm(x, self.gain, self.bias)

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(-1, keepdims=True)
        return (xc * (1.0 / np.sqrt(var + 1e-5)) * self.gain.data + self.bias.data).astype(x.dtype)


class Predictor(Module):
    """Label-history network: embedding, one LSTM layer, dropout, layer norm
    and a projection into the joiner space.  Position 0 is fed blank."""

    def __init__(self, rng, vocab_size: int, dim: int, out_dim: int, dropout: float):
        self.embed = _param(rng.uniform(-1, 1, size=(vocab_size, dim)), "embed")
        self.w_ih = _param(uniform(rng, (dim, 4 * dim), dim), "w_ih")
        self.w_hh = _param(uniform(rng, (dim, 4 * dim), dim), "w_hh")
        b = uniform(rng, (4 * dim,), dim)
        b[dim:2 * dim] = 1.0  # forget gate
        self.b = _param(b, "b")
        self.norm = LayerNorm(dim)
        self.proj = Linear(rng, dim, out_dim)
        self.dim = dim
        self.p_drop = dropout
        self.rng = np.random.default_rng(int(rng.integers(2**31)))

    def __call__(self, targets: Sequence[Sequence[int]]) -> nc.Tensor:
        """[B, Umax+1, out_dim] outputs for blank-prefixed, zero-padded targets."""
        umax = max((len(t) for t in targets), default=0)
        ids = np.full((len(targets), umax + 1), BLANK, dtype=np.int64)
        for i, t in enumerate(targets):
            ids[i, 1:len(t) + 1] = t
        drop_rng = self.rng if self.training else None
        x = nc.dropout(nc.take(self.embed, ids), self.p_drop, drop_rng)
        h = nc.lstm(x, self.w_ih, self.w_hh, self.b)
        h = nc.dropout(h, self.p_drop, drop_rng)
        return self.proj(self.norm(h))

    # inference on plain arrays
    def initial_state(self, n: int = 1):
        z = np.zeros((n, self.dim), dtype=self.w_hh.dtype)
        return z, z.copy()

    def step(self, tokens: np.ndarray, state):
        """Advance ``len(tokens)`` independent histories by one label each."""
        h, c = state
        x = self.embed.data[np.asarray(tokens, dtype=np.int64)]
        h, c = nc.lstm_step(x, h, c, self.w_ih.data, self.w_hh.data, self.b.data)
        return self.proj.apply_np(self.norm.apply_np(h)), (h, c)


class Joiner(Module):
    """ReLU over the sum of projected encoder and predictor states, then a
    linear layer onto the vocabulary."""

    def __init__(self, rng, enc_dim: int, joint_dim: int, vocab_size: int):
        self.enc_proj = Linear(rng, enc_dim, joint_dim)
        self.out = Linear(rng, joint_dim, vocab_size)

    def __call__(self, enc: nc.Tensor, pred: nc.Tensor) -> nc.Tensor:
        B, T, _ = enc.shape
        U1, J = pred.shape[1], pred.shape[2]
        e = nc.expand(self.enc_proj(enc).reshape(B, T, 1, J), (B, T, U1, J))
        p = nc.expand(pred.reshape(B, 1, U1, J), (B, T, U1, J))
        return self.out(nc.relu(e + p))

    def project_encoder(self, enc: np.ndarray) -> np.ndarray:
        return self.enc_proj.apply_np(enc)

    def log_probs(self, enc_proj_frame: np.ndarray, pred_out: np.ndarray) -> np.ndarray:
        """[N, V] log-probabilities for one projected encoder frame."""
        z = np.maximum(enc_proj_frame[None, :] + pred_out, 0)
        return nc._log_softmax_np(self.out.apply_np(z).astype(np.float64))
