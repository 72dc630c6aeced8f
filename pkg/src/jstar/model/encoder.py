"""Chunked streaming self-attention encoder and its dependency arithmetic.

Frame ``t`` (1-based) in chunk ``[s, e]`` may attend to frames
``[max(1, s - left), min(T, e + right)]`` in every layer.  Attention is
evaluated chunk by chunk over a fixed-width key window, so the numerics
of a frame do not depend on how long the sequence is: encoding a prefix
reproduces the full-sequence output bit for bit wherever the frame's whole
dependency set lies inside the prefix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import numcore as nc
from .layers import LayerNorm, Linear, Module, _param


@dataclass
class FeatureSequence:
    frames: np.ndarray  # [T, D]
    frame_ms: float

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def time_reduce(seq: FeatureSequence, factor: int) -> FeatureSequence:
    """Stack ``factor`` consecutive frames; a trailing partial group is
    zero-padded."""
    if factor < 1:
        raise ValueError("time reduction factor must be >= 1")
    frames = np.asarray(seq.frames)
    T, D = frames.shape
    groups = -(-T // factor)
    padded = np.zeros((groups * factor, D), dtype=frames.dtype)
    padded[:T] = frames
    return FeatureSequence(padded.reshape(groups, factor * D), seq.frame_ms * factor)


# ------------------------------------------------------------ dependency sets

def layer_interval(t: int, T: int, chunk: int, left: int, right: int) -> tuple[int, int]:
    """Input frames one layer's output frame ``t`` may depend on (1-based)."""
    if not 1 <= t <= T:
        raise ValueError(f"frame {t} outside [1, {T}]")
    s = (t - 1) // chunk * chunk + 1
    e = min(s + chunk - 1, T)
    return max(1, s - left), min(T, e + right)


def dependency_set(T: int, chunk: int, left: int, right: int,
                   layers: int = 1) -> list[tuple[int, int]]:
    """Whole-stack dependency interval for every output frame.

    Per-layer intervals are monotone in ``t``, so composing layers only
    needs the interval ends.
    """
    out = []
    for t in range(1, T + 1):
        lo, hi = t, t
        for _ in range(layers):
            lo = layer_interval(lo, T, chunk, left, right)[0]
            hi = layer_interval(hi, T, chunk, left, right)[1]
        out.append((lo, hi))
    return out


def compose(outer: Sequence[tuple[int, int]],
            inner: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Dependencies of ``outer`` expressed in the inputs of ``inner``."""
    return [(inner[lo - 1][0], inner[hi - 1][1]) for lo, hi in outer]


def reduction_interval(T_raw: int, factor: int) -> list[tuple[int, int]]:
    """Raw frames stacked into each reduced frame."""
    groups = -(-T_raw // factor)
    return [((j - 1) * factor + 1, min(j * factor, T_raw)) for j in range(1, groups + 1)]


# -------------------------------------------------------------------- layers

def _window_index(T: int, chunk: int, left: int, right: int):
    n_chunks = -(-T // chunk)
    width = left + chunk + right
    starts = np.arange(n_chunks) * chunk - left
    index = starts[:, None] + np.arange(width)[None, :]
    return n_chunks, width, index


class ChunkedSelfAttention(Module):
    def __init__(self, rng, dim: int, heads: int, chunk: int, left: int, right: int,
                 max_rel_pos: int):
        self.qkv = Linear(rng, dim, 3 * dim)
        self.out = Linear(rng, dim, dim)
        self.rel_bias = _param(rng.uniform(-0.1, 0.1, size=(2 * max_rel_pos + 1, heads)),
                               "rel_bias")
        self.dim, self.heads = dim, heads
        self.chunk, self.left, self.right = chunk, left, right
        self.max_rel_pos = max_rel_pos

    def _offsets(self, width: int) -> np.ndarray:
        # key slot j of a chunk's window sits at offset j - left - i from query i
        i = np.arange(self.chunk)[:, None]
        j = np.arange(width)[None, :]
        off = np.clip(j - self.left - i, -self.max_rel_pos, self.max_rel_pos)
        return off + self.max_rel_pos

    def __call__(self, x: nc.Tensor, lengths: Sequence[int]) -> nc.Tensor:
        B, T, H = x.shape
        heads, dh, C = self.heads, self.dim // self.heads, self.chunk
        n_chunks, width, index = _window_index(T, C, self.left, self.right)
        Tp = n_chunks * C

        qkv = self.qkv(x)
        q, k, v = qkv[:, :, :H], qkv[:, :, H:2 * H], qkv[:, :, 2 * H:]
        q = nc.pad_axis(q, 1, 0, Tp - T).reshape(B, n_chunks, C, heads, dh)
        q = q.transpose(0, 3, 1, 2, 4)  # B h n C dh

        in_range = (index >= 0) & (index < T)
        kw = nc.gather_windows(k, index, in_range).reshape(B, n_chunks, width, heads, dh)
        vw = nc.gather_windows(v, index, in_range).reshape(B, n_chunks, width, heads, dh)
        kT = kw.transpose(0, 3, 1, 4, 2)  # B h n dh W
        vw = vw.transpose(0, 3, 1, 2, 4)  # B h n W dh

        scores = nc.matmul(q, kT) * (1.0 / math.sqrt(dh))
        bias = nc.take(self.rel_bias, self._offsets(width))  # C W h
        bias = bias.transpose(2, 0, 1).reshape(1, heads, 1, C, width)
        scores = scores + nc.expand(bias, scores.shape)

        lengths = np.asarray(lengths)
        valid = (index[None] >= 0) & (index[None] < lengths[:, None, None])  # B n W
        mask = np.broadcast_to(valid[:, None, :, None, :], scores.shape)
        attn = nc.softmax(scores, mask)
        ctx = nc.matmul(attn, vw).transpose(0, 2, 3, 1, 4).reshape(B, Tp, H)
        if Tp != T:
            ctx = ctx[:, :T]
        return self.out(ctx)


class EncoderLayer(Module):
    def __init__(self, rng, dim, ffn_dim, heads, chunk, left, right, max_rel_pos):
        self.norm_attn = LayerNorm(dim)
        self.attn = ChunkedSelfAttention(rng, dim, heads, chunk, left, right, max_rel_pos)
        self.norm_ffn = LayerNorm(dim)
        self.ffn_in = Linear(rng, dim, ffn_dim)
        self.ffn_out = Linear(rng, ffn_dim, dim)

    def __call__(self, x: nc.Tensor, lengths) -> nc.Tensor:
        x = x + self.attn(self.norm_attn(x), lengths)
        return x + self.ffn_out(nc.relu(self.ffn_in(self.norm_ffn(x))))


class Encoder(Module):
    """Stack of chunked attention blocks with a closing layer norm."""

    def __init__(self, rng, layers: int, dim: int, ffn_dim: int, heads: int, chunk: int,
                 left: int, right: int, max_rel_pos: int):
        self.layers = [EncoderLayer(rng, dim, ffn_dim, heads, chunk, left, right, max_rel_pos)
                       for _ in range(layers)]
        self.norm = LayerNorm(dim)
        self.chunk, self.left, self.right = chunk, left, right
        self.num_layers = layers
        self.dim = dim

    def __call__(self, x: nc.Tensor, lengths: Sequence[int]) -> nc.Tensor:
        if x.shape[-1] != self.dim:
            raise ValueError(f"encoder expects dim {self.dim}, got {x.shape[-1]}")
        if x.shape[1] == 0:
            return x
        for layer in self.layers:
            x = layer(x, lengths)
        return self.norm(x)

    def dependency_set(self, T: int) -> list[tuple[int, int]]:
        return dependency_set(T, self.chunk, self.left, self.right, self.num_layers)
