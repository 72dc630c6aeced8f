"""Transducer lattice loss, its exact gradient, an enumeration oracle and
Viterbi best-path alignment.

Lattices are ``[T, U+1, V]`` arrays of joiner outputs *before* log-softmax.
Frame indices in public results are 1-based, label positions 0-based, so an
alignment starts at ``(1, 0)`` and ends with a blank at ``(T, U)``.  All
recursions run in float64 regardless of the input dtype.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc

BLANK = 0
MAX_ENUM = 16
NEG_INF = -np.inf


class RnntError(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    t: int
    u: int
    emit: str  # "blank" or "label"


@dataclass
class AlignmentPath:
    steps: list[Step]
    log_prob: float

    def label_frames(self) -> list[int]:
        """1-based frame index at which each label was emitted."""
        return [s.t for s in self.steps if s.emit == "label"]


def _validate(logits: np.ndarray, target: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.int64)
    if logits.ndim != 3:
        raise RnntError(f"lattice must be [T, U+1, V], got shape {logits.shape}")
    T, U1, V = logits.shape
    if T < 1:
        raise RnntError("lattice needs at least one frame")
    if V < 2:
        raise RnntError("vocabulary must include blank and one label")
    if U1 != len(target) + 1:
        raise RnntError(f"lattice has U+1={U1} rows but target length is {len(target)}")
    if len(target) and (target.min() < 0 or target.max() >= V):
        raise RnntError("target token outside vocabulary")
    if np.any(target == BLANK):
        raise RnntError("target contains the blank symbol")
    if not np.isfinite(logits).all():
        raise RnntError("non-finite logits")
    return logits, target


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(-1, keepdims=True))


def _emission_terms(lp: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """blank[t, u] and label[t, u] = log p(y_{u+1} | t, u); label has U columns."""
    blank = lp[:, :, BLANK]
    T = lp.shape[0]
    U = len(target)
    label = lp[:, np.arange(U), target] if U else np.zeros((T, 0))
    return blank, label


def _offsets(label: np.ndarray) -> np.ndarray:
    C = np.zeros(label.shape[:-1] + (label.shape[-1] + 1,))
    np.cumsum(label, axis=-1, out=C[..., 1:])
    return C


def _scan_forward(stay: np.ndarray, label: np.ndarray) -> np.ndarray:
    """row[u] = logaddexp(stay[u], row[u-1] + label[u-1]) along the last axis.

    Unrolled as row[u] = C[u] + logcumsumexp_k<=u(stay[k] - C[k]) with C the
    running sum of label log-probs, so each frame costs a few array ops.
    """
    C = _offsets(label)
    return np.logaddexp.accumulate(stay - C, axis=-1) + C


def _scan_backward(down: np.ndarray, label: np.ndarray) -> np.ndarray:
    """row[u] = logaddexp(down[u], row[u+1] + label[u]), right to left."""
    C = _offsets(label)
    acc = np.logaddexp.accumulate((down + C)[..., ::-1], axis=-1)[..., ::-1]
    return acc - C


def forward_backward(blank: np.ndarray, label: np.ndarray, frames: np.ndarray,
                     labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log-space alpha/beta for a padded batch.

    ``blank`` is [B, T, U+1], ``label`` [B, T, U] (padding must be finite),
    ``frames``/``labels`` hold each sample's T_b and U_b.  Returns alpha,
    beta and the per-sample log-likelihood.
    """
    B, T, U1 = blank.shape
    rows = np.arange(B)
    col = np.arange(U1)[None, :]
    beyond = col > labels[:, None]
    alpha = np.full((B, T, U1), NEG_INF)
    alpha[:, 0] = _scan_forward(np.where(col == 0, 0.0, NEG_INF) + np.zeros((B, 1)), label[:, 0])
    for t in range(1, T):
        alpha[:, t] = _scan_forward(alpha[:, t - 1] + blank[:, t - 1], label[:, t])

    beta = np.full((B, T, U1), NEG_INF)
    terminal = np.where(col == labels[:, None], 0.0, NEG_INF)
    nxt = np.full((B, U1), NEG_INF)
    for t in range(T - 1, -1, -1):
        down = np.where((frames - 1 == t)[:, None], terminal, nxt) + blank[:, t]
        down = np.where(beyond, NEG_INF, down)
        nxt = _scan_backward(down, label[:, t])
        beta[:, t] = nxt
    log_like = alpha[rows, frames - 1, labels] + blank[rows, frames - 1, labels]
    return alpha, beta, log_like


def _lattice_grad(lp, blank, label, alpha, beta, log_like, frames, labels, target_ids):
    B, T, U1, _ = lp.shape
    rows = np.arange(B)
    next_beta = np.full((B, T, U1), NEG_INF)
    next_beta[:, :-1] = beta[:, 1:]
    next_beta[rows, frames - 1, labels] = 0.0
    ll = log_like[:, None, None]
    g_lp = np.zeros_like(lp)
    g_lp[..., BLANK] = -np.exp(alpha + blank + next_beta - ll)
    if U1 > 1:
        occ = -np.exp(alpha[:, :, :-1] + label + beta[:, :, 1:] - ll)
        b_idx = rows[:, None, None]
        t_idx = np.arange(T)[None, :, None]
        u_idx = np.arange(U1 - 1)[None, None, :]
        np.add.at(g_lp, (b_idx, t_idx, u_idx, target_ids[:, None, :]), occ)
    valid = (np.arange(T)[None, :, None] < frames[:, None, None]) & \
            (np.arange(U1)[None, None, :] <= labels[:, None, None])
    grad = g_lp - np.exp(lp) * g_lp.sum(-1, keepdims=True)
    return np.where(valid[..., None], grad, 0.0)


def _batch_loss(x: np.ndarray, targets: Sequence[Sequence[int]], frames: np.ndarray):
    B, T, U1, V = x.shape
    labels = np.array([len(t) for t in targets], dtype=np.int64)
    target_ids = np.zeros((B, max(U1 - 1, 0)), dtype=np.int64)
    for b, t in enumerate(targets):
        target_ids[b, :len(t)] = t
    lp = _log_softmax(x)
    blank = lp[..., BLANK]
    if U1 > 1:
        label = np.take_along_axis(lp[:, :, :-1, :], target_ids[:, None, :, None], axis=-1)[..., 0]
        label = np.where(np.arange(U1 - 1)[None, None, :] < labels[:, None, None], label, 0.0)
    else:
        label = np.zeros((B, T, 0))
    alpha, beta, log_like = forward_backward(blank, label, frames, labels)
    if not np.isfinite(log_like).all():
        raise RnntError("no alignment has non-zero probability")
    grad = _lattice_grad(lp, blank, label, alpha, beta, log_like, frames, labels, target_ids)
    return -log_like, grad


def rnnt_loss(logits, target: Sequence[int]) -> tuple[float, np.ndarray]:
    """Negative log of the summed probability of every alignment of ``target``.

    Returns ``(loss, grad)`` where ``grad`` is d loss / d logits, computed from
    forward-backward occupancies.
    """
    x, y = _validate(logits, target)
    loss, grad = _batch_loss(x[None], [list(y)], np.array([x.shape[0]]))
    return float(loss[0]), grad[0]


def rnnt_brute_force(logits, target: Sequence[int]) -> float:
    """Loss by explicit enumeration of all monotonic alignments (test oracle)."""
    x, y = _validate(logits, target)
    T, U1, _ = x.shape
    U = U1 - 1
    if T + U > MAX_ENUM:
        raise RnntError(f"lattice too large to enumerate (T+U={T + U} > {MAX_ENUM})")
    # plain softmax, deliberately not the shared log-space helper
    e = np.exp(x - x.max(-1, keepdims=True))
    probs = e / e.sum(-1, keepdims=True)
    total = 0.0
    for moves in _enumerate_paths(T, U):
        p, t, u = 1.0, 0, 0
        for m in moves:
            if m == "b":
                p *= probs[t, u, BLANK]
                t += 1
            else:
                p *= probs[t, u, y[u]]
                u += 1
        total += p
    return -math.log(total)


def _enumerate_paths(T: int, U: int):
    """Yield move strings over {"b", "l"} of length T+U ending in a blank."""
    n = T + U - 1
    for label_slots in itertools.combinations(range(n), U):
        moves = ["b"] * n
        for i in label_slots:
            moves[i] = "l"
        yield moves + ["b"]


def _path_log_prob(lp: np.ndarray, target: np.ndarray, moves) -> float:
    t = u = 0
    total = 0.0
    for m in moves:
        if m == "b":
            total += lp[t, u, BLANK]
            t += 1
        else:
            total += lp[t, u, target[u]]
            u += 1
    return total


def path_log_probs(logits, target: Sequence[int]) -> list[tuple[list[Step], float]]:
    """Every alignment with its log-probability (enumeration bound applies)."""
    x, y = _validate(logits, target)
    T, U1, _ = x.shape
    if T + U1 - 1 > MAX_ENUM:
        raise RnntError("lattice too large to enumerate")
    lp = _log_softmax(x)
    out = []
    for moves in _enumerate_paths(T, U1 - 1):
        out.append((_moves_to_steps(moves), _path_log_prob(lp, y, moves)))
    return out


def _moves_to_steps(moves) -> list[Step]:
    steps = []
    t, u = 1, 0
    for m in moves:
        if m == "b":
            steps.append(Step(t, u, "blank"))
            t += 1
        else:
            steps.append(Step(t, u, "label"))
            u += 1
    return steps


def viterbi_align(logits, target: Sequence[int]) -> AlignmentPath:
    """Most probable alignment.  On equal scores the blank predecessor wins,
    which pushes label emissions as early as possible."""
    x, y = _validate(logits, target)
    T, U1, _ = x.shape
    lp = _log_softmax(x)
    blank, label = _emission_terms(lp, y)
    delta = np.full((T, U1), NEG_INF)
    from_blank = np.zeros((T, U1), dtype=bool)
    for t in range(T):
        for u in range(U1):
            if t == 0 and u == 0:
                delta[0, 0] = 0.0
                continue
            via_blank = delta[t - 1, u] + blank[t - 1, u] if t > 0 else NEG_INF
            via_label = delta[t, u - 1] + label[t, u - 1] if u > 0 else NEG_INF
            if via_blank >= via_label:
                delta[t, u], from_blank[t, u] = via_blank, True
            else:
                delta[t, u] = via_label
    score = delta[T - 1, U1 - 1] + blank[T - 1, U1 - 1]
    steps = [Step(T, U1 - 1, "blank")]
    t, u = T - 1, U1 - 1
    while t > 0 or u > 0:
        if from_blank[t, u]:
            t -= 1
            steps.append(Step(t + 1, u, "blank"))
        else:
            u -= 1
            steps.append(Step(t + 1, u, "label"))
    steps.reverse()
    return AlignmentPath(steps, float(score))


# ----------------------------------------------------------- batched tape op

def rnnt_loss_batch(logits: nc.Tensor, targets: Sequence[Sequence[int]],
                    frame_lengths: Sequence[int]) -> nc.Tensor:
    """Per-sample transducer losses as a [B] tensor recorded on the tape.

    ``logits`` is padded [B, Tmax, Umax+1, V]; sample ``b`` uses the
    ``[:T_b, :U_b+1]`` corner.  Padding receives zero gradient.
    """
    data = logits.data
    B, T, U1, V = data.shape
    if len(targets) != B or len(frame_lengths) != B:
        raise RnntError("batch size mismatch between logits, targets and lengths")
    frames = np.asarray(frame_lengths, dtype=np.int64)
    for t in targets:
        if any(tok == BLANK for tok in t):
            raise RnntError("target contains the blank symbol")
        if len(t) + 1 > U1 or any(not 0 <= tok < V for tok in t):
            raise RnntError("target does not fit the lattice")
    if frames.min() < 1 or frames.max() > T:
        raise RnntError("frame lengths outside lattice")
    losses, grads = _batch_loss(data.astype(np.float64), targets, frames)

    def backward(gout):
        return ((grads * gout.reshape(B, 1, 1, 1)).astype(logits.dtype),)

    return nc.custom("rnnt_loss", losses.astype(logits.dtype), (logits,), backward)
