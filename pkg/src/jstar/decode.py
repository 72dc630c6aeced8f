"""Frame-synchronous transducer decoding with streaming token finalization.

A token is final once it lies in the longest common prefix of every live
beam hypothesis: all later hypotheses extend the current ones, so such a
prefix can never change again.  Times are stream times: a frame index
times the frame length plus the theoretical delay of the encoder feeding
the head.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from . import numcore as nc
from .model.encoder import dependency_set
from .model.network import JstarModel
from .vocab import BLANK


def theoretical_latency(chunk_ms: float, right_context_ms: float) -> float:
    """Mean algorithmic delay of a chunked encoder: half a chunk plus the
    right context."""
    if chunk_ms < 0 or right_context_ms < 0:
        raise ValueError("chunk and right context must be non-negative")
    return chunk_ms / 2 + right_context_ms


@dataclass
class Hypothesis:
    tokens: tuple[int, ...] = ()
    emit_frame: tuple[int, ...] = ()
    score: float = 0.0
    finalized_len: int = 0


@dataclass(frozen=True)
class EmissionEvent:
    token: int
    emit_time_ms: float
    finalize_time_ms: float


class TransducerHead(Protocol):
    """What the decoders need from a model: per-frame encoder output, a
    label-history network and the joint distribution."""

    frame_ms: float
    latency_ms: float

    def encode(self, inputs) -> np.ndarray: ...

    def initial_state(self): ...

    def predict(self, token: int, state) -> tuple[np.ndarray, object]: ...

    def log_probs(self, enc_frame, pred_out) -> np.ndarray: ...


class ModelHead:
    """One transducer head (``asr`` or ``st``) of a trained model."""

    def __init__(self, model: JstarModel, head: str = "st"):
        if head not in ("asr", "st"):
            raise ValueError("head must be 'asr' or 'st'")
        self.model = model.eval()
        self.head = head
        c = model.config
        use_fast = head == "asr" and c.asr_position == "fast"
        chunk = c.chunk_fast if use_fast else c.chunk_slow
        self.frame_ms = c.frame_ms
        self.latency_ms = theoretical_latency(chunk * c.frame_ms, c.right_context * c.frame_ms)
        self.predictor = model.asr_pred if head == "asr" else model.st_pred
        self.joiner = model.asr_join if head == "asr" else model.st_join
        self._use_fast = use_fast

    def encoder_output(self, fast: np.ndarray, slow: np.ndarray) -> np.ndarray:
        return self.joiner.project_encoder(fast if self._use_fast else slow)

    def encode(self, inputs) -> np.ndarray:
        with nc.no_grad():
            fast, slow, _ = self.model.encode([inputs])
        return self.encoder_output(fast.data[0], slow.data[0])

    def initial_state(self):
        return self.predictor.initial_state(1)

    def predict(self, token: int, state):
        out, state = self.predictor.step(np.array([token]), state)
        return out[0], state

    def log_probs(self, enc_frame, pred_out) -> np.ndarray:
        return self.joiner.log_probs(enc_frame, pred_out[None])[0]


class TableHead:
    """Head backed by a fixed table ``log_probs[t, u, v]``: the distribution
    depends only on the frame and on how many labels were emitted so far."""

    def __init__(self, log_probs: np.ndarray, frame_ms: float = 60.0, latency_ms: float = 0.0):
        self.table = np.asarray(log_probs, dtype=np.float64)
        self.frame_ms = frame_ms
        self.latency_ms = latency_ms

    @classmethod
    def from_logits(cls, logits, **kw) -> "TableHead":
        return cls(nc._log_softmax_np(np.asarray(logits, dtype=np.float64)), **kw)

    def encode(self, inputs=None) -> np.ndarray:
        return np.arange(self.table.shape[0])

    def initial_state(self):
        return -1

    def predict(self, token: int, state):
        u = state + 1
        return u, u

    def log_probs(self, enc_frame, pred_out) -> np.ndarray:
        return self.table[int(enc_frame), min(int(pred_out), self.table.shape[1] - 1)]


# ----------------------------------------------------------------- decoding

def greedy_decode(head: TransducerHead, inputs, max_symbols_per_frame: int = 4) -> Hypothesis:
    """Best label (or blank) at every step; at most ``max_symbols_per_frame``
    labels per frame."""
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    enc = head.encode(inputs)
    pred, state = head.predict(BLANK, head.initial_state())
    tokens, frames, score = [], [], 0.0
    for t, frame in enumerate(enc, 1):
        for _ in range(max_symbols_per_frame):
            lp = head.log_probs(frame, pred)
            k = int(np.argmax(lp))
            score += float(lp[k])
            if k == BLANK:
                break
            tokens.append(k)
            frames.append(t)
            pred, state = head.predict(k, state)
    return Hypothesis(tuple(tokens), tuple(frames), score, len(tokens))


@dataclass
class _Hyp:
    tokens: tuple
    frames: tuple
    score: float
    pred: object
    state: object


def _common_prefix(seqs: list[tuple]) -> int:
    first = seqs[0]
    n = min(len(s) for s in seqs)
    for i in range(n):
        if any(s[i] != first[i] for s in seqs[1:]):
            return i
    return n


class StreamingDecoder:
    """Incremental beam search over encoder frames.

    ``push`` consumes any number of new encoder frames and returns the
    events finalized by them; ``finish`` closes the stream, finalizing the
    top hypothesis.  Feeding the frames in one call or one at a time gives
    identical results.
    """

    def __init__(self, head: TransducerHead, beam_size: int = 4, max_symbols_per_frame: int = 4,
                 clock: str = "stream"):
        if beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if max_symbols_per_frame < 1:
            raise ValueError("max_symbols_per_frame must be >= 1")
        if clock not in ("stream", "wall"):
            raise ValueError("clock must be 'stream' or 'wall'")
        self.head = head
        self.beam_size = beam_size
        self.max_symbols = max_symbols_per_frame
        self.clock = clock
        pred, state = head.predict(BLANK, head.initial_state())
        self.beam = [_Hyp((), (), 0.0, pred, state)]
        self.frame = 0
        self.finalized: list[int] = []
        self.events: list[EmissionEvent] = []
        self.history: list[tuple[int, ...]] = []  # finalized prefix after every frame
        self._pred_cache: dict = {}
        self._t0 = time.monotonic()

    def _time(self, frame: int) -> float:
        if self.clock == "wall":
            return 1000.0 * (time.monotonic() - self._t0)
        return frame * self.head.frame_ms + self.head.latency_ms

    def _extend(self, h: _Hyp, k: int, lp: float) -> _Hyp:
        tokens = h.tokens + (k,)
        cached = self._pred_cache.get(tokens)
        if cached is None:
            cached = self.head.predict(k, h.state)
            self._pred_cache[tokens] = cached
        return _Hyp(tokens, h.frames + (self.frame,), h.score + lp, cached[0], cached[1])

    def _step(self, enc_frame) -> None:
        self.frame += 1
        K = self.beam_size
        done: dict[tuple, _Hyp] = {}
        active = self.beam
        for s in range(self.max_symbols + 1):
            if not active:
                break
            cands: list[tuple[_Hyp, bool]] = []
            for h in active:
                if s == self.max_symbols:
                    cands.append((h, True))
                    continue
                lp = self.head.log_probs(enc_frame, h.pred)
                cands.append((_Hyp(h.tokens, h.frames, h.score + float(lp[BLANK]), h.pred, h.state), True))
                order = np.argsort(-lp[1:], kind="stable")[:K] + 1
                cands.extend((self._extend(h, int(k), float(lp[k])), False) for k in order)
            pool: list[tuple[_Hyp, bool]] = [(h, True) for h in done.values()]
            merged: dict[tuple, int] = {h.tokens: i for i, (h, _) in enumerate(pool)}
            for h, is_done in cands:
                if is_done and h.tokens in merged:
                    i = merged[h.tokens]
                    old = pool[i][0]
                    best = old if old.score >= h.score else h
                    pool[i] = (_Hyp(best.tokens, best.frames, float(np.logaddexp(old.score, h.score)),
                                    best.pred, best.state), True)
                    continue
                if is_done:
                    merged[h.tokens] = len(pool)
                pool.append((h, is_done))
            keep = sorted(range(len(pool)), key=lambda i: -pool[i][0].score)[:K]
            keep.sort()
            done = {pool[i][0].tokens: pool[i][0] for i in keep if pool[i][1]}
            active = [pool[i][0] for i in keep if not pool[i][1]]
        self.beam = sorted(done.values(), key=lambda h: -h.score)
        self._finalize(_common_prefix([h.tokens for h in self.beam]))

    def _finalize(self, upto: int) -> list[EmissionEvent]:
        top = self.beam[0]
        new = []
        now = self._time(self.frame)
        for i in range(len(self.finalized), upto):
            self.finalized.append(top.tokens[i])
            ev = EmissionEvent(top.tokens[i], self._time(top.frames[i]), now)
            new.append(ev)
        self.events.extend(new)
        self.history.append(tuple(self.finalized))
        return new

    def push(self, enc_frames: Iterable) -> list[EmissionEvent]:
        start = len(self.events)
        for frame in enc_frames:
            self._step(frame)
        return self.events[start:]

    def finish(self) -> tuple[list[Hypothesis], list[EmissionEvent]]:
        lcp = len(self.finalized)
        self._finalize(len(self.beam[0].tokens))
        nbest = [Hypothesis(h.tokens, h.frames, h.score, lcp) for h in self.beam]
        nbest[0].finalized_len = len(nbest[0].tokens)
        return nbest, list(self.events)


def beam_decode(head: TransducerHead, inputs, beam_size: int = 4,
                max_symbols_per_frame: int = 4) -> tuple[list[Hypothesis], list[EmissionEvent]]:
    """N-best list (best first) and the finalization events of the top
    hypothesis."""
    dec = StreamingDecoder(head, beam_size, max_symbols_per_frame)
    dec.push(head.encode(inputs))
    return dec.finish()


# ----------------------------------------------------------- streaming input

class StreamingEncoder:
    """Feeds raw input incrementally and releases encoder frames as soon as
    their whole dependency set has arrived.

    Every call re-encodes the available prefix; chunked attention makes the
    released frames bit-identical to a full-sequence encoding.
    """

    def __init__(self, head: ModelHead):
        self.head = head
        self.model = head.model
        self.raw: list = []
        self.released = 0
        c = self.model.config
        self.factor = c.time_reduction if c.variant == "jstar" else 1

    def _ready(self, T_avail: int) -> int:
        # frames whose unclipped dependency end lies inside the available prefix
        c = self.model.config
        margin = (c.fast_layers + c.slow_layers) * (max(c.chunk_fast, c.chunk_slow) + c.right_context) + 1
        T_big = T_avail + margin
        fast = dependency_set(T_big, c.chunk_fast, c.left_context, c.right_context, c.fast_layers)
        if self.head._use_fast:
            ends = [hi for _, hi in fast]
        else:
            slow = dependency_set(T_big, c.chunk_slow, c.left_context, c.right_context, c.slow_layers)
            ends = [fast[hi - 1][1] for _, hi in slow]
        return sum(1 for e in ends[:T_avail] if e <= T_avail)

    def _encode(self, n_ready: int) -> np.ndarray:
        if n_ready <= self.released:
            return np.zeros((0,))
        c = self.model.config
        inputs = np.asarray(self.raw) if c.variant == "jstar" else list(self.raw)
        enc = self.head.encode(inputs)
        out = enc[self.released:n_ready]
        self.released = n_ready
        return out

    def push(self, raw_frames: Sequence) -> np.ndarray:
        self.raw.extend(raw_frames)
        T_avail = len(self.raw) // self.factor
        return self._encode(self._ready(T_avail))

    def finish(self) -> np.ndarray:
        T = -(-len(self.raw) // self.factor)
        return self._encode(T)


def stream_decode(head: ModelHead, inputs: Sequence, block: int = 1, beam_size: int = 4,
                  max_symbols_per_frame: int = 4):
    """Decode ``inputs`` fed ``block`` raw frames at a time."""
    enc = StreamingEncoder(head)
    dec = StreamingDecoder(head, beam_size, max_symbols_per_frame)
    for i in range(0, len(inputs), block):
        dec.push(enc.push(inputs[i:i + block]))
    dec.push(enc.finish())
    return dec.finish()


# ------------------------------------------------------------------ latency

@dataclass
class LatencyStats:
    first_token_p50: float | None
    last_token_p50: float | None
    per_token: list[float] = field(default_factory=list)


def p50(values: Sequence[float]) -> float:
    """Median; the lower middle element for even counts."""
    if not values:
        raise ValueError("no values")
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def latency_stats(segments: Sequence[tuple[Sequence[EmissionEvent], float, float]]) -> LatencyStats:
    """P50 first/last finalized-token latency over ``(events, start_ms,
    end_ms)`` segments.  Segments without events do not count."""
    if not segments:
        raise ValueError("latency_stats needs at least one segment")
    first, last, per_token = [], [], []
    for events, start_ms, end_ms in segments:
        per_token.extend(e.finalize_time_ms - e.emit_time_ms for e in events)
        if events:
            first.append(events[0].finalize_time_ms - start_ms)
            last.append(events[-1].finalize_time_ms - end_ms)
    return LatencyStats(p50(first) if first else None, p50(last) if last else None, per_token)
