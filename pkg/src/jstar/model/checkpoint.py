"""Named-tensor checkpoint files.

Layout: a UTF-8 header with one ``name dtype shape offset`` line per tensor,
a blank line, then the concatenated little-endian float32 payload.  Shapes
are written comma-separated (``-`` for a scalar) and offsets are byte
positions into the payload.  A JSON sidecar ``<path>.json`` holds the model
configuration and vocabulary so a checkpoint can be reloaded on its own.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .network import JstarModel

_DTYPE = "f32"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    lines, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name may not contain whitespace: {name!r}")
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        shape = ",".join(str(d) for d in np.shape(arr)) or "-"
        lines.append(f"{name} {_DTYPE} {shape} {offset}")
        chunks.append(buf)
        offset += len(buf)
    header = ("\n".join(lines) + "\n\n").encode("utf-8")
    Path(path).write_bytes(header + b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise CheckpointError(f"{path}: missing header terminator")
    payload = raw[sep + 2:]
    out: dict[str, np.ndarray] = {}
    header = raw[:sep].decode("utf-8")
    for lineno, line in enumerate(header.splitlines() if header else [], 1):
        parts = line.split(" ")
        if len(parts) != 4 or parts[1] != _DTYPE:
            raise CheckpointError(f"{path}: bad header line {lineno}: {line!r}")
        name, _, shape_s, off_s = parts
        shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split(","))
        offset = int(off_s)
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: tensor {name} runs past end of payload")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset)
        out[name] = arr.reshape(shape).astype(np.float32)
    return out


def save_model(path, model: JstarModel, vocab: list[str] | None = None, extra: dict | None = None) -> None:
    save_checkpoint(path, model.state_dict())
    meta = {"config": model.config.to_dict(), "vocab": vocab, **(extra or {})}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))


def load_meta(path) -> dict:
    side = Path(str(path) + ".json")
    if not side.exists():
        raise CheckpointError(f"{path}: missing sidecar {side.name}")
    return json.loads(side.read_text())


def load_model(path) -> tuple[JstarModel, dict]:
    meta = load_meta(path)
    model = JstarModel(ModelConfig.from_dict(meta["config"]))
    model.load_state_dict(load_checkpoint(path))
    return model.eval(), meta
