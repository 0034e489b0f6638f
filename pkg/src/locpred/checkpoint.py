"""Single-file model checkpoints.

Layout:

    offset  size        content
    0       8           magic b"LDVP0001"
    8       4           u32 little-endian, header byte length
    12      header_len  UTF-8 JSON: {"model", "config", "params"}
    ...     8 * total   raw little-endian float64 parameter values,
                        concatenated in declaration order

``params`` in the header lists [name, shape] pairs in the same order, so a
reader can locate any tensor without knowing the architecture code.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .models import build_model

MAGIC = b"LDVP0001"


def save_checkpoint(model, path) -> None:
    params = model.named_parameters()
    header = {
        "model": model.kind,
        "config": model.config.to_dict(),
        "params": [[name, list(p.data.shape)] for name, p in params],
    }
    payload = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for _, p in params:
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild the model and restore its parameters bit-exactly."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4:
        raise ValueError(f"checkpoint {path}: truncated before header")
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"checkpoint {path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    body_start = len(MAGIC) + 4 + header_len
    if len(blob) < body_start:
        raise ValueError(f"checkpoint {path}: truncated inside header")
    try:
        header = json.loads(blob[len(MAGIC) + 4 : body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"checkpoint {path}: corrupt header ({exc})") from exc

    model = build_model(header["model"], header["config"])
    params = model.named_parameters()
    declared = [[name, list(p.data.shape)] for name, p in params]
    if declared != header["params"]:
        raise ValueError(
            f"checkpoint {path}: parameter table mismatch; file has {header['params']}, "
            f"model expects {declared}"
        )
    total = sum(p.data.size for _, p in params)
    expected = body_start + 8 * total
    if len(blob) != expected:
        raise ValueError(
            f"checkpoint {path}: payload is {len(blob) - body_start} bytes, expected {8 * total}"
        )
    offset = body_start
    for _, p in params:
        count = p.data.size
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        p.data = values.reshape(p.data.shape).astype(np.float64)
        offset += 8 * count
    return model
