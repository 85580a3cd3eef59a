"""Binary checkpoint format.

Layout: 8-byte magic, uint32 format version, uint64 header length, UTF-8 JSON
header, raw little-endian float64 payloads, then a 32-byte SHA-256 of
everything before it. The header lists every array with its offset and shape.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import BitConfig
from .numcore import DTYPE, OptState, ParamStore
from .pretrain import TrainState

MAGIC = b"BITCKPT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST_LEN = 32


class CheckpointError(ValueError):
    pass


def _pack_arrays(groups: dict[str, dict[str, torch.Tensor]]) -> tuple[list[dict], bytes]:
    index, chunks, offset = [], [], 0
    for group, arrays in groups.items():
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name].detach().numpy(), dtype="<f8")
            raw = a.tobytes()
            index.append({"group": group, "name": name, "shape": list(a.shape), "dtype": "<f8",
                          "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    return index, b"".join(chunks)


def dumps(state: TrainState, cfg: BitConfig, extra: dict | None = None) -> bytes:
    index, payload = _pack_arrays({
        "params": dict(state.params.items()),
        "adam_m": state.opt.m,
        "adam_v": state.opt.v,
    })
    header = {
        "model": cfg.to_dict(),
        "step": state.step,
        "opt_step": state.opt.step,
        "seed": state.seed,
        "config_digest": state.config_digest,
        "frozen": sorted(state.params.frozen),
        "arrays": index,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + payload
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes) -> tuple[TrainState, BitConfig, dict]:
    """Parse a checkpoint; every failure raises CheckpointError before any state is built."""
    if len(blob) < _PREFIX.size + _DIGEST_LEN:
        raise CheckpointError("checkpoint truncated: shorter than its fixed header")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (this build reads version "
                              f"{FORMAT_VERSION})")
    body, digest = blob[:-_DIGEST_LEN], blob[-_DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint truncated or corrupted: checksum mismatch")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    payload = body[start + hlen:]
    groups: dict[str, dict[str, torch.Tensor]] = {"params": {}, "adam_m": {}, "adam_v": {}}
    for item in header["arrays"]:
        lo, hi = item["offset"], item["offset"] + item["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"array {item['name']} runs past the end of the payload")
        arr = np.frombuffer(payload[lo:hi], dtype="<f8").reshape(item["shape"]).astype(np.float64)
        groups[item["group"]][item["name"]] = torch.from_numpy(arr).to(DTYPE)
    params = ParamStore(groups["params"], set(header["frozen"]))
    opt = OptState(groups["adam_m"], groups["adam_v"], header["opt_step"])
    state = TrainState(params, opt, header["step"], header["seed"], header["config_digest"])
    return state, BitConfig.from_dict(header["model"]), header["extra"]


def save(path: str | Path, state: TrainState, cfg: BitConfig, extra: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(state, cfg, extra))
    tmp.replace(path)


def load(path: str | Path) -> tuple[TrainState, BitConfig, dict]:
    return loads(Path(path).read_bytes())
