"""Checkpoints: named tensors in one flat binary file with a JSON header.

Layout:
  bytes 0..8    little-endian uint64 = header byte length L
  bytes 8..8+L  UTF-8 JSON: format tag, version, user meta, tensor table
  data section  starts at the first 64-byte boundary at or after 8+L;
                each tensor's offset (relative to the section start) is
                64-byte aligned, raw little-endian bytes, C order.

The header's tensor table rows are {name, dtype, shape, offset, nbytes}.
Readers reject unknown versions and truncated files.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from .errors import CheckpointError

FORMAT_TAG = "deocclusion-checkpoint"
FORMAT_VERSION = 1
ALIGN = 64

_DTYPES = {"<f4", "<f8", "<i4", "<i8", "<u1"}


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def _to_numpy(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        arr = t.detach().cpu().numpy()
    else:
        arr = np.asarray(t)
    arr = np.ascontiguousarray(arr)
    code = arr.dtype.newbyteorder("<").str
    if code not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")
    return arr.astype(code, copy=False)


def save_checkpoint(path: str, tensors: dict, meta: dict | None = None) -> None:
    """Write named tensors plus a JSON-serializable meta dict."""
    arrays = {name: _to_numpy(t) for name, t in tensors.items()}
    table = []
    offset = 0
    for name in sorted(arrays):
        arr = arrays[name]
        offset = _align(offset)
        table.append(
            {
                "name": name,
                "dtype": arr.dtype.newbyteorder("<").str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": int(arr.nbytes),
            }
        )
        offset += arr.nbytes
    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    data_start = _align(8 + len(header_bytes))
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        f.write(b"\0" * (data_start - 8 - len(header_bytes)))
        pos = 0
        for row in table:
            f.write(b"\0" * (row["offset"] - pos))
            f.write(arrays[row["name"]].tobytes())
            pos = row["offset"] + row["nbytes"]
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[dict[str, torch.Tensor], dict]:
    """Read back (tensors, meta); tensors come out as torch tensors."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < 8:
        raise CheckpointError(f"{path}: too short to hold a header length")
    header_len = int.from_bytes(blob[:8], "little")
    if 8 + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: header is not valid JSON: {e}") from e
    if header.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: not a {FORMAT_TAG} file")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    data_start = _align(8 + header_len)
    tensors: dict[str, torch.Tensor] = {}
    for row in header["tensors"]:
        dtype = row["dtype"]
        if dtype not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {row['name']} has bad dtype {dtype}")
        begin = data_start + int(row["offset"])
        end = begin + int(row["nbytes"])
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated data for tensor {row['name']}")
        arr = np.frombuffer(blob[begin:end], dtype=np.dtype(dtype)).reshape(row["shape"]).copy()
        tensors[row["name"]] = torch.from_numpy(arr)
    return tensors, dict(header.get("meta", {}))
