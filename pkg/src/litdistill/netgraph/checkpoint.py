"""LITM binary container for networks and tensor collections.

Layout (all integers little-endian)::

    b"LITM"                      magic
    u32  version                 currently 1
    u32  spec length, bytes      canonical spec JSON (length 0 for bare tensor files)
    u32  tensor count
    per tensor:
      u16  name length, bytes    UTF-8 name
      u8   dtype code            0 float32, 1 float64, 2 uint8, 3 int64
      u8   ndim
      u32  extent per dimension
      raw  little-endian data, row-major

Prune masks are stored as uint8 tensors named ``<parameter>#mask``.
"""

from __future__ import annotations

import io
import os
import struct
from typing import Dict, Optional, Tuple

import numpy as np

from .network import SegmentedNetwork
from .spec import NetworkSpec

MAGIC = b"LITM"
VERSION = 1
MASK_SUFFIX = "#mask"

_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2, np.dtype("<i8"): 3}
_DTYPES = {v: k for k, v in _CODES.items()}


class FormatError(ValueError):
    """A container file is malformed."""


def write_container(path, tensors: Dict[str, np.ndarray], spec: Optional[NetworkSpec] = None) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    spec_bytes = b"" if spec is None else spec.encode()
    buf.write(struct.pack("<II", VERSION, len(spec_bytes)))
    buf.write(spec_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if np.dtype(dt) not in _CODES:
            raise FormatError(f"{name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<BB", _CODES[np.dtype(dt)], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def read_container(path) -> Tuple[Optional[NetworkSpec], Dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated at byte {pos}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, spec_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    spec = NetworkSpec.decode(bytes(take(spec_len))) if spec_len else None
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code} for {name}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(bytes(take(nbytes)), dtype=dt).reshape(shape).copy()
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return spec, tensors


def save_network(net: SegmentedNetwork, path) -> None:
    tensors = dict(net.state())
    for name, p in net.parameters.items():
        if p.prune_mask is not None:
            tensors[name + MASK_SUFFIX] = p.prune_mask.astype(np.uint8)
    write_container(path, tensors, net.spec)


def load_network(path) -> SegmentedNetwork:
    spec, tensors = read_container(path)
    if spec is None:
        raise FormatError(f"{path}: no network spec in container")
    from .network import build_network

    first = next((a for n, a in tensors.items() if not n.endswith(MASK_SUFFIX)), None)
    dtype = first.dtype.type if first is not None else None
    net = build_network(spec, seed=0, dtype=dtype)
    expected = set(net.state())
    stored = {n for n in tensors if not n.endswith(MASK_SUFFIX)}
    if stored != expected:
        diff = sorted(stored ^ expected)
        raise FormatError(f"{path}: tensors do not match the spec: {diff[:3]}")
    for name, arr in net.state().items():
        if arr.shape != tensors[name].shape:
            raise FormatError(f"{path}: {name} has shape {tensors[name].shape}, expected {arr.shape}")
        arr[...] = tensors[name]
    for name, p in net.parameters.items():
        mask = tensors.get(name + MASK_SUFFIX)
        if mask is not None:
            p.prune_mask = mask.astype(p.data.dtype)
    return net
