"""Binary grid dumps (PSGF).

Layout, little-endian::

    4s   magic  b"PSGF"
    u32  version
    u32  n
    u32  N
    u32  placement tag (kind | first direction << 8 | second direction << 16)
    u64  value count
    f64  values in enumeration order
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .calculus import GridFunction
from .mesh import Mesh, MeshSpec, Placement

MAGIC = b"PSGF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIQ")
_KINDS = {"primal": 0, "dual": 1, "dual2": 2, "boundary": 3, "closure": 4}


class GridFormatError(ValueError):
    pass


def placement_tag(placement: Placement) -> int:
    kind = placement.kind
    if kind not in _KINDS:
        raise GridFormatError(f"placement {placement} cannot be stored")
    dirs = list(placement.directions) + [0, 0]
    return _KINDS[kind] | dirs[0] << 8 | dirs[1] << 16


def placement_from_tag(tag: int, n: int) -> Placement:
    kind = {v: k for k, v in _KINDS.items()}.get(tag & 0xFF)
    d1, d2 = (tag >> 8) & 0xFF, (tag >> 16) & 0xFF
    if kind is None:
        raise GridFormatError(f"unknown placement tag {tag}")
    return {
        "primal": lambda: Placement.primal(n),
        "closure": lambda: Placement.closure(n),
        "dual": lambda: Placement.dual(n, d1),
        "dual2": lambda: Placement.dual2(n, d1, d2),
        "boundary": lambda: Placement.boundary(n, d1),
    }[kind]()


def dumps(u: GridFunction) -> bytes:
    values = np.ascontiguousarray(u.values, dtype="<f8").ravel()
    head = _HEADER.pack(MAGIC, VERSION, u.mesh.n, u.mesh.N, placement_tag(u.placement), values.size)
    return head + values.tobytes()


def loads(data: bytes) -> GridFunction:
    if len(data) < _HEADER.size:
        raise GridFormatError("truncated header")
    magic, version, n, N, tag, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise GridFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise GridFormatError(f"unsupported version {version}")
    body = data[_HEADER.size:]
    if len(body) != 8 * count:
        raise GridFormatError(f"expected {count} values, found {len(body) // 8}")
    mesh = Mesh(MeshSpec(int(n), int(N)))
    values = np.frombuffer(body, dtype="<f8").astype(float)
    return GridFunction(mesh, placement_from_tag(tag, int(n)), values)


def write(path, u: GridFunction) -> Path:
    path = Path(path)
    path.write_bytes(dumps(u))
    return path


def read(path) -> GridFunction:
    return loads(Path(path).read_bytes())
