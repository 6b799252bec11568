"""Minimal binary little-endian PLY container.

Elements are (name, structured-array) pairs; property types cover the subset
this project serializes: double, float, int, uint, uchar. The checkpoint and
LiDAR formats ride on this module.
"""
from __future__ import annotations

import os

import numpy as np

from .errors import InvalidInputError

_PLY_TYPES = {
    "double": "<f8",
    "float": "<f4",
    "int": "<i4",
    "uint": "<u4",
    "uchar": "u1",
}
_NUMPY_TO_PLY = {np.dtype(v): k for k, v in _PLY_TYPES.items()}


def write_ply(path: str | os.PathLike, elements: list[tuple[str, np.ndarray]], comments=()) -> None:
    """Write named structured arrays as a binary_little_endian PLY file."""
    lines = ["ply", "format binary_little_endian 1.0"]
    for c in comments:
        lines.append(f"comment {c}")
    for name, arr in elements:
        if arr.dtype.names is None:
            raise InvalidInputError(f"element {name}: expected a structured array")
        lines.append(f"element {name} {len(arr)}")
        for prop in arr.dtype.names:
            base = arr.dtype[prop]
            ply_t = _NUMPY_TO_PLY.get(base.newbyteorder("<") if base.byteorder == ">" else base)
            if ply_t is None:
                raise InvalidInputError(f"element {name}.{prop}: unsupported dtype {base}")
            lines.append(f"property {ply_t} {prop}")
    lines.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, arr in elements:
            f.write(arr.tobytes())


def read_ply(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read a binary little-endian PLY written by write_ply (or compatible)."""
    with open(path, "rb") as f:
        header = []
        while True:
            line = f.readline()
            if not line:
                raise InvalidInputError(f"{path}: unterminated PLY header")
            line = line.decode("ascii", "replace").strip()
            header.append(line)
            if line == "end_header":
                break
        if not header or header[0] != "ply":
            raise InvalidInputError(f"{path}: not a PLY file")

        elements: list[tuple[str, int, list[tuple[str, str]]]] = []
        fmt_ok = False
        for line in header[1:]:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format":
                if parts[1] != "binary_little_endian":
                    raise InvalidInputError(f"{path}: unsupported format {parts[1]}")
                fmt_ok = True
            elif parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if parts[1] == "list":
                    raise InvalidInputError(f"{path}: list properties unsupported")
                if parts[1] not in _PLY_TYPES:
                    raise InvalidInputError(f"{path}: unsupported property type {parts[1]}")
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        if not fmt_ok:
            raise InvalidInputError(f"{path}: missing format line")

        out: dict[str, np.ndarray] = {}
        for name, count, props in elements:
            dtype = np.dtype(props)
            raw = f.read(dtype.itemsize * count)
            if len(raw) != dtype.itemsize * count:
                raise InvalidInputError(
                    f"{path}: element {name} truncated "
                    f"({len(raw)} of {dtype.itemsize * count} bytes)"
                )
            out[name] = np.frombuffer(raw, dtype=dtype).copy()
        return out


def pack_named_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    """Serialize named ndarrays into a flat blob with a shape header.

    Layout per entry: name_len(u2) name dtype_len(u1) dtype ndim(u1)
    shape(u8 each) raw bytes. Deterministic: entries in insertion order.
    """
    chunks = [np.uint32(len(arrays)).tobytes()]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        nb = name.encode("utf-8")
        dt = arr.dtype.str.encode("ascii")
        chunks.append(np.uint16(len(nb)).tobytes())
        chunks.append(nb)
        chunks.append(np.uint8(len(dt)).tobytes())
        chunks.append(dt)
        chunks.append(np.uint8(arr.ndim).tobytes())
        chunks.append(np.asarray(arr.shape, dtype="<u8").tobytes())
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def unpack_named_arrays(blob: bytes) -> dict[str, np.ndarray]:
    """Inverse of pack_named_arrays."""
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise InvalidInputError("named-array blob truncated")
        piece = blob[off : off + n]
        off += n
        return piece

    count = int(np.frombuffer(take(4), dtype=np.uint32)[0])
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        nlen = int(np.frombuffer(take(2), dtype=np.uint16)[0])
        name = take(nlen).decode("utf-8")
        dlen = int(np.frombuffer(take(1), dtype=np.uint8)[0])
        dtype = np.dtype(take(dlen).decode("ascii"))
        ndim = int(np.frombuffer(take(1), dtype=np.uint8)[0])
        shape = tuple(np.frombuffer(take(8 * ndim), dtype="<u8").astype(int))
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if ndim else dtype.itemsize
        arr = np.frombuffer(take(nbytes), dtype=dtype).reshape(shape).copy()
        out[name] = arr
    return out
