"""PLY point-cloud I/O: ASCII and binary-little-endian vertex elements.

Only the x/y/z properties of the "vertex" element are consumed; other
properties are skipped. Elements listed before "vertex" can be skipped as
long as their properties are fixed-size.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

_TYPE_SIZES = {
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4,
    "float": 4, "float32": 4, "double": 8, "float64": 8,
}

_STRUCT_CODES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def read_ply(path) -> np.ndarray:
    """Read x, y, z of the vertex element as an (N, 3) float64 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise DataError(f"{path}: not a PLY file")
    end = data.find(b"\n", end) + 1
    header = data[:end].decode("ascii", errors="replace")
    body = data[end:]

    fmt = None
    elements = []  # (name, count, [(prop_name, type, is_list)])
    for line in header.splitlines():
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise DataError(f"{path}: property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], None, True))
            else:
                elements[-1][2].append((parts[2], parts[1], False))
    if fmt not in ("ascii", "binary_little_endian"):
        raise DataError(f"{path}: unsupported PLY format {fmt!r}")

    if fmt == "ascii":
        return _read_ascii(path, body, elements)
    return _read_binary(path, body, elements)


def _vertex_element(path, elements):
    for name, count, props in elements:
        if name == "vertex":
            names = [p[0] for p in props]
            if not {"x", "y", "z"} <= set(names):
                raise DataError(f"{path}: vertex element lacks x/y/z")
            return name, count, props
    raise DataError(f"{path}: no vertex element")


def _read_ascii(path, body, elements):
    _, count, props = _vertex_element(path, elements)
    lines = body.decode("ascii", errors="replace").splitlines()
    row_iter = iter(lines)
    # Skip rows of any elements preceding vertex.
    for name, n, eprops in elements:
        if name == "vertex":
            break
        for _ in range(n):
            next(row_iter, None)
    cols = {}
    col = 0
    for pname, _, is_list in props:
        if is_list:
            raise DataError(f"{path}: list property in vertex element")
        cols[pname] = col
        col += 1
    out = np.empty((count, 3), dtype=np.float64)
    for i in range(count):
        line = next(row_iter, None)
        if line is None:
            raise DataError(f"{path}: truncated vertex data")
        fields = line.split()
        try:
            out[i] = [float(fields[cols["x"]]), float(fields[cols["y"]]), float(fields[cols["z"]])]
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}: bad vertex row {i}") from exc
    return out


def _read_binary(path, body, elements):
    offset = 0
    for name, count, props in elements:
        stride = 0
        fields = {}
        for pname, ptype, is_list in props:
            if is_list:
                raise DataError(f"{path}: cannot skip list property in element {name!r}")
            fields[pname] = (stride, ptype)
            stride += _TYPE_SIZES[ptype]
        if name != "vertex":
            offset += stride * count
            continue
        if len(body) < offset + stride * count:
            raise DataError(f"{path}: truncated vertex data")
        block = np.frombuffer(body, dtype=np.uint8, count=count * stride,
                              offset=offset).reshape(count, stride)
        out = np.empty((count, 3), dtype=np.float64)
        for axis, pname in enumerate(("x", "y", "z")):
            if pname not in fields:
                raise DataError(f"{path}: vertex element lacks {pname}")
            off, ptype = fields[pname]
            size = _TYPE_SIZES[ptype]
            code = _STRUCT_CODES[ptype]
            out[:, axis] = block[:, off:off + size].copy().view(np.dtype(f"<{code}"))[:, 0]
        return out
    raise DataError(f"{path}: no vertex element")


def write_ply(path, coords: np.ndarray, binary: bool = True, double: bool = False) -> None:
    """Write points as a single vertex element (binary LE by default)."""
    coords = np.asarray(coords, dtype=np.float64)
    dtype = "double" if double else "float"
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(coords)}\n"
        f"property {dtype} x\n"
        f"property {dtype} y\n"
        f"property {dtype} z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(coords.astype("<f8" if double else "<f4").tobytes())
        else:
            for x, y, z in coords:
                fh.write(f"{x:g} {y:g} {z:g}\n".encode("ascii"))
