"""Self-describing array container used for models, realizations and image caches.

Layout::

    TTFSNET <kind> <version>
    meta <key> <value>
    array <name> <dim0>x<dim1>...
    END
    <little-endian float64 payload, arrays concatenated in header order, row-major>

The header is plain ASCII so a file can be inspected with ``head``.
"""
from __future__ import annotations

import os
from typing import Mapping

import numpy as np

MAGIC = "TTFSNET"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Raised when a container file cannot be parsed; ``section`` names the failing part."""

    def __init__(self, section: str, message: str):
        super().__init__(f"[{section}] {message}")
        self.section = section


def write_container(path, kind: str, arrays: Mapping[str, np.ndarray],
                    meta: Mapping[str, str] | None = None) -> None:
    lines = [f"{MAGIC} {kind} {FORMAT_VERSION}"]
    for key, value in (meta or {}).items():
        value = str(value)
        if not key or any(c.isspace() for c in key) or "\n" in value:
            raise ValueError(f"invalid meta entry {key!r}")
        lines.append(f"meta {key} {value}")
    payload = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        shape = "x".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
        lines.append(f"array {name} {shape}")
        payload.append(arr.tobytes())
    lines.append("END")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for chunk in payload:
            fh.write(chunk)
    os.replace(tmp, path)


def read_container(path, kind: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def next_line(section):
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise ContainerError(section, "unexpected end of header")
        line = data[pos:end]
        pos = end + 1
        try:
            return line.decode("ascii")
        except UnicodeDecodeError:
            raise ContainerError(section, "header is not ASCII") from None

    first = next_line("header").split()
    if len(first) != 3 or first[0] != MAGIC:
        raise ContainerError("header", "bad magic")
    if first[1] != kind:
        raise ContainerError("header", f"expected kind {kind!r}, found {first[1]!r}")
    if first[2] != str(FORMAT_VERSION):
        raise ContainerError("header", f"unsupported version {first[2]}")

    meta: dict[str, str] = {}
    specs: list[tuple[str, tuple[int, ...]]] = []
    while True:
        line = next_line("header")
        if line == "END":
            break
        parts = line.split(" ", 2)
        if parts[0] == "meta" and len(parts) == 3:
            meta[parts[1]] = parts[2]
        elif parts[0] == "array" and len(parts) == 3:
            try:
                shape = () if parts[2] == "scalar" else tuple(int(d) for d in parts[2].split("x"))
            except ValueError:
                raise ContainerError(parts[1], f"bad shape {parts[2]!r}") from None
            if any(d < 0 for d in shape):
                raise ContainerError(parts[1], f"bad shape {parts[2]!r}")
            specs.append((parts[1], shape))
        else:
            raise ContainerError("header", f"unrecognised line {line!r}")

    arrays: dict[str, np.ndarray] = {}
    for name, shape in specs:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise ContainerError(name, f"truncated payload ({len(data) - pos} of {nbytes} bytes)")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise ContainerError("payload", f"{len(data) - pos} trailing bytes")
    return meta, arrays
