"""Structured-text document primitives shared by checkpoint and optimizer state.

The on-disk layout is deliberately plain: named sections, one matrix row per
line, floats written with ``repr`` so every value round-trips bit-exactly.
"""

import json
from typing import IO

import numpy as np

from .errors import CheckpointCorruptError


def write_kv_block(f: IO[str], name: str, mapping: dict) -> None:
    """Write a ``name { key = json-value }`` block."""
    f.write(f"{name} {{\n")
    for key, value in mapping.items():
        f.write(f"  {key} = {json.dumps(value)}\n")
    f.write("}\n")


def write_array(f: IO[str], name: str, arr: np.ndarray) -> None:
    """Write a 1-D or 2-D array section in row-major decimal text."""
    arr = np.asarray(arr)
    kind = "int" if np.issubdtype(arr.dtype, np.integer) else "float"
    if arr.ndim == 1:
        f.write(f"array {name} {kind} 1 {arr.shape[0]}\n")
        rows = [arr]
    elif arr.ndim == 2:
        f.write(f"array {name} {kind} {arr.shape[0]} {arr.shape[1]}\n")
        rows = list(arr)
    else:
        raise ValueError(f"only 1-D/2-D arrays are serializable, got shape {arr.shape}")
    for row in rows:
        if kind == "int":
            f.write(" ".join(str(int(v)) for v in row))
        else:
            f.write(" ".join(repr(float(v)) for v in row))
        f.write("\n")


class DocReader:
    """Sequential reader for the section format written above."""

    def __init__(self, f: IO[str]):
        self._lines = f.read().splitlines()
        self._pos = 0

    def _next_line(self) -> str:
        if self._pos >= len(self._lines):
            raise CheckpointCorruptError("unexpected end of file")
        line = self._lines[self._pos]
        self._pos += 1
        return line

    def at_end(self) -> bool:
        return self._pos >= len(self._lines)

    def read_line(self) -> str:
        return self._next_line()

    def peek_word(self) -> str:
        if self.at_end():
            return ""
        parts = self._lines[self._pos].split(maxsplit=1)
        return parts[0] if parts else ""

    def read_kv_block(self, name: str) -> dict:
        header = self._next_line().strip()
        if header != f"{name} {{":
            raise CheckpointCorruptError(f"expected '{name} {{' block, got {header!r}")
        mapping = {}
        while True:
            line = self._next_line().strip()
            if line == "}":
                return mapping
            if "=" not in line:
                raise CheckpointCorruptError(f"malformed key-value line {line!r}")
            key, _, raw = line.partition("=")
            try:
                mapping[key.strip()] = json.loads(raw.strip())
            except json.JSONDecodeError as exc:
                raise CheckpointCorruptError(f"bad value for {key.strip()!r}: {exc}") from exc

    def read_array(self, name: str | None = None) -> tuple[str, np.ndarray]:
        header = self._next_line().split()
        if len(header) != 5 or header[0] != "array":
            raise CheckpointCorruptError(f"expected array header, got {' '.join(header)!r}")
        _, found, kind, rows_s, cols_s = header
        if name is not None and found != name:
            raise CheckpointCorruptError(f"expected array {name!r}, found {found!r}")
        try:
            rows, cols = int(rows_s), int(cols_s)
        except ValueError as exc:
            raise CheckpointCorruptError(f"bad array dimensions in {' '.join(header)!r}") from exc
        if kind not in ("int", "float"):
            raise CheckpointCorruptError(f"unknown array kind {kind!r}")
        dtype = np.int64 if kind == "int" else np.float64
        out = np.empty((rows, cols), dtype=dtype)
        for r in range(rows):
            parts = self._next_line().split()
            if len(parts) != cols:
                raise CheckpointCorruptError(
                    f"array {found!r} row {r} has {len(parts)} values, expected {cols}"
                )
            try:
                out[r] = [int(p) for p in parts] if kind == "int" else [float(p) for p in parts]
            except ValueError as exc:
                raise CheckpointCorruptError(f"unparseable number in array {found!r}") from exc
        return found, out

    def expect_line(self, expected: str) -> None:
        line = self._next_line().strip()
        if line != expected:
            raise CheckpointCorruptError(f"expected {expected!r}, got {line!r}")
