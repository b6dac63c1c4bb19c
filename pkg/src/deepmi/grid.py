"""Immutable 2-D sample grids with a declared dynamic range, plus PGM/CSV I/O."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GridError(ValueError):
    """Base class for grid construction and I/O failures."""


class UnsupportedFormat(GridError):
    pass


class MalformedHeader(GridError):
    pass


class UnsupportedMaxval(GridError):
    pass


class Truncated(GridError):
    pass


class RangeError(GridError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    """Row-major real image with a dynamic range ``[range_min, range_max]``.

    ``data`` is stored as a read-only float64 array of shape ``(height, width)``.
    Samples outside the range are clamped when ``clamp`` is true and rejected
    otherwise. Non-finite samples are always rejected.
    """

    data: np.ndarray
    range_min: float = 0.0
    range_max: float = 255.0
    clamp: bool = field(default=True, repr=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise GridError(f"grid data must be a non-empty 2-D array, got shape {arr.shape}")
        lo, hi = float(self.range_min), float(self.range_max)
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise RangeError(f"degenerate range [{lo}, {hi}]")
        if not np.all(np.isfinite(arr)):
            raise GridError("grid contains non-finite samples")
        if self.clamp:
            np.clip(arr, lo, hi, out=arr)
        elif arr.min() < lo or arr.max() > hi:
            raise RangeError(f"samples outside [{lo}, {hi}] and clamping disabled")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "range_min", lo)
        object.__setattr__(self, "range_max", hi)

    @classmethod
    def from_flat(cls, width: int, height: int, samples, range_min=0.0, range_max=255.0, clamp=True):
        flat = np.asarray(samples, dtype=np.float64).ravel()
        if flat.size != width * height:
            raise GridError(f"expected {width * height} samples, got {flat.size}")
        return cls(flat.reshape(height, width), range_min, range_max, clamp)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def value_range(self) -> tuple[float, float]:
        return (self.range_min, self.range_max)

    def replace(self, data) -> "Grid":
        """New grid with the same range and ``data`` clamped into it."""
        return Grid(data, self.range_min, self.range_max)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (self.value_range == other.value_range
                and self.shape == other.shape
                and np.array_equal(self.data, other.data))

    __hash__ = None


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MalformedHeader("unexpected end of PGM header")
    return buf[start:pos], pos


def load_pgm(path) -> Grid:
    """Read a binary (P5) 8-bit PGM into a Grid with range [0, 255]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    buf = path.read_bytes()
    if buf[:2] != b"P5":
        raise UnsupportedFormat(f"{path}: expected magic 'P5', got {buf[:2]!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise MalformedHeader(f"{path}: non-integer header field {tok!r}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MalformedHeader(f"{path}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxval(f"{path}: maxval {maxval} (only 255 is supported)")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise MalformedHeader(f"{path}: missing whitespace after header")
    pos += 1
    payload = buf[pos:pos + width * height]
    if len(payload) < width * height:
        raise Truncated(f"{path}: payload has {len(payload)} bytes, expected {width * height}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return Grid(data.astype(np.float64), 0.0, 255.0)


def to_bytes(grid: Grid) -> np.ndarray:
    """Quantize to uint8 with round-half-up."""
    return np.floor(grid.data + 0.5).clip(0, 255).astype(np.uint8)


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_pgm(grid: Grid, path) -> None:
    if grid.value_range != (0.0, 255.0):
        raise RangeError(f"PGM output requires range [0, 255], got {list(grid.value_range)}")
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + to_bytes(grid).tobytes())


def format_csv(matrix, header=None, fmt="%.17g") -> str:
    """Comma-separated rows joined by '\\n'; a header line only if given."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    lines = [] if header is None else [",".join(header)]
    lines.extend(",".join(fmt % v for v in row) for row in m)
    return "\n".join(lines) + "\n"


def write_csv(matrix, path, header=None, fmt="%.17g") -> None:
    atomic_write_bytes(path, format_csv(matrix, header, fmt).encode("ascii"))
