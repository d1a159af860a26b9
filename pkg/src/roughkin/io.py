"""Binary dumps and CSV helpers.

RKRP1 (rough path): header ``<5sQQd`` = magic, dim, n_steps, p, followed by
level1 (n_steps x dim) and level2 (n_steps x dim x dim), little-endian
float64, row-major.  The header carries no time interval; loaders take it as
an argument.

RKKS1 (kinetic state): magic, ndim (uint64), the shape (ndim x uint64), then
the F values as little-endian float64, row-major.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .rough_path import GeometricRoughPath, RoughPathError, TimeGrid

RP_MAGIC = b"RKRP1"
KS_MAGIC = b"RKKS1"
_RP_HEADER = struct.Struct("<5sQQd")
_U64 = struct.Struct("<Q")


class DumpFormatError(ValueError):
    pass


def write_rough_path(path, rp: GeometricRoughPath) -> None:
    with open(path, "wb") as fh:
        fh.write(_RP_HEADER.pack(RP_MAGIC, rp.dim, rp.n_steps, rp.p))
        fh.write(np.ascontiguousarray(rp.level1, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(rp.level2, dtype="<f8").tobytes())


def read_rough_path(path, t0: float = 0.0, t1: float = 1.0) -> GeometricRoughPath:
    raw = Path(path).read_bytes()
    if len(raw) < _RP_HEADER.size:
        raise DumpFormatError(f"{path}: truncated header")
    magic, dim, n, p = _RP_HEADER.unpack_from(raw)
    if magic != RP_MAGIC:
        raise DumpFormatError(f"{path}: bad magic {magic!r}")
    n1, n2 = n * dim, n * dim * dim
    body = np.frombuffer(raw, dtype="<f8", offset=_RP_HEADER.size)
    if body.size != n1 + n2:
        raise DumpFormatError(f"{path}: expected {n1 + n2} values, found {body.size}")
    try:
        grid = TimeGrid(t0, t1, int(n))
        return GeometricRoughPath(
            grid, body[:n1].reshape(n, dim).copy(), body[n1:].reshape(n, dim, dim).copy(), p
        )
    except RoughPathError as exc:
        raise DumpFormatError(f"{path}: {exc}") from exc


def write_kinetic(path, F) -> None:
    F = np.ascontiguousarray(F, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(KS_MAGIC)
        fh.write(_U64.pack(F.ndim))
        for d in F.shape:
            fh.write(_U64.pack(d))
        fh.write(F.tobytes())


def read_kinetic(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:5] != KS_MAGIC:
        raise DumpFormatError(f"{path}: bad magic {raw[:5]!r}")
    (ndim,) = _U64.unpack_from(raw, 5)
    shape = tuple(_U64.unpack_from(raw, 13 + 8 * i)[0] for i in range(ndim))
    body = np.frombuffer(raw, dtype="<f8", offset=13 + 8 * ndim)
    if body.size != int(np.prod(shape)):
        raise DumpFormatError(f"{path}: expected shape {shape}, found {body.size} values")
    return body.reshape(shape).copy()


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_path_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``t, component...`` CSV with a header row; returns (t, values)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise DumpFormatError(f"{path}: need a time column and at least one component")
    return data[:, 0], data[:, 1:]
