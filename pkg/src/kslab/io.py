"""Binary snapshot formats and CSV emission with config provenance."""

from __future__ import annotations

import csv
import struct

import numpy as np

from .errors import FormatError
from .particles import ParticleEnsemble
from .pde import GridField

SNAPSHOT_MAGIC = b"KSPC"
FIELD_MAGIC = b"KSFD"
FORMAT_VERSION = 1


def write_snapshot(path, ensemble: ParticleEnsemble) -> None:
    """Header {magic, version u32, d u32, N u64, t f64} then row-major f64 LE."""
    pos = np.ascontiguousarray(ensemble.positions, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<IIQd", FORMAT_VERSION, pos.shape[1], pos.shape[0], ensemble.t))
        fh.write(pos.tobytes())


def read_snapshot(path) -> ParticleEnsemble:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise FormatError(f"bad snapshot magic {magic!r}")
        version, d, n, t = struct.unpack("<IIQd", fh.read(24))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported snapshot version {version}")
        data = np.frombuffer(fh.read(8 * n * d), dtype="<f8")
        if data.size != n * d:
            raise FormatError("snapshot payload truncated")
    return ParticleEnsemble(data.reshape(n, d).copy(), t)


def write_field(path, field: GridField) -> None:
    """Header {magic, version u32, d u32, n u32, L f64, t f64} then f64 LE values."""
    vals = np.ascontiguousarray(field.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<IIIdd", FORMAT_VERSION, field.d, field.n, field.L, field.t))
        fh.write(vals.tobytes())


def read_field(path) -> GridField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FIELD_MAGIC:
            raise FormatError(f"bad field magic {magic!r}")
        version, d, n, L, t = struct.unpack("<IIIdd", fh.read(28))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported field version {version}")
        data = np.frombuffer(fh.read(8 * n**d), dtype="<f8")
        if data.size != n**d:
            raise FormatError("field payload truncated")
    return GridField(L, data.reshape((n,) * d).copy(), t)


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path, header, rows, provenance=None) -> None:
    """CSV with a leading comment block echoing the exact run configuration."""
    with open(path, "w", newline="") as fh:
        if provenance:
            for line in provenance.strip().splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def trajectory_rows(snapshots):
    """Rows (t, i, x_1..x_d) across a list of ensembles."""
    for snap in snapshots:
        for i, x in enumerate(snap.positions):
            yield [snap.t, i] + list(x)


def field_linecut_rows(field: GridField, axis: int = 0):
    """Values along the given axis through the box center."""
    coords = field.axis_coords()
    center = field.n // 2
    idx = [center] * field.d
    for k in range(field.n):
        idx[axis] = k
        yield [axis, coords[k], float(field.values[tuple(idx)])]


def mass_table_rows(r, mass):
    for rr, mm in zip(r, mass):
        yield [rr, mm]
