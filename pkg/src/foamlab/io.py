"""Label-field file formats and CSV writers.

* ``p2``  : plain portable graymap, gray level = phase id, maxval = n_phases (2D)
* ``vtk`` : legacy ASCII STRUCTURED_POINTS with one integer scalar per voxel
* ``raw`` : ``FOAMLBL1`` little-endian snapshot (see :func:`write_raw`)
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .field import GridGeom, LabelField

MAGIC = b"FOAMLBL1"
FORMATS = ("p2", "vtk", "raw")
EXTENSIONS = {"p2": ".pgm", "vtk": ".vtk", "raw": ".raw"}


def format_p2(labels: np.ndarray, n_phases: int) -> str:
    """Plain-graymap text of a 2D label array (rows = axis 0)."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ConfigurationError("P2 export needs a 2D field")
    rows, cols = labels.shape
    lines = [f"P2\n{cols} {rows}\n{int(n_phases)}\n"]
    for row in labels:
        lines.append(" ".join(str(int(v)) for v in row) + "\n")
    return "".join(lines)


def write_p2(labels: LabelField | np.ndarray, path, n_phases: int | None = None) -> None:
    """Write a LabelField, or a bare label array with its ``n_phases``, as a plain graymap."""
    if isinstance(labels, LabelField):
        text = format_p2(labels.labels, labels.n_phases if n_phases is None else n_phases)
    else:
        if n_phases is None:
            n_phases = int(np.max(labels))
        text = format_p2(labels, n_phases)
    Path(path).write_text(text)


def read_p2(path, spacing=None) -> LabelField:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ConfigurationError(f"{path} is not a plain PGM file")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array(tokens[4 : 4 + rows * cols], dtype=np.int32).reshape(rows, cols)
    geom = GridGeom((rows, cols), spacing or (1.0, 1.0))
    return LabelField(geom, data, maxval)


def write_vtk(labels: LabelField, path) -> None:
    """Legacy ASCII structured points; axis 0 of the array is VTK's x."""
    geom = labels.geom
    dims = list(geom.dims) + [1] * (3 - geom.ndim)
    spacing = list(geom.spacing) + [1.0] * (3 - geom.ndim)
    origin = list(geom.origin) + [0.0] * (3 - geom.ndim)
    values = labels.labels.ravel(order="F")
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"foamlab phase labels n_phases={labels.n_phases}\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write("DIMENSIONS {} {} {}\n".format(*dims))
        fh.write("SPACING {} {} {}\n".format(*(repr(float(s)) for s in spacing)))
        fh.write("ORIGIN {} {} {}\n".format(*(repr(float(o)) for o in origin)))
        fh.write(f"POINT_DATA {values.size}\n")
        fh.write("SCALARS phase int 1\nLOOKUP_TABLE default\n")
        for start in range(0, values.size, 16):
            fh.write(" ".join(str(int(v)) for v in values[start : start + 16]) + "\n")


def read_vtk(path) -> LabelField:
    text = Path(path).read_text().split("\n")
    header = {}
    n_phases = None
    body_start = None
    for k, line in enumerate(text):
        parts = line.split()
        if not parts:
            continue
        if "n_phases=" in line:
            n_phases = int(line.split("n_phases=")[1].split()[0])
        if parts[0] in ("DIMENSIONS", "SPACING", "ORIGIN"):
            header[parts[0]] = parts[1:]
        if parts[0] == "LOOKUP_TABLE":
            body_start = k + 1
            break
    if body_start is None or "DIMENSIONS" not in header:
        raise ConfigurationError(f"{path} is not a structured-points file")
    dims = [int(v) for v in header["DIMENSIONS"]]
    spacing = [float(v) for v in header["SPACING"]]
    origin = [float(v) for v in header["ORIGIN"]]
    values = np.array(" ".join(text[body_start:]).split(), dtype=np.int32)
    d = 3 if dims[2] > 1 else 2
    data = values.reshape(dims, order="F")
    if d == 2:
        data = data[:, :, 0]
    geom = GridGeom(tuple(dims[:d]), tuple(spacing[:d]), tuple(origin[:d]))
    return LabelField(geom, data, n_phases or int(values.max()))


def write_raw(labels: LabelField, path) -> None:
    """``FOAMLBL1`` | u32 d | u32 dims[d] | f64 spacing[d] | u32 n_phases | u16 labels (C order).

    All little-endian. The grid origin is not stored; readers place cell
    ``(0, ..., 0)`` at ``spacing / 2``.
    """
    geom = labels.geom
    if labels.n_phases > np.iinfo(np.uint16).max:
        raise ConfigurationError("raw snapshots hold at most 65535 phases")
    d = geom.ndim
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", d))
        fh.write(struct.pack(f"<{d}I", *geom.dims))
        fh.write(struct.pack(f"<{d}d", *geom.spacing))
        fh.write(struct.pack("<I", labels.n_phases))
        fh.write(np.ascontiguousarray(labels.labels, dtype="<u2").tobytes(order="C"))


def read_raw(path) -> LabelField:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ConfigurationError(f"{path} is not a FOAMLBL1 snapshot")
    pos = 8
    (d,) = struct.unpack_from("<I", data, pos)
    pos += 4
    dims = struct.unpack_from(f"<{d}I", data, pos)
    pos += 4 * d
    spacing = struct.unpack_from(f"<{d}d", data, pos)
    pos += 8 * d
    (n_phases,) = struct.unpack_from("<I", data, pos)
    pos += 4
    count = int(np.prod(dims))
    labels = np.frombuffer(data, dtype="<u2", count=count, offset=pos).reshape(dims)
    return LabelField(GridGeom(tuple(dims), tuple(spacing)), labels.astype(np.int32), n_phases)


def export_labels(labels: LabelField, path, fmt: str) -> Path:
    path = Path(path)
    if fmt == "p2":
        write_p2(labels, path)
    elif fmt == "vtk":
        if labels.geom.ndim != 3:
            raise ConfigurationError("voxel-volume export needs a 3D field")
        write_vtk(labels, path)
    elif fmt == "raw":
        write_raw(labels, path)
    else:
        raise ConfigurationError(f"unknown format {fmt!r}; choose from {FORMATS}")
    return path


def import_labels(path) -> LabelField:
    path = Path(path)
    head = path.read_bytes()[:8]
    if head == MAGIC:
        return read_raw(path)
    if head.startswith(b"P2"):
        return read_p2(path)
    if head.startswith(b"# vtk"):
        return read_vtk(path)
    raise ConfigurationError(f"cannot tell the format of {path}")


def write_trace_csv(trace, n_phases: int, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "energy", "cells_changed"] + [f"vol_{i}" for i in range(1, n_phases + 1)])
        for row in trace.rows():
            w.writerow([row[0], repr(float(row[1]))] + list(row[2:]))


def write_ramp_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["leg", "volume_cells", "energy", "iters", "transition_flag"])
        for r in records:
            leg, vol, energy, iters, flag = r.row()
            w.writerow([leg, vol, repr(float(energy)), iters, flag])
