"""CSV tables, legacy VTK files and run manifests."""
from __future__ import annotations

import csv
import dataclasses
import math
import platform
import sys
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..mesh import Mesh

__all__ = ["export_csv", "read_csv", "export_vtk", "write_manifest"]


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return "nan"
    if isinstance(value, str):
        return value
    return "%.12e" % float(value)


def export_csv(rows: Sequence, path, header: Sequence[str] | None = None) -> Path:
    """Write dataclass rows (or mappings) with a fixed header order.

    Floats are written as ``%.12e``; ``header`` is required when ``rows`` is
    empty unless the row type can be inferred.
    """
    path = Path(path)
    if header is None:
        if not rows:
            raise ValueError("header required for an empty table")
        first = rows[0]
        header = [f.name for f in dataclasses.fields(first)] if dataclasses.is_dataclass(first) else list(first)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                record = dataclasses.asdict(row) if dataclasses.is_dataclass(row) else dict(row)
                writer.writerow([_fmt(record[name]) for name in header])
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc
    return path


def _parse(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def read_csv(path) -> tuple[list[str], list[list]]:
    """Read a table written by :func:`export_csv`.

    Numeric cells come back as floats, anything else as the original string.
    """
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [[_parse(v) for v in row] for row in reader]


def export_vtk(
    mesh: Mesh,
    path,
    point_data: Mapping[str, np.ndarray] | None = None,
    cell_data: Mapping[str, np.ndarray] | None = None,
    title: str = "fosls output",
) -> Path:
    """Legacy ASCII VTK unstructured grid of triangles (cell type 5)."""
    path = Path(path)
    point_data = point_data or {}
    cell_data = cell_data or {}
    nv, nt = mesh.n_vertices, mesh.n_triangles
    lines = ["# vtk DataFile Version 2.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {nv} double")
    lines += ["%.16e %.16e 0.0" % (x, y) for x, y in mesh.vertices]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += ["3 %d %d %d" % tuple(t) for t in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt

    def block(kind, count, data):
        if not data:
            return
        lines.append(f"{kind} {count}")
        for name, values in data.items():
            values = np.asarray(values, dtype=float).ravel()
            if values.size != count:
                raise ValueError(f"{kind} field {name!r} has {values.size} values, expected {count}")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend("%.16e" % v for v in values)

    block("POINT_DATA", nv, point_data)
    block("CELL_DATA", nt, cell_data)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK {path}: {exc}") from exc
    return path


def write_manifest(path, config: Mapping[str, object], extra: Iterable[str] = ()) -> Path:
    """Plain-text record of the configuration and library versions."""
    import scipy

    from .. import __version__

    path = Path(path)
    lines = [
        f"fosls {__version__}",
        f"python {sys.version.split()[0]} ({platform.platform()})",
        f"numpy {np.__version__}",
        f"scipy {scipy.__version__}",
        "",
        "[config]",
    ]
    for key in sorted(config):
        value = config[key]
        if isinstance(value, float) and math.isfinite(value):
            value = repr(value)
        lines.append(f"{key} = {value}")
    lines.extend(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path
