"""Result files: CSV fields, JSON summaries and legacy ASCII VTK."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import BathyoptError
from .fem import P0Field, P1Field, write_p0_csv, write_p1_csv
from .mesh import Mesh

_FMT = "%.17g"


class OutputError(BathyoptError, OSError):
    code = "io-failure"


def write_json(path, record: Mapping) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_abs_csv(psi: P1Field, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("x,y,abs\n")
        for (x, y), v in zip(psi.mesh.nodes, np.abs(psi.values)):
            fh.write(",".join(_FMT % c for c in (x, y, v)) + "\n")


def write_vtk(
    path,
    mesh: Mesh,
    point_data: Optional[Mapping[str, np.ndarray]] = None,
    cell_data: Optional[Mapping[str, np.ndarray]] = None,
    title: str = "bathyopt",
) -> None:
    """Legacy ASCII unstructured grid, every cell a VTK_TRIANGLE (type 5)."""
    n, m = mesh.n_nodes, mesh.n_triangles
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines += [f"{_FMT % x} {_FMT % y} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    for header, count, data in (("POINT_DATA", n, point_data), ("CELL_DATA", m, cell_data)):
        if not data:
            continue
        lines.append(f"{header} {count}")
        for name, values in data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [_FMT % v for v in np.asarray(values, dtype=float)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_results(
    output_dir,
    state: Optional[P1Field] = None,
    q: Optional[P0Field] = None,
    summary: Optional[Mapping] = None,
    history=None,
    vtk: bool = True,
) -> list[Path]:
    """Write the standard file set and return the paths written.

    ``state.csv`` (x, y, re, im), ``abs.csv`` (x, y, abs), ``q.csv``,
    ``history.csv`` (iteration, J, |g|, TV), ``summary.json`` and
    ``fields.vtk`` (point data re/im/abs, cell data q).
    """
    out = Path(output_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if state is not None:
            write_p1_csv(state, out / "state.csv")
            write_abs_csv(state, out / "abs.csv")
            written += [out / "state.csv", out / "abs.csv"]
        if q is not None:
            write_p0_csv(q, out / "q.csv")
            written.append(out / "q.csv")
        if history is not None:
            with open(out / "history.csv", "w", newline="") as fh:
                fh.write("iteration,J,grad_norm,tv\n")
                for it, j, g, tv in history:
                    fh.write(f"{it}," + ",".join(_FMT % c for c in (j, g, tv)) + "\n")
            written.append(out / "history.csv")
        if summary is not None:
            write_json(out / "summary.json", summary)
            written.append(out / "summary.json")
        if vtk and (state is not None or q is not None):
            mesh = state.mesh if state is not None else q.mesh
            pdata = None
            if state is not None:
                v = state.values
                pdata = {"re": v.real, "im": v.imag, "abs": np.abs(v)}
            cdata = {"q": q.values} if q is not None else None
            write_vtk(out / "fields.vtk", mesh, pdata, cdata)
            written.append(out / "fields.vtk")
    except OSError as exc:
        raise OutputError(f"cannot write results to {out}: {exc}") from exc
    return written
