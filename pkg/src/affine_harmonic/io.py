"""Plain-text snapshot files and CSV flow traces.

Snapshot layout::

    <dim> <shape...> <spacing...> <chart_name>
    <x_coords...> <f_lift_coords...>        # one line per node, row-major

Trace layout: CSV with header ``t,sup_kinetic,sup_eta,sup_dtilde,inf_dtilde,sup_residual``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .flow import TRACE_COLUMNS, DomainGrid, FlowTrace, MapField, TraceSample

__all__ = ["write_snapshot", "read_snapshot", "write_trace_csv", "read_trace_csv"]


def write_snapshot(path, grid: DomainGrid, f: MapField) -> Path:
    path = Path(path)
    f.check_grid(grid)
    if any(c.isspace() for c in f.chart.name):
        raise ValueError(f"chart name {f.chart.name!r} contains whitespace")
    header = [str(grid.dim), *map(str, grid.shape), *map(repr, grid.spacing), f.chart.name]
    coords = grid.coords.reshape(-1, grid.dim)
    data = np.hstack([coords, f.flat])
    with path.open("w") as fh:
        fh.write(" ".join(header) + "\n")
        for row in data:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    return path


def read_snapshot(path) -> dict:
    """Return ``dim``, ``shape``, ``spacing``, ``chart_name``, ``coords`` and ``values``.

    ``coords`` and ``values`` are flat, one row per node.
    """
    with Path(path).open() as fh:
        head = fh.readline().split()
        dim = int(head[0])
        shape = tuple(int(v) for v in head[1 : 1 + dim])
        spacing = tuple(float(v) for v in head[1 + dim : 1 + 2 * dim])
        chart_name = " ".join(head[1 + 2 * dim :])
        data = np.loadtxt(fh, ndmin=2)
    return {
        "dim": dim,
        "shape": shape,
        "spacing": spacing,
        "chart_name": chart_name,
        "coords": data[:, :dim],
        "values": data[:, dim:],
    }


def write_trace_csv(path, trace: FlowTrace) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for s in trace.samples:
            writer.writerow([repr(float(getattr(s, c))) for c in TRACE_COLUMNS])
    return path


def read_trace_csv(path) -> list[TraceSample]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        return [TraceSample(**{k: float(v) for k, v in row.items()}) for row in reader]
