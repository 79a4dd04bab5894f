"""Discrete fields on T^2 and on cylinders, with a bit-exact snapshot format."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import KahlerChart, make_chart
from .grids import SGrid, TorusGrid

MAGIC = b"CRPSLAB-SNAPSHOT 1\n"


@dataclass
class TorusField:
    """Map T^2 -> chart (base-valued, last axis 2n) or T^2 -> T*Q (last axis 4n).

    ``winding`` (2n x 2) stores the linear part of maps into the flat torus:
    the base coordinates are ``values_q + winding @ (x, y)``.
    """

    chart: KahlerChart
    grid: TorusGrid
    values: np.ndarray
    winding: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        d = self.values.shape[-1]
        if self.values.shape[:2] != self.grid.shape or d not in (self.chart.dim, 2 * self.chart.dim):
            raise ValueError(f"values shape {self.values.shape} incompatible with grid/chart")
        if self.winding is None:
            self.winding = np.zeros((self.chart.dim, 2))
        self.winding = np.asarray(self.winding, dtype=float)
        if np.any(self.winding) and self.chart.kind != "flat":
            raise ValueError("winding is only meaningful for flat torus targets")

    @property
    def is_base(self):
        return self.values.shape[-1] == self.chart.dim

    @property
    def q(self):
        return self.values[..., : self.chart.dim]

    @property
    def p(self):
        if self.is_base:
            return np.zeros_like(self.values)
        return self.values[..., self.chart.dim:]

    def q_full(self):
        X, Y = self.grid.mesh()
        return self.q + X[..., None] * self.winding[:, 0] + Y[..., None] * self.winding[:, 1]

    def derivatives(self):
        """Spectral (d/dx, d/dy) of the values, winding included in the q-part."""
        zx, zy = self.grid.dx(self.values), self.grid.dy(self.values)
        d = self.chart.dim
        zx[..., :d] += self.winding[:, 0]
        zy[..., :d] += self.winding[:, 1]
        return zx, zy

    def with_values(self, values):
        return TorusField(self.chart, self.grid, values, self.winding.copy())


@dataclass
class CylinderField:
    """Map [-S, S] x T^2 -> T*Q on nodes (ns, nx, ny, 4n)."""

    chart: KahlerChart
    sgrid: SGrid
    grid: TorusGrid
    values: np.ndarray
    q_base: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.sgrid.ns, self.grid.nx, self.grid.ny, 2 * self.chart.dim):
            raise ValueError(f"values shape {self.values.shape} incompatible with grids/chart")
        if self.q_base is None:
            self.q_base = np.zeros(self.chart.dim)
        self.q_base = np.asarray(self.q_base, dtype=float)

    @property
    def q(self):
        return self.values[..., : self.chart.dim]

    @property
    def p(self):
        return self.values[..., self.chart.dim:]

    @property
    def s(self):
        return self.sgrid.s

    def with_values(self, values):
        return CylinderField(self.chart, self.sgrid, self.grid, values, self.q_base.copy(), dict(self.meta))

    @classmethod
    def zero_section(cls, chart, sgrid, grid, q_base=None, meta=None):
        qb = np.zeros(chart.dim) if q_base is None else np.asarray(q_base, dtype=float)
        vals = np.zeros((sgrid.ns, grid.nx, grid.ny, 2 * chart.dim))
        vals[..., : chart.dim] = qb
        return cls(chart, sgrid, grid, vals, qb, dict(meta or {}))


# ---------------------------------------------------------------------------
# snapshots


def _header(f):
    if isinstance(f, CylinderField):
        return {
            "kind": "cylinder", "chart": f.chart.kind, "n": f.chart.n, "margin": f.chart.margin,
            "shape": list(f.values.shape), "q_base": [float(v) for v in f.q_base],
            "meta": f.meta,
        }
    return {
        "kind": "torus", "chart": f.chart.kind, "n": f.chart.n, "margin": f.chart.margin,
        "shape": list(f.values.shape), "winding": f.winding.tolist(),
    }


def write_snapshot(f, path):
    path = Path(path)
    head = json.dumps(_header(f), sort_keys=True, separators=(",", ":")).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(head)
        if isinstance(f, CylinderField):
            fh.write(np.ascontiguousarray(f.sgrid.s, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return path


def read_snapshot(path):
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a snapshot file")
        head = json.loads(fh.readline())
        data = fh.read()
    chart = make_chart(head["chart"], head["n"], head["margin"])
    shape = tuple(head["shape"])
    arr = np.frombuffer(data, dtype="<f8").astype(float)
    if head["kind"] == "cylinder":
        ns = shape[0]
        s, vals = arr[:ns], arr[ns:].reshape(shape)
        return CylinderField(chart, SGrid(s), TorusGrid(shape[1], shape[2]), vals,
                             np.array(head["q_base"]), head.get("meta", {}))
    return TorusField(chart, TorusGrid(shape[0], shape[1]), arr.reshape(shape), np.array(head["winding"]))


def write_csv(f, path):
    """One row per node: (s,) x, y, then the coordinate components."""
    path = Path(path)
    d = f.values.shape[-1]
    names = [f"q{i}" for i in range(f.chart.dim)] + [f"p{i}" for i in range(d - f.chart.dim)]
    X, Y = f.grid.mesh()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if isinstance(f, CylinderField):
            w.writerow(["s", "x", "y"] + names)
            for i, s in enumerate(f.sgrid.s):
                for a in range(f.grid.nx):
                    for b in range(f.grid.ny):
                        w.writerow([repr(float(s)), repr(float(X[a, b])), repr(float(Y[a, b]))]
                                   + [repr(float(v)) for v in f.values[i, a, b]])
        else:
            w.writerow(["x", "y"] + names)
            for a in range(f.grid.nx):
                for b in range(f.grid.ny):
                    w.writerow([repr(float(X[a, b])), repr(float(Y[a, b]))] + [repr(float(v)) for v in f.values[a, b]])
    return path
