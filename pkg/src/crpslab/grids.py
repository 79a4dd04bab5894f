"""Grids on the torus [0, 2pi)^2 and on cylinders [-S, S] x T^2.

Field layouts: torus fields are ``(nx, ny, d)``, cylinder fields are
``(ns, nx, ny, d)``.  x/y derivatives are Fourier-spectral; the Nyquist
wavenumber is dropped from first derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("torus grid needs at least 2 nodes per direction")

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def x(self):
        return TWO_PI * np.arange(self.nx) / self.nx

    @property
    def y(self):
        return TWO_PI * np.arange(self.ny) / self.ny

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def dA(self):
        """Cell area for integrals against dx dy (total 4 pi^2)."""
        return TWO_PI**2 / (self.nx * self.ny)

    def wavenumbers(self, first_derivative=True):
        kx = np.fft.fftfreq(self.nx, 1.0 / self.nx)
        ky = np.fft.fftfreq(self.ny, 1.0 / self.ny)
        if first_derivative:
            if self.nx % 2 == 0:
                kx[self.nx // 2] = 0.0
            if self.ny % 2 == 0:
                ky[self.ny // 2] = 0.0
        return kx, ky

    def null_mask(self):
        """Fourier modes on which both first derivatives vanish (zero and Nyquist modes)."""
        kx, ky = self.wavenumbers()
        return (kx[:, None] == 0) & (ky[None, :] == 0)

    # spectral operators acting on axes (-3, -2)
    def _apply(self, f, mult):
        fh = np.fft.fft2(f, axes=(-3, -2))
        return np.fft.ifft2(fh * mult[..., None], axes=(-3, -2)).real

    def dx(self, f):
        kx, _ = self.wavenumbers()
        return self._apply(f, 1j * kx[:, None] * np.ones(self.ny)[None, :])

    def dy(self, f):
        _, ky = self.wavenumbers()
        return self._apply(f, 1j * np.ones(self.nx)[:, None] * ky[None, :])

    def laplacian(self, f):
        kx, ky = self.wavenumbers(first_derivative=False)
        return self._apply(f, -(kx[:, None] ** 2 + ky[None, :] ** 2))

    def mean(self, f):
        return f.mean(axis=(-3, -2))

    def integral(self, f):
        """Integral over the torus against dx dy (scalar fields carry a trailing axis of length 1)."""
        return f.sum(axis=(-3, -2)) * self.dA


def smooth_s_nodes(s_min, s_max, ns, windows=(), density=1.0, width=0.75):
    """Nodes on [s_min, s_max] that cluster in the given windows (a, b) or (a, b, density).

    The node map is the inverse of the cumulative integral of the monitor
    1 + density * sum_w bump_w(s), so spacing varies smoothly.
    """
    if ns < 4:
        raise ValueError("need at least 4 s-nodes")
    if s_max <= s_min:
        raise ValueError("empty s-interval")
    fine = np.linspace(s_min, s_max, 40 * ns + 1)
    mon = np.ones_like(fine)
    for win in windows:
        a, b = win[:2]
        dens = win[2] if len(win) > 2 else density
        c, r = 0.5 * (a + b), 0.5 * (b - a) + 0.25
        mon += dens * np.exp(-((np.abs(fine - c) / (r + width)) ** 6) * 4.0)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (mon[1:] + mon[:-1]) * np.diff(fine))])
    cum /= cum[-1]
    nodes = np.interp(np.linspace(0.0, 1.0, ns), cum, fine)
    nodes[0], nodes[-1] = s_min, s_max
    return nodes


@dataclass
class SGrid:
    """Nonuniform nodes along the cylinder axis."""

    s: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        if self.s.ndim != 1 or self.s.size < 4 or np.any(np.diff(self.s) <= 0):
            raise ValueError("s-nodes must be strictly increasing with at least 4 entries")

    @classmethod
    def uniform(cls, S, ns):
        return cls(np.linspace(-S, S, ns))

    @property
    def ns(self):
        return self.s.size

    @property
    def h(self):
        return np.diff(self.s)

    @property
    def mid(self):
        return 0.5 * (self.s[1:] + self.s[:-1])

    @property
    def S(self):
        return 0.5 * (self.s[-1] - self.s[0])

    def cell_diff(self, f):
        """(f_{i+1} - f_i)/h_i along axis 0: the midpoint derivative."""
        return np.diff(f, axis=0) / self.h.reshape((-1,) + (1,) * (f.ndim - 1))

    def cell_avg(self, f):
        return 0.5 * (f[1:] + f[:-1])

    def trapezoid_weights(self):
        h = self.h
        w = np.zeros(self.ns)
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
        return w

    def d1_matrix(self):
        """Second-order nodal first derivative; three-point one-sided closures."""
        if "d1" in self._cache:
            return self._cache["d1"]
        s = self.s
        n = s.size
        rows, cols, vals = [], [], []
        for i in range(1, n - 1):
            hm, hp = s[i] - s[i - 1], s[i + 1] - s[i]
            rows += [i, i, i]
            cols += [i - 1, i, i + 1]
            vals += [-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))]
        h1, h2 = s[1] - s[0], s[2] - s[1]
        rows += [0, 0, 0]
        cols += [0, 1, 2]
        vals += [-(2 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2))]
        h1, h2 = s[-1] - s[-2], s[-2] - s[-3]
        rows += [n - 1] * 3
        cols += [n - 1, n - 2, n - 3]
        vals += [(2 * h1 + h2) / (h1 * (h1 + h2)), -(h1 + h2) / (h1 * h2), h1 / (h2 * (h1 + h2))]
        m = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self._cache["d1"] = m
        return m

    def d2_matrix(self):
        """Three-point second derivative at interior nodes (rows 0 and n-1 are zero)."""
        if "d2" in self._cache:
            return self._cache["d2"]
        s = self.s
        n = s.size
        rows, cols, vals = [], [], []
        for i in range(1, n - 1):
            hm, hp = s[i] - s[i - 1], s[i + 1] - s[i]
            rows += [i, i, i]
            cols += [i - 1, i, i + 1]
            vals += [2 / (hm * (hm + hp)), -2 / (hm * hp), 2 / (hp * (hm + hp))]
        m = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self._cache["d2"] = m
        return m

    def apply(self, mat, f):
        shp = f.shape
        return (mat @ f.reshape(shp[0], -1)).reshape(shp)

    def ds(self, f):
        return self.apply(self.d1_matrix(), f)

    def dss(self, f):
        return self.apply(self.d2_matrix(), f)


@dataclass
class CylinderGrid:
    sgrid: SGrid
    torus: TorusGrid

    @property
    def shape(self):
        return (self.sgrid.ns, self.torus.nx, self.torus.ny)
