from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crpslab.fields import CylinderField, TorusField, read_snapshot, write_csv, write_snapshot
from crpslab.fueter import default_sgrid
from crpslab.geometry import make_chart
from crpslab.grids import SGrid, TorusGrid, smooth_s_nodes


def test_spectral_derivatives_exact_on_trig():
    g = TorusGrid(16, 12)
    X, Y = g.mesh()
    f = (np.sin(3 * X) * np.cos(2 * Y))[..., None]
    assert np.allclose(g.dx(f)[..., 0], 3 * np.cos(3 * X) * np.cos(2 * Y), atol=1e-12)
    assert np.allclose(g.dy(f)[..., 0], -2 * np.sin(3 * X) * np.sin(2 * Y), atol=1e-12)
    assert np.allclose(g.laplacian(f)[..., 0], -13 * f[..., 0], atol=1e-11)
    assert g.integral(np.ones(g.shape + (1,)))[0] == pytest.approx(4 * np.pi**2)


def test_nyquist_modes_are_null():
    g = TorusGrid(8, 6)
    mask = g.null_mask()
    assert mask[0, 0] and mask[4, 3] and mask[0, 3] and mask[4, 0]
    assert mask.sum() == 4


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 60), st.floats(1.0, 30.0), st.floats(0.0, 20.0))
def test_s_nodes_monotone_with_fixed_ends(ns, S, density):
    s = smooth_s_nodes(-S, S, ns, [(-1.0, 2.0)], density)
    assert s[0] == -S and s[-1] == S
    assert np.all(np.diff(s) > 0)


def test_windows_refine_locally():
    s = smooth_s_nodes(-10, 10, 200, [(-1.0, 2.0, 10.0)])
    h = np.diff(s)
    mid = 0.5 * (s[1:] + s[:-1])
    assert h[np.abs(mid - 0.5) < 1].max() < h[np.abs(mid) > 6].min()


def test_default_sgrid_covers_cutoff_support():
    sg = default_sgrid(22.0, 256, 1.0, density=8, tail=5, tail_density=3)
    assert sg.s[0] == -22.0 and sg.s[-1] == 22.0 and sg.ns == 256


def test_sgrid_second_order_on_nonuniform_nodes():
    errs = []
    for ns in (40, 80, 160):
        sg = SGrid(smooth_s_nodes(-3, 3, ns, [(-0.5, 0.5)], 4.0))
        f = np.sin(sg.s)
        errs.append((np.max(np.abs(sg.ds(f) - np.cos(sg.s))), np.max(np.abs(sg.dss(f)[1:-1] + f[1:-1]))))
    errs = np.array(errs)
    orders = np.log2(errs[:-1] / errs[1:])
    assert np.all(orders > 1.8)


def test_sgrid_rejects_bad_nodes():
    with pytest.raises(ValueError):
        SGrid(np.array([0.0, 1.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        SGrid(np.array([0.0, 1.0]))


def test_torus_field_winding_enters_derivatives():
    ch = make_chart("flat", 1)
    g = TorusGrid(8, 8)
    w = np.array([[1.0, 0.0], [0.0, 2.0]])
    f = TorusField(ch, g, np.zeros(g.shape + (2,)), w)
    qx, qy = f.derivatives()
    assert np.allclose(qx[..., 0], 1.0) and np.allclose(qy[..., 1], 2.0)
    X, Y = g.mesh()
    assert np.allclose(f.q_full()[..., 0], X)


@pytest.mark.parametrize("kind", ["flat", "hyperbolic"])
def test_snapshot_round_trip(tmp_path, kind, rng):
    ch = make_chart(kind, 1)
    sg = default_sgrid(6.0, 16, 1.0)
    g = TorusGrid(4, 6)
    Z = CylinderField(ch, sg, g, 0.1 * rng.normal(size=(16, 4, 6, 4)), np.array([0.1, -0.2]), {"tau": 1.0, "tag": "x"})
    Z2 = read_snapshot(write_snapshot(Z, tmp_path / "z.snap"))
    assert np.array_equal(Z2.values, Z.values) and np.array_equal(Z2.s, Z.s)
    assert Z2.meta == Z.meta and Z2.chart.kind == kind and np.array_equal(Z2.q_base, Z.q_base)
    T = TorusField(ch, g, 0.1 * rng.normal(size=(4, 6, 2)))
    T2 = read_snapshot(write_snapshot(T, tmp_path / "t.snap"))
    assert np.array_equal(T2.values, T.values) and np.array_equal(T2.winding, T.winding)
    write_csv(Z, tmp_path / "z.csv")
    rows = (tmp_path / "z.csv").read_text().splitlines()
    assert len(rows) == 1 + 16 * 4 * 6


def test_snapshot_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk"
    p.write_bytes(b"hello\n")
    with pytest.raises(ValueError):
        read_snapshot(p)


def test_cylinder_shape_validation():
    ch = make_chart("flat", 1)
    with pytest.raises(ValueError):
        CylinderField(ch, SGrid.uniform(2, 8), TorusGrid(4, 4), np.zeros((8, 4, 4, 3)))
