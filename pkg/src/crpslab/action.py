"""Action functional on maps T^2 -> T*Q and its first variation."""
from __future__ import annotations

import numpy as np

from .fields import TorusField
from .geometry import complex_structure, crps_forms, hyperkahler_frame
from .hamiltonians import HamiltonianSpec


def _xy(field):
    X, Y = field.grid.mesh()
    return X, Y


def action(field: TorusField, ham: HamiltonianSpec, beta=1.0) -> float:
    """int (theta_1(Z_x) + theta_2(Z_y)) dx dy - int H(Z) dx dy, with theta_1 = p dq, theta_2 = -theta_1 o I."""
    if field.is_base:
        raise ValueError("action needs a cotangent-valued field")
    zx, zy = field.derivatives()
    d = field.chart.dim
    ib = complex_structure(field.chart.n)
    p = field.p
    lag = np.einsum("...i,...i->...", p, zx[..., :d]) - np.einsum("...i,...i->...", p, zy[..., :d] @ ib.T)
    X, Y = _xy(field)
    H = ham.value(None, X, Y, field.q_full(), p, beta=beta)
    return float(np.sum(lag - H) * field.grid.dA)


def el_residual(field: TorusField, ham: HamiltonianSpec, beta=1.0) -> np.ndarray:
    """Covector defect Omega_1 Z_x + Omega_2 Z_y - dH(Z) at every node."""
    zx, zy = field.derivatives()
    om1, om2 = crps_forms(field.chart.n)
    X, Y = _xy(field)
    dH, _ = ham.differential(None, X, Y, field.q_full(), field.p, beta=beta)
    return zx @ om1.T + zy @ om2.T - dH


def action_gradient(field: TorusField, ham: HamiltonianSpec, beta=1.0, frame=None) -> np.ndarray:
    """J Z_x + K Z_y - grad^G H, computed through the recovered frame."""
    zx, zy = field.derivatives()
    if frame is None:
        frame = hyperkahler_frame(field.chart, field.q_full(), field.p)
    X, Y = _xy(field)
    dH, _ = ham.differential(None, X, Y, field.q_full(), field.p, beta=beta)
    grad_h = np.linalg.solve(frame.G, dH[..., None])[..., 0]
    return (np.einsum("...ij,...j->...i", frame.J, zx) + np.einsum("...ij,...j->...i", frame.K, zy)
            - grad_h)


def l2_pairing(field: TorusField, U, V, frame=None) -> float:
    """int G(U, V) dx dy along the field."""
    if frame is None:
        frame = hyperkahler_frame(field.chart, field.q_full(), field.p)
    return float(np.einsum("...i,...ij,...j->...", U, frame.G, V).sum() * field.grid.dA)
