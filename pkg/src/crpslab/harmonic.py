"""Harmonic maps T^2 -> Q: tension, Dirichlet energy, heat flow and the momentum lift."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import TorusField
from .geometry import complex_structure, kinetic, to_complex


class FlowError(RuntimeError):
    pass


def _christoffel_terms(chart, q, qx, qy):
    gam = chart.christoffel(q)
    return (np.einsum("...abc,...b,...c->...a", gam, qx, qx)
            + np.einsum("...abc,...b,...c->...a", gam, qy, qy))


def tension(field: TorusField) -> np.ndarray:
    """Tension of a base map in real coordinates: Delta q + Gamma(q_x, q_x) + Gamma(q_y, q_y).

    Spectral in x, y; winding contributes to first derivatives only.
    """
    q = field.q
    qx, qy = field.derivatives()
    qx, qy = qx[..., : field.chart.dim], qy[..., : field.chart.dim]
    lap = field.grid.laplacian(q)
    return lap + _christoffel_terms(field.chart, field.q_full(), qx, qy)


def tension_complex(field: TorusField) -> np.ndarray:
    """d_tbar d_t q^l + Gamma^l_{jk} d_tbar q^k d_t q^j with d_t = (d_x - i d_y)/2.

    Equals one quarter of the complex components of :func:`tension`.
    """
    chart = field.chart
    qx, qy = field.derivatives()
    zx, zy = to_complex(qx[..., : chart.dim]), to_complex(qy[..., : chart.dim])
    dt, dtb = 0.5 * (zx - 1j * zy), 0.5 * (zx + 1j * zy)
    lap = to_complex(field.grid.laplacian(field.q))
    gam = chart.kahler_data(field.q_full()).christoffel
    return 0.25 * lap + np.einsum("...ljk,...k,...j->...l", gam, dtb, dt)


def _fd_derivs(f, grid, winding=None):
    hx, hy = 2 * np.pi / grid.nx, 2 * np.pi / grid.ny
    fx = (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2 * hx)
    fy = (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2 * hy)
    lap = ((np.roll(f, -1, axis=0) - 2 * f + np.roll(f, 1, axis=0)) / hx**2
           + (np.roll(f, -1, axis=1) - 2 * f + np.roll(f, 1, axis=1)) / hy**2)
    if winding is not None:
        fx = fx + winding[:, 0]
        fy = fy + winding[:, 1]
    return fx, fy, lap


def tension_fd(field: TorusField) -> np.ndarray:
    """Second-order central-difference evaluation of the tension (independent oracle)."""
    qx, qy, lap = _fd_derivs(field.q, field.grid, field.winding)
    return lap + _christoffel_terms(field.chart, field.q_full(), qx, qy)


def energy_density(field: TorusField) -> np.ndarray:
    qx, qy = field.derivatives()
    d = field.chart.dim
    g = field.chart.metric(field.q_full())
    return 0.5 * (np.einsum("...i,...ij,...j->...", qx[..., :d], g, qx[..., :d])
                  + np.einsum("...i,...ij,...j->...", qy[..., :d], g, qy[..., :d]))


def dirichlet_energy(field: TorusField) -> float:
    """1/2 int |dq|_g^2 dx dy."""
    return float(np.sum(energy_density(field)) * field.grid.dA)


def tension_norm(field: TorusField) -> float:
    """sup-norm of the tension measured with the target metric."""
    t = tension(field)
    g = field.chart.metric(field.q_full())
    return float(np.sqrt(np.max(np.einsum("...i,...ij,...j->...", t, g, t))))


@dataclass
class FlowResult:
    field: TorusField
    steps: int
    energies: list = field(default_factory=list)
    tensions: list = field(default_factory=list)
    max_motion: float = 0.0
    converged: bool = False

    def report(self):
        return {"steps": self.steps, "converged": self.converged,
                "energy_initial": self.energies[0], "energy_final": self.energies[-1],
                "tension_final": self.tensions[-1], "last_motion": self.max_motion}


def heat_flow(q0: TorusField, steps: int, dt: float, tol: float | None = None,
              energy_tol: float = 1e-10, record_every: int = 1) -> FlowResult:
    """Semi-implicit harmonic-map flow: implicit Laplacian, explicit Christoffel terms.

    Stops early once the tension sup-norm drops below ``tol``.
    """
    if dt <= 0 or steps < 0:
        raise ValueError("need dt > 0 and steps >= 0")
    grid = q0.grid
    kx, ky = grid.wavenumbers(first_derivative=False)
    k2 = kx[:, None] ** 2 + ky[None, :] ** 2
    denom = (1.0 + dt * k2)[..., None]
    f = q0.with_values(q0.q.copy())
    e_prev = dirichlet_energy(f)
    energies, tensions = [e_prev], [tension_norm(f)]
    motion = 0.0
    converged = tol is not None and tensions[-1] < tol
    k = 0
    while k < steps and not converged:
        qx, qy = f.derivatives()
        rhs = f.q + dt * _christoffel_terms(f.chart, f.q_full(), qx, qy)
        new = np.fft.ifft2(np.fft.fft2(rhs, axes=(0, 1)) / denom, axes=(0, 1)).real
        motion = float(np.max(np.abs(new - f.q)))
        f = f.with_values(new)
        f.chart.check_domain(f.q_full())
        k += 1
        e = dirichlet_energy(f)
        if e > e_prev + energy_tol * max(1.0, abs(e_prev)):
            raise FlowError(f"energy increased at step {k}: {e_prev!r} -> {e!r}")
        e_prev = e
        tn = tension_norm(f) if tol is not None or k % record_every == 0 or k == steps else None
        converged = tol is not None and tn < tol
        if k % record_every == 0 or k == steps or converged:
            energies.append(e)
            tensions.append(tn)
    return FlowResult(f, k, energies, tensions, motion, converged)


def affine_representative(field: TorusField) -> np.ndarray:
    """Flat-target oracle: the harmonic map in the winding class is winding @ (x, y) + mean.

    Returns the periodic part (the constant mean); the winding stays in ``field.winding``.
    """
    if field.chart.kind != "flat":
        raise ValueError("affine representatives are a flat-target notion")
    return np.broadcast_to(field.q.mean(axis=(0, 1)), field.q.shape).copy()


def lift_momentum(field: TorusField) -> TorusField:
    """Z = (q, p) with p = g(q)(q_x - i q_y), the critical-point momentum for H0 = 1/2 |p|_g^2."""
    chart = field.chart
    d = chart.dim
    qx, qy = field.derivatives()
    ib = complex_structure(chart.n)
    v = qx[..., :d] - qy[..., :d] @ ib.T
    g = chart.metric(field.q_full())
    p = np.einsum("...ij,...j->...i", g, v)
    return TorusField(chart, field.grid, np.concatenate([field.q, p], axis=-1), field.winding.copy())


def lift_defect_fd(field: TorusField) -> float:
    """Sup of the finite-difference first-order-system residual of the lift, corrected by g * tension.

    For any base map the q-row of the critical-point equations at the lift
    equals -g tau(q); for harmonic q this is the residual of the lifted
    system itself.  Evaluated with central differences it converges at second order.
    """
    chart = field.chart
    ib = complex_structure(chart.n)
    q = field.q_full()
    qx, qy, _ = _fd_derivs(field.q, field.grid, field.winding)
    g = chart.metric(q)
    p = np.einsum("...ij,...j->...i", g, qx - qy @ ib.T)
    px, py, _ = _fd_derivs(p, field.grid)
    _, dHq, _ = kinetic(chart, q, p)
    row_q = -px - py @ ib.T - dHq
    tau = tension(field)
    defect = row_q + np.einsum("...ij,...j->...i", g, tau)
    return float(np.max(np.abs(defect)))
