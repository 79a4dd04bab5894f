"""Invariant batteries shared by the CLI and the acceptance suite."""
from __future__ import annotations

import numpy as np

from .estimates import CheckRecord, EstimateReport
from .geometry import (a_xi, a_xi_closed_form_eigs, domega0_norm, hyperkahler_frame, kahler_residual, make_chart,
                       quaternion_defects, xi_norm)


def sample_cotangent(chart, count, xi_max, rng, q_radius=0.5):
    """Random (q, xi) with |q| < q_radius on the ball and 0 < |xi|_g <= xi_max."""
    d = chart.dim
    if chart.kind == "flat":
        q = rng.uniform(0, 2 * np.pi, (count, d))
    else:
        v = rng.normal(size=(count, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        q = v * q_radius * rng.uniform(0, 1, (count, 1)) ** (1.0 / d)
    xi = rng.normal(size=(count, d))
    xi *= (xi_max * rng.uniform(0.05, 1.0, (count, 1))) / xi_norm(chart, q, xi)[:, None]
    p = np.einsum("...ij,...j->...i", chart.metric(q), xi)
    return q, xi, p


def spectra_check(chart, q, xi, tol=1e-10):
    """Eigenvalues of A_xi against sqrt(1-4t) (on span{xi, i xi}) and (1+sqrt(1-4t))/2."""
    A = a_xi(chart, q, xi)
    ev = np.sort(np.linalg.eigvals(A).real, axis=-1)
    t = xi_norm(chart, q, xi) ** 2
    r, s = a_xi_closed_form_eigs(t)
    n = chart.n
    expect = np.sort(np.concatenate([np.repeat(r[:, None], 2, 1), np.repeat(s[:, None], 2 * n - 2, 1)], axis=1), axis=1)
    err = float(np.max(np.abs(ev - expect)))
    return CheckRecord.leq("a_xi_spectra", "max |eig A_xi - closed form|", err, 0.0, tol, [len(q)])


def domega0_orders(chart, points, steps=(2e-2, 1e-2, 5e-3)):
    """Observed orders of the finite-difference |d omega_0| across successive step halvings."""
    vals = np.array([[domega0_norm(chart, z, h) for h in steps] for z in points])
    worst = vals.max(axis=0)
    orders = np.log(worst[:-1] / worst[1:]) / np.log(np.asarray(steps[:-1]) / np.asarray(steps[1:]))
    return worst, orders


def geometry_battery(kind="hyperbolic", n=2, samples=200, xi_max=0.45, seed=0, quaternion_tol=1e-6,
                     spectra_samples=1000):
    chart = make_chart(kind, n)
    rng = np.random.default_rng(seed)
    rep = EstimateReport(data={"chart": kind, "n": n, "xi_max": xi_max})
    if kind != "flat":
        q, xi, _ = sample_cotangent(chart, spectra_samples, xi_max, rng)
        rep.add(spectra_check(chart, q, xi))
    q, xi, p = sample_cotangent(chart, samples, xi_max, rng)
    fr = hyperkahler_frame(chart, q, p)
    for key, val in sorted(quaternion_defects(fr).items()):
        rep.add(CheckRecord.leq(f"quaternion_{key}", f"spectral norm of {key}", val, 0.0, quaternion_tol, [samples]))
    rep.add(CheckRecord.leq("kahler_condition", "antisymmetrised dbar of h", kahler_residual(chart, q), 0.0, 1e-8, [samples]))
    if kind != "flat":
        # the flat form is constant, so its difference quotient vanishes identically
        worst, orders = domega0_orders(chart, np.concatenate([q[:3], p[:3]], axis=1))
        rep.data["domega0"] = worst.tolist()
        rep.data["domega0_orders"] = orders.tolist()
        rep.add(CheckRecord.leq("domega0_order", "min observed order of |d omega_0| >= 1.8", 1.8, float(orders.min()), 0.0, [3]))
    rep.data["min_eig_G"] = float(np.min(np.linalg.eigvalsh(fr.G)))
    return rep
