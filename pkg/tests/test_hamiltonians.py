from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crpslab.geometry import make_chart
from crpslab.hamiltonians import (FAMILIES, CutoffFamily, HamiltonianSpec, Perturbation, hofer_upper,
                                  perturbation_norms, smoothstep, smoothstep_d)


@given(st.floats(-2.0, 3.0))
def test_smoothstep_range_and_derivative(u):
    v = float(smoothstep(u))
    assert 0.0 <= v <= 1.0
    h = 1e-6
    if 1e-3 < u < 1 - 1e-3:
        fd = (float(smoothstep(u + h)) - float(smoothstep(u - h))) / (2 * h)
        assert float(smoothstep_d(u)) == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_smoothstep_derivative_peak_is_two():
    u = np.linspace(0, 1, 200001)
    assert smoothstep_d(u).max() == pytest.approx(2.0, rel=1e-8)
    assert smoothstep(0.5) == pytest.approx(0.5)


@settings(max_examples=40)
@given(st.floats(0.0, 4.0))
def test_cutoff_support_and_plateau(tau):
    c = CutoffFamily(tau)
    s = np.linspace(-3, tau + 3, 4001)
    b = c.beta(s)
    assert np.all(b[(s <= -1) | (s >= tau + 1)] == 0)
    assert b.max() <= min(1.0, tau) + 1e-15
    if tau >= 1:
        assert np.allclose(b[(s >= 0) & (s <= tau)], 1.0)


def test_cutoff_integral_of_derivative_vanishes():
    c = CutoffFamily(1.5)
    s = np.linspace(-1.5, 3.0, 200001)
    assert np.trapezoid(c.dbeta(s), s) == pytest.approx(0.0, abs=1e-10)


def test_cutoff_rejects_negative():
    with pytest.raises(ValueError):
        CutoffFamily(-0.1)


@pytest.mark.parametrize("family", [f for f in FAMILIES if f != "zero"])
def test_gradient_and_hessian_match_fd(family, rng):
    pert = Perturbation(family, 1, 0.7)
    x, y = rng.uniform(0, 6, 2)
    q, p = rng.normal(size=2), rng.normal(size=2)
    z = np.concatenate([[x, y], q, p])
    h = 1e-6

    def f(u):
        return float(pert.value(u[0], u[1], u[2:4], u[4:]))

    def gr(u):
        return pert.grad(u[0], u[1], u[2:4], u[4:])

    num = np.array([(f(z + h * e) - f(z - h * e)) / (2 * h) for e in np.eye(6)])
    assert np.allclose(gr(z), num, atol=1e-8)
    numh = np.array([(gr(z + h * e) - gr(z - h * e)) / (2 * h) for e in np.eye(6)])
    assert np.allclose(pert.hess(x, y, q, p), numh, atol=1e-7)


def test_scaling_is_linear(rng):
    unit = Perturbation("mixed", 1)
    q, p = rng.normal(size=(2, 5, 2))
    x, y = rng.uniform(0, 6, (2, 5))
    assert np.allclose(unit.scaled(0.3).value(x, y, q, p), 0.3 * unit.value(x, y, q, p))
    assert unit.scaled(0.0).is_zero


def test_unknown_family():
    with pytest.raises(ValueError):
        Perturbation("cubic")


def test_mixed_unit_norms():
    # sup |Dh| of the mixed shape is 2 (attained at p = 0, x + q0 = -pi/2, y = pi/2)
    nr = perturbation_norms(Perturbation("mixed", 1), make_chart("flat", 1), samples=1024)
    assert nr.c1 == pytest.approx(2.0, rel=1e-6)
    assert nr.c2 >= nr.c1 >= nr.c0 > 0
    half = nr.scaled(0.5)
    assert half.c1 == pytest.approx(1.0, rel=1e-6) and half.oscillation == pytest.approx(0.5 * nr.oscillation)
    hof = hofer_upper(Perturbation("mixed", 1), make_chart("flat", 1), norms=nr)
    assert hof["hofer_bound"] == pytest.approx(2 * nr.oscillation)


def test_spec_differential_includes_kinetic(rng):
    ch = make_chart("flat", 1)
    ham = HamiltonianSpec(ch, Perturbation("mixed", 1, 0.1), CutoffFamily(1.0))
    q, p = rng.normal(size=(2, 2))
    dH, dt = ham.differential(0.5, 0.3, 0.4, q, p)
    g = Perturbation("mixed", 1, 0.1).grad(0.3, 0.4, q, p)
    assert np.allclose(dH, g[2:] + np.concatenate([np.zeros(2), p]))
    assert np.allclose(dt, g[:2])
    H = ham.hessian_zz(0.5, 0.3, 0.4, q, p)
    assert np.allclose(H, Perturbation("mixed", 1, 0.1).hess(0.3, 0.4, q, p)[2:, 2:] + np.diag([0, 0, 1, 1]))
    # outside the cutoff support only the kinetic part remains
    assert ham.value(-5.0, 0.3, 0.4, q, p) == pytest.approx(0.5 * p @ p)
    assert ham.beta(None) == 1.0


def test_curved_hessian_not_claimed():
    ham = HamiltonianSpec(make_chart("hyperbolic", 1), Perturbation("zero", 1))
    with pytest.raises(NotImplementedError):
        ham.hessian_zz(0.0, 0.0, 0.0, np.zeros(2), np.zeros(2))
