from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crpslab.estimates import (LAMBDA1, CheckRecord, EstimateReport, alpha, barrier_check, barrier_kappa,
                               calibrate_c_inf, curved_hessian_diagnostics, eigen_data, energy_budget_check,
                               exponent_law_check, kappa0_bound, linfty_predictor, mean_value_check, nu, pbar_check,
                               phi1, phi_field, r0, subsolution_check)
from crpslab.fields import CylinderField
from crpslab.fueter import default_sgrid, energy
from crpslab.geometry import make_chart
from crpslab.grids import TorusGrid


def test_alpha_and_radius_closed_forms():
    assert alpha(0.25) == 5.0
    assert alpha(0.0) == 0.0
    assert r0(0.2) == 1.0 and r0(0.25) == 1.0
    assert r0(32.0) == pytest.approx(math.pi / math.sqrt(254), rel=1e-15)
    # R0 keeps -mu = (alpha - 1/4) R0^2 at most pi^2/8
    for a in (0.5, 2.0, 30.0):
        assert (a - 0.25) * r0(a) ** 2 <= math.pi**2 / 8 + 1e-14
    with pytest.raises(ValueError):
        r0(-1.0)


def test_kappa0_against_high_precision():
    with mpmath.workdps(40):
        ref = 4 * mpmath.sqrt(2) / (mpmath.pi * mpmath.sin(mpmath.pi / mpmath.sqrt(2))) - 8 / mpmath.pi**2
    assert kappa0_bound() == pytest.approx(float(ref), rel=1e-14)
    assert barrier_kappa(0.0, -math.pi**2 / 8) == pytest.approx(kappa0_bound(), rel=1e-14)
    assert round(kappa0_bound(), 2) == 1.45


@settings(max_examples=40)
@given(st.floats(-math.pi**2 / 8, -1e-3), st.floats(0.05, 1.95))
def test_kappa_solves_radial_problem(mu, rho):
    # the closed form cancels like 1/mu, so keep the difference step moderate
    h = 1e-3
    k0, kp, km = (float(barrier_kappa(r, mu)) for r in (rho, rho + h, rho - h))
    lap = (kp - 2 * k0 + km) / h**2 + (kp - km) / (h * rho)
    assert -lap + mu * k0 == pytest.approx(1.0, abs=1e-5)
    assert float(barrier_kappa(2.0, mu)) == pytest.approx(0.0, abs=1e-13)
    assert 0.0 <= k0 <= kappa0_bound() + 1e-12


def test_kappa_domain():
    with pytest.raises(ValueError):
        barrier_kappa(0.0, -2.0)
    with pytest.raises(ValueError):
        barrier_kappa(2.5, -1.0)


def test_first_eigenfunction():
    lam, f = eigen_data()
    assert lam == LAMBDA1 == pytest.approx(math.pi**2 / 4)
    assert abs(float(f(0.0)) - math.pi / 2) < 1e-10
    assert abs(float(f(1.5)) - math.sqrt(2) / 3) < 1e-10
    rho, h = np.linspace(0.1, 1.9, 19), 1e-4
    lap = (phi1(rho + h) - 2 * phi1(rho) + phi1(rho - h)) / h**2 + (phi1(rho + h) - phi1(rho - h)) / (h * rho)
    assert np.allclose(-lap, lam * phi1(rho), atol=1e-6)
    assert abs(float(phi1(2.0))) < 1e-15


def test_predictor_and_threshold():
    c1, c2 = 1e-3, 0.01
    pred = linfty_predictor(c1, c2)
    a = alpha(c2)
    assert pred["r_star"] == pytest.approx((1.5 * c1 / a) ** 0.2)
    assert pred["budget"] == pytest.approx(a**0.6 * c1**0.4)
    with pytest.raises(ValueError):
        linfty_predictor(10.0, 0.5)
    v = nu(0.1, c2, 2.0)
    assert v == pytest.approx(min(1.0, (2 * a / 3) * r0(a) ** 5, (0.01 / 4.0) ** 2.5 * a**-1.5), rel=1e-14)
    assert nu(0.1, 0.0, 1.0) == 1.0


@given(st.floats(1e-8, 1.0), st.floats(1e-6, 1.0), st.floats(1e-6, 0.5))
def test_calibration_inverts_budget(sup_phi, c1, c2):
    c_inf = calibrate_c_inf(sup_phi, c1, c2)
    assert linfty_predictor(0.0, c2, c_inf)["c_inf"] == c_inf
    assert c_inf * alpha(c2) ** 0.6 * c1**0.4 == pytest.approx(sup_phi, rel=1e-12)


def test_check_record_semantics():
    r = CheckRecord.leq("x", "x <= 1", 1.0 + 1e-9, 1.0, 1e-8)
    assert r.passed and r.slack == pytest.approx(-1e-9)
    assert not CheckRecord.leq("y", "y <= 1", 2.0, 1.0).passed
    with pytest.raises(ValueError):
        CheckRecord.leq("z", "nan", float("nan"), 1.0)
    rep = EstimateReport()
    inner = EstimateReport([r], {"k": 1})
    rep.extend(inner, "pre_")
    assert rep["pre_x"].lhs == r.lhs and rep.data == {"pre_k": 1} and rep.passed
    with pytest.raises(KeyError):
        rep["missing"]
    assert rep.to_dict()["records"][0]["name"] == "pre_x"


def test_subsolution_on_solution(flat_mixed):
    Z, ham, _ = flat_mixed
    rep = subsolution_check(Z, alpha(ham.norms.c2), ham)
    assert rep.passed
    assert rep["subsolution"].slack > 0


def test_subsolution_rejects_curved_target():
    ch = make_chart("hyperbolic", 1)
    Z = CylinderField.zero_section(ch, default_sgrid(4.0, 8, 1.0), TorusGrid(4, 4))
    with pytest.raises(ValueError):
        subsolution_check(Z, 1.0)


def test_mean_value_fit(flat_mixed):
    Z, ham, _ = flat_mixed
    a = alpha(ham.norms.c2)
    rep = mean_value_check(Z, a, count=20, seed=3)
    fitted = rep.data["C_mv_fitted"]
    assert rep.passed and fitted > 0
    assert mean_value_check(Z, a, count=20, seed=3, c_mv=fitted * 1.001).passed
    assert not mean_value_check(Z, a, count=20, seed=3, c_mv=fitted * 0.5).passed


def test_mean_value_radius_guard(flat_mixed):
    Z, ham, _ = flat_mixed
    a = alpha(ham.norms.c2)
    with pytest.raises(ValueError):
        mean_value_check(Z, a, centers=[(0.0, 0.0, 0.0)], radii=[2 * r0(a)])


def test_pbar_chain(flat_mixed):
    Z, ham, _ = flat_mixed
    rep = pbar_check(Z, ham, ham.norms.c1, energy_E=energy(Z)["E"], r=0.5)
    for name in ("pbar_ode", "pbar_bound", "a_bound"):
        assert rep[name].passed, rep[name]
    chain = [r for r in rep.records if r.name.startswith("window")]
    assert chain and all(r.passed for r in chain)
    # the representation is second order in s; coarse grids sit near 1e-4
    assert rep["pbar_representation"].lhs < 1e-3


def test_energy_budget_chain(flat_mixed):
    Z, ham, _ = flat_mixed
    rep = energy_budget_check(Z, ham, ham.norms.c1, ham.norms.oscillation, mu=1.0)
    assert rep.passed, [r.name for r in rep.records if not r.passed]
    assert all(r.slack >= -r.tolerance for r in rep.records)


def test_zero_field_has_no_budget_usage():
    ch = make_chart("flat", 1)
    from crpslab.hamiltonians import HamiltonianSpec, Perturbation, CutoffFamily
    ham = HamiltonianSpec(ch, Perturbation("zero", 1), CutoffFamily(1.0))
    Z = CylinderField.zero_section(ch, default_sgrid(10.0, 32, 1.0), TorusGrid(4, 4))
    assert np.all(phi_field(Z) == 0)
    assert subsolution_check(Z, 0.0, ham).passed


@pytest.mark.parametrize("method,n", [("radial", 400), ("3d", 24)])
def test_barrier_comparison(method, n):
    rep = barrier_check(-math.pi**2 / 8, 1.0, method, n)
    assert rep.passed, [(r.name, r.lhs, r.rhs) for r in rep.records]
    assert rep.data["tau_max"] <= math.e * kappa0_bound()


def test_exponent_law_synthetic():
    c1 = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    c2 = 1.2 * c1
    rep = exponent_law_check(c1, c2, 0.2 * c1**2)
    assert rep.passed and rep.data["budget"][0] == pytest.approx(0.2 * 1e-2)
    # a ladder that decays slower than the budget must fail
    assert not exponent_law_check(c1, c2, 0.2 * c1**0.1).passed
    # order of input rungs is irrelevant
    perm = [2, 0, 3, 1]
    assert exponent_law_check(c1[perm], c2[perm], (0.2 * c1**2)[perm]).data["C_inf"] == rep.data["C_inf"]


def test_curved_diagnostics_do_not_judge():
    from crpslab.fueter import solve_bvp
    from crpslab.hamiltonians import CutoffFamily, HamiltonianSpec, Perturbation
    ch = make_chart("hyperbolic", 1)
    ham = HamiltonianSpec(ch, Perturbation("mixed", 1, 0.04), CutoffFamily(1.0))
    Z, rep = solve_bvp(CylinderField.zero_section(ch, default_sgrid(10.0, 24, 1.0), TorusGrid(4, 4)), ham)
    out = curved_hessian_diagnostics(Z)
    assert isinstance(out, dict) and "passed" not in out


def test_small_closed_form_values():
    assert alpha(1.0) == 32.0
    assert r0(0.5) == 1.0
    assert round(r0(32.0), 5) == 0.19712
    mus = np.linspace(-math.pi**2 / 8, -1e-3, 25)
    k0 = np.array([barrier_kappa(0.0, m) for m in mus])
    assert np.all(np.diff(k0) < 0)
    rho = np.linspace(0.0, 2.0, 41)
    assert np.all(barrier_kappa(rho, -1.0) <= barrier_kappa(0.0, -1.0) + 1e-15)
    assert float(phi1(2.0)) == pytest.approx(0.0, abs=1e-15)
    assert float(phi1(1.5)) == pytest.approx(math.sqrt(2) / 3, rel=1e-14)


def test_predictor_power_law():
    c2 = 0.02
    a = alpha(c2)
    edge = linfty_predictor(0.0, c2)["admissible"]
    assert linfty_predictor(edge, c2)["r_star"] == pytest.approx(r0(a), rel=1e-12)
    b1 = linfty_predictor(edge / 2, c2)["budget"]
    b2 = linfty_predictor(edge / 4, c2)["budget"]
    assert b2 / b1 == pytest.approx(2 ** -0.4, rel=1e-13)
    assert linfty_predictor(1e-30, c2)["budget"] < 1e-10


def test_mean_value_constant_phi():
    ch = make_chart("flat", 1)
    Z = CylinderField.zero_section(ch, default_sgrid(6.0, 48, 1.0), TorusGrid(8, 8))
    Z = Z.with_values(Z.values + np.array([0.0, 0.0, 0.3, -0.1]))
    rep = mean_value_check(Z, 1.0, count=10, seed=1)
    assert rep.data["C_mv_fitted"] <= 1.0 + 1e-12
    assert rep.passed
