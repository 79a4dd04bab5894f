from __future__ import annotations

import numpy as np
import pytest

from crpslab.fueter import SolverConfig, default_sgrid, solve_bvp
from crpslab.fields import CylinderField
from crpslab.geometry import make_chart
from crpslab.grids import TorusGrid
from crpslab.hamiltonians import CutoffFamily, HamiltonianSpec, Perturbation, perturbation_norms


def flat_solve(amplitude=0.04, ns=96, nx=8, ny=8, family="mixed", tau=1.0, S=22.0, sgrid=None, samples=1024):
    chart = make_chart("flat", 1)
    unit = Perturbation(family, 1, 1.0)
    norms = perturbation_norms(unit, chart, samples=samples, seed=0).scaled(amplitude)
    ham = HamiltonianSpec(chart, unit.scaled(amplitude), CutoffFamily(tau), True, norms)
    sg = sgrid if sgrid is not None else default_sgrid(S, ns, tau)
    Z0 = CylinderField.zero_section(chart, sg, TorusGrid(nx, ny), meta={"tau": tau})
    Z, rep = solve_bvp(Z0, ham, SolverConfig(newton_tol=1e-11))
    assert rep.converged, rep.message
    return Z, ham, rep


@pytest.fixture(scope="session")
def flat_mixed():
    """Converged flat solve, mixed family at amplitude 0.04, coarse cylinder."""
    return flat_solve()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance lines, printed once at the end of the run


def pytest_configure(config):
    config._acceptance_lines = {}


@pytest.fixture
def acceptance(request):
    """record(number, passed, detail): one line per criterion; a later FAIL overrides a PASS."""
    lines = request.config._acceptance_lines

    def record(number, passed, detail):
        prev = lines.get(number)
        if prev is None or prev[0]:
            lines[number] = (bool(passed), detail)
        print(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        ok, detail = lines[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
