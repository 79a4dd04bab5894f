"""Numerical certification of the flat confinement estimates and the windowed energy budget.

Every check is a one-sided inequality ``lhs <= rhs`` with explicit slack
``rhs - lhs``; a check passes when the slack is at least ``-tolerance``.
Torus integrals use the normalised measure dx dy / 4 pi^2.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.sparse import coo_matrix, diags
from scipy.sparse.linalg import spsolve

from .fields import CylinderField
from .geometry import complex_structure, hyperkahler_frame, kinetic, split_basis
from .hamiltonians import HamiltonianSpec

LAMBDA1 = math.pi**2 / 4
MU_MIN = -math.pi**2 / 8


@dataclass
class CheckRecord:
    name: str
    statement: str
    lhs: float
    rhs: float
    slack: float
    passed: bool
    tolerance: float
    resolution: list

    @classmethod
    def leq(cls, name, statement, lhs, rhs, tol=0.0, resolution=()):
        lhs, rhs = float(lhs), float(rhs)
        slack = rhs - lhs
        if not np.isfinite(slack):
            raise ValueError(f"{name}: non-finite slack")
        return cls(name, statement, lhs, rhs, slack, bool(slack >= -tol), float(tol), list(resolution))


@dataclass
class EstimateReport:
    records: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def add(self, rec: CheckRecord):
        self.records.append(rec)
        return rec

    def extend(self, other: "EstimateReport", prefix=""):
        for r in other.records:
            self.records.append(CheckRecord(**dict(asdict(r), name=prefix + r.name)))
        for k, v in other.data.items():
            self.data[prefix + k] = v
        return self

    @property
    def passed(self):
        return all(r.passed for r in self.records)

    def __getitem__(self, name):
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed, "records": [asdict(r) for r in self.records], "data": self.data}


# ---------------------------------------------------------------------------
# closed-form ingredients


def alpha(c2norm):
    """alpha = 16 c (1 + c) for c = ||h||_{C^2}."""
    if c2norm < 0:
        raise ValueError("C^2 norm must be nonnegative")
    return 16.0 * c2norm * (1.0 + c2norm)


def r0(a):
    """Largest admissible radius: min{1, pi / sqrt(2(4 alpha - 1))}, and 1 when alpha <= 1/4."""
    if a < 0:
        raise ValueError("alpha must be nonnegative")
    if a <= 0.25:
        return 1.0
    return min(1.0, math.pi / math.sqrt(2.0 * (4.0 * a - 1.0)))


def barrier_kappa(rho, mu):
    """Radial solution of (-Delta + mu) kappa = 1 on B_2(0) in R^3 with zero boundary values."""
    if not (MU_MIN <= mu < 0):
        raise ValueError(f"mu must lie in [-pi^2/8, 0), got {mu}")
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or np.any(rho > 2):
        raise ValueError("rho must lie in [0, 2]")
    w = math.sqrt(-mu)
    safe = np.where(rho > 0, rho, 1.0)
    ratio = np.where(rho > 0, 2.0 * np.sin(w * safe) / (safe * math.sin(2 * w)), 2.0 * w / math.sin(2 * w))
    return -(ratio - 1.0) / mu


def kappa0_bound():
    """kappa(0) at mu = -pi^2/8: 4 sqrt 2/(pi sin(pi/sqrt 2)) - 8/pi^2."""
    return 4 * math.sqrt(2) / (math.pi * math.sin(math.pi / math.sqrt(2))) - 8 / math.pi**2


def phi1(rho):
    """First Dirichlet eigenfunction of -Delta on B_2(0), radial profile sin(pi rho/2)/rho."""
    rho = np.asarray(rho, dtype=float)
    safe = np.where(rho > 0, rho, 1.0)
    return np.where(rho > 0, np.sin(0.5 * math.pi * safe) / safe, 0.5 * math.pi)


def eigen_data():
    return LAMBDA1, phi1


def linfty_predictor(c1norm, c2norm, c_inf=1.0):
    """r_* = (3 c1 / 2 alpha)^{1/5} and the budget C_inf alpha^{3/5} c1^{2/5}."""
    a = alpha(c2norm)
    R0 = r0(a)
    admissible = min(1.0, (2 * a / 3) * R0**5)
    if c1norm < 0 or c1norm > admissible * (1 + 1e-12):
        raise ValueError(f"||h||_C1 = {c1norm} outside admissible range [0, {admissible}]")
    r_star = (3 * c1norm / (2 * a)) ** 0.2 if a > 0 else 0.0
    return {"alpha": a, "R0": R0, "admissible": admissible, "r_star": r_star,
            "budget": c_inf * a**0.6 * c1norm**0.4, "c_inf": c_inf}


def nu(delta, c2norm, c_inf):
    """Smallness threshold min{1, (2 alpha/3) R0^5, (delta^2 / 2 C_inf)^{5/2} alpha^{-3/2}}, relative to C_inf."""
    a = alpha(c2norm)
    if a == 0:
        return 1.0
    return min(1.0, (2 * a / 3) * r0(a) ** 5, (delta**2 / (2 * c_inf)) ** 2.5 * a**-1.5)


def calibrate_c_inf(sup_phi, c1norm, c2norm):
    """Smallest C_inf for which one run meets its budget."""
    return float(sup_phi) / (alpha(c2norm) ** 0.6 * c1norm**0.4)


# ---------------------------------------------------------------------------
# field helpers


def phi_field(Z: CylinderField):
    """Phi = 1/2 |p|_g^2 at the nodes."""
    return kinetic(Z.chart, Z.q, Z.p)[0]


def _res(Z):
    return [Z.sgrid.ns, Z.grid.nx, Z.grid.ny]


def _solution_record(Z, ham, tol):
    from .fueter import FueterProblem

    prob = FueterProblem(Z.chart, ham, Z.sgrid, Z.grid, Z.q_base)
    r = float(np.max(np.abs(prob.residual(Z.values.reshape(-1)))))
    return CheckRecord.leq("input_is_solution", "discrete residual of the input field", r, tol, 0.0, _res(Z))


def _cell_weights(sg, lo, hi):
    a = np.clip(sg.s[:-1], lo, hi)
    b = np.clip(sg.s[1:], lo, hi)
    return np.maximum(b - a, 0.0)


# ---------------------------------------------------------------------------
# checks


def subsolution_check(Z: CylinderField, a, ham: HamiltonianSpec | None = None, tol=1e-8, interior=1):
    """max over interior nodes of (-Delta Phi + d_s Phi - alpha Phi) - alpha, which must be <= 0."""
    if Z.chart.kind != "flat":
        raise ValueError("subsolution check is stated for flat targets")
    rep = EstimateReport()
    if ham is not None:
        rep.add(_solution_record(Z, ham, 1e-8))
    phi = phi_field(Z)[..., None]
    lap = Z.sgrid.dss(phi) + Z.grid.laplacian(phi)
    lhs = (-lap + Z.sgrid.ds(phi) - a * phi)[..., 0]
    sl = slice(interior, Z.sgrid.ns - interior)
    worst = float(np.max(lhs[sl]))
    rep.add(CheckRecord.leq("subsolution", "-Lap Phi + d_s Phi - alpha Phi <= alpha (worst node)", worst, a, tol, _res(Z)))
    rep.data["alpha"] = a
    return rep


def _ball_masks(Z, center, r):
    s0, x0, y0 = center
    X, Y = Z.grid.mesh()
    dx = np.mod(X - x0 + np.pi, 2 * np.pi) - np.pi
    dy = np.mod(Y - y0 + np.pi, 2 * np.pi) - np.pi
    ds = Z.sgrid.s - s0
    return ds[:, None, None] ** 2 + (dx**2 + dy**2)[None]


def mean_value_check(Z: CylinderField, a, centers=None, radii=None, count=50, seed=0, c_mv=None):
    """Fit the smallest C_mv with max_{B_r} Phi <= C_mv (avg_{B_2r} Phi + alpha r^2) over a sweep of balls.

    Ball averages weight nodes by trapezoid s-weights (the s-grid is nonuniform).
    Passes when every ball has a positive right-hand side, i.e. a finite C_mv exists;
    if ``c_mv`` is given the frozen constant is checked as well.
    """
    phi = phi_field(Z)
    R0 = r0(a)
    sg = Z.sgrid
    w = sg.trapezoid_weights()[:, None, None] * np.ones(Z.grid.shape)[None]
    rng = np.random.default_rng(seed)
    if centers is None:
        # centers snapped to nodes, so every inner ball holds at least one node
        lo, hi = sg.s[0] + 2 * R0, sg.s[-1] - 2 * R0
        ok = np.flatnonzero((sg.s >= max(lo, -1.5)) & (sg.s <= min(hi, 2.5)))
        if ok.size == 0:
            ok = np.flatnonzero((sg.s >= lo) & (sg.s <= hi))
        x, y = Z.grid.x, Z.grid.y
        centers = np.column_stack([sg.s[rng.choice(ok, count)], x[rng.integers(0, x.size, count)],
                                   y[rng.integers(0, y.size, count)]])
        radii = rng.uniform(0.25 * R0, R0, count)
    ratios = []
    rows = []
    for c, r in zip(np.atleast_2d(centers), np.atleast_1d(radii)):
        if r > R0 * (1 + 1e-12):
            raise ValueError(f"radius {r} exceeds R0 = {R0}")
        if c[0] - 2 * r < sg.s[0] or c[0] + 2 * r > sg.s[-1]:
            raise ValueError("ball leaves the computational domain")
        d2 = _ball_masks(Z, c, r)
        inner, outer = d2 <= r * r, d2 <= 4 * r * r
        if not inner.any():
            raise ValueError("ball contains no nodes; refine the grid or enlarge r")
        lhs = float(phi[inner].max())
        avg = float(np.sum(phi[outer] * w[outer]) / np.sum(w[outer]))
        rhs = avg + a * r * r
        rows.append((lhs, rhs))
        ratios.append(lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else np.inf))
    fitted = float(max(ratios)) if ratios else 0.0
    rep = EstimateReport(data={"C_mv_fitted": fitted if np.isfinite(fitted) else None, "balls": len(rows), "R0": R0})
    degenerate = sum(1 for lhs, rhs in rows if rhs <= 0 and lhs > 0)
    rep.add(CheckRecord.leq("mean_value_finite", "balls with Phi > 0 but avg_B2r Phi + alpha r^2 = 0",
                            degenerate, 0, 0.0, _res(Z)))
    if c_mv is not None and rows:
        k = int(np.argmax(ratios))
        rep.add(CheckRecord.leq("mean_value_frozen", "max_Br Phi <= C_mv (avg_B2r Phi + alpha r^2), worst ball",
                                rows[k][0], c_mv * rows[k][1], 0.0, _res(Z)))
    return rep


def _cell_quantities(Z, ham):
    sg = Z.sgrid
    Zm = sg.cell_avg(Z.values)
    Zs = sg.cell_diff(Z.values)
    X, Y = Z.grid.mesh()
    beta = ham.beta(sg.mid)[:, None, None]
    return Zm, Zs, X[None], Y[None], beta


def pbar_check(Z: CylinderField, ham: HamiltonianSpec, c1norm, energy_E=None, windows=None, r=None,
               rep_tol=1e-6, bound_tol=1e-6):
    """Checks on the torus average p-bar(s): its ODE, its integral representation, its bound, and
    the Poincare chain on s-windows of length 4r."""
    if Z.chart.kind != "flat":
        raise ValueError("p-bar checks are stated for flat targets")
    sg = Z.sgrid
    d = Z.chart.dim
    res = _res(Z)
    rep = EstimateReport()
    pert = ham.perturbation
    pbar = Z.p.mean(axis=(1, 2))
    # (i) discrete ODE at cell midpoints, a evaluated on cell averages
    Zm, Zs, X, Y, beta = _cell_quantities(Z, ham)
    if pert.is_zero:
        a_mid = np.zeros((sg.ns - 1, d))
        a_node = np.zeros((sg.ns, d))
    else:
        a_mid = (beta[..., None] * pert.grad(X, Y, Zm[..., :d], Zm[..., d:])[..., 2 + d:]).mean(axis=(1, 2))
        bn = ham.beta(sg.s)[:, None, None, None]
        Xn, Yn = Z.grid.mesh()
        a_node = (bn * pert.grad(Xn, Yn, Z.q, Z.p)[..., 2 + d:]).mean(axis=(1, 2))
    ode = sg.cell_diff(pbar) - sg.cell_avg(pbar) - a_mid
    rep.add(CheckRecord.leq("pbar_ode", "|pbar' - pbar - a| at cell midpoints", np.max(np.abs(ode)), 0.0, 1e-8, res))
    # (ii) pbar(s) = -int_s^S e^{s-t} a(t) dt with a spline through the nodal values
    rep_vals = _pbar_representation(sg.s, a_node)
    err = float(np.max(np.abs(rep_vals - pbar)))
    rep.add(CheckRecord.leq("pbar_representation", "|pbar - (-int_s e^{s-t} a)| (spline quadrature)", err, 0.0, rep_tol, res))
    # (iii) bounds
    rep.add(CheckRecord.leq("a_bound", "sup |a(s)| <= ||h||_C1", np.max(np.linalg.norm(a_node, axis=-1)), c1norm, bound_tol, res))
    rep.add(CheckRecord.leq("pbar_bound", "sup |pbar(s)| <= ||h||_C1", np.max(np.linalg.norm(pbar, axis=-1)), c1norm, bound_tol, res))
    rep.data["pbar_sup"] = float(np.max(np.linalg.norm(pbar, axis=-1)))
    rep.data["representation_error"] = err
    # Poincare chain
    if r is not None:
        E = energy_E
        if E is None:
            from .fueter import energy

            E = energy(Z)["E"]
        centers = windows if windows is not None else (-0.5, 0.5 * ham.cutoff.tau, ham.cutoff.tau + 0.5)
        for k, s0 in enumerate(centers):
            rep.extend(_poincare_chain(Z, ham, c1norm, E, s0, r), prefix=f"window{k}_")
    return rep


def _pbar_representation(s, a_node, order=8):
    """Backward accumulation of -int_{s_i}^{S} e^{s_i - t} a(t) dt (Gauss-Legendre per cell on a cubic spline)."""
    spl = CubicSpline(s, a_node, axis=0)
    x, w = np.polynomial.legendre.leggauss(order)
    out = np.zeros_like(a_node)
    acc = np.zeros(a_node.shape[1:])
    for i in range(len(s) - 2, -1, -1):
        lo, hi = s[i], s[i + 1]
        t = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        cell = np.einsum("k,k...->...", 0.5 * (hi - lo) * w * np.exp(lo - t), spl(t))
        acc = np.exp(lo - hi) * acc + cell
        out[i] = -acc
    return out


def _poincare_chain(Z, ham, c1, E, s0, r):
    sg = Z.sgrid
    d = Z.chart.dim
    res = _res(Z)
    ib = complex_structure(Z.chart.n)
    Zm, Zs, X, Y, beta = _cell_quantities(Z, ham)
    wts = _cell_weights(sg, s0 - 2 * r, s0 + 2 * r)
    pm = Zm[..., d:]
    p0 = pm - pm.mean(axis=(1, 2), keepdims=True)
    px, py = Z.grid.dx(pm), Z.grid.dy(pm)
    dbar2 = np.mean(np.sum((px + py @ ib.T) ** 2, axis=-1), axis=(1, 2))   # ||2 dbar p||^2 per cell
    if ham.perturbation.is_zero:
        hq = np.zeros_like(pm)
    else:
        hq = beta[..., None] * ham.perturbation.grad(X, Y, Zm[..., :d], pm)[..., 2:2 + d]
    qs2 = np.mean(np.sum(Zs[..., :d] ** 2, axis=-1), axis=(1, 2))
    hq2 = np.mean(np.sum(hq**2, axis=-1), axis=(1, 2))
    p02 = np.mean(np.sum(p0**2, axis=-1), axis=(1, 2))
    pb2 = np.sum(pm.mean(axis=(1, 2)) ** 2, axis=-1)
    p2 = np.mean(np.sum(pm**2, axis=-1), axis=(1, 2))
    I = lambda f: float(np.sum(wts * f))  # noqa: E731
    rep = EstimateReport(data={"s0": s0, "r": r})
    rep.add(CheckRecord.leq("poincare", "int ||p0||^2 <= 4 int ||dbar p||^2", I(p02), I(dbar2), 1e-12, res))
    rep.add(CheckRecord.leq("equation_split", "4 int ||dbar p||^2 <= 2 int ||d_q h||^2 + 2 int ||d_s q||^2",
                            I(dbar2), 2 * I(hq2) + 2 * I(qs2), 1e-12, res))
    rep.add(CheckRecord.leq("window_bound", "2 int ||d_q h||^2 + 2 int ||d_s q||^2 <= 8 r ||h||^2 + 2E",
                            2 * I(hq2) + 2 * I(qs2), 8 * r * c1**2 + 2 * E, 1e-12, res))
    rep.add(CheckRecord.leq("ball_to_slab", "1/2 int ||p||^2 <= int |pbar|^2 + int ||p0||^2",
                            0.5 * I(p2), I(pb2) + I(p02), 1e-12, res))
    rep.add(CheckRecord.leq("slab_total", "int |pbar|^2 + int ||p0||^2 <= 12 r ||h||^2 + 2E",
                            I(pb2) + I(p02), 12 * r * c1**2 + 2 * E, 1e-12, res))
    return rep


def energy_budget_check(Z: CylinderField, ham: HamiltonianSpec, c1norm, oscillation, mu=1.0, delta=None,
                        identity_rtol=1e-4, tol=1e-10):
    """Windowed energy budget on K = [-mu, mu] x T^2, each intermediate inequality recomputed.

    ``oscillation`` is an upper estimate of sup h - inf h over the region explored by Z
    (so that the Hofer norm of beta h is at most min(1, tau) times it).
    """
    from .fueter import energy

    sg = Z.sgrid
    d = Z.chart.dim
    res = _res(Z)
    rep = EstimateReport()
    en = energy(Z, ham, window=mu)
    E = en["E"]
    hofer = ham.cutoff.scale * oscillation
    rhs_id = en["identity_rhs"]
    rel = abs(E - rhs_id) / max(abs(rhs_id), 1e-300) if (E or rhs_id) else 0.0
    rep.add(CheckRecord.leq("energy_identity", "|E + int int beta' h| / |int int beta' h|", rel, identity_rtol, 0.0, res))
    rep.add(CheckRecord.leq("energy_hofer", "E <= 2 ||h||_Hofer", E, 2 * hofer, tol, res))
    rep.add(CheckRecord.leq("hofer_c1", "2 ||h||_Hofer <= 4 ||h||_C1", 2 * hofer, 4 * c1norm, tol, res))

    Zm, Zs, X, Y, beta = _cell_quantities(Z, ham)
    Zx, Zy = Z.grid.dx(Zm), Z.grid.dy(Zm)
    wts = _cell_weights(sg, -mu, mu)
    vol = 2.0 * mu
    if Z.chart.kind == "flat":
        from .geometry import canonical_i

        G = None
        Ic = canonical_i(Z.chart.n)
        IZy = Zy @ Ic.T
        sq = lambda v: np.sum(v * v, axis=-1)  # noqa: E731
        ip = lambda u, v: np.sum(u * v, axis=-1)  # noqa: E731
        solveG = lambda v: v  # noqa: E731
    else:
        fr = hyperkahler_frame(Z.chart, Zm[..., :d], Zm[..., d:])
        G = fr.G
        IZy = np.einsum("...ij,...j->...i", fr.I, Zy)
        sq = lambda v: np.einsum("...i,...ij,...j->...", v, G, v)  # noqa: E731
        ip = lambda u, v: np.einsum("...i,...ij,...j->...", u, G, v)  # noqa: E731
        solveG = lambda v: np.linalg.solve(G, v[..., None])[..., 0]  # noqa: E731
    I = lambda f: float(np.sum(wts * np.mean(f, axis=(1, 2))))  # noqa: E731

    dH, _ = ham.differential(None, X, Y, Zm[..., :d], Zm[..., d:], beta=beta)
    gradH = solveG(dH)
    _, dq0, xi = kinetic(Z.chart, Zm[..., :d], Zm[..., d:])
    grad0 = solveG(np.concatenate([dq0, xi], axis=-1))
    grad_h = gradH - grad0
    dI = Zx - IZy
    topo = I(ip(Zx, IZy))
    lhs_I = I(sq(dI))
    rep.add(CheckRecord.leq("di_expansion", "|int |d_I Z|^2 - int(|Z_x|^2+|Z_y|^2) + 2 int G(Z_x, I Z_y)|",
                            abs(lhs_I - (I(sq(Zx)) + I(sq(Zy)) - 2 * topo)), 0.0, tol * max(1.0, lhs_I), res))
    rep.add(CheckRecord.leq("topological_term", "|int ds ^ Z* omega_0| vanishes", abs(topo), 0.0, 1e-8, res))
    EK = I(sq(Zs)) + I(sq(Zx)) + I(sq(Zy))
    via_eq = I(sq(Zs)) + I(sq(gradH - Zs))
    rep.add(CheckRecord.leq("equation_substitution", "|int |dZ|^2 - int(|Z_s|^2 + |grad H - Z_s|^2)|",
                            abs(EK - via_eq), 0.0, 1e-8 * max(1.0, EK), res))
    bound3 = 3 * I(sq(Zs)) + 2 * I(sq(gradH))
    rep.add(CheckRecord.leq("cauchy_schwarz", "int(|Z_s|^2 + |grad H - Z_s|^2) <= int(3|Z_s|^2 + 2|grad H|^2)",
                            via_eq, bound3, tol, res))
    p2 = 2 * kinetic(Z.chart, Zm[..., :d], Zm[..., d:])[0]
    a_gap = p2 - sq(grad0)
    rep.add(CheckRecord.leq("vertical_gradient", "|(0, A_p p)|_G^2 <= |p|_g^2 (worst cell)",
                            float(np.max(-a_gap)), 0.0, tol, res))
    dsup = float(np.sqrt(np.max(p2))) if delta is None else float(delta)
    hnorm2 = float(np.max(sq(grad_h)))
    rep.add(CheckRecord.leq("gradient_h_bound", "sup |beta grad h|_G <= ||h||_C1", math.sqrt(hnorm2), c1norm, 1e-9, res))
    split = 4 * I(sq(grad_h)) + 4 * I(sq(grad0))
    rep.add(CheckRecord.leq("gradient_split", "2 int |grad H|^2 <= 4 int |grad h|^2 + 4 int |(0, A_p p)|^2",
                            2 * I(sq(gradH)), split, tol, res))
    chain = 3 * E + 4 * vol * (c1norm**2 + dsup**2)
    rep.add(CheckRecord.leq("window_chain", "int(3|Z_s|^2 + 2|grad H|^2) <= 3E + 4 vol (||h||^2 + delta^2)",
                            bound3, chain, tol, res))
    CK = max(12.0, 4 * vol)
    final = CK * (dsup**2 + c1norm**2 + c1norm)
    rep.add(CheckRecord.leq("energy_budget", "E_K <= C(K)(delta^2 + ||h||^2 + ||h||), C(K) = max(12, 4 vol K)",
                            EK, final, tol, res))
    rep.data.update({"E": E, "E_K": EK, "identity_rhs": rhs_id, "identity_rhs_trapezoid": en["identity_rhs_trapezoid"],
                     "C_K": CK, "delta": dsup, "mu": mu, "hofer_estimate": hofer})
    return rep


# ---------------------------------------------------------------------------
# barrier comparison


def _radial_dirichlet(mu, rhs, n):
    """Solve -u'' - (2/rho) u' + mu u = rhs(rho) on (0, 2), u(2) = 0, via w = rho u."""
    rho = np.linspace(0.0, 2.0, n + 1)
    h = rho[1] - rho[0]
    ri = rho[1:-1]
    main = 2.0 / h**2 + mu
    A = diags([np.full(n - 2, -1 / h**2), np.full(n - 1, main), np.full(n - 2, -1 / h**2)], [-1, 0, 1], format="csc")
    w = spsolve(A, ri * rhs(ri))
    u = np.empty(n + 1)
    u[1:-1] = w / ri
    u[-1] = 0.0
    # w is odd in rho, so u(0) = w'(0) from a second-order one-sided difference
    u[0] = (-3 * 0.0 + 4 * w[0] - w[1]) / (2 * h)
    return rho, u


def _ball3d_dirichlet(mu, rhs, n):
    """Second-order 3-D solve on B_2(0) with Shortley-Weller stencils at the curved boundary."""
    h = 4.0 / n
    ax = -2.0 + h * np.arange(n + 1)
    Xg, Yg, Zg = np.meshgrid(ax, ax, ax, indexing="ij")
    inside = Xg**2 + Yg**2 + Zg**2 < 4.0 - 1e-12
    idx = -np.ones(inside.shape, dtype=int)
    pts = np.argwhere(inside)
    idx[inside] = np.arange(len(pts))
    rows, cols, vals = [], [], []
    b = rhs(Xg[inside], Yg[inside], Zg[inside]).astype(float)
    for k, (i, j, l) in enumerate(pts):
        x = np.array([ax[i], ax[j], ax[l]])
        diag = mu
        for axis in range(3):
            dist = []
            for sgn in (-1, 1):
                nb = [i, j, l]
                nb[axis] += sgn
                if idx[tuple(nb)] >= 0:
                    dist.append((h, idx[tuple(nb)]))
                else:
                    c = x[axis]
                    rest = np.sum(x**2) - c * c
                    edge = math.sqrt(4.0 - rest)
                    dist.append((abs(sgn * edge - c), -1))
            (hm, im), (hp, ip) = dist
            cm, cp = 2 / (hm * (hm + hp)), 2 / (hp * (hm + hp))
            diag += cm + cp
            if im >= 0:
                rows.append(k), cols.append(im), vals.append(-cm)
            if ip >= 0:
                rows.append(k), cols.append(ip), vals.append(-cp)
        rows.append(k), cols.append(k), vals.append(diag)
    A = coo_matrix((vals, (rows, cols)), shape=(len(pts), len(pts))).tocsc()
    u = spsolve(A, b)
    return np.sqrt(np.sum(np.stack([Xg, Yg, Zg])[:, inside] ** 2, axis=0)), Zg[inside], u


def barrier_check(mu, r=1.0, method="radial", n=400, tol=None):
    """e kappa - tau >= 0 for the tau-problem (-Delta + mu) tau = e^{-r sigma/2} on B_2(0).

    ``radial`` solves with the radial majorant e^{r rho/2} of the data (which bounds tau from
    above by comparison); ``3d`` solves the actual problem on a cubic grid.
    """
    if not (MU_MIN <= mu < 0):
        raise ValueError(f"mu must lie in [-pi^2/8, 0), got {mu}")
    rep = EstimateReport(data={"mu": mu, "r": r, "method": method, "n": n})
    if method == "radial":
        rho, tau = _radial_dirichlet(mu, lambda x: np.exp(0.5 * r * x), n)
        _, kap_num = _radial_dirichlet(mu, lambda x: np.ones_like(x), n)
        kap = barrier_kappa(rho, mu)
        step = 2.0 / n
        rep.add(CheckRecord.leq("kappa_discretisation", "|kappa_numeric - kappa_closed_form|",
                                np.max(np.abs(kap_num - kap)), 0.0, 10 * step**2, [n]))
    elif method == "3d":
        rho, sig, tau = _ball3d_dirichlet(mu, lambda x, y, z: np.exp(-0.5 * r * x), n)
        kap = barrier_kappa(np.minimum(rho, 2.0), mu)
        step = 4.0 / n
    else:
        raise ValueError(f"unknown method {method!r}")
    tol = 10 * step**2 if tol is None else tol
    gap = math.e * kap - tau
    rep.add(CheckRecord.leq("barrier", "min (e kappa - tau) >= 0", -float(np.min(gap)), 0.0, tol, [n]))
    rep.add(CheckRecord.leq("tau_nonnegative", "min tau >= 0", -float(np.min(tau)), 0.0, tol, [n]))
    rep.add(CheckRecord.leq("kappa_max", "max kappa <= kappa(0) at mu = -pi^2/8",
                            float(np.max(kap)), kappa0_bound(), 1e-12, [n]))
    rep.data["tau_max"] = float(np.max(tau))
    return rep


# ---------------------------------------------------------------------------
# exponent law


def exponent_law_check(c1s, c2s, sup_phis, calibration=0, rtol=1e-9):
    """Freeze C_inf on one rung, then require monotone sup Phi and sup Phi <= budget on the others."""
    c1s, c2s, sup_phis = map(np.asarray, (c1s, c2s, sup_phis))
    order = np.argsort(-c1s)
    c1s, c2s, sup_phis = c1s[order], c2s[order], sup_phis[order]
    c_inf = calibrate_c_inf(sup_phis[calibration], c1s[calibration], c2s[calibration])
    budgets = np.array([c_inf * alpha(c2) ** 0.6 * c1**0.4 for c1, c2 in zip(c1s, c2s)])
    rep = EstimateReport(data={"C_inf": c_inf, "calibration_rung": int(calibration),
                               "c1": c1s.tolist(), "c2": c2s.tolist(), "sup_phi": sup_phis.tolist(),
                               "budget": budgets.tolist()})
    for k in range(1, len(c1s)):
        rep.add(CheckRecord.leq(f"monotone_{k}", "sup Phi decreases with ||h||_C1", sup_phis[k], sup_phis[k - 1], 0.0, []))
    for k in range(len(c1s)):
        if k != calibration:
            rep.add(CheckRecord.leq(f"budget_{k}", "sup Phi <= C_inf alpha^{3/5} ||h||^{2/5}",
                                    sup_phis[k], budgets[k], rtol * budgets[k], []))
    return rep


# ---------------------------------------------------------------------------
# curved targets: exploratory only


def curved_hessian_diagnostics(Z: CylinderField, stride=4):
    """Sign structure of the G-Hessian of H0 = 1/2 |p|_g^2 on horizontal vectors (no pass/fail)."""
    from .fueter import riemannian_hessian
    from .hamiltonians import Perturbation, bg_christoffel

    chart = Z.chart
    if chart.kind == "flat":
        raise ValueError("diagnostics target curved charts")
    d = chart.dim
    sl = (slice(None, None, stride), slice(None, None, stride), slice(None, None, stride))
    q, p = Z.q[sl], Z.p[sl]
    h0 = HamiltonianSpec(chart, Perturbation("zero", chart.n))
    fr = hyperkahler_frame(chart, q, p)
    dH, _ = h0.differential(None, 0.0, 0.0, q, p)
    gam = bg_christoffel(chart, q, p)
    Hop = riemannian_hessian(h0, None, 0.0, 0.0, q, p, gam, fr.G, dH)
    B = split_basis(chart, q, p)[..., :, :d]
    GH = fr.G @ Hop
    hor = np.swapaxes(B, -1, -2) @ GH @ B
    gram = np.swapaxes(B, -1, -2) @ fr.G @ B
    L = np.linalg.cholesky(gram)
    Li = np.linalg.inv(L)
    ev = np.linalg.eigvalsh(Li @ hor @ np.swapaxes(Li, -1, -2))
    p2 = 2 * kinetic(chart, q, p)[0]
    mask = p2 > 1e-14
    ratio = ev[mask, 0] / p2[mask] if mask.any() else np.zeros(0)
    return {"exploratory": True, "points": int(q[..., 0].size),
            "horizontal_min_eig": float(ev[..., 0].min()), "horizontal_max_eig": float(ev[..., -1].max()),
            "min_eig_over_p2": float(ratio.min()) if ratio.size else 0.0,
            "max_eig_over_p2": float((ev[mask, -1] / p2[mask]).max()) if ratio.size else 0.0}

