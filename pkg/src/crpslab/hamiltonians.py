"""Hamiltonians H_s = 1/2 |p|_g^2 + beta_tau(s) h(x, y, q, p), cutoffs and perturbation norms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from scipy.optimize import minimize
from scipy.stats import qmc

from .geometry import KahlerChart, bg_metric, kinetic

# ---------------------------------------------------------------------------
# cutoff family


# below this exp(-1/u) is already zero in double precision; 1/u would overflow for subnormal u
_EDGE_FLOOR = 1.0 / 750.0


def _edge(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = u > _EDGE_FLOOR
    out[m] = np.exp(-1.0 / u[m])
    return out


def _edge_d(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = u > _EDGE_FLOOR
    out[m] = np.exp(-1.0 / u[m]) / u[m] ** 2
    return out


def smoothstep(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1, derivative at most 2 (attained at u = 1/2)."""
    a, b = _edge(u), _edge(1.0 - np.asarray(u, dtype=float))
    return a / (a + b)


def smoothstep_d(u):
    u = np.asarray(u, dtype=float)
    a, b = _edge(u), _edge(1.0 - u)
    da, db = _edge_d(u), _edge_d(1.0 - u)
    return (da * b + a * db) / (a + b) ** 2


@dataclass(frozen=True)
class CutoffFamily:
    """beta_tau: rises on (-1, 0), plateau on [0, tau], falls on (tau, tau + 1).

    For tau < 1 the profile is scaled by tau, so beta_tau -> 0 as tau -> 0.
    """

    tau: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau < 0:
            raise ValueError("tau must be a finite nonnegative number")

    @property
    def scale(self):
        return min(1.0, self.tau)

    @property
    def support(self):
        return (-1.0, self.tau + 1.0)

    def beta(self, s):
        s = np.asarray(s, dtype=float)
        return self.scale * smoothstep(s + 1.0) * smoothstep(self.tau + 1.0 - s)

    def dbeta(self, s):
        s = np.asarray(s, dtype=float)
        a, b = smoothstep(s + 1.0), smoothstep(self.tau + 1.0 - s)
        return self.scale * (smoothstep_d(s + 1.0) * b - a * smoothstep_d(self.tau + 1.0 - s))


# ---------------------------------------------------------------------------
# perturbation families, unit amplitude; variables (x, y, q_0.., p_0..)


def _family_expr(name, n):
    x, y = sp.symbols("x y", real=True)
    q = sp.symbols(f"q0:{2 * n}", real=True)
    p = sp.symbols(f"p0:{2 * n}", real=True)
    p2 = sum(pi**2 for pi in p)
    if name == "zero":
        e = sp.Integer(0)
    elif name == "constant":
        e = sp.Integer(1)
    elif name == "sine_q":
        e = sp.sin(q[0])
    elif name == "mixed":
        e = sp.exp(-p2 / 2) * (p[0] + sp.cos(x + q[0]) + p[n] * sp.sin(y))
    elif name == "localized":
        e = sp.exp(-2 * p2) * (p[0] * sp.cos(x) + sp.sin(y - q[n]) + p[n])
    else:
        raise ValueError(f"unknown perturbation family {name!r}; known: {sorted(FAMILIES)}")
    return e, (x, y) + q + p


FAMILIES = ("zero", "constant", "sine_q", "mixed", "localized")


class Perturbation:
    """Smooth h(x, y, q, p) = amplitude * shape with exact first and second derivatives."""

    def __init__(self, family: str = "mixed", n: int = 1, amplitude: float = 1.0):
        expr, syms = _family_expr(family, n)
        self.family = family
        self.n = n
        self.amplitude = float(amplitude)
        self.expr = expr
        self.nvar = len(syms)
        grad = [sp.diff(expr, v) for v in syms]
        hess = [[sp.diff(g, v) for v in syms] for g in grad]
        self._f = sp.lambdify(syms, expr, "numpy")
        self._g = sp.lambdify(syms, grad, "numpy", cse=True)
        self._h = sp.lambdify(syms, sum(hess, []), "numpy", cse=True)
        self.is_zero = expr == 0

    def scaled(self, amplitude):
        out = object.__new__(Perturbation)
        out.__dict__.update(self.__dict__)
        out.amplitude = float(amplitude)
        out.is_zero = self.is_zero or amplitude == 0.0
        return out

    @staticmethod
    def _args(x, y, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        shape = np.broadcast_shapes(np.shape(x), np.shape(y), q.shape[:-1], p.shape[:-1])
        args = [np.broadcast_to(x, shape), np.broadcast_to(y, shape)]
        args += [np.broadcast_to(q[..., i], shape) for i in range(q.shape[-1])]
        args += [np.broadcast_to(p[..., i], shape) for i in range(p.shape[-1])]
        return args, shape

    @staticmethod
    def _stack(vals, shape):
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in vals], axis=-1)

    def value(self, x, y, q, p):
        args, shape = self._args(x, y, q, p)
        return self.amplitude * np.broadcast_to(np.asarray(self._f(*args), dtype=float), shape)

    def grad(self, x, y, q, p):
        """All first partials, ordered (x, y, q, p)."""
        args, shape = self._args(x, y, q, p)
        return self.amplitude * self._stack(self._g(*args), shape)

    def hess(self, x, y, q, p):
        args, shape = self._args(x, y, q, p)
        m = self._stack(self._h(*args), shape)
        return self.amplitude * m.reshape(shape + (self.nvar, self.nvar))


# ---------------------------------------------------------------------------
# norms


@dataclass
class NormReport:
    c0: float
    c1: float
    c2: float
    hmax: float
    hmin: float
    samples: int
    region: dict = field(default_factory=dict)

    @property
    def oscillation(self):
        return self.hmax - self.hmin

    def scaled(self, factor):
        f = abs(factor)
        lo, hi = sorted((factor * self.hmin, factor * self.hmax))
        return NormReport(self.c0 * f, self.c1 * f, self.c2 * f, hi, lo, self.samples, dict(self.region))

    def to_dict(self):
        return {"c0": self.c0, "c1": self.c1, "c2": self.c2, "max": self.hmax, "min": self.hmin,
                "oscillation": self.oscillation, "samples": self.samples, "region": self.region}


def bg_christoffel(chart, q, p, step=1e-5):
    """Christoffel symbols [..., a, b, c] of the hyperkähler metric by central differences of G."""
    z = np.concatenate([q, p], axis=-1)
    d = z.shape[-1]
    dG = []
    for c in range(d):
        e = np.zeros(d)
        e[c] = step
        Gp, _, _ = bg_metric(chart, (z + e)[..., : d // 2], (z + e)[..., d // 2:], guard=False)
        Gm, _, _ = bg_metric(chart, (z - e)[..., : d // 2], (z - e)[..., d // 2:], guard=False)
        dG.append((Gp - Gm) / (2 * step))
    dG = np.stack(dG, axis=-3)  # [c, a, b] = d_c G_ab
    G, _, _ = bg_metric(chart, q, p, guard=False)
    t = 0.5 * (np.einsum("...ilj->...lij", dG) + np.einsum("...jli->...lij", dG) - dG)
    return np.einsum("...kl,...lij->...kij", np.linalg.inv(G), t)


def _sample_region(chart, region, m, rng):
    n = chart.n
    d = 2 + 4 * n
    sob = qmc.Sobol(d, scramble=True, seed=rng).random(m)
    x = 2 * np.pi * sob[:, 0]
    y = 2 * np.pi * sob[:, 1]
    if chart.kind == "flat":
        q = 2 * np.pi * sob[:, 2: 2 + 2 * n]
    else:
        r = region.get("q_radius", 0.5)
        v = (2 * sob[:, 2: 2 + 2 * n] - 1) * r
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        q = v * np.minimum(1.0, r / np.maximum(nv, 1e-300))
    R = region.get("p_radius", 3.0)
    v = (2 * sob[:, 2 + 2 * n:] - 1) * R
    ginv = chart.metric_inverse(q)
    nv = np.sqrt(np.einsum("...i,...ij,...j->...", v, ginv, v))[:, None]
    p = v * np.minimum(1.0, R / np.maximum(nv, 1e-300))
    return x, y, q, p


def _pointwise_norms(pert, chart, x, y, q, p):
    """(h, |Dh|, |D^2 h|) at sample points; target norms use G on curved charts."""
    h = pert.value(x, y, q, p)
    g = pert.grad(x, y, q, p)
    H = pert.hess(x, y, q, p)
    if chart.kind == "flat":
        dn = np.linalg.norm(g, axis=-1)
        hn = np.max(np.abs(np.linalg.eigvalsh(H)), axis=-1)
        return h, dn, hn
    G, _, _ = bg_metric(chart, q, p)
    L = np.linalg.cholesky(G)
    Li = np.linalg.inv(L)
    gz = g[..., 2:]
    dn = np.sqrt(np.sum(g[..., :2] ** 2, axis=-1) + np.sum((Li @ gz[..., None])[..., 0] ** 2, axis=-1))
    gam = bg_christoffel(chart, q, p)
    Hc = H.copy()
    Hc[..., 2:, 2:] -= np.einsum("...cab,...c->...ab", gam, gz)
    T = np.zeros(H.shape)
    T[..., :2, :2] = np.eye(2)
    T[..., 2:, 2:] = Li
    Hn = T @ Hc @ np.swapaxes(T, -1, -2)
    hn = np.max(np.abs(np.linalg.eigvalsh(0.5 * (Hn + np.swapaxes(Hn, -1, -2)))), axis=-1)
    return h, dn, hn


def perturbation_norms(pert: Perturbation, chart: KahlerChart, region=None, samples=4096, seed=0,
                       polish=6) -> NormReport:
    """C^0, C^1 = max(C^0, sup|Dh|), C^2 = max(C^1, sup|D^2 h|) by quasi-random sampling plus local polishing."""
    region = dict(region or {})
    if chart.kind == "flat":
        region.setdefault("p_radius", 3.0)
    else:
        region.setdefault("q_radius", 0.5)
        region.setdefault("p_radius", 0.4 * chart.delta0)
    rng = np.random.default_rng(seed)
    x, y, q, p = _sample_region(chart, region, samples, rng)
    h, dn, hn = _pointwise_norms(pert, chart, x, y, q, p)
    n2 = 2 * chart.n
    best = {"hmax": h.max(), "hmin": h.min(), "d": dn.max(), "dd": hn.max()}

    if polish and chart.kind == "flat" and not pert.is_zero:
        R = region["p_radius"]

        def unpack(u):
            return u[0], u[1], u[2: 2 + n2], u[2 + n2:]

        def clip(u):
            u = u.copy()
            pn = np.linalg.norm(u[2 + n2:])
            if pn > R:
                u[2 + n2:] *= R / pn
            return u

        objs = {
            "hmax": (lambda u: -float(pert.value(*unpack(clip(u)))), h),
            "hmin": (lambda u: float(pert.value(*unpack(clip(u)))), -h),
            "d": (lambda u: -float(_pointwise_norms(pert, chart, *unpack(clip(u)))[1]), dn),
            "dd": (lambda u: -float(_pointwise_norms(pert, chart, *unpack(clip(u)))[2]), hn),
        }
        pts = np.concatenate([x[:, None], y[:, None], q, p], axis=1)
        for key, (fun, score) in objs.items():
            for idx in np.argsort(score)[::-1][:polish]:
                res = minimize(fun, pts[idx], method="Nelder-Mead",
                               options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
                val = -res.fun if key != "hmin" else res.fun
                if key == "hmin":
                    best[key] = min(best[key], val)
                else:
                    best[key] = max(best[key], val)
    c0 = max(abs(best["hmax"]), abs(best["hmin"]))
    c1 = max(c0, best["d"])
    c2 = max(c1, best["dd"])
    return NormReport(float(c0), float(c1), float(c2), float(best["hmax"]), float(best["hmin"]),
                      int(samples), region)


def hofer_upper(pert: Perturbation, chart: KahlerChart, region=None, samples=4096, seed=0, norms=None):
    """Upper budgets for the Hofer norm: oscillation, 2 * oscillation and 4 ||h||_{C^1}."""
    if norms is None:
        norms = perturbation_norms(pert, chart, region, samples, seed)
    osc = norms.oscillation
    return {"oscillation": osc, "hofer_bound": 2.0 * osc, "c1_bound": 4.0 * norms.c1, "samples": norms.samples}


# ---------------------------------------------------------------------------


@dataclass
class HamiltonianSpec:
    """H_s(x, y, q, p) = [1/2 |p|_g^2 if kinetic] + beta_tau(s) h(x, y, q, p)."""

    chart: KahlerChart
    perturbation: Perturbation
    cutoff: CutoffFamily = field(default_factory=CutoffFamily)
    kinetic: bool = True
    norms: NormReport | None = None

    def beta(self, s):
        # s = None: autonomous torus problem, full-strength perturbation
        return 1.0 if s is None else self.cutoff.beta(s)

    def value(self, s, x, y, q, p, beta=None):
        b = self.beta(s) if beta is None else beta
        out = b * self.perturbation.value(x, y, q, p) if not self.perturbation.is_zero else 0.0
        if self.kinetic:
            out = out + kinetic(self.chart, q, p)[0]
        return out

    def differential(self, s, x, y, q, p, beta=None):
        """Chart differential dH in (q, p) (last axis 4n) and time partials (dH/dx, dH/dy)."""
        b = self.beta(s) if beta is None else beta
        n2 = 2 * self.chart.n
        shape = np.broadcast_shapes(np.shape(x), q.shape[:-1])
        dH = np.zeros(shape + (2 * n2,))
        dt = np.zeros(shape + (2,))
        if not self.perturbation.is_zero:
            g = self.perturbation.grad(x, y, q, p)
            b = np.asarray(b)[..., None] if np.ndim(b) else b
            dH += b * g[..., 2:]
            dt += b * g[..., :2]
        if self.kinetic:
            _, dq, xi = kinetic(self.chart, q, p)
            dH[..., :n2] += dq
            dH[..., n2:] += xi
        return dH, dt

    def hessian_zz(self, s, x, y, q, p, beta=None):
        """Coordinate Hessian of H in (q, p); kinetic part exact only on flat charts."""
        b = self.beta(s) if beta is None else beta
        n2 = 2 * self.chart.n
        shape = np.broadcast_shapes(np.shape(x), q.shape[:-1])
        Hm = np.zeros(shape + (2 * n2, 2 * n2))
        if not self.perturbation.is_zero:
            b = np.asarray(b)[..., None, None] if np.ndim(b) else b
            Hm += b * self.perturbation.hess(x, y, q, p)[..., 2:, 2:]
        if self.kinetic:
            if self.chart.kind != "flat":
                raise NotImplementedError("analytic kinetic Hessian only on flat charts")
            Hm[..., n2:, n2:] += np.eye(n2)
        return Hm
