"""Base Kähler charts and the hyperkähler structure on the disk cotangent bundle.

Real coordinates on the base are ``q = (x_1..x_n, y_1..y_n)`` with
``z_j = x_j + i y_j``.  Covectors use the same ordering, with the complex
momentum ``p_j = p1_j - i p2_j``.  Every array routine accepts arbitrary
leading batch axes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

DELTA0_BALL = 0.5
GUARD_FRACTION = 0.95


class ChartDomainError(ValueError):
    pass


class DegenerationError(ValueError):
    """Raised when the hyperkähler metric degenerates (|xi|_g too close to delta0)."""

    def __init__(self, xi_norm, delta0, message=None):
        self.xi_norm = float(np.max(xi_norm))
        self.delta0 = float(delta0)
        super().__init__(message or f"|xi|_g = {self.xi_norm:.6g} too close to delta0 = {self.delta0:.6g}")


# ---------------------------------------------------------------------------
# real <-> complex conversion layer

def complex_structure(n: int) -> np.ndarray:
    """Matrix of the base complex structure i on R^{2n}: i(u, v) = (-v, u)."""
    o, e = np.zeros((n, n)), np.eye(n)
    return np.block([[o, -e], [e, o]])


def to_complex(v: np.ndarray) -> np.ndarray:
    n = v.shape[-1] // 2
    return v[..., :n] + 1j * v[..., n:]


def to_real(w: np.ndarray) -> np.ndarray:
    return np.concatenate([w.real, w.imag], axis=-1)


def real_matrix(h: np.ndarray) -> np.ndarray:
    """Real 2n x 2n matrix of g = 2 Re(h_{jk̄} dz^j dz̄^k)."""
    hr, hi = h.real, h.imag
    top = np.concatenate([hr, hi], axis=-1)
    bot = np.concatenate([-hi, hr], axis=-1)
    return 2.0 * np.concatenate([top, bot], axis=-2)


def _bdot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _mv(m, v):
    return np.einsum("...ij,...j->...i", m, v)


# ---------------------------------------------------------------------------
# charts

@dataclass
class KahlerData:
    """Hermitian metric data at base points (batched)."""

    h: np.ndarray            # (..., n, n) h_{jk̄}
    h_inv: np.ndarray        # (..., n, n) with h^{jl̄} h_{kl̄} = delta^j_k
    christoffel: np.ndarray  # (..., n, n, n) Gamma^l_{jk} stored as [l, j, k]
    chart: "KahlerChart"
    q: np.ndarray

    def curvature(self, X, Y, v):
        return self.chart.curvature(self.q, X, Y, v)


class KahlerChart:
    """Holomorphic chart of a Kähler manifold with metric h_{jk̄}."""

    kind = "abstract"
    delta0 = np.inf

    def __init__(self, n: int = 1, margin: float = 1e-3):
        if n < 1:
            raise ValueError("complex dimension must be positive")
        self.n = int(n)
        self.dim = 2 * self.n
        self.margin = float(margin)
        self.ib = complex_structure(self.n)

    # subclasses provide hermitian(q), dh_dz(q), dh_dzbar(q), curvature(q, X, Y, v)
    def check_domain(self, q):
        return q

    def hermitian(self, q):
        raise NotImplementedError

    def dh_dz(self, q):
        """[..., k, j, r] = d h_{jr̄} / d z_k."""
        raise NotImplementedError

    def dh_dzbar(self, q):
        """[..., k, j, r] = d h_{jr̄} / d z̄_k."""
        raise NotImplementedError

    def metric(self, q):
        q = self.check_domain(np.asarray(q, dtype=float))
        return real_matrix(self.hermitian(q))

    def metric_inverse(self, q):
        return np.linalg.inv(self.metric(q))

    def metric_derivative(self, q):
        """[..., c, a, b] = d g_ab / d q^c."""
        q = self.check_domain(np.asarray(q, dtype=float))
        dz, dzb = self.dh_dz(q), self.dh_dzbar(q)
        dx = dz + dzb
        dy = 1j * (dz - dzb)
        d = np.concatenate([dx, dy], axis=-3)
        return real_matrix(d)

    def kahler_data(self, q) -> KahlerData:
        q = self.check_domain(np.asarray(q, dtype=float))
        h = self.hermitian(q)
        hinv = np.swapaxes(np.linalg.inv(h), -1, -2)
        # Gamma^l_{jk} = h^{l r̄} d_k h_{j r̄}
        gam = np.einsum("...lr,...kjr->...ljk", hinv, self.dh_dz(q))
        return KahlerData(h=h, h_inv=hinv, christoffel=gam, chart=self, q=q)

    def christoffel(self, q):
        """Real Christoffel symbols [..., a, b, c] = (nabla_{e_b} e_c)^a."""
        kd = self.kahler_data(q)
        n = self.n
        cmat = np.concatenate([np.eye(n), 1j * np.eye(n)], axis=1)  # complex components of e_b
        gc = np.einsum("...ljk,kb,jc->...lbc", kd.christoffel, cmat, cmat)
        return np.concatenate([gc.real, gc.imag], axis=-3)

    def curvature(self, q, X, Y, v):
        raise NotImplementedError


class FlatTorus(KahlerChart):
    """Flat torus T^{2n} with the identity metric in real coordinates."""

    kind = "flat"

    def hermitian(self, q):
        shape = np.shape(q)[:-1]
        return np.broadcast_to(0.5 * np.eye(self.n, dtype=complex), shape + (self.n, self.n)).copy()

    def dh_dz(self, q):
        return np.zeros(np.shape(q)[:-1] + (self.n,) * 3, dtype=complex)

    dh_dzbar = dh_dz

    def curvature(self, q, X, Y, v):
        return np.zeros(np.broadcast_shapes(np.shape(X), np.shape(Y), np.shape(v)))


class ComplexHyperbolic(KahlerChart):
    """Unit-ball model of complex hyperbolic space, holomorphic sectional curvature -4.

    h_{jk̄} = (1/2) [delta_jk / s + z̄_j z_k / s^2],  s = 1 - |z|^2.
    For n = 1 the real metric is (1 - |q|^2)^{-2} times the flat one.
    """

    kind = "hyperbolic"
    delta0 = DELTA0_BALL

    def check_domain(self, q):
        r2 = np.sum(np.asarray(q) ** 2, axis=-1)
        if np.any(r2 >= (1.0 - self.margin) ** 2):
            raise ChartDomainError(f"|q| = {np.sqrt(r2.max()):.6g} outside ball chart (margin {self.margin})")
        return q

    def hermitian(self, q):
        z = to_complex(q)
        s = 1.0 - np.sum(np.abs(z) ** 2, axis=-1)[..., None, None]
        eye = np.eye(self.n)
        return 0.5 * (eye / s + np.conj(z)[..., :, None] * z[..., None, :] / s**2)

    def dh_dz(self, q):
        z = to_complex(q)
        zb = np.conj(z)
        s = 1.0 - np.sum(np.abs(z) ** 2, axis=-1)[..., None, None, None]
        eye = np.eye(self.n)
        # [k, j, r]
        t1 = eye[None, :, :] * zb[..., :, None, None]
        t2 = zb[..., None, :, None] * eye[:, None, :]
        t3 = 2.0 * zb[..., None, :, None] * z[..., None, None, :] * zb[..., :, None, None] / s
        return 0.5 * (t1 + t2 + t3) / s**2

    def dh_dzbar(self, q):
        z = to_complex(q)
        zb = np.conj(z)
        s = 1.0 - np.sum(np.abs(z) ** 2, axis=-1)[..., None, None, None]
        eye = np.eye(self.n)
        t1 = eye[None, :, :] * z[..., :, None, None]
        t2 = eye[:, :, None] * z[..., None, None, :]
        t3 = 2.0 * zb[..., None, :, None] * z[..., None, None, :] * z[..., :, None, None] / s
        return 0.5 * (t1 + t2 + t3) / s**2

    def curvature(self, q, X, Y, v):
        g = self.metric(q)
        ib = self.ib

        def gg(a, b):
            return np.einsum("...i,...ij,...j->...", a, g, b)[..., None]

        iX, iY, iv = X @ ib.T, Y @ ib.T, v @ ib.T
        return (gg(Y, v) * X - gg(X, v) * Y + gg(iY, v) * iX - gg(iX, v) * iY
                + 2.0 * gg(X, iY) * iv)


def make_chart(kind: str, n: int = 1, margin: float = 1e-3) -> KahlerChart:
    kinds = {"flat": FlatTorus, "hyperbolic": ComplexHyperbolic}
    if kind not in kinds:
        raise ValueError(f"unknown chart kind {kind!r}; expected one of {sorted(kinds)}")
    return kinds[kind](n=n, margin=margin)


def curvature_ch(chart: KahlerChart, q, X, Y, v):
    """R_{X,Y} v with the constant-holomorphic-curvature formula of the chart."""
    return chart.curvature(q, X, Y, v)


def kahler_residual(chart: KahlerChart, q, step=1e-5):
    """Max |d h_{jl̄}/d z̄_k - d h_{jk̄}/d z̄_l| using central differences of h."""
    q = np.asarray(q, dtype=float)
    dim = q.shape[-1]
    n = dim // 2
    d = []
    for c in range(dim):
        e = np.zeros(dim)
        e[c] = step
        d.append((chart.hermitian(q + e) - chart.hermitian(q - e)) / (2 * step))
    d = np.stack(d, axis=-3)
    dzb = 0.5 * (d[..., :n, :, :] + 1j * d[..., n:, :, :])  # [k, j, l]
    return np.max(np.abs(dzb - np.swapaxes(dzb, -3, -1)))


# ---------------------------------------------------------------------------
# hyperkähler structure

def phi(w):
    """((sqrt(1+w) - 1)/w)^{1/2}, written as (1 + sqrt(1+w))^{-1/2} so w = 0 needs no branch."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= -1.0):
        raise ValueError("phi requires w > -1")
    out = 1.0 / np.sqrt(1.0 + np.sqrt(1.0 + w))
    return float(out) if out.ndim == 0 else out


def _operator_matrix(chart, q, X, Y):
    """Matrix with columns i R_{X,Y} e_c."""
    dim = chart.dim
    eye = np.eye(dim)
    shape = np.broadcast_shapes(np.shape(X), np.shape(Y))[:-1]
    Xb = np.broadcast_to(X, shape + (dim,))[..., None, :]
    Yb = np.broadcast_to(Y, shape + (dim,))[..., None, :]
    qb = np.broadcast_to(q, shape + (dim,))[..., None, :]
    cols = chart.curvature(qb, Xb, Yb, eye) @ chart.ib.T  # [..., c, a]
    return np.swapaxes(cols, -1, -2)


def xi_norm(chart, q, xi):
    return np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", xi, chart.metric(q), xi), 0.0))


def a_xi(chart: KahlerChart, q, xi) -> np.ndarray:
    """A_xi = Id + i R_{i eta, eta} with eta = phi(i R_{i xi, xi}) xi."""
    q = np.asarray(q, dtype=float)
    xi = np.asarray(xi, dtype=float)
    ib = chart.ib
    m = _operator_matrix(chart, q, xi @ ib.T, xi)
    g = chart.metric(q)
    # m is g-self-adjoint: diagonalise L^T m L^{-T} with g = L L^T
    L = np.linalg.cholesky(g)
    s = np.swapaxes(L, -1, -2) @ m @ np.linalg.inv(np.swapaxes(L, -1, -2))
    s = 0.5 * (s + np.swapaxes(s, -1, -2))
    lam, vec = np.linalg.eigh(s)
    if np.any(np.abs(lam) >= 1.0):
        raise DegenerationError(xi_norm(chart, q, xi), chart.delta0)
    fl = phi(lam)
    fs = (vec * fl[..., None, :]) @ np.swapaxes(vec, -1, -2)
    f_m = np.linalg.inv(np.swapaxes(L, -1, -2)) @ fs @ np.swapaxes(L, -1, -2)
    eta = _mv(f_m, xi)
    return np.eye(chart.dim) + _operator_matrix(chart, q, eta @ ib.T, eta)


def a_xi_closed_form_eigs(t):
    """Eigenvalues of A_xi on span{xi, i xi} and on its complement, t = |xi|_g^2."""
    r = np.sqrt(1.0 - 4.0 * np.asarray(t, dtype=float))
    return r, 0.5 * (1.0 + r)


def crps_forms(n: int):
    """Constant matrices of omega_1, omega_2 in (q, p) coordinates; omega(X, Y) = X^T Omega Y."""
    e, o = np.eye(2 * n), np.zeros((2 * n, 2 * n))
    ib = complex_structure(n)
    om1 = np.block([[o, -e], [e, o]])
    om2 = np.block([[o, ib.T], [-ib, o]])
    return om1, om2


def canonical_i(n: int) -> np.ndarray:
    """Complex structure I on T*Q in holomorphic chart coordinates."""
    ib = complex_structure(n)
    o = np.zeros_like(ib)
    return np.block([[ib, o], [o, ib.T]])


def liouville_primitives(q, p, dq):
    """theta_1(X) = p(dq), theta_2(X) = -theta_1(I X) for the horizontal part dq."""
    n = q.shape[-1] // 2
    ib = complex_structure(n)
    return _bdot(p, dq), -_bdot(p, dq @ ib.T)


@dataclass
class HyperkahlerFrame:
    """Hyperkähler data at cotangent points (batched)."""

    G: np.ndarray
    G_split: np.ndarray
    basis: np.ndarray       # M: split coordinates (u, alpha) -> chart vector (dq, dp)
    A: np.ndarray
    Omega0: np.ndarray
    Omega1: np.ndarray
    Omega2: np.ndarray
    I: np.ndarray
    J: np.ndarray
    K: np.ndarray
    xi: np.ndarray
    xi_norm: np.ndarray
    condition: np.ndarray


def _guard(chart, q, p, guard):
    g = chart.metric(q)
    xi = np.linalg.solve(g, p[..., None])[..., 0]
    nrm = np.sqrt(np.maximum(_bdot(xi, p), 0.0))
    if guard and np.isfinite(chart.delta0) and np.any(nrm > GUARD_FRACTION * chart.delta0):
        raise DegenerationError(nrm, chart.delta0)
    return g, xi, nrm


def split_basis(chart, q, p):
    """M = [[I, 0], [Gamma p, g]]: maps (horizontal u, vertical alpha) to (dq, dp)."""
    dim = chart.dim
    g = chart.metric(q)
    gam = chart.christoffel(q)
    gp = np.einsum("...cab,...c->...ab", gam, p)
    shape = g.shape[:-2]
    M = np.zeros(shape + (2 * dim, 2 * dim))
    M[..., :dim, :dim] = np.eye(dim)
    M[..., dim:, :dim] = gp
    M[..., dim:, dim:] = g
    return M


def bg_metric(chart, q, p, guard=True):
    """Biquard–Gauduchon metric: returns (G in chart coordinates, G in split form, A_xi)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    g, xi, _ = _guard(chart, q, p, guard)
    dim = chart.dim
    A = a_xi(chart, q, xi) if np.isfinite(chart.delta0) else np.broadcast_to(np.eye(dim), g.shape).copy()
    shape = g.shape[:-2]
    Gs = np.zeros(shape + (2 * dim, 2 * dim))
    Gs[..., :dim, :dim] = g @ A
    Gs[..., dim:, dim:] = g @ np.linalg.inv(A)
    Gs = 0.5 * (Gs + np.swapaxes(Gs, -1, -2))
    Mi = np.linalg.inv(split_basis(chart, q, p))
    G = np.swapaxes(Mi, -1, -2) @ Gs @ Mi
    return 0.5 * (G + np.swapaxes(G, -1, -2)), Gs, A


def sasaki_metric(chart, q, p):
    """g ⊕ g in the Levi-Civita splitting, expressed in chart coordinates."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    g = chart.metric(q)
    dim = chart.dim
    Gs = np.zeros(g.shape[:-2] + (2 * dim, 2 * dim))
    Gs[..., :dim, :dim] = g
    Gs[..., dim:, dim:] = g
    Mi = np.linalg.inv(split_basis(chart, q, p))
    G = np.swapaxes(Mi, -1, -2) @ Gs @ Mi
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def recover_jk(G, Omega1, Omega2, cond_limit=1e8):
    """Solve G J = Omega1, G K = Omega2; also returns the condition number of G."""
    J = np.linalg.solve(G, np.broadcast_to(Omega1, G.shape))
    K = np.linalg.solve(G, np.broadcast_to(Omega2, G.shape))
    cond = np.linalg.cond(G)
    if np.any(cond > cond_limit):
        warnings.warn(f"ill-conditioned metric (cond {np.max(cond):.3g})", RuntimeWarning, stacklevel=2)
    return J, K, cond


def hyperkahler_frame(chart, q, p, guard=True) -> HyperkahlerFrame:
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    G, Gs, A = bg_metric(chart, q, p, guard=guard)
    n = chart.n
    om1, om2 = crps_forms(n)
    Ic = canonical_i(n)
    J, K, cond = recover_jk(G, om1, om2)
    g = chart.metric(q)
    xi = np.linalg.solve(g, p[..., None])[..., 0]
    return HyperkahlerFrame(
        G=G, G_split=Gs, basis=split_basis(chart, q, p), A=A,
        Omega0=G @ Ic, Omega1=om1, Omega2=om2,
        I=np.broadcast_to(Ic, G.shape).copy(), J=J, K=K,
        xi=xi, xi_norm=np.sqrt(np.maximum(_bdot(xi, p), 0.0)), condition=cond,
    )


def quaternion_defects(frame: HyperkahlerFrame) -> dict:
    """Spectral norms of J^2+1, K^2+1, IJ-K, IJ+JI, I^2+1 and compatibility residuals."""
    I, J, K, G = frame.I, frame.J, frame.K, frame.G
    eye = np.eye(G.shape[-1])

    def nrm(m):
        return float(np.max(np.linalg.norm(m, ord=2, axis=(-2, -1))))

    return {
        "I2": nrm(I @ I + eye),
        "J2": nrm(J @ J + eye),
        "K2": nrm(K @ K + eye),
        "IJ-K": nrm(I @ J - K),
        "IJ+JI": nrm(I @ J + J @ I),
        "GJ-Omega1": nrm(G @ J - frame.Omega1),
        "GK-Omega2": nrm(G @ K - frame.Omega2),
        "Omega2+Omega1 I": nrm(frame.Omega2 + frame.Omega1 @ I),
    }


def domega0_norm(chart, z, step):
    """Max of the central-difference exterior derivative of omega_0 = G(., I .) at z = (q, p)."""
    z = np.asarray(z, dtype=float)
    dim = z.shape[-1]
    n = dim // 4
    Ic = canonical_i(n)
    e = np.eye(dim) * step
    zp = z[None, :] + e
    zm = z[None, :] - e
    Gp, _, _ = bg_metric(chart, zp[:, : dim // 2], zp[:, dim // 2:])
    Gm, _, _ = bg_metric(chart, zm[:, : dim // 2], zm[:, dim // 2:])
    dw = (Gp @ Ic - Gm @ Ic) / (2 * step)  # [a, b, c] = d_a omega_bc
    d = dw + np.transpose(dw, (1, 2, 0)) + np.transpose(dw, (2, 0, 1))
    return float(np.max(np.abs(d)))


# ---------------------------------------------------------------------------
# Hamiltonian kinetic term and G-gradients

def kinetic(chart, q, p):
    """H0 = 1/2 |p|_g^2 and its chart differential (dH/dq, dH/dp)."""
    ginv = chart.metric_inverse(q)
    xi = _mv(ginv, p)
    H = 0.5 * _bdot(p, xi)
    dg = chart.metric_derivative(q)
    # d/dq^c (p^T g^{-1} p) = -xi^T (d_c g) xi
    dq = -0.5 * np.einsum("...a,...cab,...b->...c", xi, dg, xi)
    return H, dq, xi


def grad_G(chart, q, p, dH, guard=True, frame=None):
    """G-gradient of a function with chart differential dH (last axis 4n)."""
    if frame is None:
        G, _, _ = bg_metric(chart, q, p, guard=guard)
    else:
        G = frame.G
    return np.linalg.solve(G, dH[..., None])[..., 0]
