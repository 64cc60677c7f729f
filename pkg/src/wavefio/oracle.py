"""Exact and discretized spectral computations for -E = -Laplacian + V.

Ground truth for everything the oscillatory-integral side produces: exact
eigenbases on flat tori and round spheres, conservative finite-difference
eigensolves for custom potentials, the functional-calculus evolution
operators, spectral projections, fundamental solutions and the two-point
kernel built from the square root of the pseudoinverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import FlatTorus, RoundSphere

__all__ = [
    "SpectralBasis", "eigenbasis", "projections", "oracle_U",
    "oracle_fundamental", "oracle_omega2", "omega2_kernel", "standard_grid",
    "grid_inner", "fd_eigensolve",
]


# ---------------------------------------------------------------------------
# quadrature grids
# ---------------------------------------------------------------------------

def standard_grid(M, n):
    """Quadrature nodes/weights for integrals against the Riemannian measure.

    Flat torus: uniform n x n (trapezoidal = spectral for periodic smooth
    integrands).  S^2: Gauss-Legendre in cos(theta) x uniform phi with
    n x 2n nodes.  S^3: GL x GL-in-theta x uniform with n x n x 2n."""
    if M.kind == "flat_torus":
        axes = [np.arange(nn) * (P / nn)
                for nn, P in zip([n] * M.dim, M.periods)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        w = np.full(len(pts), np.prod(M.periods) / len(pts))
        return pts, w
    if M.kind == "round_sphere" and M.dim == 2:
        u, wu = np.polynomial.legendre.leggauss(n)
        theta = np.arccos(u)
        phi = np.arange(2 * n) * (2 * math.pi / (2 * n))
        T, P = np.meshgrid(theta, phi, indexing="ij")
        pts = np.stack([T.ravel(), P.ravel()], axis=-1)
        w = np.repeat(wu, 2 * n) * (2 * math.pi / (2 * n)) * M.radius ** 2
        return pts, w
    if M.kind == "round_sphere" and M.dim == 3:
        u, wu = np.polynomial.legendre.leggauss(n)
        chi = np.arccos(u)
        v, wv = np.polynomial.legendre.leggauss(n)
        theta = np.arccos(v)
        phi = np.arange(2 * n) * (2 * math.pi / (2 * n))
        C, T, P = np.meshgrid(chi, theta, phi, indexing="ij")
        pts = np.stack([C.ravel(), T.ravel(), P.ravel()], axis=-1)
        # measure r^3 sin^2(chi) sin(theta) dchi dtheta dphi;
        # GL in cos chi absorbs one sin(chi)
        w = (np.repeat(np.outer(wu * np.sin(chi), wv).ravel(), 2 * n)
             * (2 * math.pi / (2 * n)) * M.radius ** 3)
        return pts, w
    raise NotImplementedError(M.kind)


def grid_inner(w, f, g):
    """L^2 inner product sum(w * conj(f) * g)."""
    return complex(np.sum(w * np.conj(f) * g))


# ---------------------------------------------------------------------------
# spectral basis
# ---------------------------------------------------------------------------

@dataclass
class SpectralBasis:
    manifold: object
    eigenvalues: np.ndarray          # zeta_k of -E, ascending
    labels: list                     # per-mode labels
    source: str                      # exact_torus | exact_sphere | discrete
    v_const: float = 0.0
    _grid: tuple = field(default=None, repr=False)
    _discrete_vecs: np.ndarray = field(default=None, repr=False)

    def n_modes(self):
        return len(self.eigenvalues)

    def evaluate(self, k, X):
        """Values of eigenfunction k at chart-0 points X (..., d)."""
        X = np.asarray(X, dtype=float)
        M = self.manifold
        if self.source == "exact_torus":
            kvec = np.asarray(self.labels[k], dtype=float)
            vol = float(np.prod(M.periods))
            return np.exp(1j * (X @ (2 * math.pi * kvec / M.periods))) / math.sqrt(vol)
        if self.source == "exact_sphere" and M.dim == 2:
            l, m = self.labels[k]
            return _sph_harm(m, l, X[..., 0], X[..., 1]) / M.radius
        if self.source == "discrete":
            pts, w = self._grid
            vals = self._discrete_vecs[:, k]
            return _nearest_interp(pts, vals, X)
        raise NotImplementedError(self.source)

    def evaluate_matrix(self, pts):
        """(npoints, nmodes) matrix of eigenfunction values."""
        cols = [self.evaluate(k, pts) for k in range(self.n_modes())]
        return np.stack(cols, axis=-1)

    def project(self, values, pts, w):
        """Basis coefficients of grid samples: c_k = <v_k, f>."""
        Vm = self.evaluate_matrix(pts)
        return (Vm.conj() * (w * np.asarray(values))[:, None]).sum(axis=0)

    def synthesize(self, coeffs, pts):
        Vm = self.evaluate_matrix(pts)
        return Vm @ np.asarray(coeffs)


def _sph_harm(m, l, theta, phi):
    try:
        from scipy.special import sph_harm_y
        return sph_harm_y(l, m, theta, phi)
    except ImportError:  # older scipy
        from scipy.special import sph_harm
        return sph_harm(m, l, phi, theta)


def _nearest_interp(pts, vals, X):
    X = np.atleast_2d(X)
    d2 = ((pts[None, :, :] - X[:, None, :]) ** 2).sum(-1)
    idx = np.argmin(d2, axis=1)
    out = vals[idx]
    return out if out.shape[0] > 1 else out[0]


def eigenbasis(M, V, cutoff, source="auto", grid_n=None):
    """All eigenpairs of -E = -Laplace + V with zeta <= cutoff.

    Exact bases exist for flat tori and round spheres with constant V;
    otherwise a conservative finite-difference eigensolve is used."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    v_const = None
    if V is None:
        v_const = 0.0
    elif hasattr(V, "c"):
        v_const = float(V.c)
    elif isinstance(V, (int, float)):
        v_const = float(V)

    if source in ("auto", "exact") and v_const is not None:
        if M.kind == "flat_torus":
            return _torus_basis(M, v_const, cutoff)
        if M.kind == "round_sphere":
            return _sphere_basis(M, v_const, cutoff)
    if source == "exact":
        raise ValueError("no exact basis for this configuration")
    return fd_eigensolve(M, V, cutoff, grid_n)


def _torus_basis(M, v_const, cutoff):
    kmax = int(math.ceil(math.sqrt(max(cutoff - v_const, 0.0))
                         * max(M.periods) / (2 * math.pi))) + 1
    labels, zetas = [], []
    ranges = [range(-kmax, kmax + 1)] * M.dim
    import itertools
    for kk in itertools.product(*ranges):
        freq = 2 * math.pi * np.asarray(kk, dtype=float) / M.periods
        z = float(freq @ freq) + v_const
        if z <= cutoff:
            labels.append(tuple(kk))
            zetas.append(z)
    order = np.argsort(zetas, kind="stable")
    return SpectralBasis(M, np.asarray(zetas)[order],
                         [labels[i] for i in order], "exact_torus", v_const)


def _sphere_basis(M, v_const, cutoff):
    labels, zetas = [], []
    r2 = M.radius ** 2
    l = 0
    while True:
        if M.dim == 2:
            z = l * (l + 1) / r2 + v_const
            mult = 2 * l + 1
            mlist = range(-l, l + 1)
        else:
            z = l * (l + 2) / r2 + v_const
            mult = (l + 1) ** 2
            mlist = range(mult)
        if z > cutoff and l > 0:
            break
        if z <= cutoff:
            for m in mlist:
                labels.append((l, m))
                zetas.append(z)
        l += 1
    order = np.argsort(zetas, kind="stable")
    return SpectralBasis(M, np.asarray(zetas)[order],
                         [labels[i] for i in order], "exact_sphere", v_const)


# ---------------------------------------------------------------------------
# discretized eigensolve (conservative FD with mass matrix)
# ---------------------------------------------------------------------------

def fd_eigensolve(M, V, cutoff, grid_n=None, k_max=None):
    """Symmetric finite-difference eigensolve of -E on a chart grid."""
    if M.kind == "flat_torus":
        n = grid_n or 48
        pts, w = standard_grid(M, n)
        nn = n ** M.dim
        idx = np.arange(nn).reshape((n,) * M.dim)
        rows, cols, vals = [], [], []
        hsteps = M.periods / n
        for axis in range(M.dim):
            hstep = hsteps[axis]
            coupling = (np.prod(hsteps) / hstep ** 2)
            fwd = np.roll(idx, -1, axis=axis)
            rows += [idx.ravel(), idx.ravel(), fwd.ravel(), fwd.ravel()]
            cols += [idx.ravel(), fwd.ravel(), idx.ravel(), fwd.ravel()]
            vals += [np.full(nn, coupling), np.full(nn, -coupling),
                     np.full(nn, -coupling), np.full(nn, coupling)]
        A = sp.csr_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nn, nn))
        mass = w
        if V is not None:
            vvals = (np.full(nn, float(V)) if isinstance(V, (int, float))
                     else np.asarray(V.value(pts)))
            A = A + sp.diags(vvals * mass)
        Minv_half = sp.diags(1.0 / np.sqrt(mass))
        S = Minv_half @ A @ Minv_half
        S = 0.5 * (S + S.T)
        k = k_max or min(nn - 2, 80)
        sigma = min(0.0, float(np.min(vvals)) if V is not None else 0.0) - 1.0
        zet, vec = spla.eigsh(S.tocsc(), k=k, sigma=sigma, which="LM")
        vecs = Minv_half @ vec
        keep = zet <= cutoff
        basis = SpectralBasis(M, zet[keep], [("fd", i) for i in range(int(keep.sum()))],
                              "discrete")
        basis._grid = (pts, w)
        basis._discrete_vecs = vecs[:, keep]
        return basis
    if M.kind == "round_sphere":
        return _sphere_fd(M, V, cutoff, grid_n, k_max)
    raise NotImplementedError(M.kind)


def _sphere_fd(M, V, cutoff, grid_n=None, k_max=None):
    """Conservative FD on polar grids; polar flux vanishes naturally."""
    r = M.radius
    if M.dim == 2:
        n_t = grid_n or 64
        n_p = 2 * n_t
        dth = math.pi / n_t
        dph = 2 * math.pi / n_p
        th = (np.arange(n_t) + 0.5) * dth
        ph = np.arange(n_p) * dph
        T, P = np.meshgrid(th, ph, indexing="ij")
        pts = np.stack([T.ravel(), P.ravel()], axis=-1)
        mass = (r ** 2) * np.sin(T).ravel() * dth * dph
        nn = n_t * n_p
        idx = np.arange(nn).reshape(n_t, n_p)
        rows, cols, vals = [], [], []

        def add(i, j, v):
            rows.append(i)
            cols.append(j)
            vals.append(v)

        # theta-edges between rows j and j+1: weight sin(theta_mid)dph/dth
        for j in range(n_t - 1):
            cpl = math.sin((j + 1) * dth) * dph / dth
            a, b = idx[j, :], idx[j + 1, :]
            add(a, a, np.full(n_p, cpl))
            add(b, b, np.full(n_p, cpl))
            add(a, b, np.full(n_p, -cpl))
            add(b, a, np.full(n_p, -cpl))
        # phi-edges: weight dth/(sin(theta_j) dph)
        for j in range(n_t):
            cpl = dth / (math.sin(th[j]) * dph)
            a, b = idx[j, :], idx[j, np.roll(np.arange(n_p), -1)]
            add(a, a, np.full(n_p, cpl))
            add(b, b, np.full(n_p, cpl))
            add(a, b, np.full(n_p, -cpl))
            add(b, a, np.full(n_p, -cpl))
        A = sp.csr_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nn, nn))
    else:
        n_c = grid_n or 26
        n_t = n_c
        n_p = 2 * n_c
        dch = math.pi / n_c
        dth = math.pi / n_t
        dph = 2 * math.pi / n_p
        ch = (np.arange(n_c) + 0.5) * dch
        th = (np.arange(n_t) + 0.5) * dth
        ph = np.arange(n_p) * dph
        C, T, P = np.meshgrid(ch, th, ph, indexing="ij")
        pts = np.stack([C.ravel(), T.ravel(), P.ravel()], axis=-1)
        mass = (r ** 3) * (np.sin(C) ** 2 * np.sin(T)).ravel() * dch * dth * dph
        nn = n_c * n_t * n_p
        idx = np.arange(nn).reshape(n_c, n_t, n_p)
        rows, cols, vals = [], [], []

        def add(i, j, v):
            rows.append(np.asarray(i).ravel())
            cols.append(np.asarray(j).ravel())
            vals.append(np.asarray(v).ravel())

        # chi-edges: weight r * sin^2(chi_mid) sin(theta) dth dph / dch
        for j in range(n_c - 1):
            smid = math.sin((j + 1) * dch) ** 2
            cpl = r * smid * np.sin(th)[:, None] * dth * dph / dch
            cpl = np.broadcast_to(cpl, (n_t, n_p))
            a, b = idx[j], idx[j + 1]
            add(a, a, cpl)
            add(b, b, cpl)
            add(a, b, -cpl)
            add(b, a, -cpl)
        # theta-edges: weight r * sin(theta_mid) dch dph / (dth)  (1/sin^0(chi))
        for j in range(n_t - 1):
            smid = math.sin((j + 1) * dth)
            cpl = r * smid * np.ones((n_c, n_p)) * dch * dph / dth
            a, b = idx[:, j, :], idx[:, j + 1, :]
            add(a, a, cpl)
            add(b, b, cpl)
            add(a, b, -cpl)
            add(b, a, -cpl)
        # phi-edges: weight r dch dth / (sin^0... ) / (sin(theta) dph) * 1/sin^0
        for jc in range(n_c):
            for jt in range(n_t):
                cpl = r * dch * dth / (np.sin(th[jt]) * dph) * np.ones(n_p)
                a = idx[jc, jt, :]
                b = idx[jc, jt, np.roll(np.arange(n_p), -1)]
                add(a, a, cpl)
                add(b, b, cpl)
                add(a, b, -cpl)
                add(b, a, -cpl)
        A = sp.csr_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nn, nn))

    if V is not None:
        vvals = (np.full(A.shape[0], float(V)) if isinstance(V, (int, float))
                 else np.asarray(V.value(pts)))
        A = A + sp.diags(vvals * mass)
    Minv_half = sp.diags(1.0 / np.sqrt(mass))
    S = Minv_half @ A @ Minv_half
    S = 0.5 * (S + S.T)
    k = k_max or 40
    sigma = min(0.0, float(np.min(vvals)) if V is not None else 0.0) - 1.0
    zet, vec = spla.eigsh(S.tocsc(), k=min(k, A.shape[0] - 2),
                          sigma=sigma, which="LM")
    vecs = Minv_half @ vec
    keep = zet <= cutoff
    basis = SpectralBasis(M, zet[keep],
                          [("fd", i) for i in range(int(keep.sum()))], "discrete")
    basis._grid = (pts, mass)
    basis._discrete_vecs = vecs[:, keep]
    return basis


# ---------------------------------------------------------------------------
# functional calculus
# ---------------------------------------------------------------------------

def projections(B: SpectralBasis):
    """Index masks (plus, minus, zero): positive / non-positive / kernel."""
    z = B.eigenvalues
    tol = 1e-10 * max(1.0, float(np.max(np.abs(z))))
    plus = z > tol
    zero = np.abs(z) <= tol
    minus = ~plus
    return plus, minus, zero


def oracle_U(B: SpectralBasis, t, coeffs):
    """U(t) in the eigenbasis: e^{-it sqrt(zeta)} on the positive sector,
    identity on the rest."""
    z = B.eigenvalues
    plus, _, _ = projections(B)
    phase = np.ones(len(z), dtype=complex)
    phase[plus] = np.exp(-1j * t * np.sqrt(z[plus]))
    return phase * np.asarray(coeffs, dtype=complex)


def oracle_fundamental(B: SpectralBasis, t, tbar, f0, f1):
    """Coefficients at time t of the solution with data (f0, f1) at tbar."""
    z = B.eigenvalues.astype(complex)
    dt = t - tbar
    plus, _, zero = projections(B)
    c0 = np.empty(len(z), dtype=complex)
    c1 = np.empty(len(z), dtype=complex)
    root = np.sqrt(z)  # principal branch: imaginary for negative zeta
    nz = ~zero
    c0[nz] = np.cos(root[nz] * dt)
    c1[nz] = np.sin(root[nz] * dt) / root[nz]
    c0[zero] = 1.0
    c1[zero] = dt
    return c0 * np.asarray(f0, dtype=complex) + c1 * np.asarray(f1, dtype=complex)


def oracle_omega2(B: SpectralBasis, tau, s, f, g):
    """<f, Omega(tau, s) g> with Omega = (1/2)(-Lap)^{-1/2} e^{-i sqrt(-Lap)(tau-s)}
    on the positive sector (pseudoinverse drops zero modes)."""
    z = B.eigenvalues
    plus, _, _ = projections(B)
    fz = np.asarray(f, dtype=complex)[plus]
    gz = np.asarray(g, dtype=complex)[plus]
    zp = z[plus]
    w = np.exp(-1j * np.sqrt(zp) * (tau - s)) / (2 * np.sqrt(zp))
    return complex(np.sum(np.conj(fz) * w * gz))


def omega2_kernel(M, tau, s, x, y, cutoff, damping=0.0, v_const=0.0):
    """Point values of the two-point kernel by zonal mode sums.

    `damping` multiplies each mode by exp(-damping*sqrt(zeta)) (evaluation at
    complexified time separation), which regularises the on-diagonal
    divergence the way the epsilon-prescription does."""
    if M.kind == "round_sphere":
        r = M.radius
        ux = M.embed(np.asarray(x, float))
        uy = M.embed(np.asarray(y, float))
        cth = np.clip(np.sum(ux * uy, axis=-1) / r ** 2, -1.0, 1.0)
        theta = np.arccos(cth)
        out = np.zeros_like(np.asarray(theta, dtype=complex))
        if M.dim == 3:
            lmax = int(math.floor(-1 + math.sqrt(1 + cutoff * r * r)))
            for l in range(1, lmax + 1):
                zeta = l * (l + 2) / r ** 2 + v_const
                if zeta <= 0:
                    continue
                # zonal sum of products of orthonormal eigenfunctions
                sl = np.where(np.abs(np.sin(theta)) > 1e-12,
                              np.sin((l + 1) * theta) / np.maximum(np.sin(theta), 1e-300),
                              (l + 1) * np.cos((l + 1) * theta) / np.cos(theta))
                zon = (l + 1) * sl / (2 * math.pi ** 2 * r ** 3)
                w = np.exp(-1j * math.sqrt(zeta) * (tau - s)
                           - damping * math.sqrt(zeta)) / (2 * math.sqrt(zeta))
                out = out + w * zon
            return out
        if M.dim == 2:
            from numpy.polynomial.legendre import legval
            lmax = int(math.floor((-1 + math.sqrt(1 + 4 * cutoff * r * r)) / 2))
            for l in range(1, lmax + 1):
                zeta = l * (l + 1) / r ** 2 + v_const
                coef = np.zeros(l + 1)
                coef[l] = 1.0
                zon = (2 * l + 1) * legval(cth, coef) / (4 * math.pi * r ** 2)
                w = np.exp(-1j * math.sqrt(zeta) * (tau - s)
                           - damping * math.sqrt(zeta)) / (2 * math.sqrt(zeta))
                out = out + w * zon
            return out
    if M.kind == "flat_torus":
        import itertools
        diffs = np.asarray(x, float) - np.asarray(y, float)
        kmax = int(math.ceil(math.sqrt(cutoff) * max(M.periods) / (2 * math.pi)))
        out = np.zeros(diffs.shape[:-1], dtype=complex)
        vol = float(np.prod(M.periods))
        for kk in itertools.product(range(-kmax, kmax + 1), repeat=M.dim):
            freq = 2 * math.pi * np.asarray(kk, float) / M.periods
            zeta = float(freq @ freq) + v_const
            if zeta <= 0 or zeta > cutoff:
                continue
            w = np.exp(-1j * math.sqrt(zeta) * (tau - s)
                       - damping * math.sqrt(zeta)) / (2 * math.sqrt(zeta))
            out = out + w * np.exp(1j * diffs @ freq) / vol
        return out
    raise NotImplementedError(M.kind)
