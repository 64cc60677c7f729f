"""Numerical evaluation of the propagator as a global oscillatory integral.

The kernel

    u(t,x,y) = (2 pi)^{1-d} int e^{i phi(t,x;y,eta)} a(t;y,eta)
               chi(t,x;y,eta) w(t,x;y,eta) d eta

is integrated in polar momentum coordinates: directions on the unit-energy
sphere h(y, eta)=1, Gauss-Legendre radial nodes on [1/2, R_max] damped by
Im phi, with the low-frequency ball removed by the radial cutoff.  Batched
first-order jets supply phase and weight values along field-point batches.

On homogeneous builtins (verified at symbol-solve time) the kernel matrix is
assembled from a single-source profile: translation invariance on flat tori,
zonal dependence on round spheres.  The generic pairwise path remains for
custom backgrounds.

Also hosts the wave-residual diagnostic (translation-invariant fast path on
flat tori) and the cosine/sine fundamental pair assembled from U(+-t) plus
exact finite-rank corrections on the nonpositive spectral sectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .jets import Jet, make_space
from .flow import (CotangentPoint, batch_flow, restrict_group,
                   jet_matrix_inverse)
from .phase import PhaseMachine, BranchTracker, smoothstep, radial_cutoff_zeta
from .geometry import dist2_jet, riem_distance
from .oracle import standard_grid, projections

__all__ = [
    "QuadConfig", "KernelEvaluator", "evaluate_kernel", "apply_propagator",
    "residual_order", "fio_fundamental_pair", "KernelField",
    "QuadratureError", "ResolutionError",
]


class QuadratureError(RuntimeError):
    pass


class ResolutionError(ValueError):
    pass


@dataclass
class QuadConfig:
    r_max: float = 16.0
    n_r: int = 96
    n_dir: int = 32
    n_base: int = 24
    n_profile: int = 1024
    delta_cone_frac: float = 0.45
    chunk: int = 2 ** 22
    use_homogeneous_fastpath: bool = True
    image_exp_cut: float = 40.0   # lattice images kept while damping < e^{-cut}


@dataclass
class KernelField:
    t: float
    x_pts: np.ndarray
    y_pts: np.ndarray
    values: np.ndarray
    meta: dict


def _dir_angles(n):
    return np.arange(n) * (2 * math.pi / n)


def _unit_eta_and_jacobian(M, y, psi, chart=0):
    """Unit-energy covector at angle psi and the polar measure Jacobian."""
    _, hinv, _ = M.metric_at(np.asarray(y, float), chart)
    e = np.array([math.cos(psi), math.sin(psi)])
    nrm = math.sqrt(float(e @ hinv @ e))
    eta = e / nrm
    de = np.array([-math.sin(psi), math.cos(psi)])
    dnrm = float(de @ hinv @ e) / nrm
    deta = de / nrm - e * dnrm / nrm ** 2
    jac = abs(eta[0] * deta[1] - eta[1] * deta[0])
    return eta, jac


class KernelEvaluator:
    """Evaluates the oscillatory-integral propagator for one solved symbol."""

    def __init__(self, symbol, quad: QuadConfig = None, machine=None):
        self.symbol = symbol
        self.M = symbol.M
        self.cfg = symbol.cfg
        self.quad = quad or QuadConfig()
        self.machine = machine or PhaseMachine(
            self.M, self.cfg.eps, self.cfg.profile,
            delta_cone_frac=self.quad.delta_cone_frac)
        self._matrix_cache = {}
        self._profile_cache = {}
        self._grid = None
        self._tracker = BranchTracker(self.machine, symbol.nodes[0],
                                      symbol.t_grid)
        d = self.M.dim
        self._space = make_space({"t": 1, "x": d, "eta": d, "xa": d},
                                 {"t": 0, "x": 1, "eta": 1, "xa": 1}, 3)

    # -- grids -----------------------------------------------------------------
    def base_grid(self):
        if self._grid is None:
            self._grid = standard_grid(self.M, self.quad.n_base)
        return self._grid

    def _radial(self, r_max=None, n_r=None):
        r_max = r_max or self.quad.r_max
        n_r = n_r or self.quad.n_r
        nodes, wts = np.polynomial.legendre.leggauss(n_r)
        r = 0.5 * (nodes + 1) * (r_max - 0.5) + 0.5
        w = wts * 0.5 * (r_max - 0.5)
        return r, w * radial_cutoff_zeta(r)

    def _radial_amps(self, t, r, rw):
        N = self.symbol.N
        d = self.M.dim
        avals = np.array([self.symbol.value(j, t) for j in range(N)])
        rad_pow = np.stack([r ** (d - 1 - j) for j in range(N)])
        return (avals[:, None] * rad_pow * rw).sum(axis=0)

    # -- phase & weight along a field-point batch --------------------------------
    def _phase_weight(self, t, x_pts, y, eta0, xs_val, xi_val, chart_fl,
                      dxde, dxide, chart_x=0):
        M, d = self.M, self.M.dim
        space = self._space
        B = len(x_pts)
        xs, xis = [], []
        for i in range(d):
            c = np.zeros((space.n_mon, B), dtype=complex)
            c[0] = xs_val[i]
            ci = np.zeros((space.n_mon, B), dtype=complex)
            ci[0] = xi_val[i]
            for b in range(d):
                eb = np.zeros(space.n_vars, dtype=np.int64)
                eb[space.var_index("eta", b)] = 1
                c[space.index[tuple(eb)]] = dxde[i, b]
                ci[space.index[tuple(eb)]] = dxide[i, b]
            xs.append(Jet(space, c))
            xis.append(Jet(space, ci))
        X = [Jet.variable(space, "x", i, x_pts[:, i].astype(complex))
             for i in range(d)]
        Z = [xs[i] + Jet.variable(space, "xa", i, np.zeros(B))
             for i in range(d)]
        S_full = dist2_jet(M, X, Z, chart_x, chart_fl)
        S = restrict_group(S_full, "xa")
        S.ord = space.total_cap
        G = []
        for b in range(d):
            gb = restrict_group(S_full.derivative("xa", b), "xa")
            gb.ord = space.total_cap
            G.append(gb)
        hj = M.metric_jet(space, xs, chart_fl)
        Hinv = jet_matrix_inverse(hj)
        pairing = None
        for a in range(d):
            for b in range(d):
                term = Hinv[a][b] * xis[a] * G[b]
                pairing = term if pairing is None else pairing + term
        etas_jet = [Jet.variable(space, "eta", i,
                                 np.full(B, eta0[i], dtype=complex))
                    for i in range(d)]
        _, hinv_y, rho_y = M.metric_at(np.asarray(y, float), 0)
        ham2 = None
        for a in range(d):
            for b in range(d):
                if hinv_y[a, b] == 0.0:
                    continue
                term = (etas_jet[a] * etas_jet[b]) * hinv_y[a, b]
                ham2 = term if ham2 is None else ham2 + term
        ham = ham2.sqrt()

        prof = self.machine.profile
        inj = M.injectivity_radius
        eps = self.machine.eps
        phi_jet = (-0.5) * pairing + (0.5j * eps) * ham * S
        S0v = np.real(S.value())
        mu = 1.0 - smoothstep((S0v - (prof["ext_in"] * inj) ** 2)
                              / ((prof["ext_out"] ** 2 - prof["ext_in"] ** 2)
                                 * inj ** 2))
        clamp_im = 0.5 * eps * (prof["clamp"] * inj) ** 2
        phi_val = mu * phi_jet.value() + (1 - mu) * (1j * clamp_im) \
            * ham.value()

        mat_vals = np.empty((d, d, B), dtype=complex)
        for a in range(d):
            for b in range(d):
                mat_vals[a, b] = phi_jet.coeff({("x", a): 1, ("eta", b): 1})
        if d == 2:
            det = (mat_vals[0, 0] * mat_vals[1, 1]
                   - mat_vals[0, 1] * mat_vals[1, 0])
        else:
            det = mat_vals[0, 0]
        detsq = det * det
        theta2 = self._tracker.theta2(t)
        arg = np.angle(detsq * np.exp(-1j * theta2))
        root = np.abs(detsq) ** 0.25 * np.exp(1j * (theta2 + arg) / 4.0)
        rho_x = self._rho_at(x_pts, chart_x)
        wval = rho_x ** -0.5 * rho_y ** -0.5 * root

        dc = self.quad.delta_cone_frac * inj
        dist0 = np.sqrt(np.maximum(S0v, 0.0))
        cone = 1.0 - smoothstep((dist0 ** 2 - dc ** 2)
                                / ((2 * dc) ** 2 - dc ** 2))
        return phi_val, wval, cone

    def _rho_at(self, x_pts, chart=0):
        M = self.M
        if M.kind == "flat_torus":
            return np.ones(len(x_pts))
        out = np.empty(len(x_pts))
        for i, x in enumerate(x_pts):
            _, _, rho = M.metric_at(x, chart)
            out[i] = rho
        return out

    # -- single-source kernel values ----------------------------------------------
    def kernel_from_source(self, t, x_pts, y, chart_x=0):
        """u(t, x_i, y) for a batch of field points and one source point."""
        M, d = self.M, self.M.dim
        n_dir = self.quad.n_dir
        psis = _dir_angles(n_dir)
        etas = np.empty((n_dir, d))
        jacs = np.empty(n_dir)
        for k, psi in enumerate(psis):
            etas[k], jacs[k] = _unit_eta_and_jacobian(M, y, psi)
        fl = batch_flow(M, np.repeat(np.asarray(y, float)[None, :], n_dir,
                                     axis=0), etas, np.array([t]))
        r, rw = self._radial()
        radial_amps = self._radial_amps(t, r, rw)
        out = np.zeros(len(x_pts), dtype=complex)
        dpsi = 2 * math.pi / n_dir
        for k in range(n_dir):
            pv, wv, cv = self._phase_weight(
                t, x_pts, y, etas[k], fl["x"][0, k], fl["xi"][0, k],
                int(fl["charts"][0, k]), fl["dx_deta"][0, k],
                fl["dxi_deta"][0, k], chart_x)
            sel = cv > 1e-12
            if not np.any(sel):
                continue
            E = np.exp(1j * np.outer(pv[sel], r))
            out[sel] += (E @ radial_amps) * wv[sel] * cv[sel] * jacs[k] * dpsi
        return out / (2 * math.pi) ** d

    # -- kernel matrix --------------------------------------------------------------
    def kernel_matrix(self, t):
        key = round(float(t), 12)
        if key in self._matrix_cache:
            return self._matrix_cache[key]
        ys, _ = self.base_grid()
        fast = (self.quad.use_homogeneous_fastpath
                and self.cfg.assume_homogeneous)
        if fast and self.M.kind == "flat_torus":
            K = self._torus_matrix(t, ys)
        elif fast and self.M.kind == "round_sphere":
            K = self._sphere_matrix(t, ys)
        else:
            K = self._generic_matrix(t, ys)
        self._matrix_cache[key] = (ys, K)
        return self._matrix_cache[key]

    def _torus_matrix(self, t, ys):
        n = self.quad.n_base
        y0 = np.zeros(self.M.dim)
        vals = self.kernel_from_source(t, ys, y0)  # u(t, v, 0) on the grid
        V = vals.reshape((n,) * self.M.dim)
        # translation invariance: K[(i1,i2),(j1,j2)] = V[(i1-j1)%n, (i2-j2)%n]
        ii = np.arange(len(ys))
        i1, i2 = np.divmod(ii, n)
        return V[np.mod(i1[:, None] - i1[None, :], n),
                 np.mod(i2[:, None] - i2[None, :], n)]

    def _sphere_matrix(self, t, ys):
        prof_s, prof_vals = self._zonal_profile(t)
        from scipy.interpolate import CubicSpline
        spl_re = CubicSpline(prof_s, prof_vals.real)
        spl_im = CubicSpline(prof_s, prof_vals.imag)
        U = self.M.embed(ys, 0)
        r2 = self.M.radius ** 2
        cth = np.clip(U @ U.T / r2, -1.0, 1.0)
        dist = self.M.radius * np.arccos(cth)
        smax = prof_s[-1]
        K = np.where(dist <= smax,
                     spl_re(np.minimum(dist, smax))
                     + 1j * spl_im(np.minimum(dist, smax)), 0.0)
        return K

    def _zonal_profile(self, t):
        key = round(float(t), 12)
        if key in self._profile_cache:
            return self._profile_cache[key]
        M = self.M
        dc = self.quad.delta_cone_frac * M.injectivity_radius
        smax = min(math.pi * M.radius - 1e-3, abs(t) + 2 * dc + 0.1)
        y0 = np.array([math.pi / 2, 0.0])
        s = np.linspace(0.0, smax, self.quad.n_profile)
        x_pts = np.stack([np.full_like(s, math.pi / 2), s / M.radius], axis=-1)
        vals = self.kernel_from_source(t, x_pts, y0)
        self._profile_cache[key] = (s, vals)
        return self._profile_cache[key]

    def _generic_matrix(self, t, ys):
        K = np.empty((len(ys), len(ys)), dtype=complex)
        for j, y in enumerate(ys):
            K[:, j] = self.kernel_from_source(t, ys, y)
        return K

    # -- application ------------------------------------------------------------
    def apply(self, t, f_values):
        ys, K = self.kernel_matrix(t)
        _, wq = self.base_grid()
        return K @ (np.asarray(f_values, dtype=complex) * wq)

    def evaluate(self, t, x, y):
        return complex(self.kernel_from_source(
            t, np.asarray(x, float)[None, :], np.asarray(y, float))[0])

    def quadrature_stability(self, t, x, y, factor=2):
        """Relative change of u(t,x,y) under node doubling."""
        base = self.evaluate(t, x, y)
        import copy
        dense = copy.copy(self)
        dense.quad = QuadConfig(**{**self.quad.__dict__})
        dense.quad.n_r = self.quad.n_r * factor
        dense.quad.n_dir = self.quad.n_dir * factor
        dense._matrix_cache = {}
        dense._profile_cache = {}
        ref = dense.evaluate(t, x, y)
        return abs(base - ref), base, ref


# ---------------------------------------------------------------------------
# spec-level operations
# ---------------------------------------------------------------------------

def evaluate_kernel(symbol, t, x, y, quad=None):
    return KernelEvaluator(symbol, quad).evaluate(t, x, y)


def apply_propagator(symbol, f_values, t, quad=None, evaluator=None,
                     check_resolution=True):
    ev = evaluator or KernelEvaluator(symbol, quad)
    f_values = np.asarray(f_values, dtype=complex)
    if check_resolution and ev.M.kind == "flat_torus":
        n = ev.quad.n_base
        fh = np.fft.fft2(f_values.reshape(n, n)) / (n * n)
        top = np.abs(fh).max()
        k_idx = np.fft.fftfreq(n, d=1.0 / n) * n / n
        hi = np.abs(np.fft.fftfreq(n, d=1.0 / n) * n) >= n // 2 - 1
        hi_energy = np.abs(fh[np.ix_(hi, hi)]).max() if hi.any() else 0.0
        if top > 0 and hi_energy > 1e-6 * top:
            raise ResolutionError("input is under-resolved on the base grid")
    return ev.apply(t, f_values)


def residual_order(symbol, k_list, t, quad=None, fd_step=1e-3):
    """Log-log slope of ||(d_t^2 - E) U_N e_k|| versus |k| on a flat torus.

    Uses the translation-invariant diagonal response m_k(t) and exact E
    application; time derivatives by 5-point central differences."""
    M = symbol.M
    if M.kind != "flat_torus":
        raise NotImplementedError("residual diagnostics use the torus fast path")
    if len(k_list) < 4:
        raise ValueError("need at least 4 modes for a slope fit")
    ev = KernelEvaluator(symbol, quad)
    resids = []
    kmags = []
    for kvec in k_list:
        kvec = np.asarray(kvec, dtype=float)
        kn = float(np.linalg.norm(kvec))
        stencil = [t + m * fd_step for m in (-2, -1, 0, 1, 2)]
        mk = np.array([_diag_response(ev, kvec, tt) for tt in stencil])
        mdd = (-mk[4] + 16 * mk[3] - 30 * mk[2] + 16 * mk[1] - mk[0]) \
            / (12 * fd_step ** 2)
        resids.append(abs(mdd + kn ** 2 * mk[2]))
        kmags.append(kn)
    slope = np.polyfit(np.log(kmags), np.log(np.maximum(resids, 1e-300)), 1)[0]
    return slope, np.asarray(kmags), np.asarray(resids)


def _diag_response(ev: KernelEvaluator, kvec, t):
    """m_k(t) with U(t)e_k = m_k(t) e_k by translation invariance."""
    M = ev.M
    kn = float(np.linalg.norm(kvec))
    eps = ev.machine.eps
    inj = M.injectivity_radius
    half_width = 4.0 * math.sqrt(max(eps * kn, 1.0)) + 6.0
    r_lo = max(0.5, kn - half_width)
    r_hi = kn + half_width
    n_r = max(64, int((r_hi - r_lo) * 4))
    nodes, wts = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (nodes + 1) * (r_hi - r_lo) + r_lo
    rw = wts * 0.5 * (r_hi - r_lo) * radial_cutoff_zeta(r)
    th_k = math.atan2(kvec[1], kvec[0])
    dth = min(math.pi, (half_width + 3.0) / max(kn, 1.0))
    n_th = max(48, int(dth / 0.01))
    th = th_k + (np.arange(n_th) + 0.5) / n_th * 2 * dth - dth
    wth = 2 * dth / n_th
    dc = ev.quad.delta_cone_frac * inj
    patch = 2 * dc
    n_v = max(48, min(192, int(2 * patch * (kn + half_width) / math.pi)))
    total = 0.0 + 0.0j
    N = ev.symbol.N
    avals = np.array([ev.symbol.value(j, t) for j in range(N)])
    amp_r = np.stack([r ** (M.dim - 1 - j) for j in range(N)])
    rad = (avals[:, None] * amp_r * rw).sum(axis=0)
    theta2 = ev._tracker.theta2(t)
    for ang in th:
        omega = np.array([math.cos(ang), math.sin(ang)])
        xstar = t * omega
        g1 = np.linspace(-patch, patch, n_v, endpoint=False) + patch / n_v
        V1, V2 = np.meshgrid(xstar[0] + g1, xstar[1] + g1, indexing="ij")
        v = np.stack([V1.ravel(), V2.ravel()], axis=-1)
        dv = (g1[1] - g1[0]) ** 2
        dist2 = ((v - xstar) ** 2).sum(axis=1)
        cone = 1.0 - smoothstep((dist2 - dc ** 2) / ((2 * dc) ** 2 - dc ** 2))
        sel = cone > 1e-12
        if not np.any(sel):
            continue
        vv = v[sel]
        dist2s = dist2[sel]
        phase_lin = vv @ omega - t
        dxde = t * (np.eye(2) - np.outer(omega, omega))
        phihat = phase_lin + 0.5j * eps * dist2s
        mats = np.empty((2, 2, len(vv)), dtype=complex)
        for a in range(2):
            for b in range(2):
                mats[a, b] = (np.eye(2)[a, b]
                              + 1j * eps * (omega[b] * (vv[:, a] - xstar[a])
                                            - dxde[a, b]))
        det = mats[0, 0] * mats[1, 1] - mats[0, 1] * mats[1, 0]
        detsq = det * det
        arg = np.angle(detsq * np.exp(-1j * theta2))
        wv = np.abs(detsq) ** 0.25 * np.exp(1j * (theta2 + arg) / 4.0)
        phase_k = vv @ np.asarray(kvec, dtype=float)
        E = np.exp(1j * (np.outer(phihat, r) - phase_k[:, None]))
        contrib = ((E @ rad) * wv * cone[sel]).sum() * dv * wth
        total += contrib
    return total / (2 * math.pi) ** M.dim


def fio_fundamental_pair(symbol, basis, t, tbar, quad=None, evaluator=None,
                         n_quad_time=10):
    """Appliers for the cosine and sine fundamental kernels at time t with
    data at tbar, combining U(+-(t-tbar)) on the positive sector with exact
    finite-rank corrections on the nonpositive sectors of the oracle basis."""
    ev = evaluator or KernelEvaluator(symbol, quad)
    ys, wq = ev.base_grid()
    plus, minus, zero = projections(basis)
    Vm = basis.evaluate_matrix(ys)
    z = basis.eigenvalues

    def project(fv):
        return (Vm.conj() * (wq * np.asarray(fv, dtype=complex))[:, None]).sum(axis=0)

    def cos_apply(dt, fv):
        coeffs = project(fv)
        f_plus = Vm @ (coeffs * plus)
        out = 0.5 * (ev.apply(dt, f_plus) + ev.apply(-dt, f_plus))
        nonpos = coeffs * (~plus)
        root = np.sqrt(z.astype(complex))
        fac = np.where(np.abs(z) < 1e-12, 1.0, np.cos(root * dt))
        return out + Vm @ (nonpos * fac)

    def G0(fv):
        return cos_apply(t - tbar, fv)

    def G1(fv):
        dt = t - tbar
        nodes, wts = np.polynomial.legendre.leggauss(n_quad_time)
        taus = 0.5 * (nodes + 1) * dt
        tw = wts * 0.5 * dt
        out = np.zeros(len(ys), dtype=complex)
        for tau, wgt in zip(taus, tw):
            out = out + wgt * cos_apply(tau, fv)
        return out

    return G0, G1
