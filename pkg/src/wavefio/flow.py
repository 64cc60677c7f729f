"""Hamiltonian geodesic flow on the punctured cotangent bundle.

Provides the unit-speed cogeodesic flow generated by h(x, xi) =
sqrt(h^{ab}(x) xi_a xi_b), its variational (linearised) flow, jet-valued
flows carrying Taylor dependence on the initial momentum, and the
null-geodesic flow with parallel momentum transport on product spacetimes,
reparameterised by global time.

Scalar trajectories use an adaptive embedded RK45 pair (rtol 1e-10,
atol 1e-12); jet-valued flows use fixed-step RK4 whose step count is chosen
for comparable accuracy and can be Richardson-checked in tests.  Sphere
trajectories hop charts when they approach a polar exclusion band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator

from .jets import Jet, make_space, arccos_sq_series
from .geometry import LorentzMetric

__all__ = [
    "CotangentPoint", "FlowTrajectory", "LorentzTrajectory", "hamiltonian",
    "geodesic_flow", "flow_trajectory", "variational_flow", "eta_plus",
    "levi_civita_flow", "flow_eta_jets", "flow_jet_generic",
    "extend_time_jets", "batch_flow", "jet_matrix_inverse", "restrict_group",
    "IntegrationError",
]


class IntegrationError(RuntimeError):
    pass


@dataclass
class CotangentPoint:
    y: np.ndarray
    eta: np.ndarray
    chart: int = 0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        if np.linalg.norm(self.eta) == 0.0:
            raise ValueError("covector must be nonzero on T'Sigma")


@dataclass
class FlowTrajectory:
    t_grid: np.ndarray
    x: np.ndarray            # (nt, d)
    xi: np.ndarray           # (nt, d)
    charts: np.ndarray       # (nt,)
    hamiltonian_value: float
    conservation_defect: float
    variational: np.ndarray = None   # (nt, 2d, 2d): d(x*,xi*)/d(y,eta)

    def sample(self, i):
        return self.x[i], self.xi[i], int(self.charts[i])


@dataclass
class LorentzTrajectory:
    t_grid: np.ndarray
    x: np.ndarray            # spatial position (nt, d-1)
    Xi: np.ndarray           # spacetime covector (nt, d)
    charts: np.ndarray
    eta_norm: float          # |eta|_{h_s} on the seed surface
    null_defect: float


def hamiltonian(M, p: CotangentPoint) -> float:
    """h(y, eta) = sqrt(h^{ab}(y) eta_a eta_b)."""
    _, hinv, _ = M.metric_at(p.y, p.chart)
    val = float(p.eta @ hinv @ p.eta)
    if val <= 0.0:
        raise ValueError("degenerate covector")
    return math.sqrt(val)


# ---------------------------------------------------------------------------
# metric data helpers (batched)
# ---------------------------------------------------------------------------

def _metric_data(M, x, chart, order=1):
    """H = h^{-1}(x) and coordinate derivatives up to `order` (batched)."""
    x = np.asarray(x, dtype=float)
    d = M.dim
    batch = x.shape[:-1]
    space = make_space({"xa": d}, {"xa": order}, order)
    xj = [Jet.variable(space, "xa", i, x[..., i]) for i in range(d)]
    hj = M.metric_jet(space, xj, chart)
    hinv = jet_matrix_inverse(hj)
    H = np.empty(batch + (d, d))
    dH = np.empty(batch + (d, d, d))
    d2H = np.empty(batch + (d, d, d, d)) if order >= 2 else None
    for a in range(d):
        for b in range(d):
            H[..., a, b] = np.real(hinv[a][b].value())
            for k in range(d):
                dH[..., k, a, b] = np.real(hinv[a][b].coeff({("xa", k): 1}))
            if order >= 2:
                for k in range(d):
                    for l in range(d):
                        if k == l:
                            d2H[..., k, k, a, b] = 2.0 * np.real(
                                hinv[a][b].coeff({("xa", k): 2}))
                        elif k < l:
                            c = np.real(hinv[a][b].coeff({("xa", k): 1, ("xa", l): 1}))
                            d2H[..., k, l, a, b] = c
                            d2H[..., l, k, a, b] = c
    if order >= 2:
        return H, dH, d2H
    return H, dH


def jet_matrix_inverse(hj):
    """Inverse of a (d x d) jet matrix, d <= 3, via the adjugate."""
    d = len(hj)
    if d == 1:
        return [[hj[0][0].reciprocal()]]
    if d == 2:
        det = hj[0][0] * hj[1][1] - hj[0][1] * hj[1][0]
        inv_det = det.reciprocal()
        return [[hj[1][1] * inv_det, -1.0 * hj[0][1] * inv_det],
                [-1.0 * hj[1][0] * inv_det, hj[0][0] * inv_det]]
    if d == 3:
        a, b, c = hj[0]
        dd, e, f = hj[1]
        g, h, i = hj[2]
        A = e * i - f * h
        B = -1.0 * (dd * i - f * g)
        C = dd * h - e * g
        det = a * A + b * B + c * C
        inv_det = det.reciprocal()
        D = -1.0 * (b * i - c * h)
        E = a * i - c * g
        F = -1.0 * (a * h - b * g)
        G = b * f - c * e
        Hm = -1.0 * (a * f - c * dd)
        I = a * e - b * dd
        return [[A * inv_det, D * inv_det, G * inv_det],
                [B * inv_det, E * inv_det, Hm * inv_det],
                [C * inv_det, F * inv_det, I * inv_det]]
    raise NotImplementedError("jet matrix inverse for d > 3")


def restrict_group(jet, group):
    """Zero all coefficients with nonzero exponent in `group`."""
    space = jet.space
    off = space.var_offset[group]
    n = space.group_sizes[group]
    mask = space.monomials[:, off:off + n].sum(axis=1) == 0
    out = jet.copy()
    out.coeffs[~mask] = 0.0
    return out


def _aux_var(space, i, batch):
    z = np.zeros(batch) if batch else 0.0
    return Jet.variable(space, "xa", i, z)


# ---------------------------------------------------------------------------
# scalar flow (adaptive, chart hopping)
# ---------------------------------------------------------------------------

def _rhs_factory(M, chart):
    def rhs(_, s):
        d = M.dim
        x, xi = s[:d], s[d:]
        H, dH = _metric_data(M, x, chart, order=1)
        Hxi = H @ xi
        ham = math.sqrt(max(float(xi @ Hxi), 1e-300))
        dx = Hxi / ham
        dxi = -np.einsum("kab,a,b->k", dH, xi, xi) / (2 * ham)
        return np.concatenate([dx, dxi])
    return rhs


def _margin_event(M):
    def ev(_, s):
        x = s[: M.dim]
        return M.chart_margin_distance(x) - 0.05
    ev.terminal = True
    ev.direction = -1.0
    return ev


def _switch_chart_point(M, x, xi, c_from, c_to):
    x_new = M.transition(x, c_from, c_to)
    eps = 1e-7
    d = M.dim
    T = np.zeros((d, d))
    for j in range(d):
        xp, xm = x.copy(), x.copy()
        xp[j] += eps
        xm[j] -= eps
        T[:, j] = (M.transition(xp, c_from, c_to)
                   - M.transition(xm, c_from, c_to)) / (2 * eps)
    xi_new = np.linalg.solve(T.T, xi)
    return x_new, xi_new


def flow_trajectory(M, p: CotangentPoint, t_grid, variational=False,
                    rtol=1e-10, atol=1e-12) -> FlowTrajectory:
    """Integrate the cogeodesic flow through the requested parameter grid."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    d = M.dim
    ham0 = hamiltonian(M, p)
    results = {}
    if np.any(np.abs(t_grid) <= 1e-15):
        results[0.0] = (p.y.copy(), p.eta.copy(), p.chart)

    for direction in (+1.0, -1.0):
        targets = sorted({float(t) for t in t_grid if t * direction > 1e-15}, key=abs)
        if not targets:
            continue
        x, xi, chart = p.y.copy(), p.eta.copy(), p.chart
        t_cur = 0.0
        multi = getattr(M, "n_charts", 1) > 1
        for t_target in targets:
            while abs(t_cur - t_target) > 1e-14:
                events = [_margin_event(M)] if multi else None
                sol = solve_ivp(_rhs_factory(M, chart), (t_cur, t_target),
                                np.concatenate([x, xi]), rtol=rtol, atol=atol,
                                events=events)
                if not sol.success:
                    raise IntegrationError(f"flow integration failed: {sol.message}")
                x, xi = sol.y[:d, -1].copy(), sol.y[d:, -1].copy()
                t_cur = float(sol.t[-1])
                if sol.status == 1:
                    new_chart = 1 - chart
                    x, xi = _switch_chart_point(M, x, xi, chart, new_chart)
                    chart = new_chart
            results[t_target] = (x.copy(), xi.copy(), chart)

    xs = np.empty((len(t_grid), d))
    xis = np.empty((len(t_grid), d))
    charts = np.zeros(len(t_grid), dtype=int)
    defect = 0.0
    for i, t in enumerate(t_grid):
        key = 0.0 if abs(t) <= 1e-15 else float(t)
        x, xi, chart = results[key]
        xs[i], xis[i], charts[i] = x, xi, chart
        hi = hamiltonian(M, CotangentPoint(x, xi, chart))
        defect = max(defect, abs(hi - ham0) / ham0)

    var = _variational_blocks(M, p, t_grid) if variational else None
    return FlowTrajectory(t_grid, xs, xis, charts, ham0, defect, var)


def geodesic_flow(M, p: CotangentPoint, t) -> FlowTrajectory:
    """Single-time sample of the cogeodesic flow from (y, eta)."""
    return flow_trajectory(M, p, np.array([float(t)]))


def _variational_blocks(M, p, t_grid):
    d = M.dim
    space = make_space({"xa": d, "dy": d, "eta": d},
                       {"xa": 1, "dy": 1, "eta": 1}, 2)
    xj = [Jet.variable(space, "dy", i, p.y[i]) for i in range(d)]
    xij = [Jet.variable(space, "eta", i, p.eta[i]) for i in range(d)]
    samples = flow_jet_generic(M, xj, xij, p.chart, np.asarray(t_grid, float))
    out = np.empty((len(t_grid), 2 * d, 2 * d))
    for n, (xs, xis, _) in enumerate(samples):
        for i in range(d):
            for j in range(d):
                out[n, i, j] = np.real(xs[i].coeff({("dy", j): 1}))
                out[n, i, d + j] = np.real(xs[i].coeff({("eta", j): 1}))
                out[n, d + i, j] = np.real(xis[i].coeff({("dy", j): 1}))
                out[n, d + i, d + j] = np.real(xis[i].coeff({("eta", j): 1}))
    return out


def variational_flow(M, p: CotangentPoint, t):
    """Jacobian blocks d(x*, xi*)/d(y, eta) at parameter t."""
    return _variational_blocks(M, p, np.array([float(t)]))[0]


# ---------------------------------------------------------------------------
# jet-valued flow
# ---------------------------------------------------------------------------

def _jet_rhs(M, x_jets, xi_jets, chart):
    """Hamilton RHS with jet-valued state; space must have aux group "xa".

    The auxiliary group supplies one scratch derivative direction; outputs
    carry no "xa" dependence and their non-auxiliary Taylor coefficients are
    exact (coefficient evolution is triangular in total degree), so the valid
    order is restored to min(state order, total_cap - 1) after restriction.
    """
    space = x_jets[0].space
    d = M.dim
    batch = x_jets[0].batch
    # state jets are exact on the whole truncated basis (Taylor-coefficient
    # evolution is triangular in total degree), so restore full order before
    # spending one on the auxiliary derivative direction
    x_jets = [j.copy() for j in x_jets]
    xi_jets = [j.copy() for j in xi_jets]
    for j in (*x_jets, *xi_jets):
        j.ord = space.total_cap
    target_ord = space.total_cap - 1
    xt = [x_jets[i] + _aux_var(space, i, batch) for i in range(d)]
    hj = M.metric_jet(space, xt, chart)
    Hinv = jet_matrix_inverse(hj)
    ham2 = None
    for a in range(d):
        for b in range(d):
            term = Hinv[a][b] * xi_jets[a] * xi_jets[b]
            ham2 = term if ham2 is None else ham2 + term
    ham = ham2.sqrt()
    inv_ham = ham.reciprocal()
    dx = []
    for a in range(d):
        acc = None
        for b in range(d):
            t = Hinv[a][b] * xi_jets[b]
            acc = t if acc is None else acc + t
        out = restrict_group(acc * inv_ham, "xa")
        out.ord = target_ord
        dx.append(out)
    dxi = []
    for k in range(d):
        out = restrict_group(-1.0 * ham.derivative("xa", k), "xa")
        out.ord = target_ord
        dxi.append(out)
    return dx, dxi


def _rk4_jet_step(M, x, xi, chart, hstep):
    k1 = _jet_rhs(M, x, xi, chart)
    s2x = [a + (hstep / 2) * b for a, b in zip(x, k1[0])]
    s2xi = [a + (hstep / 2) * b for a, b in zip(xi, k1[1])]
    k2 = _jet_rhs(M, s2x, s2xi, chart)
    s3x = [a + (hstep / 2) * b for a, b in zip(x, k2[0])]
    s3xi = [a + (hstep / 2) * b for a, b in zip(xi, k2[1])]
    k3 = _jet_rhs(M, s3x, s3xi, chart)
    s4x = [a + hstep * b for a, b in zip(x, k3[0])]
    s4xi = [a + hstep * b for a, b in zip(xi, k3[1])]
    k4 = _jet_rhs(M, s4x, s4xi, chart)
    xn = [a + (hstep / 6) * (b + 2 * c + 2 * dd + e)
          for a, b, c, dd, e in zip(x, k1[0], k2[0], k3[0], k4[0])]
    xin = [a + (hstep / 6) * (b + 2 * c + 2 * dd + e)
           for a, b, c, dd, e in zip(xi, k1[1], k2[1], k3[1], k4[1])]
    return xn, xin


def flow_jet_generic(M, x_jets, xi_jets, chart, t_samples, nsub_per_unit=512):
    """Integrate jet-valued Hamilton equations to the requested parameters.

    Returns a list (aligned with t_samples) of (x_jets, xi_jets, chart)."""
    t_samples = np.asarray(t_samples, dtype=float)
    out = [None] * len(t_samples)
    multi = getattr(M, "n_charts", 1) > 1
    for sgn in (+1, -1):
        if sgn > 0:
            idxs = [i for i, t in enumerate(t_samples) if t >= -1e-15]
        else:
            idxs = [i for i, t in enumerate(t_samples) if t < -1e-15]
        if not idxs:
            continue
        idxs.sort(key=lambda i: abs(t_samples[i]))
        x = [j.copy() for j in x_jets]
        xi = [j.copy() for j in xi_jets]
        ch = chart
        t_cur = 0.0
        for i in idxs:
            t_target = t_samples[i]
            if abs(t_target - t_cur) > 1e-15:
                n = max(1, int(math.ceil(abs(t_target - t_cur) * nsub_per_unit)))
                hstep = (t_target - t_cur) / n
                for _ in range(n):
                    x, xi = _rk4_jet_step(M, x, xi, ch, hstep)
                t_cur = t_target
                if multi and not x[0].batch:
                    x0 = np.array([float(np.real(j.value())) for j in x])
                    if M.chart_margin_distance(x0) < 0.05:
                        x, xi, ch = _switch_chart_jets(M, x, xi, ch, 1 - ch)
            out[i] = ([j.copy() for j in x], [j.copy() for j in xi], ch)
    return out


def _switch_chart_jets(M, x_jets, xi_jets, c_from, c_to):
    """Chart hop for jet-valued states via ambient embedding jets."""
    space = x_jets[0].space
    d = M.dim
    batch = x_jets[0].batch
    # state jets are exact on the whole basis; restore full order before
    # spending one on the auxiliary derivative direction
    x_jets = [j.copy() for j in x_jets]
    xi_jets = [j.copy() for j in xi_jets]
    for j in (*x_jets, *xi_jets):
        j.ord = space.total_cap
    aux_ord = space.total_cap - 1
    uj = M.embed_jet(space, x_jets, c_from)
    x_new = sphere_coords_jet(M, uj, c_to)
    # tangent vector v^i = h^{ij} xi_j in old chart, pushed to ambient
    xa_old = [x_jets[i] + _aux_var(space, i, batch) for i in range(d)]
    uj_a = M.embed_jet(space, xa_old, c_from)
    Jold = [[restrict_group(uj_a[a].derivative("xa", i), "xa") for i in range(d)]
            for a in range(d + 1)]
    for row in Jold:
        for e in row:
            e.ord = aux_ord
    hj = M.metric_jet(space, x_jets, c_from)
    Hinv = jet_matrix_inverse(hj)
    v = []
    for i in range(d):
        acc = None
        for j in range(d):
            t = Hinv[i][j] * xi_jets[j]
            acc = t if acc is None else acc + t
        v.append(acc)
    Vamb = []
    for a in range(d + 1):
        acc = None
        for i in range(d):
            t = Jold[a][i] * v[i]
            acc = t if acc is None else acc + t
        Vamb.append(acc)
    # xi_new_i = <V_amb, dU/dx_new_i> (ambient Euclidean pairing on the
    # isometric embedding reproduces the metric pairing)
    xa_new = [x_new[i] + _aux_var(space, i, batch) for i in range(d)]
    uj_b = M.embed_jet(space, xa_new, c_to)
    Jnew = [[restrict_group(uj_b[a].derivative("xa", i), "xa") for i in range(d)]
            for a in range(d + 1)]
    for row in Jnew:
        for e in row:
            e.ord = aux_ord
    xi_new = []
    for i in range(d):
        acc = None
        for a in range(d + 1):
            t = Vamb[a] * Jnew[a][i]
            acc = t if acc is None else acc + t
        xi_new.append(acc)
    return x_new, xi_new, c_to


def sphere_coords_jet(M, u_jets, chart):
    """Jet-valued inverse of the sphere embedding into the given chart."""
    d = M.dim
    Q = M.rotations[chart]
    w = []
    for a in range(d + 1):
        acc = None
        for b in range(d + 1):
            if Q[b, a] == 0.0:
                continue
            t = u_jets[b] * Q[b, a]
            acc = t if acc is None else acc + t
        w.append(acc * (1.0 / M.radius))
    coords = []
    rem2 = None
    for i in range(d - 1):
        ci = w[i] if rem2 is None else w[i] * rem2.sqrt().reciprocal()
        psi2 = ci.apply_series(arccos_sq_series(np.asarray(ci.value()), ci.ord))
        coords.append(psi2.sqrt())
        one = 1.0 - ci * ci
        rem2 = one if rem2 is None else rem2 * one
    coords.append(atan2_jet(w[d], w[d - 1]))
    return coords


def atan2_jet(yj, xj):
    """Jet-valued atan2 with the branch fixed by the center values."""
    y0 = np.real(np.asarray(yj.value()))
    x0 = np.real(np.asarray(xj.value()))
    base = np.arctan2(y0, x0)
    if np.all(np.abs(x0) >= np.abs(y0) * 0.5):
        at = _arctan_jet(yj * xj.reciprocal())
        return at + (base - np.arctan(y0 / x0))
    at = _arctan_jet(xj * yj.reciprocal())
    return -1.0 * at + (base + np.arctan(x0 / y0))


def _arctan_jet(j):
    # arctan' = 1/(1+c^2); Taylor coefficient m of arctan at c0 is the
    # (m-1)-st coefficient of 1/(1+c^2) divided by m
    c0 = np.asarray(j.value())
    n = max(j.ord, 1)
    space1 = make_space({"c": 1}, {"c": n}, n)
    cj = Jet.variable(space1, "c", 0, c0)
    g = (1.0 + cj * cj).reciprocal()
    series = [np.arctan(np.real(c0)) + 0j]
    for m in range(1, n + 1):
        series.append(g.coeffs[space1.index[(m - 1,)]] / m)
    return j.apply_series(series)


def flow_eta_jets(M, y, eta0, t_samples, space, chart=0, nsub_per_unit=512):
    """Flow with Taylor dependence on momentum offsets (group "eta").

    The space must also contain the auxiliary first-order group "xa"."""
    d = M.dim
    x0 = [Jet.constant(space, y[i]) for i in range(d)]
    xi0 = [Jet.variable(space, "eta", i, eta0[i]) for i in range(d)]
    return flow_jet_generic(M, x0, xi0, chart, t_samples, nsub_per_unit)


def extend_time_jets(M, x_jets, xi_jets, chart, t_order):
    """Picard-extend flow jets with Taylor dependence on time offset "t"."""
    x_cur = [j.copy() for j in x_jets]
    xi_cur = [j.copy() for j in xi_jets]
    d = M.dim
    for _ in range(t_order):
        dx, dxi = _jet_rhs(M, x_cur, xi_cur, chart)
        x_cur = [x_jets[i] + _antiderivative_t(dx[i]) for i in range(d)]
        xi_cur = [xi_jets[i] + _antiderivative_t(dxi[i]) for i in range(d)]
    return x_cur, xi_cur


def _antiderivative_t(jet):
    space = jet.space
    v = space.var_index("t", 0)
    out = np.zeros_like(jet.coeffs)
    for i, m in enumerate(space.monomials):
        mm = m.copy()
        mm[v] += 1
        j = space.index.get(tuple(mm))
        if j is not None:
            out[j] = jet.coeffs[i] / (m[v] + 1)
    return Jet(space, out, min(jet.ord + 1, space.total_cap))


# ---------------------------------------------------------------------------
# batched flow for quadrature grids
# ---------------------------------------------------------------------------

def batch_flow(M, ys, etas, t_grid, charts0=None, rtol=1e-10, atol=1e-12):
    """Flow a batch of seeds through t_grid with first-order eta-variations.

    ys, etas: (B, d).  Returns dict with x, xi (nt,B,d), dx_deta, dxi_deta
    (nt,B,d,d) and charts (nt,B)."""
    ys = np.asarray(ys, dtype=float)
    etas = np.asarray(etas, dtype=float)
    B, d = ys.shape
    t_grid = np.asarray(t_grid, dtype=float)
    nt = len(t_grid)
    charts_init = (np.zeros(B, dtype=int) if charts0 is None
                   else np.asarray(charts0, dtype=int).copy())

    nvar = 2 * d + 2 * d * d

    def pack(x, xi, J):
        return np.concatenate([x, xi, J.reshape(B, -1)], axis=1).ravel()

    def unpack(s):
        S = s.reshape(B, nvar)
        return (S[:, :d].copy(), S[:, d:2 * d].copy(),
                S[:, 2 * d:].reshape(B, 2 * d, d).copy())

    cur = {"charts": charts_init.copy()}

    def rhs(_, s):
        x, xi, J = unpack(s)
        dxdt = np.empty_like(x)
        dxidt = np.empty_like(xi)
        dJdt = np.empty_like(J)
        ch = cur["charts"]
        for c in np.unique(ch):
            m = ch == c
            H, dH, d2H = _metric_data(M, x[m], int(c), order=2)
            xim = xi[m]
            Hxi = np.einsum("...ab,...b->...a", H, xim)
            ham = np.sqrt(np.einsum("...a,...a->...", xim, Hxi))
            dxdt[m] = Hxi / ham[..., None]
            dHxx = np.einsum("...kab,...a,...b->...k", dH, xim, xim)
            dxidt[m] = -dHxx / (2 * ham[..., None])
            hxixi = (H / ham[..., None, None]
                     - np.einsum("...a,...b->...ab", Hxi, Hxi)
                     / ham[..., None, None] ** 3)
            dHxi = np.einsum("...kab,...b->...ka", dH, xim)
            hxxi = (dHxi / ham[..., None, None]
                    - np.einsum("...k,...a->...ka", dHxx, Hxi)
                    / (2 * ham[..., None, None] ** 3))
            d2Hxx = np.einsum("...klab,...a,...b->...kl", d2H, xim, xim)
            hxx = (d2Hxx / (2 * ham[..., None, None])
                   - np.einsum("...k,...l->...kl", dHxx, dHxx)
                   / (4 * ham[..., None, None] ** 3))
            A = np.empty(x[m].shape[:-1] + (2 * d, 2 * d))
            A[..., :d, :d] = np.swapaxes(hxxi, -1, -2)
            A[..., :d, d:] = hxixi
            A[..., d:, :d] = -hxx
            A[..., d:, d:] = -hxxi
            dJdt[m] = np.einsum("...ij,...jk->...ik", A, J[m])
        return pack(dxdt, dxidt, dJdt)

    J0 = np.zeros((B, 2 * d, d))
    J0[:, d:, :] = np.eye(d)
    out = {
        "x": np.empty((nt, B, d)), "xi": np.empty((nt, B, d)),
        "dx_deta": np.empty((nt, B, d, d)), "dxi_deta": np.empty((nt, B, d, d)),
        "charts": np.zeros((nt, B), dtype=int),
    }
    multi = getattr(M, "n_charts", 1) > 1

    for direction in (+1.0, -1.0):
        if direction > 0:
            idxs = [i for i, t in enumerate(t_grid) if t >= -1e-15]
        else:
            idxs = [i for i, t in enumerate(t_grid) if t < -1e-15]
        idxs.sort(key=lambda i: abs(t_grid[i]))
        if not idxs:
            continue
        x, xi, J = ys.copy(), etas.copy(), J0.copy()
        cur["charts"] = charts_init.copy()
        t_cur = 0.0
        for i in idxs:
            t_tar = t_grid[i]
            if abs(t_tar - t_cur) > 1e-15:
                sol = solve_ivp(rhs, (t_cur, t_tar), pack(x, xi, J),
                                rtol=rtol, atol=atol)
                if not sol.success:
                    raise IntegrationError(sol.message)
                x, xi, J = unpack(sol.y[:, -1])
                t_cur = t_tar
                if multi:
                    md = M.chart_margin_distance(x)
                    for b in np.where(md < 0.05)[0]:
                        cb = int(cur["charts"][b])
                        x[b], xi[b], J[b] = _switch_chart_state(
                            M, x[b], xi[b], J[b], cb, 1 - cb)
                        cur["charts"][b] = 1 - cb
            out["x"][i], out["xi"][i] = x, xi
            out["dx_deta"][i] = J[:, :d, :]
            out["dxi_deta"][i] = J[:, d:, :]
            out["charts"][i] = cur["charts"]
    return out


def _switch_chart_state(M, x, xi, J, c_from, c_to):
    eps = 1e-7
    d = M.dim
    x_new = M.transition(x, c_from, c_to)
    T = np.zeros((d, d))
    for j in range(d):
        xp, xm = x.copy(), x.copy()
        xp[j] += eps
        xm[j] -= eps
        T[:, j] = (M.transition(xp, c_from, c_to)
                   - M.transition(xm, c_from, c_to)) / (2 * eps)
    xi_new = np.linalg.solve(T.T, xi)
    d2T = np.zeros((d, d, d))
    for j in range(d):
        for k in range(d):
            xpp = x.copy(); xpp[j] += eps; xpp[k] += eps
            xpm = x.copy(); xpm[j] += eps; xpm[k] -= eps
            xmp = x.copy(); xmp[j] -= eps; xmp[k] += eps
            xmm = x.copy(); xmm[j] -= eps; xmm[k] -= eps
            d2T[:, j, k] = (M.transition(xpp, c_from, c_to)
                            - M.transition(xpm, c_from, c_to)
                            - M.transition(xmp, c_from, c_to)
                            + M.transition(xmm, c_from, c_to)) / (4 * eps * eps)
    Jx, Jxi = J[:d, :], J[d:, :]
    Jx_new = T @ Jx
    # xi_old = T^T xi_new  =>  dxi_new = T^{-T}(dxi_old - d(T^T) xi_new)
    corr = np.einsum("ajk,a,kN->jN", d2T, xi_new, Jx)
    Jxi_new = np.linalg.solve(T.T, Jxi - corr)
    return x_new, xi_new, np.concatenate([Jx_new, Jxi_new], axis=0)


# ---------------------------------------------------------------------------
# Lorentzian flow
# ---------------------------------------------------------------------------

def eta_plus(g: LorentzMetric, s, p: CotangentPoint):
    """Future-pointing null covector at (s,y) whose pullback to Sigma_s is eta."""
    Sig = g.sigma_at(s)
    _, hinv, _ = Sig.metric_at(p.y, p.chart)
    nrm = math.sqrt(float(p.eta @ hinv @ p.eta))
    beta = g.beta_value(s, p.y)
    if beta <= 0:
        raise ValueError("degenerate lapse")
    return np.concatenate([[math.sqrt(beta) * nrm], p.eta])


def spacetime_christoffel(g: LorentzMetric, t, x, chart=0):
    """Christoffels of beta dt^2 - h_t in (t, x) coordinates."""
    dS = g.manifold.dim
    d = dS + 1
    Sig = g.sigma_at(t)
    space = make_space({"xa": dS}, {"xa": 1}, 1)
    xj = [Jet.variable(space, "xa", i, x[i]) for i in range(dS)]
    hj = Sig.metric_jet(space, xj, chart)
    bj = (g.beta.jet(space, xj) if g.beta is not None
          else Jet.constant(space, 1.0))
    h = np.array([[float(np.real(hj[a][b].value())) for b in range(dS)]
                  for a in range(dS)])
    dh = np.array([[[float(np.real(hj[a][b].coeff({("xa", k): 1})))
                     for k in range(dS)] for b in range(dS)] for a in range(dS)])
    beta0 = float(np.real(bj.value()))
    dbeta = np.array([float(np.real(bj.coeff({("xa", k): 1}))) for k in range(dS)])
    if g.metric_of_t is not None:
        eps = 1e-6
        hp = g.sigma_at(t + eps).metric_at(x, chart)[0]
        hm = g.sigma_at(t - eps).metric_at(x, chart)[0]
        ht = (hp - hm) / (2 * eps)
    else:
        ht = np.zeros((dS, dS))
    hinv = np.linalg.inv(h)
    gam = np.zeros((d, d, d))
    gam[0, 0, 1:] = gam[0, 1:, 0] = dbeta / (2 * beta0)
    gam[0, 1:, 1:] = ht / (2 * beta0)
    gam[1:, 0, 0] = 0.5 * hinv @ dbeta
    half_ht = 0.5 * np.einsum("cm,mb->cb", hinv, ht)
    gam[1:, 0, 1:] = half_ht
    gam[1:, 1:, 0] = np.swapaxes(half_ht[:, None, :], 1, 1).reshape(dS, dS)
    for c in range(dS):
        for a in range(dS):
            for b in range(dS):
                gam[1 + c, 1 + a, 1 + b] = 0.5 * sum(
                    hinv[c, m] * (dh[m, a, b] + dh[m, b, a] - dh[a, b, m])
                    for m in range(dS))
    return gam


def _lorentz_rhs(g: LorentzMetric, chart):
    """RHS for (X, P, Xi): null cogeodesic in (X, P) plus parallel
    transport of the covector Xi along the curve."""
    dS = g.manifold.dim
    space = make_space({"xa": dS}, {"xa": 1}, 1)

    def rhs(_, state):
        d = dS + 1
        X, P, Xi = state[:d], state[d:2 * d], state[2 * d:]
        t, x = X[0], X[1:]
        Sig = g.sigma_at(t)
        xj = [Jet.variable(space, "xa", i, x[i]) for i in range(dS)]
        hj = Sig.metric_jet(space, xj, chart)
        Hinv = jet_matrix_inverse(hj)
        bj = (g.beta.jet(space, xj) if g.beta is not None
              else Jet.constant(space, 1.0))
        Hjet = 0.5 * (P[0] ** 2) * bj.reciprocal()
        for a in range(dS):
            for b in range(dS):
                Hjet = Hjet - (0.5 * P[1 + a] * P[1 + b]) * Hinv[a][b]
        b0 = float(np.real(bj.value()))
        Hi = np.array([[float(np.real(Hinv[a][b].value())) for b in range(dS)]
                       for a in range(dS)])
        dX = np.concatenate([[P[0] / b0], -Hi @ P[1:]])
        dP = np.empty(d)
        if g.metric_of_t is None:
            dP[0] = 0.0
        else:
            eps = 1e-6

            def ham_at(tv):
                Sg = g.sigma_at(tv)
                _, hiv, _ = Sg.metric_at(x, chart)
                return 0.5 * (P[0] ** 2 / g.beta_value(tv, x)
                              - float(P[1:] @ hiv @ P[1:]))
            dP[0] = -(ham_at(t + eps) - ham_at(t - eps)) / (2 * eps)
        for a in range(dS):
            dP[1 + a] = -float(np.real(Hjet.derivative("xa", a).value()))
        gam = spacetime_christoffel(g, t, x, chart)
        dXi = np.einsum("cab,b,c->a", gam, dX, Xi)
        return np.concatenate([dX, dP, dXi])

    return rhs


def levi_civita_flow(g: LorentzMetric, s, p: CotangentPoint, t_grid,
                     rtol=1e-10, atol=1e-12) -> LorentzTrajectory:
    """Null flow seeded at (s, y): the spatial projection follows the
    direction of h^{-1} eta while the covector slot carries the parallel
    transport of eta_plus; reparameterised by global time via monotone cubic
    re-gridding."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    d = g.d
    Xi0 = eta_plus(g, s, p)
    # geodesic momentum with reflected spatial part: its raised vector moves
    # the spatial projection along +h^{-1} eta with increasing t
    P0 = Xi0.copy()
    P0[1:] = -P0[1:]
    Sig = g.sigma_at(s)
    _, hinv, _ = Sig.metric_at(p.y, p.chart)
    nrm = math.sqrt(float(p.eta @ hinv @ p.eta))
    rhs = _lorentz_rhs(g, p.chart)

    samples_t = [s]
    samples_state = [np.concatenate([[s, *p.y], P0, Xi0])]
    t_min, t_max = min(t_grid.min(), s), max(t_grid.max(), s)

    for direction in (+1.0, -1.0):
        need = (t_max > s + 1e-15) if direction > 0 else (t_min < s - 1e-15)
        if not need:
            continue
        target = (t_max if direction > 0 else t_min) + direction * 1e-9

        def reached(_, state, target=target):
            return state[0] - target
        reached.terminal = True

        sol = solve_ivp(rhs, (0.0, direction * 1e4),
                        np.concatenate([[s, *p.y], P0, Xi0]),
                        rtol=rtol, atol=atol, events=[reached],
                        dense_output=True)
        if not sol.success:
            raise IntegrationError(sol.message)
        if sol.status != 1:
            raise IntegrationError("time target not reached along null flow "
                                   "(monotonicity guarantee violated numerically)")
        taus = np.linspace(0.0, sol.t[-1], 800)[1:]
        for tau in taus:
            st = sol.sol(tau)
            samples_t.append(st[0])
            samples_state.append(st)

    samples_t = np.asarray(samples_t)
    order = np.argsort(samples_t)
    ts_sorted = samples_t[order]
    states_sorted = np.asarray(samples_state)[order]
    keep = np.concatenate([[True], np.diff(ts_sorted) > 1e-13])
    if int(np.sum(keep)) < 2:
        seed = samples_state[0]
        interp = lambda _t: seed  # noqa: E731 - degenerate single-time grid
        tlo = thi = s
    else:
        interp = PchipInterpolator(ts_sorted[keep], states_sorted[keep], axis=0)

    xs = np.empty((len(t_grid), d - 1))
    Xis = np.empty((len(t_grid), d))
    null_defect = 0.0
    tlo, thi = ts_sorted[keep][0], ts_sorted[keep][-1]
    for i, t in enumerate(t_grid):
        st = interp(float(np.clip(t, tlo, thi)))
        xs[i] = st[1:d]
        Xis[i] = st[2 * d:]
        gi = g.inverse_metric_matrix(t, xs[i], p.chart)
        null_defect = max(null_defect, abs(float(Xis[i] @ gi @ Xis[i])) / nrm ** 2)
    charts = np.full(len(t_grid), p.chart, dtype=int)
    return LorentzTrajectory(t_grid, xs, Xis, charts, nrm, null_defect)
