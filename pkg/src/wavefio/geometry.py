"""Charts, metrics, distances and the Synge world function.

Closed Riemannian surfaces/3-manifolds given by coordinate charts: flat tori
(single periodic chart), round spheres (two overlapping polar charts related
by a fixed ambient rotation) and custom tabulated metrics on a periodic
chart.  All differential-geometric quantities are derived from chart metric
jets, so analytic manifolds give exact derivatives to any tracked order.

Also hosts the Lorentzian layer: product spacetimes R x Sigma with lapse
beta and the world function sigma (half the squared geodesic "distance"),
with a closed form in the ultrastatic case and a shooting solver otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .jets import Jet, make_space, arccos_sq_series, halfangle_b_series

__all__ = [
    "FlatTorus", "RoundSphere", "CustomTorusMetric", "SpacetimePoint",
    "LorentzMetric", "metric_at", "christoffel", "riem_distance", "exp_map",
    "log_map", "grad_dist_squared", "world_function", "dist2_jet",
    "OutOfNeighbourhoodError", "ConvexityError",
]


class OutOfNeighbourhoodError(ValueError):
    """Requested operation leaves the geodesic neighbourhood it needs."""


class ConvexityError(RuntimeError):
    """Two-point geodesic problem failed to converge."""


# ---------------------------------------------------------------------------
# Manifolds
# ---------------------------------------------------------------------------

class FlatTorus:
    """Flat torus R^d / (P_1 Z x ... x P_d Z) with the identity metric."""

    kind = "flat_torus"
    n_charts = 1

    def __init__(self, periods=(2 * math.pi, 2 * math.pi)):
        self.periods = np.asarray(periods, dtype=float)
        self.dim = len(self.periods)

    @property
    def injectivity_radius(self):
        return 0.5 * float(np.min(self.periods))

    def diameter(self):
        return 0.5 * float(np.linalg.norm(self.periods))

    def wrap(self, x):
        return np.mod(x, self.periods)

    def chart_of(self, x):
        return 0

    def metric_at(self, x, chart=0):
        d = self.dim
        h = np.eye(d)
        return h, h.copy(), 1.0

    def metric_jet(self, space, x_jets, chart=0):
        batch = x_jets[0].batch
        one = Jet.constant(space, np.ones(batch) if batch else 1.0)
        zero = Jet.constant(space, np.zeros(batch) if batch else 0.0)
        return [[one if i == j else zero for j in range(self.dim)]
                for i in range(self.dim)]

    def density_jet(self, space, x_jets, chart=0):
        batch = x_jets[0].batch
        return Jet.constant(space, np.ones(batch) if batch else 1.0)

    def nearest_offset(self, x, z):
        """x - z shifted to the nearest lattice image (batched)."""
        dxz = np.asarray(x, float) - np.asarray(z, float)
        return dxz - self.periods * np.round(dxz / self.periods)


def _rot_s2():
    # maps pole axis e0 into e2-direction; chart-1 coords are standard polar
    # coords of Q^T u
    return np.array([[0.0, 0.0, 1.0],
                     [0.0, 1.0, 0.0],
                     [-1.0, 0.0, 0.0]])


def _rot_s3():
    # pi/2 rotations in the (e0,e3) and (e1,e2) planes: moves both polar
    # circles of the standard chart into the interior of the rotated one
    q = np.zeros((4, 4))
    q[0, 3] = 1.0
    q[3, 0] = -1.0
    q[1, 2] = 1.0
    q[2, 1] = -1.0
    return q


class RoundSphere:
    """Round sphere S^dim of given radius with two rotated polar charts.

    Chart coordinates are nested polar angles (psi_1, ..., psi_dim) with
    embedding u = r*(cos psi_1, sin psi_1 cos psi_2, ...).  Chart 1 applies a
    fixed rotation so that each chart's polar singularities lie well inside
    the other's validity region.  `margin` is the colatitude exclusion band.
    """

    kind = "round_sphere"
    n_charts = 2

    def __init__(self, radius=1.0, dim=2, margin=0.2):
        if dim not in (2, 3):
            raise ValueError("RoundSphere supports dim 2 or 3")
        self.radius = float(radius)
        self.dim = dim
        self.margin = float(margin)
        self.rotations = [np.eye(dim + 1), _rot_s2() if dim == 2 else _rot_s3()]

    @property
    def injectivity_radius(self):
        return math.pi * self.radius

    def diameter(self):
        return math.pi * self.radius

    # -- embeddings ----------------------------------------------------------
    def _std_embed(self, x):
        x = np.asarray(x, dtype=float)
        d = self.dim
        u = np.empty(x.shape[:-1] + (d + 1,))
        s = np.ones(x.shape[:-1])
        for i in range(d):
            u[..., i] = s * np.cos(x[..., i])
            s = s * np.sin(x[..., i])
        u[..., d] = s
        return self.radius * u

    def embed(self, x, chart=0):
        return self._std_embed(x) @ self.rotations[chart].T

    def _std_coords(self, u):
        u = np.asarray(u, dtype=float) / self.radius
        d = self.dim
        x = np.empty(u.shape[:-1] + (d,))
        rem = np.ones(u.shape[:-1])
        for i in range(d - 1):
            ci = np.clip(u[..., i] / np.maximum(rem, 1e-300), -1.0, 1.0)
            x[..., i] = np.arccos(ci)
            rem = rem * np.sin(x[..., i])
        x[..., d - 1] = np.mod(np.arctan2(u[..., d], u[..., d - 1]), 2 * math.pi)
        return x

    def coords(self, u, chart=0):
        return self._std_coords(u @ self.rotations[chart])

    def chart_for(self, u):
        """Pick a chart whose polar angles stay beyond the margin."""
        for c in range(self.n_charts):
            x = self.coords(u, c)
            polar = x[..., : self.dim - 1]
            if np.all(polar > self.margin) and np.all(polar < math.pi - self.margin):
                return c, x
        # fall back to the less-degenerate chart
        best, bx, score = 0, None, -1.0
        for c in range(self.n_charts):
            x = self.coords(u, c)
            polar = x[..., : self.dim - 1]
            s = float(np.min(np.minimum(polar, math.pi - polar)))
            if s > score:
                best, bx, score = c, x, s
        return best, bx

    def chart_of(self, x):
        return 0

    def transition(self, x, c_from, c_to):
        return self.coords(self.embed(x, c_from), c_to)

    def chart_margin_distance(self, x):
        """Distance (rad) of polar angles from the exclusion band edge."""
        polar = np.asarray(x)[..., : self.dim - 1]
        return np.min(np.minimum(polar, math.pi - polar), axis=-1) - self.margin

    # -- metric ----------------------------------------------------------------
    def metric_at(self, x, chart=0):
        x = np.asarray(x, dtype=float)
        d, r2 = self.dim, self.radius ** 2
        h = np.zeros((d, d))
        s = 1.0
        for i in range(d):
            h[i, i] = r2 * s
            s *= math.sin(x[i]) ** 2
        hinv = np.diag(1.0 / np.diag(h))
        rho = math.sqrt(np.linalg.det(h))
        return h, hinv, rho

    def metric_jet(self, space, x_jets, chart=0):
        d, r2 = self.dim, self.radius ** 2
        batch = x_jets[0].batch
        zero = Jet.constant(space, np.zeros(batch) if batch else 0.0)
        rows = [[zero for _ in range(d)] for _ in range(d)]
        s = Jet.constant(space, np.ones(batch) if batch else 1.0)
        for i in range(d):
            rows[i][i] = r2 * s
            if i < d - 1:
                sn = x_jets[i].sin()
                s = s * sn * sn
        return rows

    def density_jet(self, space, x_jets, chart=0):
        h = self.metric_jet(space, x_jets, chart)
        det = h[0][0]
        for i in range(1, self.dim):
            det = det * h[i][i]
        return det.sqrt()

    def embed_jet(self, space, x_jets, chart=0):
        d = self.dim
        comps = []
        s = None
        for i in range(d):
            ci, si = x_jets[i].cos(), x_jets[i].sin()
            comps.append(ci if s is None else s * ci)
            s = si if s is None else s * si
        comps.append(s)
        Q = self.rotations[chart]
        out = []
        for a in range(d + 1):
            acc = None
            for b in range(d + 1):
                if Q[a, b] == 0.0:
                    continue
                term = comps[b] * (self.radius * Q[a, b])
                acc = term if acc is None else acc + term
            out.append(acc)
        return out


class CustomTorusMetric:
    """Periodic chart with tabulated metric components, bicubic interpolation.

    `h_grid` has shape (n1, n2, d, d) sampled on the uniform grid over
    [0,P1) x [0,P2).  Used for custom backgrounds; derivative order beyond 2
    is not supported (interpolation is only piecewise-C^2).
    """

    kind = "custom_torus"
    n_charts = 1

    def __init__(self, periods, h_grid, injectivity_radius):
        from scipy.interpolate import RectBivariateSpline
        self.periods = np.asarray(periods, dtype=float)
        self.dim = len(self.periods)
        if self.dim != 2:
            raise ValueError("CustomTorusMetric supports dim 2")
        self._inj = float(injectivity_radius)
        h_grid = np.asarray(h_grid, dtype=float)
        n1, n2 = h_grid.shape[:2]
        pad = 3
        xs = np.arange(-pad, n1 + pad) * (self.periods[0] / n1)
        ys = np.arange(-pad, n2 + pad) * (self.periods[1] / n2)
        ext = np.empty((n1 + 2 * pad, n2 + 2 * pad, self.dim, self.dim))
        idx1 = np.mod(np.arange(-pad, n1 + pad), n1)
        idx2 = np.mod(np.arange(-pad, n2 + pad), n2)
        ext[:] = h_grid[np.ix_(idx1, idx2)]
        self._spl = [[RectBivariateSpline(xs, ys, ext[:, :, i, j], kx=3, ky=3)
                      for j in range(self.dim)] for i in range(self.dim)]

    @property
    def injectivity_radius(self):
        return self._inj

    def wrap(self, x):
        return np.mod(x, self.periods)

    def chart_of(self, x):
        return 0

    def metric_at(self, x, chart=0):
        x = self.wrap(np.asarray(x, float))
        h = np.array([[float(self._spl[i][j](x[0], x[1])[0, 0])
                       for j in range(self.dim)] for i in range(self.dim)])
        h = 0.5 * (h + h.T)
        hinv = np.linalg.inv(h)
        rho = math.sqrt(np.linalg.det(h))
        return h, hinv, rho

    def metric_dx(self, x):
        """First derivatives d h_{ij} / d x_k, shape (d, d, d)."""
        x = self.wrap(np.asarray(x, float))
        out = np.empty((self.dim, self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                out[i, j, 0] = float(self._spl[i][j](x[0], x[1], dx=1)[0, 0])
                out[i, j, 1] = float(self._spl[i][j](x[0], x[1], dy=1)[0, 0])
        return 0.5 * (out + out.transpose(1, 0, 2))

    def metric_jet(self, space, x_jets, chart=0):
        # quadratic Taylor model from spline derivatives (order <= 2)
        x0 = np.stack([np.real(j.value()) for j in x_jets], axis=-1)
        if x0.ndim != 1:
            raise ValueError("custom metric jets support single centers only")
        h0 = np.empty((self.dim, self.dim))
        d1 = self.metric_dx(x0)
        rows = []
        for i in range(self.dim):
            row = []
            for j in range(self.dim):
                h0[i, j] = float(self._spl[i][j](x0[0], x0[1])[0, 0])
                jet = Jet.constant(space, h0[i, j])
                for k in range(self.dim):
                    dv = x_jets[k] - x_jets[k].value()
                    dv.coeffs[0] = 0.0
                    jet = jet + d1[i, j, k] * dv
                row.append(jet)
            rows.append(row)
        return rows

    def density_jet(self, space, x_jets, chart=0):
        h = self.metric_jet(space, x_jets, chart)
        det = h[0][0] * h[1][1] - h[0][1] * h[1][0]
        return det.sqrt()


# ---------------------------------------------------------------------------
# Pointwise operations
# ---------------------------------------------------------------------------

def metric_at(M, x, chart=0):
    """Return (h, h_inverse, density) at a chart point."""
    h, hinv, rho = M.metric_at(x, chart)
    return h, hinv, rho


def _metric_jets_order1(M, x, chart):
    space = make_space({"x": M.dim}, {"x": 2}, 2)
    x_jets = [Jet.variable(space, "x", i, x[i]) for i in range(M.dim)]
    return space, M.metric_jet(space, x_jets, chart)


def christoffel(M, x, chart=0):
    """Christoffel symbols Gamma^c_{ab} from chart metric jets."""
    x = np.asarray(x, dtype=float)
    d = M.dim
    space, hj = _metric_jets_order1(M, x, chart)
    h = np.array([[complex(hj[i][j].value()) for j in range(d)] for i in range(d)]).real
    dh = np.array([[[complex(hj[i][j].coeff({("x", k): 1})) for k in range(d)]
                    for j in range(d)] for i in range(d)]).real
    hinv = np.linalg.inv(h)
    gamma = np.zeros((d, d, d))
    for c in range(d):
        for a in range(d):
            for b in range(d):
                s = 0.0
                for m in range(d):
                    s += hinv[c, m] * (dh[m, a, b] + dh[m, b, a] - dh[a, b, m])
                gamma[c, a, b] = 0.5 * s
    return gamma


def riem_distance(M, x, y, chart_x=0, chart_y=0):
    """Geodesic distance between chart points."""
    if M.kind == "flat_torus":
        return float(np.linalg.norm(M.nearest_offset(x, y)))
    if M.kind == "round_sphere":
        ux = M.embed(np.asarray(x, float), chart_x)
        uy = M.embed(np.asarray(y, float), chart_y)
        chord = float(np.linalg.norm(ux - uy)) / M.radius
        if chord < 1.0:
            return M.radius * 2.0 * math.asin(0.5 * chord)
        c = float(np.clip(ux @ uy / M.radius ** 2, -1.0, 1.0))
        return M.radius * math.acos(c)
    # custom: shooting solver
    v = log_map(M, x, y)
    h, _, _ = M.metric_at(x)
    return float(math.sqrt(max(v @ h @ v, 0.0)))


def exp_map(M, x, v, chart=0):
    """Point reached after unit affine time along the geodesic with initial
    tangent v at x (chart components).  Returns (point, chart)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if M.kind == "flat_torus":
        return M.wrap(x + v), 0
    if M.kind == "round_sphere":
        u = M.embed(x, chart)
        space = make_space({"x": M.dim}, {"x": 1}, 1)
        xj = [Jet.variable(space, "x", i, x[i]) for i in range(M.dim)]
        uj = M.embed_jet(space, xj, chart)
        Jmat = np.array([[complex(uj[a].coeff({("x", i): 1})).real
                          for i in range(M.dim)] for a in range(M.dim + 1)])
        V = Jmat @ v
        h, _, _ = M.metric_at(x, chart)
        norm = math.sqrt(max(v @ h @ v, 0.0))
        if norm < 1e-300:
            return x.copy(), chart
        s = norm / M.radius
        Vhat = V / np.linalg.norm(V)
        u_new = math.cos(s) * u + math.sin(s) * M.radius * Vhat
        c_new, x_new = M.chart_for(u_new)
        return x_new, c_new
    return _custom_exp(M, x, v)


def log_map(M, x, y, chart_x=0, chart_y=0):
    """Initial tangent at x of the unit-affine-time geodesic reaching y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if M.kind == "flat_torus":
        off = M.nearest_offset(y, x)
        if np.linalg.norm(off) > M.injectivity_radius - 1e-12:
            raise OutOfNeighbourhoodError("log beyond cut locus on torus")
        return off
    if M.kind == "round_sphere":
        ux, uy = M.embed(x, chart_x), M.embed(y, chart_y)
        r = M.radius
        c = float(np.clip(ux @ uy / r ** 2, -1.0, 1.0))
        th = math.acos(c)
        if th > math.pi - 1e-9:
            raise OutOfNeighbourhoodError("antipodal pair on sphere")
        w = uy / r - c * ux / r
        nw = np.linalg.norm(w)
        if nw < 1e-300:
            return np.zeros(M.dim)
        V = r * th * w / nw
        space = make_space({"x": M.dim}, {"x": 1}, 1)
        xj = [Jet.variable(space, "x", i, x[i]) for i in range(M.dim)]
        uj = M.embed_jet(space, xj, chart_x)
        Jmat = np.array([[complex(uj[a].coeff({("x", i): 1})).real
                          for i in range(M.dim)] for a in range(M.dim + 1)])
        _, hinv, _ = M.metric_at(x, chart_x)
        return hinv @ (Jmat.T @ V)
    return _custom_log(M, x, y)


def grad_dist_squared(M, x, z, chart_x=0, chart_z=0):
    """d/dz of dist^2(x, z) as a covector at z; equals -2 (log_z x)^flat."""
    v = log_map(M, z, x, chart_z, chart_x)
    h, _, _ = M.metric_at(z, chart_z)
    return -2.0 * (h @ v)


# ---------------------------------------------------------------------------
# Distance-squared biscalar as jets
# ---------------------------------------------------------------------------

def dist2_jet(M, x_jets, z_jets, chart_x=0, chart_z=0):
    """dist_Sigma^2(x, z) as a jet; centers must stay off the cut locus.

    Batched: centers may carry a trailing batch shape.
    """
    space = x_jets[0].space
    if M.kind == "flat_torus":
        out = None
        for i in range(M.dim):
            xv = np.real(np.asarray(x_jets[i].value()))
            zv = np.real(np.asarray(z_jets[i].value()))
            shift = M.periods[i] * np.round((xv - zv) / M.periods[i])
            if shift.shape == ():
                shift = float(shift)
            term = x_jets[i] - z_jets[i] - shift
            term = term * term
            out = term if out is None else out + term
        return out
    if M.kind == "round_sphere":
        ux = M.embed_jet(space, x_jets, chart_x)
        uz = M.embed_jet(space, z_jets, chart_z)
        r2 = M.radius ** 2
        q = None
        for a in range(M.dim + 1):
            duv = ux[a] - uz[a]
            term = duv * duv
            q = term if q is None else q + term
        q = q * (0.5 / r2)
        q0 = np.real(np.asarray(q.value()))
        if np.all(q0 < 1.1):
            b = q.apply_series(halfangle_b_series(np.asarray(q.value()), q.ord))
            return (2.0 * r2) * q * b
        if np.all(q0 >= 0.05):
            cjet = 1.0 - q
            return r2 * cjet.apply_series(
                arccos_sq_series(np.asarray(cjet.value()), cjet.ord))
        # mixed batch: evaluate both branches and select per element
        b = q.apply_series(halfangle_b_series(np.asarray(q.value()), q.ord))
        near = (2.0 * r2) * q * b
        cjet = 1.0 - q
        far = r2 * cjet.apply_series(
            arccos_sq_series(np.asarray(cjet.value()), cjet.ord))
        sel = (q0 < 0.6)
        coeffs = np.where(sel, near.coeffs, far.coeffs)
        return Jet(space, coeffs, min(near.ord, far.ord))
    raise NotImplementedError("dist2_jet for custom metrics")


# ---------------------------------------------------------------------------
# Custom-manifold geodesics (shooting)
# ---------------------------------------------------------------------------

def _geodesic_rhs(M, chart):
    def rhs(_, s):
        x, v = s[: M.dim], s[M.dim:]
        gam = christoffel(M, x, chart)
        acc = -np.einsum("cab,a,b->c", gam, v, v)
        return np.concatenate([v, acc])
    return rhs


def _custom_exp(M, x, v):
    sol = solve_ivp(_geodesic_rhs(M, 0), (0.0, 1.0), np.concatenate([x, v]),
                    rtol=1e-10, atol=1e-12, dense_output=False)
    if not sol.success:
        raise ConvexityError("geodesic integration failed")
    return M.wrap(sol.y[: M.dim, -1]), 0


def _custom_log(M, x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    target = x + M.nearest_offset(y, x)
    v = target - x
    for _ in range(50):
        reached, _ = _custom_exp(M, x, v)
        err = M.nearest_offset(target, reached)
        if np.linalg.norm(err) < 1e-11:
            return v
        jac = np.zeros((M.dim, M.dim))
        h = 1e-6
        for j in range(M.dim):
            vp = v.copy()
            vp[j] += h
            rp, _ = _custom_exp(M, x, vp)
            jac[:, j] = M.nearest_offset(rp, reached) / h
        v = v + np.linalg.solve(jac, err)
    raise ConvexityError("custom log map did not converge")


# ---------------------------------------------------------------------------
# Lorentzian layer
# ---------------------------------------------------------------------------

@dataclass
class SpacetimePoint:
    t: float
    x: np.ndarray
    chart: int = 0


@dataclass
class LorentzMetric:
    """Product spacetime R x Sigma with line element beta dt^2 - h_t.

    `beta` is a scalar field object (see fields module) or None for 1;
    `metric_of_t` optionally supplies a time-dependent spatial manifold,
    otherwise `manifold` is used for all t.
    """

    manifold: object
    beta: object = None
    metric_of_t: object = None
    d: int = field(init=False)

    def __post_init__(self):
        self.d = self.manifold.dim + 1

    @property
    def ultrastatic(self):
        return self.beta is None and self.metric_of_t is None

    @property
    def static(self):
        return self.metric_of_t is None

    def sigma_at(self, t):
        return self.manifold if self.metric_of_t is None else self.metric_of_t(t)

    def beta_value(self, t, x):
        return 1.0 if self.beta is None else float(self.beta.value(np.asarray(x)))

    def metric_matrix(self, t, x, chart=0):
        """Full spacetime metric g_{ab} in (t, chart-x) coordinates."""
        Sig = self.sigma_at(t)
        h, _, _ = Sig.metric_at(x, chart)
        g = np.zeros((self.d, self.d))
        g[0, 0] = self.beta_value(t, x)
        g[1:, 1:] = -h
        return g

    def inverse_metric_matrix(self, t, x, chart=0):
        Sig = self.sigma_at(t)
        _, hinv, _ = Sig.metric_at(x, chart)
        gi = np.zeros((self.d, self.d))
        gi[0, 0] = 1.0 / self.beta_value(t, x)
        gi[1:, 1:] = -hinv
        return gi


def _spacetime_geo_rhs(g: LorentzMetric, chart):
    """Hamiltonian RHS for H = (1/2) g^{ab} p_a p_b in coords (t, x)."""
    d = g.d

    def rhs(_, s):
        X, P = s[:d], s[d:]
        t, x = X[0], X[1:]
        eps = 1e-6
        def ham(Xv, Pv):
            gi = g.inverse_metric_matrix(Xv[0], Xv[1:], chart)
            return 0.5 * Pv @ gi @ Pv
        gi = g.inverse_metric_matrix(t, x, chart)
        dX = gi @ P
        dP = np.empty(d)
        for a in range(d):
            Xp = X.copy(); Xp[a] += eps
            Xm = X.copy(); Xm[a] -= eps
            dP[a] = -(ham(Xp, P) - ham(Xm, P)) / (2 * eps)
        return np.concatenate([dX, dP])
    return rhs


def world_function(g: LorentzMetric, X: SpacetimePoint, Y: SpacetimePoint):
    """Synge world function sigma(X, Y) = (1/2) g(gamma', gamma') for the
    affinely-parameterised geodesic from Y (lambda=0) to X (lambda=1)."""
    if g.ultrastatic:
        dt = X.t - Y.t
        ds = riem_distance(g.manifold, X.x, Y.x, X.chart, Y.chart)
        return 0.5 * (dt * dt - ds * ds)
    return _sigma_shooting(g, X, Y)


def _sigma_shooting(g: LorentzMetric, X: SpacetimePoint, Y: SpacetimePoint):
    M = g.manifold
    if X.chart != 0 or Y.chart != 0:
        raise NotImplementedError("shooting sigma assumes chart 0")
    # initial guess from the ultrastatic geometry
    try:
        v_sp = log_map(M, Y.x, X.x)
    except OutOfNeighbourhoodError as e:
        raise ConvexityError(str(e)) from e
    V = np.concatenate([[X.t - Y.t], v_sp])
    d = g.d
    rhs = _spacetime_geo_rhs(g, 0)

    def shoot(V0):
        g0 = g.metric_matrix(Y.t, Y.x)
        P0 = g0 @ V0
        s0 = np.concatenate([[Y.t, *Y.x], P0])
        sol = solve_ivp(rhs, (0.0, 1.0), s0, rtol=1e-11, atol=1e-13)
        if not sol.success:
            raise ConvexityError("geodesic integration failed")
        return sol.y[:d, -1]

    target = np.array([X.t, *X.x])

    def miss(V0):
        out = shoot(V0) - target
        if hasattr(M, "periods"):
            out[1:] -= M.periods * np.round(out[1:] / M.periods)
        return out

    for _ in range(60):
        r = miss(V)
        if np.linalg.norm(r) < 1e-10:
            break
        jac = np.zeros((d, d))
        h = 1e-6
        for j in range(d):
            Vp = V.copy()
            Vp[j] += h
            jac[:, j] = (miss(Vp) - r) / h
        try:
            V = V - np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as e:
            raise ConvexityError("singular shooting Jacobian") from e
    else:
        raise ConvexityError("world-function shooting did not converge")

    g0 = g.metric_matrix(Y.t, Y.x)
    return 0.5 * float(V @ g0 @ V)
