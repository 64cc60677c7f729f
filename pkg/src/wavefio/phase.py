"""Complex-valued Levi-Civita phase functions, cutoffs and the weight.

The phase is assembled from flow jets and the squared-distance biscalar:

    phi = -1/2 < xi*(t;y,eta), grad_z dist^2(x,z)|_{z=x*(t;y,eta)} >
          + (i eps / 2) h(y,eta) dist^2(x, x*(t;y,eta))

inside a geodesic neighbourhood of the flow, blended smoothly into a
positive-imaginary clamp outside it.  Everything is computed as jets in
(time, field point, momentum) offsets, so arbitrary mixed derivatives are
exact up to the configured caps.  The weight

    w = rho(x)^{-1/2} rho(y)^{-1/2} [det^2 phi_{x eta}]^{1/4}

carries a branch of the complex fourth root chosen continuously in t from
arg 0 at the seed time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .jets import Jet, make_space, promote
from .geometry import dist2_jet, riem_distance, LorentzMetric
from .flow import (CotangentPoint, flow_trajectory, flow_eta_jets,
                   extend_time_jets, restrict_group, jet_matrix_inverse,
                   levi_civita_flow, eta_plus)

__all__ = [
    "PhaseEval", "WeightEval", "PhaseMachine", "levi_civita_phase",
    "lorentzian_phase", "cutoff_chi", "radial_cutoff_zeta", "weight_w",
    "smoothstep", "smoothstep_jet", "EXTENSION_PROFILES", "BranchTracker",
    "RefinementError",
]


class RefinementError(RuntimeError):
    """Branch tracking step too coarse; resample finer in t."""


# smooth-extension profiles: radii in units of the injectivity radius.
# The cone cutoff must vanish before ext_in so that verified quantities are
# exactly extension-independent.  The exact-phase region extends close to
# the cut locus: every modification at distance D costs the quadrature a
# smoothing error ~ exp(-(eps/2) D^2 |k|), so D must be as large as the
# distance function allows.
EXTENSION_PROFILES = {
    "blend": dict(ext_in=0.93, ext_out=0.97, clamp=0.95),
    "capped": dict(ext_in=0.91, ext_out=0.96, clamp=0.90),
}


@dataclass
class PhaseEval:
    value: complex
    grad_x: np.ndarray
    grad_eta: np.ndarray
    hess_x_eta: np.ndarray
    hess_x_x: np.ndarray
    in_neighbourhood: bool


@dataclass
class WeightEval:
    value: complex
    branch_phase: float


# ---------------------------------------------------------------------------
# smooth step
# ---------------------------------------------------------------------------

def smoothstep(s):
    """C-infinity monotone bridge: 0 for s<=0, 1 for s>=1."""
    s = np.asarray(s, dtype=float)

    def f(u):
        with np.errstate(over="ignore", divide="ignore"):
            return np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)

    fs = f(s)
    return fs / (fs + f(1.0 - s))


def _bump_series(s0, n):
    """Taylor coefficients of exp(-1/s) at s0 > 0 (batched)."""
    space1 = make_space({"s": 1}, {"s": max(n, 1)}, max(n, 1))
    sj = Jet.variable(space1, "s", 0, np.asarray(s0, dtype=complex))
    ej = (-1.0 * sj.reciprocal()).exp()
    return [ej.coeffs[space1.index[(m,)]] for m in range(n + 1)]


def smoothstep_jet(j):
    """Jet-valued smoothstep; handles batches spanning all three regimes."""
    s0 = np.real(np.asarray(j.value()))
    n = j.ord
    clipped = np.clip(s0, 1e-9, 1.0 - 1e-9)
    shift = clipped - s0
    jj = j + shift  # recenter into the open interval
    f1 = jj.apply_series(_bump_series(np.asarray(jj.value()), n))
    one_m = 1.0 - jj
    f2 = one_m.apply_series(_bump_series(np.asarray(one_m.value()), n))
    out = f1 * (f1 + f2).reciprocal()
    lo = s0 <= 0.0
    hi = s0 >= 1.0
    if np.any(lo) or np.any(hi):
        c = out.coeffs
        if c.ndim == 1:
            if lo:
                c[:] = 0.0
            elif hi:
                c[:] = 0.0
                c[0] = 1.0
        else:
            c[:, lo] = 0.0
            c[:, hi] = 0.0
            c[0, hi] = 1.0
    return out


def radial_cutoff_zeta(r):
    """zeta(r): 0 for r <= 1/2, 1 for r >= 1, smooth monotone between."""
    return smoothstep((np.asarray(r, dtype=float) - 0.5) / 0.5)


# ---------------------------------------------------------------------------
# phase machine
# ---------------------------------------------------------------------------

class PhaseMachine:
    """Phase/weight/cutoff evaluation around a fixed manifold and epsilon."""

    def __init__(self, M, eps=1.0, profile="blend", delta_cone_frac=0.45):
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        self.M = M
        self.eps = float(eps)
        self.profile = EXTENSION_PROFILES[profile] if isinstance(profile, str) \
            else dict(profile)
        self.profile_name = profile if isinstance(profile, str) else "custom"
        self.delta_cone_frac = float(delta_cone_frac)
        if 2 * self.delta_cone_frac > self.profile["ext_in"] + 1e-12:
            raise ValueError("cone cutoff must vanish inside the exact-phase region")
        self._flow_cache = {}

    # -- flows ---------------------------------------------------------------
    def flow(self, p: CotangentPoint, t):
        key = (round(float(t), 12), tuple(np.round(p.y, 12)),
               tuple(np.round(p.eta, 12)), p.chart)
        if key not in self._flow_cache:
            self._flow_cache[key] = flow_trajectory(self.M, p, [t])
        return self._flow_cache[key]

    # -- jet pack ------------------------------------------------------------
    def pack(self, space, t0, p: CotangentPoint, x_center=None, chart_x=None,
             t_order=0, nsub_per_unit=512, flow_sample=None, with_weight=True,
             branch_theta2=0.0):
        """Jets of the phase fields around (t0, x_center; y, eta).

        space groups: "t", "x", "eta", "xa" (aux, cap >= 1).  Returns a dict
        with phi, S(dist^2), mu, ham, weight (if requested), flow jets and
        bookkeeping values.  x_center defaults to the flow point (batched
        centers allowed via array values)."""
        M, d = self.M, self.M.dim
        fspace = make_space(
            {"t": 1, "eta": d, "xa": d},
            {"t": space.caps.get("t", 0), "eta": space.caps["eta"], "xa": 1},
            space.caps.get("t", 0) + space.caps["eta"] + 1)
        if flow_sample is None:
            flow_sample = flow_eta_jets(M, p.y, p.eta, [t0], fspace,
                                        chart=p.chart,
                                        nsub_per_unit=nsub_per_unit)[0]
        xf, xif, chart_fl = flow_sample
        if t_order > 0:
            xf, xif = extend_time_jets(M, xf, xif, chart_fl, t_order)
        xs = [promote(j, space) for j in xf]
        xis = [promote(j, space) for j in xif]
        # flow-state jets are exact on their whole (t, eta) basis and carry
        # no x-dependence, so they are exact on every promoted monomial
        for j in (*xs, *xis):
            j.ord = space.total_cap

        x0 = (np.real(np.asarray([j.value() for j in xs]))
              if x_center is None else np.asarray(x_center, dtype=float))
        if chart_x is None:
            chart_x = chart_fl if x_center is None else 0
        batch = xs[0].batch if x_center is None else np.asarray(x0[0]).shape
        X = [Jet.variable(space, "x", i, x0[i]) for i in range(d)]
        Z = [xs[i] + Jet.variable(space, "xa", i,
                                  np.zeros(batch) if batch else 0.0)
             for i in range(d)]

        S_full = dist2_jet(M, X, Z, chart_x, chart_fl)
        S = restrict_group(S_full, "xa")
        S.ord = S_full.ord
        G = []
        for b in range(d):
            gb = restrict_group(S_full.derivative("xa", b), "xa")
            gb.ord = min(S_full.ord, space.total_cap - 1)
            G.append(gb)

        hj = M.metric_jet(space, xs, chart_fl)
        Hinv = jet_matrix_inverse(hj)
        pairing = None
        for a in range(d):
            for b in range(d):
                term = Hinv[a][b] * xis[a] * G[b]
                pairing = term if pairing is None else pairing + term

        _, hinv_y, rho_y = M.metric_at(p.y, p.chart)
        etas = [Jet.variable(space, "eta", i, p.eta[i]) for i in range(d)]
        ham2 = None
        for a in range(d):
            for b in range(d):
                if hinv_y[a, b] == 0.0:
                    continue
                term = (etas[a] * etas[b]) * hinv_y[a, b]
                ham2 = term if ham2 is None else ham2 + term
        ham = ham2.sqrt()

        inj = M.injectivity_radius
        prof = self.profile
        phi_formula = (-0.5) * pairing + (0.5j * self.eps) * ham * S
        denom = (prof["ext_out"] ** 2 - prof["ext_in"] ** 2) * inj * inj
        sarg = (S - (prof["ext_in"] * inj) ** 2) * (1.0 / denom)
        mu = 1.0 - smoothstep_jet(sarg)
        clamp_im = 0.5 * self.eps * (prof["clamp"] * inj) ** 2
        phi = mu * phi_formula + (1.0 - mu) * (1j * clamp_im) * ham

        out = {
            "phi": phi, "S": S, "mu": mu, "ham": ham, "xs": xs, "xis": xis,
            "chart_flow": chart_fl, "chart_x": chart_x, "x0": x0,
            "rho_y": rho_y, "flow_sample": (xf, xif, chart_fl),
        }
        if with_weight:
            out.update(self._weight_jets(space, out, branch_theta2))
        return out

    def _weight_jets(self, space, pack, branch_theta2):
        M, d = self.M, self.M.dim
        phi = pack["phi"]
        cols = []
        for b in range(d):
            db = phi.derivative("eta", b)
            db.ord = min(phi.ord, space.total_cap - 1)
            cols.append(db)
        mat = []
        for a in range(d):
            row = []
            for b in range(d):
                e = cols[b].derivative("x", a)
                e.ord = min(phi.ord, space.total_cap - 2)
                row.append(e)
            mat.append(row)
        if d == 1:
            det = mat[0][0]
        elif d == 2:
            det = mat[0][0] * mat[1][1] - mat[0][1] * mat[1][0]
        else:
            det = (mat[0][0] * (mat[1][1] * mat[2][2] - mat[1][2] * mat[2][1])
                   - mat[0][1] * (mat[1][0] * mat[2][2] - mat[1][2] * mat[2][0])
                   + mat[0][2] * (mat[1][0] * mat[2][1] - mat[1][1] * mat[2][0]))
        detsq = det * det
        root = _branch_root(detsq, branch_theta2)
        X = [Jet.variable(space, "x", i, pack["x0"][i]) for i in range(d)]
        rho_x = M.density_jet(space, X, pack["chart_x"])
        w = rho_x.power(-0.5) * (pack["rho_y"] ** -0.5) * root
        return {"w": w, "phi_xeta": mat, "detsq": detsq}

    # -- pointwise public evaluations -----------------------------------------
    def eval(self, t, x, p: CotangentPoint, chart_x=0):
        d = self.M.dim
        space = make_space({"t": 1, "x": d, "eta": d, "xa": d},
                           {"t": 0, "x": 2, "eta": 1, "xa": 1}, 4)
        pk = self.pack(space, t, p, x_center=np.asarray(x, float),
                       chart_x=chart_x, with_weight=False)
        phi = pk["phi"]
        grad_x = np.array([complex(phi.coeff({("x", i): 1})) for i in range(d)])
        grad_eta = np.array([complex(phi.coeff({("eta", i): 1})) for i in range(d)])
        hxe = np.array([[complex(phi.coeff({("x", a): 1, ("eta", b): 1}))
                         for b in range(d)] for a in range(d)])
        hxx = np.empty((d, d), dtype=complex)
        for a in range(d):
            for b in range(d):
                if a == b:
                    hxx[a, a] = 2.0 * complex(phi.coeff({("x", a): 2}))
                else:
                    hxx[a, b] = complex(phi.coeff({("x", a): 1, ("x", b): 1}))
        dist0 = math.sqrt(max(float(np.real(pk["S"].value())), 0.0))
        in_nbhd = dist0 <= self.profile["ext_in"] * self.M.injectivity_radius
        return PhaseEval(complex(phi.value()), grad_x, grad_eta, hxe, hxx, in_nbhd)

    def chi(self, t, x, p: CotangentPoint, chart_x=0):
        from .flow import hamiltonian
        hval = hamiltonian(self.M, p)
        tr = self.flow(p, t)
        xs, _, cf = tr.sample(0)
        dist = riem_distance(self.M, np.asarray(x, float), xs, chart_x, int(cf))
        inj = self.M.injectivity_radius
        dc = self.delta_cone_frac * inj
        cone = 1.0 - smoothstep((dist ** 2 - dc ** 2) / ((2 * dc) ** 2 - dc ** 2))
        return float(radial_cutoff_zeta(hval) * cone)

    def weight(self, t, x, p: CotangentPoint, chart_x=0, tracker=None):
        d = self.M.dim
        theta2 = 0.0 if tracker is None else tracker.theta2(t)
        space = make_space({"t": 1, "x": d, "eta": d, "xa": d},
                           {"t": 0, "x": 2, "eta": 1, "xa": 1}, 4)
        pk = self.pack(space, t, p, x_center=np.asarray(x, float),
                       chart_x=chart_x, with_weight=True, branch_theta2=theta2)
        wval = complex(pk["w"].value())
        return WeightEval(wval, theta2 / 2.0)


def _branch_root(detsq_jet, theta2):
    """Fourth root of det^2 with the branch pinned near exp(i theta2 / 4)."""
    z0 = np.asarray(detsq_jet.value())
    mag = np.abs(z0) ** 0.25
    arg = np.angle(z0 * np.exp(-1j * theta2))
    root0 = mag * np.exp(1j * (theta2 + arg) / 4.0)
    scaled = detsq_jet * (1.0 / z0)
    return scaled.power(0.25) * root0


class BranchTracker:
    """Continuous argument of det^2(phi_{x eta}) along t on the flow."""

    def __init__(self, machine: PhaseMachine, p: CotangentPoint, t_grid,
                 max_refine=3):
        self.machine = machine
        self.p = p
        t_grid = np.asarray(t_grid, dtype=float)
        if not np.any(np.abs(t_grid) < 1e-14):
            t_grid = np.concatenate([t_grid, [0.0]])
        t_grid = np.unique(t_grid)
        for _ in range(max_refine + 1):
            args = self._sample_args(t_grid)
            jumps = np.abs(np.diff(args))
            jumps = np.minimum(jumps, 2 * math.pi - jumps)
            if np.all(jumps < math.pi / 2):
                unwrapped = np.unwrap(args)
                unwrapped -= unwrapped[np.argmin(np.abs(t_grid))]
                self.t_grid = t_grid
                self.theta2_grid = unwrapped
                from scipy.interpolate import PchipInterpolator
                self._interp = PchipInterpolator(t_grid, unwrapped)
                return
            t_grid = _refine_grid(t_grid)
        raise RefinementError("branch-tracking step too coarse")

    def _sample_args(self, t_grid):
        d = self.machine.M.dim
        space = make_space({"t": 1, "x": d, "eta": d, "xa": d},
                           {"t": 0, "x": 1, "eta": 1, "xa": 1}, 3)
        args = []
        for t in t_grid:
            pk = self.machine.pack(space, float(t), self.p, with_weight=True)
            args.append(float(np.angle(complex(pk["detsq"].value()))))
        return np.asarray(args)

    def theta2(self, t):
        t = float(np.clip(t, self.t_grid[0], self.t_grid[-1]))
        return float(self._interp(t))


def _refine_grid(t):
    out = [t[0]]
    for a, b in zip(t[:-1], t[1:]):
        out.append(0.5 * (a + b))
        out.append(b)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# module-level spec operations
# ---------------------------------------------------------------------------

def levi_civita_phase(M, t, x, p: CotangentPoint, eps=1.0, profile="blend",
                      chart_x=0) -> PhaseEval:
    return PhaseMachine(M, eps, profile).eval(t, x, p, chart_x)


def cutoff_chi(M, t, x, p: CotangentPoint, delta_cone_frac=0.45, chart_x=0):
    return PhaseMachine(M, 1.0, "blend", delta_cone_frac).chi(t, x, p, chart_x)


def weight_w(M, t, x, p: CotangentPoint, eps=1.0, profile="blend",
             chart_x=0, tracker=None) -> WeightEval:
    return PhaseMachine(M, eps, profile).weight(t, x, p, chart_x, tracker)


def lorentzian_phase(g: LorentzMetric, tau, x, s, p: CotangentPoint, eps=1.0,
                     profile="blend", chart_x=0, fd_eta=1e-5) -> PhaseEval:
    """Lorentzian Levi-Civita phase at (tau, x; s, y, eta).

    Value and x-derivatives are exact (jets); eta-derivatives use central
    differences of the flow seed covector."""
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    d = g.manifold.dim

    def x_jet_eval(eta_vec):
        pp = CotangentPoint(p.y, eta_vec, p.chart)
        tr = levi_civita_flow(g, s, pp, [tau])
        xs_val, Xi_val = tr.x[0], tr.Xi[0]
        chart_fl = int(tr.charts[0])
        Sig = g.sigma_at(tau)
        space = make_space({"x": d, "xa": d}, {"x": 2, "xa": 1}, 3)
        X = [Jet.variable(space, "x", i, float(np.asarray(x, float)[i]))
             for i in range(d)]
        Z = [Jet.constant(space, xs_val[i]) + Jet.variable(space, "xa", i, 0.0)
             for i in range(d)]
        S_full = dist2_jet(Sig, X, Z, chart_x, chart_fl)
        S = restrict_group(S_full, "xa")
        S.ord = S_full.ord
        _, hinv_fl, _ = Sig.metric_at(xs_val, chart_fl)
        xi_pullback = Xi_val[1:]
        pairing = None
        G = []
        for b in range(d):
            gb = restrict_group(S_full.derivative("xa", b), "xa")
            gb.ord = S_full.ord
            G.append(gb)
        for a in range(d):
            coef = float(sum(hinv_fl[a, b] * xi_pullback[b] for b in range(d)))
            term = G[a] * coef
            pairing = term if pairing is None else pairing + term
        Sig_s = g.sigma_at(s)
        _, hinv_s, _ = Sig_s.metric_at(p.y, p.chart)
        nrm = math.sqrt(float(eta_vec @ hinv_s @ eta_vec))
        # smooth extension as in the Riemannian machine
        prof = EXTENSION_PROFILES[profile]
        inj = Sig.injectivity_radius
        denom = (prof["ext_out"] ** 2 - prof["ext_in"] ** 2) * inj * inj
        sarg = (S - (prof["ext_in"] * inj) ** 2) * (1.0 / denom)
        mu = 1.0 - smoothstep_jet(sarg)
        clamp_im = 0.5 * eps * (prof["clamp"] * inj) ** 2
        phi_formula = (-0.5) * pairing + (0.5j * eps * nrm) * S
        phi = mu * phi_formula + (1.0 - mu) * (1j * clamp_im * nrm)
        return phi, S

    phi0, S0 = x_jet_eval(p.eta)
    grad_x = np.array([complex(phi0.coeff({("x", i): 1})) for i in range(d)])
    hxx = np.empty((d, d), dtype=complex)
    for a in range(d):
        for b in range(d):
            if a == b:
                hxx[a, a] = 2.0 * complex(phi0.coeff({("x", a): 2}))
            else:
                hxx[a, b] = complex(phi0.coeff({("x", a): 1, ("x", b): 1}))
    grad_eta = np.empty(d, dtype=complex)
    hxe = np.empty((d, d), dtype=complex)
    for b in range(d):
        ep, em = p.eta.copy(), p.eta.copy()
        ep[b] += fd_eta
        em[b] -= fd_eta
        php, _ = x_jet_eval(ep)
        phm, _ = x_jet_eval(em)
        grad_eta[b] = (complex(php.value()) - complex(phm.value())) / (2 * fd_eta)
        for a in range(d):
            hxe[a, b] = (complex(php.coeff({("x", a): 1}))
                         - complex(phm.coeff({("x", a): 1}))) / (2 * fd_eta)
    Sig = g.sigma_at(tau)
    dist0 = math.sqrt(max(float(np.real(S0.value())), 0.0))
    in_nbhd = dist0 <= EXTENSION_PROFILES[profile]["ext_in"] * Sig.injectivity_radius
    return PhaseEval(complex(phi0.value()), grad_x, grad_eta, hxe, hxx, in_nbhd)
