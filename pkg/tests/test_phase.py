import math

import numpy as np
import pytest

from wavefio import geometry as geo
from wavefio import phase as ph
from wavefio.flow import CotangentPoint, flow_trajectory, hamiltonian
from wavefio.fields import TrigField

TORUS = geo.FlatTorus((2 * math.pi, 2 * math.pi))
S2 = geo.RoundSphere(1.0, 2)


def random_cotangent(M, rng, scale=1.0):
    y = np.array([rng.uniform(0.7, 2.4), rng.uniform(0.0, 2 * math.pi)])
    eta = rng.normal(size=2)
    eta *= scale / np.linalg.norm(eta)
    return CotangentPoint(y, eta)


class TestSmoothstep:
    def test_endpoints_and_interior(self):
        assert ph.smoothstep(-0.2) == 0.0
        assert ph.smoothstep(1.3) == 1.0
        v = ph.smoothstep(0.5)
        assert 0.0 < v < 1.0

    def test_monotone(self):
        s = np.linspace(-0.2, 1.2, 100)
        v = ph.smoothstep(s)
        assert np.all(np.diff(v) >= -1e-15)

    def test_jet_matches_fd(self):
        from wavefio.jets import Jet, make_space
        space = make_space({"s": 1}, {"s": 3}, 3)
        for s0 in (0.3, 0.7, -0.5, 1.4):
            j = Jet.variable(space, "s", 0, s0)
            out = ph.smoothstep_jet(j)
            eps = 1e-6
            fd = (ph.smoothstep(s0 + eps) - ph.smoothstep(s0 - eps)) / (2 * eps)
            assert complex(out.coeff({("s", 0): 1})).real == pytest.approx(
                fd, abs=1e-6)

    def test_zeta(self):
        assert ph.radial_cutoff_zeta(0.3) == 0.0
        assert ph.radial_cutoff_zeta(1.5) == 1.0
        assert 0.0 < ph.radial_cutoff_zeta(0.75) < 1.0


class TestLeviCivitaPhase:
    def test_flat_closed_form(self):
        p = CotangentPoint(np.array([0.0, 0.0]), np.array([2.0, 0.0]))
        pe = ph.levi_civita_phase(TORUS, 0.0, np.array([0.1, 0.0]), p, eps=1.0)
        assert pe.value == pytest.approx(0.2 + 0.01j, abs=1e-10)

    @pytest.mark.parametrize("M", [TORUS, S2], ids=["torus", "sphere"])
    def test_on_flow_axioms(self, M):
        rng = np.random.default_rng(7)
        machine = ph.PhaseMachine(M, eps=1.0)
        for _ in range(12):
            p = random_cotangent(M, rng, scale=rng.uniform(0.5, 3.0))
            t = rng.uniform(-1.0, 1.0)
            tr = flow_trajectory(M, p, [t])
            xs, xis, cf = tr.sample(0)
            pe = machine.eval(t, xs, p, chart_x=int(cf))
            nrm = hamiltonian(M, p)
            assert abs(pe.value) <= 1e-10 * nrm
            np.testing.assert_allclose(pe.grad_x, xis, atol=1e-8 * nrm)
            np.testing.assert_allclose(pe.grad_eta, 0.0, atol=1e-8 * (1 + abs(t)))
            assert abs(np.linalg.det(pe.hess_x_eta)) >= 1e-6
            # Im hessian on flow = eps * |eta| * h
            h_fl, _, _ = M.metric_at(xs, int(cf))
            np.testing.assert_allclose(pe.hess_x_x.imag, nrm * h_fl, atol=1e-6 * nrm)
            assert pe.in_neighbourhood

    @pytest.mark.parametrize("M", [TORUS, S2], ids=["torus", "sphere"])
    def test_homogeneity_degree_one(self, M):
        rng = np.random.default_rng(8)
        machine = ph.PhaseMachine(M, eps=1.0)
        for _ in range(6):
            p = random_cotangent(M, rng)
            t = rng.uniform(0.1, 0.8)
            tr = flow_trajectory(M, p, [t])
            xs, _, cf = tr.sample(0)
            x = xs + np.array([0.12, -0.07])
            v1 = machine.eval(t, x, p, chart_x=int(cf)).value
            p2 = CotangentPoint(p.y, 2.0 * p.eta, p.chart)
            v2 = machine.eval(t, x, p2, chart_x=int(cf)).value
            assert v2 == pytest.approx(2.0 * v1, rel=1e-8)

    @pytest.mark.parametrize("M", [TORUS, S2], ids=["torus", "sphere"])
    def test_imaginary_part_nonnegative_everywhere(self, M):
        rng = np.random.default_rng(9)
        machine = ph.PhaseMachine(M, eps=1.0)
        for _ in range(20):
            p = random_cotangent(M, rng, scale=rng.uniform(0.5, 2.0))
            t = rng.uniform(-1.0, 1.0)
            x = np.array([rng.uniform(0.05, math.pi - 0.05),
                          rng.uniform(0.0, 2 * math.pi)])
            pe = machine.eval(t, x, p)
            assert pe.value.imag >= -1e-12 * hamiltonian(M, p)

    def test_eps_validation(self):
        p = CotangentPoint(np.zeros(2), np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            ph.levi_civita_phase(TORUS, 0.0, np.zeros(2), p, eps=-1.0)

    def test_extension_profiles_agree_inside_cone(self):
        rng = np.random.default_rng(10)
        m1 = ph.PhaseMachine(TORUS, eps=1.0, profile="blend")
        m2 = ph.PhaseMachine(TORUS, eps=1.0, profile="capped")
        p = random_cotangent(TORUS, rng)
        t = 0.4
        tr = flow_trajectory(TORUS, p, [t])
        xs, _, _ = tr.sample(0)
        for off in (0.1, 0.4):
            x = xs + np.array([off, off / 2])
            v1 = m1.eval(t, x, p).value
            v2 = m2.eval(t, x, p).value
            assert v1 == pytest.approx(v2, abs=1e-12)


class TestCutoffs:
    def test_chi_small_momentum(self):
        p = CotangentPoint(np.zeros(2), np.array([0.4, 0.0]))
        assert ph.cutoff_chi(TORUS, 0.3, np.array([1.0, 0.0]), p) == 0.0

    def test_chi_on_cone(self):
        p = CotangentPoint(np.zeros(2), np.array([5.0, 0.0]))
        x = np.array([0.25, 0.0])
        assert ph.cutoff_chi(TORUS, 0.25, x, p) == pytest.approx(1.0)

    def test_chi_scale_invariance(self):
        p1 = CotangentPoint(np.zeros(2), np.array([5.0, 0.0]))
        p3 = CotangentPoint(np.zeros(2), np.array([15.0, 0.0]))
        x = np.array([0.7, 0.3])
        assert ph.cutoff_chi(TORUS, 0.3, x, p1) == pytest.approx(
            ph.cutoff_chi(TORUS, 0.3, x, p3), abs=1e-12)


class TestWeight:
    def test_flat_identity_seed(self):
        p = CotangentPoint(np.zeros(2), np.array([1.0, 0.0]))
        we = ph.weight_w(TORUS, 0.0, np.zeros(2), p)
        assert we.value == pytest.approx(1.0, abs=1e-10)
        assert we.branch_phase == 0.0

    def test_sphere_seed_density(self):
        y = np.array([1.1, 0.4])
        p = CotangentPoint(y, np.array([0.6, 0.8]))
        we = ph.weight_w(S2, 0.0, y, p)
        _, _, rho = S2.metric_at(y)
        assert complex(we.value) == pytest.approx(1.0 / rho, rel=1e-8)

    def test_normal_coordinate_phase_weight(self):
        # weight formula evaluated on the real phase <exp_y^{-1} x, eta> -
        # |eta| t: in normal coordinates centred at y this is rho(x)^{-1/2};
        # expressed in chart coordinates that reads
        #   w = rho_chart(y)^{-1/2} * rho_nc(x)^{-1/2},
        # with rho_nc the density in normal coordinates (= sin(r)/r on S^2)
        y = np.array([1.0, 0.8])
        x = np.array([1.25, 1.05])
        eps = 1e-6
        J = np.zeros((2, 2))
        for b in range(2):
            xp, xm = x.copy(), x.copy()
            xp[b] += eps
            xm[b] -= eps
            J[:, b] = (geo.log_map(S2, y, xp) - geo.log_map(S2, y, xm)) / (2 * eps)
        detsq = np.linalg.det(J) ** 2
        _, _, rho_y = S2.metric_at(y)
        _, _, rho_x = S2.metric_at(x)
        w = rho_x ** -0.5 * rho_y ** -0.5 * detsq ** 0.25
        r = geo.riem_distance(S2, y, x)
        # chart-basis normal coordinates carry density rho_nc * rho(y); in
        # orthonormal normal coordinates (rho(y)=1) this is rho(x)^{-1/2}
        rho_nc = math.sin(r) / r
        assert w == pytest.approx(rho_y ** -1.0 * rho_nc ** -0.5, rel=2e-4)

    def test_branch_tracking_flat(self):
        p = CotangentPoint(np.zeros(2), np.array([1.0, 0.0]))
        machine = ph.PhaseMachine(TORUS, eps=1.0)
        tracker = ph.BranchTracker(machine, p, np.linspace(0, 1.2, 9))
        for t in (0.3, 0.8, 1.1):
            # det phi_{x eta} = ... det = (1 - i eps t) on the flat torus,
            # det^2 arg = -2 atan(eps t), continuous from 0
            assert tracker.theta2(t) == pytest.approx(-2 * math.atan(t), abs=2e-3)

    def test_weight_value_with_branch(self):
        p = CotangentPoint(np.zeros(2), np.array([1.0, 0.0]))
        machine = ph.PhaseMachine(TORUS, eps=1.0)
        tracker = ph.BranchTracker(machine, p, np.linspace(0, 1.0, 9))
        t = 0.9
        tr = flow_trajectory(TORUS, p, [t])
        xs, _, _ = tr.sample(0)
        we = machine.weight(t, xs, p, tracker=tracker)
        expect = (complex(1.0, -t)) ** 0.5  # |det|^(1/2) e^{i theta2/4}, flat form
        assert complex(we.value) == pytest.approx(expect, rel=1e-6)


class TestLorentzianPhase:
    def test_ultrastatic_coincides_with_riemannian(self):
        g = geo.LorentzMetric(TORUS)
        machine = ph.PhaseMachine(TORUS, eps=1.0)
        rng = np.random.default_rng(11)
        for _ in range(8):
            p = random_cotangent(TORUS, rng, scale=rng.uniform(0.5, 2.0))
            tau = rng.uniform(-0.8, 0.8)
            x = np.array([rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)])
            pl = ph.lorentzian_phase(g, tau, x, 0.0, p, eps=1.0)
            pr = machine.eval(tau, x, p)
            assert pl.value == pytest.approx(pr.value, abs=1e-10)
            np.testing.assert_allclose(pl.grad_x, pr.grad_x, atol=1e-9)
            np.testing.assert_allclose(pl.hess_x_eta, pr.hess_x_eta, atol=1e-5)

    def test_on_flow_properties(self):
        from wavefio.flow import levi_civita_flow
        beta = TrigField(1.0, [(0.15, (1.0, 0.0), 0.0)])
        g = geo.LorentzMetric(TORUS, beta=beta)
        p = CotangentPoint(np.array([0.3, 0.8]), np.array([0.9, 0.5]))
        s, tau = 0.1, 0.6
        tr = levi_civita_flow(g, s, p, [tau])
        x_fl = tr.x[0]
        pe = ph.lorentzian_phase(g, tau, x_fl, s, p, eps=1.0)
        nrm = tr.eta_norm
        assert abs(pe.value) <= 1e-8 * nrm
        np.testing.assert_allclose(pe.grad_x, tr.Xi[0][1:], atol=1e-6)
        # Im hessian positive definite: eps |eta| h
        Sig = g.sigma_at(tau)
        h_fl, _, _ = Sig.metric_at(x_fl)
        np.testing.assert_allclose(pe.hess_x_x.imag, nrm * h_fl, atol=1e-6)
