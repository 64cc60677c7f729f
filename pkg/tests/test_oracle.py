import math

import numpy as np
import pytest

from wavefio import oracle as orc
from wavefio.fields import ConstantField
from wavefio.geometry import FlatTorus, RoundSphere

TORUS = FlatTorus((2 * math.pi, 2 * math.pi))
S2 = RoundSphere(1.0, 2)
S3 = RoundSphere(1.0, 3)


class TestEigenbasis:
    def test_torus_fourier(self):
        B = orc.eigenbasis(TORUS, None, 30.0)
        assert B.source == "exact_torus"
        # zeta = |k|^2 and v_k = e^{ikx}/(2pi)
        for k, lab in enumerate(B.labels[:20]):
            assert B.eigenvalues[k] == pytest.approx(
                sum(c * c for c in lab), abs=1e-12)
        val = B.evaluate(B.labels.index((3, 4)), np.array([0.1, 0.2]))
        assert complex(val) == pytest.approx(
            np.exp(1j * (0.3 + 0.8)) / (2 * math.pi), abs=1e-12)

    def test_torus_orthonormal(self):
        B = orc.eigenbasis(TORUS, None, 6.0)
        pts, w = orc.standard_grid(TORUS, 24)
        G = B.evaluate_matrix(pts)
        gram = (G.conj() * w[:, None]).T @ G
        np.testing.assert_allclose(gram, np.eye(B.n_modes()), atol=1e-10)

    def test_sphere_spectrum_and_orthonormality(self):
        B = orc.eigenbasis(S2, None, 12.5)
        # l = 0..3: zeta = 0, 2, 6, 12 with mult 1, 3, 5, 7
        expect = sorted([l * (l + 1) for l in range(4) for _ in range(2 * l + 1)])
        np.testing.assert_allclose(B.eigenvalues, expect, atol=1e-12)
        pts, w = orc.standard_grid(S2, 24)
        G = B.evaluate_matrix(pts)
        gram = (G.conj() * w[:, None]).T @ G
        np.testing.assert_allclose(gram, np.eye(B.n_modes()), atol=1e-8)

    def test_sphere_eigen_residual_fd(self):
        # analytic Laplacian stencil applied to tabulated harmonics
        B = orc.eigenbasis(S2, None, 40.0)
        k = B.labels.index((5, 2))
        th, ph = 1.1, 0.7
        hstep = 1e-3

        def Y(t, p):
            return B.evaluate(k, np.array([t, p]))

        d2t = (-Y(th + 2 * hstep, ph) + 16 * Y(th + hstep, ph) - 30 * Y(th, ph)
               + 16 * Y(th - hstep, ph) - Y(th - 2 * hstep, ph)) / (12 * hstep ** 2)
        dt = (-Y(th + 2 * hstep, ph) + 8 * Y(th + hstep, ph)
              - 8 * Y(th - hstep, ph) + Y(th - 2 * hstep, ph)) / (12 * hstep)
        d2p = (-Y(th, ph + 2 * hstep) + 16 * Y(th, ph + hstep) - 30 * Y(th, ph)
               + 16 * Y(th, ph - hstep) - Y(th, ph - 2 * hstep)) / (12 * hstep ** 2)
        lap = d2t + dt / math.tan(th) + d2p / math.sin(th) ** 2
        assert abs(lap + 30.0 * Y(th, ph)) <= 1e-6

    def test_s3_spectrum_closed_form(self):
        B = orc.eigenbasis(S3, None, 16.0)
        mults = {}
        for z in B.eigenvalues:
            mults[round(float(z), 6)] = mults.get(round(float(z), 6), 0) + 1
        # zeta_l = l(l+2) with multiplicity (l+1)^2
        assert mults[0.0] == 1
        assert mults[3.0] == 4
        assert mults[8.0] == 9
        assert mults[15.0] == 16

    def test_s3_discretized_cross_check(self):
        basis_fd = orc.fd_eigensolve(S3, None, 9.0, grid_n=22, k_max=16)
        z = np.sort(basis_fd.eigenvalues)
        assert z[0] == pytest.approx(0.0, abs=1e-6)
        np.testing.assert_allclose(z[1:5], 3.0, rtol=0.03)
        np.testing.assert_allclose(z[5:14], 8.0, rtol=0.05)

    def test_shifted_potential_counts_by_enumeration(self):
        B = orc.eigenbasis(TORUS, ConstantField(-5.0), 40.0)
        # enumeration oracle for the nonpositive sector
        count = 0
        for kx in range(-3, 4):
            for ky in range(-3, 4):
                if kx * kx + ky * ky <= 5:
                    count += 1
        plus, minus, zero = orc.projections(B)
        assert int(minus.sum()) == count == 21

    def test_cutoff_validation(self):
        with pytest.raises(ValueError):
            orc.eigenbasis(TORUS, None, -1.0)

    def test_weyl_law_sanity(self):
        lam = 200.0
        for M, area in ((TORUS, 4 * math.pi ** 2), (S2, 4 * math.pi)):
            B = orc.eigenbasis(M, None, lam)
            weyl = area * lam / (4 * math.pi)
            assert abs(B.n_modes() - weyl) / weyl < 0.15

    def test_torus_fd_cross_check(self):
        Bfd = orc.fd_eigensolve(TORUS, None, 4.5, grid_n=40, k_max=40)
        Bex = orc.eigenbasis(TORUS, None, 4.5)
        n = min(Bfd.n_modes(), Bex.n_modes(), 12)
        np.testing.assert_allclose(Bfd.eigenvalues[:n], Bex.eigenvalues[:n],
                                   atol=0.05)


class TestProjections:
    def test_zero_potential_constants(self):
        B = orc.eigenbasis(TORUS, None, 10.0)
        plus, minus, zero = orc.projections(B)
        assert int(minus.sum()) == 1 and int(zero.sum()) == 1
        assert B.labels[int(np.where(minus)[0][0])] == (0, 0)
        # plus annihilates constants / plus+minus = identity
        assert int(plus.sum()) + int(minus.sum()) == B.n_modes()


class TestOracleU:
    def setup_method(self):
        self.B = orc.eigenbasis(TORUS, None, 40.0)

    def test_identity_at_zero(self):
        c = np.random.default_rng(0).normal(size=self.B.n_modes())
        np.testing.assert_allclose(orc.oracle_U(self.B, 0.0, c), c, atol=1e-15)

    def test_mode_phase(self):
        c = np.zeros(self.B.n_modes())
        idx = self.B.labels.index((3, 4))
        c[idx] = 1.0
        out = orc.oracle_U(self.B, 0.7, c)
        assert out[idx] == pytest.approx(np.exp(-5j * 0.7), abs=1e-14)

    def test_unitary_on_plus_sector(self):
        rng = np.random.default_rng(1)
        c = rng.normal(size=self.B.n_modes()) + 1j * rng.normal(size=self.B.n_modes())
        plus, _, _ = orc.projections(self.B)
        out = orc.oracle_U(self.B, 1.3, c)
        assert np.linalg.norm(out[plus]) == pytest.approx(
            np.linalg.norm(c[plus]), rel=1e-12)

    def test_group_property(self):
        rng = np.random.default_rng(2)
        c = rng.normal(size=self.B.n_modes()) + 1j * rng.normal(size=self.B.n_modes())
        a = orc.oracle_U(self.B, 0.4, orc.oracle_U(self.B, 0.9, c))
        b = orc.oracle_U(self.B, 1.3, c)
        plus, _, _ = orc.projections(self.B)
        np.testing.assert_allclose(a[plus], b[plus], atol=1e-12)


class TestFundamental:
    def setup_method(self):
        self.B = orc.eigenbasis(TORUS, None, 40.0)

    def test_cosine_mode(self):
        c0 = np.zeros(self.B.n_modes())
        idx = self.B.labels.index((1, 0))
        c0[idx] = 1.0
        out = orc.oracle_fundamental(self.B, 0.8, 0.2, c0, np.zeros_like(c0))
        assert out[idx] == pytest.approx(math.cos(0.6), abs=1e-14)

    def test_kernel_mode_linear_growth(self):
        f1 = np.zeros(self.B.n_modes())
        idx0 = self.B.labels.index((0, 0))
        f1[idx0] = 2.5
        out = orc.oracle_fundamental(self.B, 1.4, 0.4, np.zeros_like(f1), f1)
        assert out[idx0] == pytest.approx(2.5 * 1.0, abs=1e-14)

    def test_initial_data_reproduced(self):
        rng = np.random.default_rng(3)
        f0 = rng.normal(size=self.B.n_modes())
        f1 = rng.normal(size=self.B.n_modes())
        out0 = orc.oracle_fundamental(self.B, 0.3, 0.3, f0, f1)
        np.testing.assert_allclose(out0, f0, atol=1e-14)
        eps = 1e-6
        dp = orc.oracle_fundamental(self.B, 0.3 + eps, 0.3, f0, f1)
        dm = orc.oracle_fundamental(self.B, 0.3 - eps, 0.3, f0, f1)
        np.testing.assert_allclose((dp - dm) / (2 * eps), f1, atol=1e-7)

    def test_energy_conservation(self):
        rng = np.random.default_rng(4)
        f0 = rng.normal(size=self.B.n_modes())
        f1 = rng.normal(size=self.B.n_modes())
        z = self.B.eigenvalues

        def energy(t):
            eps = 1e-5
            cp = orc.oracle_fundamental(self.B, t + eps, 0.0, f0, f1)
            cm = orc.oracle_fundamental(self.B, t - eps, 0.0, f0, f1)
            dc = (cp - cm) / (2 * eps)
            c = orc.oracle_fundamental(self.B, t, 0.0, f0, f1)
            return float(np.sum(np.abs(dc) ** 2) + np.sum(z * np.abs(c) ** 2))

        es = [energy(t) for t in (0.1, 0.5, 1.2)]
        for e in es[1:]:
            assert e == pytest.approx(es[0], rel=1e-7)


class TestOmega2:
    def test_equal_time_nonnegative(self):
        B = orc.eigenbasis(TORUS, None, 30.0)
        rng = np.random.default_rng(5)
        c = rng.normal(size=B.n_modes())
        plus, _, _ = orc.projections(B)
        c[~plus] = 0.0
        # real zero-mean band-limited data: hermitian coefficient symmetry
        for i, lab in enumerate(B.labels):
            j = B.labels.index((-lab[0], -lab[1]))
            c[j] = c[i]
        val = orc.oracle_omega2(B, 0.0, 0.0, c, c)
        assert abs(val.imag) < 1e-12
        assert val.real >= 0

    def test_s3_first_level_value(self):
        B = orc.eigenbasis(S3, None, 10.0)
        c = np.zeros(B.n_modes())
        idx = next(i for i, lab in enumerate(B.labels) if lab[0] == 1)
        c[idx] = 1.0
        val = orc.oracle_omega2(B, 0.3, 0.3, c, c)
        assert val == pytest.approx(1.0 / (2 * math.sqrt(3.0)), abs=1e-12)

    def test_antisymmetric_part_is_commutator(self):
        B = orc.eigenbasis(TORUS, None, 20.0)
        rng = np.random.default_rng(6)
        n = B.n_modes()
        f = rng.normal(size=n)
        g = rng.normal(size=n)
        tau, s = 0.9, 0.2
        lhs = (orc.oracle_omega2(B, tau, s, f, g)
               - orc.oracle_omega2(s=tau, tau=s, B=B, f=g, g=f))
        z = B.eigenvalues
        plus, _, _ = orc.projections(B)
        rhs = -1j * np.sum(np.sin(np.sqrt(z[plus]) * (tau - s)) / np.sqrt(z[plus])
                           * f[plus] * g[plus])
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_kernel_matches_basis_sum_s2(self):
        B = orc.eigenbasis(S2, None, 20.5)
        x = np.array([1.2, 0.3])
        y = np.array([0.9, 5.8])
        # kernel of Omega: sum_k w_k v_k(x) conj(v_k(y))
        vx = np.array([B.evaluate(k, x) for k in range(B.n_modes())])
        vy = np.array([B.evaluate(k, y) for k in range(B.n_modes())])
        z = B.eigenvalues
        plus, _, _ = orc.projections(B)
        tau, s = 0.4, 0.1
        ref = np.sum(np.exp(-1j * np.sqrt(z[plus]) * (tau - s)) / (2 * np.sqrt(z[plus]))
                     * vx[plus] * np.conj(vy[plus]))
        got = orc.omega2_kernel(S2, tau, s, x, y, cutoff=20.5)
        assert complex(got) == pytest.approx(complex(ref), abs=1e-10)

    def test_kernel_matches_basis_sum_s3_zonal(self):
        x = np.array([1.0, 1.2, 0.5])
        y = np.array([1.3, 1.0, 0.8])
        got = orc.omega2_kernel(S3, 0.0, 0.0, x, y, cutoff=35.0, damping=0.3)
        # independent check: addition theorem via Chebyshev-U recurrence
        ux, uy = S3.embed(x), S3.embed(y)
        cth = float(ux @ uy)
        U = [1.0, 2 * cth]
        for l in range(2, 6):
            U.append(2 * cth * U[-1] - U[-2])
        ref = 0.0
        for l in range(1, 6):
            zeta = l * (l + 2)
            zon = (l + 1) * U[l] / (2 * math.pi ** 2)
            ref += math.exp(-0.3 * math.sqrt(zeta)) / (2 * math.sqrt(zeta)) * zon
        assert complex(got).real == pytest.approx(ref, rel=1e-10)
        assert abs(complex(got).imag) < 1e-14
