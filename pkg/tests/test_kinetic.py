"""Collision kernel identities, homogeneous solver cross-checks, jump process laws."""

import numpy as np
import pytest

from phonchain.kinetic import (
    CollisionKernel1D,
    CollisionKernelDD,
    DDCouplingModel,
    NonPositiveInitial,
    apply_collision,
    density_k_law,
    sample_from_density,
    simulate_phonon,
    solve_homogeneous,
    solve_inhomogeneous_mc,
    uniform_k_law,
    _sample_kprime_1d,
)
from phonchain.lattice import nearest_neighbor_coupling
from phonchain.spectral import SpectralFunction

KK = CollisionKernel1D


def fine_grid(n):
    return np.arange(n) / n


class TestKernel1D:
    def test_row_integral_equals_total_rate(self):
        k = fine_grid(256)
        row = KK.R(k[:, None], k[None, :]).mean(axis=1)
        assert np.abs(row - KK.phi(k)).max() < 1e-12

    def test_phi_equals_minus_beta_hat(self):
        k = fine_grid(256)
        assert np.abs(KK.phi(k) + KK.beta_hat(k)).max() < 1e-12

    def test_phi_closed_form(self):
        k = fine_grid(256)
        u = np.sin(np.pi * k) ** 2
        v = np.sin(2.0 * np.pi * k) ** 2
        assert np.abs(KK.phi(k) - (4.0 / 3.0) * (u + v / 2.0)).max() < 1e-12

    def test_zero_mode_does_not_scatter(self):
        k = fine_grid(256)
        assert np.abs(KK.R(0.0, k)).max() == 0.0
        assert KK.phi(0.0) == 0.0

    def test_symmetry_and_evenness(self):
        k = fine_grid(64)
        M = KK.R(k[:, None], k[None, :])
        assert np.abs(M - M.T).max() < 1e-13
        Me = KK.R((-k[:, None]) % 1.0, (-k[None, :]) % 1.0)
        assert np.abs(M - Me).max() < 1e-13

    def test_nonnegative_with_known_extremes(self):
        k = np.linspace(0, 1, 801)[:-1]
        M = KK.R(k[:, None], k[None, :])
        assert M.min() >= 0.0
        assert M.max() <= KK.R_SUP + 1e-12
        assert KK.R(0.25, 0.5) == pytest.approx(8.0 / 3.0, abs=1e-14)
        assert KK.phi(k).max() <= KK.PHI_MAX + 1e-12
        kstar = np.arcsin(np.sqrt(3.0) / 2.0) / np.pi
        assert KK.phi(kstar) == pytest.approx(1.5, abs=1e-12)

    def test_envelope_dominates_every_section(self):
        k = np.linspace(0, 1, 501)[:-1]
        kp = np.linspace(0, 1, 2001)[:-1]
        sup = KK.R(k[:, None], kp[None, :]).max(axis=1)
        assert np.all(KK.envelope(k) >= sup)


class TestApplyCollision:
    def test_matches_dense_quadrature(self):
        # rank-2 gain on a 64 grid against brute-force 4096-point quadrature
        N = 64
        k = fine_grid(N)
        f = np.exp(np.cos(2.0 * np.pi * k)) + 0.3 * np.sin(4.0 * np.pi * k)
        M = 4096
        kq = (np.arange(M) + 0.5) / M
        fq = np.exp(np.cos(2.0 * np.pi * kq)) + 0.3 * np.sin(4.0 * np.pi * kq)
        oracle = KK.R(k[:, None], kq[None, :]) @ fq / M - KK.phi(k) * f
        assert np.abs(apply_collision(f) - oracle).max() < 1e-10

    def test_spectral_function_round_trip(self):
        N = 32
        sf = SpectralFunction(fine_grid(N), 1.0 + 0.5 * np.cos(2.0 * np.pi * fine_grid(N)))
        out = apply_collision(sf)
        assert isinstance(out, SpectralFunction)
        assert np.allclose(out.values, apply_collision(np.asarray(sf.values, dtype=float)))

    def test_conserves_grid_mean(self):
        rng = np.random.default_rng(0)
        f = rng.uniform(0.1, 2.0, 128)
        assert abs(np.mean(apply_collision(f))) < 1e-14 * np.abs(f).max()

    def test_annihilates_constants(self):
        assert np.abs(apply_collision(np.full(64, 2.7))).max() < 1e-13

    def test_odd_part_decays_pointwise(self):
        k = fine_grid(128)
        f = np.sin(2.0 * np.pi * k) + 0.5 * np.sin(6.0 * np.pi * k)
        assert np.abs(apply_collision(f) + KK.phi(k) * f).max() < 1e-13

    def test_parity_sectors_decouple(self):
        # even input stays even, odd stays odd, under the grid reflection k -> -k
        N = 128
        k = fine_grid(N)
        mirror = (-np.arange(N)) % N
        f_even = np.cos(2.0 * np.pi * k) + 0.2 * np.cos(8.0 * np.pi * k)
        f_odd = np.sin(4.0 * np.pi * k)
        ge = apply_collision(f_even)
        go = apply_collision(f_odd)
        assert np.abs(ge - ge[mirror]).max() < 1e-8
        assert np.abs(go + go[mirror]).max() < 1e-8


class TestHomogeneousSolvers:
    def setup_method(self):
        N = 128
        k = fine_grid(N)
        self.W0 = 1.0 + 0.8 * np.cos(2.0 * np.pi * k) + 0.3 * np.sin(4.0 * np.pi * k) ** 2

    def test_routes_agree_in_l1(self):
        ts = [0.5, 1.0, 2.0]
        a = solve_homogeneous(self.W0, 1.0, 2.0, method="lines", dt=1e-3, sample_times=ts)
        b = solve_homogeneous(self.W0, 1.0, 2.0, method="volterra", dt=2.5e-4, sample_times=ts)
        for i in range(len(ts)):
            assert np.mean(np.abs(a.W[i] - b.W[i])) < 1e-6

    def test_mass_conserved_and_positive(self):
        # the lines route conserves the grid mean to roundoff (the stage means
        # vanish exactly); the volterra route only to its discretization error
        for method, tol in (("lines", 1e-12), ("volterra", 1e-5)):
            sol = solve_homogeneous(self.W0, 2.0, 3.0, method=method,
                                    sample_times=[1.0, 3.0])
            drift = np.abs(sol.W.mean(axis=1) - self.W0.mean()).max()
            assert drift < tol
            assert sol.W.min() >= 0.0

    def test_uniform_data_is_stationary(self):
        # exactly stationary under lines (the rhs vanishes identically); the
        # volterra trapezoid holds it only to O(dt^2)
        W0 = np.full(64, 1.3)
        for method, tol in (("lines", 1e-12), ("volterra", 1e-5)):
            sol = solve_homogeneous(W0, 1.0, 5.0, method=method, sample_times=[2.0, 5.0])
            assert np.abs(sol.W - 1.3).max() < tol

    def test_loss_dominates_at_short_times(self):
        # one RK4 step reproduces exp(-gamma phi dt) decay of an odd profile
        N = 64
        k = fine_grid(N)
        f = np.sin(2.0 * np.pi * k)
        W0 = 2.0 + f
        dt = 1e-3
        sol = solve_homogeneous(W0, 1.0, dt, method="lines", dt=dt)
        expected = 2.0 + f * np.exp(-KK.phi(k) * dt)
        assert np.abs(sol.W[-1] - expected).max() < 1e-10

    def test_sample_time_zero_returns_initial(self):
        sol = solve_homogeneous(self.W0, 1.0, 1.0, sample_times=[0.0, 1.0])
        assert np.array_equal(sol.W[0], self.W0)

    def test_validation(self):
        with pytest.raises(NonPositiveInitial):
            solve_homogeneous(self.W0 - 2.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            solve_homogeneous(self.W0, 0.0, 1.0)
        with pytest.raises(ValueError):
            solve_homogeneous(self.W0, 1.0, -1.0)
        with pytest.raises(ValueError):
            solve_homogeneous(self.W0, 1.0, 1.0, method="spectral")
        with pytest.raises(ValueError):
            solve_homogeneous(self.W0, 1.0, 1.0, sample_times=[0.8, 0.2])


class TestJumpProcess:
    def test_jump_law_matches_kernel_density(self):
        rng = np.random.default_rng(7)
        k0 = 0.17
        n = 100000
        draws = _sample_kprime_1d(np.full(n, k0), rng)
        nb = 32
        cnt, _ = np.histogram(draws, bins=nb, range=(0.0, 1.0))
        M = 20000
        kq = (np.arange(M) + 0.5) / M
        dens = KK.R(k0, kq) / KK.phi(k0)
        pb = np.add.reduceat(dens, np.arange(0, M, M // nb)) / M
        z = (cnt / n - pb) / np.sqrt(pb * (1.0 - pb) / n)
        assert np.abs(z).max() < 4.0

    def test_dwell_times_are_exponential(self):
        model = nearest_neighbor_coupling(1.0, 1.0)
        gamma = 2.0
        ens = simulate_phonon(5000, lambda r, m: np.full(m, 0.25), model, gamma, 5.0,
                              rng=np.random.default_rng(3), record_events=True)
        first = {}
        for (te, j, _, _, _) in ens.events:
            first.setdefault(j, te)
        ft = np.array(list(first.values()))
        lam = gamma * KK.phi(0.25)
        z = (ft.mean() - 1.0 / lam) * lam * np.sqrt(len(ft))
        assert len(ft) == 5000
        assert abs(z) < 3.0

    def test_marginal_matches_lines_solver(self):
        N = 128
        W0 = 1.0 + 0.8 * np.cos(2.0 * np.pi * fine_grid(N))
        model = nearest_neighbor_coupling(1.0, 1.0)
        n = 100000
        ens = simulate_phonon(n, density_k_law(W0), model, 1.0, 1.0,
                              rng=np.random.default_rng(11))
        Wt = solve_homogeneous(W0, 1.0, 1.0, method="lines").W[-1]
        nb = 16
        cnt, _ = np.histogram(ens.K[-1], bins=nb, range=(0.0, 1.0))
        pb = np.add.reduceat(Wt, np.arange(0, N, N // nb)) / Wt.sum()
        z = (cnt / n - pb) / np.sqrt(pb * (1.0 - pb) / n)
        assert np.abs(z).max() < 4.0

    def test_detailed_balance_flux(self):
        # from the uniform law, binned transition counts are symmetric
        model = nearest_neighbor_coupling(1.0, 1.0)
        ens = simulate_phonon(20000, uniform_k_law, model, 1.0, 2.0,
                              rng=np.random.default_rng(19),
                              sample_times=[0.0], record_events=True)
        prev = dict(enumerate(ens.K[0]))
        nb = 4
        counts = np.zeros((nb, nb))
        for (_, j, _, k_new, _) in ens.events:
            a = min(int(prev[j] * nb), nb - 1)
            b = min(int(k_new * nb), nb - 1)
            counts[a, b] += 1
            prev[j] = k_new
        for a in range(nb):
            for b in range(a + 1, nb):
                tot = counts[a, b] + counts[b, a]
                if tot > 0:
                    z = (counts[a, b] - counts[b, a]) / np.sqrt(tot)
                    assert abs(z) < 3.5

    def test_ballistic_limit(self):
        model = nearest_neighbor_coupling(1.0, 1.0)
        ens = simulate_phonon(200, uniform_k_law, model, 0.0, 3.0,
                              rng=np.random.default_rng(1), sample_times=[0.0, 1.5])
        V = model.omega_prime(ens.K[0]) / (2.0 * np.pi)
        assert np.array_equal(ens.K[-1], ens.K[0])
        assert np.abs(ens.X[1] - 1.5 * V).max() == 0.0
        assert np.abs(ens.X[-1] - 3.0 * V).max() == 0.0

    def test_zero_horizon_returns_initial(self):
        model = nearest_neighbor_coupling(1.0, 1.0)
        ens = simulate_phonon(50, uniform_k_law, model, 1.0, 0.0,
                              rng=np.random.default_rng(2))
        assert ens.times[-1] == 0.0
        assert np.all(ens.X[-1] == 0.0)

    def test_walker_view_and_shapes(self):
        model = nearest_neighbor_coupling(1.0, 1.0)
        ens = simulate_phonon(10, uniform_k_law, model, 1.0, 1.0,
                              rng=np.random.default_rng(4), sample_times=[0.5])
        assert ens.X.shape == (2, 10)
        assert ens.n_walkers == 10
        w = ens.walker(3)
        assert w.t == 1.0
        assert w.K == ens.K[-1, 3]

    def test_inhomogeneous_transport_shifts_the_law(self):
        model = nearest_neighbor_coupling(0.0, 1.0)

        def mu0(rng, n):
            return rng.normal(0.0, 0.1, n), rng.uniform(0.05, 0.45, n)

        X, K = solve_inhomogeneous_mc(mu0, model, 0.0, 2.0, 5000,
                                      rng=np.random.default_rng(8))
        # unpinned band: positive velocity on (0, 1/2), so the cloud moves right
        assert X.mean() > 0.3
        assert np.all(K < 0.5)


class TestDensitySampler:
    def test_inverse_cdf_is_exact(self):
        vals = np.array([0.2, 1.4, 0.9, 2.0, 0.1, 0.6, 1.1, 0.8])
        n = 200000
        draws = sample_from_density(vals, np.random.default_rng(5), n)
        Nv = len(vals)
        xf = np.linspace(0.0, 1.0, 20001)
        vv = np.interp((xf * Nv) % Nv, np.arange(Nv + 1), np.append(vals, vals[0]))
        cdf = np.concatenate([[0.0], np.cumsum((vv[1:] + vv[:-1]) / 2.0 * (xf[1] - xf[0]))])
        cdf /= cdf[-1]
        emp = np.searchsorted(np.sort(draws), xf, side="right") / n
        assert np.abs(emp - cdf).max() < 2.5 / np.sqrt(n)

    def test_rejects_bad_densities(self):
        with pytest.raises(NonPositiveInitial):
            sample_from_density(np.array([1.0, -0.1, 1.0]), np.random.default_rng(0), 10)
        with pytest.raises(NonPositiveInitial):
            sample_from_density(np.zeros(4), np.random.default_rng(0), 10)


class TestKernelDD:
    def test_reference_values(self):
        kdd = CollisionKernelDD(2)
        half = np.array([0.5, 0.5])
        assert kdd.R(half, half) == pytest.approx(32.0, abs=1e-13)
        assert kdd.phi(half) == pytest.approx(16.0, abs=1e-13)

    def test_row_integral_equals_total_rate(self):
        kdd = CollisionKernelDD(2)
        g = fine_grid(32)
        KA, KB = np.meshgrid(g, g, indexing="ij")
        kp = np.stack([KA.ravel(), KB.ravel()], axis=-1)
        rng = np.random.default_rng(6)
        for _ in range(5):
            k = rng.uniform(0.0, 1.0, 2)
            row = kdd.R(k, kp).mean()
            assert row == pytest.approx(kdd.phi(k), abs=1e-12)

    def test_channel_rates_sum_to_phi(self):
        kdd = CollisionKernelDD(3)
        g = fine_grid(16)
        KA, KB, KC = np.meshgrid(g, g, g, indexing="ij")
        kp = np.stack([KA.ravel(), KB.ravel(), KC.ravel()], axis=-1)
        k = np.array([0.3, 0.1, 0.45])
        total = sum(kdd.nu(k, 0, j, kp).mean() for j in range(3))
        assert total == pytest.approx(kdd.phi(k), abs=1e-12)
        assert np.all(kdd.nu(k, 1, 1, kp) == 0.0)

    def test_requires_d_at_least_two(self):
        with pytest.raises(ValueError):
            CollisionKernelDD(1)

    def test_polarization_always_changes(self):
        mdd = DDCouplingModel(1.0, 1.0, 2)
        ens = simulate_phonon(2000, lambda r, m: uniform_k_law(r, m, 2), mdd, 1.0, 1.0,
                              d=2, rng=np.random.default_rng(9),
                              sample_times=[0.0], record_events=True)
        prev = dict(enumerate(ens.pol[0]))
        for (_, j, _, _, p) in ens.events:
            assert p != prev[j]
            prev[j] = p
        assert len(ens.events) > 1000

    def test_dd_dwell_rate(self):
        mdd = DDCouplingModel(1.0, 1.0, 2)
        k0 = np.array([0.5, 0.5])
        ens = simulate_phonon(4000, lambda r, m: np.tile(k0, (m, 1)), mdd, 1.0, 1.0,
                              d=2, rng=np.random.default_rng(13), record_events=True)
        first = {}
        for (te, j, _, _, _) in ens.events:
            first.setdefault(j, te)
        ft = np.array(list(first.values()))
        lam = 16.0
        z = (ft.mean() - 1.0 / lam) * lam * np.sqrt(len(ft))
        assert abs(z) < 3.5

    def test_dd_velocity_matches_difference_quotient(self):
        mdd = DDCouplingModel(0.7, 1.3, 3)
        k = np.array([0.12, 0.31, 0.44])
        v = mdd.velocity(k)
        h = 1e-6
        for ax in range(3):
            e = np.zeros(3)
            e[ax] = h
            fd = (mdd.omega(k + e) - mdd.omega(k - e)) / (2.0 * h)
            assert v[ax] == pytest.approx(fd / (2.0 * np.pi), rel=1e-6)
