import numpy as np
import pytest

from riscest.channel import ChannelSampler, ChannelStatistics, FadingParams, build_statistics
from riscest.errors import DomainError
from riscest.moments import (
    build_moments,
    cov_ss,
    cov_ss_block_ideal,
    cov_uu,
    group_aggregation_matrix,
    group_expansion_matrix,
    mean_s,
    observation_moments,
)
from riscest.scenario import desk_scenario
from riscest.training import contiguous_groups, make_training_config

from test_channel import default_fading, small_geometry


def scalar_stats(kappa_a=0.0, kappa_g=0.0, rho_b=1.0):
    """M = 1, N = 1 statistics with unit gains and trivial correlation."""
    fading = FadingParams(
        kappa_a=kappa_a, kappa_g=kappa_g, alpha_a=2.0, alpha_g=2.0, alpha_b=2.0,
        rho_0=1e-3, eta=np.array([0.5, 0.5]),
    )
    return ChannelStatistics(
        rho_b=np.array([rho_b]), rho_g=np.array([1.0]), rho_a=1.0,
        g_bar=np.array([[1.0 + 0j]]), a_bar=np.array([[1.0 + 0j]]),
        R=np.array([[[1.0 + 0j]]]), R0=np.array([[1.0 + 0j]]),
        fading=fading,
    )


class TestMeanS:
    def test_zero_without_ris_bs_los(self):
        stats = build_statistics(small_geometry(), default_fading())
        stats.fading.kappa_a = 0.0
        np.testing.assert_array_equal(mean_s(stats, 0), 0.0)

    def test_zero_without_ue_ris_los(self):
        stats = build_statistics(small_geometry(), default_fading())
        stats.fading.kappa_g = 0.0
        np.testing.assert_array_equal(mean_s(stats, 1), 0.0)

    def test_matches_los_product_formula(self):
        stats = build_statistics(small_geometry(), default_fading())
        ka, kg = stats.fading.kappa_a, stats.fading.kappa_g
        coef = np.sqrt(ka * kg / ((1 + ka) * (1 + kg)))
        mu = mean_s(stats, 0)
        m, n = stats.m_antennas, stats.n_elements
        np.testing.assert_array_equal(mu[:m], 0.0)
        for ant in range(m):
            np.testing.assert_allclose(
                mu[m + ant * n : m + (ant + 1) * n],
                coef * stats.a_bar[ant] * stats.g_bar[0],
                rtol=1e-14,
            )

    def test_matches_sample_mean_zscore(self):
        # sharper oracle than the max-entry rule: every entry within 5 standard errors
        stats = desk_scenario().statistics()
        sampler = ChannelSampler(stats)
        n_draws = 40_000
        s = sampler.sample_cascade(0, n_draws, np.random.default_rng(13))
        mu_hat = s.mean(axis=0)
        mu = mean_s(stats, 0)
        se = np.sqrt(np.diagonal(cov_ss(stats, 0)).real / n_draws)
        dev = np.abs(mu_hat - mu)
        mask = se > 0
        assert np.all(dev[mask] < 5 * se[mask])
        np.testing.assert_array_equal(dev[~mask], 0.0)


class TestCovSs:
    def test_scalar_rayleigh_case(self):
        # hand evaluation: direct block 1; cascade block R0*(Gbar+Rg) = 1*(0+1)
        c = cov_ss(scalar_stats(), 0)
        np.testing.assert_allclose(c, np.diag([1.0, 1.0]), atol=1e-15)

    def test_deterministic_limit(self):
        stats = build_statistics(small_geometry(), default_fading())
        stats.fading.kappa_a = 1e12
        stats.fading.kappa_g = 1e12
        c = cov_ss(stats, 0)
        m = stats.m_antennas
        assert np.abs(c[m:, m:]).max() < 1e-10

    def test_blocked_direct_block_is_zero(self):
        stats = desk_scenario().statistics()
        c = cov_ss(stats, 0)
        m = stats.m_antennas
        np.testing.assert_array_equal(c[:m, :], 0.0)
        np.testing.assert_array_equal(c[:, :m], 0.0)

    def test_unblocked_direct_block_is_identity(self):
        stats = build_statistics(small_geometry(), default_fading(blocked=False))
        c = cov_ss(stats, 0)
        m = stats.m_antennas
        np.testing.assert_array_equal(c[:m, :m], np.eye(m))

    def test_hermitian_psd_fuzz(self):
        rng = np.random.default_rng(14)
        for _ in range(25):
            geo = small_geometry(
                n_x=int(rng.integers(1, 4)), n_y=int(rng.integers(1, 4)),
                m=int(rng.integers(1, 3)), k=1,
            )
            fading = FadingParams(
                kappa_a=float(rng.uniform(0, 5)), kappa_g=float(rng.uniform(0, 5)),
                alpha_a=2.5, alpha_g=2.2, alpha_b=3.0, rho_0=1e-3,
                eta=rng.uniform(0, 1, size=2), direct_blocked=bool(rng.integers(0, 2)),
            )
            stats = build_statistics(geo, fading)
            c = cov_ss(stats, 0)
            assert np.abs(c - c.conj().T).max() < 1e-12
            assert np.linalg.eigvalsh(0.5 * (c + c.conj().T)).min() > -1e-8

    def test_matches_sample_covariance(self):
        stats = desk_scenario().statistics()
        sampler = ChannelSampler(stats)
        rng = np.random.default_rng(15)
        n_draws, chunk = 60_000, 20_000
        dim = stats.m_antennas * (stats.n_elements + 1)
        acc_mu = np.zeros(dim, complex)
        acc_cov = np.zeros((dim, dim), complex)
        for _ in range(n_draws // chunk):
            s = sampler.sample_cascade(1, chunk, rng)
            acc_mu += s.sum(axis=0)
            acc_cov += s.T @ s.conj()
        mu_hat = acc_mu / n_draws
        cov_hat = acc_cov / n_draws - np.outer(mu_hat, mu_hat.conj())
        c = cov_ss(stats, 1)
        assert np.abs(cov_hat - c).max() < 0.05 * np.abs(c).max()


class TestCovUu:
    def test_identity_grouping_is_identical(self):
        stats = desk_scenario().statistics()
        c = cov_ss(stats, 0)
        np.testing.assert_array_equal(cov_uu(c, stats.m_antennas, 16), c)

    def test_two_to_one_aggregation(self):
        # M = 1, N = 2 with hand-filled cascade block
        c = np.zeros((3, 3), dtype=complex)
        c[0, 0] = 1.0
        c[1:, 1:] = np.array([[2.0, 0.5 + 0.25j], [0.5 - 0.25j, 3.0]])
        agg = cov_uu(c, 1, 1)
        assert agg.shape == (2, 2)
        assert agg[0, 0] == 1.0
        assert agg[1, 1] == pytest.approx(2.0 + 3.0 + 2 * 0.5, rel=1e-15)

    def test_rejects_non_partition(self):
        c = np.eye(3, dtype=complex)
        with pytest.raises(DomainError):
            cov_uu(c, 1, [np.array([0]), np.array([0, 1])])

    def test_quadratic_form_consistency(self):
        stats = desk_scenario().statistics()
        c = cov_ss(stats, 0)
        groups = contiguous_groups(16, 4)
        agg = cov_uu(c, stats.m_antennas, groups)
        p = group_aggregation_matrix(stats.m_antennas, groups, 16)
        rng = np.random.default_rng(16)
        for _ in range(30):
            v = rng.standard_normal(agg.shape[0]) + 1j * rng.standard_normal(agg.shape[0])
            lhs = np.vdot(v, agg @ v).real
            w = p.T @ v
            rhs = np.vdot(w, c @ w).real
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_matches_sample_aggregates(self):
        stats = desk_scenario().statistics()
        sampler = ChannelSampler(stats)
        s = sampler.sample_cascade(0, 40_000, np.random.default_rng(17))
        groups = contiguous_groups(16, 4)
        p = group_aggregation_matrix(stats.m_antennas, groups, 16)
        u = (s - mean_s(stats, 0)[None, :]) @ p.T
        cov_hat = u.T @ u.conj() / s.shape[0]
        agg = cov_uu(cov_ss(stats, 0), stats.m_antennas, groups)
        assert np.abs(cov_hat - agg).max() < 0.05 * np.abs(agg).max()

    def test_expansion_matrix_left_inverse_on_groups(self):
        groups = contiguous_groups(8, 2)
        p = group_aggregation_matrix(2, groups, 8)
        e = group_expansion_matrix(2, groups, 8)
        np.testing.assert_allclose(p @ e, np.eye(p.shape[0]), atol=1e-14)


class TestObservationMoments:
    def test_zero_power(self):
        stats = desk_scenario().statistics()
        tc = make_training_config(16, 2, n_groups=4, rho=0.0, sigma_w2=2.0)
        m = build_moments(stats, 0, tc)
        np.testing.assert_array_equal(m.mean_y, 0.0)
        np.testing.assert_allclose(m.cov_yy, 2 * 2.0 * np.eye(m.cov_yy.shape[0]), atol=1e-15)

    def test_scalar_noiseless(self):
        stats = scalar_stats()
        z = np.array([[2.0 + 0j, 3.0 - 1.0j]])
        m = observation_moments(
            stats, 0, z_full=z, z_grouped=z, rho_k=0.7, sigma_w2=0.0,
            n_users=1, groups=[np.array([0])],
        )
        c = cov_ss(stats, 0)
        expected = 0.7 * (z @ c @ z.conj().T)
        np.testing.assert_allclose(m.cov_yy, expected, rtol=1e-14)

    def test_cov_yy_hermitian_psd_fuzz(self):
        rng = np.random.default_rng(18)
        for _ in range(1000):
            n_x = int(rng.integers(1, 3))
            n_y = int(rng.integers(1, 3))
            geo = small_geometry(n_x=n_x, n_y=n_y, m=int(rng.integers(1, 3)), k=1)
            n = geo.n_elements
            fading = FadingParams(
                kappa_a=float(rng.uniform(0, 3)), kappa_g=float(rng.uniform(0, 3)),
                alpha_a=2.5, alpha_g=2.2, alpha_b=3.0, rho_0=1e-3,
                eta=rng.uniform(0, 1, size=2), direct_blocked=bool(rng.integers(0, 2)),
            )
            stats = build_statistics(geo, fading)
            divisors = [g for g in range(1, n + 1) if n % g == 0]
            n_groups = int(rng.choice(divisors))
            tc = make_training_config(
                n, 1, n_groups=n_groups, rho=float(rng.uniform(0, 2)),
                sigma_w2=float(rng.uniform(1e-6, 1.0)),
            )
            m = build_moments(stats, 0, tc)
            assert np.abs(m.cov_yy - m.cov_yy.conj().T).max() < 1e-10
            assert np.linalg.eigvalsh(0.5 * (m.cov_yy + m.cov_yy.conj().T)).min() > -1e-8

    def test_grouped_observation_covariance_identity(self):
        # group-constant patterns make Z C_ss Z^H and Z_G C_uu Z_G^H agree
        stats = desk_scenario().statistics()
        tc = make_training_config(16, 2, n_groups=4, rho=0.4, sigma_w2=1e-9)
        m = build_moments(stats, 0, tc)
        lhs = m.Z @ m.cov_ss @ m.Z.conj().T
        rhs = m.Z_G @ m.cov_uu @ m.Z_G.conj().T
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-20)

    def test_block_ideal_prior_structure(self):
        stats = desk_scenario().statistics()
        groups = contiguous_groups(16, 4)
        c = cov_ss_block_ideal(stats, 0, groups)
        m = stats.m_antennas
        cascade = c[m:, m:]
        # cross-group entries vanish for the same antenna pair
        blk = cascade[:16, :16]
        assert abs(blk[0, 15]) < 1e-15
        assert abs(blk[0, 1]) > 0.1
