import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpasim.channel import ChannelMatrix, FadingConfig, draw_channel
from dpasim.demapper import (
    GeneralDpaStats,
    LinearModelParams,
    compute_dpa_stats,
    compute_h_eff,
    compute_lambda_eps,
    compute_lambda_xx,
    conditional_means,
    estimate_stats_monte_carlo,
    hard_detect,
    linear_model,
    llr_awgn_baseline,
    llr_dpa_lm,
    llr_general_dpa,
    received_noiseless,
    verify_zero_mean_error,
)
from dpasim.modem import bit_partitions, build_gray_map, make_psk_alphabet
from dpasim.precoder import PrecoderSpec, build_lookup_table

QPSK = make_psk_alphabet(4)
PSK8 = make_psk_alphabet(8)
PARTS = bit_partitions(QPSK, build_gray_map(QPSK))


@pytest.fixture(scope="module")
def system():
    H = draw_channel(FadingConfig(K=3, B=6, seed=7))
    L = build_lookup_table(H, PrecoderSpec("mmse_exhaustive"), QPSK, QPSK)
    return H, L


@pytest.fixture(scope="module")
def identity():
    return build_lookup_table(ChannelMatrix([[1.0]]), PrecoderSpec(), QPSK, QPSK)


def naive_quadratic(z, mean, cov):
    d = np.array([z.real - mean[0], z.imag - mean[1]])
    (a, b), (c, e) = cov
    inv = np.array([[e, -b], [-c, a]]) / (a * e - b * c)
    return d @ inv @ d


def naive_llr(z, means, covs, parts, extra=None):
    """Loop over symbols with explicit 2x2 inversion."""
    extra = np.zeros(len(means)) if extra is None else extra
    out = []
    for i in range(len(parts)):
        best = {0: np.inf, 1: np.inf}
        for bit, members in ((0, parts.zeros(i)), (1, parts.ones(i))):
            for s in members:
                best[bit] = min(best[bit], naive_quadratic(z, means[s], covs[s]) + extra[s])
        out.append(0.5 * best[0] - 0.5 * best[1])
    return np.array(out)


class TestGeneralStats:
    def test_single_user_is_noise_only(self, identity):
        stats = compute_dpa_stats([1.0], identity, QPSK, 0.3, 0)
        np.testing.assert_allclose(stats.cov, np.broadcast_to(0.15 * np.eye(2), (4, 2, 2)))
        np.testing.assert_allclose(stats.mean[:, 0] + 1j * stats.mean[:, 1], QPSK.symbols)

    def test_matches_monte_carlo(self, system):
        H, L = system
        sigma_w_sq = 0.06  # 20 dB with B = 6
        rng = np.random.default_rng(0)
        for k in range(3):
            exact = compute_dpa_stats(H.row(k), L, QPSK, sigma_w_sq, k)
            mc, (mean_se, cov_se) = estimate_stats_monte_carlo(H.row(k), L, QPSK, sigma_w_sq, k, 10**6, rng, True)
            for a, b in ((exact.mean, mc.mean), (exact.cov, mc.cov)):
                ok = np.isclose(a, b, rtol=0.01) | (np.abs(a - b) < 1e-3)
                assert ok.all()
            assert np.all(np.abs(exact.mean - mc.mean) <= 3 * mean_se + 1e-12)
            assert np.all(np.abs(exact.cov - mc.cov) <= 3 * cov_se + 1e-12)

    def test_monte_carlo_degenerate_cases(self, identity):
        rng = np.random.default_rng(1)
        mc = estimate_stats_monte_carlo([1.0], identity, QPSK, 0.0, 0, 1, rng)
        np.testing.assert_array_equal(mc.mean[:, 0] + 1j * mc.mean[:, 1], QPSK.symbols)
        mc = estimate_stats_monte_carlo([1.0], identity, QPSK, 0.0, 0, 100, rng)
        np.testing.assert_allclose(mc.cov, 0, atol=1e-15)

    def test_rotation_balance(self, system):
        H, L = system
        for k in range(3):
            stats = compute_dpa_stats(H.row(k), L, QPSK, 1.0, k)
            np.testing.assert_allclose(stats.mean.mean(axis=0), 0, atol=1e-12)

    def test_positive_definite(self, system):
        H, L = system
        for sigma_w_sq in (1e-6, 1.0, 60.0):
            stats = compute_dpa_stats(H.row(1), L, QPSK, sigma_w_sq, 1)
            assert np.all(stats.det > 0)
            assert np.all(stats.var_re + stats.var_im >= sigma_w_sq)
            np.testing.assert_allclose(stats.cov @ stats.inv, np.broadcast_to(np.eye(2), (4, 2, 2)), atol=1e-9)

    def test_errors(self, system):
        H, L = system
        with pytest.raises(ValueError):
            compute_dpa_stats(H.row(0), L, QPSK, 0.0, 0)
        with pytest.raises(ValueError):
            compute_dpa_stats(H.row(0), L, QPSK, 1.0, 3)
        with pytest.raises(ValueError):
            compute_dpa_stats(H.row(0), L, PSK8, 1.0, 0)

    def test_rotation_equivariance(self, system):
        H, L = system
        for k in range(3):
            mean = compute_dpa_stats(H.row(k), L, QPSK, 1.0, k).mean
            for m in range(4):
                phi = 2 * np.pi * m / 4
                rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
                np.testing.assert_allclose(mean[(np.arange(4) + m) % 4], mean @ rot.T, atol=1e-10)

    def test_mean_equivalence(self, system):
        H, L = system
        for k in range(3):
            h_eff = compute_h_eff(H.row(k), L, QPSK, k)
            mean = compute_dpa_stats(H.row(k), L, QPSK, 1.0, k).mean
            lm = h_eff * QPSK.symbols
            assert np.max(np.abs(mean - np.stack([lm.real, lm.imag], 1))) < 1e-10


class TestLinearModel:
    def test_identity_values(self, identity):
        assert compute_h_eff([1.0], identity, QPSK, 0) == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_array_equal(compute_lambda_xx(identity), [[1.0]])
        assert compute_lambda_eps([1.0], compute_lambda_xx(identity), 1.0) == 0.0

    def test_scalar_gain(self, identity):
        c = 0.3 - 1.7j
        assert compute_h_eff([c], identity, QPSK, 0) == pytest.approx(c, abs=1e-14)

    def test_h_eff_minimizes_mse(self, system):
        H, L = system
        zeta = received_noiseless(H.row(0), L)
        s0 = QPSK.symbols[L.key_digits()[:, 0]]
        h_eff = compute_h_eff(H.row(0), L, QPSK, 0)

        def mse(g):
            return np.mean(np.abs(zeta[None, :] - np.asarray(g)[:, None] * s0[None, :]) ** 2, axis=1)

        rng = np.random.default_rng(3)
        r = 2 * abs(h_eff) * np.sqrt(rng.uniform(size=10_000))
        g = h_eff + r * np.exp(2j * np.pi * rng.uniform(size=10_000))
        assert mse([h_eff])[0] <= mse(g).min()
        step = 4 * abs(h_eff) / 400
        axis = np.arange(-200, 201) * step
        grid = (h_eff.real + axis[:, None]) + 1j * (h_eff.imag + axis[None, :])
        best = grid.ravel()[np.argmin(mse(grid.ravel()))]
        assert abs(best - h_eff) <= step

    def test_lambda_xx_diagonal_and_naive_sum(self):
        H = draw_channel(FadingConfig(K=2, B=3, seed=5))
        L = build_lookup_table(H, PrecoderSpec(), QPSK, PSK8)
        lam = compute_lambda_xx(L)
        assert np.all(np.diag(lam) == 1)
        x = L.transmit_vectors()
        naive = np.zeros((3, 3), complex)
        for a in range(3):
            for b in range(3):
                naive[a, b] = sum(v[a] * np.conj(v[b]) for v in x) / len(x)
        np.testing.assert_allclose(lam, naive, atol=1e-12)
        np.testing.assert_allclose(lam, lam.conj().T, atol=0)
        assert np.linalg.eigvalsh(lam).min() > -1e-12

    def test_lambda_eps_direct_definition(self, system):
        H, L = system
        lam_x = compute_lambda_xx(L)
        digits = L.key_digits()
        for k in range(3):
            h_eff = compute_h_eff(H.row(k), L, QPSK, k)
            eps = received_noiseless(H.row(k), L) - h_eff * QPSK.symbols[digits[:, k]]
            direct = np.mean(np.abs(eps) ** 2)
            assert compute_lambda_eps(H.row(k), lam_x, h_eff) == pytest.approx(direct, abs=1e-10)

    def test_lambda_eps_homogeneous(self, system):
        H, L = system
        lam_x = compute_lambda_xx(L)
        h = H.row(2)
        base = compute_lambda_eps(h, lam_x, compute_h_eff(h, L, QPSK, 2))
        scaled = compute_lambda_eps(2.5 * h, lam_x, compute_h_eff(2.5 * h, L, QPSK, 2))
        assert scaled == pytest.approx(6.25 * base, rel=1e-10)

    def test_lambda_eps_rejects_inconsistent_inputs(self):
        with pytest.raises(ValueError):
            compute_lambda_eps([1.0], np.array([[1.0]]), 2.0)

    def test_sigma_eff(self, system):
        H, L = system
        p = linear_model(H.row(0), L, QPSK, 0.4, 0)
        assert p.sigma_eff_sq == p.lambda_eps_sq + 0.4
        assert p.sigma_eff_sq > 0.4


class TestLlrs:
    def test_midpoint_gives_zero(self, identity):
        stats = compute_dpa_stats([1.0], identity, QPSK, 0.2, 0)
        for i in range(2):
            # adjacent Gray neighbours differing only in bit i
            pairs = [(a, b) for a in PARTS.zeros(i) for b in PARTS.ones(i)]
            a, b = min(pairs, key=lambda p: abs(QPSK.symbols[p[0]] - QPSK.symbols[p[1]]))
            z = (QPSK.symbols[a] + QPSK.symbols[b]) / 2
            assert llr_general_dpa(z, stats, PARTS)[i] == pytest.approx(0, abs=1e-12)
            p = LinearModelParams(1.0, 0.0, 0.2)
            assert llr_dpa_lm(z, p, QPSK, PARTS)[i] == pytest.approx(0, abs=1e-12)

    def test_sign_favours_bit_one(self, identity):
        stats = compute_dpa_stats([1.0], identity, QPSK, 0.1, 0)
        for i in range(2):
            s = PARTS.ones(i)[0]
            assert llr_general_dpa(QPSK.symbols[s], stats, PARTS)[i] > 0
            s = PARTS.zeros(i)[0]
            assert llr_general_dpa(QPSK.symbols[s], stats, PARTS)[i] < 0

    def test_lm_zero_distance_winner(self):
        p = LinearModelParams(0.8 + 0.3j, 0.05, 0.2)
        for i in range(2):
            s = PARTS.ones(i)[0]
            expected = min(abs(p.h_eff) ** 2 * abs(QPSK.symbols[s] - QPSK.symbols[t]) ** 2 for t in PARTS.zeros(i))
            llr = llr_dpa_lm(p.h_eff * QPSK.symbols[s], p, QPSK, PARTS, l_max=np.inf)[i]
            assert llr == pytest.approx(expected / p.sigma_eff_sq, rel=1e-12)

    def test_general_matches_naive_loop(self, system):
        H, L = system
        stats = compute_dpa_stats(H.row(0), L, QPSK, 0.3, 0)
        rng = np.random.default_rng(4)
        z = rng.normal(size=50) + 1j * rng.normal(size=50)
        got = llr_general_dpa(z, stats, PARTS, l_max=np.inf)
        for zi, row in zip(z, got):
            np.testing.assert_allclose(row, naive_llr(zi, stats.mean, stats.cov, PARTS), atol=1e-10)

    def test_logdet_adds_determinant_term(self, system):
        H, L = system
        stats = compute_dpa_stats(H.row(0), L, QPSK, 0.3, 0)
        z = 0.1 + 0.2j
        expected = naive_llr(z, stats.mean, stats.cov, PARTS, np.log(stats.det))
        np.testing.assert_allclose(llr_general_dpa(z, stats, PARTS, logdet=True, l_max=np.inf), expected, atol=1e-10)

    def test_reduction_to_linear_model(self, system):
        H, L = system
        p = linear_model(H.row(1), L, QPSK, 0.3, 1)
        lm_means = p.h_eff * QPSK.symbols
        iso = GeneralDpaStats(
            mean=np.stack([lm_means.real, lm_means.imag], 1),
            cov=np.broadcast_to(p.sigma_eff_sq / 2 * np.eye(2), (4, 2, 2)).copy(),
        )
        rng = np.random.default_rng(5)
        z = rng.normal(size=200) + 1j * rng.normal(size=200)
        np.testing.assert_allclose(
            llr_general_dpa(z, iso, PARTS, l_max=np.inf), llr_dpa_lm(z, p, QPSK, PARTS, l_max=np.inf), atol=1e-10
        )

    def test_awgn_naive_loop(self):
        rng = np.random.default_rng(6)
        h_eff, sw = 0.7 - 0.4j, 0.25
        for z in rng.normal(size=20) + 1j * rng.normal(size=20):
            d = [abs(z - h_eff * s) ** 2 for s in QPSK.symbols]
            expected = [
                (min(d[s] for s in PARTS.zeros(i)) - min(d[s] for s in PARTS.ones(i))) / sw for i in range(2)
            ]
            np.testing.assert_allclose(llr_awgn_baseline(z, h_eff, sw, QPSK, PARTS, l_max=np.inf), expected, atol=1e-10)

    def test_awgn_equals_lm_without_distortion(self):
        p = LinearModelParams(0.9j, 0.0, 0.3)
        z = np.array([0.1 + 0.4j, -1 - 1j, 2.0])
        np.testing.assert_array_equal(llr_awgn_baseline(z, p.h_eff, 0.3, QPSK, PARTS), llr_dpa_lm(z, p, QPSK, PARTS))

    @settings(max_examples=100, deadline=None)
    @given(
        re=st.floats(-3, 3), im=st.floats(-3, 3),
        lam=st.floats(1e-3, 2.0), sw=st.floats(1e-2, 5.0),
    )
    def test_awgn_is_scaled_linear_model(self, re, im, lam, sw):
        p = LinearModelParams(0.6 + 0.2j, lam, sw)
        z = complex(re, im)
        awgn = llr_awgn_baseline(z, p.h_eff, sw, QPSK, PARTS, l_max=np.inf)
        lm = llr_dpa_lm(z, p, QPSK, PARTS, l_max=np.inf)
        np.testing.assert_allclose(awgn, p.sigma_eff_sq / sw * lm, rtol=1e-12, atol=1e-300)

    def test_clamped_and_finite(self):
        p = LinearModelParams(1.0, 0.0, 1e-9)
        llr = llr_dpa_lm(np.array([1e3 + 1e3j, -1e3]), p, QPSK, PARTS)
        assert np.all(np.abs(llr) <= 64)
        assert np.all(np.isfinite(llr))


class TestHardDetect:
    def test_examples(self):
        h = 0.5 + 0.5j
        for i, s in enumerate(QPSK.symbols):
            assert hard_detect(h * s, h, QPSK) == i
        assert hard_detect(0.0, h, QPSK) == 0
        with pytest.raises(ValueError):
            hard_detect(1.0, 0.0, QPSK)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(8)
        h = 1.2 * np.exp(0.4j)
        z = rng.normal(size=300) + 1j * rng.normal(size=300)
        got = hard_detect(z, h, PSK8)
        for zi, g in zip(z, got):
            dists = [abs(zi - h * s) for s in PSK8.symbols]
            assert g == dists.index(min(dists))


class TestZeroMeanError:
    def test_identity_exact(self, identity):
        assert np.all(verify_zero_mean_error([1.0], identity, QPSK, 0) == 0)

    def test_symmetric_table_is_unbiased(self, system):
        H, L = system
        for k in range(3):
            assert verify_zero_mean_error(H.row(k), L, QPSK, k).max() < 1e-10

    def test_residual_matches_definition(self, system):
        H, L = system
        digits = L.key_digits()
        zeta = received_noiseless(H.row(2), L)
        h_eff = compute_h_eff(H.row(2), L, QPSK, 2)
        expected = [abs(zeta[digits[:, 2] == s].mean() - h_eff * QPSK.symbols[s]) for s in range(4)]
        np.testing.assert_allclose(verify_zero_mean_error(H.row(2), L, QPSK, 2), expected, atol=1e-14)
        np.testing.assert_allclose(conditional_means(H.row(2), L, 2), [zeta[digits[:, 2] == s].mean() for s in range(4)])

    @pytest.mark.parametrize("variant", ["zf_phase", "mmse_exhaustive"])
    def test_finer_transmit_alphabet_keeps_quarter_turn_symmetry(self, variant):
        # a quarter turn of the data is two steps of 8-PSK, so the table inherits the symmetry
        H = draw_channel(FadingConfig(K=3, B=6, seed=3))
        L = build_lookup_table(H, PrecoderSpec(variant), QPSK, PSK8)
        digits = L.key_digits()
        turned = ((digits + 1) % 4) @ (4 ** np.arange(2, -1, -1))
        np.testing.assert_array_equal(L.indices[turned], (L.indices + 2) % 8)
        for k in range(3):
            assert verify_zero_mean_error(H.row(k), L, QPSK, k).max() < 1e-10
