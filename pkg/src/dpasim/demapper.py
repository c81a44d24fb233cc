"""Receiver statistics and soft demapping for discrete-precoded downlinks.

Everything here is an exact finite sum over the lookup table: the
statistics a user sees, conditioned on its own symbol, are averages over
the ``alpha_s**(K-1)`` symbol vectors of the other users.

LLR convention: positive values favour bit 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .modem import BitPartition, PskAlphabet
from .precoder import LookupTable

L_MAX = 64.0
DET_FLOOR = 1e-300
LAMBDA_TOL = 1e-9


@dataclass(frozen=True)
class GeneralDpaStats:
    """Per-symbol mean (alpha, 2) and covariance (alpha, 2, 2) of [Re z, Im z]."""

    mean: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)
    inv: np.ndarray = field(repr=False, init=False)
    det: np.ndarray = field(repr=False, init=False)

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        a, b, d = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
        det = a * d - b * b
        safe = np.maximum(det, DET_FLOOR)
        inv = np.stack([np.stack([d, -b], -1), np.stack([-b, a], -1)], -2) / safe[:, None, None]
        object.__setattr__(self, "det", det)
        object.__setattr__(self, "inv", inv)

    @property
    def var_re(self) -> np.ndarray:
        return self.cov[:, 0, 0]

    @property
    def var_im(self) -> np.ndarray:
        return self.cov[:, 1, 1]

    @property
    def rho(self) -> np.ndarray:
        return self.cov[:, 0, 1]


@dataclass(frozen=True)
class LinearModelParams:
    h_eff: complex
    lambda_eps_sq: float
    sigma_w_sq: float

    @property
    def sigma_eff_sq(self) -> float:
        return self.lambda_eps_sq + self.sigma_w_sq


def received_noiseless(h_row, L: LookupTable) -> np.ndarray:
    """zeta(s) = h_k x(s) for every table key."""
    return L.transmit_vectors() @ np.asarray(h_row, dtype=np.complex128)


def _check_table(h_row, L: LookupTable, S: PskAlphabet, user_index: int) -> None:
    if L.alpha_s != S.order:
        raise ValueError(f"table built for {L.alpha_s}-PSK data, got {S.order}-PSK alphabet")
    if np.shape(h_row) != (L.B,):
        raise ValueError(f"channel row must have length B={L.B}")
    if not 0 <= user_index < L.K:
        raise ValueError(f"user index {user_index} outside 0..{L.K - 1}")


def _conditioned(zeta: np.ndarray, L: LookupTable, user_index: int) -> np.ndarray:
    """(alpha_s, alpha_s**(K-1)) view: row s lists zeta over the set D(s)."""
    grid = zeta.reshape((L.alpha_s,) * L.K)
    return np.moveaxis(grid, user_index, 0).reshape(L.alpha_s, -1)


def compute_dpa_stats(h_row, L: LookupTable, S: PskAlphabet, sigma_w_sq: float, user_index: int) -> GeneralDpaStats:
    _check_table(h_row, L, S, user_index)
    if not sigma_w_sq > 0:
        raise ValueError("noise variance must be positive")
    d = _conditioned(received_noiseless(h_row, L), L, user_index)
    re, im = d.real, d.imag
    mean = np.stack([re.mean(axis=1), im.mean(axis=1)], axis=1)
    cre = re - mean[:, :1]
    cim = im - mean[:, 1:]
    var_re = (cre**2).mean(axis=1) + sigma_w_sq / 2
    var_im = (cim**2).mean(axis=1) + sigma_w_sq / 2
    rho = (cre * cim).mean(axis=1)
    cov = np.stack([np.stack([var_re, rho], -1), np.stack([rho, var_im], -1)], -2)
    stats = GeneralDpaStats(mean=mean, cov=cov)
    if np.any(stats.det <= 0) or np.any(var_re + var_im < sigma_w_sq):
        raise ArithmeticError("conditional covariance is not positive definite")
    return stats


def compute_h_eff(h_row, L: LookupTable, S: PskAlphabet, user_index: int) -> complex:
    _check_table(h_row, L, S, user_index)
    zeta = received_noiseless(h_row, L)
    s_k = S.symbols[L.key_digits()[:, user_index]]
    return complex(np.sum(s_k.conj() * zeta) / (len(L) * S.symbol_power))


def compute_lambda_xx(L: LookupTable) -> np.ndarray:
    """Transmit covariance E{x x^H} over uniformly distributed symbol vectors.

    x_a x_b^* of two PSK points is exp(2j pi (i_a - i_b) / alpha_x), which
    is evaluated from the index difference so the diagonal is exactly one.
    """
    idx = L.indices
    diff = (idx[:, :, None] - idx[:, None, :]) % L.alpha_x
    counts = np.stack([(diff == m).sum(axis=0) for m in range(L.alpha_x)])
    roots = np.exp(2j * np.pi * np.arange(L.alpha_x) / L.alpha_x)
    roots[0] = 1.0
    return np.tensordot(roots, counts, axes=1) / len(L)


def compute_lambda_eps(h_row, lambda_xx, h_eff: complex, sigma_s_sq: float = 1.0) -> float:
    h = np.asarray(h_row, dtype=np.complex128)
    total = float(np.real(h @ lambda_xx @ h.conj()))
    lam = total - abs(h_eff) ** 2 * sigma_s_sq
    if lam < -LAMBDA_TOL:
        raise ValueError(f"negative distortion power {lam:.3e}: inconsistent inputs")
    return max(lam, 0.0)


def linear_model(h_row, L: LookupTable, S: PskAlphabet, sigma_w_sq: float, user_index: int) -> LinearModelParams:
    h_eff = compute_h_eff(h_row, L, S, user_index)
    lam = compute_lambda_eps(h_row, compute_lambda_xx(L), h_eff, S.symbol_power)
    return LinearModelParams(h_eff=h_eff, lambda_eps_sq=lam, sigma_w_sq=sigma_w_sq)


def _maxlog(metric: np.ndarray, parts: BitPartition, scale: float, l_max: float) -> np.ndarray:
    """scale * (min over bit-0 symbols - min over bit-1 symbols), per bit."""
    llr = np.stack(
        [metric[..., parts.zeros(i)].min(axis=-1) - metric[..., parts.ones(i)].min(axis=-1) for i in range(len(parts))],
        axis=-1,
    )
    llr *= scale
    return np.clip(llr, -l_max, l_max)


def quadratic_metrics(z, stats: GeneralDpaStats, logdet: bool = False) -> np.ndarray:
    """(..., alpha) Mahalanobis distances of z to every conditional Gaussian."""
    z = np.asarray(z)
    dr = z.real[..., None] - stats.mean[:, 0]
    di = z.imag[..., None] - stats.mean[:, 1]
    inv = stats.inv
    q = inv[:, 0, 0] * dr * dr + 2 * inv[:, 0, 1] * dr * di + inv[:, 1, 1] * di * di
    if logdet:
        q = q + np.log(np.maximum(stats.det, DET_FLOOR))
    return q


def llr_general_dpa(z, stats: GeneralDpaStats, parts: BitPartition, logdet: bool = False, l_max: float = L_MAX) -> np.ndarray:
    """Max-log LLRs under symbol-dependent 2-D Gaussian statistics.

    ``z`` may be a scalar or an array; output has a trailing axis of M
    bits (MSB first). ``logdet`` adds the log-determinant term that the
    plain max-log metric leaves out.
    """
    return _maxlog(quadratic_metrics(z, stats, logdet), parts, 0.5, l_max)


def _distances(z, h_eff: complex, S: PskAlphabet) -> np.ndarray:
    return np.abs(np.asarray(z)[..., None] - h_eff * S.symbols) ** 2


def llr_dpa_lm(z, params: LinearModelParams, S: PskAlphabet, parts: BitPartition, l_max: float = L_MAX) -> np.ndarray:
    return _maxlog(_distances(z, params.h_eff, S), parts, 1.0 / params.sigma_eff_sq, l_max)


def llr_awgn_baseline(z, h_eff: complex, sigma_w_sq: float, S: PskAlphabet, parts: BitPartition, l_max: float = L_MAX) -> np.ndarray:
    """Conventional AWGN demapper: same metric as the linear model, noise variance only."""
    if not sigma_w_sq > 0:
        raise ValueError("noise variance must be positive")
    return _maxlog(_distances(z, h_eff, S), parts, 1.0 / sigma_w_sq, l_max)


def hard_detect(z, h_eff: complex, S: PskAlphabet) -> np.ndarray:
    """Nearest scaled symbol; near-ties (relative 1e-12) go to the lower index."""
    if h_eff == 0:
        raise ValueError("h_eff is zero; hard detection undefined")
    d = _distances(z, h_eff, S)
    dmin = d.min(axis=-1, keepdims=True)
    return np.argmax(d <= dmin * (1 + 1e-12) + 1e-300, axis=-1)


def conditional_means(h_row, L: LookupTable, user_index: int) -> np.ndarray:
    """Complex E{zeta | s_k = s} for every data symbol."""
    return _conditioned(received_noiseless(h_row, L), L, user_index).mean(axis=1)


def verify_zero_mean_error(h_row, L: LookupTable, S: PskAlphabet, user_index: int) -> np.ndarray:
    """|E{eps | s}| for every data symbol s; zero when the linear model is unbiased."""
    _check_table(h_row, L, S, user_index)
    h_eff = compute_h_eff(h_row, L, S, user_index)
    return np.abs(conditional_means(h_row, L, user_index) - h_eff * S.symbols)


def estimate_stats_monte_carlo(
    h_row,
    L: LookupTable,
    S: PskAlphabet,
    sigma_w_sq: float,
    user_index: int,
    n_samples: int,
    rng: np.random.Generator,
    return_stderr: bool = False,
):
    """Sampled counterpart of :func:`compute_dpa_stats`.

    For every data symbol, ``n_samples`` symbol vectors of the other users
    are drawn uniformly, pushed through the table and the channel, and
    noise is added. With ``return_stderr`` the standard errors of the
    mean and covariance entries are returned as a second stats-shaped pair
    ``(mean_se, cov_se)``.
    """
    _check_table(h_row, L, S, user_index)
    if sigma_w_sq < 0:
        raise ValueError("noise variance must be nonnegative")
    zeta = received_noiseless(h_row, L)
    alpha, K = S.order, L.K
    powers = alpha ** np.arange(K - 1, -1, -1)
    means, covs, mean_se, cov_se = [], [], [], []
    for s in range(alpha):
        digits = rng.integers(0, alpha, size=(n_samples, K))
        digits[:, user_index] = s
        z = zeta[digits @ powers]
        if sigma_w_sq > 0:
            z = z + np.sqrt(sigma_w_sq / 2) * (rng.standard_normal(n_samples) + 1j * rng.standard_normal(n_samples))
        xy = np.stack([z.real, z.imag])
        mu = xy.mean(axis=1)
        c = xy - mu[:, None]
        cov = c @ c.T / n_samples
        means.append(mu)
        covs.append(cov)
        if return_stderr:
            mean_se.append(np.sqrt(np.diag(cov) / n_samples))
            prods = c[:, None, :] * c[None, :, :]
            cov_se.append(prods.std(axis=-1) / np.sqrt(n_samples))
    stats = GeneralDpaStats(mean=np.array(means), cov=np.array(covs))
    if return_stderr:
        return stats, (np.array(mean_se), np.array(cov_se))
    return stats
