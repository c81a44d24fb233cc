"""Block-fading Rayleigh channel, AWGN and SNR bookkeeping."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class DegenerateChannelError(ValueError):
    """Raised when a channel draw cannot serve every user."""


@dataclass(frozen=True)
class FadingConfig:
    K: int
    B: int
    beta: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.B < self.K:
            raise ValueError(f"B={self.B} < K={self.K}: underdetermined downlink not supported")
        beta = tuple(float(b) for b in self.beta) if self.beta else (1.0,) * self.K
        if len(beta) != self.K or min(beta) <= 0:
            raise ValueError("beta must hold K positive large-scale coefficients")
        object.__setattr__(self, "beta", beta)


@dataclass(frozen=True)
class ChannelMatrix:
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        h = np.array(self.entries, dtype=np.complex128)
        if h.ndim != 2:
            raise ValueError("channel matrix must be 2-D")
        if not np.all(np.isfinite(h)):
            raise DegenerateChannelError("channel has non-finite entries")
        if np.any(np.all(h == 0, axis=1)):
            raise DegenerateChannelError("channel has an all-zero user row")
        h.setflags(write=False)
        object.__setattr__(self, "entries", h)

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def B(self) -> int:
        return self.entries.shape[1]

    def row(self, k: int) -> np.ndarray:
        return self.entries[k]

    def fingerprint(self) -> str:
        """64-bit hex digest of the shape and little-endian complex128 entries."""
        digest = hashlib.blake2b(digest_size=8)
        digest.update(np.asarray(self.entries.shape, dtype="<i8").tobytes())
        digest.update(np.ascontiguousarray(self.entries, dtype="<c16").tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class NoiseModel:
    sigma_w_sq: float

    def __post_init__(self):
        if not self.sigma_w_sq > 0:
            raise ValueError("noise variance must be positive")

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        return np.sqrt(self.sigma_w_sq) * complex_normal(rng, shape)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly symmetric complex Gaussian samples."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(0.5)


def draw_channel(cfg: FadingConfig, rng: np.random.Generator | None = None) -> ChannelMatrix:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    g = complex_normal(rng, (cfg.K, cfg.B))
    return ChannelMatrix(g * np.sqrt(np.asarray(cfg.beta))[:, None])


def apply_channel(h_row, x, noise=0.0):
    """Receive sample(s) ``h_row @ x + noise``.

    ``x`` may carry leading batch axes; its last axis must have length B.
    """
    h_row = np.asarray(h_row)
    x = np.asarray(x)
    if h_row.ndim != 1 or x.shape[-1] != h_row.shape[0]:
        raise ValueError(f"dimension mismatch: h {h_row.shape} vs x {x.shape}")
    return x @ h_row + noise


def snr_to_noise_variance(snr_db: float, B: int) -> NoiseModel:
    """Noise variance for SNR = ||x||^2 / N0 with ||x||^2 = B (unit-modulus entries)."""
    if B < 1:
        raise ValueError("B must be at least 1")
    return NoiseModel(B / 10 ** (snr_db / 10))
