"""Discrete PSK precoders and the per-channel lookup table.

The table holds one transmit vector for every user-symbol vector. Keys are
the base-``alpha_s`` number formed by the users' symbol indices with user 0
as the most significant digit. Transmit vectors are stored as indices into
the transmit alphabet, so alphabet membership is exact.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelMatrix, DegenerateChannelError
from .modem import PskAlphabet, make_psk_alphabet

PRECODERS = ("zf_phase", "mmse_exhaustive")
SEARCH_BUDGET = 1 << 24
TABLE_BUDGET = 1 << 20
_CHUNK = 1 << 16


class SearchBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class PrecoderSpec:
    variant: str = "mmse_exhaustive"

    def __post_init__(self):
        if self.variant not in PRECODERS:
            raise ValueError(f"unknown precoder {self.variant!r}; choose from {PRECODERS}")


@dataclass(frozen=True)
class LookupTable:
    indices: np.ndarray = field(repr=False)  # (alpha_s**K, B) transmit-alphabet indices
    K: int
    B: int
    alpha_s: int
    alpha_x: int
    precoder: str
    fingerprint: str

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        if idx.shape != (self.alpha_s**self.K, self.B):
            raise ValueError(f"table shape {idx.shape} does not match K, B, alpha_s")
        if idx.size and (idx.min() < 0 or idx.max() >= self.alpha_x):
            raise ValueError("table entry outside the transmit alphabet")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def transmit_vectors(self) -> np.ndarray:
        """(alpha_s**K, B) complex transmit vectors."""
        return make_psk_alphabet(self.alpha_x).symbols[self.indices]

    def key_digits(self) -> np.ndarray:
        """(alpha_s**K, K) symbol indices of every key, user 0 first."""
        return key_digits(self.K, self.alpha_s)

    def lookup(self, symbol_indices) -> np.ndarray:
        """Transmit-alphabet indices for symbol-index vectors on the last axis."""
        return self.indices[digits_to_key(symbol_indices, self.alpha_s)]


def key_digits(K: int, alpha: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Base-``alpha`` digits (most significant first) of keys ``start..stop-1``."""
    keys = np.arange(start, alpha**K if stop is None else stop)
    return decode_keys(keys, alpha, K)


def decode_keys(keys, alpha: int, n_digits: int) -> np.ndarray:
    powers = alpha ** np.arange(n_digits - 1, -1, -1)
    return (np.asarray(keys)[..., None] // powers) % alpha


def digits_to_key(digits, alpha: int):
    digits = np.asarray(digits, dtype=np.int64)
    K = digits.shape[-1]
    return digits @ (alpha ** np.arange(K - 1, -1, -1))


def _as_matrix(H) -> np.ndarray:
    return H.entries if isinstance(H, ChannelMatrix) else np.asarray(H, dtype=np.complex128)


def quantize_phase(u, X: PskAlphabet) -> np.ndarray:
    """Index of the alphabet element angularly closest to each entry of ``u``.

    Ties (within 1e-12 rad) go to the lower index.
    """
    u = np.asarray(u)
    diff = np.angle(u[..., None]) - np.angle(X.symbols)
    dist = np.abs(np.angle(np.exp(1j * diff)))
    near = dist <= dist.min(axis=-1, keepdims=True) + 1e-12
    return np.argmax(near, axis=-1)


def zf_unquantized(H, s) -> np.ndarray:
    """Zero-forcing solution ``H^H (H H^H)^-1 s``; ``s`` may be (K,) or (K, n)."""
    H = _as_matrix(H)
    if np.linalg.matrix_rank(H) < H.shape[0]:
        raise DegenerateChannelError("channel is rank deficient; zero-forcing undefined")
    return H.conj().T @ np.linalg.solve(H @ H.conj().T, s)


def zf_phase_precode(H, s, X: PskAlphabet) -> np.ndarray:
    """Phase-quantized zero forcing. Returns transmit-alphabet indices (B,)."""
    H = _as_matrix(H)
    s = np.asarray(s, dtype=np.complex128)
    if s.shape != (H.shape[0],):
        raise ValueError("symbol vector length must equal K")
    return quantize_phase(zf_unquantized(H, s), X)


def mmse_objective(H, x, s) -> np.ndarray:
    """Scaled-MSE figure of merit of transmit vector(s) ``x`` for symbols ``s``.

    With a real receive scale g >= 0, min_g ||s - g H x||^2 equals
    ||s||^2 - max(Re<Hx, s>, 0)^2 / ||Hx||^2, so larger is better.
    Vectors with Hx = 0 score -inf.
    """
    H = _as_matrix(H)
    hx = np.asarray(x) @ H.T
    return _objective(hx, np.asarray(s))


def _objective(hx: np.ndarray, s: np.ndarray) -> np.ndarray:
    power = np.sum(np.abs(hx) ** 2, axis=-1)
    corr = np.maximum((hx.conj() @ s).real, 0.0)
    if corr.ndim > power.ndim:
        power = power[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(power > 0, corr**2 / power, -np.inf)


def _mmse_search(H: np.ndarray, S: np.ndarray, X: PskAlphabet) -> np.ndarray:
    """Best transmit indices for every column of S (K, n). Returns (n, B)."""
    B = H.shape[1]
    total = X.order**B
    if total > SEARCH_BUDGET:
        raise SearchBudgetError(f"exhaustive search over {total} candidates exceeds {SEARCH_BUDGET}")
    n = S.shape[1]
    best_val = np.full(n, -np.inf)
    best_idx = np.zeros(n, dtype=np.int64)
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        cand = key_digits(B, X.order, start, stop)
        hx = X.symbols[cand] @ H.T
        obj = _objective(hx, S)  # (chunk, n)
        local = np.argmax(obj, axis=0)  # first maximum within the chunk
        val = obj[local, np.arange(n)]
        better = val > best_val  # strict: earlier chunks win ties
        best_val[better] = val[better]
        best_idx[better] = start + local[better]
    return decode_keys(best_idx, X.order, B)


def mmse_exhaustive_precode(H, s, X: PskAlphabet) -> np.ndarray:
    """Exhaustive search maximizing :func:`mmse_objective`.

    Returns transmit-alphabet indices (B,). Ties resolve to the
    lexicographically smallest index vector.
    """
    H = _as_matrix(H)
    s = np.asarray(s, dtype=np.complex128)
    if s.shape != (H.shape[0],):
        raise ValueError("symbol vector length must equal K")
    return _mmse_search(H, s[:, None], X)[0]


def build_lookup_table(H: ChannelMatrix, spec: PrecoderSpec, S: PskAlphabet, X: PskAlphabet) -> LookupTable:
    if not isinstance(H, ChannelMatrix):
        H = ChannelMatrix(H)
    K, B = H.K, H.B
    n_keys = S.order**K
    if n_keys > TABLE_BUDGET:
        raise SearchBudgetError(f"{n_keys} table keys exceed {TABLE_BUDGET}")
    sym = S.symbols[key_digits(K, S.order)].T  # (K, n_keys)
    if spec.variant == "zf_phase":
        indices = quantize_phase(zf_unquantized(H.entries, sym).T, X)
    else:
        indices = _mmse_search(H.entries, sym, X)
    return LookupTable(
        indices=indices,
        K=K,
        B=B,
        alpha_s=S.order,
        alpha_x=X.order,
        precoder=spec.variant,
        fingerprint=H.fingerprint(),
    )


@dataclass(frozen=True)
class SymmetryReport:
    applicable: bool
    max_deviation: float
    worst_key: int | None = None
    worst_rotation: int | None = None


def check_circular_symmetry(L: LookupTable, X: PskAlphabet | None = None) -> SymmetryReport:
    """Compare x(s e^{j phi}) with x(s) e^{j phi} for every key and rotation.

    ``phi = 2 pi m / alpha_x``; only meaningful when alpha_x == alpha_s.
    """
    X = X or make_psk_alphabet(L.alpha_x)
    if L.alpha_x != L.alpha_s:
        return SymmetryReport(applicable=False, max_deviation=float("nan"))
    digits = L.key_digits()
    worst, worst_key, worst_m = 0.0, None, None
    for m in range(1, L.alpha_x):
        rotated = L.indices[digits_to_key((digits + m) % L.alpha_s, L.alpha_s)]
        expected = (L.indices + m) % L.alpha_x
        mismatch = rotated != expected
        if not mismatch.any():
            continue
        dev = np.where(mismatch, np.abs(X.symbols[rotated] - X.symbols[expected]), 0.0).max(axis=1)
        k = int(np.argmax(dev))
        if dev[k] > worst:
            worst, worst_key, worst_m = float(dev[k]), k, m
    return SymmetryReport(applicable=True, max_deviation=worst, worst_key=worst_key, worst_rotation=worst_m)


# Text table format, one item per line:
#   dpasim-table 1
#   K <int> / B <int> / alpha_s <int> / alpha_x <int> / precoder <id> / fingerprint <hex16>
#   then alpha_s**K records of B space-separated transmit indices, in key order.
_MAGIC = "dpasim-table 1"


def format_table(L: LookupTable) -> str:
    buf = io.StringIO()
    buf.write(_MAGIC + "\n")
    for name in ("K", "B", "alpha_s", "alpha_x", "precoder", "fingerprint"):
        buf.write(f"{name} {getattr(L, name)}\n")
    np.savetxt(buf, L.indices, fmt="%d")
    return buf.getvalue()


def dump_table(L: LookupTable, path) -> None:
    Path(path).write_text(format_table(L), encoding="utf-8")


def load_table(path) -> LookupTable:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise ValueError(f"{path}: not a lookup-table file")
    meta = {}
    for line in lines[1:7]:
        key, value = line.split(maxsplit=1)
        meta[key] = value.strip()
    K, B = int(meta["K"]), int(meta["B"])
    rows = [list(map(int, ln.split())) for ln in lines[7:] if ln.strip()]
    indices = np.array(rows, dtype=np.int64).reshape(-1, B)
    return LookupTable(
        indices=indices,
        K=K,
        B=B,
        alpha_s=int(meta["alpha_s"]),
        alpha_x=int(meta["alpha_x"]),
        precoder=meta["precoder"],
        fingerprint=meta["fingerprint"],
    )
