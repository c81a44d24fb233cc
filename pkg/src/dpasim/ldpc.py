"""Regular LDPC codes with systematic encoding and sum-product decoding.

Codes are Gallager-style regular (dv, dc) constructions grown column by
column, steering clear of 4-cycles when possible. After construction the
columns are permuted so that the parity bits come first and the message
occupies the last k positions of every codeword.

Decoder input follows the demapper convention: a positive LLR favours 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TANH_CLIP = 1.0 - 1e-12


class CodeConstructionError(ValueError):
    pass


@dataclass(frozen=True)
class LdpcCode:
    n: int
    k: int
    parity_check: np.ndarray = field(repr=False)  # (n - k, n) uint8
    parity_generator: np.ndarray = field(repr=False)  # (n - k, k) uint8: parity = P @ message
    seed: int = 0
    dv: int = 0
    four_cycles: int = 0
    repairs: tuple = ()
    attempts: int = 1

    def __post_init__(self):
        H = np.asarray(self.parity_check, dtype=np.uint8)
        object.__setattr__(self, "parity_check", H)
        rows, cols = np.nonzero(H)  # row-major: edges grouped by check
        m = self.n - self.k
        row_deg = np.bincount(rows, minlength=m)
        col_deg = np.bincount(cols, minlength=self.n)
        n_edges = rows.size
        chk_edges = _padded(rows, np.arange(n_edges), m, n_edges)
        order = np.argsort(cols, kind="stable")
        var_edges = _padded(cols[order], order, self.n, n_edges)
        chk_vars = _padded(rows, cols, m, self.n)
        graph = _Graph(rows, cols, row_deg, col_deg, chk_edges, var_edges, chk_vars)
        object.__setattr__(self, "_graph", graph)

    @property
    def rate(self) -> float:
        return self.k / self.n

    @property
    def m(self) -> int:
        return self.n - self.k

    @property
    def message_positions(self) -> np.ndarray:
        return np.arange(self.m, self.n)

    @property
    def row_degrees(self) -> np.ndarray:
        return self._graph.row_deg

    @property
    def column_degrees(self) -> np.ndarray:
        return self._graph.col_deg

    def syndrome(self, codewords) -> np.ndarray:
        c = np.atleast_2d(np.asarray(codewords, dtype=np.uint8))
        padded = np.concatenate([c, np.zeros((c.shape[0], 1), np.uint8)], axis=1)
        s = padded[:, self._graph.chk_vars].sum(axis=-1) % 2
        return s[0] if np.ndim(codewords) == 1 else s


@dataclass(frozen=True)
class _Graph:
    rows: np.ndarray
    cols: np.ndarray
    row_deg: np.ndarray
    col_deg: np.ndarray
    chk_edges: np.ndarray  # (m, dc_max) edge ids, padded with n_edges
    var_edges: np.ndarray  # (n, dv_max) edge ids, padded with n_edges
    chk_vars: np.ndarray  # (m, dc_max) variable ids, padded with n


def _padded(groups: np.ndarray, values: np.ndarray, n_groups: int, pad: int) -> np.ndarray:
    """Pack ``values`` (sorted by ``groups``) into a (n_groups, max_count) array."""
    counts = np.bincount(groups, minlength=n_groups)
    out = np.full((n_groups, max(int(counts.max(initial=0)), 1)), pad, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    slot = np.arange(groups.size) - starts[groups]
    out[groups, slot] = values
    return out


@dataclass(frozen=True)
class DecoderConfig:
    max_iterations: int = 50
    early_stop: bool = True
    llr_convention: str = "positive-is-one"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class DecodeResult:
    message: np.ndarray
    codeword: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def _grow(n: int, m: int, dv: int, dc: int, rng: np.random.Generator):
    """Column-by-column regular construction. Returns (H, four_cycles) or None if stuck."""
    H = np.zeros((m, n), dtype=np.uint8)
    remaining = np.full(m, dc)
    share = np.zeros((m, m), dtype=bool)
    cycles = 0
    for j in range(n):
        chosen: list[int] = []
        for _ in range(dv):
            avail = remaining > 0
            avail[chosen] = False
            if not avail.any():
                return None
            ok = avail & ~share[chosen].any(axis=0) if chosen else avail
            pool = np.flatnonzero(ok if ok.any() else avail)
            top = pool[remaining[pool] == remaining[pool].max()]
            chosen.append(int(rng.choice(top)))
        for a_i, a in enumerate(chosen):
            for b in chosen[a_i + 1 :]:
                cycles += int(share[a, b])
                share[a, b] = share[b, a] = True
        H[chosen, j] = 1
        remaining[chosen] -= 1
    return H, cycles


def gf2_rref(A: np.ndarray):
    """Reduced row echelon form over GF(2). Returns (R, pivot_columns)."""
    R = np.array(A, dtype=bool)
    m, n = R.shape
    pivots = []
    r = 0
    for c in range(n):
        if r == m:
            break
        hits = np.flatnonzero(R[r:, c])
        if hits.size == 0:
            continue
        p = r + hits[0]
        if p != r:
            R[[r, p]] = R[[p, r]]
        rows = np.flatnonzero(R[:, c])
        rows = rows[rows != r]
        R[rows] ^= R[r]
        pivots.append(c)
        r += 1
    return R.astype(np.uint8), pivots


def gf2_rank(A: np.ndarray) -> int:
    return len(gf2_rref(A)[1])


def _repair_rank(H: np.ndarray, target: int):
    """Toggle zero entries (row-major scan) until the rank reaches ``target``."""
    H = H.copy()
    repairs = []
    rank = gf2_rank(H)
    m, n = H.shape
    for i in range(m):
        for j in range(n):
            if rank >= target:
                return H, tuple(repairs)
            if H[i, j]:
                continue
            H[i, j] = 1
            new_rank = gf2_rank(H)
            if new_rank > rank:
                rank = new_rank
                repairs.append((i, j))
            else:
                H[i, j] = 0
    if rank < target:
        raise CodeConstructionError("could not repair parity-check rank")
    return H, tuple(repairs)


def build_code(n: int, rate: float, dv: int, seed: int, max_attempts: int = 50) -> LdpcCode:
    k = n * rate
    if abs(k - round(k)) > 1e-9 or not 0 < rate < 1:
        raise CodeConstructionError(f"n * rate = {k} is not a positive integer below n")
    k = int(round(k))
    m = n - k
    if dv < 2 or (dv * n) % m:
        raise CodeConstructionError(f"column degree {dv} gives non-integral row degree for {m} checks")
    dc = dv * n // m
    if dc > n or dv > m:
        raise CodeConstructionError("degrees exceed the matrix size")
    rng = np.random.default_rng(seed)
    best = None
    attempts = 0
    for attempts in range(1, max_attempts + 1):
        grown = _grow(n, m, dv, dc, rng)
        if grown is None:
            continue
        H, cycles = grown
        rank = gf2_rank(H)
        score = (m - rank, cycles)
        if best is None or score < best[0]:
            best = (score, H, cycles)
        if score == (0, 0):
            break
    if best is None:
        raise CodeConstructionError(f"construction failed after {max_attempts} attempts")
    _, H, cycles = best
    H, repairs = _repair_rank(H, m)
    R, pivots = gf2_rref(H)
    info = [c for c in range(n) if c not in set(pivots)]
    perm = np.array(list(pivots) + info)
    H = H[:, perm]
    R = R[:, perm]
    return LdpcCode(
        n=n,
        k=k,
        parity_check=H,
        parity_generator=np.ascontiguousarray(R[:, m:]),
        seed=seed,
        dv=dv,
        four_cycles=cycles,
        repairs=repairs,
        attempts=attempts,
    )


def encode(code: LdpcCode, message) -> np.ndarray:
    """Systematic encoding ``[P m | m]``; accepts (k,) or (batch, k)."""
    msg = np.asarray(message)
    if msg.shape[-1] != code.k:
        raise ValueError(f"message length {msg.shape[-1]} != k = {code.k}")
    msg = msg.astype(np.uint8)
    # float matmul is exact here: sums never exceed k
    parity = (msg.astype(np.float64) @ code.parity_generator.T.astype(np.float64)) % 2
    return np.concatenate([parity.astype(np.uint8), msg], axis=-1)


def spa_decode(code: LdpcCode, llrs, cfg: DecoderConfig | None = None) -> DecodeResult:
    """Flooding sum-product decoding of one (n,) or many (batch, n) LLR rows.

    A posterior of exactly zero is resolved by position parity (odd
    positions decide 1), so a fully erased input never passes as the
    all-zero or all-one codeword.
    """
    cfg = cfg or DecoderConfig()
    llrs = np.asarray(llrs, dtype=np.float64)
    single = llrs.ndim == 1
    llrs = np.atleast_2d(llrs)
    if llrs.shape[1] != code.n:
        raise ValueError(f"expected {code.n} LLRs per block, got {llrs.shape[1]}")
    g = code._graph
    n_edges = g.rows.size
    batch = llrs.shape[0]
    # internal messages use the opposite sign: positive favours 0
    prior = -llrs
    tie_bits = (np.arange(code.n) % 2).astype(np.uint8)

    codewords = np.zeros((batch, code.n), dtype=np.uint8)
    iterations = np.zeros(batch, dtype=np.int64)
    converged = np.zeros(batch, dtype=bool)

    active = np.arange(batch)
    v2c = np.concatenate([prior[:, g.cols], np.zeros((batch, 1))], axis=1)
    for it in range(1, cfg.max_iterations + 1):
        t = np.clip(np.tanh(v2c / 2), -TANH_CLIP, TANH_CLIP)
        t[:, n_edges] = 1.0
        slots = t[:, g.chk_edges]
        before = np.cumprod(np.concatenate([np.ones_like(slots[..., :1]), slots[..., :-1]], axis=-1), axis=-1)
        after = np.cumprod(np.concatenate([np.ones_like(slots[..., :1]), slots[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
        c2v = np.empty_like(v2c)
        c2v[:, g.chk_edges] = 2 * np.arctanh(np.clip(before * after, -TANH_CLIP, TANH_CLIP))
        c2v[:, n_edges] = 0.0
        total = prior[active] + c2v[:, g.var_edges].sum(axis=-1)
        v2c = total[:, g.cols] - c2v[:, :n_edges]
        v2c = np.concatenate([v2c, np.zeros((v2c.shape[0], 1))], axis=1)

        bits = np.where(total == 0, tie_bits, total < 0).astype(np.uint8)
        ok = ~code.syndrome(bits).any(axis=-1)
        codewords[active] = bits
        iterations[active] = it
        converged[active] = ok
        if cfg.early_stop and ok.any():
            keep = ~ok
            active = active[keep]
            v2c = v2c[keep]
            if active.size == 0:
                break

    result = DecodeResult(
        message=codewords[:, code.message_positions],
        codeword=codewords,
        iterations=iterations,
        converged=converged,
    )
    if single:
        result = DecodeResult(result.message[0], result.codeword[0], int(iterations[0]), bool(converged[0]))
    return result


# alist layout (1-based indices, zero padded):
#   n m / max column degree, max row degree / column degrees / row degrees
#   then n lines of row indices per column, then m lines of column indices per row.
def write_alist(code: LdpcCode, path) -> None:
    H = code.parity_check
    m, n = H.shape
    col_deg, row_deg = H.sum(axis=0), H.sum(axis=1)
    lines = [f"{n} {m}", f"{col_deg.max()} {row_deg.max()}"]
    lines.append(" ".join(map(str, col_deg)))
    lines.append(" ".join(map(str, row_deg)))
    for j in range(n):
        idx = list(np.flatnonzero(H[:, j]) + 1)
        lines.append(" ".join(map(str, idx + [0] * (col_deg.max() - len(idx)))))
    for i in range(m):
        idx = list(np.flatnonzero(H[i]) + 1)
        lines.append(" ".join(map(str, idx + [0] * (row_deg.max() - len(idx)))))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_alist(path) -> np.ndarray:
    tokens = Path(path).read_text(encoding="utf-8").split()
    vals = list(map(int, tokens))
    n, m, max_col, _max_row = vals[:4]
    pos = 4 + n + m
    H = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        for i in vals[pos : pos + max_col]:
            if i:
                H[i - 1, j] = 1
        pos += max_col
    return H
