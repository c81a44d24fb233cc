"""Seeded Monte-Carlo BER sweeps over SNR, receivers and channel draws.

Randomness is derived per task from ``numpy.random.SeedSequence`` with a
spawn key, so results do not depend on chunking or on the worker count:

* channel ``c`` (redraw ``a``):   key (0, c, a)
* coded block ``b`` of channel c: key (1, c, b), shared by every coded receiver
* uncoded block ``b``:            key (2, c, b)

Within a block, message bits and unit-variance noise are drawn once and the
noise is rescaled for every SNR point.
"""
from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .channel import DegenerateChannelError, FadingConfig, complex_normal, draw_channel, snr_to_noise_variance
from .demapper import (
    compute_dpa_stats,
    hard_detect,
    linear_model,
    llr_awgn_baseline,
    llr_dpa_lm,
    llr_general_dpa,
)
from .ldpc import DecoderConfig, build_code, encode, spa_decode
from .modem import bit_partitions, build_gray_map, demodulate_indices, is_power_of_two, make_psk_alphabet, modulate
from .precoder import PRECODERS, PrecoderSpec, build_lookup_table, digits_to_key

log = logging.getLogger(__name__)

RECEIVERS = ("general_dpa", "dpa_lm", "awgn_common", "uncoded_hard")
CODED = ("general_dpa", "dpa_lm", "awgn_common")
CSV_HEADER = ["receiver", "snr_db", "channel", "user", "bit_errors", "bits", "block_errors", "blocks", "ber", "bler", "wall_time_s"]
WORKERS_ENV = "DPASIM_WORKERS"
MAX_REDRAWS = 100
_CHUNK_BLOCKS = 50


class ConfigError(ValueError):
    """Invalid simulation configuration."""


@dataclass(frozen=True)
class SimConfig:
    K: int = 3
    B: int = 6
    alpha_s: int = 4
    alpha_x: int = 4
    precoder: str = "mmse_exhaustive"
    receivers: tuple = RECEIVERS
    snr_grid_db: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    blocks_per_channel: int = 200
    n_channels: int = 3
    ldpc_n: int = 2048
    ldpc_rate: float = 0.5
    ldpc_dv: int = 3
    ldpc_seed: int = 1
    max_iterations: int = 50
    master_seed: int = 2024
    output_path: str = "results.csv"
    logdet: bool = False
    record_timing: bool = False
    workers: int = 1

    def __post_init__(self):
        for name in ("alpha_s", "alpha_x"):
            value = getattr(self, name)
            if not is_power_of_two(value) or not 2 <= value <= 64:
                raise ConfigError(f"{name} must be a power of two in [2, 64], got {value}")
        if self.K < 1 or self.B < self.K:
            raise ConfigError(f"need 1 <= K <= B, got K={self.K}, B={self.B}")
        if self.precoder not in PRECODERS:
            raise ConfigError(f"precoder must be one of {PRECODERS}")
        unknown = set(self.receivers) - set(RECEIVERS)
        if unknown or not self.receivers:
            raise ConfigError(f"receivers must be a non-empty subset of {RECEIVERS}")
        if not self.snr_grid_db:
            raise ConfigError("snr grid is empty")
        if self.blocks_per_channel < 1 or self.n_channels < 1:
            raise ConfigError("need at least one block and one channel")
        if self.max_iterations < 1 or self.workers < 1:
            raise ConfigError("max_iterations and workers must be positive")
        m = self.alpha_s.bit_length() - 1
        k = self.ldpc_n * self.ldpc_rate
        if k != int(k) or self.ldpc_n % m or int(k) % m:
            raise ConfigError(f"code length {self.ldpc_n} and message length {k} must be multiples of {m}")

    @property
    def info_bits(self) -> int:
        return int(self.ldpc_n * self.ldpc_rate)


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _convert(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(SimConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    kind = kinds[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _BOOL[raw.strip().lower()]
        if name == "receivers":
            return tuple(r.strip() for r in raw.split(",") if r.strip())
        if name == "snr_grid_db":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return raw.strip()
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config_text(text: str, **overrides) -> SimConfig:
    """``key = value`` lines, ``#`` comments; keys are :class:`SimConfig` fields."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = _convert(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SimConfig(**values)


def load_config(path, **overrides) -> SimConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), **overrides)


def format_config(cfg: SimConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


@dataclass
class ResultRecord:
    receiver: str
    snr_db: float
    channel: int
    user: object  # int or "all"
    bit_errors: int = 0
    bits: int = 0
    block_errors: int = 0
    blocks: int = 0
    wall_time_s: float = 0.0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else float("nan")

    @property
    def bler(self) -> float:
        return self.block_errors / self.blocks if self.blocks else float("nan")


def _seed(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=key)


@dataclass
class _Setup:
    """Everything that stays fixed for one channel realization."""

    H: object
    table: object
    S: object
    gray: object
    parts: object
    models: list
    stats: dict = field(default_factory=dict)  # (snr, user) -> GeneralDpaStats
    redraws: int = 0


def prepare_channel(cfg: SimConfig, channel_index: int) -> _Setup:
    """Draw a usable channel, build its table once and the receiver parameters."""
    S = make_psk_alphabet(cfg.alpha_s)
    X = make_psk_alphabet(cfg.alpha_x)
    gray = build_gray_map(S)
    parts = bit_partitions(S, gray)
    fading = FadingConfig(K=cfg.K, B=cfg.B)
    for attempt in range(MAX_REDRAWS):
        rng = np.random.default_rng(_seed(cfg.master_seed, 0, channel_index, attempt))
        try:
            H = draw_channel(fading, rng)
            table = build_lookup_table(H, PrecoderSpec(cfg.precoder), S, X)
            models = [linear_model(H.row(k), table, S, 1.0, k) for k in range(cfg.K)]
            if any(abs(m.h_eff) < 1e-12 for m in models):
                raise DegenerateChannelError("a user sees zero effective gain")
        except DegenerateChannelError as exc:
            log.warning("channel %d draw %d degenerate (%s); redrawing", channel_index, attempt, exc)
            continue
        setup = _Setup(H=H, table=table, S=S, gray=gray, parts=parts, models=models, redraws=attempt)
        if "general_dpa" in cfg.receivers:
            for snr in cfg.snr_grid_db:
                sigma_w_sq = snr_to_noise_variance(snr, cfg.B).sigma_w_sq
                for k in range(cfg.K):
                    setup.stats[snr, k] = compute_dpa_stats(H.row(k), table, S, sigma_w_sq, k)
        return setup
    raise DegenerateChannelError(f"channel {channel_index}: no usable draw in {MAX_REDRAWS} attempts")


def _noiseless_rx(setup: _Setup, sym_idx: np.ndarray) -> np.ndarray:
    """sym_idx (batch, K, T) -> noiseless receive samples (batch, K, T)."""
    keys = digits_to_key(np.moveaxis(sym_idx, 1, -1), setup.S.order)
    X = make_psk_alphabet(setup.table.alpha_x)
    x = X.symbols[setup.table.indices[keys]]  # (batch, T, B)
    return np.moveaxis(x @ setup.H.entries.T, -1, 1)


def _demap(receiver: str, z, setup: _Setup, cfg: SimConfig, snr: float, k: int, sigma_w_sq: float):
    model = setup.models[k]
    if receiver == "general_dpa":
        return llr_general_dpa(z, setup.stats[snr, k], setup.parts, logdet=cfg.logdet)
    if receiver == "dpa_lm":
        return llr_dpa_lm(z, replace(model, sigma_w_sq=sigma_w_sq), setup.S, setup.parts)
    return llr_awgn_baseline(z, model.h_eff, sigma_w_sq, setup.S, setup.parts)


def simulate_channel(cfg: SimConfig, channel_index: int) -> dict:
    """Error counts for one channel realization, keyed by (receiver, snr, user)."""
    setup = prepare_channel(cfg, channel_index)
    code = build_code(cfg.ldpc_n, cfg.ldpc_rate, cfg.ldpc_dv, cfg.ldpc_seed) if set(cfg.receivers) & set(CODED) else None
    dec_cfg = DecoderConfig(max_iterations=cfg.max_iterations)
    counts = {
        (r, snr, k): ResultRecord(r, snr, channel_index, k)
        for r in cfg.receivers
        for snr in cfg.snr_grid_db
        for k in range(cfg.K)
    }
    n_info = cfg.info_bits
    coded = [r for r in cfg.receivers if r in CODED]
    for first in range(0, cfg.blocks_per_channel, _CHUNK_BLOCKS):
        blocks = range(first, min(first + _CHUNK_BLOCKS, cfg.blocks_per_channel))
        if coded:
            _run_coded(cfg, setup, code, dec_cfg, coded, blocks, channel_index, counts, n_info)
        if "uncoded_hard" in cfg.receivers:
            _run_uncoded(cfg, setup, blocks, channel_index, counts, n_info)
    return counts


def _draw_block(cfg: SimConfig, stream: int, channel_index: int, block: int, n_bits: int, n_sym: int):
    rng = np.random.default_rng(_seed(cfg.master_seed, stream, channel_index, block))
    bits = rng.integers(0, 2, size=(cfg.K, n_bits), dtype=np.uint8)
    noise = complex_normal(rng, (cfg.K, n_sym))
    return bits, noise


def _run_coded(cfg, setup, code, dec_cfg, receivers, blocks, channel_index, counts, n_info):
    M = setup.S.bits_per_symbol
    n_sym = cfg.ldpc_n // M
    drawn = [_draw_block(cfg, 1, channel_index, b, n_info, n_sym) for b in blocks]
    msgs = np.stack([d[0] for d in drawn])  # (batch, K, k)
    noise = np.stack([d[1] for d in drawn])  # (batch, K, T)
    words = encode(code, msgs)
    zeta = _noiseless_rx(setup, modulate(words, setup.S, setup.gray))
    for snr in cfg.snr_grid_db:
        sigma_w_sq = snr_to_noise_variance(snr, cfg.B).sigma_w_sq
        z = zeta + np.sqrt(sigma_w_sq) * noise
        for k in range(cfg.K):
            for r in receivers:
                start = time.perf_counter()
                llr = _demap(r, z[:, k], setup, cfg, snr, k, sigma_w_sq).reshape(len(blocks), cfg.ldpc_n)
                result = spa_decode(code, llr, dec_cfg)
                errors = (result.message != msgs[:, k]).sum(axis=1)
                rec = counts[r, snr, k]
                rec.bit_errors += int(errors.sum())
                rec.block_errors += int((errors > 0).sum())
                rec.bits += errors.size * n_info
                rec.blocks += errors.size
                if cfg.record_timing:
                    rec.wall_time_s += time.perf_counter() - start


def _run_uncoded(cfg, setup, blocks, channel_index, counts, n_info):
    M = setup.S.bits_per_symbol
    drawn = [_draw_block(cfg, 2, channel_index, b, n_info, n_info // M) for b in blocks]
    bits = np.stack([d[0] for d in drawn])
    noise = np.stack([d[1] for d in drawn])
    zeta = _noiseless_rx(setup, modulate(bits, setup.S, setup.gray))
    for snr in cfg.snr_grid_db:
        sigma_w_sq = snr_to_noise_variance(snr, cfg.B).sigma_w_sq
        z = zeta + np.sqrt(sigma_w_sq) * noise
        for k in range(cfg.K):
            start = time.perf_counter()
            detected = hard_detect(z[:, k], setup.models[k].h_eff, setup.S)
            errors = (demodulate_indices(detected, setup.gray) != bits[:, k]).sum(axis=1)
            rec = counts["uncoded_hard", snr, k]
            rec.bit_errors += int(errors.sum())
            rec.block_errors += int((errors > 0).sum())
            rec.bits += errors.size * n_info
            rec.blocks += errors.size
            if cfg.record_timing:
                rec.wall_time_s += time.perf_counter() - start


def resolve_workers(cfg: SimConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else cfg.workers


def run_sweep(cfg: SimConfig, workers: int | None = None) -> list:
    """Run every channel realization and return per-user and per-channel rows.

    Rows are ordered receiver, SNR, channel, user (then "all" for the
    channel's pooled count).
    """
    workers = workers or resolve_workers(cfg)
    channels = range(cfg.n_channels)
    if workers == 1:
        per_channel = [simulate_channel(cfg, c) for c in channels]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_channel = list(pool.map(simulate_channel, [cfg] * cfg.n_channels, channels))
    return _aggregate(cfg, per_channel)


def _merge(target: ResultRecord, rec: ResultRecord) -> None:
    target.bit_errors += rec.bit_errors
    target.bits += rec.bits
    target.block_errors += rec.block_errors
    target.blocks += rec.blocks
    target.wall_time_s += rec.wall_time_s


def _aggregate(cfg: SimConfig, per_channel: list) -> list:
    rows = []
    for r in cfg.receivers:
        for snr in cfg.snr_grid_db:
            for c, counts in enumerate(per_channel):
                channel_all = ResultRecord(r, snr, c, "all")
                for k in range(cfg.K):
                    rec = counts[r, snr, k]
                    rows.append(rec)
                    _merge(channel_all, rec)
                rows.append(channel_all)
    return rows


def _num(value: float) -> str:
    if not np.isfinite(value):
        return "nan"
    return np.format_float_positional(value, precision=10, unique=False, fractional=False, trim="-")


def emit_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(
                [
                    rec.receiver,
                    _num(rec.snr_db),
                    rec.channel,
                    rec.user,
                    rec.bit_errors,
                    rec.bits,
                    rec.block_errors,
                    rec.blocks,
                    _num(rec.ber),
                    _num(rec.bler),
                    _num(rec.wall_time_s),
                ]
            )


def read_csv(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def ber_table(records) -> dict:
    """{(receiver, snr): ber} pooled over every channel's user="all" row."""
    pooled = {}
    for r in records:
        if r.user != "all":
            continue
        acc = pooled.setdefault((r.receiver, r.snr_db), ResultRecord(r.receiver, r.snr_db, "all", "all"))
        _merge(acc, r)
    return {key: acc.ber for key, acc in pooled.items()}
