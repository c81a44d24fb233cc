"""Command line entry point: ``dpasim {sweep,table,verify,ldpc-test}``.

Exit codes: 0 success, 1 runtime failure, 2 bad arguments or configuration.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from .channel import FadingConfig, draw_channel, snr_to_noise_variance
from .demapper import (
    compute_dpa_stats,
    compute_h_eff,
    compute_lambda_eps,
    compute_lambda_xx,
    received_noiseless,
    verify_zero_mean_error,
)
from .harness import RECEIVERS, ConfigError, SimConfig, ber_table, emit_csv, load_config, run_sweep
from .ldpc import build_code, encode, gf2_rank, spa_decode, write_alist
from .modem import is_power_of_two, make_psk_alphabet
from .precoder import PRECODERS, PrecoderSpec, build_lookup_table, check_circular_symmetry, dump_table, format_table

log = logging.getLogger("dpasim")


def _system_args(p: argparse.ArgumentParser, defaults: bool) -> None:
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--K", type=int, default=d(3), help="number of users")
    p.add_argument("--B", type=int, default=d(6), help="number of base-station antennas")
    p.add_argument("--alpha-s", type=int, default=d(4), help="data PSK order")
    p.add_argument("--alpha-x", type=int, default=d(4), help="transmit PSK order")
    p.add_argument("--precoder", choices=PRECODERS, default=d("mmse_exhaustive"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpasim", description="Discrete-precoding downlink simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a BER sweep and write a CSV")
    p.add_argument("--config", help="key = value config file; flags below override it")
    _system_args(p, defaults=False)
    p.add_argument("--receivers", help=f"comma separated subset of {','.join(RECEIVERS)}")
    p.add_argument("--snr", type=float, nargs="+", help="SNR grid in dB")
    p.add_argument("--blocks", type=int, help="blocks per channel realization")
    p.add_argument("--channels", type=int, help="number of channel realizations")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--max-iterations", type=int, help="decoder iteration cap")
    p.add_argument("--workers", type=int, help="worker processes (env DPASIM_WORKERS wins)")
    p.add_argument("--output", help="CSV path")
    p.add_argument("--logdet", action="store_true", default=None, help="add the log-determinant term to general DPA LLRs")
    p.add_argument("--timing", action="store_true", default=None, help="record wall time per row (breaks byte-identical output)")

    p = sub.add_parser("table", help="build a lookup table for a seeded channel and dump it")
    _system_args(p, defaults=True)
    p.add_argument("--seed", type=int, default=0, help="channel seed")
    p.add_argument("--output", help="file to write; stdout if omitted")

    p = sub.add_parser("verify", help="print linear-model and symmetry diagnostics for a seeded channel")
    _system_args(p, defaults=True)
    p.add_argument("--seed", type=int, default=0, help="channel seed")
    p.add_argument("--snr", type=float, default=20.0, help="SNR in dB used for the conditional statistics")

    p = sub.add_parser("ldpc-test", help="build the code and run a binary-input AWGN check")
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--dv", type=int, default=3)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--ebn0", type=float, nargs="+", default=[1.0, 2.0, 3.0], help="Eb/N0 points in dB")
    p.add_argument("--blocks", type=int, default=100)
    p.add_argument("--alist", help="also write the parity-check matrix in alist layout")
    return parser


def _check_system(args) -> None:
    for name in ("alpha_s", "alpha_x"):
        value = getattr(args, name)
        if not is_power_of_two(value) or not 2 <= value <= 64:
            raise ConfigError(f"{name.replace('_', '-')} must be a power of two in [2, 64], got {value}")
    if args.K < 1 or args.B < args.K:
        raise ConfigError(f"need 1 <= K <= B, got K={args.K}, B={args.B}")


def _sweep(args) -> int:
    overrides = dict(
        K=args.K,
        B=args.B,
        alpha_s=args.alpha_s,
        alpha_x=args.alpha_x,
        precoder=args.precoder,
        receivers=tuple(r.strip() for r in args.receivers.split(",")) if args.receivers else None,
        snr_grid_db=tuple(args.snr) if args.snr else None,
        blocks_per_channel=args.blocks,
        n_channels=args.channels,
        master_seed=args.seed,
        max_iterations=args.max_iterations,
        workers=args.workers,
        output_path=args.output,
        logdet=args.logdet,
        record_timing=args.timing,
    )
    if args.config:
        cfg = load_config(args.config, **overrides)
    else:
        cfg = SimConfig(**{k: v for k, v in overrides.items() if v is not None})
    start = time.perf_counter()
    records = run_sweep(cfg)
    emit_csv(records, cfg.output_path)
    bers = ber_table(records)
    print(f"{'snr_db':>8}" + "".join(f"{r:>14}" for r in cfg.receivers))
    for snr in cfg.snr_grid_db:
        print(f"{snr:>8g}" + "".join(f"{bers[r, snr]:>14.4e}" for r in cfg.receivers))
    print(f"wrote {len(records)} rows to {cfg.output_path} in {time.perf_counter() - start:.1f} s")
    return 0


def _table(args) -> int:
    _check_system(args)
    H = draw_channel(FadingConfig(K=args.K, B=args.B, seed=args.seed))
    L = build_lookup_table(H, PrecoderSpec(args.precoder), make_psk_alphabet(args.alpha_s), make_psk_alphabet(args.alpha_x))
    if args.output:
        dump_table(L, args.output)
    else:
        sys.stdout.write(format_table(L))
    return 0


def diagnostics(K, B, alpha_s, alpha_x, precoder, seed, snr_db=20.0) -> dict:
    """Linear-model and symmetry diagnostics for one seeded channel."""
    S, X = make_psk_alphabet(alpha_s), make_psk_alphabet(alpha_x)
    H = draw_channel(FadingConfig(K=K, B=B, seed=seed))
    L = build_lookup_table(H, PrecoderSpec(precoder), S, X)
    sym = check_circular_symmetry(L, X)
    sigma_w_sq = snr_to_noise_variance(snr_db, B).sigma_w_sq
    lam_x = compute_lambda_xx(L)
    digits = L.key_digits()
    residual = equivalence = identity = 0.0
    h_effs, lams = [], []
    for k in range(K):
        h = H.row(k)
        h_eff = compute_h_eff(h, L, S, k)
        lam = compute_lambda_eps(h, lam_x, h_eff, S.symbol_power)
        direct = np.mean(np.abs(received_noiseless(h, L) - h_eff * S.symbols[digits[:, k]]) ** 2)
        mean = compute_dpa_stats(h, L, S, sigma_w_sq, k).mean
        lm = h_eff * S.symbols
        residual = max(residual, verify_zero_mean_error(h, L, S, k).max())
        equivalence = max(equivalence, np.abs(mean - np.stack([lm.real, lm.imag], 1)).max())
        identity = max(identity, abs(lam - direct))
        h_effs.append(h_eff)
        lams.append(lam)
    return {
        "channel_fingerprint": H.fingerprint(),
        "circular_symmetry_applicable": str(sym.applicable).lower(),
        "circular_symmetry_max_deviation": sym.max_deviation,
        "max_zero_mean_residual": residual,
        "max_mean_equivalence_error": equivalence,
        "max_lambda_eps_identity_error": identity,
        "min_abs_h_eff": min(abs(h) for h in h_effs),
        "max_lambda_eps_sq": max(lams),
        "lambda_xx_diagonal_max_error": float(np.abs(np.diag(lam_x) - 1).max()),
    }


def _verify(args) -> int:
    _check_system(args)
    for label, value in diagnostics(args.K, args.B, args.alpha_s, args.alpha_x, args.precoder, args.seed, args.snr).items():
        print(f"{label}: {value:.6e}" if isinstance(value, float) else f"{label}: {value}")
    return 0


def _ldpc_test(args) -> int:
    code = build_code(args.n, args.rate, args.dv, args.seed)
    if args.alist:
        write_alist(code, args.alist)
    print(f"n: {code.n}\nk: {code.k}\nrank: {gf2_rank(code.parity_check)}")
    print(f"four_cycles: {code.four_cycles}\nrepairs: {len(code.repairs)}\nattempts: {code.attempts}")
    rng = np.random.default_rng(args.seed)
    msgs = rng.integers(0, 2, (args.blocks, code.k))
    cw = encode(code, msgs).astype(int)
    clean = spa_decode(code, 64.0 * (2 * cw - 1))
    ok = bool(np.array_equal(clean.message, msgs) and clean.converged.all())
    print(f"noiseless_roundtrip: {'pass' if ok else 'fail'}")
    for ebn0 in args.ebn0:
        sigma_sq = 1 / (2 * code.rate * 10 ** (ebn0 / 10))
        y = (2 * cw - 1) + np.sqrt(sigma_sq) * rng.standard_normal(cw.shape)
        res = spa_decode(code, 2 * y / sigma_sq)
        raw = np.mean((y > 0) != cw)
        print(
            f"ebn0_db {ebn0:g}: raw_ber {raw:.4e} decoded_ber {np.mean(res.message != msgs):.4e} "
            f"bler {np.mean((res.message != msgs).any(axis=1)):.4e} converged {res.converged.mean():.3f}"
        )
    return 0 if ok else 1


_COMMANDS = {"sweep": _sweep, "table": _table, "verify": _verify, "ldpc-test": _ldpc_test}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"dpasim {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and map to a failure code
        log.debug("failure", exc_info=True)
        print(f"dpasim {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
