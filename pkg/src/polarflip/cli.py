"""Command-line entry point.

Subcommands map one-to-one onto the harness drivers: `fer`, `accuracy`,
`gen-fdnc`, `gen-fvdnc`, and `decode-one` for single-frame debugging.
Every run prints a reproducibility stanza (the full resolved
configuration plus seeds) ahead of its data.  Exit codes: 0 success,
2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .channel import ChannelConfig
from .dataset import KIND_FDNC, KIND_FVDNC, DatasetWriter
from .decoder import scl_decode
from .flip import decode_two_phase
from .harness import (
    DecoderConfig,
    dataset_header,
    generate_f_dnc_dataset,
    generate_fv_dnc_dataset,
    run_fer_sweep,
    run_identification_accuracy,
)
from .polar import CONSTRUCTION_FILE, CONSTRUCTION_GA, construct_code

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    pass


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its entries")
    parser.add_argument("--code", nargs=2, type=int, metavar=("N", "K"), default=[256, 128])
    parser.add_argument("--crc", type=int, default=16, help="CRC length in bits")
    parser.add_argument("--crc-poly", type=lambda s: int(s, 0), default=0x1021)
    parser.add_argument("--construction", default=CONSTRUCTION_GA,
                        choices=[CONSTRUCTION_GA, CONSTRUCTION_FILE])
    parser.add_argument("--frozen-file", help="frozen-set file for external_file construction")
    parser.add_argument("--design-snr", type=float, default=2.0)
    parser.add_argument("--decoder", default="scl", choices=["sc", "scl", "dnc-scf", "dnc-sclf"])
    parser.add_argument("--list-size", type=int, default=4)
    parser.add_argument("--omega", type=int, default=5)
    parser.add_argument("--p", dest="shape_p", type=float, default=0.8)
    parser.add_argument("--alpha", type=float, default=0.03)
    parser.add_argument("--scorer", default="genie",
                        help="genie | heuristic | model:<path> | external:<cmd>")
    parser.add_argument("--fv", default="continue",
                        help="continue | model:<path> | external:<cmd> | external")
    parser.add_argument("--min-sum", action="store_true")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", help="output path (default stdout)")


def _parse_snrs(spec: str) -> list[float]:
    """Either comma-separated values or start:step:stop (inclusive)."""
    if ":" in spec:
        parts = [float(v) for v in spec.split(":")]
        if len(parts) != 3 or parts[1] <= 0:
            raise ConfigError(f"bad SNR range {spec!r}, expected start:step:stop")
        start, step, stop = parts
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(count)]
    try:
        return [float(v) for v in spec.split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"bad SNR list {spec!r}") from exc


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    if not args.config:
        return
    try:
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigError(f"unknown config key {key!r}")
        # Flags given explicitly on the command line win over the file.
        if f"--{key.replace('_', '-')}" not in argv:
            setattr(args, attr, value)


def _build_code(args: argparse.Namespace):
    n_bits, k_info = args.code
    try:
        return construct_code(
            n_bits,
            k_info,
            args.crc,
            method=args.construction,
            design_snr_db=args.design_snr,
            crc_poly=args.crc_poly,
            frozen_file=args.frozen_file,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_decoder_config(args: argparse.Namespace) -> DecoderConfig:
    try:
        return DecoderConfig(
            kind=args.decoder,
            list_size=args.list_size,
            omega=args.omega,
            shape_p=args.shape_p,
            alpha=args.alpha,
            scorer=args.scorer,
            fv=args.fv,
            min_sum=args.min_sum,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _stanza(args: argparse.Namespace, code) -> str:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    return (
        f"# reproducibility: {json.dumps(resolved, sort_keys=True, default=str)}\n"
        f"# code_digest: {code.digest()}\n"
    )


def _emit(args: argparse.Namespace, text: str) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_fer(args: argparse.Namespace) -> int:
    code = _build_code(args)
    config = _build_decoder_config(args)
    snrs = _parse_snrs(args.snr)
    result = run_fer_sweep(
        code, config, snrs,
        min_errors=args.min_errors, max_frames=args.max_frames,
        seed=args.seed, threads=args.threads,
    )
    _emit(args, _stanza(args, code) + result.to_table())
    return EXIT_OK


def cmd_accuracy(args: argparse.Namespace) -> int:
    code = _build_code(args)
    config = _build_decoder_config(args)
    result = run_identification_accuracy(
        code, config, args.snr_db, k_max=args.k_max,
        min_error_frames=args.min_error_frames, max_frames=args.max_frames,
        seed=args.seed, threads=args.threads,
    )
    _emit(args, _stanza(args, code) + result.to_table())
    return EXIT_OK


def _cmd_gen(args: argparse.Namespace, kind: str) -> int:
    if not args.out:
        raise ConfigError("dataset generation requires --out")
    code = _build_code(args)
    channel = ChannelConfig(snr_db=args.snr_db, seed=args.seed)
    list_size = 1 if args.decoder in ("sc", "dnc-scf") else args.list_size
    if kind == KIND_FDNC:
        records = generate_f_dnc_dataset(
            code, channel, args.count, omega=args.omega, shape_p=args.shape_p,
            list_size=list_size, threads=args.threads, max_frames=args.max_frames,
        )
        header = dataset_header(code, KIND_FDNC, channel, list_size, args.omega, args.shape_p)
    else:
        records = generate_fv_dnc_dataset(
            code, channel, args.count, list_size=list_size,
            threads=args.threads, max_frames=args.max_frames,
        )
        header = dataset_header(code, KIND_FVDNC, channel, list_size, args.omega, args.shape_p)
    written = 0
    with DatasetWriter(args.out, header) as writer:
        for record in records:
            writer.append(record)
            written += 1
    sys.stdout.write(f"wrote {written} records to {args.out}\n")
    if written < args.count:
        sys.stdout.write(f"warning: frame cap reached before {args.count} records\n")
    return EXIT_OK


def cmd_decode_one(args: argparse.Namespace) -> int:
    code = _build_code(args)
    config = _build_decoder_config(args)
    try:
        llrs = np.loadtxt(args.llr_file, dtype=float).reshape(-1)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read LLR file: {exc}") from exc
    if llrs.size != code.n_bits:
        raise ConfigError(f"LLR file holds {llrs.size} values, code length is {code.n_bits}")
    if config.two_phase:
        from .harness import _ScorerFactory

        factory = _ScorerFactory(code, config)
        if config.scorer == "genie":
            raise ConfigError("decode-one has no transmitted sequence; genie scorer unavailable")
        flip, fv = factory.for_frame(llrs, None)
        try:
            bits, log = decode_two_phase(
                code, llrs, config.effective_list, flip, fv,
                alpha=config.alpha, min_sum=config.min_sum,
            )
        finally:
            factory.close()
        trace = log.to_jsonl()
    else:
        state = scl_decode(code, llrs, config.effective_list, min_sum=config.min_sum)
        bits = state.message()
        trace = json.dumps({"attempt": 1, "phase": "initial", "flips": [], "crc": state.crc_passed}) + "\n"
    out = _stanza(args, code) + trace + "message: " + "".join(str(int(b)) for b in bits) + "\n"
    _emit(args, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polarflip",
        description="Polar-code flip-decoding experiments and training-data generation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fer = sub.add_parser("fer", help="frame/bit error-rate sweep")
    _add_common(fer)
    fer.add_argument("--snr", default="1:0.5:3", help="dB list 'a,b,c' or range 'start:step:stop'")
    fer.add_argument("--min-errors", type=int, default=100)
    fer.add_argument("--max-frames", type=int, default=10_000_000)
    fer.set_defaults(func=cmd_fer)

    acc = sub.add_parser("accuracy", help="flip-position identification accuracy")
    _add_common(acc)
    acc.add_argument("--snr-db", type=float, default=2.0)
    acc.add_argument("--k-max", type=int, default=5)
    acc.add_argument("--min-error-frames", type=int, default=1000)
    acc.add_argument("--max-frames", type=int, default=1_000_000)
    acc.set_defaults(func=cmd_accuracy)

    fdnc = sub.add_parser("gen-fdnc", help="flip-scorer training database")
    _add_common(fdnc)
    fdnc.add_argument("--snr-db", type=float, default=2.0)
    fdnc.add_argument("--count", type=int, default=1_000_000)
    fdnc.add_argument("--max-frames", type=int, default=50_000_000)
    fdnc.set_defaults(func=lambda a: _cmd_gen(a, KIND_FDNC))

    fvdnc = sub.add_parser("gen-fvdnc", help="flip-validate training database")
    _add_common(fvdnc)
    fvdnc.add_argument("--snr-db", type=float, default=2.0)
    fvdnc.add_argument("--count", type=int, default=30_000_000)
    fvdnc.add_argument("--max-frames", type=int, default=50_000_000)
    fvdnc.set_defaults(func=lambda a: _cmd_gen(a, KIND_FVDNC))

    one = sub.add_parser("decode-one", help="decode a single LLR frame and print its attempt trace")
    _add_common(one)
    one.add_argument("llr_file", help="whitespace-separated LLR values, length N")
    one.set_defaults(func=cmd_decode_one)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, argv)
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except KeyboardInterrupt:
        sys.stderr.write("interrupted\n")
        return EXIT_RUNTIME
    except Exception as exc:  # surfaced with a stable exit code for scripting
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
