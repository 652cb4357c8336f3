"""Training CLI: fit, evaluate, export, and serve scorer models."""

from __future__ import annotations

import argparse
import sys

import numpy as np
import torch

from .bundle import export_bundle, load_bundle_into_model
from .dataset import KIND_FDNC, load_dataset, verify_action_ratio
from .models import HEAD_FLIP, HEAD_VALIDATE, TrainConfig, build_model
from .serve import serve
from .training import (
    evaluate_flip,
    evaluate_validate,
    train_flip_model,
    train_validate_model,
)


def _config_from_args(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        architecture=args.arch,
        hidden_size=args.hidden,
        memory_slots=args.memory_slots,
        memory_width=args.memory_width,
        read_heads=args.read_heads,
        batch_size=args.batch,
        dropout=args.dropout,
        learning_rate=args.lr,
        epochs=args.epochs,
        validation_size=args.val_size,
        seed=args.seed,
    )


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--arch", default="lstm", choices=["lstm", "dnc"])
    parser.add_argument("--hidden", type=int, default=128)
    parser.add_argument("--memory-slots", type=int, default=256)
    parser.add_argument("--memory-width", type=int, default=128)
    parser.add_argument("--read-heads", type=int, default=4)
    parser.add_argument("--batch", type=int, default=100)
    parser.add_argument("--dropout", type=float, default=0.05)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--val-size", type=int, default=50_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--checkpoint", help="path for the trained artifact (.pt)")
    parser.add_argument("--export", help="export an NFSW1 bundle here (lstm only)")


def _save_artifact(path: str, model, config: TrainConfig, head: str, data) -> None:
    torch.save(
        {
            "state_dict": model.state_dict(),
            "config": config.__dict__,
            "head": head,
            "input_size": data.state_len // data.n_bits,
            "n_bits": data.n_bits,
            "list_size": data.list_size,
            "omega": data.omega,
            "shape_p": data.shape_p,
            "code_digest": data.code_digest,
        },
        path,
    )


def _load_artifact(path: str):
    artifact = torch.load(path, weights_only=False)
    config = TrainConfig(**artifact["config"])
    model = build_model(config, artifact["input_size"], artifact["head"])
    model.load_state_dict(artifact["state_dict"])
    model.eval()
    return model, artifact


def _split(args, data):
    val = min(args.val_size, max(1, len(data) // 5))
    if val != args.val_size:
        print(f"validation size reduced to {val} ({len(data)} records on disk)")
    return data.split(val)


def cmd_train_f(args: argparse.Namespace) -> int:
    data = load_dataset(args.dataset)
    if data.kind != KIND_FDNC:
        print(f"error: {args.dataset} is a {data.kind} dataset", file=sys.stderr)
        return 2
    train, val = _split(args, data)
    config = _config_from_args(args)
    model, metrics = train_flip_model(
        train, val, config, checkpoint=args.checkpoint, shuffle_labels=args.shuffle_labels
    )
    rates = ", ".join(f"{r:.4f}" for r in metrics.rank_rates)
    print(f"held-out identification rates by rank: {rates}")
    if args.checkpoint:
        _save_artifact(args.checkpoint, model, config, HEAD_FLIP, data)
    if args.export:
        export_bundle(
            args.export, model, data.n_bits, data.list_size, data.omega, data.shape_p, data.code_digest
        )
        print(f"exported bundle to {args.export}")
    return 0


def cmd_train_fv(args: argparse.Namespace) -> int:
    data = load_dataset(args.dataset)
    if data.kind == KIND_FDNC:
        print(f"error: {args.dataset} is an f_dnc dataset", file=sys.stderr)
        return 2
    print(f"re-select fraction in dataset: {verify_action_ratio(data):.3f}")
    train, val = _split(args, data)
    config = _config_from_args(args)
    model, metrics = train_validate_model(train, val, config, checkpoint=args.checkpoint)
    print(
        f"held-out: accuracy {metrics.accuracy:.4f} (majority {metrics.majority_accuracy:.4f}), "
        f"re-select precision {metrics.reselect_precision:.4f} recall {metrics.reselect_recall:.4f}"
    )
    if args.checkpoint:
        _save_artifact(args.checkpoint, model, config, HEAD_VALIDATE, data)
    if args.export:
        export_bundle(
            args.export, model, data.n_bits, data.list_size, data.omega, data.shape_p, data.code_digest
        )
        print(f"exported bundle to {args.export}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model, artifact = _load_artifact(args.checkpoint)
    data = load_dataset(args.dataset)
    if data.code_digest != artifact["code_digest"]:
        print("error: dataset/model code digest mismatch", file=sys.stderr)
        return 2
    if artifact["head"] == HEAD_FLIP:
        metrics = evaluate_flip(model, data)
        print("rates:", ", ".join(f"{r:.4f}" for r in metrics.rank_rates))
    else:
        metrics = evaluate_validate(model, data)
        print(
            f"accuracy {metrics.accuracy:.4f} (majority {metrics.majority_accuracy:.4f}), "
            f"re-select precision {metrics.reselect_precision:.4f} recall {metrics.reselect_recall:.4f}"
        )
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    model, artifact = _load_artifact(args.checkpoint)
    export_bundle(
        args.out,
        model,
        artifact["n_bits"],
        artifact["list_size"],
        artifact["omega"],
        artifact["shape_p"],
        artifact["code_digest"],
    )
    print(f"exported bundle to {args.out}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    if args.bundle:
        model, meta = load_bundle_into_model(args.bundle)
        n_bits, omega = meta["block_len"], meta["omega"]
    else:
        model, artifact = _load_artifact(args.checkpoint)
        n_bits, omega = artifact["n_bits"], artifact["omega"]
    free_mask = None
    if args.frozen_file:
        with open(args.frozen_file, encoding="ascii") as fh:
            fh.readline()
            flags = fh.read().split()
        free_mask = np.array([f == "0" for f in flags], dtype=bool)
    if args.omega:
        omega = args.omega
    serve(model, n_bits, omega, free_mask)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polarflip-train")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("train-f", help="train a flip-position scorer")
    _add_train_flags(f)
    f.add_argument("--shuffle-labels", action="store_true",
                   help="control run with permuted reference vectors")
    f.set_defaults(func=cmd_train_f)

    fv = sub.add_parser("train-fv", help="train a flip-validate classifier")
    _add_train_flags(fv)
    fv.set_defaults(func=cmd_train_fv)

    ev = sub.add_parser("eval", help="evaluate a trained artifact on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("export-bundle", help="export a trained LSTM artifact as NFSW1")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export)

    sv = sub.add_parser("serve", help="speak the adapter protocol on stdin/stdout")
    sv.add_argument("--checkpoint")
    sv.add_argument("--bundle")
    sv.add_argument("--omega", type=int)
    sv.add_argument("--frozen-file", help="mask non-free positions in flip responses")
    sv.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve" and not (args.checkpoint or args.bundle):
        print("error: serve needs --checkpoint or --bundle", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
