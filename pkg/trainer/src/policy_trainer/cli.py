"""policy-trainer command line: train on a benchmark dataset, serve the
candidate-stream protocol from a checkpoint."""

from __future__ import annotations

import argparse
import sys

from .config import load_config


def cmd_train(args) -> int:
    from .training import evaluate_l1, train

    cfg = load_config(args.config)
    model, history = train(
        args.data, cfg, seed=args.seed, steps=args.steps, out_path=args.out,
        stop_l1=args.stop_l1, log_every=args.log_every,
    )
    import os

    from .data import ChunkDataset

    dataset = ChunkDataset(
        os.path.join(args.data, "records.jsonl"), os.path.join(args.data, "frames.bin"), cfg.depth_frames
    )
    print(f"trained {len(history['loss'])} steps; final loss {history['loss'][-1]:.5f}; "
          f"posterior-mean L1 {evaluate_l1(model, dataset):.5f} rad; checkpoint -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .serve import serve
    from .training import load_checkpoint

    model, cfg, _ = load_checkpoint(args.ckpt)
    import torch

    torch.set_num_threads(cfg.threads)
    print(f"serving candidates on {args.socket}", flush=True)
    serve(model, args.socket, seed=args.seed, max_requests=args.max_requests)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="policy-trainer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train_p = sub.add_parser("train", help="train a policy on a dataset directory")
    train_p.add_argument("--data", required=True, help="directory with records.jsonl and frames.bin")
    train_p.add_argument("--config", help="optional YAML overriding PolicyConfig fields")
    train_p.add_argument("--seed", type=int, default=0)
    train_p.add_argument("--steps", type=int, default=2000)
    train_p.add_argument("--stop-l1", type=float, default=None)
    train_p.add_argument("--log-every", type=int, default=0)
    train_p.add_argument("--out", required=True)
    train_p.set_defaults(func=cmd_train)

    serve_p = sub.add_parser("serve", help="answer candidate requests over a unix socket")
    serve_p.add_argument("--ckpt", required=True)
    serve_p.add_argument("--socket", required=True)
    serve_p.add_argument("--seed", type=int, default=0)
    serve_p.add_argument("--max-requests", type=int, default=None)
    serve_p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surfaced as a clean one-liner for CLI users
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
