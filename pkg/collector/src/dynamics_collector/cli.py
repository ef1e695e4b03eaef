"""collect-dynamics: record one fine-tuning run per invocation.

Flags mirror the small-model fine-tuning recipe; parallelism across runs
is the caller's job (invoke once per run id/seed). Exit codes: 0 ok,
1 configuration/data error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .collect import CollectConfig, collect
from .errors import CollectError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="collect-dynamics", description=__doc__)
    p.add_argument("--train", required=True, help="train-pool JSONL ({id, text} or {id, prompt, target})")
    p.add_argument("--test", required=True, help="test-pool JSONL, same shape")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--run-id", default="run_000")
    p.add_argument("--model", default="tiny-random:gpt2",
                   help="hub id, or tiny-random:gpt2[?n_layer=..&n_embd=..&n_head=..]")
    p.add_argument("--encoder", default="st:sentence-transformers/all-MiniLM-L6-v2",
                   help="frozen text encoder: st:<name> or hash:<dim>")
    p.add_argument("--per-run", type=int, default=128, help="train examples sampled for this run")
    p.add_argument("--steps", type=int, default=96)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=5e-7)
    p.add_argument("--weight-decay", type=float, default=1e-3)
    p.add_argument("--adam-eps", type=float, default=1e-6)
    p.add_argument("--max-seq-len", type=int, default=2048)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--checkpoints", type=int, default=10,
                   help="evenly spaced gradient-dump states (0 disables dumps)")
    p.add_argument("--eval-interval", type=int, default=1,
                   help="generation-metric cadence; >1 emits a coarser runs_gen file")
    p.add_argument("--max-new-tokens", type=int, default=24)
    p.add_argument("--temperature", type=float, default=0.2)
    p.add_argument("--top-p", type=float, default=0.95)
    p.add_argument("--device", default="cpu")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = CollectConfig(
        train_path=args.train,
        test_path=args.test,
        out_dir=args.out,
        run_id=args.run_id,
        model=args.model,
        encoder=args.encoder,
        per_run=args.per_run,
        num_steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        adam_eps=args.adam_eps,
        max_seq_len=args.max_seq_len,
        seed=args.seed,
        checkpoints=args.checkpoints,
        eval_interval=args.eval_interval,
        max_new_tokens=args.max_new_tokens,
        temperature=args.temperature,
        top_p=args.top_p,
        device=args.device,
    )
    try:
        written = collect(cfg)
    except CollectError as e:
        print(f"collect-dynamics: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"collect-dynamics: i/o error: {e}", file=sys.stderr)
        return 2
    for kind, path in written.items():
        print(f"{kind}: {path}", file=sys.stderr)
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
