#!/usr/bin/env python3
"""Overfit the tiny transducer on the synthetic corpus for each modeling
unit and report loss curves plus the step at which greedy training WER
hits zero. Curves are written as JSON Lines next to the checkpoints."""

import argparse
import json
from pathlib import Path

from ttasr.trainer import overfit_tiny_corpus

UNITS = ("initial_final_tone", "syllable_tone", "character")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--units", default="all",
                        help="comma-separated unit names, or 'all'")
    parser.add_argument("--n", type=int, default=20, help="corpus size")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--ctc-steps", type=int, default=150)
    parser.add_argument("--max-steps", type=int, default=2000)
    parser.add_argument("--eval-every", type=int, default=50)
    args = parser.parse_args()

    units = UNITS if args.units == "all" else tuple(args.units.split(","))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    print(f"{'unit':<22} {'zero-WER step':>14} {'final WER':>10} {'wall(s)':>8}")
    for unit in units:
        report = overfit_tiny_corpus(
            unit, out_dir / unit, num_utterances=args.n, seed=args.seed,
            ctc_steps=args.ctc_steps, max_finetune_steps=args.max_steps,
            eval_every=args.eval_every,
        )
        curve_path = out_dir / f"{unit}_curves.jsonl"
        with open(curve_path, "w", encoding="utf-8") as fh:
            for step, loss in enumerate(report.ctc_losses, start=1):
                fh.write(json.dumps(
                    {"phase": "ctc_pretrain", "step": step, "loss": loss}) + "\n")
            wer = dict(report.wer_trajectory)
            for step, loss in enumerate(report.rnnt_losses, start=1):
                row = {"phase": "rnnt_finetune", "step": step, "loss": loss}
                if step in wer:
                    row["train_wer"] = wer[step]
                fh.write(json.dumps(row) + "\n")
        steps = report.steps_to_zero_wer
        print(f"{unit:<22} {steps if steps is not None else '>max':>14} "
              f"{100 * report.final_wer:>9.2f}% {report.wall_seconds:>8.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
