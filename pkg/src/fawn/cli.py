"""``fawn`` command line: generate, train, eval, infer.

Exit codes: 0 ok, 1 usage error, 2 data/format error, 3 numeric failure.
Progress goes to stderr; artifacts go to files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .data import CELL_SIZE
from .formats import (
    ConfigError,
    FormatError,
    dump_json,
    load_model,
    read_config,
    read_dataset,
    save_model,
    write_dataset,
    write_report,
)
from .metrics import evaluate, measure_inference_time
from .model import HEAD_SIZES, fawn_forward
from .numerics import Rng, softmax_array, sigmoid_array
from .scene import ScattererModel, generate_dataset
from .training import NumericError, TrainConfig, split_dataset, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _err(msg: str):
    print(msg, file=sys.stderr)


def train_record_path(model_path) -> Path:
    """Sibling JSON written next to a trained model."""
    p = Path(model_path)
    return p.with_name(p.name + ".train.json")


# --- subcommands --------------------------------------------------------------


def cmd_generate(args) -> int:
    threads = int(os.environ.get("FAWN_THREADS", "1") or 1)
    samples = generate_dataset(args.n, args.seed, model=ScattererModel(sigma=args.noise), workers=threads)
    write_dataset(samples, args.out)
    kinds = Counter(
        {(False, False): "empty", (True, False): "person only", (False, True): "robot only", (True, True): "person+robot"}[
            (s.label.person_present, s.label.robot_present)
        ]
        for s in samples
    )
    print(f"wrote {len(samples)} samples to {args.out}")
    for kind in ("empty", "person only", "robot only", "person+robot"):
        print(f"  {kind:13s} {kinds.get(kind, 0)}")
    return EXIT_OK


def _load_config(args) -> TrainConfig:
    cfg = read_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    samples = read_dataset(args.data)
    tr, va, te = split_dataset(samples, cfg.split, cfg.seed)
    _err(f"split {len(tr)}/{len(va)}/{len(te)}, {cfg.epochs} epochs, batch {cfg.batch_size}")

    def progress(rec):
        _err(f"epoch {rec.epoch:4d}  train {rec.train_loss:.6f}  val {rec.val_loss:.6f}")

    result = train(tr, va, cfg, Rng(cfg.seed), on_epoch=progress)
    save_model(result.params, args.out)
    history = [vars(r) for r in result.history]
    dump_json(
        {
            "config": cfg.to_dict(),
            "split_sizes": [len(tr), len(va), len(te)],
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
            "history": history,
        },
        train_record_path(args.out),
    )
    print(f"best epoch {result.best_epoch} (val loss {result.best_val_loss:.6f}); model saved to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = load_model(args.model)
    samples = read_dataset(args.data)
    record = {}
    rec_path = train_record_path(args.model)
    if rec_path.exists():
        try:
            record = json.loads(rec_path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{rec_path}: not valid JSON ({exc})") from exc
    cfg = TrainConfig(**{k: v for k, v in record.get("config", {}).items() if k in ("seed", "split")})
    if args.seed is not None:
        cfg.seed = args.seed
    _, _, test = split_dataset(samples, cfg.split, cfg.seed)
    if not test:
        raise FormatError(f"{args.data}: test split is empty ({len(samples)} samples)")
    timing = {}
    if args.timing_reps:
        mean, stdev = measure_inference_time(params, test[0], args.timing_reps)
        timing = {"mean_us": mean, "stdev_us": stdev}
    report = evaluate(params, test, zero_wifi=args.zero_wifi, history=record.get("history", []), timing=timing)
    write_report(report, args.report)
    print(f"test samples  {report.n_test}")
    print(f"accuracy      {report.accuracy:.4f}")
    print(f"f1_macro      {report.f1_macro:.4f}")
    print(f"ecdf@0.6m     {report.ecdf_at(0.6):.4f}")
    print(f"ecdf@1.2m     {report.ecdf_at(1.2):.4f}")
    if timing:
        print(f"inference     {timing['mean_us']:.0f}±{timing['stdev_us']:.0f} us")
    for flag in report.flags:
        _err(f"note: {flag}")
    return EXIT_OK


def cmd_infer(args) -> int:
    params = load_model(args.model)
    samples = read_dataset(args.data)
    if not 0 <= args.index < len(samples):
        raise UsageError(f"--index {args.index} out of range for {len(samples)} samples")
    sample = samples[args.index]
    est = fawn_forward(sample, params)
    p_person, p_robot = sigmoid_array(est.presence)
    lines = [
        f"sample {args.index}",
        f"person present: {'yes' if est.person_present else 'no'} (p={p_person:.4f})",
        f"robot present:  {'yes' if est.robot_present else 'no'} (p={p_robot:.4f})",
    ]
    for who, cell in (("person", est.person_cell), ("robot", est.robot_cell)):
        x, y = CELL_SIZE * cell[0], CELL_SIZE * cell[1]
        lines.append(f"{who} cell: ({cell[0]}, {cell[1]}) center ({x:.1f} m, {y:.1f} m)")
    for head in HEAD_SIZES:
        if head == "presence":
            continue
        probs = softmax_array(getattr(est, head))
        top = np.argsort(-probs, kind="stable")[:3]
        lines.append(f"{head} top-3: " + ", ".join(f"{i}:{probs[i]:.4f}" for i in top))
    lab = sample.label
    lines.append(f"label: person={lab.person} robot={lab.robot}")
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fawn", description="Wi-Fi + 5G CSI scene inference")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="simulate a labelled CSI dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=_count, default=400)
    p.add_argument("--seed", type=_u64, default=42)
    p.add_argument("--noise", type=_nonneg_float, default=0.01)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train FAWN and save the best checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=_u64, default=None, help="overrides the config seed (default 42)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on the dataset's test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=_u64, default=None, help="split seed (default: the one used for training)")
    p.add_argument("--zero-wifi", action="store_true", help="blank the Wi-Fi input (5G-only ablation)")
    p.add_argument("--timing-reps", type=int, default=0, help="also time single-sample inference (>= 10)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="print the estimate for one dataset sample")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, required=True)
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "timing_reps", 0) and args.timing_reps < 10:
        _err("--timing-reps must be 0 or >= 10")
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        _err(f"error: {exc}")
        return EXIT_USAGE
    except (FormatError, ConfigError, OSError) as exc:
        _err(f"error: {exc}")
        return EXIT_DATA
    except NumericError as exc:
        _err(f"numeric failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
