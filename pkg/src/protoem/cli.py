"""Command-line entry point: ``protoem <subcommand> [flags]``.

Exit status is 0 on success, 1 on a failed check or runtime error and 2 on
a usage error. ``PROTO_SEED`` supplies the default seed; ``--seed`` wins.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, pgm, verify
from .config import RunConfig, TrainConfig, load_config
from .encoder import ConfigError, EncoderConfig
from .model_io import load_model, save_model
from .numerics import ContractError, NonFiniteError, checkpoint
from .numerics.checkpoint import CheckpointError
from .tasks import data as tdata
from .tasks.train import TrainingError, evaluate, train

log = logging.getLogger("protoem")


class UsageError(Exception):
    pass


def _env_seed():
    raw = os.environ.get("PROTO_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"PROTO_SEED must be an integer, got {raw!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="protoem", description=__doc__.splitlines()[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_):
        return sub.add_parser(name, help=help_, description=help_,
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    v = add("verify", "run randomised property suites and print a pass table")
    v.add_argument("--suite", choices=verify.SUITES + ("all",), default="all", help="suite to run")
    v.add_argument("--seed", type=int, default=None, help="base seed (default: PROTO_SEED or 0)")

    g = add("gen-data", "write a synthetic dataset, one sample file per example")
    g.add_argument("--task", choices=("flow", "depth"), required=True, help="toy task")
    g.add_argument("--count", type=int, required=True, help="number of samples")
    g.add_argument("--seed", type=int, default=None, help="dataset seed (default: PROTO_SEED or 0)")
    g.add_argument("--out", type=Path, required=True, help="output directory")

    t = add("train", "train an encoder and write its checkpoint and report")
    t.add_argument("--task", choices=("flow", "depth"), required=True, help="toy task")
    t.add_argument("--config", type=Path, default=None, help="INI config file; flags override it")
    t.add_argument("--out-checkpoint", type=Path, required=True, help="checkpoint path")
    t.add_argument("--report", type=Path, required=True, help="training report CSV path")
    t.add_argument("--data", type=Path, default=None,
                   help="dataset directory (default: generate --count samples from --seed)")
    t.add_argument("--count", type=int, default=None, help="samples to generate when --data is absent")
    t.add_argument("--seed", type=int, default=None, help="data and model seed (default: PROTO_SEED or 0)")
    t.add_argument("--max-steps", type=int, default=None, help="optimizer step budget")
    t.add_argument("--lr", type=float, default=None, help="peak learning rate")

    e = add("eval", "evaluate a checkpoint on the held-out split")
    e.add_argument("--checkpoint", type=Path, required=True, help="checkpoint path")
    e.add_argument("--data", type=Path, default=None,
                   help="dataset directory (default: regenerate --count samples from --seed)")
    e.add_argument("--count", type=int, default=TrainConfig.count, help="samples to regenerate")
    e.add_argument("--seed", type=int, default=None, help="dataset seed (default: PROTO_SEED or 0)")
    e.add_argument("--report", type=Path, required=True, help="metric report CSV path")

    b = add("bench", "count MACs and time prototyping against self-attention")
    b.add_argument("--sweep", default="default",
                   help="'default' (T = 256..16384 plus the T=25920 anchor) or comma-separated T values")
    b.add_argument("--out", type=Path, required=True, help="CSV output path")
    b.add_argument("--reps", type=int, default=5, help="timing repetitions (>= 5)")
    b.add_argument("--seed", type=int, default=None, help="input seed (default: PROTO_SEED or 0)")

    x = add("export-assignments", "write per-prototype assignment maps as PGM images")
    x.add_argument("--checkpoint", type=Path, required=True, help="checkpoint path")
    x.add_argument("--image", type=Path, required=True, help=".pgm image or .pfkt sample file")
    x.add_argument("--out-dir", type=Path, required=True, help="output directory")
    x.add_argument("--stage", type=int, default=1, help="encoder stage (1-based)")
    x.add_argument("--block", type=int, default=-1, help="block index within the stage")
    return p


def _seed(args):
    return args.seed if args.seed is not None else _env_seed()


def cmd_verify(args):
    checks = verify.run_suite(args.suite, seed=_seed(args))
    print(verify.format_table(checks))
    return 0 if all(c.passed for c in checks) else 1


def cmd_gen_data(args):
    if args.count < 1:
        raise UsageError("--count must be positive")
    samples = tdata.gen_dataset(args.task, args.count, _seed(args))
    paths = tdata.save_dataset(args.out, samples)
    print(f"wrote {len(paths)} {args.task} samples to {args.out}")
    return 0


def _dataset(args, task, count, seed):
    if args.data is not None:
        samples = tdata.load_dataset(args.data)
        if samples[0].task != task:
            raise UsageError(f"{args.data} holds {samples[0].task} samples, not {task}")
        return samples
    return tdata.gen_dataset(task, count, seed)


def cmd_train(args):
    run = load_config(args.config, args.task) if args.config else RunConfig(EncoderConfig(head=args.task))
    tc = run.train
    # --seed, then PROTO_SEED, then the config file
    if args.seed is not None:
        seed = args.seed
    elif "PROTO_SEED" in os.environ:
        seed = _env_seed()
    else:
        seed = tc.seed
    tc = replace(tc, seed=seed,
                 max_steps=args.max_steps if args.max_steps is not None else tc.max_steps,
                 lr=args.lr if args.lr is not None else tc.lr,
                 count=args.count if args.count is not None else tc.count)
    samples = _dataset(args, args.task, tc.count, tc.seed)
    model, report = train(run.encoder, samples, epochs=tc.epochs, lr=tc.lr, seed=tc.seed,
                          batch_size=tc.batch_size, max_steps=tc.max_steps, weight_decay=tc.weight_decay)
    save_model(args.out_checkpoint, model)
    report.write(args.report)
    print(report.summary())
    return 0


def cmd_eval(args):
    model = load_model(args.checkpoint)
    samples = _dataset(args, model.cfg.head, args.count, _seed(args))
    _, held_out = tdata.split(samples)
    metrics = evaluate(model, held_out or samples)
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write("metric,value\n")
        for k, v in metrics.items():
            fh.write(f"{k},{v!r}\n")
        fh.write("# " + json.dumps({"task": model.cfg.head, "samples": len(held_out), **metrics},
                                   sort_keys=True) + "\n")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _sweep_grid(text):
    if text == "default":
        return bench.DEFAULT_GRID, True
    try:
        grid = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"--sweep must be 'default' or comma-separated integers, got {text!r}") from None
    if not grid or min(grid) < 1:
        raise UsageError("--sweep values must be positive")
    return grid, False


def cmd_bench(args):
    grid, anchor = _sweep_grid(args.sweep)
    if args.reps < 5:
        raise UsageError("--reps must be at least 5")
    try:
        points = bench.run_sweep(grid, reps=args.reps, seed=_seed(args), anchor=anchor)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    bench.write_csv(points, args.out)
    if len([p for p in points if not np.isnan(p.self_ns)]) >= 2:
        sp, ss = bench.sweep_slopes(points)
        print(f"log-log slope: prototyping {sp:.3f}, self-attention {ss:.3f}")
    print(f"wrote {len(points)} rows to {args.out}")
    return 0


def _load_image(path):
    if path.suffix.lower() == ".pfkt":
        t = checkpoint.load(path)
        if "frame1" not in t:
            raise UsageError(f"{path} has no frame1 tensor")
        return t["frame1"]
    return pgm.read_image(path)


def assignment_for(model, image, stage=1, block=-1):
    """Assignment matrix (K, T) and token grid of one block for a single image."""
    if image.ndim == 2:
        image = image[..., None]
    _, diags = model.encode(np.asarray(image, dtype=np.float64)[None])
    blocks = [d for d in diags if d["stage"] == stage]
    if not blocks:
        raise UsageError(f"no stage {stage}")
    try:
        d = blocks[block]
    except IndexError:
        raise UsageError(f"stage {stage} has no block {block}") from None
    h, w = d["grid"]
    return d["assignment"][0], h, w


def cmd_export(args):
    model = load_model(args.checkpoint)
    image = _load_image(args.image)
    m, h, w = assignment_for(model, image, args.stage, args.block)
    paths = pgm.export_assignments(m, h, w, args.out_dir)
    print(f"wrote {len(paths)} images ({m.shape[0]} prototypes on a {h}x{w} grid) to {args.out_dir}")
    return 0


COMMANDS = {"verify": cmd_verify, "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench, "export-assignments": cmd_export}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"protoem {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, CheckpointError, ContractError, NonFiniteError, TrainingError, ValueError) as exc:
        print(f"protoem {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
