"""Command line: collect | train | eval | plot | verify."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .harness import METRICS_HEADER, RunConfig, evaluate, train
from .mazeenv import MazeConfig, write_dataset
from .nets import AgentNets
from .replay import read_header


def _depth(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("depth must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmaslab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", help="write random-policy transitions to a GMASDATA file")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.add_argument("--maze-size", type=int, default=8)

    t = sub.add_parser("train", help="train on a dataset, writing metrics.csv and final.ckpt")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--data", required=True)
    t.add_argument("--iters", type=int, default=5000)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--alpha", type=float, default=None,
                   help="matching weight; 0 is the CRAR baseline (default: 0.05 cosine, 1.0 l2)")
    t.add_argument("--dist", choices=("cosine", "l2"), default="cosine")
    t.add_argument("--train-depth", type=_depth, default=0)
    t.add_argument("--eval-depth", type=_depth, default=0)
    t.add_argument("--jacobian", choices=("residual", "paper"), default="residual")
    t.add_argument("--gamma-prime", type=float, default=None)
    t.add_argument("--branching", type=int, default=None)
    t.add_argument("--freeze", type=int, default=1000)
    t.add_argument("--eval-every", type=int, default=1000)
    t.add_argument("--eval-mazes", type=int, default=50)
    t.add_argument("--eval-seed", type=int, default=10_000)
    t.add_argument("--wall-clock", action="store_true",
                   help="fill the seconds column (makes metrics.csv run-dependent)")
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint on fresh mazes")
    e.add_argument("checkpoint")
    e.add_argument("--depth", type=_depth, default=0)
    e.add_argument("--mazes", type=int, default=100)
    e.add_argument("--seed", type=int, default=10_000)
    e.add_argument("--branching", type=int, default=None)

    pl = sub.add_parser("plot", help="emit a plot script (and optionally a PNG) for metrics CSVs")
    pl.add_argument("metrics", nargs="+", help="metrics.csv files; label with LABEL=path")
    pl.add_argument("--out", required=True, help="output directory")
    pl.add_argument("--png", action="store_true", help="also render with matplotlib")

    v = sub.add_parser("verify", help="run the finite-difference and enumeration oracles")
    v.add_argument("--quick", action="store_true")
    return p


def cmd_collect(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, args.n, args.seed, MazeConfig(size=args.maze_size))
    print(f"wrote {read_header(out)['n']} transitions to {out}")
    return 0


def cmd_train(args) -> int:
    alpha = args.alpha if args.alpha is not None else {"cosine": 0.05, "l2": 1.0}[args.dist]
    cfg = RunConfig(seed=args.seed, data=args.data, iterations=args.iters,
                    batch_size=args.batch, lr=args.lr, alpha=alpha, dist=args.dist,
                    train_depth=args.train_depth, eval_depth=args.eval_depth,
                    jacobian_mode=args.jacobian, gamma_prime=args.gamma_prime,
                    branching=args.branching, freeze_interval=args.freeze,
                    eval_every=args.eval_every, eval_mazes=args.eval_mazes,
                    eval_seed=args.eval_seed, out=args.out, wall_clock=args.wall_clock)
    res = train(cfg, progress=lambda r: print(
        f"iter {r['iteration']:>6}  eval {r['eval_mean']:+.3f} +/- {r['eval_std']:.3f}  "
        f"mf {r['loss_mf']:.4f}  gmas {r['loss_gmas']:.4f}", flush=True))
    print(f"metrics: {res.out_dir / 'metrics.csv'}")
    return 0


def cmd_eval(args) -> int:
    nets = AgentNets.load(args.checkpoint)
    res = evaluate(nets, args.depth, args.mazes, args.seed, branching=args.branching)
    print(json.dumps({"mean": res.mean, "std": res.std, "scores": res.scores}))
    return 0


PLOT_TEMPLATE = '''"""Plot evaluation score and losses from gmaslab metrics files."""
import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

RUNS = {runs!r}


def load(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
for label, path in RUNS.items():
    rows = load(path)
    it = [int(r["iteration"]) for r in rows]
    axes[0].plot(it, [float(r["eval_mean"]) for r in rows], label=label)
    axes[1].plot(it, [float(r["loss_mf"]) for r in rows], label=label)
    axes[2].plot(it, [float(r["loss_tau"]) for r in rows], label=label)
for ax, title in zip(axes, ("eval score", "model-free TD loss", "transition loss")):
    ax.set_title(title)
    ax.set_xlabel("iteration")
axes[0].legend()
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else {png!r}, dpi=120)
'''


def cmd_plot(args) -> int:
    runs = {}
    for item in args.metrics:
        label, _, path = item.rpartition("=")
        path = Path(path)
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
        if header != METRICS_HEADER:
            raise ValueError(f"{path}: not a metrics file")
        runs[label or path.parent.name or path.stem] = str(path.resolve())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    png = str((out / "metrics.png").resolve())
    script = out / "plot_metrics.py"
    script.write_text(PLOT_TEMPLATE.format(runs=runs, png=png))
    print(f"wrote {script}")
    if args.png:
        import runpy
        sys_argv = sys.argv
        try:
            sys.argv = [str(script), png]
            runpy.run_path(str(script), run_name="__main__")
        finally:
            sys.argv = sys_argv
        print(f"wrote {png}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all
    results = run_all(quick=args.quick)
    failed = [r.name for r in results if not r.passed]
    print("all checks passed" if not failed else f"{len(failed)} check(s) failed")
    return 1 if failed else 0


COMMANDS = {"collect": cmd_collect, "train": cmd_train, "eval": cmd_eval,
            "plot": cmd_plot, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError) as err:
        print(f"gmaslab {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
