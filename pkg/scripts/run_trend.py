"""Scaled-down GMAS vs baseline comparison on 8x8 mazes.

Collects (or loads) a 2e4-transition random-policy dataset, trains both
agents for 5e3 iterations on three seeds and writes trend.json.

    python scripts/run_trend.py --out runs/trend [--data d.bin]
"""

import argparse
import json
from dataclasses import asdict
from pathlib import Path

from gmaslab.harness import trend_comparison
from gmaslab.mazeenv import collect_offpolicy
from gmaslab.replay import ReplayBuffer


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/trend")
    p.add_argument("--data", default=None, help="GMASDATA file; collected in memory if absent")
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--eval-mazes", type=int, default=100)
    args = p.parse_args()

    buffer = (ReplayBuffer.load(args.data) if args.data
              else ReplayBuffer(collect_offpolicy(args.n, seed=0)))
    results = trend_comparison(buffer, args.seeds, args.iters, args.eval_mazes,
                               progress=lambda msg: print(msg, flush=True))
    wins = sum(r.gmas_not_worse for r in results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trend.json").write_text(json.dumps(
        {"results": [asdict(r) for r in results], "gmas_not_worse": wins,
         "seeds": len(results)}, indent=2))
    print(f"GMAS >= baseline in {wins}/{len(results)} seeds")


if __name__ == "__main__":
    main()
