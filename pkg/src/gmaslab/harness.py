"""Training loop, evaluation and metrics for the offline maze experiment."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import Adam, Graph, Tensor
from .gmas import loss_gmas, loss_td
from .mazeenv import EvalResult, MazeConfig, eval_seeds, render, run_episodes
from .nets import AgentNets, NetConfig, ddqn_target, loss_crar, loss_entropy, loss_linf
from .planner import PlanConfig, act
from .replay import ReplayBuffer

log = logging.getLogger(__name__)

METRICS_HEADER = ["iteration", "loss_r", "loss_g", "loss_tau", "loss_d1", "loss_d2",
                  "loss_mf", "loss_gmas", "eval_mean", "eval_std", "seconds"]
LOSS_NAMES = METRICS_HEADER[1:8]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    reward: float = 1.0
    discount: float = 1.0
    transition: float = 1.0
    entropy: float = 0.2
    linf: float = 1.0
    modelfree: float = 1.0


@dataclass
class RunConfig:
    seed: int = 0
    data: str = "data.bin"
    iterations: int = 5000
    batch_size: int = 32
    lr: float = 1e-3
    freeze_interval: int = 1000
    train_depth: int = 0
    eval_depth: int = 0
    alpha: float = 0.0
    dist: str = "cosine"
    jacobian_mode: str = "residual"
    gamma_prime: float | None = None
    branching: int | None = None
    eval_every: int = 1000
    eval_mazes: int = 50
    eval_seed: int = 10_000
    c_d: float = 5.0
    n_x: int = 3
    maze_size: int = 8
    weights: LossWeights = field(default_factory=LossWeights)
    out: str | None = None
    wall_clock: bool = False

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        for name in ("iterations", "batch_size", "freeze_interval", "eval_every", "eval_mazes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0 (0 is the CRAR baseline)")
        if self.dist not in ("cosine", "l2"):
            raise ValueError(f"unknown distance {self.dist!r}")
        self.train_plan  # validates depth/mode/gamma'

    @property
    def train_plan(self) -> PlanConfig:
        return PlanConfig(depth=self.train_depth, branching=self.branching,
                          jacobian_mode=self.jacobian_mode, gamma_prime=self.gamma_prime)

    @property
    def eval_plan(self) -> PlanConfig:
        return PlanConfig(depth=self.eval_depth, branching=self.branching)


def planner_policy(nets: AgentNets, plan: PlanConfig):
    def policy(states):
        obs = np.stack([render(s).reshape(-1) for s in states])
        with dc.no_record():
            x = nets.encode(obs).data
        return act(nets, x, plan)
    return policy


def evaluate(nets: AgentNets, eval_depth: int, n_mazes: int, seed: int,
             maze: MazeConfig = MazeConfig(), branching: int | None = None) -> EvalResult:
    """Greedy planner play on ``n_mazes`` fresh mazes (depth 0 = model-free Q only)."""
    plan = PlanConfig(depth=eval_depth, branching=branching)
    return run_episodes(planner_policy(nets, plan), eval_seeds(seed, n_mazes), maze)


class Trainer:
    """One optimizer step per iteration over the summed loss stack."""

    def __init__(self, config: RunConfig, buffer: ReplayBuffer):
        self.config = config
        self.buffer = buffer
        init_seq, sample_seq = np.random.SeedSequence(config.seed).spawn(2)
        self.nets = AgentNets(NetConfig(n_x=config.n_x),
                              seed=int(init_seq.generate_state(1)[0]))
        self.rng = np.random.default_rng(sample_seq)
        self.opt = Adam(self.nets.trainable(), lr=config.lr)
        self.iteration = 0
        self.last_backward_nodes = 0

    def losses(self) -> tuple[dict[str, Tensor], Graph]:
        c, nets = self.config, self.nets
        batch = self.buffer.sample_batch(c.batch_size, self.rng)
        s1, s2 = self.buffer.sample_state_pairs(c.batch_size, self.rng, first=batch.s)
        g = Graph()
        with g:
            x = nets.encode(s1)
            x_next = nets.encode(batch.s_next)
            x_other = nets.encode(s2)
            l_r, l_g, l_tau = loss_crar(nets, batch, x, x_next)
            out = {
                "loss_r": l_r, "loss_g": l_g, "loss_tau": l_tau,
                "loss_d1": loss_entropy(x, x_other, c.c_d),
                "loss_d2": loss_linf(x),
                "loss_mf": loss_td(nets, batch, x, ddqn_target(nets, batch, x_next.data)),
            }
            if c.alpha > 0:
                out["loss_gmas"] = loss_gmas(nets, batch, c.train_plan, c.alpha, c.dist, x)
        return out, g

    def step(self) -> dict[str, float]:
        c, w = self.config, self.config.weights
        self.iteration += 1
        parts, g = self.losses()
        values = {k: float(v.item()) for k, v in parts.items()}
        for name, v in values.items():
            if not math.isfinite(v):
                raise TrainingDiverged(f"iteration {self.iteration}: {name} is {v}")
        weights = {"loss_r": w.reward, "loss_g": w.discount, "loss_tau": w.transition,
                   "loss_d1": w.entropy, "loss_d2": w.linf, "loss_mf": w.modelfree,
                   "loss_gmas": w.modelfree}
        with g:
            total = None
            for name, t in parts.items():
                term = dc.scale(t, weights[name])
                total = term if total is None else dc.add(total, term)
            grads = dc.gradient(total, self.opt.params)
        self.last_backward_nodes = g.backward_nodes
        try:
            self.opt.step(grads)
        except dc.DivergenceError as err:
            raise TrainingDiverged(f"iteration {self.iteration}: {err}") from None
        if self.iteration % c.freeze_interval == 0:
            self.nets.sync_frozen()
        values.setdefault("loss_gmas", 0.0)
        return values

    def evaluate(self) -> EvalResult:
        c = self.config
        return evaluate(self.nets, c.eval_depth, c.eval_mazes, c.eval_seed,
                        MazeConfig(size=c.maze_size), c.branching)


@dataclass
class TrainResult:
    nets: AgentNets
    rows: list[dict]
    out_dir: Path | None


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def train(config: RunConfig, buffer: ReplayBuffer | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Run the full loop; writes metrics.csv, config.json and final.ckpt under ``config.out``."""
    if buffer is None:
        path = Path(config.data)
        if not path.exists():
            raise FileNotFoundError(f"dataset {path} not found")
        buffer = ReplayBuffer.load(path)
    trainer = Trainer(config, buffer)
    out_dir = Path(config.out) if config.out else None
    writer = fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(asdict(config), indent=2, sort_keys=True))
        fh = open(out_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)

    rows: list[dict] = []
    sums = dict.fromkeys(LOSS_NAMES, 0.0)
    count = 0
    start = time.perf_counter()
    try:
        for i in range(1, config.iterations + 1):
            vals = trainer.step()
            for k in LOSS_NAMES:
                sums[k] += vals[k]
            count += 1
            if i % config.eval_every == 0 or i == config.iterations:
                res = trainer.evaluate()
                row = {"iteration": i, **{k: sums[k] / count for k in LOSS_NAMES},
                       "eval_mean": res.mean, "eval_std": res.std,
                       "seconds": time.perf_counter() - start if config.wall_clock else ""}
                rows.append(row)
                if writer is not None:
                    writer.writerow([_fmt(row[k]) for k in METRICS_HEADER])
                    fh.flush()
                if progress is not None:
                    progress(row)
                log.info("iter %d eval %.3f", i, res.mean)
                sums = dict.fromkeys(LOSS_NAMES, 0.0)
                count = 0
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        trainer.nets.save(out_dir / "final.ckpt")
    return TrainResult(trainer.nets, rows, out_dir)


@dataclass
class TrendResult:
    seed: int
    gmas: float
    baseline: float

    @property
    def gmas_not_worse(self) -> bool:
        return self.gmas >= self.baseline


def trend_comparison(buffer: ReplayBuffer, seeds=(0, 1, 2), iterations: int = 5000,
                     eval_mazes: int = 100, eval_seed: int = 10_000, dist: str = "cosine",
                     alpha: float = 0.05, train_depth: int = 1,
                     progress: Callable[[str], None] | None = None) -> list[TrendResult]:
    """GMAS vs the alpha = 0 baseline at equal budget, scored once at the end with Q only."""
    out = []
    for seed in seeds:
        scores = {}
        for label, a in (("gmas", alpha), ("baseline", 0.0)):
            cfg = RunConfig(seed=seed, iterations=iterations, eval_every=iterations,
                            eval_mazes=eval_mazes, eval_seed=eval_seed, alpha=a, dist=dist,
                            train_depth=train_depth if a > 0 else 0, eval_depth=0)
            scores[label] = train(cfg, buffer).rows[-1]["eval_mean"]
            if progress is not None:
                progress(f"seed {seed} {label}: {scores[label]:+.3f}")
        out.append(TrendResult(seed, scores["gmas"], scores["baseline"]))
    return out
