"""Independent reference computations used to check the fast paths.

Nothing here calls the planner recursion or the reverse-mode engine's
backward pass: finite differences use forward evaluations only and the
planner oracle enumerates action sequences explicitly.
"""

from __future__ import annotations

import itertools
from collections import deque
from typing import Callable

import numpy as np

from .diffcore import no_record
from .nets import AgentNets, NetConfig


def central_diff(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5,
                 coords: np.ndarray | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (all coordinates or a flat subset)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(coords)
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        out[j] = (fp - fm) / (2.0 * h)
    return out if coords is not None else out.reshape(x.shape)


def rel_err(a, b, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def random_model(seed: int, obs_dim: int = 12, n_x: int = 3, gain: float = 1.5,
                 hidden: tuple[int, ...] = (16, 12)) -> AgentNets:
    """Small randomly initialised agent; weights scaled by ``gain`` for non-trivial curvature."""
    cfg = NetConfig(obs_dim=obs_dim, n_x=n_x, encoder_hidden=(16,), head_hidden=hidden,
                    transition_hidden=(12,))
    nets = AgentNets(cfg, seed=seed)
    rng = np.random.default_rng(seed + 7919)
    for name, p in nets.named_parameters().items():
        if name.startswith("q_frozen"):
            continue
        p.data = p.data * gain + (rng.normal(0, 0.3, p.shape) if name.endswith(".b") else 0.0)
    nets.sync_frozen()
    rng2 = np.random.default_rng(seed + 104729)
    for p in nets.q_frozen.parameters():
        p.data = p.data + rng2.normal(0, 0.2, p.shape)
    return nets


def _one(nets, method, x, a):
    with no_record():
        return getattr(nets, method)(x[None], np.array([a])).data[0]


def path_value(nets: AgentNets, x: np.ndarray, actions, frozen: bool = True) -> float:
    """Return of a fixed action sequence: rho + g * (rho' + g' * (... + Q(x_d, a_d)))."""
    x = np.asarray(x, dtype=np.float64)
    *moves, last = list(actions)
    rewards, discounts = [], []
    for a in moves:
        rewards.append(_one(nets, "predict_reward", x, a))
        discounts.append(_one(nets, "predict_discount", x, a))
        x = _one(nets, "predict_next", x, a)
    with no_record():
        value = nets.q_values(x[None], frozen).data[0, last]
    for r, g in zip(reversed(rewards), reversed(discounts)):
        value = r + g * value
    return float(value)


def enumerate_q(nets: AgentNets, x: np.ndarray, a: int, d: int, frozen: bool = False) -> float:
    """max over all |A|^d continuations of the fixed-sequence return (no pruning)."""
    n_a = nets.config.n_actions
    return max(path_value(nets, x, (a, *tail), frozen)
               for tail in itertools.product(range(n_a), repeat=d))


def enumerate_best_path(nets: AgentNets, x: np.ndarray, a: int, d: int,
                        frozen: bool = False) -> tuple[int, ...]:
    n_a = nets.config.n_actions
    tails = list(itertools.product(range(n_a), repeat=d))
    vals = [path_value(nets, x, (a, *t), frozen) for t in tails]
    return tails[int(np.argmax(vals))]


def bfs_reachable(walls: np.ndarray, start, goal) -> int:
    """Shortest path length from ``start`` to ``goal`` on free cells, or -1."""
    seen = {tuple(start): 0}
    queue = deque([tuple(start)])
    while queue:
        cur = queue.popleft()
        if cur == tuple(goal):
            return seen[cur]
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (cur[0] + dr, cur[1] + dc)
            if 0 <= n[0] < walls.shape[0] and 0 <= n[1] < walls.shape[1] \
                    and not walls[n] and n not in seen:
                seen[n] = seen[cur] + 1
                queue.append(n)
    return -1
