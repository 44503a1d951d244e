"""Depth-limited expansion and backup in the learned abstract model.

Values are computed batch-wise in numpy: a batch of abstract states [B, n_x]
is expanded for every action at once, so a depth-d backup costs |A|^d
network evaluations per state but only d Python-level recursions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import no_record
from .nets import AgentNets


@dataclass(frozen=True)
class PlanConfig:
    depth: int = 0
    branching: int | None = None  # None expands every action
    denominator: str = "d+1"  # "d+1": true mean; "d": sum / D (D=0 treated as 1)
    jacobian_mode: str = "residual"  # or "paper"
    gamma_prime: float | None = None

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("planning depth must be >= 0")
        if self.branching is not None and self.branching < 1:
            raise ValueError("branching must be >= 1")
        if self.denominator not in ("d+1", "d"):
            raise ValueError(f"unknown denominator mode {self.denominator!r}")
        if self.jacobian_mode not in ("residual", "paper"):
            raise ValueError(f"unknown jacobian mode {self.jacobian_mode!r}")
        if self.gamma_prime is not None and not 0.0 < self.gamma_prime <= 1.0:
            raise ValueError("gamma_prime must lie in (0, 1]")

    def norm(self) -> float:
        return float(self.depth + 1 if self.denominator == "d+1" else max(self.depth, 1))


@dataclass
class PlanTree:
    root: np.ndarray
    q_by_depth: np.ndarray  # [D+1, A]: Q^d(root, a)
    best_actions: dict[int, dict[int, int]] = field(default_factory=dict)  # a -> level -> a''
    branching: int | None = None


def _batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    return (x[None], True) if x.ndim == 1 else (x, False)


def model_step(nets: AgentNets, x: np.ndarray, a: np.ndarray):
    """(reward, discount, next state) predicted for a batch."""
    with no_record():
        return (nets.predict_reward(x, a).data, nets.predict_discount(x, a).data,
                nets.predict_next(x, a).data)


def expansion_mask(nets: AgentNets, x: np.ndarray, frozen: bool,
                   branching: int | None) -> np.ndarray:
    """Actions kept at each node: the top-b by model-free Q (lowest index on ties)."""
    n_a = nets.config.n_actions
    if branching is None or branching >= n_a:
        return np.ones((len(x), n_a), dtype=bool)
    with no_record():
        q0 = nets.q_values(x, frozen).data
    keep = np.argsort(-q0, axis=-1, kind="stable")[:, :branching]
    mask = np.zeros(q0.shape, dtype=bool)
    np.put_along_axis(mask, keep, True, axis=-1)
    return mask


def _child_values(nets, xn, d, frozen, branching) -> np.ndarray:
    vals = q_values_at_depth(nets, xn, d, frozen, branching)
    return np.where(expansion_mask(nets, xn, frozen, branching), vals, -np.inf)


def q_values_at_depth(nets: AgentNets, x, d: int, frozen: bool = False,
                      branching: int | None = None) -> np.ndarray:
    """Q^d(x, a) for every action: [B, A] (or [A] for a single state)."""
    xb, single = _batch(x)
    if d < 0:
        raise ValueError("depth must be >= 0")
    if d == 0:
        with no_record():
            out = nets.q_values(xb, frozen).data
    else:
        n_a = nets.config.n_actions
        xr = np.repeat(xb, n_a, axis=0)
        ar = np.tile(np.arange(n_a), len(xb))
        r, g, xn = model_step(nets, xr, ar)
        best = _child_values(nets, xn, d - 1, frozen, branching).max(axis=-1)
        out = (r + g * best).reshape(len(xb), n_a)
    return out[0] if single else out


def q_at_depth(nets: AgentNets, x, a, d: int, frozen: bool = False,
               branching: int | None = None) -> np.ndarray:
    """Q^d(x, a) = rho(x,a) + g(x,a) * max_{a' in A*} Q^{d-1}(x', a'); Q^0 is the model-free Q."""
    xb, single = _batch(x)
    ab = np.atleast_1d(np.asarray(a))
    if d < 0:
        raise ValueError("depth must be >= 0")
    if d == 0:
        with no_record():
            out = nets.q_value(xb, ab, frozen).data
    else:
        r, g, xn = model_step(nets, xb, ab)
        out = r + g * _child_values(nets, xn, d - 1, frozen, branching).max(axis=-1)
    return out[0] if single else out


def best_actions(nets: AgentNets, x, a, d: int, frozen: bool = False,
                 branching: int | None = None) -> dict[int, np.ndarray]:
    """Backup argmax along the greedy path below (x, a).

    Key ``k`` holds the action a'' picked at the node that still has ``k - 1``
    levels of lookahead, i.e. the child of the level-``k`` expansion.
    """
    if d < 1:
        raise ValueError("best actions need depth >= 1")
    xb, single = _batch(x)
    ab = np.atleast_1d(np.asarray(a))
    out: dict[int, np.ndarray] = {}
    for level in range(d, 0, -1):
        _, _, xn = model_step(nets, xb, ab)
        ab = np.argmax(_child_values(nets, xn, level - 1, frozen, branching), axis=-1)
        out[level] = ab[0] if single else ab
        xb = xn
    return out


def q_plan_values(nets: AgentNets, x, config: PlanConfig, frozen: bool = False) -> np.ndarray:
    """Average of Q^0..Q^D for every action."""
    total = sum(q_values_at_depth(nets, x, d, frozen, config.branching)
                for d in range(config.depth + 1))
    return total / config.norm()


def q_plan(nets: AgentNets, x, a, config: PlanConfig, frozen: bool = False) -> np.ndarray:
    total = sum(q_at_depth(nets, x, a, d, frozen, config.branching)
                for d in range(config.depth + 1))
    return total / config.norm()


def act(nets: AgentNets, x, config: PlanConfig) -> np.ndarray:
    """Greedy action under the planning estimate; ties go to the lowest index."""
    return np.argmax(q_plan_values(nets, x, config), axis=-1)


def plan(nets: AgentNets, x, config: PlanConfig, frozen: bool = False) -> PlanTree:
    """Per-depth estimates and backup actions for a single root state."""
    x = np.asarray(x, dtype=np.float64)
    q = np.stack([q_values_at_depth(nets, x, d, frozen, config.branching)
                  for d in range(config.depth + 1)])
    tree = PlanTree(root=x, q_by_depth=q, branching=config.branching)
    if config.depth >= 1:
        for a in range(nets.config.n_actions):
            path = best_actions(nets, x, a, config.depth, frozen, config.branching)
            tree.best_actions[a] = {k: int(v) for k, v in path.items()}
    return tree
