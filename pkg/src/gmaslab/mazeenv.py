"""Procedurally generated key-finding labyrinths.

A maze is a square grid whose border is solid wall.  The interior is carved
by a randomized depth-first search, so every free cell is reachable from every
other.  The agent moves in four directions; stepping onto the key pays +1 and
ends the episode, every other transition (including bumping a wall) costs 0.1.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

ACTIONS = ("up", "down", "left", "right")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
N_ACTIONS = len(ACTIONS)

OBS_SIZE = 48
OBS_DIM = OBS_SIZE * OBS_SIZE

WALL_LEVEL, FREE_LEVEL, KEY_LEVEL, AGENT_LEVEL = -1.0, 0.0, 0.5, 1.0
KEY_REWARD = 1.0
STEP_REWARD = -0.1
GAMMA_ENV = 0.9
EPISODE_CAP = 50


@dataclass(frozen=True)
class MazeConfig:
    size: int = 8  # full grid side, border included
    gamma: float = GAMMA_ENV
    episode_cap: int = EPISODE_CAP

    def __post_init__(self):
        if self.size < 4:
            raise ValueError(f"maze size {self.size} too small")
        if OBS_SIZE % self.size:
            raise ValueError(f"maze size {self.size} does not divide {OBS_SIZE}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def block(self) -> int:
        return OBS_SIZE // self.size


@dataclass(frozen=True, eq=False)
class MazeState:
    walls: np.ndarray  # bool [size, size], True = wall
    agent: tuple[int, int]
    key: tuple[int, int]
    steps_taken: int = 0

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    @property
    def width(self) -> int:
        return self.walls.shape[1]

    @property
    def terminal(self) -> bool:
        return self.agent == self.key


class StepResult(NamedTuple):
    state: MazeState
    observation: np.ndarray
    reward: float
    discount: float
    terminal: bool


def _carve(rng: np.random.Generator, size: int) -> np.ndarray:
    walls = np.ones((size, size), dtype=bool)

    def inside(r, c):
        return 1 <= r < size - 1 and 1 <= c < size - 1

    def open_neighbours(r, c):
        return sum(not walls[r + dr, c + dc] for dr, dc in MOVES)

    start = (int(rng.integers(1, size - 1)), int(rng.integers(1, size - 1)))
    walls[start] = False
    stack = [start]
    while stack:
        r, c = stack[-1]
        options = [(r + dr, c + dc) for dr, dc in MOVES
                   if inside(r + dr, c + dc) and walls[r + dr, c + dc]
                   and open_neighbours(r + dr, c + dc) == 1]
        if not options:
            stack.pop()
            continue
        nxt = options[int(rng.integers(len(options)))]
        walls[nxt] = False
        stack.append(nxt)
    return walls


def generate(seed: int, config: MazeConfig = MazeConfig()) -> MazeState:
    """A fresh maze; the same seed always yields the same maze."""
    rng = np.random.default_rng(seed)
    walls = _carve(rng, config.size)
    free = np.argwhere(~walls)
    i, j = rng.choice(len(free), size=2, replace=False)
    agent = (int(free[i][0]), int(free[i][1]))
    key = (int(free[j][0]), int(free[j][1]))
    return MazeState(walls=walls, agent=agent, key=key)


def render(state: MazeState) -> np.ndarray:
    """48x48 grayscale observation with one uniform block per cell."""
    size = state.height
    if state.width != size or OBS_SIZE % size:
        raise ValueError(f"cannot render a {state.height}x{state.width} grid at {OBS_SIZE}px")
    grid = np.where(state.walls, WALL_LEVEL, FREE_LEVEL)
    grid[state.key] = KEY_LEVEL
    grid[state.agent] = AGENT_LEVEL
    b = OBS_SIZE // size
    return np.repeat(np.repeat(grid, b, axis=0), b, axis=1)


def step(state: MazeState, action: int, gamma: float = GAMMA_ENV) -> StepResult:
    if state.terminal:
        raise ValueError("step on a terminal state")
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"invalid action {action}")
    dr, dc = MOVES[action]
    r, c = state.agent[0] + dr, state.agent[1] + dc
    agent = state.agent if state.walls[r, c] else (r, c)
    nxt = replace(state, agent=agent, steps_taken=state.steps_taken + 1)
    if nxt.terminal:
        return StepResult(nxt, render(nxt), KEY_REWARD, 0.0, True)
    return StepResult(nxt, render(nxt), STEP_REWARD, gamma, False)


def bfs_distances(state: MazeState, source: tuple[int, int] | None = None) -> np.ndarray:
    """Shortest move counts from ``source`` (default: the key); -1 if unreachable."""
    src = state.key if source is None else source
    dist = np.full(state.walls.shape, -1, dtype=int)
    dist[src] = 0
    queue = deque([src])
    while queue:
        r, c = queue.popleft()
        for dr, dc in MOVES:
            n = (r + dr, c + dc)
            if not state.walls[n] and dist[n] < 0:
                dist[n] = dist[r, c] + 1
                queue.append(n)
    return dist


def optimal_policy(state: MazeState) -> int:
    """Greedy descent of the BFS distance to the key (lowest index on ties)."""
    dist = bfs_distances(state)
    best, best_d = 0, None
    for a, (dr, dc) in enumerate(MOVES):
        n = (state.agent[0] + dr, state.agent[1] + dc)
        if state.walls[n]:
            continue
        if best_d is None or dist[n] < best_d:
            best, best_d = a, dist[n]
    return best


# -- off-policy data ----------------------------------------------------------

class Transition(NamedTuple):
    s: np.ndarray
    a: int
    r: float
    gamma: float
    s_next: np.ndarray


@dataclass
class TransitionBatch:
    """Struct-of-arrays view of transitions; observations are flat [n, 2304]."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    gamma: np.ndarray
    s_next: np.ndarray

    def __len__(self) -> int:
        return len(self.a)

    def __getitem__(self, i: int) -> Transition:
        return Transition(self.s[i], int(self.a[i]), float(self.r[i]),
                          float(self.gamma[i]), self.s_next[i])

    def __iter__(self) -> Iterator[Transition]:
        return (self[i] for i in range(len(self)))


def iter_offpolicy(n: int, seed: int, config: MazeConfig = MazeConfig(),
                   chunk: int = 4096) -> Iterator[TransitionBatch]:
    """Uniform-random-policy transitions in chunks; a new maze on every reset."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)

    def reset():
        st = generate(int(rng.integers(2**63)), config)
        return st, render(st)

    state, obs = reset()
    done = 0
    while done < n:
        m = min(chunk, n - done)
        s = np.empty((m, OBS_DIM), np.float32)
        s2 = np.empty((m, OBS_DIM), np.float32)
        a = rng.integers(N_ACTIONS, size=m).astype(np.uint8)
        r = np.empty(m, np.float32)
        g = np.empty(m, np.float32)
        for i in range(m):
            res = step(state, int(a[i]), config.gamma)
            s[i] = obs.reshape(-1)
            s2[i] = res.observation.reshape(-1)
            r[i] = res.reward
            g[i] = res.discount
            if res.terminal or res.state.steps_taken >= config.episode_cap:
                state, obs = reset()
            else:
                state, obs = res.state, res.observation
        done += m
        yield TransitionBatch(s, a, r, g, s2)


def collect_offpolicy(n: int, seed: int, config: MazeConfig = MazeConfig()) -> TransitionBatch:
    parts = list(iter_offpolicy(n, seed, config))
    return TransitionBatch(*(np.concatenate([getattr(p, f) for p in parts])
                             for f in ("s", "a", "r", "gamma", "s_next")))


DATA_MAGIC = b"GMASDATA"
DATA_VERSION = 1
HEADER = struct.Struct("<8sIQI")
RECORD_DTYPE = np.dtype([
    ("obs", "<f4", (OBS_DIM,)),
    ("action", "u1"),
    ("reward", "<f4"),
    ("discount", "<f4"),
    ("next_obs", "<f4", (OBS_DIM,)),
])


def write_dataset(path: str | Path, n: int, seed: int, config: MazeConfig = MazeConfig()) -> None:
    """Stream ``n`` random-policy transitions to a GMASDATA file."""
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(DATA_MAGIC, DATA_VERSION, n, OBS_DIM))
        for part in iter_offpolicy(n, seed, config):
            rec = np.empty(len(part), RECORD_DTYPE)
            rec["obs"] = part.s
            rec["action"] = part.a
            rec["reward"] = part.r
            rec["discount"] = part.gamma
            rec["next_obs"] = part.s_next
            fh.write(rec.tobytes())


# -- evaluation ---------------------------------------------------------------

@dataclass
class EvalResult:
    mean: float
    scores: list[float] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)

    @property
    def std(self) -> float:
        return float(np.std(self.scores)) if self.scores else 0.0


def eval_seeds(seed: int, n_mazes: int) -> list[int]:
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2**31 - 1, size=n_mazes)]


def run_episodes(policy: Callable[[Sequence[MazeState]], Sequence[int]], seeds: Sequence[int],
                 config: MazeConfig = MazeConfig()) -> EvalResult:
    """Play one episode per seed in lockstep; ``policy`` maps live states to actions."""
    states = [generate(s, config) for s in seeds]
    scores = [0.0] * len(states)
    lengths = [0] * len(states)
    live = list(range(len(states)))
    for _ in range(config.episode_cap):
        if not live:
            break
        actions = policy([states[i] for i in live])
        still = []
        for i, a in zip(live, actions):
            res = step(states[i], int(a), config.gamma)
            states[i] = res.state
            scores[i] += res.reward
            lengths[i] += 1
            if not res.terminal:
                still.append(i)
        live = still
    return EvalResult(float(np.mean(scores)), scores, lengths)


def evaluate_policy(policy: Callable[[MazeState], int], n_mazes: int, seed: int,
                    config: MazeConfig = MazeConfig()) -> EvalResult:
    """Mean episode return of ``policy`` on ``n_mazes`` fresh mazes, 50-step cap."""
    if n_mazes <= 0:
        raise ValueError("n_mazes must be positive")
    return run_episodes(lambda sts: [policy(s) for s in sts], eval_seeds(seed, n_mazes), config)
