"""Oracle suite: finite differences, exhaustive planning and maze solvability.

Each ``check_*`` function returns a :class:`Check`; ``run_all`` prints one
line per check and is what ``gmaslab verify`` executes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import Graph, Tensor, no_record
from .gmas import distance, grad_at_depth, live_slope
from .mazeenv import MazeConfig, generate
from .oracles import (bfs_reachable, central_diff, enumerate_best_path, enumerate_q,
                      path_value, random_model, rel_err)
from .planner import best_actions, q_at_depth, q_values_at_depth

FD_STEP = 1e-5


@dataclass
class Check:
    name: str
    passed: bool
    worst: float
    tolerance: float
    count: int
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.name}: worst={self.worst:.3e} tol={self.tolerance:g} "
                f"n={self.count} ({self.seconds:.1f}s)")


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        out.seconds = time.perf_counter() - t0
        return out
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _away_from(rng, shape, points, gap=0.05):
    x = rng.uniform(-2, 2, shape)
    for p in points:
        close = np.abs(x - p) < gap
        x[close] = p + np.sign(x[close] - p + 1e-12) * gap * 2
    return x


def _distinct_abs(rng, shape):
    x = rng.uniform(-2, 2, shape)
    while True:
        a = np.sort(np.abs(x), axis=-1)
        if np.all(np.diff(a, axis=-1) > 1e-3):
            return x
        x = rng.uniform(-2, 2, shape)


def _nonzero(rng, shape):
    return rng.uniform(0.5, 2.0, shape) * rng.choice([-1.0, 1.0], shape)


OP_CASES: dict[str, Callable] = {
    "add": lambda r: (dc.add, [r.uniform(-2, 2, (3, 4)), r.uniform(-2, 2, (4,))]),
    "sub": lambda r: (dc.sub, [r.uniform(-2, 2, (3, 4)), r.uniform(-2, 2, (3, 1))]),
    "mul": lambda r: (dc.mul, [r.uniform(-2, 2, (3, 4)), r.uniform(-2, 2, (3, 4))]),
    "div": lambda r: (dc.div, [r.uniform(-2, 2, (3, 4)), _nonzero(r, (3, 4))]),
    "scale": lambda r: (lambda t: dc.scale(t, -1.7), [r.uniform(-2, 2, (5,))]),
    "matmul": lambda r: (dc.matmul, [r.uniform(-2, 2, (3, 4)), r.uniform(-2, 2, (4, 2))]),
    "matmul_vec": lambda r: (dc.matmul, [r.uniform(-2, 2, (4,)), r.uniform(-2, 2, (4, 2))]),
    "affine": lambda r: (dc.affine, [r.uniform(-2, 2, (5, 4)), r.uniform(-2, 2, (4, 3)),
                                     r.uniform(-2, 2, (3,))]),
    "tanh": lambda r: (dc.tanh, [r.uniform(-2, 2, (3, 4))]),
    "exp": lambda r: (dc.exp, [r.uniform(-2, 2, (3, 4))]),
    "square": lambda r: (dc.square, [r.uniform(-2, 2, (3, 4))]),
    "abs": lambda r: (dc.abs_, [_away_from(r, (3, 4), [0.0])]),
    "max_with_scalar": lambda r: (lambda t: dc.max_with_scalar(t, 0.3),
                                  [_away_from(r, (3, 4), [0.3])]),
    "sum": lambda r: (lambda t: dc.sum_(t, axis=-1), [r.uniform(-2, 2, (3, 4))]),
    "mean": lambda r: (dc.mean, [r.uniform(-2, 2, (3, 4))]),
    "l2norm": lambda r: (lambda t: dc.l2norm(t, axis=-1), [r.uniform(-2, 2, (3, 4))]),
    "linf_norm": lambda r: (lambda t: dc.linf_norm(t, axis=-1), [_distinct_abs(r, (3, 4))]),
    "dot": lambda r: (dc.dot, [r.uniform(-2, 2, (3, 4)), r.uniform(-2, 2, (3, 4))]),
    "concat": lambda r: (lambda a, b: dc.concat([a, b], axis=-1),
                         [r.uniform(-2, 2, (2, 3)), r.uniform(-2, 2, (2, 2))]),
    "transpose": lambda r: (dc.transpose, [r.uniform(-2, 2, (3, 4))]),
    "reshape": lambda r: (lambda t: dc.reshape(t, (6, 2)), [r.uniform(-2, 2, (3, 4))]),
}


def op_gradient_error(kind: str, rng: np.random.Generator) -> float:
    fn, arrays = OP_CASES[kind](rng)
    with no_record():
        shape = fn(*[Tensor(a) for a in arrays]).shape
    w = rng.uniform(-1, 1, shape)

    def objective(*arrs):
        return dc.sum_(dc.mul(fn(*arrs), Tensor(w)))

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Graph():
        grads = dc.gradient(objective(*leaves), leaves)
    worst = 0.0
    for i, g in enumerate(grads):
        def f(v, i=i):
            args = [Tensor(a) for a in arrays]
            args[i] = Tensor(v)
            return objective(*args).item()
        worst = max(worst, rel_err(g.data, central_diff(f, arrays[i], FD_STEP)))
    return worst


@_timed
def check_ops(n: int = 100, seed: int = 0, tol: float = 1e-4) -> Check:
    """Every registered op: reverse mode vs central differences."""
    rng = np.random.default_rng(seed)
    worst = max(op_gradient_error(k, rng) for k in OP_CASES for _ in range(n))
    return Check("op gradients vs finite differences", worst <= tol, worst, tol, n * len(OP_CASES))


def composition_errors(seed: int) -> dict[str, float]:
    """Gradient errors for encoder, Q and the three model heads of a random agent.

    Inputs are checked on every coordinate, parameters on a random subset.
    """
    nets = random_model(seed)
    rng = np.random.default_rng(seed + 1)
    n_x, obs_dim = nets.config.n_x, nets.config.obs_dim
    a = rng.integers(nets.config.n_actions, size=4)
    maps = {
        "encoder": (lambda x: nets.encode(x), rng.uniform(-1, 1, (4, obs_dim)), nets.encoder),
        "q": (lambda x: nets.q_values(x), rng.uniform(-1, 1, (4, n_x)), nets.q),
        "reward": (lambda x: nets.predict_reward(x, a), rng.uniform(-1, 1, (4, n_x)), nets.reward),
        "discount": (lambda x: nets.predict_discount(x, a), rng.uniform(-1, 1, (4, n_x)),
                     nets.discount),
        "transition": (lambda x: nets.predict_next(x, a), rng.uniform(-1, 1, (4, n_x)),
                       nets.transition),
    }
    out = {}
    for name, (fn, x0, module) in maps.items():
        with no_record():
            w = rng.uniform(-1, 1, fn(x0).shape)

        def objective(x):
            return dc.sum_(dc.mul(fn(x), Tensor(w)))

        xt = Tensor(x0, requires_grad=True)
        params = module.parameters()
        with Graph():
            grads = dc.gradient(objective(xt), [xt, *params])
        worst = rel_err(grads[0].data, central_diff(lambda v: objective(v).item(), x0, FD_STEP))
        for p, g in zip(params, grads[1:]):
            coords = rng.choice(p.size, size=min(6, p.size), replace=False)
            saved = p.data.copy()

            def f(v, p=p):
                p.data = v
                return objective(Tensor(x0)).item()

            fd = central_diff(f, saved, FD_STEP, coords)
            p.data = saved
            worst = max(worst, rel_err(g.data.reshape(-1)[coords], fd))
        out[name] = worst
    return out


@_timed
def check_compositions(n: int = 100, seed: int = 1000, tol: float = 1e-4) -> Check:
    worst = 0.0
    for i in range(n):
        worst = max(worst, *composition_errors(seed + i).values())
    return Check("encoder/Q/rho/g/tau gradients vs finite differences", worst <= tol, worst,
                 tol, n)


def second_order_error(seed: int, kind: str) -> float:
    """d/dtheta of mean dist(dQ/dx, c) through encoder and Q, vs differences over theta."""
    nets = random_model(seed)
    rng = np.random.default_rng(seed + 3)
    s = rng.uniform(-1, 1, (4, nets.config.obs_dim))
    a = rng.integers(nets.config.n_actions, size=4)
    c = rng.normal(size=(4, nets.config.n_x))
    params = nets.q.parameters() + nets.encoder.parameters()

    def loss() -> Tensor:
        x = nets.encode(s)
        return dc.mean(distance(Tensor(c), live_slope(nets, x, a), kind))

    with Graph():
        grads = dc.gradient(loss(), params)
    worst = 0.0
    for p, g in zip(params, grads):
        coords = rng.choice(p.size, size=min(4, p.size), replace=False)
        saved = p.data.copy()

        def f(v, p=p):
            p.data = v
            with Graph():
                return loss().item()

        fd = central_diff(f, saved, FD_STEP, coords)
        p.data = saved
        worst = max(worst, rel_err(g.data.reshape(-1)[coords], fd))
    return worst


@_timed
def check_second_order(n: int = 20, seed: int = 2000, tol: float = 1e-3) -> Check:
    worst = max(second_order_error(seed + i, kind) for i in range(n) for kind in ("cosine", "l2"))
    return Check("second-order matching gradient vs finite differences", worst <= tol, worst,
                 tol, 2 * n)


@_timed
def check_planner(n: int = 10, seed: int = 3000, tol: float = 1e-10) -> Check:
    """Full-width backup vs enumeration of all |A|^d action sequences."""
    worst = 0.0
    count = 0
    for i in range(n):
        nets = random_model(seed + i)
        rng = np.random.default_rng(seed + i)
        x = rng.uniform(-1, 1, nets.config.n_x)
        for d in (1, 2, 3):
            fast = q_values_at_depth(nets, x, d)
            for a in range(nets.config.n_actions):
                worst = max(worst, abs(fast[a] - enumerate_q(nets, x, a, d)),
                            abs(q_at_depth(nets, x, a, d) - enumerate_q(nets, x, a, d)))
                count += 1
    return Check("planner backup vs exhaustive enumeration", worst <= tol, worst, tol, count)


def recursion_error(seed: int, d: int) -> float:
    nets = random_model(seed)
    rng = np.random.default_rng(seed + 11)
    x = rng.uniform(-1, 1, nets.config.n_x)
    a = int(rng.integers(nets.config.n_actions))
    best = best_actions(nets, x, a, d, frozen=True) if d else {}
    seq = (a, *(int(best[k]) for k in range(d, 0, -1)))
    grad = grad_at_depth(nets, x, a, d, best, "residual")
    fd = central_diff(lambda v: path_value(nets, v, seq, frozen=True), x, FD_STEP)
    return rel_err(grad, fd)


@_timed
def check_recursion(n: int = 50, seed: int = 4000, tol: float = 1e-3) -> Check:
    """Planner slope recursion vs differences of the planner value with backup actions fixed."""
    worst = max(recursion_error(seed + i, d) for i in range(n) for d in (0, 1, 2, 3))
    return Check("slope recursion vs finite differences of Q^d", worst <= tol, worst, tol, 4 * n)


def mode_gap_error(seed: int, d: int) -> float:
    """With tau = 0: residual - paper == g * child slope, exactly."""
    nets = random_model(seed)
    for p in nets.transition.parameters():
        p.data = np.zeros_like(p.data)
    rng = np.random.default_rng(seed + 5)
    x = rng.uniform(-1, 1, nets.config.n_x)
    a = int(rng.integers(nets.config.n_actions))
    best = best_actions(nets, x, a, d, frozen=True)
    res = grad_at_depth(nets, x, a, d, best, "residual")
    pap = grad_at_depth(nets, x, a, d, best, "paper")
    with no_record():
        g = nets.predict_discount(x[None], np.array([a])).data[0]
    child = grad_at_depth(nets, x, int(best[d]), d - 1, best, "residual")
    return float(np.max(np.abs((res - pap) - g * child)))


@_timed
def check_mode_gap(n: int = 20, seed: int = 5000, tol: float = 1e-12) -> Check:
    worst = max(mode_gap_error(seed + i, d) for i in range(n) for d in (1, 2, 3))
    return Check("residual vs paper Jacobian gap with identity transition", worst <= tol,
                 worst, tol, 3 * n)


@_timed
def check_mazes(n: int = 1000, seed: int = 0) -> Check:
    failures = 0
    for s in range(seed, seed + n):
        st = generate(s, MazeConfig())
        border = np.concatenate([st.walls[0], st.walls[-1], st.walls[:, 0], st.walls[:, -1]])
        ok = (border.all() and st.agent != st.key and not st.walls[st.agent]
              and not st.walls[st.key] and bfs_reachable(st.walls, st.agent, st.key) > 0)
        failures += not ok
    return Check("generated mazes walled and solvable (BFS)", failures == 0, float(failures),
                 0, n)


def run_all(quick: bool = False, echo=print) -> list[Check]:
    scale = 0.2 if quick else 1.0
    checks = [
        lambda: check_ops(n=max(5, int(100 * scale))),
        lambda: check_compositions(n=max(5, int(100 * scale))),
        lambda: check_second_order(n=max(4, int(20 * scale))),
        lambda: check_planner(n=max(3, int(10 * scale))),
        lambda: check_recursion(n=max(10, int(50 * scale))),
        lambda: check_mode_gap(n=max(5, int(20 * scale))),
        lambda: check_mazes(n=max(100, int(1000 * scale))),
    ]
    results = []
    for c in checks:
        r = c()
        echo(r.line())
        results.append(r)
    return results
