"""Gradient matching in the abstract space.

The model-based planner supplies, for every sampled (x, a), a target slope
dQ_plan/dx computed by recursing through the learned reward, discount and
transition models with the frozen Q at the leaves.  The model-free Q is then
pulled towards that slope by a distance penalty on its own dQ/dx, which needs
a second backward pass through the tape.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Graph, Tensor
from .nets import AgentNets, TransitionBatch, ddqn_target
from .planner import PlanConfig, best_actions, q_at_depth

COSINE_EPS = 1e-8
DEFAULT_ALPHA = {"cosine": 0.05, "l2": 1.0}


def _slopes(nets: AgentNets, x: np.ndarray, a: np.ndarray, mode: str):
    """Per-row d rho/dx, d g/dx, g and the state Jacobian [B, n, n]."""
    with Graph():
        xt = Tensor(x, requires_grad=True)
        d_rho = dc.gradient(dc.sum_(nets.predict_reward(xt, a)), xt).data
        g = nets.predict_discount(xt, a)
        d_g = dc.gradient(dc.sum_(g), xt).data
        jac = dc.batch_jacobian(nets.transition_delta(xt, a), xt).data
    if mode == "residual":
        jac = jac + np.eye(x.shape[1])
    return d_rho, d_g, g.data, jac


def grad_q(nets: AgentNets, x: np.ndarray, a: np.ndarray, frozen: bool = True) -> np.ndarray:
    """dQ(x, a)/dx row-wise, as a constant array."""
    with Graph():
        xt = Tensor(x, requires_grad=True)
        return dc.gradient(dc.sum_(nets.q_value(xt, a, frozen)), xt).data


def grad_at_depth(nets: AgentNets, x, a, d: int, best: dict[int, np.ndarray] | None,
                  jacobian_mode: str = "residual", branching: int | None = None) -> np.ndarray:
    """Slope of Q^d(x, a) with respect to the abstract state.

    d = 0 gives dQ_frozen/dx.  For d > 0::

        drho/dx + dg/dx * Q^{d-1}(x', a'') + g * J^T grad_at_depth(x', a'', d-1)

    with x' = x + tau(x, a) and a'' = ``best[d]``.  J is I + dtau/dx in
    residual mode and dtau/dx alone in paper mode.  Backup actions are held
    constant; all Q terms use the frozen parameters.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None] if single else x
    ab = np.atleast_1d(np.asarray(a))
    if d == 0:
        out = grad_q(nets, xb, ab, frozen=True)
        return out[0] if single else out
    if jacobian_mode not in ("residual", "paper"):
        raise ValueError(f"unknown jacobian mode {jacobian_mode!r}")
    best = best or {}
    missing = [k for k in range(1, d + 1) if k not in best]
    if missing:
        raise ValueError(f"missing backup actions for depth(s) {missing}")

    d_rho, d_g, g, jac = _slopes(nets, xb, ab, jacobian_mode)
    with dc.no_record():
        xn = nets.predict_next(xb, ab).data
    a2 = np.atleast_1d(best[d])
    q_next = q_at_depth(nets, xn, a2, d - 1, frozen=True, branching=branching)
    child = grad_at_depth(nets, xn, a2, d - 1, best, jacobian_mode, branching)
    out = d_rho + d_g * q_next[:, None] + g[:, None] * np.einsum("bji,bj->bi", jac, child)
    return out[0] if single else out


def per_depth_slopes(nets: AgentNets, x, a, config: PlanConfig) -> list[np.ndarray]:
    out = []
    for d in range(config.depth + 1):
        best = best_actions(nets, x, a, d, True, config.branching) if d else None
        out.append(grad_at_depth(nets, x, a, d, best, config.jacobian_mode, config.branching))
    return out


def grad_plan(nets: AgentNets, x, a, config: PlanConfig) -> np.ndarray:
    """Depth-averaged planner slope, optionally discounting deep terms by gamma'^d."""
    slopes = per_depth_slopes(nets, x, a, config)
    if config.gamma_prime is None:
        return sum(slopes) / config.norm()
    w = config.gamma_prime ** np.arange(config.depth + 1)
    return sum(wi * s for wi, s in zip(w, slopes)) / w.sum()


def distance(u, v, kind: str) -> Tensor:
    """Row-wise distance between slope vectors.

    cosine: 1 - <u,v>/(|u||v|), taken as 1 when either norm is below 1e-8.
    l2: |u - v|.
    """
    u = u if isinstance(u, Tensor) else Tensor(u)
    v = v if isinstance(v, Tensor) else Tensor(v)
    if u.shape != v.shape:
        raise dc.ShapeError(f"distance: shapes {u.shape} and {v.shape} differ")
    if kind == "l2":
        return dc.l2norm(dc.sub(u, v), axis=-1)
    if kind != "cosine":
        raise ValueError(f"unknown distance {kind!r}")
    nu = dc.l2norm(u, axis=-1)
    nv = dc.l2norm(v, axis=-1)
    flat = ((nu.data < COSINE_EPS) | (nv.data < COSINE_EPS)).astype(np.float64)
    cos = dc.div(dc.dot(u, v, axis=-1), dc.add(dc.mul(nu, nv), Tensor(flat)))
    return dc.sub(1.0, dc.mul(cos, Tensor(1.0 - flat)))


def live_slope(nets: AgentNets, x: Tensor, a) -> Tensor:
    """dQ(x, a; theta_Q)/dx kept on the tape, so it can be differentiated again."""
    if dc.active_graph() is None:
        raise RuntimeError("live_slope needs an active Graph")
    return dc.gradient_as_graph(dc.sum_(nets.q_value(x, a)), x)


def loss_gmas(nets: AgentNets, batch: TransitionBatch, config: PlanConfig, alpha: float,
              kind: str = "cosine", x: Tensor | None = None,
              target: np.ndarray | None = None) -> Tensor:
    """alpha * mean distance between the planner slope (constant) and the live Q slope."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if dc.active_graph() is None:
        raise RuntimeError("loss_gmas needs an active Graph")
    x = nets.encode(batch.s) if x is None else x
    if target is None:
        target = grad_plan(nets, x.data, batch.a, config)
    live = live_slope(nets, x, batch.a)
    return dc.scale(dc.mean(distance(Tensor(target), live, kind)), alpha)


def loss_td(nets: AgentNets, batch: TransitionBatch, x: Tensor | None = None,
            y: np.ndarray | None = None) -> Tensor:
    x = nets.encode(batch.s) if x is None else x
    y = ddqn_target(nets, batch) if y is None else y
    return dc.mean(dc.square(dc.sub(nets.q_value(x, batch.a), Tensor(y))))


def loss_modelfree_total(nets: AgentNets, batch: TransitionBatch, config: PlanConfig,
                         alpha: float, kind: str = "cosine", x: Tensor | None = None,
                         y: np.ndarray | None = None) -> Tensor:
    """Squared double-DQN error plus the matching penalty; alpha = 0 drops the penalty."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    x = nets.encode(batch.s) if x is None else x
    td = loss_td(nets, batch, x, y)
    if alpha == 0:
        return td
    return dc.add(td, loss_gmas(nets, batch, config, alpha, kind, x))
