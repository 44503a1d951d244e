"""CRAR networks and the losses that shape the shared abstract space."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .mazeenv import N_ACTIONS, OBS_DIM, TransitionBatch


@dataclass(frozen=True)
class NetConfig:
    obs_dim: int = OBS_DIM
    n_x: int = 3
    n_actions: int = N_ACTIONS
    encoder_hidden: tuple[int, ...] = (200, 100)
    head_hidden: tuple[int, ...] = (50, 20)
    transition_hidden: tuple[int, ...] = (32,)


class MLP:
    """Fully connected tanh network; the last layer is tanh or linear."""

    def __init__(self, sizes, rng: np.random.Generator | None, name: str,
                 out_activation: str = "linear"):
        self.name = name
        self.out_activation = out_activation
        self.layers: list[tuple[Tensor, Tensor]] = []
        for i, (m, n) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
            if rng is None:
                w = np.zeros((m, n))
            else:
                lim = np.sqrt(6.0 / (m + n))
                w = rng.uniform(-lim, lim, size=(m, n))
            self.layers.append((Tensor(w, requires_grad=True, name=f"{name}.l{i}.w"),
                                Tensor(np.zeros(n), requires_grad=True, name=f"{name}.l{i}.b")))

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer]

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            x = dc.affine(x, w, b)
            if i < last or self.out_activation == "tanh":
                x = dc.tanh(x)
        return x

    def copy_from(self, other: MLP) -> None:
        for (w, b), (w2, b2) in zip(self.layers, other.layers):
            w.data = w2.data.copy()
            b.data = b2.data.copy()


def one_hot(a, n: int) -> np.ndarray:
    a = np.asarray(a)
    if np.any(a < 0) or np.any(a >= n) or not np.issubdtype(a.dtype, np.integer):
        raise ValueError(f"invalid action index {a!r} for {n} actions")
    return np.eye(n)[a]


class AgentNets:
    """Encoder, model-free Q (live and frozen) and the reward/discount/transition models.

    Abstract states are [n_x] or [batch, n_x]; actions are an int or an int
    array of matching batch size.
    """

    def __init__(self, config: NetConfig = NetConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        head_in = c.n_x + c.n_actions
        self.encoder = MLP([c.obs_dim, *c.encoder_hidden, c.n_x], rng, "encoder", "tanh")
        self.q = MLP([c.n_x, *c.head_hidden, c.n_actions], rng, "q")
        self.reward = MLP([head_in, *c.head_hidden, 1], rng, "reward")
        self.discount = MLP([head_in, *c.head_hidden, 1], rng, "discount")
        self.transition = MLP([head_in, *c.transition_hidden, c.n_x], rng, "transition")
        self.q_frozen = MLP([c.n_x, *c.head_hidden, c.n_actions], None, "q_frozen")
        self.q_frozen.copy_from(self.q)
        for p in self.q_frozen.parameters():
            p.requires_grad = False
        self.syncs = 0

    # -- parameter bookkeeping --

    def modules(self) -> dict[str, MLP]:
        return {"encoder": self.encoder, "q": self.q, "q_frozen": self.q_frozen,
                "reward": self.reward, "discount": self.discount, "transition": self.transition}

    def trainable(self) -> list[Tensor]:
        return [p for name, m in self.modules().items() if name != "q_frozen"
                for p in m.parameters()]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for m in self.modules().values() for p in m.parameters()}

    def sync_frozen(self) -> None:
        self.q_frozen.copy_from(self.q)
        self.syncs += 1

    def save(self, path: str | Path) -> None:
        dc.save_checkpoint(path, self.named_parameters())

    @classmethod
    def load(cls, path: str | Path) -> AgentNets:
        arrays = dc.load_checkpoint(path)

        def widths(prefix):
            i, out = 1, []
            while f"{prefix}.l{i}.w" in arrays:
                out.append(arrays[f"{prefix}.l{i}.w"].shape)
                i += 1
            return out

        enc, q, tr = widths("encoder"), widths("q"), widths("transition")
        config = NetConfig(obs_dim=enc[0][0], n_x=enc[-1][1], n_actions=q[-1][1],
                           encoder_hidden=tuple(s[1] for s in enc[:-1]),
                           head_hidden=tuple(s[1] for s in q[:-1]),
                           transition_hidden=tuple(s[1] for s in tr[:-1]))
        nets = cls(config)
        named = nets.named_parameters()
        if set(named) != set(arrays):
            raise ValueError(f"{path}: parameter names do not match the architecture")
        for name, arr in arrays.items():
            if named[name].shape != arr.shape:
                raise ValueError(f"{path}: {name} has shape {arr.shape}")
            named[name].data = arr.copy()
        return nets

    # -- forward maps --

    def encode(self, s) -> Tensor:
        s = s if isinstance(s, Tensor) else Tensor(np.asarray(s, dtype=np.float64))
        if s.shape[-1] != self.config.obs_dim and s.shape[-2:] != (48, 48):
            raise dc.ShapeError(f"encode: observation shape {s.shape}")
        if s.shape[-1] != self.config.obs_dim:
            s = dc.reshape(s, s.shape[:-2] + (self.config.obs_dim,))
        return self.encoder(s)

    def q_values(self, x, frozen: bool = False) -> Tensor:
        return (self.q_frozen if frozen else self.q)(_t(x))

    def q_value(self, x, a, frozen: bool = False) -> Tensor:
        x = _t(x)
        return dc.sum_(dc.mul(self.q_values(x, frozen), Tensor(one_hot(a, self.config.n_actions))),
                       axis=-1)

    def _head_input(self, x, a) -> Tensor:
        x = _t(x)
        oh = one_hot(a, self.config.n_actions)
        if oh.ndim != x.ndim:
            raise dc.ShapeError(f"action shape {np.shape(a)} does not match state {x.shape}")
        return dc.concat([x, Tensor(oh)], axis=-1)

    def predict_reward(self, x, a) -> Tensor:
        return _squeeze(self.reward(self._head_input(x, a)))

    def predict_discount(self, x, a) -> Tensor:
        z = self.discount(self._head_input(x, a))
        return _squeeze(dc.scale(dc.add(dc.tanh(z), 1.0), 0.5))

    def transition_delta(self, x, a) -> Tensor:
        return self.transition(self._head_input(x, a))

    def predict_next(self, x, a) -> Tensor:
        """Residual transition: x + tau(x, a)."""
        x = _t(x)
        return dc.add(x, self.transition_delta(x, a))


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _squeeze(y: Tensor) -> Tensor:
    return dc.reshape(y, y.shape[:-1])


# -- losses ------------------------------------------------------------------

def loss_crar(nets: AgentNets, batch: TransitionBatch, x: Tensor | None = None,
              x_next: Tensor | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Mean absolute errors of the reward, discount and transition models.

    Gradients reach the heads and, through ``x`` and ``x_next``, the encoder.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    x = nets.encode(batch.s) if x is None else x
    x_next = nets.encode(batch.s_next) if x_next is None else x_next
    l_r = dc.mean(dc.abs_(dc.sub(Tensor(batch.r), nets.predict_reward(x, batch.a))))
    l_g = dc.mean(dc.abs_(dc.sub(Tensor(batch.gamma), nets.predict_discount(x, batch.a))))
    l_tau = dc.mean(dc.abs_(dc.sub(nets.predict_next(x, batch.a), x_next)))
    return l_r, l_g, l_tau


def loss_entropy(x1: Tensor, x2: Tensor, c_d: float = 5.0) -> Tensor:
    """Mean of exp(-c_d * ||x1 - x2||_2); small when embeddings spread apart."""
    if c_d <= 0:
        raise ValueError("c_d must be positive")
    return dc.mean(dc.exp(dc.scale(dc.l2norm(dc.sub(x1, x2), axis=-1), -c_d)))


def loss_linf(x: Tensor) -> Tensor:
    """Mean of max(||x||_inf - 1, 0): zero inside the unit L-inf ball."""
    return dc.mean(dc.max_with_scalar(dc.sub(dc.linf_norm(x, axis=-1), 1.0), 0.0))


def ddqn_target(nets: AgentNets, batch: TransitionBatch,
                x_next: np.ndarray | None = None) -> np.ndarray:
    """Double-DQN target r + gamma * Q_frozen(x', argmax_a Q(x', a)), as a constant."""
    with dc.no_record():
        xn = nets.encode(batch.s_next).data if x_next is None else x_next
        live = nets.q_values(xn).data
        frozen = nets.q_values(xn, frozen=True).data
    pick = np.argmax(live, axis=-1)
    return np.asarray(batch.r) + np.asarray(batch.gamma) * np.take_along_axis(
        frozen, pick[..., None], axis=-1)[..., 0]
