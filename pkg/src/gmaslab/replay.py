"""Read-only off-policy dataset with uniform sampling."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mazeenv import (DATA_MAGIC, DATA_VERSION, HEADER, OBS_DIM, RECORD_DTYPE,
                      TransitionBatch)


class ReplayBuffer:
    """Fixed transition store.  Arrays are never written after construction."""

    def __init__(self, data: TransitionBatch):
        if len(data) == 0:
            raise ValueError("empty replay buffer")
        self._data = data
        for name in ("s", "a", "r", "gamma", "s_next"):
            arr = getattr(data, name)
            if isinstance(arr, np.ndarray) and arr.flags.writeable:
                arr.flags.writeable = False

    @classmethod
    def load(cls, path: str | Path) -> ReplayBuffer:
        return cls(load_dataset(path))

    def __len__(self) -> int:
        return len(self._data)

    def __getitem__(self, i):
        return self._data[i]

    @property
    def data(self) -> TransitionBatch:
        return self._data

    def take(self, idx: np.ndarray) -> TransitionBatch:
        d = self._data
        return TransitionBatch(
            np.asarray(d.s[idx], dtype=np.float64),
            np.asarray(d.a[idx], dtype=np.int64),
            np.asarray(d.r[idx], dtype=np.float64),
            np.asarray(d.gamma[idx], dtype=np.float64),
            np.asarray(d.s_next[idx], dtype=np.float64),
        )

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Uniform draw with replacement."""
        return self.take(rng.integers(len(self), size=batch_size))

    def sample_state_pairs(self, batch_size: int, rng: np.random.Generator,
                           first: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Pairs (s1, s2) for the representation-spreading loss.

        ``s2`` is drawn uniformly from the whole buffer independently of
        ``s1``.  If ``first`` (already-sampled batch states) is given it is
        used as ``s1``.
        """
        if len(self) < 2:
            raise ValueError("need at least two stored states to form pairs")
        if first is None:
            first = np.asarray(self._data.s[rng.integers(len(self), size=batch_size)],
                               dtype=np.float64)
        idx = rng.integers(len(self), size=len(first))
        return first, np.asarray(self._data.s[idx], dtype=np.float64)


def load_dataset(path: str | Path) -> TransitionBatch:
    """Memory-map a GMASDATA file (records stay on disk until sampled)."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
    if len(head) < HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, obs_dim = HEADER.unpack(head)
    if magic != DATA_MAGIC:
        raise ValueError(f"{path}: not a GMASDATA file")
    if version != DATA_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    if obs_dim != OBS_DIM:
        raise ValueError(f"{path}: observation size {obs_dim}, expected {OBS_DIM}")
    expected = HEADER.size + n * RECORD_DTYPE.itemsize
    if path.stat().st_size != expected:
        raise ValueError(f"{path}: size {path.stat().st_size} does not match {n} records")
    rec = np.memmap(path, dtype=RECORD_DTYPE, mode="r", offset=HEADER.size, shape=(n,))
    return TransitionBatch(rec["obs"], rec["action"], rec["reward"], rec["discount"],
                           rec["next_obs"])


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        magic, version, n, obs_dim = HEADER.unpack(fh.read(HEADER.size))
    return {"magic": magic, "version": version, "n": n, "obs_dim": obs_dim}
