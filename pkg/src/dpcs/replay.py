"""Bounded FIFO experience store with uniform mini-batch sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InsufficientDataError

DEFAULT_CAPACITY = 10**6


@dataclass(frozen=True)
class Transition:
    o: np.ndarray
    p: np.ndarray
    r: float
    o_next: np.ndarray
    terminal: bool


@dataclass
class Batch:
    o: np.ndarray  # (m, obs_dim)
    p: np.ndarray  # (m, action_dim)
    r: np.ndarray  # (m,)
    o_next: np.ndarray
    terminal: np.ndarray  # bool (m,)

    def __len__(self) -> int:
        return self.r.shape[0]


class ReplayBuffer:
    """Ring buffer of transitions; the oldest entry is evicted first once full.

    Storage grows geometrically up to ``capacity`` so a large nominal
    capacity costs nothing until it is used.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ContractViolation("capacity must be >= 1")
        self.capacity = int(capacity)
        self._size = 0
        self._head = 0  # next write position
        self._o = self._p = self._r = self._o2 = self._term = None

    def __len__(self) -> int:
        return self._size

    def _alloc(self, obs_dim: int, act_dim: int, n: int) -> None:
        self._o = np.empty((n, obs_dim))
        self._o2 = np.empty((n, obs_dim))
        self._p = np.empty((n, act_dim))
        self._r = np.empty(n)
        self._term = np.empty(n, dtype=bool)

    def _grow(self) -> None:
        cur = self._r.shape[0]
        new = min(self.capacity, max(2 * cur, 1024))
        for name in ("_o", "_o2", "_p", "_r", "_term"):
            old = getattr(self, name)
            arr = np.empty((new,) + old.shape[1:], dtype=old.dtype)
            arr[:cur] = old
            setattr(self, name, arr)

    def push(self, t: Transition) -> None:
        o = np.asarray(t.o, dtype=np.float64).reshape(-1)
        o2 = np.asarray(t.o_next, dtype=np.float64).reshape(-1)
        p = np.asarray(t.p, dtype=np.float64).reshape(-1)
        r = float(t.r)
        if not (np.all(np.isfinite(o)) and np.all(np.isfinite(o2)) and np.all(np.isfinite(p)) and np.isfinite(r)):
            raise ContractViolation("transition contains non-finite values")
        if self._o is None:
            self._alloc(o.shape[0], p.shape[0], min(self.capacity, 1024))
        elif o.shape[0] != self._o.shape[1] or o2.shape[0] != self._o.shape[1] or p.shape[0] != self._p.shape[1]:
            raise ContractViolation("transition shape differs from earlier entries")
        if self._head >= self._r.shape[0]:
            self._grow()
        i = self._head
        self._o[i] = o
        self._o2[i] = o2
        self._p[i] = p
        self._r[i] = r
        self._term[i] = bool(t.terminal)
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if m < 1:
            raise ContractViolation("batch size must be >= 1")
        if self._size < m:
            raise InsufficientDataError(f"buffer holds {self._size} transitions, batch needs {m}")
        return rng.integers(0, self._size, size=m)

    def gather(self, idx: np.ndarray) -> Batch:
        return Batch(self._o[idx], self._p[idx], self._r[idx], self._o2[idx], self._term[idx])

    def sample(self, m: int, rng) -> Batch:
        """Uniform sample with replacement; ``rng`` is a Generator or an int seed."""
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        return self.gather(self.sample_indices(m, rng))

    def _order(self) -> np.ndarray:
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self._size) + self._head) % self.capacity

    def transitions(self) -> list:
        """Stored transitions, oldest first."""
        out = []
        for i in self._order():
            out.append(Transition(self._o[i].copy(), self._p[i].copy(), float(self._r[i]),
                                  self._o2[i].copy(), bool(self._term[i])))
        return out

    def state_arrays(self, prefix: str = "") -> dict:
        if self._o is None:
            return {f"{prefix}capacity": np.array([self.capacity])}
        idx = self._order()
        return {f"{prefix}capacity": np.array([self.capacity]), f"{prefix}o": self._o[idx],
                f"{prefix}p": self._p[idx], f"{prefix}r": self._r[idx],
                f"{prefix}o_next": self._o2[idx], f"{prefix}terminal": self._term[idx]}

    @classmethod
    def from_state_arrays(cls, arrays, prefix: str = "") -> "ReplayBuffer":
        buf = cls(int(np.asarray(arrays[f"{prefix}capacity"]).reshape(-1)[0]))
        if f"{prefix}o" in arrays:
            o = np.asarray(arrays[f"{prefix}o"])
            for k in range(o.shape[0]):
                buf.push(Transition(o[k], arrays[f"{prefix}p"][k], arrays[f"{prefix}r"][k],
                                    arrays[f"{prefix}o_next"][k], arrays[f"{prefix}terminal"][k]))
        return buf

    def save(self, path) -> None:
        np.savez(path, **self.state_arrays())

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with np.load(path, allow_pickle=False) as data:
            return cls.from_state_arrays({k: data[k] for k in data.files})
