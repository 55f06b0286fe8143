from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Fixed-capacity FIFO store of ``(o, m, a', r, o', m', done)`` transitions."""

    FIELDS = ("o", "m", "a", "r", "o2", "m2", "done")

    def __init__(self, capacity: int, obs_dim: int, shared_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.o = np.zeros((capacity, obs_dim))
        self.m = np.zeros((capacity, shared_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.o2 = np.zeros((capacity, obs_dim))
        self.m2 = np.zeros((capacity, shared_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.head = 0
        self.total_added = 0

    def __len__(self):
        return self.size

    def add_batch(self, o, m, a, r, o2, m2, done):
        o = np.atleast_2d(o)
        n = len(o)
        idx = (self.head + np.arange(n)) % self.capacity
        self.o[idx] = o
        self.m[idx] = np.atleast_2d(m)
        self.a[idx] = a
        self.r[idx] = r
        self.o2[idx] = np.atleast_2d(o2)
        self.m2[idx] = np.atleast_2d(m2)
        self.done[idx] = done
        self.head = int((self.head + n) % self.capacity)
        self.size = int(min(self.capacity, self.size + n))
        self.total_added += n

    def add(self, o, m, a, r, o2, m2, done=False):
        self.add_batch([o], [m], [a], [r], [o2], [m2], [done])

    def ordered(self, name: str) -> np.ndarray:
        """Stored values of ``name`` from oldest to newest."""
        arr = getattr(self, name)
        if self.size < self.capacity:
            return arr[: self.size].copy()
        return np.concatenate([arr[self.head:], arr[: self.head]])

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if batch_size > self.size:
            raise ValueError(f"batch of {batch_size} requested from {self.size} transitions")
        idx = rng.integers(0, self.size, size=batch_size)
        return {k: getattr(self, k)[idx] for k in self.FIELDS}

    def state_dict(self) -> dict:
        d = {k: getattr(self, k)[: self.size].copy() if self.size < self.capacity else getattr(self, k).copy()
             for k in self.FIELDS}
        d.update(size=self.size, head=self.head, total_added=self.total_added)
        return d

    def load_state_dict(self, d: dict):
        n = int(d["size"])
        for k in self.FIELDS:
            getattr(self, k)[:n] = d[k][:n]
        self.size, self.head, self.total_added = n, int(d["head"]), int(d["total_added"])
