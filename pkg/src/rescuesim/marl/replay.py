from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class JointTransition:
    obs: list[np.ndarray]
    actions: np.ndarray
    reward: float
    next_obs: list[np.ndarray]
    state: np.ndarray
    next_state: np.ndarray
    done: bool
    # agents acting at the start / end of the transition
    mask: np.ndarray
    next_mask: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.obs)
        if not (len(self.actions) == len(self.next_obs) == len(self.mask)
                == len(self.next_mask) == n):
            raise ValueError("per-agent fields must all have one entry per agent")


@dataclass
class Batch:
    """Transitions stacked along a leading batch axis; ``obs[k]`` is ``(B, d_k)`` for agent k."""

    obs: list[np.ndarray]
    actions: np.ndarray
    reward: np.ndarray
    next_obs: list[np.ndarray]
    state: np.ndarray
    next_state: np.ndarray
    done: np.ndarray
    mask: np.ndarray
    next_mask: np.ndarray

    @property
    def size(self) -> int:
        return len(self.reward)


def collate(transitions: Sequence[JointTransition]) -> Batch:
    if not transitions:
        raise ValueError("cannot collate an empty batch")
    n = len(transitions[0].obs)
    return Batch(
        obs=[np.stack([t.obs[k] for t in transitions]) for k in range(n)],
        actions=np.stack([t.actions for t in transitions]).astype(np.int64),
        reward=np.array([t.reward for t in transitions], dtype=np.float64),
        next_obs=[np.stack([t.next_obs[k] for t in transitions]) for k in range(n)],
        state=np.stack([t.state for t in transitions]),
        next_state=np.stack([t.next_state for t in transitions]),
        done=np.array([float(t.done) for t in transitions]),
        mask=np.stack([t.mask for t in transitions]),
        next_mask=np.stack([t.next_mask for t in transitions]),
    )


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[JointTransition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, t: JointTransition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity

    def extend(self, ts) -> None:
        for t in ts:
            self.push(t)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size > len(self._items):
            raise ValueError(f"need {batch_size} transitions, buffer holds {len(self._items)}")
        return rng.choice(len(self._items), size=batch_size, replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[JointTransition]:
        return [self._items[i] for i in self.sample_indices(batch_size, rng)]
