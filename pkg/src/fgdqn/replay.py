"""Experience replay with uniform and same-(state, action) sampling."""

from __future__ import annotations

import json
from collections import deque
from typing import Callable, NamedTuple

import numpy as np

from fgdqn.validation import ValidationError, check_random_state


class Transition(NamedTuple):
    state: object
    action: int
    reward: float
    next_state: object
    terminal: bool


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return self.actions.size


def as_batch(transitions) -> Batch:
    if isinstance(transitions, Batch):
        return transitions
    if isinstance(transitions, Transition):
        transitions = [transitions]
    if len(transitions) == 0:
        raise ValidationError("batch is empty")
    return Batch(
        np.array([t.state for t in transitions], dtype=float),
        np.array([t.action for t in transitions], dtype=np.int64),
        np.array([t.reward for t in transitions], dtype=float),
        np.array([t.next_state for t in transitions], dtype=float),
        np.array([t.terminal for t in transitions], dtype=bool),
    )


def buffer_batch(buf: ReplayBuffer, idx) -> Batch:
    return Batch(buf.states[idx], buf.actions[idx], buf.rewards[idx], buf.next_states[idx], buf.terminals[idx])


def _default_key(state):
    arr = np.asarray(state)
    if arr.ndim == 0:
        return arr.item()
    return tuple(arr.ravel().tolist())


class ReplayBuffer:
    """Bounded ring store with an optional index keyed by ``(state, action)``.

    Transitions are kept column-wise in preallocated arrays. Eviction is
    first-in first-out, so the evicted slot is always the head of its key's
    queue and de-indexing is O(1).
    """

    def __init__(self, capacity: int = 100_000, state_shape=(), indexed: bool = True, key_fn=None):
        if capacity < 1:
            raise ValidationError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.state_shape = tuple(state_shape)
        self.indexed = indexed
        self.key_fn = key_fn or _default_key
        self.states = np.zeros((self.capacity, *self.state_shape))
        self.next_states = np.zeros((self.capacity, *self.state_shape))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.terminals = np.zeros(self.capacity, dtype=bool)
        self._keys = [None] * self.capacity
        self.index: dict = {}
        # Per key: [count, reward sum, {(next key, terminal): count}].
        self._summary: dict = {}
        self._reps: dict = {}
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def key_of(self, state, action):
        return (self.key_fn(state), int(action))

    def push(self, t: Transition):
        pos = self._next
        if self._size == self.capacity and self.indexed:
            old = self._keys[pos]
            bucket = self.index[old]
            evicted = bucket.popleft()
            assert evicted == pos
            if not bucket:
                del self.index[old]
            self._forget(old, pos)
        self.states[pos] = t.state
        self.next_states[pos] = t.next_state
        self.actions[pos] = t.action
        self.rewards[pos] = t.reward
        self.terminals[pos] = t.terminal
        if self.indexed:
            key = self.key_of(t.state, t.action)
            self._keys[pos] = key
            self.index.setdefault(key, deque()).append(pos)
            self._remember(key, t)
        self._next = (pos + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _remember(self, key, t):
        entry = self._summary.setdefault(key, [0, 0.0, {}])
        entry[0] += 1
        entry[1] += float(t.reward)
        nk = (self.key_fn(t.next_state), bool(t.terminal))
        entry[2][nk] = entry[2].get(nk, 0) + 1
        self._reps.setdefault(nk[0], np.array(t.next_state, dtype=float))

    def _forget(self, key, pos):
        entry = self._summary[key]
        entry[0] -= 1
        entry[1] -= float(self.rewards[pos])
        nk = (self.key_fn(self.next_states[pos] if self.state_shape else self.next_states[pos].item()),
              bool(self.terminals[pos]))
        entry[2][nk] -= 1
        if entry[2][nk] == 0:
            del entry[2][nk]
        if entry[0] == 0:
            del self._summary[key]

    def conditional_summary(self, key):
        """``(count, reward_sum, {(next_key, terminal): count})`` of tuples matching ``key``.

        Equivalent to enumerating ``sample_conditional(key)`` when next states
        are discrete; lets the trainer evaluate each distinct next state once.
        """
        try:
            count, reward_sum, hist = self._summary[key]
        except KeyError:
            raise KeyError(f"no stored transition for key {key!r}") from None
        return count, reward_sum, hist

    def representative(self, next_key) -> np.ndarray:
        return self._reps[next_key]

    def transition(self, pos: int) -> Transition:
        state, nxt = self.states[pos], self.next_states[pos]
        if not self.state_shape:
            state, nxt = state.item(), nxt.item()
        return Transition(state, int(self.actions[pos]), float(self.rewards[pos]), nxt, bool(self.terminals[pos]))

    def sample_indices(self, batch_size: int, rng) -> np.ndarray:
        if self._size == 0:
            raise ValidationError("cannot sample from an empty buffer")
        return check_random_state(rng).integers(0, self._size, size=batch_size)

    def sample_minibatch(self, batch_size: int, rng) -> list[Transition]:
        """``batch_size`` uniform draws with replacement."""
        return [self.transition(i) for i in self.sample_indices(batch_size, rng)]

    def conditional_indices(self, key) -> np.ndarray:
        if not self.indexed:
            raise ValidationError("buffer was built without a (state, action) index")
        try:
            return np.fromiter(self.index[key], dtype=np.int64)
        except KeyError:
            raise KeyError(f"no stored transition for key {key!r}") from None

    def sample_conditional(self, key) -> list[Transition]:
        """Every stored transition whose (state, action) equals ``key``."""
        return [self.transition(i) for i in self.conditional_indices(key)]

    def conditional_target_average(self, key, target_fn: Callable[[Transition], float]) -> float:
        """Empirical conditional expectation of ``target_fn`` given ``key``."""
        return float(np.mean([target_fn(t) for t in self.sample_conditional(key)]))

    def dump(self, path):
        rows = [self.transition(i)._asdict() for i in range(self._size)]
        for row in rows:
            for k in ("state", "next_state"):
                row[k] = np.asarray(row[k]).tolist()
        with open(path, "w") as fh:
            json.dump({"capacity": self.capacity, "transitions": rows}, fh)


def sample_minibatch(buf: ReplayBuffer, batch_size: int, rng) -> list[Transition]:
    return buf.sample_minibatch(batch_size, rng)


def sample_conditional(buf: ReplayBuffer, key) -> list[Transition]:
    return buf.sample_conditional(key)


def conditional_target_average(buf: ReplayBuffer, key, target_fn) -> float:
    return buf.conditional_target_average(key, target_fn)
