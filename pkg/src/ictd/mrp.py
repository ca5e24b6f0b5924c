"""Finite Markov reward processes: generation, analytic solutions, sampling.

States are 0-indexed everywhere. The chain generators translate the
1-indexed pseudocode conventions (state ``i`` becomes index ``i - 1``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12
RESIDUAL_TOL = 1e-10


class NonErgodicError(ValueError):
    """The transition matrix does not admit a unique stationary distribution."""


def one_hot(i: int, n: int) -> np.ndarray:
    """Standard basis vector e_i in R^n."""
    if not 0 <= i < n:
        raise IndexError(f"state index {i} out of range for {n} states")
    v = np.zeros(n)
    v[i] = 1.0
    return v


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Solve mu^T P = mu^T, sum(mu) = 1 by a direct linear solve.

    One balance equation is replaced by the normalization constraint, which
    is exact for small chains and needs no iteration tolerance.
    """
    transition = np.asarray(transition, dtype=float)
    n = transition.shape[0]
    a = transition.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        mu = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NonErgodicError("singular balance system; chain is not ergodic") from exc
    residual = np.max(np.abs(mu @ transition - mu))
    if residual > RESIDUAL_TOL:
        raise NonErgodicError(f"stationary residual {residual:.3e} exceeds {RESIDUAL_TOL}")
    return mu


@dataclass(frozen=True)
class Mrp:
    """A finite MRP: transition matrix, reward vector, discount.

    ``init_dist`` is the initial state distribution; generated chains set it
    to the stationary distribution.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    init_dist: np.ndarray
    # cached row-wise CDF for fast categorical sampling
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        transition = np.asarray(self.transition, dtype=float)
        reward = np.asarray(self.reward, dtype=float)
        init_dist = np.asarray(self.init_dist, dtype=float)
        n = transition.shape[0]
        if transition.shape != (n, n):
            raise ValueError("transition must be square")
        if reward.shape != (n,) or init_dist.shape != (n,):
            raise ValueError("reward and init_dist must be n-vectors")
        if np.any(transition < 0.0) or np.any(transition > 1.0):
            raise ValueError("transition entries must lie in [0, 1]")
        if np.max(np.abs(transition.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise ValueError("transition rows must sum to 1")
        if abs(init_dist.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError("init_dist must sum to 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "init_dist", init_dist)
        object.__setattr__(self, "_cdf", np.cumsum(transition, axis=1))

    @property
    def n(self) -> int:
        return self.transition.shape[0]

    def sample_next(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Vectorized categorical draw of successor states."""
        states = np.atleast_1d(states)
        u = rng.random(states.shape[0])
        return (u[:, None] > self._cdf[states]).sum(axis=1)

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "init_dist": self.init_dist.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Mrp":
        return cls(
            transition=np.array(obj["transition"], dtype=float),
            reward=np.array(obj["reward"], dtype=float),
            gamma=float(obj["gamma"]),
            init_dist=np.array(obj["init_dist"], dtype=float),
        )

    @classmethod
    def from_json(cls, text: str) -> "Mrp":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class Trajectory:
    """A rollout S_0 ... S_T with rewards R_1 ... R_T, R_{t+1} = r(S_t)."""

    states: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=int)
        rewards = np.asarray(self.rewards, dtype=float)
        if len(rewards) != len(states) - 1:
            raise ValueError("need exactly one reward per transition")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "rewards", rewards)

    def __len__(self) -> int:
        return len(self.states)


def generate_boyan(n: int, rng: np.random.Generator, gamma: float = 0.9) -> Mrp:
    """Random Boyan-chain MRP with the chain topology preserved.

    Rewards are i.i.d. uniform on (-1, 1). Each interior state jumps one or
    two steps ahead with complementary random probabilities, the penultimate
    state moves deterministically to the last, and the last state restarts
    anywhere with a normalized uniform row, keeping the chain ergodic.
    """
    if n < 3:
        raise ValueError("Boyan chain needs at least 3 states")
    reward = rng.uniform(-1.0, 1.0, size=n)
    p = np.zeros((n, n))
    eps = rng.uniform(0.0, 1.0, size=n - 2)
    for i in range(n - 2):
        p[i, i + 1] = eps[i]
        p[i, i + 2] = 1.0 - eps[i]
    p[n - 2, n - 1] = 1.0
    z = rng.uniform(0.0, 1.0, size=n)
    p[n - 1] = z / z.sum()
    return Mrp(transition=p, reward=reward, gamma=gamma, init_dist=stationary_distribution(p))


def generate_loop(n: int, threshold: float, rng: np.random.Generator, gamma: float = 0.9) -> Mrp:
    """Random Loop MRP: thresholded random connectivity over a forced cycle.

    Connectivity keeps an edge where a uniform draw exceeds ``threshold``;
    self-loops are removed and the cycle edges i -> i+1 (wrapping at the end)
    are forced, so every row stays reachable and nonzero.
    """
    if n < 2:
        raise ValueError("Loop MRP needs at least 2 states")
    reward = rng.uniform(-1.0, 1.0, size=n)
    c = (rng.uniform(0.0, 1.0, size=(n, n)) > threshold).astype(float)
    np.fill_diagonal(c, 0.0)
    for i in range(n - 1):
        c[i, i + 1] = 1.0
    c[n - 1, 0] = 1.0
    p = rng.uniform(0.0, 1.0, size=(n, n)) * c
    row_sums = p.sum(axis=1)
    assert np.all(row_sums > 0.0), "forced cycle edges guarantee nonzero rows"
    p /= row_sums[:, None]
    return Mrp(transition=p, reward=reward, gamma=gamma, init_dist=stationary_distribution(p))


def solve_value(mrp: Mrp) -> np.ndarray:
    """Value vector from the Bellman equation (I - gamma P) v = r."""
    n = mrp.n
    v = np.linalg.solve(np.eye(n) - mrp.gamma * mrp.transition, mrp.reward)
    assert np.max(np.abs((np.eye(n) - mrp.gamma * mrp.transition) @ v - mrp.reward)) <= RESIDUAL_TOL
    return v


def unroll(mrp: Mrp, steps: int, rng: np.random.Generator, start: int | None = None) -> Trajectory:
    """Roll the chain ``steps`` transitions, starting from ``start`` or init_dist."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if start is None:
        s = int(rng.choice(mrp.n, p=mrp.init_dist))
    else:
        if not 0 <= start < mrp.n:
            raise IndexError(f"start state {start} out of range")
        s = start
    states = np.empty(steps + 1, dtype=int)
    states[0] = s
    cdf = mrp._cdf
    u = rng.random(steps)
    for t in range(steps):
        s = int(np.searchsorted(cdf[s], u[t], side="right"))
        states[t + 1] = s
    return Trajectory(states=states, rewards=mrp.reward[states[:-1]])


def truncated_return(mrp: Mrp, s: int, tau: int, rng: np.random.Generator) -> float:
    """Discounted return over a fresh ``tau``-step rollout from state ``s``."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    traj = unroll(mrp, tau - 1, rng, start=s)
    discounts = mrp.gamma ** np.arange(tau)
    return float(discounts @ mrp.reward[traj.states])


def truncated_returns_batch(
    mrp: Mrp, starts: np.ndarray, tau: int, rng: np.random.Generator
) -> np.ndarray:
    """Independent truncated returns for many start states, stepped in lockstep."""
    starts = np.asarray(starts, dtype=int)
    g = mrp.reward[starts].copy()
    discount = 1.0
    s = starts.copy()
    for _ in range(tau - 1):
        discount *= mrp.gamma
        s = mrp.sample_next(s, rng)
        g += discount * mrp.reward[s]
    return g
