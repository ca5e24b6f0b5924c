"""Masked linear attention, prompt construction, and the hand-built TD weights.

A prompt is a (2n+1) x (m+1) matrix: the first m columns are the context,
the last column the query. The feature map is one-hot throughout; general
feature maps are unsupported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mrp import Mrp, Trajectory, one_hot


class DivergenceError(FloatingPointError):
    """A forward pass produced non-finite embeddings."""


@dataclass(frozen=True)
class Prompt:
    """Embedding matrix fed to the transformer, with n states and m context columns."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2 or z.shape[0] % 2 != 1:
            raise ValueError("prompt must be (2n+1) x (m+1)")
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return (self.z.shape[0] - 1) // 2

    @property
    def m(self) -> int:
        return self.z.shape[1] - 1


@dataclass
class TransformerParams:
    """Per-layer or looped (P, Q) pairs for an L-layer linear transformer.

    In looped mode a single shared pair is stored and applied ``depth``
    times. ``sparse`` marks parameters with the block structure
    P = [[0, 0], [u, 1]], Q = [[A, 0], [0, 0]]; the structure is kept in
    dense storage and enforced by construction.
    """

    n: int
    depth: int
    layers: list
    mode: str = "looped"
    sparse: bool = False

    def __post_init__(self):
        if self.mode not in ("looped", "per_layer"):
            raise ValueError(f"unknown mode {self.mode!r}")
        expected = 1 if self.mode == "looped" else self.depth
        if len(self.layers) != expected:
            raise ValueError(f"{self.mode} mode needs {expected} stored layer(s)")
        d = 2 * self.n + 1
        self.layers = [
            (np.asarray(p, dtype=float), np.asarray(q, dtype=float)) for p, q in self.layers
        ]
        for p, q in self.layers:
            if p.shape != (d, d) or q.shape != (d, d):
                raise ValueError(f"P and Q must be {d} x {d}")
        if self.sparse:
            for p, q in self.layers:
                assert _is_sparse_structured(p, q, self.n), "sparse flag violates block structure"

    def layer_sequence(self):
        """The L (P, Q) pairs actually applied, repeating the shared pair if looped."""
        if self.mode == "looped":
            return [self.layers[0]] * self.depth
        return list(self.layers)

    def copy(self) -> "TransformerParams":
        return TransformerParams(
            n=self.n,
            depth=self.depth,
            layers=[(p.copy(), q.copy()) for p, q in self.layers],
            mode=self.mode,
            sparse=self.sparse,
        )

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "depth": self.depth,
            "mode": self.mode,
            "layers": [{"P": p.tolist(), "Q": q.tolist()} for p, q in self.layers],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TransformerParams":
        return cls(
            n=int(obj["n"]),
            depth=int(obj["depth"]),
            mode=obj["mode"],
            layers=[
                (np.array(layer["P"], dtype=float), np.array(layer["Q"], dtype=float))
                for layer in obj["layers"]
            ],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, text: str) -> "TransformerParams":
        return cls.from_json_dict(json.loads(text))


def _is_sparse_structured(p: np.ndarray, q: np.ndarray, n: int) -> bool:
    d = 2 * n
    return (
        np.all(p[:d, :] == 0.0)
        and p[d, d] == 1.0
        and np.all(q[:, d] == 0.0)
        and np.all(q[d, :] == 0.0)
    )


def sparse_params(a: np.ndarray, u: np.ndarray, n: int, depth: int) -> TransformerParams:
    """Looped params from the (A, u) sub-parameterization."""
    d = 2 * n
    p = np.zeros((d + 1, d + 1))
    p[d, :d] = u
    p[d, d] = 1.0
    q = np.zeros((d + 1, d + 1))
    q[:d, :d] = a
    return TransformerParams(n=n, depth=depth, layers=[(p, q)], mode="looped", sparse=True)


def td_params(n: int, depth: int) -> TransformerParams:
    """The hand-built looped weights under which each layer runs one TD sweep."""
    if n < 1 or depth < 0:
        raise ValueError("need n >= 1 and depth >= 0")
    a = np.block([
        [-np.eye(n), np.eye(n)],
        [np.zeros((n, n)), np.zeros((n, n))],
    ])
    return sparse_params(a, np.zeros(2 * n), n, depth)


def prompt_expected(mrp: Mrp, query: int) -> Prompt:
    """Prompt with one context column per state: one-hot id, discounted
    expected next feature, and reward. The query column carries only the
    one-hot query feature."""
    n = mrp.n
    if not 0 <= query < n:
        raise IndexError(f"query state {query} out of range")
    z = np.zeros((2 * n + 1, n + 1))
    z[:n, :n] = np.eye(n)
    z[n:2 * n, :n] = mrp.gamma * mrp.transition.T
    z[2 * n, :n] = mrp.reward
    z[:n, n] = one_hot(query, n)
    return Prompt(z=z)


def prompt_sampled(
    traj: Trajectory, m: int, query: int, gamma: float, n: int | None = None
) -> Prompt:
    """Prompt whose context columns are the first m transitions of a rollout.

    ``n`` defaults to the largest state index seen, so pass it explicitly
    when the rollout may not visit every state.
    """
    if len(traj) < m + 1:
        raise ValueError(f"trajectory with {len(traj)} states is too short for m={m}")
    if n is None:
        n = max(int(traj.states.max()) + 1, query + 1)
    return prompt_from_transitions(
        traj.states[:m], traj.states[1:m + 1], traj.rewards[:m], query, gamma, n
    )


def prompt_from_transitions(
    states: np.ndarray,
    next_states: np.ndarray,
    rewards: np.ndarray,
    query: int,
    gamma: float,
    n: int,
) -> Prompt:
    """Sampled-construction prompt from explicit (s, s', r) triples."""
    m = len(states)
    z = np.zeros((2 * n + 1, m + 1))
    cols = np.arange(m)
    z[np.asarray(states, dtype=int), cols] = 1.0
    z[n + np.asarray(next_states, dtype=int), cols] = gamma
    z[2 * n, :m] = rewards
    z[query, m] = 1.0
    return Prompt(z=z)


def attention_layer(z: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """One masked linear-attention step: z + P (z M) (z^T Q z)."""
    z = np.asarray(z, dtype=float)
    if p.shape[0] != z.shape[-2] or p.shape != q.shape or p.shape[0] != p.shape[1]:
        raise ValueError("shape mismatch between prompt and layer matrices")
    zc = z.copy()
    zc[..., :, -1] = 0.0  # mask separates the query column from attention
    return z + p @ zc @ (np.swapaxes(z, -1, -2) @ q @ z)


def forward_batch(
    z0: np.ndarray, params: TransformerParams, trace: bool = False, normalize: bool = False
):
    """Forward pass on a (B, 2n+1, m+1) stack of prompts.

    Returns (values, embeddings); embeddings is the list [Z_0, ..., Z_L]
    when ``trace`` is true, else None. Values are the negated bottom-right
    entries of Z_L.

    ``normalize`` scales every attention update by 1/m (m = context
    columns). The unnormalized pass runs one batch TD sweep per layer with
    unit step size, which overshoots and blows up once states repeat many
    times in a long sampled context; the 1/m factor turns each sweep into
    an averaged update that stays contractive at any context length.
    Enumerated-context prompts need the unnormalized pass (each state
    appears exactly once, so the sweep is an exact value-iteration step).
    """
    z = np.asarray(z0, dtype=float)
    m = z.shape[-1] - 1
    factor = 1.0 / m if normalize and m > 0 else 1.0
    embeddings = [z.copy()] if trace else None
    for layer_index, (p, q) in enumerate(params.layer_sequence()):
        # attention is linear in Q, so the 1/m scale folds into Q
        z = attention_layer(z, p, factor * q)
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"non-finite embedding after layer {layer_index + 1}")
        if trace:
            embeddings.append(z.copy())
    return -z[..., -1, -1], embeddings


def forward(prompt: Prompt, params: TransformerParams, trace: bool = False, normalize: bool = False):
    """Scalar transformer output for one prompt; optionally all Z_l."""
    if prompt.n != params.n:
        raise ValueError("prompt and params disagree on the state count")
    values, embeddings = forward_batch(prompt.z[None], params, trace=trace, normalize=normalize)
    if trace:
        return float(values[0]), [z[0] for z in embeddings]
    return float(values[0])


@dataclass(frozen=True)
class TdIterates:
    """Batched TD iterates w_0 ... w_L; w_l is the partial Neumann sum."""

    w: np.ndarray  # (L+1, n)


def td_iterates(mrp: Mrp, depth: int) -> TdIterates:
    """w_0 = 0, w_{l+1} = r + gamma P w_l."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    w = np.zeros((depth + 1, mrp.n))
    for l in range(depth):
        w[l + 1] = mrp.reward + mrp.gamma * mrp.transition @ w[l]
    return TdIterates(w=w)
