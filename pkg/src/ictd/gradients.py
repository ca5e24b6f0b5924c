"""Exact gradients of the transformer output via hand-derived reverse accumulation.

Each layer is the trilinear update Z' = Z + P (Z M) (Z^T Q Z), so the
adjoints are a fixed small pipeline of dense products; no expression-graph
engine is needed. In looped mode, contributions from all layer applications
of the shared (P, Q) pair are summed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transformer import DivergenceError, Prompt, TransformerParams


@dataclass
class ParamGradient:
    """Gradient with the same layout as its TransformerParams.

    ``layers`` holds one (dP, dQ) pair per stored layer (a single summed
    pair in looped mode). For sparse-flagged parameters, ``da`` and ``du``
    expose the gradient restricted to the (A, u) entries.
    """

    n: int
    mode: str
    layers: list
    sparse: bool = False

    @property
    def da(self) -> np.ndarray | None:
        if not self.sparse:
            return None
        d = 2 * self.n
        return self.layers[0][1][:d, :d]

    @property
    def du(self) -> np.ndarray | None:
        if not self.sparse:
            return None
        d = 2 * self.n
        return self.layers[0][0][d, :d]

    def concatenated(self, sparse: bool = False) -> np.ndarray:
        """Fixed vectorization: per layer vec(dP) then vec(dQ), row-major;
        in sparse form vec(dA) then du."""
        if sparse:
            if not self.sparse:
                raise ValueError("gradient has no sparse view")
            return np.concatenate([self.da.ravel(), self.du.ravel()])
        return np.concatenate([np.concatenate([dp.ravel(), dq.ravel()]) for dp, dq in self.layers])


def grad_norm(g: ParamGradient, sparse: bool = False) -> float:
    """Entry-wise L1 norm of the (optionally sparse-view) gradient."""
    return float(np.abs(g.concatenated(sparse=sparse)).sum())


def _forward_trace(z0: np.ndarray, params: TransformerParams, factor: float = 1.0):
    """All embeddings and cached attention products for the backward pass."""
    z = np.asarray(z0, dtype=float)
    zs = [z]
    ts = []
    for layer_index, (p, q) in enumerate(params.layer_sequence()):
        zc = z.copy()
        zc[..., :, -1] = 0.0
        t = np.swapaxes(z, -1, -2) @ (factor * q) @ z
        z = z + p @ zc @ t
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"non-finite embedding after layer {layer_index + 1}")
        zs.append(z)
        ts.append(t)
    return zs, ts


def weighted_grad_batch(
    z0: np.ndarray, weights: np.ndarray, params: TransformerParams, normalize: bool = False
) -> ParamGradient:
    """Gradient of sum_b weights[b] * TF(Z0[b]) w.r.t. the trainable entries.

    ``z0`` has shape (B, 2n+1, m+1). This is the workhorse shared by
    training updates (weights = per-sample errors) and single-prompt
    gradients (one prompt, unit weight). ``normalize`` differentiates the
    1/m-scaled forward pass instead of the plain one.
    """
    weights = np.asarray(weights, dtype=float)
    m = z0.shape[-1] - 1
    factor = 1.0 / m if normalize and m > 0 else 1.0
    zs, ts = _forward_trace(z0, params, factor)
    layer_pairs = params.layer_sequence()
    depth = len(layer_pairs)

    batch = z0.shape[0]
    d = z0.shape[1]
    g = np.zeros((batch, d, z0.shape[2]))
    g[:, -1, -1] = -weights  # output is the negated bottom-right entry

    looped = params.mode == "looped"
    if looped:
        grads = [(np.zeros((d, d)), np.zeros((d, d)))]
    else:
        grads = [None] * depth

    for l in range(depth - 1, -1, -1):
        p, q = layer_pairs[l]
        q = factor * q  # the layer actually applied the scaled matrix
        z = zs[l]
        t = ts[l]
        zc = z.copy()
        zc[..., :, -1] = 0.0
        zt = np.swapaxes(z, -1, -2)
        tt = np.swapaxes(t, -1, -2)

        a1 = zc @ t
        dp = np.einsum("bdc,bec->de", g, a1)
        w = np.swapaxes(p, -1, -2) @ g
        dt = np.swapaxes(zc, -1, -2) @ w
        dq = factor * np.einsum("bdc,bce,bfe->df", z, dt, z)

        dz_mask = w @ tt
        dz_mask[..., :, -1] = 0.0
        g = g + dz_mask + q @ z @ np.swapaxes(dt, -1, -2) + np.swapaxes(q, -1, -2) @ z @ dt

        if looped:
            grads[0] = (grads[0][0] + dp, grads[0][1] + dq)
        else:
            grads[l] = (dp, dq)

    return ParamGradient(n=params.n, mode=params.mode, layers=grads, sparse=params.sparse)


def grad_output(prompt: Prompt, params: TransformerParams, normalize: bool = False) -> ParamGradient:
    """Gradient of forward(prompt, params) w.r.t. every trainable entry."""
    if prompt.n != params.n:
        raise ValueError("prompt and params disagree on the state count")
    return weighted_grad_batch(prompt.z[None], np.ones(1), params, normalize=normalize)


def finite_diff_grad(
    prompt: Prompt, params: TransformerParams, h: float = 1e-5, normalize: bool = False
) -> ParamGradient:
    """Central-difference gradient oracle, perturbing every stored entry."""
    if h <= 0.0:
        raise ValueError("h must be positive")
    from .transformer import forward  # local import to keep the oracle self-contained

    grads = []
    for layer_index in range(len(params.layers)):
        pair_grads = []
        for matrix_index in range(2):
            base = params.layers[layer_index][matrix_index]
            dm = np.zeros_like(base)
            for idx in np.ndindex(base.shape):
                perturbed = params.copy()
                perturbed.sparse = False  # perturbations break the block structure
                perturbed.layers[layer_index][matrix_index][idx] += h
                f_plus = forward(prompt, perturbed, normalize=normalize)
                perturbed.layers[layer_index][matrix_index][idx] -= 2 * h
                f_minus = forward(prompt, perturbed, normalize=normalize)
                dm[idx] = (f_plus - f_minus) / (2.0 * h)
            pair_grads.append(dm)
        grads.append(tuple(pair_grads))
    return ParamGradient(n=params.n, mode=params.mode, layers=grads, sparse=params.sparse)
