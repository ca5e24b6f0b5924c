"""Validation-time evaluation: MSVE curves, weight-pattern reports, baselines.

Validation always uses sampled contexts even though training prompts are
expected-construction; the asymmetry is deliberate (frozen weights are
judged on the statistics they would meet at deployment). Sampled-context
forward passes are 1/m-normalized, matching training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mrp import Mrp, Trajectory, generate_boyan, generate_loop, solve_value, stationary_distribution, unroll, truncated_return
from .transformer import TransformerParams, forward_batch, prompt_expected, prompt_sampled, td_params


@dataclass(frozen=True)
class EvalReport:
    """Mean/stderr MSVE per context length over a validation task set."""

    lengths: np.ndarray
    msve_mean: np.ndarray
    msve_stderr: np.ndarray
    n_tasks: int
    seed: int | None = None
    meta: dict | None = None

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=int)
        mean = np.asarray(self.msve_mean, dtype=float)
        stderr = np.asarray(self.msve_stderr, dtype=float)
        if not (lengths.shape == mean.shape == stderr.shape):
            raise ValueError("lengths, means, and stderrs must align")
        if lengths.size and np.any(np.diff(lengths) <= 0):
            raise ValueError("lengths must be strictly increasing")
        if np.any(mean < 0.0) or np.any(stderr < 0.0):
            raise ValueError("MSVE and its stderr are nonnegative")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "msve_mean", mean)
        object.__setattr__(self, "msve_stderr", stderr)

    def csv_rows(self):
        yield "context_length,msve_mean,msve_stderr,n_tasks,seed"
        seed = "" if self.seed is None else self.seed
        for m, mean, err in zip(self.lengths, self.msve_mean, self.msve_stderr):
            yield f"{int(m)},{float(mean)!r},{float(err)!r},{self.n_tasks},{seed}"


def default_lengths() -> np.ndarray:
    """Validation context lengths 5, 10, ..., 100."""
    return np.arange(5, 101, 5)


def msve_point(
    params: TransformerParams,
    mrp: Mrp,
    m: int,
    rng: np.random.Generator,
    context: str = "sampled",
) -> float:
    """Stationary-weighted squared value error at one context length.

    Rolls a single (m+1)-step trajectory, builds one sampled prompt per
    query state over it, and returns sum_s mu(s) (TF(Z(s)) - v(s))^2 with
    the 1/m-normalized forward pass. ``context="expected"`` instead scores
    the enumerated-context prompt (m and rng are ignored) with the plain
    forward pass, the setting of the closed-form depth-limit identities.
    """
    if m < 0:
        raise ValueError("context length must be >= 0")
    mu = stationary_distribution(mrp.transition)
    v = solve_value(mrp)
    if context == "expected":
        z = np.stack([prompt_expected(mrp, s).z for s in range(mrp.n)])
        values, _ = forward_batch(z, params)
    elif context == "sampled":
        traj = unroll(mrp, m + 1, rng)
        z = np.stack(
            [prompt_sampled(traj, m, s, mrp.gamma, n=mrp.n).z for s in range(mrp.n)]
        )
        values, _ = forward_batch(z, params, normalize=True)
    else:
        raise ValueError(f"unknown context kind {context!r}")
    return float(mu @ (values - v) ** 2)


def msve_curve(
    params: TransformerParams,
    n_tasks: int,
    lengths,
    rng: np.random.Generator,
    family: str = "boyan",
    gamma: float = 0.9,
    seed: int | None = None,
) -> EvalReport:
    """Mean MSVE across fresh validation tasks at each context length.

    Per-length trajectories are sampled independently rather than as
    prefixes of one rollout, so the points carry independent noise.
    """
    lengths = np.asarray(sorted(lengths), dtype=int)
    if lengths.size == 0:
        raise ValueError("need at least one context length")
    if family == "boyan":
        tasks = [generate_boyan(params.n, rng, gamma=gamma) for _ in range(n_tasks)]
    elif family == "loop":
        tasks = [generate_loop(params.n, 0.5, rng, gamma=gamma) for _ in range(n_tasks)]
    else:
        raise ValueError(f"unknown task family {family!r}")
    scores = np.array(
        [[msve_point(params, t, int(m), rng) for t in tasks] for m in lengths]
    )
    stderr = (
        scores.std(axis=1, ddof=1) / np.sqrt(n_tasks) if n_tasks > 1 else np.zeros(len(lengths))
    )
    return EvalReport(
        lengths=lengths,
        msve_mean=scores.mean(axis=1),
        msve_stderr=stderr,
        n_tasks=n_tasks,
        seed=seed,
        meta={"n": params.n, "depth": params.depth, "gamma": gamma, "family": family},
    )


@dataclass(frozen=True)
class WeightReport:
    """Trained weights against the hand-built TD pattern.

    Matrices are max-abs normalized per trial before averaging, and the
    means renormalized, so every stored entry lies in [-1, 1] and the
    report is invariant to positive rescaling of the inputs.
    """

    p_trials: np.ndarray  # (T, 2n+1, 2n+1), normalized per trial
    q_trials: np.ndarray
    p_mean: np.ndarray
    q_mean: np.ndarray
    p_corr: float
    q_corr: float
    p_off_pattern: float
    q_off_pattern: float

    def to_json_dict(self) -> dict:
        return {
            "n_trials": int(self.p_trials.shape[0]),
            "p_mean": self.p_mean.tolist(),
            "q_mean": self.q_mean.tolist(),
            "p_corr": self.p_corr,
            "q_corr": self.q_corr,
            "p_off_pattern": self.p_off_pattern,
            "q_off_pattern": self.q_off_pattern,
        }


def _normalized(matrix: np.ndarray) -> np.ndarray:
    scale = np.abs(matrix).max()
    return matrix / scale if scale > 0.0 else matrix.copy()


def _pattern_scores(mean: np.ndarray, pattern: np.ndarray) -> tuple[float, float]:
    corr = float(np.corrcoef(mean.ravel(), pattern.ravel())[0, 1])
    total = float((mean ** 2).sum())
    off = float((mean[pattern == 0.0] ** 2).sum() / total) if total > 0.0 else 0.0
    return corr, off


def weight_report(checkpoints) -> WeightReport:
    """Alignment of trained looped weights with the TD construction.

    Accepts a sequence of TransformerParams (or objects exposing
    ``.params``), one per trial. Correlation is the Pearson coefficient
    between the vectorized normalized mean matrix and the corresponding TD
    pattern; off-pattern energy is the squared-mass fraction outside the
    pattern's support.
    """
    param_list = [getattr(c, "params", c) for c in checkpoints]
    if not param_list:
        raise ValueError("need at least one checkpoint")
    n = param_list[0].n
    if any(p.n != n or len(p.layers) != 1 for p in param_list):
        raise ValueError("checkpoints must be looped with a shared state count")
    td_p, td_q = td_params(n, 1).layers[0]
    p_trials = np.stack([_normalized(p.layers[0][0]) for p in param_list])
    q_trials = np.stack([_normalized(p.layers[0][1]) for p in param_list])
    p_mean = _normalized(p_trials.mean(axis=0))
    q_mean = _normalized(q_trials.mean(axis=0))
    p_corr, p_off = _pattern_scores(p_mean, td_p)
    q_corr, q_off = _pattern_scores(q_mean, td_q)
    return WeightReport(
        p_trials=p_trials,
        q_trials=q_trials,
        p_mean=p_mean,
        q_mean=q_mean,
        p_corr=p_corr,
        q_corr=q_corr,
        p_off_pattern=p_off,
        q_off_pattern=q_off,
    )


def linear_td_baseline(traj: Trajectory, alpha: float, gamma: float, steps: int) -> np.ndarray:
    """Tabular (one-hot linear) TD(0) along a recorded trajectory, w_0 = 0."""
    if steps > len(traj) - 1:
        raise ValueError("trajectory has too few transitions")
    n = int(traj.states.max()) + 1
    w = np.zeros(n)
    for t in range(steps):
        s, s_next = traj.states[t], traj.states[t + 1]
        w[s] += alpha * (traj.rewards[t] + gamma * w[s_next] - w[s])
    return w


def linear_mc_baseline(
    mrp: Mrp, alpha: float, tau: int, steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Tabular Monte Carlo regression toward truncated returns.

    Walks the chain for ``steps`` visits; each visited state takes one step
    toward a freshly sampled tau-step return from that state.
    """
    w = np.zeros(mrp.n)
    traj = unroll(mrp, max(steps - 1, 0), rng)
    for t in range(steps):
        s = int(traj.states[t])
        g = truncated_return(mrp, s, tau, rng)
        w[s] += alpha * (g - w[s])
    return w
