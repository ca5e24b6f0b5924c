"""Multi-task TD and MC pretraining of the looped linear transformer.

Each task draws a fresh MRP, rolls a short trajectory, aggregates
semi-gradient updates over the batch, and applies one optimizer step.
Targets never contribute gradient: the update direction is the per-sample
error times the gradient of the prediction alone.

Training runs the 1/m-normalized forward pass (m = n for the enumerated
training prompts), matching how checkpoints are later evaluated on sampled
contexts of arbitrary length; see forward_batch for why the normalization
is required there.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .gradients import weighted_grad_batch
from .mrp import Mrp, generate_boyan, generate_loop, truncated_returns_batch, unroll
from .transformer import (
    DivergenceError,
    TransformerParams,
    forward_batch,
    prompt_expected,
    sparse_params,
)


@dataclass
class TrainConfig:
    """Hyperparameters for one pretraining run.

    Defaults mirror the reference experimental setup: 5-state Boyan chains,
    a depth-30 looped transformer, gamma 0.9, batches of 64 over 20k tasks
    with Adam at 1e-3. ``init_scale`` is a choice, not a reported value.

    ``parameterization`` selects the trainable coordinates. "structured"
    trains the (A, u) block entries only, which is stable at depth 30;
    "full" trains every entry of P and Q, which at this depth drifts into
    a regime where the forward pass overflows and training aborts with
    DivergenceError (kept available for shallow nets and for demonstrating
    exactly that failure).
    """

    algorithm: str = "td"  # "td" | "mc"
    parameterization: str = "structured"  # "structured" | "full"
    n_states: int = 5
    depth: int = 30
    gamma: float = 0.9
    batch: int = 64
    n_tasks: int = 20000
    learning_rate: float = 1e-3
    mc_horizon: int = 200
    mrp_family: str = "boyan"  # "boyan" | "loop"
    loop_threshold: float = 0.5
    init_scale: float = 1e-2
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only
    use_adam: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.algorithm not in ("td", "mc"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.mrp_family not in ("boyan", "loop"):
            raise ValueError(f"unknown MRP family {self.mrp_family!r}")
        if self.parameterization not in ("structured", "full"):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if self.batch < 1 or self.n_tasks < 0 or self.learning_rate <= 0 or self.mc_horizon < 1:
            raise ValueError("invalid training hyperparameters")

    def sample_task(self, rng: np.random.Generator) -> Mrp:
        if self.mrp_family == "boyan":
            return generate_boyan(self.n_states, rng, gamma=self.gamma)
        return generate_loop(self.n_states, self.loop_threshold, rng, gamma=self.gamma)

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per stored parameter array."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params: TransformerParams, beta1: float, beta2: float, eps: float) -> "AdamState":
        arrays = [a for pair in params.layers for a in pair]
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


@dataclass
class Checkpoint:
    """Snapshot of the parameters plus training progress statistics."""

    params: TransformerParams
    config: TrainConfig
    tasks_seen: int
    mean_abs_error: float

    def to_json_dict(self) -> dict:
        return {
            "params": self.params.to_json_dict(),
            "config": self.config.to_json_dict(),
            "tasks_seen": self.tasks_seen,
            "mean_abs_error": self.mean_abs_error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Checkpoint":
        return cls(
            params=TransformerParams.from_json_dict(obj["params"]),
            config=TrainConfig.from_json_dict(obj["config"]),
            tasks_seen=int(obj["tasks_seen"]),
            mean_abs_error=float(obj["mean_abs_error"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        return cls.from_json_dict(json.loads(text))


def init_params(
    n: int,
    depth: int,
    init_scale: float,
    rng: np.random.Generator,
    parameterization: str = "structured",
) -> TransformerParams:
    """Looped init with i.i.d. zero-mean Gaussian entries on the trainable set.

    "structured" draws A and u only (P's bottom-right entry fixed at 1);
    "full" draws every entry of P and Q.
    """
    if init_scale <= 0.0:
        raise ValueError("init_scale must be positive")
    if parameterization == "structured":
        a = rng.normal(0.0, init_scale, size=(2 * n, 2 * n))
        u = rng.normal(0.0, init_scale, size=2 * n)
        return sparse_params(a, u, n, depth)
    d = 2 * n + 1
    p = rng.normal(0.0, init_scale, size=(d, d))
    q = rng.normal(0.0, init_scale, size=(d, d))
    return TransformerParams(n=n, depth=depth, layers=[(p, q)], mode="looped")


def adam_step(
    state: AdamState, params: TransformerParams, direction, lr: float
) -> tuple[AdamState, TransformerParams]:
    """One bias-corrected Adam step moving the parameters ALONG ``direction``.

    ``direction`` is the aggregated semi-gradient (an ascent direction on
    the pretraining update); pass its layer list or a ParamGradient.
    """
    if hasattr(direction, "layers"):
        direction = direction.layers
    arrays = [a for pair in direction for a in pair]
    if any(not np.all(np.isfinite(a * a)) for a in arrays):
        # the square also guards the second-moment accumulator: an entry
        # whose square overflows would silently freeze its coordinate forever
        raise DivergenceError("non-finite update direction")
    state = AdamState(
        m=list(state.m), v=list(state.v), step=state.step + 1,
        beta1=state.beta1, beta2=state.beta2, eps=state.eps,
    )
    new_layers = []
    flat_params = [a for pair in params.layers for a in pair]
    stepped = []
    for i, (theta, g) in enumerate(zip(flat_params, arrays)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / (1.0 - state.beta1 ** state.step)
        v_hat = state.v[i] / (1.0 - state.beta2 ** state.step)
        stepped.append(theta + lr * m_hat / (np.sqrt(v_hat) + state.eps))
    for i in range(0, len(stepped), 2):
        new_layers.append((stepped[i], stepped[i + 1]))
    new_params = TransformerParams(
        n=params.n, depth=params.depth, layers=new_layers, mode=params.mode, sparse=params.sparse
    )
    return state, new_params


def _sgd_step(params: TransformerParams, direction, lr: float) -> TransformerParams:
    if hasattr(direction, "layers"):
        direction = direction.layers
    new_layers = [
        (p + lr * dp, q + lr * dq) for (p, q), (dp, dq) in zip(params.layers, direction)
    ]
    return TransformerParams(
        n=params.n, depth=params.depth, layers=new_layers, mode=params.mode, sparse=params.sparse
    )


def _expected_prompts(mrp: Mrp) -> np.ndarray:
    """Stack of expected-construction prompts, one per query state."""
    return np.stack([prompt_expected(mrp, s).z for s in range(mrp.n)])


def _aggregate_direction(z_stack, per_state_error, params, batch):
    """zeta / b with zeta = sum_i error_i * grad TF(Z(S_i)).

    Samples sharing a query state share the prompt and the gradient, so the
    per-sample sum collapses to one weighted backward over the n distinct
    query prompts.
    """
    return weighted_grad_batch(z_stack, per_state_error / batch, params, normalize=True)


def _restrict_to_structured(direction, n: int):
    """Zero every direction entry outside the (A, u) blocks."""
    d = 2 * n
    restricted = []
    for dp, dq in direction.layers:
        dp_r = np.zeros_like(dp)
        dp_r[d, :d] = dp[d, :d]
        dq_r = np.zeros_like(dq)
        dq_r[:d, :d] = dq[:d, :d]
        restricted.append((dp_r, dq_r))
    return restricted


def train(config: TrainConfig, rng: np.random.Generator | None = None, progress=None):
    """Run multi-task TD or MC pretraining; returns the checkpoint sequence.

    ``progress`` is an optional callable receiving
    (task_index, mean_abs_error, param_norm) once per task.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    params = init_params(
        config.n_states, config.depth, config.init_scale, rng, config.parameterization
    )
    adam = AdamState.like(params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    n, b = config.n_states, config.batch
    checkpoints = [Checkpoint(params=params.copy(), config=config, tasks_seen=0, mean_abs_error=float("nan"))]
    abs_errors = []

    for task_index in range(config.n_tasks):
        mrp = config.sample_task(rng)
        z_stack = _expected_prompts(mrp)
        try:
            if config.algorithm == "td":
                traj = unroll(mrp, b, rng)
                values, _ = forward_batch(z_stack, params, normalize=True)
                deltas = (
                    traj.rewards
                    + config.gamma * values[traj.states[1:]]
                    - values[traj.states[:-1]]
                )
                per_state = np.bincount(traj.states[:-1], weights=deltas, minlength=n)
            else:
                traj = unroll(mrp, b - 1, rng)
                returns = truncated_returns_batch(mrp, traj.states, config.mc_horizon, rng)
                values, _ = forward_batch(z_stack, params, normalize=True)
                deltas = returns - values[traj.states]
                per_state = np.bincount(traj.states, weights=deltas, minlength=n)
            direction = _aggregate_direction(z_stack, per_state, params, b)
            if config.parameterization == "structured":
                direction = _restrict_to_structured(direction, n)
            if config.use_adam:
                adam, params = adam_step(adam, params, direction, config.learning_rate)
            else:
                params = _sgd_step(params, direction, config.learning_rate)
        except DivergenceError as exc:
            raise DivergenceError(f"training diverged at task {task_index}: {exc}") from exc

        mean_abs = float(np.mean(np.abs(deltas)))
        abs_errors.append(mean_abs)
        if progress is not None:
            param_norm = float(sum(np.abs(a).sum() for pair in params.layers for a in pair))
            progress(task_index, mean_abs, param_norm)
        if config.checkpoint_every and (task_index + 1) % config.checkpoint_every == 0:
            checkpoints.append(
                Checkpoint(
                    params=params.copy(),
                    config=config,
                    tasks_seen=task_index + 1,
                    mean_abs_error=mean_abs,
                )
            )

    if config.n_tasks and (not config.checkpoint_every or config.n_tasks % config.checkpoint_every):
        checkpoints.append(
            Checkpoint(
                params=params.copy(),
                config=config,
                tasks_seen=config.n_tasks,
                mean_abs_error=abs_errors[-1] if abs_errors else float("nan"),
            )
        )
    return checkpoints


def train_td(config: TrainConfig, rng=None, progress=None):
    if config.algorithm != "td":
        raise ValueError("train_td requires algorithm='td'")
    return train(config, rng, progress)


def train_mc(config: TrainConfig, rng=None, progress=None):
    if config.algorithm != "mc":
        raise ValueError("train_mc requires algorithm='mc'")
    return train(config, rng, progress)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent child stream for a trial, derived from the base seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))
