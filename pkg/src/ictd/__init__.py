"""In-context TD: looped linear transformers that run policy evaluation.

The package builds small Markov reward processes, a masked linear-attention
transformer whose hand-constructed weights execute batched TD iterations in
the forward pass, multi-task TD/MC pretraining that recovers those weights,
and numerical certification of the depth-limit error and update-norm bounds.
"""

from .estimator import LoopedTdRegressor
from .evaluation import (
    EvalReport,
    WeightReport,
    default_lengths,
    linear_mc_baseline,
    linear_td_baseline,
    msve_curve,
    msve_point,
    weight_report,
)
from .gradients import ParamGradient, finite_diff_grad, grad_norm, grad_output, weighted_grad_batch
from .mrp import (
    Mrp,
    NonErgodicError,
    Trajectory,
    generate_boyan,
    generate_loop,
    one_hot,
    solve_value,
    stationary_distribution,
    truncated_return,
    unroll,
)
from .pretrain import AdamState, Checkpoint, TrainConfig, adam_step, init_params, train, train_mc, train_td, trial_rng
from .transformer import (
    DivergenceError,
    Prompt,
    TransformerParams,
    attention_layer,
    forward,
    forward_batch,
    prompt_expected,
    prompt_from_transitions,
    prompt_sampled,
    sparse_params,
    td_iterates,
    td_params,
)
from .verify import (
    BoundConstants,
    BoundRecord,
    BoundReport,
    decay_sweep,
    embedding_trace_check,
    expected_mc_error,
    expected_td_error,
    neu_mc,
    neu_td,
    value_error_closed_form,
)

__version__ = "0.1.0"
