"""Numerical certification of the depth-limit guarantees for the TD weights.

Everything here evaluates the hand-built TD parameterization on
enumerated-context prompts with the plain (unnormalized) forward pass,
which is the setting the closed-form error and gradient bounds describe.
Inner expectations (query state via the stationary distribution, successor
state via the transition row) are enumerated exactly; only the expectation
over tasks is ever approximated, by averaging a sampled task set.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .gradients import grad_norm, weighted_grad_batch
from .mrp import Mrp, solve_value
from .transformer import forward_batch, prompt_expected, td_iterates, td_params

SLACK_TOL = 1e-9


@dataclass(frozen=True)
class BoundConstants:
    """Constants entering the gradient and update-norm bounds.

    beta, nu depend on the value scale; c_r and c_v are averages of the
    reward / value sup-norms over a task set, so bounds built from them are
    averages of per-task bounds rather than uniform envelopes.
    """

    n: int
    gamma: float
    beta: float
    zeta: float
    eta: float
    nu: float
    xi: float
    c_r: float
    c_v: float

    @classmethod
    def from_values(cls, n: int, gamma: float, v_inf: float, r_inf: float) -> "BoundConstants":
        beta = n * (1.0 + gamma) ** 2 * v_inf
        zeta = (1.0 + gamma) ** 2
        eta = 1.0 + gamma
        return cls(
            n=n,
            gamma=gamma,
            beta=beta,
            zeta=zeta,
            eta=eta,
            nu=2 * n * (beta + zeta),
            xi=2 * n * eta,
            c_r=r_inf,
            c_v=v_inf,
        )

    @classmethod
    def from_tasks(cls, tasks) -> "BoundConstants":
        tasks = list(tasks)
        if not tasks:
            raise ValueError("need at least one task")
        n = tasks[0].n
        gamma = tasks[0].gamma
        if any(t.n != n or t.gamma != gamma for t in tasks):
            raise ValueError("tasks must share n and gamma")
        r_inf = float(np.mean([np.abs(t.reward).max() for t in tasks]))
        v_inf = float(np.mean([np.abs(solve_value(t)).max() for t in tasks]))
        return cls.from_values(n, gamma, v_inf, r_inf)

    def gradient_poly(self, depth: int) -> float:
        """Polynomial envelope (L^2+L)/2 * nu + L * xi on the gradient L1 norm."""
        return (depth * depth + depth) / 2.0 * self.nu + depth * self.xi

    def neu_td_bound(self, depth: int) -> float:
        """Envelope c_r * gamma^L * poly(L) on the TD update norm."""
        return self.c_r * self.gamma ** depth * self.gradient_poly(depth)

    def neu_mc_bound(self, depth: int) -> float:
        """Envelope c_v * gamma^L * poly(L) on the MC update norm."""
        return self.c_v * self.gamma ** depth * self.gradient_poly(depth)


@dataclass(frozen=True)
class BoundRecord:
    check: str
    depth: int
    gamma: float
    lhs: float
    bound: float

    @property
    def slack(self) -> float:
        return self.bound - self.lhs


@dataclass
class BoundReport:
    """A batch of measured-vs-bound comparisons with a single verdict."""

    records: list

    @property
    def passed(self) -> bool:
        return all(r.slack >= -SLACK_TOL for r in self.records)

    def worst(self) -> BoundRecord:
        return min(self.records, key=lambda r: r.slack)

    def extend(self, other: "BoundReport") -> None:
        self.records.extend(other.records)

    def csv_rows(self):
        yield "check,L,gamma,lhs,bound,slack"
        for r in self.records:
            yield (
                f"{r.check},{r.depth},{float(r.gamma)!r},{float(r.lhs)!r},"
                f"{float(r.bound)!r},{float(r.slack)!r}"
            )

    def to_json_dict(self) -> dict:
        checks = sorted({r.check for r in self.records})
        return {
            "passed": self.passed,
            "n_records": len(self.records),
            "checks": {
                c: {
                    "passed": all(r.slack >= -SLACK_TOL for r in self.records if r.check == c),
                    "min_slack": min(r.slack for r in self.records if r.check == c),
                }
                for c in checks
            },
        }


def _td_values(mrp: Mrp, depth: int) -> np.ndarray:
    """Unnormalized forward values at every query state under the TD weights."""
    params = td_params(mrp.n, depth)
    z = np.stack([prompt_expected(mrp, s).z for s in range(mrp.n)])
    values, _ = forward_batch(z, params)
    return values


def value_error_closed_form(mrp: Mrp, s_q: int, depth: int) -> tuple[float, float]:
    """|value prediction - true value| and its closed form gamma^L |phi_q' P^L v|.

    The two returns agree to floating-point accuracy; returning both lets
    callers cross-check the forward pass against the matrix identity.
    """
    v = solve_value(mrp)
    measured = abs(_td_values(mrp, depth)[s_q] - v[s_q])
    closed = mrp.gamma ** depth * abs(np.linalg.matrix_power(mrp.transition, depth)[s_q] @ v)
    return float(measured), float(closed)


def expected_td_error(mrp: Mrp, s_q: int, depth: int) -> float:
    """Exact expected one-step bootstrap error at the TD weights.

    |r(s_q) + gamma * E_{s'}[TF(Z(s'))] - TF(Z(s_q))| with the successor
    expectation enumerated against the transition row.
    """
    values = _td_values(mrp, depth)
    return float(abs(mrp.reward[s_q] + mrp.gamma * mrp.transition[s_q] @ values - values[s_q]))


def expected_mc_error(mrp: Mrp, s_q: int, depth: int) -> float:
    """Exact expected return-target error |v(s_q) - TF(Z(s_q))|.

    The expected infinite-horizon return from a state is its value, so no
    rollout appears here.
    """
    v = solve_value(mrp)
    return float(abs(v[s_q] - _td_values(mrp, depth)[s_q]))


def embedding_trace_check(mrp: Mrp, s_q: int, depth: int) -> BoundReport:
    """Layer-by-layer envelopes on the evolving bottom row of the embedding.

    Checks, for every layer l: the query entry satisfies
    |y_l^q| <= (1 + gamma^l) ||v||_inf, the context part satisfies
    max_i |Y_l[i]| <= (gamma + gamma^l) ||v||_inf, and the closed form
    Y_l = (w_{l+1} - w_l)' = gamma^l (P^l r)' holds exactly, where w_l are
    the value-iteration partial sums. (Deriving Y_l by substituting the
    query column into the context-column recursion instead yields r' - w_l',
    but that substitution is invalid — context columns carry a discounted
    next-feature block the query column lacks — and r' - w_l' is refuted
    numerically; the envelope above covers the correct closed form since
    gamma^l (1 + gamma) <= gamma + gamma^l.)
    """
    params = td_params(mrp.n, depth)
    _, zs = forward_batch(prompt_expected(mrp, s_q).z[None], params, trace=True)
    w = td_iterates(mrp, depth + 1).w
    v_inf = float(np.abs(solve_value(mrp)).max())
    records = []
    for l in range(depth + 1):
        bottom = zs[l][0, -1]
        y_q = float(bottom[-1])
        y_ctx = bottom[:-1]
        g_l = mrp.gamma ** l
        records.append(
            BoundRecord("query_entry", l, mrp.gamma, abs(y_q), (1.0 + g_l) * v_inf)
        )
        records.append(
            BoundRecord(
                "context_row", l, mrp.gamma, float(np.abs(y_ctx).max()), (mrp.gamma + g_l) * v_inf
            )
        )
        identity_gap = float(np.abs(y_ctx - (w[l + 1] - w[l])).max())
        records.append(BoundRecord("context_row_identity", l, mrp.gamma, identity_gap, SLACK_TOL))
    return BoundReport(records=records)


def _expected_update(params, mrp: Mrp, algorithm: str):
    """Exactly-enumerated semi-gradient update for one task.

    sum_s mu(s) * error(s) * grad TF(Z(s)), with error the expected
    bootstrap residual ("td") or the expected return residual ("mc").
    """
    z = np.stack([prompt_expected(mrp, s).z for s in range(mrp.n)])
    values, _ = forward_batch(z, params)
    if algorithm == "td":
        errors = mrp.reward + mrp.gamma * mrp.transition @ values - values
    elif algorithm == "mc":
        errors = solve_value(mrp) - values
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return weighted_grad_batch(z, mrp.init_dist * errors, params)


def _neu(params, tasks, algorithm: str) -> float:
    """L1 norm of the task-averaged expected update."""
    tasks = list(tasks)
    if not tasks:
        raise ValueError("need at least one task")
    total = None
    for mrp in tasks:
        g = _expected_update(params, mrp, algorithm)
        vec = g.concatenated(sparse=g.sparse)
        total = vec if total is None else total + vec
    return float(np.abs(total / len(tasks)).sum())


def neu_td(params, tasks) -> float:
    """Norm of the expected multi-task TD update over a task set.

    For block-structured parameters the norm runs over the (A, u) entries,
    matching the restricted space the decay guarantee is stated for.
    """
    return _neu(params, tasks, "td")


def neu_mc(params, tasks) -> float:
    """Norm of the expected multi-task MC update over a task set."""
    return _neu(params, tasks, "mc")


def gradient_norm_check(tasks, depths) -> BoundReport:
    """Gradient-magnitude envelope at the TD weights, per task and depth.

    Certifies ||grad TF_L||_1 <= (L^2+L)/2 * nu + L * xi over the (A, u)
    entries, taking the worst query state of each task against that task's
    own constants.
    """
    records = []
    for mrp in tasks:
        v = solve_value(mrp)
        consts = BoundConstants.from_values(
            mrp.n, mrp.gamma, float(np.abs(v).max()), float(np.abs(mrp.reward).max())
        )
        z = np.stack([prompt_expected(mrp, s).z for s in range(mrp.n)])
        for depth in sorted(depths):
            params = td_params(mrp.n, depth)
            lhs = max(
                grad_norm(weighted_grad_batch(z[s:s + 1], np.ones(1), params), sparse=True)
                for s in range(mrp.n)
            )
            records.append(
                BoundRecord("grad_norm", depth, mrp.gamma, lhs, consts.gradient_poly(depth))
            )
    return BoundReport(records=records)


_SWEEP_CHECKS = ("neu_td", "neu_mc", "bootstrap_error", "return_error", "value_error")


def decay_sweep(check: str, depths, tasks) -> BoundReport:
    """Evaluate one certified quantity at the TD weights across depths.

    Asserts the depth-indexed bound at every entry of ``depths`` and, when
    the bound envelope itself has decayed between the extreme depths, that
    the measurement decayed too.
    """
    if check not in _SWEEP_CHECKS:
        raise ValueError(f"unknown check {check!r}; pick one of {_SWEEP_CHECKS}")
    tasks = list(tasks)
    depths = sorted(depths)
    if not depths or depths[0] < 0:
        raise ValueError("need non-negative depths")
    consts = BoundConstants.from_tasks(tasks)
    n, gamma = consts.n, consts.gamma
    records = []
    for depth in depths:
        if check == "neu_td":
            lhs = neu_td(td_params(n, depth), tasks)
            bound = consts.neu_td_bound(depth)
        elif check == "neu_mc":
            lhs = neu_mc(td_params(n, depth), tasks)
            bound = consts.neu_mc_bound(depth)
        else:
            per_task = []
            for mrp in tasks:
                if check == "bootstrap_error":
                    errs = [expected_td_error(mrp, s, depth) for s in range(n)]
                    cap = np.abs(mrp.reward).max()
                elif check == "return_error":
                    errs = [expected_mc_error(mrp, s, depth) for s in range(n)]
                    cap = np.abs(solve_value(mrp)).max()
                else:
                    errs = [value_error_closed_form(mrp, s, depth)[0] for s in range(n)]
                    cap = np.abs(solve_value(mrp)).max()
                per_task.append((max(errs), cap))
            lhs = float(np.mean([e for e, _ in per_task]))
            bound = gamma ** depth * float(np.mean([c for _, c in per_task]))
        records.append(BoundRecord(check, depth, gamma, lhs, bound))
    report = BoundReport(records=records)
    lo, hi = records[0], records[-1]
    if hi.bound < lo.bound:
        # the envelope decayed across the sweep, so the measurement must too
        report.records.append(
            BoundRecord(f"{check}_decay", hi.depth, gamma, hi.lhs, lo.lhs)
        )
    return report
