import numpy as np
import pytest

from ictd.evaluation import (
    EvalReport,
    default_lengths,
    linear_mc_baseline,
    linear_td_baseline,
    msve_curve,
    msve_point,
    weight_report,
)
from ictd.mrp import Mrp, generate_boyan, solve_value, stationary_distribution, unroll
from ictd.transformer import TransformerParams, sparse_params, td_params


class TestMsvePoint:
    def test_empty_context_scores_zero_prediction(self, mrp_a):
        mu = stationary_distribution(mrp_a.transition)
        v = solve_value(mrp_a)
        got = msve_point(td_params(2, 30), mrp_a, 0, np.random.default_rng(0))
        assert got == pytest.approx(mu @ v**2, abs=1e-12)

    def test_expected_context_matches_depth_limit_identity(self, mrp_a):
        depth = 5
        mu = stationary_distribution(mrp_a.transition)
        v = solve_value(mrp_a)
        p_l = np.linalg.matrix_power(mrp_a.transition, depth)
        oracle = sum(
            mu[s] * mrp_a.gamma ** (2 * depth) * (p_l[s] @ v) ** 2 for s in range(2)
        )
        got = msve_point(td_params(2, depth), mrp_a, 2, np.random.default_rng(0), context="expected")
        assert got == pytest.approx(oracle, abs=1e-12)

    def test_deterministic_chain_sampled_equals_expected_statistics(self, mrp_b):
        got = msve_point(td_params(2, 30), mrp_b, 2, np.random.default_rng(0))
        assert got <= 1e-3

    def test_unknown_context_kind(self, mrp_a):
        with pytest.raises(ValueError):
            msve_point(td_params(2, 5), mrp_a, 3, np.random.default_rng(0), context="typo")

    def test_relabeling_invariance(self):
        # permuting the state labels permutes prompts and stationary
        # weights coherently, so the expected-context MSVE is unchanged
        rng = np.random.default_rng(1)
        for _ in range(10):
            mrp = generate_boyan(5, rng)
            perm = rng.permutation(5)
            permuted = Mrp(
                transition=mrp.transition[np.ix_(perm, perm)],
                reward=mrp.reward[perm],
                gamma=mrp.gamma,
                init_dist=mrp.init_dist[perm],
            )
            a = msve_point(td_params(5, 12), mrp, 5, rng, context="expected")
            b = msve_point(td_params(5, 12), permuted, 5, rng, context="expected")
            assert a == pytest.approx(b, abs=1e-10)


class TestMsveCurve:
    def test_length_zero_equals_zero_prediction(self):
        params = td_params(5, 10)
        report = msve_curve(params, 5, [0], np.random.default_rng(2), seed=2)
        rng = np.random.default_rng(2)
        tasks = [generate_boyan(5, rng) for _ in range(5)]
        expected = np.mean(
            [
                stationary_distribution(t.transition) @ solve_value(t) ** 2
                for t in tasks
            ]
        )
        assert report.msve_mean[0] == pytest.approx(expected, abs=1e-12)

    def test_td_weights_improve_with_context_on_average(self):
        # 200-task mean MSVE at m=100 sits clearly below m=5
        params = td_params(5, 30)
        report = msve_curve(params, 200, [5, 100], np.random.default_rng(3))
        short, long_ = report.msve_mean
        margin = 3 * np.hypot(*report.msve_stderr)
        assert long_ < short - margin

    def test_csv_schema(self):
        report = msve_curve(td_params(3, 5), 3, [5, 10], np.random.default_rng(4), seed=4)
        rows = list(report.csv_rows())
        assert rows[0] == "context_length,msve_mean,msve_stderr,n_tasks,seed"
        assert rows[1].split(",")[0] == "5" and rows[1].endswith(",3,4")

    def test_default_lengths(self):
        np.testing.assert_array_equal(default_lengths(), np.arange(5, 101, 5))

    def test_report_invariants(self):
        with pytest.raises(ValueError):
            EvalReport(lengths=[5, 5], msve_mean=[1.0, 1.0], msve_stderr=[0.0, 0.0], n_tasks=1)
        with pytest.raises(ValueError):
            EvalReport(lengths=[5], msve_mean=[-1.0], msve_stderr=[0.0], n_tasks=1)


class TestWeightReport:
    def test_td_weights_are_perfectly_aligned(self):
        report = weight_report([td_params(5, 30)])
        assert report.p_corr == pytest.approx(1.0)
        assert report.q_corr == pytest.approx(1.0)
        assert report.p_off_pattern == 0.0
        assert report.q_off_pattern == 0.0

    def test_scale_invariance(self):
        params = td_params(3, 10)
        a, u = params.layers[0][1][:6, :6], np.zeros(6)
        scaled = sparse_params(7.3 * a, u, 3, 10)
        base = weight_report([params])
        other = weight_report([scaled])
        assert other.q_corr == pytest.approx(base.q_corr)
        np.testing.assert_allclose(other.q_mean, base.q_mean, atol=1e-12)

    def test_normalization_is_idempotent(self):
        rng = np.random.default_rng(5)
        params = TransformerParams(
            n=2, depth=1, layers=[(rng.normal(size=(5, 5)), rng.normal(size=(5, 5)))], mode="looped"
        )
        once = weight_report([params])
        again = weight_report(
            [TransformerParams(n=2, depth=1, layers=[(once.p_mean, once.q_mean)], mode="looped")]
        )
        np.testing.assert_allclose(again.p_mean, once.p_mean, atol=1e-12)
        np.testing.assert_allclose(again.q_mean, once.q_mean, atol=1e-12)

    def test_random_weights_score_near_zero(self):
        rng = np.random.default_rng(6)
        hits = 0
        draws = 1000
        for _ in range(draws):
            params = TransformerParams(
                n=5,
                depth=1,
                layers=[(rng.normal(size=(11, 11)), rng.normal(size=(11, 11)))],
                mode="looped",
            )
            report = weight_report([params])
            if abs(report.p_corr) >= 0.3 or abs(report.q_corr) >= 0.3:
                hits += 1
        assert hits <= 10  # < 1% of draws

    def test_entries_stay_in_unit_range(self):
        rng = np.random.default_rng(7)
        reports = weight_report(
            [
                TransformerParams(
                    n=2, depth=1, layers=[(rng.normal(size=(5, 5)), rng.normal(size=(5, 5)))], mode="looped"
                )
                for _ in range(4)
            ]
        )
        for matrix in (reports.p_trials, reports.q_trials, reports.p_mean, reports.q_mean):
            assert np.abs(matrix).max() <= 1.0 + 1e-12

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            weight_report([])


class TestLinearBaselines:
    def test_td_one_step_full_replacement(self, mrp_b):
        traj = unroll(mrp_b, 1, np.random.default_rng(0), start=0)
        np.testing.assert_allclose(linear_td_baseline(traj, 1.0, 0.5, 1), [1.0, 0.0])

    def test_td_zero_step_size(self, mrp_a):
        traj = unroll(mrp_a, 10, np.random.default_rng(0))
        np.testing.assert_array_equal(linear_td_baseline(traj, 0.0, 0.5, 10), np.zeros(2))

    def test_td_converges_to_value(self, mrp_a):
        traj = unroll(mrp_a, 20000, np.random.default_rng(1))
        w = linear_td_baseline(traj, 0.01, 0.5, 20000)
        assert np.abs(w - solve_value(mrp_a)).max() <= 0.1

    def test_td_rejects_short_trajectory(self, mrp_a):
        traj = unroll(mrp_a, 3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            linear_td_baseline(traj, 0.1, 0.5, 10)

    def test_mc_single_state_single_update(self, single_state):
        w = linear_mc_baseline(single_state, 1.0, 4, 1, np.random.default_rng(0))
        # deterministic chain: the tau-step return is the geometric sum
        assert w[0] == pytest.approx(1 + 0.5 + 0.25 + 0.125)

    def test_mc_gamma_zero_learns_rewards(self):
        mrp = Mrp(
            transition=np.array([[0.5, 0.5], [0.5, 0.5]]),
            reward=np.array([1.0, -1.0]),
            gamma=0.0,
            init_dist=np.array([0.5, 0.5]),
        )
        w = linear_mc_baseline(mrp, 0.2, 1, 2000, np.random.default_rng(2))
        assert np.abs(w - mrp.reward).max() <= 0.1

    def test_mc_converges_to_value(self, mrp_a):
        w = linear_mc_baseline(mrp_a, 0.01, 50, 5000, np.random.default_rng(3))
        assert np.abs(w - solve_value(mrp_a)).max() <= 0.1
