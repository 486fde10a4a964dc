import math

import numpy as np
import pytest

from aligntrain.linalg import entropy as entropy_fn
from aligntrain.linalg import softmax
from aligntrain.loss import SimilarityMatrix
from aligntrain.scheduler import (
    BatchStatistics,
    LossWeights,
    SchedulerState,
    Strategy,
    apply_cap,
    batch_statistics,
    equal_weights,
    raw_weights_cosine_spread,
    raw_weights_entropy,
    raw_weights_variance,
)


def random_stats(rng, n=32):
    ln_n = math.log(n)
    return BatchStatistics(
        var_i=float(rng.uniform(0, 0.5)),
        var_t=float(rng.uniform(0, 0.5)),
        entropy_i=float(rng.uniform(0, ln_n)),
        entropy_t=float(rng.uniform(0, ln_n)),
        margin_bar_i=float(rng.uniform(-1, 1)),
        margin_bar_t=float(rng.uniform(-1, 1)),
    )


class TestLossWeights:
    def test_must_sum_to_one(self):
        with pytest.raises(ValueError):
            LossWeights(0.6, 0.6)

    def test_must_be_in_unit_interval(self):
        with pytest.raises(ValueError):
            LossWeights(1.2, -0.2)


class TestBatchStatistics:
    def test_uniform_scores(self):
        n = 4
        sim = SimilarityMatrix(np.full((n, n), 0.3), 0.5)
        stats = batch_statistics(sim)
        assert stats.var_i == 0.0
        assert stats.var_t == 0.0
        assert abs(stats.entropy_i - math.log(n)) <= 1e-12
        assert abs(stats.entropy_t - math.log(n)) <= 1e-12
        assert stats.margin_bar_i == 0.0
        assert stats.margin_bar_t == 0.0

    def test_identity_n2_closed_form(self):
        sim = SimilarityMatrix(np.eye(2), 1.0)
        stats = batch_statistics(sim)
        e = math.e
        want_entropy = entropy_fn(np.array([e / (e + 1), 1 / (e + 1)]))
        assert stats.margin_bar_i == 1.0
        assert stats.margin_bar_t == 1.0
        assert abs(stats.entropy_i - want_entropy) <= 1e-12
        assert abs(stats.entropy_t - want_entropy) <= 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        s = rng.uniform(-1, 1, size=(4, 4))
        tau = 0.2
        stats = batch_statistics(SimilarityMatrix(s, tau))

        row_vars, col_vars, row_ents, col_ents, row_margins, col_margins = [], [], [], [], [], []
        for i in range(4):
            row = s[i, :]
            col = s[:, i]
            row_vars.append(((row - row.mean()) ** 2).mean())
            col_vars.append(((col - col.mean()) ** 2).mean())
            row_ents.append(entropy_fn(softmax(row, tau)))
            col_ents.append(entropy_fn(softmax(col, tau)))
            row_margins.append(s[i, i] - max(s[i, j] for j in range(4) if j != i))
            col_margins.append(s[i, i] - max(s[j, i] for j in range(4) if j != i))
        assert abs(stats.var_i - np.mean(row_vars)) <= 1e-12
        assert abs(stats.var_t - np.mean(col_vars)) <= 1e-12
        assert abs(stats.entropy_i - np.mean(row_ents)) <= 1e-12
        assert abs(stats.entropy_t - np.mean(col_ents)) <= 1e-12
        assert abs(stats.margin_bar_i - np.mean(row_margins)) <= 1e-12
        assert abs(stats.margin_bar_t - np.mean(col_margins)) <= 1e-12

    def test_single_pair_rejected(self):
        with pytest.raises(ValueError, match="hardest negative"):
            batch_statistics(SimilarityMatrix(np.array([[1.0]]), 1.0))


class TestRawWeightRules:
    def test_variance_symmetry(self):
        assert raw_weights_variance(0.3, 0.3) == (0.5, 0.5)

    def test_variance_three_to_one(self):
        w_i, w_t = raw_weights_variance(0.1, 0.3)
        assert abs(w_i - 0.75) <= 1e-12
        assert abs(w_t - 0.25) <= 1e-12

    def test_variance_zero_fallback(self):
        assert raw_weights_variance(0.0, 0.0) == (0.5, 0.5)

    def test_variance_monotone_in_sigma_t(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            sigma_i = float(rng.uniform(0, 1))
            lo, hi = sorted(rng.uniform(0, 1, size=2))
            w_lo, _ = raw_weights_variance(sigma_i, lo)
            w_hi, _ = raw_weights_variance(sigma_i, hi)
            assert w_hi >= w_lo - 1e-15

    def test_entropy_equal(self):
        assert raw_weights_entropy(0.3, 0.3, 32) == (0.5, 0.5)

    def test_entropy_both_at_ceiling(self):
        ln_n = math.log(32)
        assert raw_weights_entropy(ln_n, 0.99 * ln_n, 32, 0.9) == (0.5, 0.5)

    def test_entropy_proportional(self):
        w_i, w_t = raw_weights_entropy(0.4, 0.1, 10**6)
        assert abs(w_i - 0.8) <= 1e-12
        assert abs(w_t - 0.2) <= 1e-12

    def test_entropy_both_zero_fallback(self):
        assert raw_weights_entropy(0.0, 0.0, 32) == (0.5, 0.5)

    def test_spread_no_shortfall_fallback(self):
        assert raw_weights_cosine_spread(0.3, 0.25, 0.2) == (0.5, 0.5)

    def test_spread_proportional(self):
        w_i, w_t = raw_weights_cosine_spread(0.0, 0.1, 0.2)
        assert abs(w_i - 2.0 / 3.0) <= 1e-12
        assert abs(w_t - 1.0 / 3.0) <= 1e-12

    def test_spread_equal_shortfalls(self):
        assert raw_weights_cosine_spread(0.05, 0.05, 0.2) == (0.5, 0.5)

    def test_spread_rejects_bad_margin(self):
        with pytest.raises(ValueError):
            raw_weights_cosine_spread(0.1, 0.1, 0.0)


class TestEmaUpdates:
    def stats_with_var(self, v):
        return BatchStatistics(v, v, 0.1, 0.1, 0.0, 0.0)

    def test_first_batch_seeds(self):
        state = SchedulerState(Strategy.VARIANCE, ema_decay=0.9)
        state.observe(self.stats_with_var(0.25), 32)
        assert state.ema_var_i == 0.25

    def test_decay_zero_tracks_latest(self):
        state = SchedulerState(Strategy.VARIANCE, ema_decay=0.0)
        for v in (0.1, 0.4, 0.2):
            state.observe(self.stats_with_var(v), 32)
        assert state.ema_var_i == 0.2

    def test_arithmetic_example(self):
        state = SchedulerState(Strategy.VARIANCE, ema_decay=0.9)
        state.observe(self.stats_with_var(1.0), 32)
        state.observe(self.stats_with_var(2.0), 32)
        assert abs(state.ema_var_i - 1.1) <= 1e-12

    def test_constant_stream_geometric_convergence(self):
        decay = 0.9
        state = SchedulerState(Strategy.VARIANCE, ema_decay=decay)
        state.observe(self.stats_with_var(0.5), 32)  # seeds at 0.5
        target = 0.125
        for k in range(1, 30):
            state.observe(self.stats_with_var(target), 32)
            want_err = decay**k * abs(0.5 - target)
            assert abs(state.ema_var_i - target) <= want_err + 1e-12


class TestApplyCap:
    def test_within_cap_unchanged(self):
        w_i, w_t = apply_cap(equal_weights(), 0.55, 0.45, 0.2)
        assert abs(w_i - 0.55) <= 1e-15
        assert abs(w_t - 0.45) <= 1e-15

    def test_clamps_to_band(self):
        w_i, w_t = apply_cap(equal_weights(), 0.8, 0.2, 0.2)
        assert abs(w_i - 0.6) <= 1e-15
        assert abs(w_t - 0.4) <= 1e-15


class TestCommitEpoch:
    def observe_one(self, state, stats, n=32):
        state.observe(stats, n)

    def test_initial_weights_equal_for_all_strategies(self):
        for strategy in Strategy:
            state = SchedulerState(strategy)
            assert state.weights == equal_weights()

    def test_fixed_constant_under_any_stats(self):
        rng = np.random.default_rng(11)
        state = SchedulerState(Strategy.FIXED)
        for _ in range(50):
            self.observe_one(state, random_stats(rng))
            committed = state.commit_epoch()
            assert committed.w_i == 0.5
            assert committed.w_t == 0.5

    def test_variance_example_with_cap(self):
        state = SchedulerState(Strategy.VARIANCE)
        # EMA seeds directly to the batch values: var = sigma^2
        stats = BatchStatistics(0.01**2, 0.03**2, 0.1, 0.1, 0.0, 0.0)
        self.observe_one(state, stats)
        committed = state.commit_epoch()
        assert abs(committed.w_i - 0.6) <= 1e-12
        assert abs(committed.w_t - 0.4) <= 1e-12
        assert committed.epoch == 1

    def test_no_batches_rejected(self):
        state = SchedulerState(Strategy.VARIANCE)
        with pytest.raises(RuntimeError, match="no batches"):
            state.commit_epoch()

    def test_entropy_epoch_uses_mean_of_batches(self):
        state = SchedulerState(Strategy.ENTROPY, cap_fraction=1.0)
        n = 1000  # large clip ceiling: means pass through unclipped
        state.observe(BatchStatistics(0.0, 0.0, 0.6, 0.0, 0.0, 0.0), n)
        state.observe(BatchStatistics(0.0, 0.0, 0.2, 0.2, 0.0, 0.0), n)
        committed = state.commit_epoch()
        # epoch means: H_I = 0.4, H_T = 0.1 -> raw (0.8, 0.2)
        assert abs(committed.w_i - 0.8) <= 1e-12
        assert abs(committed.w_t - 0.2) <= 1e-12

    def test_accumulators_reset_between_epochs(self):
        state = SchedulerState(Strategy.COSINE_SPREAD, cap_fraction=1.0)
        state.observe(BatchStatistics(0.0, 0.0, 0.1, 0.1, 0.0, 0.2), 8)
        first = state.commit_epoch()
        assert abs(first.w_i - 1.0) < 1e-9  # shortfall only on the image side
        with pytest.raises(RuntimeError):
            state.commit_epoch()  # nothing observed since the last commit


class TestCommittedWeightInvariants:
    @pytest.mark.parametrize("strategy", list(Strategy))
    def test_fresh_state_cap_and_range(self, strategy):
        rng = np.random.default_rng(13)
        for _ in range(300):
            state = SchedulerState(strategy)
            state.observe(random_stats(rng), 32)
            w = state.commit_epoch()
            assert abs(w.w_i + w.w_t - 1.0) <= 1e-12
            assert 0.0 < w.w_i < 1.0
            assert 0.0 < w.w_t < 1.0
            # from a balanced previous pair, the committed step stays within the cap
            assert abs(w.w_i - 0.5) / 0.5 <= state.cap_fraction + 1e-12

    @pytest.mark.parametrize("strategy", list(Strategy))
    def test_chained_commits_respect_cap_bound(self, strategy):
        # After renormalization, the per-epoch relative change is bounded by
        # (1 + cap)/(1 - cap) - 1 = 2*cap/(1 - cap); the clamped values
        # themselves stay within +/- cap of the previous committed pair.
        rng = np.random.default_rng(17)
        state = SchedulerState(strategy)
        cap = state.cap_fraction
        chained_bound = 2 * cap / (1 - cap)
        for _ in range(200):
            prev = state.weights
            state.observe(random_stats(rng), 32)
            w = state.commit_epoch()
            assert abs(w.w_i + w.w_t - 1.0) <= 1e-12
            assert 0.0 < w.w_i < 1.0
            rel_i = abs(w.w_i - prev.w_i) / prev.w_i
            rel_t = abs(w.w_t - prev.w_t) / prev.w_t
            assert max(rel_i, rel_t) <= chained_bound + 1e-12
