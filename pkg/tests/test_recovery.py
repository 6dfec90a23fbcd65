import numpy as np
import pytest

from latentprune import (
    KeepMaskSequence,
    KVCache,
    RecoveryCacheMiss,
    RecoveryConfig,
    RoPEConfig,
    TokenSequence,
    ValidationError,
    build_plan,
    build_window_plan,
    cache_append,
    expand_duplicates,
    full_sequence_attention,
    partial_sum_bound_check,
    recovered_attention,
    recovery_error,
    rope_rotate,
)
from latentprune.fixtures import pattern_mask, token_fixture
from latentprune.recovery import expand_grid, top_m_sum


def mask_from(array):
    return KeepMaskSequence(data=np.asarray(array, dtype=bool))


ROPE = RoPEConfig()


class TestBuildPlan:
    def test_all_true_gives_unit_counts(self):
        mask = mask_from(np.ones((5, 2, 2)))
        plan = build_plan(mask)
        frames, counts = plan.duplication_counts(1, 1)
        assert frames == [0, 1, 2, 3, 4]
        assert counts == [1, 1, 1, 1, 1]
        assert sum(counts) == 5

    def test_run_length_counting(self):
        m = np.zeros((5, 1, 1), dtype=bool)
        m[[0, 3], 0, 0] = True
        plan = build_plan(mask_from(m))
        frames, counts = plan.duplication_counts(0, 0)
        assert frames == [0, 3]
        assert counts == [3, 2]

    def test_counts_sum_to_frames_for_random_masks(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            tp, hp, wp = int(rng.integers(1, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
            m = rng.random((tp, hp, wp)) < 0.5
            m[0] = True
            plan = build_plan(mask_from(m))
            for y in range(hp):
                for x in range(wp):
                    _, counts = plan.duplication_counts(y, x)
                    assert sum(counts) == tp

    def test_source_frame_scan_back(self):
        m = np.zeros((6, 1, 1), dtype=bool)
        m[[0, 2], 0, 0] = True
        plan = build_plan(mask_from(m))
        assert [plan.source_frame_of(0, 0, t) for t in range(6)] == [0, 0, 2, 2, 2, 2]

    def test_window_plan_clips_and_keeps_owner(self):
        m = np.zeros((8, 1, 1), dtype=bool)
        m[[0, 2], 0, 0] = True
        plan = build_window_plan(mask_from(m), 4, 8)
        runs = plan.location_runs(0, 0)
        assert len(runs) == 1
        assert (runs[0].owner_frame, runs[0].start, runs[0].length) == (2, 4, 4)


class TestExpansion:
    def _kept_kv(self, rng, n, nh=2, dh=4):
        return rng.standard_normal((n, nh, dh)), rng.standard_normal((n, nh, dh))

    def test_no_pruning_expansion_is_identity(self):
        rng = np.random.default_rng(1)
        mask = mask_from(np.ones((4, 1, 1)))
        plan = build_plan(mask)
        k, v = self._kept_kv(rng, 4)
        frames, ek, ev = expand_duplicates(
            np.arange(4), k, v, plan.location_runs(0, 0), None,
            RecoveryConfig(m=None, noise_aware=True), ROPE, (0, 0),
        )
        np.testing.assert_array_equal(frames, np.arange(4))
        for i in range(4):
            np.testing.assert_allclose(ek[i], rope_rotate(k[i], (i, 0, 0), ROPE), atol=1e-12)
            np.testing.assert_allclose(ev[i], v[i], atol=1e-15)

    def test_m_degree_keeps_most_recent_positions(self):
        rng = np.random.default_rng(2)
        m = np.zeros((4, 1, 1), dtype=bool)
        m[0] = True  # c_0 = 4
        plan = build_plan(mask_from(m))
        k, v = self._kept_kv(rng, 1)
        cache = KVCache(window=4, grid_hw=(1, 1))
        cache = cache_append(cache, 0, rng.standard_normal((1, 1, 2, 4)), rng.standard_normal((1, 1, 2, 4)))
        frames, ek, _ = expand_duplicates(
            np.array([0]), k, v, plan.location_runs(0, 0), cache,
            RecoveryConfig(m=2, noise_aware=True), ROPE, (0, 0),
        )
        np.testing.assert_array_equal(frames, [2, 3])  # two most recent of run [0, 4)

    def test_full_duplication_count(self):
        m = np.zeros((4, 1, 1), dtype=bool)
        m[0] = True
        plan = build_plan(mask_from(m))
        rng = np.random.default_rng(3)
        k, v = self._kept_kv(rng, 1)
        frames, ek, ev = expand_duplicates(
            np.array([0]), k, v, plan.location_runs(0, 0), None,
            RecoveryConfig(m=None, noise_aware=False), ROPE, (0, 0),
        )
        assert list(frames) == [0, 1, 2, 3]
        # naive mode: every entry is the kept key rotated to its position
        for i, t in enumerate(frames):
            np.testing.assert_allclose(ek[i], rope_rotate(k[0], (int(t), 0, 0), ROPE), atol=1e-12)

    def test_noise_aware_cache_miss_raises(self):
        m = np.zeros((3, 1, 1), dtype=bool)
        m[0] = True
        plan = build_plan(mask_from(m))
        rng = np.random.default_rng(4)
        k, v = self._kept_kv(rng, 1)
        with pytest.raises(RecoveryCacheMiss):
            expand_duplicates(
                np.array([0]), k, v, plan.location_runs(0, 0), None,
                RecoveryConfig(m=None, noise_aware=True), ROPE, (0, 0),
            )

    def test_values_never_rotated_keys_always_rotated(self):
        rng = np.random.default_rng(5)
        seq, cache = token_fixture(6, 2, 2, 16, 2, seed=8)
        mask = pattern_mask(6, 2, 2, "random:0.4", seed=9)
        plan = build_plan(mask)
        kept = mask.data[seq.positions[:, 0], seq.positions[:, 1], seq.positions[:, 2]]
        kept_seq = TokenSequence(
            positions=seq.positions[kept], embeddings=seq.embeddings[kept], weights=seq.weights
        )
        pos, frames, ek, ev = expand_grid(kept_seq, plan, cache, RecoveryConfig(), ROPE)
        assert sum(len(plan.duplication_counts(y, x)[1]) >= 1 for y in range(2) for x in range(2)) == 4
        # every location's covered positions partition [0, T)
        for y in range(2):
            for x in range(2):
                covered = sorted(p[0] for p in pos.tolist() if p[1] == y and p[2] == x)
                assert covered == list(range(6))
        # duplicated values match cache values verbatim (unrotated copy)
        for row, p in enumerate(pos.tolist()):
            t, y, x = p
            if not mask.data[t, y, x]:
                src = cache.closest_frame(t)
                _, v_src = cache.at(src, y, x)
                np.testing.assert_allclose(ev[row], v_src, atol=1e-15)
                k_src, _ = cache.at(src, y, x)
                np.testing.assert_allclose(ek[row], rope_rotate(k_src, (t, y, x), ROPE), atol=1e-12)

    def test_expanded_count_bound(self):
        rng = np.random.default_rng(6)
        for m_degree in (1, 2, None):
            seq, cache = token_fixture(8, 2, 2, 16, 2, seed=10)
            mask = pattern_mask(8, 2, 2, "random:0.5", seed=11)
            plan = build_plan(mask)
            kept = mask.data[seq.positions[:, 0], seq.positions[:, 1], seq.positions[:, 2]]
            kept_seq = TokenSequence(
                positions=seq.positions[kept], embeddings=seq.embeddings[kept], weights=seq.weights
            )
            cfg = RecoveryConfig(m=m_degree)
            pos, _, _, _ = expand_grid(kept_seq, plan, cache, cfg, ROPE)
            bound = 0
            for y in range(2):
                for x in range(2):
                    _, counts = plan.duplication_counts(y, x)
                    m_eff = len(counts) and sum(min(m_degree or c, c) for c in counts)
                    bound += m_eff
            assert pos.shape[0] == bound
            kept_count = int(kept.sum())
            cap = kept_count + sum(
                min((m_degree or c) if m_degree else c, c - 1) if c > 1 else 0
                for y in range(2) for x in range(2)
                for c in plan.duplication_counts(y, x)[1]
            )
            assert pos.shape[0] <= cap + kept_count  # loose sanity on the accounting


class TestRecoveredAttention:
    def test_no_pruning_bit_identical_to_exact(self):
        seq, cache = token_fixture(5, 2, 2, 16, 2, seed=12)
        mask = mask_from(np.ones((5, 2, 2)))
        plan = build_plan(mask)
        rec = recovered_attention(seq, plan, cache, RecoveryConfig(), ROPE)
        exact = full_sequence_attention(seq, ROPE, causal=True)
        np.testing.assert_array_equal(rec, exact)

    def test_fully_redundant_matches_oracle(self):
        seq, cache = token_fixture(8, 3, 3, 24, 3, drift=0.0, noise_sigma=0.0, seed=13)
        mask = pattern_mask(8, 3, 3, "random:0.3", seed=14)
        rep = recovery_error(seq, mask, cache, RecoveryConfig(m=None, noise_aware=True), ROPE)
        assert rep.max_error <= 1e-5
        assert rep.delta <= 1e-9

    def test_error_decreases_with_m_on_redundant_fixture(self):
        # keep {0, 1, T-1}: the late query's coverage of the long middle run
        # grows with m, while every query always retains a visible key
        tp = 10
        seq, cache = token_fixture(tp, 2, 2, 16, 2, drift=0.0, noise_sigma=0.0, seed=15)
        m = np.zeros((tp, 2, 2), dtype=bool)
        m[[0, 1, tp - 1]] = True
        mask = mask_from(m)
        errs = []
        for degree in (1, 2, 4, None):
            rep = recovery_error(seq, mask, cache, RecoveryConfig(m=degree, noise_aware=True), ROPE)
            errs.append(rep.max_error)
        assert errs[0] > errs[-1]
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
        assert errs[-1] <= 1e-5

    def test_query_count_equals_kept_count(self):
        seq, cache = token_fixture(6, 2, 2, 16, 2, seed=17)
        mask = pattern_mask(6, 2, 2, "random:0.5", seed=18)
        plan = build_plan(mask)
        kept = mask.data[seq.positions[:, 0], seq.positions[:, 1], seq.positions[:, 2]]
        kept_seq = TokenSequence(
            positions=seq.positions[kept], embeddings=seq.embeddings[kept], weights=seq.weights
        )
        out = recovered_attention(kept_seq, plan, cache, RecoveryConfig(), ROPE)
        assert out.shape == (int(kept.sum()), 16)

    def test_noise_aware_beats_naive_on_noisy_fixture(self):
        worse = 0
        for seed in range(5):
            seq, cache = token_fixture(8, 2, 2, 16, 2, drift=0.0, noise_sigma=0.5, seed=20 + seed)
            mask = pattern_mask(8, 2, 2, "stride:4", seed=21 + seed)
            aware = recovery_error(seq, mask, cache, RecoveryConfig(m=None, noise_aware=True), ROPE)
            naive = recovery_error(seq, mask, cache, RecoveryConfig(m=None, noise_aware=False), ROPE)
            worse += naive.mean_error > aware.mean_error
        assert worse >= 4  # strictly larger on nearly every seed


class TestPartialSumBound:
    def test_equal_sets_are_equal(self):
        rng = np.random.default_rng(30)
        q = rng.standard_normal(8)
        k = rng.standard_normal(8)
        partial, full = partial_sum_bound_check(q, k, 5, 5, ROPE)
        assert partial == full

    def test_bound_holds_on_random_instances(self):
        rng = np.random.default_rng(31)
        for _ in range(500):
            d = int(rng.choice([4, 8, 16]))
            q = rng.standard_normal(d) * rng.uniform(0.5, 3.0)
            k = rng.standard_normal(d)
            c = int(rng.integers(1, 33))
            m = int(rng.integers(1, c + 1))
            rope = RoPEConfig(base=float(rng.uniform(100, 20000)))
            partial, full = partial_sum_bound_check(q, k, c, m, rope)
            assert partial <= full
            if m < c:
                assert partial < full

    def test_most_recent_selection_near_top_m_for_late_queries(self):
        # quantifies how well the most-recent-m heuristic approximates the true
        # top-m selection when the query is the latest token and, as in real
        # attention, resembles the keys it attends to: the relative-angle
        # response then peaks at the most recent covered positions
        rng = np.random.default_rng(32)
        ratios = []
        for _ in range(200):
            d = 16
            c = int(rng.integers(4, 17))
            m = max(1, c // 4)
            k = rng.standard_normal(d)
            q = rope_rotate(k + 0.3 * rng.standard_normal(d), (c - 1, 0, 0), ROPE)
            partial, _ = partial_sum_bound_check(q, k, c, m, ROPE)
            best = top_m_sum(q, k, c, m, ROPE)
            ratios.append(partial / best)
        assert float(np.mean(ratios)) >= 0.95

    def test_invalid_m_rejected(self):
        q = np.ones(4)
        with pytest.raises(ValidationError):
            partial_sum_bound_check(q, q, 3, 4, ROPE)


def test_recovery_error_scales_with_delta():
    # a sparse cache forces duplicates to rotate from distant clean frames, so
    # the drifting content produces a nonzero, controllable key error
    errs = {}
    for drift in (0.05, 0.1):
        seq, cache = token_fixture(
            8, 2, 2, 16, 2, drift=drift, noise_sigma=0.0, seed=40, cache_frames=[0, 4]
        )
        mask = pattern_mask(8, 2, 2, "stride:4", seed=41)
        rep = recovery_error(seq, mask, cache, RecoveryConfig(m=None, noise_aware=True), ROPE)
        errs[drift] = rep
    assert errs[0.1].delta > errs[0.05].delta > 0
    ratio = errs[0.1].max_error / max(errs[0.05].max_error, 1e-300)
    assert ratio < 8.0  # Lipschitz-like growth, not explosive
