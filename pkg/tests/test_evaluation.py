"""Ranking, metric, bound, and diagnostic tests with brute-force oracles."""

import numpy as np
import pytest

from advrec.dataio import InteractionSet
from advrec.encoder import build_encoder, representations, score
from advrec.errors import EmptyEval, EmptyFnList, NoCandidates
from advrec.evaluation import (
    RankResult,
    alignment_uniformity,
    dcg_bound_check,
    evaluate_split,
    fn_identification_rate,
    hardness_popularity_profile,
    rank_all,
    topk_metrics,
)
from advrec.loss import EmbedHardness

from conftest import tiny_dataset


def make_encoder(dataset, dim=4, tau=0.5, seed=0):
    return build_encoder("mf", dataset.n_users, dataset.n_items, dim, tau, seed)


def naive_metrics(ranking, positives, k):
    """Brute-force reference for one user."""
    hits = [pos + 1 for pos, item in enumerate(ranking) if item in positives]
    in_top = [p for p in hits if p <= k]
    hr = 1.0 if in_top else 0.0
    recall = len(in_top) / len(positives)
    dcg = sum(1.0 / np.log2(1.0 + p) for p in in_top)
    idcg = sum(1.0 / np.log2(1.0 + r) for r in range(1, min(k, len(positives)) + 1))
    return hr, recall, dcg / idcg


class TestRankAll:
    def test_hand_case(self):
        ds = InteractionSet(1, 3, np.array([[0, 0]]), np.zeros((0, 2)),
                            np.array([[0, 2]]))
        enc = make_encoder(ds, dim=2, tau=1.0)
        enc.user_table.values[0] = [1.0, 0.0]
        enc.item_table.values[1] = [0.0, 1.0]   # score 0
        enc.item_table.values[2] = [1.0, 0.1]   # score ~0.995
        result = rank_all(enc, 0, ds)
        np.testing.assert_array_equal(result.ranking, [2, 1])
        np.testing.assert_array_equal(result.positions, [1])

    def test_ties_break_by_ascending_id(self):
        ds = InteractionSet(1, 4, np.array([[0, 3]]), np.zeros((0, 2)), np.zeros((0, 2)))
        enc = make_encoder(ds, dim=2, tau=1.0)
        enc.user_table.values[0] = [1.0, 0.0]
        for i in range(3):
            enc.item_table.values[i] = [2.0, 0.0]  # all cosine 1
        result = rank_all(enc, 0, ds)
        np.testing.assert_array_equal(result.ranking, [0, 1, 2])

    def test_excludes_exactly_train_positives(self, small_dataset):
        enc = make_encoder(small_dataset, seed=1)
        for u in range(small_dataset.n_users):
            result = rank_all(enc, u, small_dataset)
            train_pos = small_dataset.positives(u, "train")
            expected = sorted(set(range(small_dataset.n_items)) - train_pos)
            assert sorted(result.ranking.tolist()) == expected
            assert len(set(result.ranking.tolist())) == len(result.ranking)

    def test_agrees_with_naive_sort_oracle(self, small_dataset):
        enc = make_encoder(small_dataset, seed=2)
        for u in range(small_dataset.n_users):
            result = rank_all(enc, u, small_dataset)
            cand = sorted(set(range(small_dataset.n_items))
                          - small_dataset.positives(u, "train"))
            scores = {i: score(enc, u, [i])[0] for i in cand}
            oracle = sorted(cand, key=lambda i: (-scores[i], i))
            np.testing.assert_array_equal(result.ranking, oracle)

    def test_candidate_filter(self, small_dataset):
        enc = make_encoder(small_dataset, seed=3)
        allowed = np.array([0, 1, 2])
        result = rank_all(enc, 0, small_dataset, candidate_items=allowed)
        assert set(result.ranking.tolist()) <= {0, 1, 2}

    def test_no_candidates_raises(self):
        ds = InteractionSet(1, 2, np.array([[0, 0], [0, 1]]),
                            np.zeros((0, 2)), np.zeros((0, 2)))
        enc = make_encoder(ds, dim=2)
        with pytest.raises(NoCandidates):
            rank_all(enc, 0, ds)


class TestTopkMetrics:
    @staticmethod
    def result(user, ranking, positives):
        positions = np.array(sorted(pos + 1 for pos, item in enumerate(ranking)
                                    if item in positives), dtype=np.int64)
        return RankResult(user=user, ranking=np.asarray(ranking), positions=positions)

    def test_perfect_ranking(self):
        res = self.result(0, [5, 6, 1, 2], {5, 6})
        report = topk_metrics([res], 20)
        assert (report.hr, report.recall, report.ndcg) == (1.0, 1.0, 1.0)

    def test_outside_cutoff(self):
        ranking = list(range(30))
        res = self.result(0, ranking, {20})  # item 20 sits at rank 21
        report = topk_metrics([res], 20)
        assert (report.hr, report.recall, report.ndcg) == (0.0, 0.0, 0.0)

    def test_rank_two_ndcg(self):
        res = self.result(0, [9, 4, 7], {4})
        report = topk_metrics([res], 20)
        assert report.ndcg == pytest.approx(np.log(2.0) / np.log(3.0), abs=1e-12)

    def test_matches_bruteforce_oracle_sweep(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            n_items = int(rng.integers(5, 40))
            k = int(rng.integers(1, 25))
            ranking = rng.permutation(n_items)
            n_pos = int(rng.integers(1, n_items // 2 + 1))
            positives = set(rng.choice(n_items, size=n_pos, replace=False).tolist())
            res = self.result(0, ranking, positives)
            report = topk_metrics([res], k)
            hr, recall, ndcg = naive_metrics(ranking.tolist(), positives, k)
            assert report.hr == pytest.approx(hr, abs=1e-12)
            assert report.recall == pytest.approx(recall, abs=1e-12)
            assert report.ndcg == pytest.approx(ndcg, abs=1e-12)
            # ndcg = 1 exactly when the positives fill the top min(k, #pos) ranks
            top_filled = set(res.positions.tolist()) >= set(range(1, min(k, n_pos) + 1))
            assert (abs(report.ndcg - 1.0) < 1e-12) == top_filled

    def test_macro_average_skips_users_without_positives(self):
        with_pos = self.result(0, [1, 2], {1})
        without = self.result(1, [1, 2], set())
        report = topk_metrics([with_pos, without], 20)
        assert report.n_users == 1
        assert report.recall == 1.0

    def test_empty_eval_raises(self):
        res = self.result(0, [0, 1], set())
        with pytest.raises(EmptyEval):
            topk_metrics([res], 20)

    def test_invariant_under_monotone_score_transform(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(4, 20))
            scores = rng.normal(size=n)
            candidates = np.arange(n)
            order_raw = candidates[np.argsort(-scores, kind="stable")]
            order_exp = candidates[np.argsort(-np.exp(scores), kind="stable")]
            positives = set(rng.choice(n, size=2, replace=False).tolist())
            a = topk_metrics([self.result(0, order_raw, positives)], 5)
            b = topk_metrics([self.result(0, order_exp, positives)], 5)
            assert (a.hr, a.recall, a.ndcg) == (b.hr, b.recall, b.ndcg)

    def test_bounds(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            ranking = rng.permutation(15)
            positives = set(rng.choice(15, size=3, replace=False).tolist())
            report = topk_metrics([self.result(0, ranking, positives)], 10)
            for value in (report.hr, report.recall, report.ndcg):
                assert 0.0 <= value <= 1.0


class TestDcgBoundCheck:
    def test_dominant_positive_rank_one(self):
        neg_log_dcg, loss, holds = dcg_bound_check(5.0, np.full(4, -5.0), np.zeros(4))
        assert neg_log_dcg == 0.0
        assert holds and loss > 0.0

    def test_all_negatives_above(self):
        s_negs = np.full(5, 3.0)
        neg_log_dcg, loss, holds = dcg_bound_check(0.0, s_negs, np.zeros(5))
        assert neg_log_dcg == pytest.approx(np.log(np.log2(7.0)))
        assert holds

    def test_sweep_never_violated(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            s_pos = float(rng.uniform(-5, 5))
            s_negs = rng.uniform(-5, 5, size=n)
            deltas = rng.uniform(-2, 2, size=n)
            _, _, holds = dcg_bound_check(s_pos, s_negs, deltas)
            assert holds


class TestAlignmentUniformity:
    def test_collapsed_representations(self):
        ds = InteractionSet(2, 2, np.array([[0, 0], [1, 1]]),
                            np.zeros((0, 2)), np.zeros((0, 2)))
        enc = make_encoder(ds, dim=3, tau=1.0)
        enc.user_table.values[:] = [1.0, 0.0, 0.0]
        enc.item_table.values[:] = [2.0, 0.0, 0.0]  # same direction
        align, uniform = alignment_uniformity(
            enc, np.array([[0, 0]]), [("user", 0), ("item", 1)]
        )
        assert align == pytest.approx(0.0, abs=1e-15)
        assert uniform == pytest.approx(0.0, abs=1e-12)

    def test_antipodal_pair(self):
        ds = InteractionSet(1, 1, np.array([[0, 0]]), np.zeros((0, 2)), np.zeros((0, 2)))
        enc = make_encoder(ds, dim=2, tau=1.0)
        enc.user_table.values[0] = [1.0, 0.0]
        enc.item_table.values[0] = [-1.0, 0.0]
        align, uniform = alignment_uniformity(
            enc, np.array([[0, 0]]), [("user", 0), ("item", 0)]
        )
        assert align == pytest.approx(4.0, abs=1e-12)
        assert uniform == pytest.approx(-8.0, abs=1e-12)

    def test_matches_double_loop_oracle(self, small_dataset):
        enc = make_encoder(small_dataset, seed=8)
        pos = small_dataset.train_pairs[:6]
        entities = [("user", u) for u in range(3)] + [("item", i) for i in range(4)]
        align, uniform = alignment_uniformity(enc, pos, entities)

        user_reps, item_reps = representations(enc)
        u_n = user_reps / np.linalg.norm(user_reps, axis=1, keepdims=True)
        i_n = item_reps / np.linalg.norm(item_reps, axis=1, keepdims=True)
        align_ref = float(np.mean([np.sum((u_n[u] - i_n[i]) ** 2) for u, i in pos]))
        points = [u_n[i] if kind == "user" else i_n[i] for kind, i in entities]
        acc = [np.exp(-2.0 * np.sum((points[a] - points[b]) ** 2))
               for a in range(len(points)) for b in range(a + 1, len(points))]
        uniform_ref = float(np.log(np.mean(acc)))
        assert abs(align - align_ref) < 1e-12
        assert abs(uniform - uniform_ref) < 1e-12

    def test_invariant_under_orthogonal_rotation(self, small_dataset):
        enc = make_encoder(small_dataset, dim=4, seed=9)
        pos = small_dataset.train_pairs[:5]
        entities = [("user", 0), ("user", 1), ("item", 0), ("item", 2)]
        before = alignment_uniformity(enc, pos, entities)
        q, _ = np.linalg.qr(np.random.default_rng(10).normal(size=(4, 4)))
        enc.user_table.values[:] = enc.user_table.values @ q.T
        enc.item_table.values[:] = enc.item_table.values @ q.T
        after = alignment_uniformity(enc, pos, entities)
        assert abs(before[0] - after[0]) < 1e-10
        assert abs(before[1] - after[1]) < 1e-10


class TestFnIdentificationRate:
    def test_zero_init_hardness_rate_zero(self, small_dataset):
        enc = make_encoder(small_dataset, seed=11)
        model = EmbedHardness.init(small_dataset.n_users, small_dataset.n_items,
                                   4, seed=11)
        planted = small_dataset.test_pairs
        rate = fn_identification_rate(model, planted, enc, small_dataset,
                                      n_negatives=8, rng=np.random.default_rng(12))
        assert rate == 0.0  # deltas are exactly 0, strict '<' never fires

    def test_below_average_score_is_identified(self, small_dataset):
        enc = make_encoder(small_dataset, seed=13)
        model = EmbedHardness.init(small_dataset.n_users, small_dataset.n_items,
                                   2, seed=13)
        u, j = int(small_dataset.test_pairs[0, 0]), int(small_dataset.test_pairs[0, 1])
        model.user_table.values[u] = [1.0, 0.0]
        model.item_table.values[:] = [1.0, 0.0]
        model.item_table.values[j] = [-1.0, 0.0]  # strictly below every other g
        rate = fn_identification_rate(model, np.array([[u, j]]), enc, small_dataset,
                                      n_negatives=6, rng=np.random.default_rng(14))
        assert rate == 1.0

    def test_empty_list_raises(self, small_dataset):
        enc = make_encoder(small_dataset, seed=15)
        model = EmbedHardness.init(small_dataset.n_users, small_dataset.n_items, 2, 15)
        with pytest.raises(EmptyFnList):
            fn_identification_rate(model, np.zeros((0, 2)), enc, small_dataset,
                                   4, np.random.default_rng(16))


class TestHardnessPopularityProfile:
    def test_zero_init_close_to_uniform(self, small_dataset):
        enc = make_encoder(small_dataset, seed=17)
        model = EmbedHardness.init(small_dataset.n_users, small_dataset.n_items, 3, 17)
        n_neg = 8
        rows = hardness_popularity_profile(model, enc, small_dataset, bins=3,
                                           n_negatives=n_neg,
                                           rng=np.random.default_rng(18))
        for _, mean_p, count in rows:
            if count:
                assert mean_p == pytest.approx(1.0 / n_neg, abs=1e-12)

    def test_counts_partition_all_samples(self, small_dataset):
        enc = make_encoder(small_dataset, seed=19)
        model = EmbedHardness.init(small_dataset.n_users, small_dataset.n_items, 3, 19)
        n_neg, n_anchor = 6, 40
        rows = hardness_popularity_profile(model, enc, small_dataset, bins=4,
                                           n_negatives=n_neg,
                                           rng=np.random.default_rng(20),
                                           n_anchor_samples=n_anchor)
        total = sum(count for _, _, count in rows)
        assert total == n_neg * min(n_anchor, len(small_dataset.train_pairs))

    def test_planted_monotone_hardness_yields_monotone_profile(self, small_dataset):
        enc = make_encoder(small_dataset, seed=21)
        model = EmbedHardness.init(small_dataset.n_users, small_dataset.n_items, 2, 21)
        model.user_table.values[:] = [1.0, 0.0]
        pop = small_dataset.item_popularity.astype(np.float64)
        model.item_table.values[:] = np.stack([pop, np.zeros_like(pop)], axis=1)
        rows = hardness_popularity_profile(model, enc, small_dataset, bins=2,
                                           n_negatives=16,
                                           rng=np.random.default_rng(22),
                                           n_anchor_samples=60)
        means = [m for _, m, c in rows if c]
        assert means == sorted(means, reverse=True)  # popular bin first


class TestEvaluateSplit:
    def test_runs_over_valid_split(self, small_dataset):
        enc = make_encoder(small_dataset, seed=23)
        report = evaluate_split(enc, small_dataset, "valid", k_eval=5)
        assert 0.0 <= report.recall <= 1.0
        assert report.n_users == len(small_dataset.users_with_positives("valid"))
