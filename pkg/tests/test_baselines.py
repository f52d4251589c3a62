"""Random, k-means, and entropy baseline selectors."""

import numpy as np

from firalkit.baselines import entropy_select, kmeans_select, random_select
from firalkit.logistic import ClassProbTable


class TestRandomSelect:
    def test_full_budget_is_permutation(self):
        pool = np.array([3, 5, 8, 13])
        got = random_select(pool, 4, seed=0)
        assert sorted(got) == sorted(pool)

    def test_deterministic(self):
        pool = np.arange(20)
        np.testing.assert_array_equal(random_select(pool, 5, seed=3), random_select(pool, 5, seed=3))

    def test_selection_frequency_binomial(self):
        # Each index is picked with probability b/n; 10^4 trials, 5 sigma band.
        pool = np.arange(8)
        trials, budget = 10_000, 2
        counts = np.zeros(8)
        for t in range(trials):
            counts[random_select(pool, budget, seed=t)] += 1
        p = budget / pool.size
        sigma = np.sqrt(trials * p * (1 - p))
        assert np.abs(counts - trials * p).max() <= 5 * sigma


class TestKmeansSelect:
    def test_full_budget_returns_pool(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(6, 2))
        pool = np.arange(6)
        np.testing.assert_array_equal(kmeans_select(feats, pool, 6, seed=1), pool)

    def test_two_separated_blobs(self):
        rng = np.random.default_rng(1)
        feats = np.vstack(
            [rng.normal(loc=(10.0, 0.0), scale=0.2, size=(10, 2)),
             rng.normal(loc=(-10.0, 0.0), scale=0.2, size=(10, 2))]
        )
        chosen = kmeans_select(feats, np.arange(20), 2, seed=2)
        sides = {int(feats[i, 0] > 0) for i in chosen}
        assert sides == {0, 1}

    def test_deterministic_and_distinct(self):
        rng = np.random.default_rng(3)
        feats = rng.normal(size=(30, 3))
        pool = np.arange(30)
        a = kmeans_select(feats, pool, 7, seed=4)
        b = kmeans_select(feats, pool, 7, seed=4)
        np.testing.assert_array_equal(a, b)
        assert len(set(a.tolist())) == 7


class TestEntropySelect:
    def test_picks_most_uncertain(self):
        # Row 1 is uniform (max entropy), row 0 nearly deterministic.
        probs = np.array([[0.98], [0.5], [0.8]])
        table = ClassProbTable(probs, 2)
        got = entropy_select(table, np.arange(3), 2)
        np.testing.assert_array_equal(got, [1, 2])

    def test_ties_break_to_lowest_index(self):
        probs = np.array([[0.5], [0.5], [0.5]])
        table = ClassProbTable(probs, 2)
        np.testing.assert_array_equal(entropy_select(table, np.arange(3), 2), [0, 1])
