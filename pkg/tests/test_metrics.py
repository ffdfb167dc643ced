import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrastive_gap.embedding_space import PairedEmbeddings, random_cone, random_sphere_init
from contrastive_gap.errors import DegenerateData, TooFewSamples
from contrastive_gap.metrics import (CSV_COLUMNS, GapReport, centroid_distance, fit_logistic,
                                     gap_report, linear_separability, pca_explained_variance,
                                     retrieval_accuracy, retrieval_ranks)


def pairs(images, texts):
    return PairedEmbeddings.from_arrays(np.asarray(images, float), np.asarray(texts, float))


def sphere_pairs(n, d, seed):
    return pairs(random_sphere_init(n, d, 2 * seed).rows, random_sphere_init(n, d, 2 * seed + 1).rows)


class TestCentroidDistance:
    def test_identical_sets(self):
        x = random_sphere_init(20, 4, 0).rows
        assert centroid_distance(pairs(x, x)) == 0.0

    def test_antipodal_points(self):
        assert centroid_distance(pairs([[1.0, 0.0]], [[-1.0, 0.0]])) == 2.0

    def test_orthogonal_points(self):
        assert centroid_distance(pairs([[1.0, 0.0]], [[0.0, 1.0]])) == pytest.approx(np.sqrt(2), abs=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 30), st.integers(2, 6), st.integers(0, 10_000))
    def test_range(self, n, d, seed):
        assert 0.0 <= centroid_distance(sphere_pairs(n, d, seed)) <= 2.0


class TestLinearSeparability:
    def test_disjoint_cones(self):
        rng = np.random.default_rng(0)
        a = random_cone(200, 8, np.eye(8)[0], 0.1, rng)
        b = random_cone(200, 8, -np.eye(8)[0], 0.1, rng)
        assert linear_separability(PairedEmbeddings(a, b)) == 1.0

    @pytest.mark.parametrize("n,d", [(200, 8), (500, 3), (100, 64)])
    def test_same_distribution_near_half(self, n, d):
        accs = [linear_separability(sphere_pairs(n, d, seed), seed=seed) for seed in range(20)]
        assert 0.4 <= np.mean(accs) <= 0.6

    def test_copied_rows_not_separable(self):
        # each held-out row's copy is in the training set with the other label,
        # so the probe lands below chance rather than above it
        accs = []
        for seed in range(20):
            x = random_sphere_init(200, 8, seed).rows
            accs.append(linear_separability(pairs(x, x), seed=seed))
        assert np.mean(accs) <= 0.5

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            linear_separability(sphere_pairs(9, 3, 0))

    def test_deterministic_per_seed(self):
        p = sphere_pairs(50, 4, 1)
        assert linear_separability(p, seed=3) == linear_separability(p, seed=3)

    def test_fit_logistic_learns_threshold(self):
        x = np.linspace(-1, 1, 40)[:, None]
        y = (x[:, 0] > 0).astype(float)
        w, b = fit_logistic(x, y, iterations=2000, lr=1.0)
        assert np.mean(((x @ w + b) >= 0) == y.astype(bool)) == 1.0


class TestRetrieval:
    def test_perfect_alignment(self):
        x = random_sphere_init(30, 8, 0).rows
        p = pairs(x, x)
        for k in (1, 5, 10):
            assert retrieval_accuracy(p, k, "i2t") == 1.0
            assert retrieval_accuracy(p, k, "t2i") == 1.0

    def test_ties_go_to_lower_index(self):
        same = np.tile([1.0, 0.0], (3, 1))
        np.testing.assert_array_equal(retrieval_ranks(pairs(same, same)), [0, 1, 2])
        assert retrieval_accuracy(pairs(same, same), 1) == pytest.approx(1 / 3)

    def test_swapped_partners(self):
        p = pairs([[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]])
        assert retrieval_accuracy(p, 1) == 0.0
        assert retrieval_accuracy(p, 2) == 1.0

    def test_k_validation(self):
        p = sphere_pairs(4, 3, 0)
        with pytest.raises(ValueError):
            retrieval_accuracy(p, 0)
        with pytest.raises(ValueError):
            retrieval_accuracy(p, 5)
        with pytest.raises(ValueError):
            retrieval_ranks(p, "x2y")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(10, 40), st.integers(2, 6), st.integers(0, 10_000))
    def test_monotone_in_k(self, n, d, seed):
        p = sphere_pairs(n, d, seed)
        for direction in ("i2t", "t2i"):
            accs = [retrieval_accuracy(p, k, direction) for k in range(1, n + 1)]
            assert all(a <= b for a, b in zip(accs, accs[1:]))
            assert accs[-1] == 1.0


class TestPCA:
    def test_planar_data(self):
        rng = np.random.default_rng(0)
        theta = rng.uniform(0, 2 * np.pi, 100)
        ring = np.stack([np.cos(theta), np.sin(theta), np.zeros(100)], axis=1)
        ratios = pca_explained_variance(pairs(ring[:50], ring[50:]))
        assert ratios[2] == pytest.approx(0.0, abs=1e-12)

    def test_degenerate(self):
        same = np.tile([0.0, 1.0], (4, 1))
        with pytest.raises(DegenerateData):
            pca_explained_variance(pairs(same, same))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 30), st.integers(2, 8), st.integers(0, 10_000))
    def test_sorted_and_normalized(self, n, d, seed):
        ratios = pca_explained_variance(sphere_pairs(n, d, seed))
        assert np.all(np.diff(ratios) <= 1e-15)
        assert abs(ratios.sum() - 1.0) <= 1e-9
        assert np.all(ratios >= 0)


class TestGapReport:
    def test_fields_and_round_trip(self):
        r = gap_report(sphere_pairs(30, 5, 2))
        assert set(r.retrieval_i2t) == {1, 5, 10}
        assert GapReport.from_json(r.to_json()) == r
        obj = json.loads(r.to_json())
        assert set(obj["retrieval_i2t"]) == {"1", "5", "10"}

    def test_csv(self):
        r = gap_report(sphere_pairs(30, 5, 2))
        header, row = r.to_csv(step=7).strip().split("\n")
        assert header.split(",") == CSV_COLUMNS
        fields = row.split(",")
        assert fields[0] == "7"
        assert float(fields[1]) == r.centroid_distance

    def test_pca_csv(self):
        r = gap_report(sphere_pairs(30, 5, 2))
        lines = r.pca_csv().strip().split("\n")
        assert lines[0] == "component_index,ratio,cumulative"
        assert len(lines) == 1 + 5
        assert float(lines[-1].split(",")[2]) == pytest.approx(1.0, abs=1e-12)

    def test_small_batch_limits_k(self):
        r = gap_report(sphere_pairs(10, 3, 0))
        assert set(r.retrieval_i2t) == {1, 5, 10}

    def test_identical_modalities(self):
        x = random_sphere_init(40, 6, 5).rows
        r = gap_report(pairs(x, x))
        assert r.centroid_distance == 0.0 and r.align == 0.0
        assert r.retrieval_i2t[1] == 1.0
