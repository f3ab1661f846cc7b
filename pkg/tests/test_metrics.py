import numpy as np
import pandas as pd
import pytest

from App.calibration import metrics
from App.calibration.data_model import BinDescriptor, Comparator, Grid, validate_dataset
from App.calibration.errors import EmptyConditioningSet, EmptyGroup


def _asce_oracle(scores, labels):
    frame = pd.DataFrame({"s": scores, "r": labels - scores})
    stats = frame.groupby("s")["r"].agg(["mean", "count"])
    return float(np.sum(stats["count"] * stats["mean"] ** 2) / len(frame))


class TestBias:
    def test_unbiased(self):
        dataset = validate_dataset([0.5, 0.5], [1, 0])

        assert metrics.bias(dataset, [True, True]) == 0.0

    def test_underconfident(self):
        dataset = validate_dataset([0.2, 0.2, 0.2], [0, 0, 1])

        assert metrics.bias(dataset, [True, True, True]) == pytest.approx(1 / 3 - 0.2)

    def test_empty_mask(self):
        dataset = validate_dataset([0.5], [1])

        with pytest.raises(EmptyConditioningSet):
            metrics.bias(dataset, [False])


class TestAsce:
    def test_calibrated_levels(self):
        dataset = validate_dataset([0.5, 0.5, 0.0, 1.0], [1, 0, 0, 1])

        assert metrics.asce(dataset, Grid(2)) == 0.0

    def test_single_biased_level(self):
        dataset = validate_dataset([0.5, 0.5], [1, 1])

        assert metrics.asce(dataset, Grid(2)) == pytest.approx(0.25)

    def test_matches_groupby_oracle(self, rng, make_data):
        dataset = make_data(rng, n=200, m=10)

        assert metrics.asce(dataset, Grid(10)) == pytest.approx(_asce_oracle(dataset.scores, dataset.labels), abs=1e-12)
        assert metrics.asce(dataset) == pytest.approx(_asce_oracle(dataset.scores, dataset.labels), abs=1e-12)

    def test_permutation_invariant(self, rng, make_data):
        dataset = make_data(rng, n=300, m=10)
        order = rng.permutation(dataset.n)

        assert metrics.asce(dataset.subset(order), Grid(10)) == pytest.approx(metrics.asce(dataset, Grid(10)), abs=1e-15)

    def test_off_grid_scores_are_rounded_with_warning(self, caplog):
        dataset = validate_dataset([0.49, 0.51], [1, 0])

        assert metrics.asce(dataset, Grid(2)) == pytest.approx(0.0)
        assert "off the m=2 grid" in caplog.text


class TestGasce:
    def test_all_group_equals_asce(self, rng, make_data):
        for _ in range(20):
            dataset = make_data(rng, n=150, m=10)

            assert metrics.gasce(dataset, Grid(10), 0) == metrics.asce(dataset, Grid(10))

    def test_group_with_biased_level(self):
        dataset = validate_dataset([0.5, 0.5, 0.2], [0, 0, 1], [[1], [1], [0]], ["g"])

        assert metrics.gasce(dataset, Grid(10), 1) == pytest.approx(0.25)

    def test_matches_subset_asce(self, rng, make_data):
        dataset = make_data(rng, n=400, k=3, m=10)

        for g in range(1, 4):
            mask = dataset.groups.membership[:, g]
            expected = metrics.asce(dataset.subset(np.flatnonzero(mask)), Grid(10))
            assert metrics.gasce(dataset, Grid(10), g) == pytest.approx(expected, abs=1e-12)

    def test_empty_group(self):
        dataset = validate_dataset([0.5, 0.5], [1, 0], [[0], [0]], ["rare"])

        with pytest.raises(EmptyGroup):
            metrics.gasce(dataset, Grid(10), 1)


class TestMse:
    def test_examples(self):
        assert metrics.mse(validate_dataset([1.0, 0.0], [1, 0])) == 0.0
        assert metrics.mse(validate_dataset([0.5, 0.5], [1, 0])) == 0.25

    def test_decomposition(self, rng, make_data):
        for _ in range(100):
            dataset = make_data(rng, n=int(rng.integers(20, 300)), m=int(rng.integers(2, 30)))

            sharpness = metrics.within_level_variance(dataset)
            assert abs(metrics.mse(dataset) - (metrics.asce(dataset) + sharpness)) <= 1e-10


class TestEce:
    def test_examples(self):
        assert metrics.ece(validate_dataset([0.9, 0.9], [1, 1]), 10) == pytest.approx(0.1)
        assert metrics.ece(validate_dataset([0.5], [1]), 10) == pytest.approx(0.5)

    def test_scores_on_bin_edges(self):
        # 0.29 * 100 is just below 29 in float64
        dataset = validate_dataset([0.28, 0.29], [1, 0])

        assert metrics.ece(dataset, 100) == pytest.approx(0.505)
        assert metrics.ece(validate_dataset([0.3, 0.6, 1.0], [0, 1, 1]), 10) == pytest.approx((0.3 + 0.4 + 0.0) / 3)

    @pytest.mark.parametrize("on_grid", [False, True])
    def test_brute_force(self, rng, on_grid):
        m = 15 if not on_grid else 100
        scores = rng.integers(0, m + 1, 500) / m if on_grid else rng.random(500)
        labels = (rng.random(500) < scores).astype(int)
        dataset = validate_dataset(scores, labels)

        total = 0.0
        for i in range(m):
            upper = scores <= 1.0 if i == m - 1 else scores < (i + 1) / m
            in_bin = (scores >= i / m) & upper
            if not in_bin.any():
                continue
            confidence = np.maximum(scores[in_bin], 1 - scores[in_bin])
            correct = (scores[in_bin] >= 0.5).astype(int) == labels[in_bin]
            total += in_bin.sum() * abs(correct.mean() - confidence.mean())

        assert metrics.ece(dataset, m) == pytest.approx(total / 500, abs=1e-12)

    def test_metrics_are_bounded(self, rng, make_data):
        for _ in range(50):
            dataset = make_data(rng, n=100)

            for value in (metrics.asce(dataset), metrics.mse(dataset), metrics.ece(dataset, 10)):
                assert 0.0 <= value <= 1.0


class TestViolation:
    def test_marginal_only(self, rng, make_data):
        dataset = make_data(rng, n=100, k=0, m=10)

        value, name = metrics.multicalibration_violation(dataset, Grid(10))

        assert name == "ALL"
        assert value == metrics.asce(dataset, Grid(10))

    def test_calibrated_in_every_group(self):
        dataset = validate_dataset([0.5] * 4, [1, 0, 1, 0], [[1], [1], [0], [0]], ["g"])

        assert metrics.multicalibration_violation(dataset, Grid(2)) == (0.0, "ALL")

    def test_matches_loop(self, rng, make_data):
        dataset = make_data(rng, n=300, k=4, m=10)

        expected = [
            dataset.groups.counts[g] / dataset.n * metrics.gasce(dataset, Grid(10), g) for g in range(dataset.groups.k)
        ]
        value, name = metrics.multicalibration_violation(dataset, Grid(10))

        assert value == pytest.approx(max(expected), abs=1e-15)
        assert name == dataset.groups.names[int(np.argmax(expected))]

    def test_empty_group_is_skipped(self):
        dataset = validate_dataset([0.5, 0.5], [1, 1], [[0], [0]], ["rare"])

        value, name = metrics.multicalibration_violation(dataset, Grid(2))

        assert name == "ALL"
        assert np.isnan(metrics.group_violations(dataset, Grid(2))[1])


def test_level_calibration_carries_over_to_upper_and_lower_sets(rng):
    # blocks of four identical rows, each exactly calibrated at a dyadic level
    for _ in range(200):
        scores, labels, members = [], [], []
        for _ in range(int(rng.integers(1, 12))):
            level = int(rng.integers(0, 5))
            bits = rng.random(3) < 0.5
            scores += [level / 4] * 4
            labels += [1] * level + [0] * (4 - level)
            members += [bits] * 4
        dataset = validate_dataset(scores, labels, np.array(members), ["a", "b", "c"])
        grid = Grid(4)

        for g in range(dataset.groups.k):
            if not dataset.groups.membership[:, g].any():
                continue
            for level in grid.levels:
                for comparator in (Comparator.EQ, Comparator.LE, Comparator.GE):
                    stats = metrics.bin_stats(dataset, grid, BinDescriptor(float(level), comparator, g))
                    if stats.count:
                        assert abs(stats.bias) <= 1e-12


def test_report(rng, make_data):
    dataset = make_data(rng, n=400, k=2, m=10)

    report = metrics.report(dataset, Grid(10))

    assert report.m == 10
    assert report.asce == metrics.asce(dataset, Grid(10))
    assert report.mse == metrics.mse(dataset)
    assert report.ece == metrics.ece(dataset, 10)
    assert set(report.per_group) == {"ALL", "g0", "g1"}
    assert report.per_group["ALL"].gasce == report.asce
    assert sum(b.count for b in report.per_bin if b.group == "ALL") == dataset.n
