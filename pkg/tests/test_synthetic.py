import numpy as np
import pytest
import yaml
from scipy.special import expit, logit

from App.calibration import metrics
from App.calibration.errors import ConfigError, EmptyDataset, UnreachableSignature
from App.calibration.synthetic import (
    BernoulliGroup,
    LogisticTruth,
    Miscalibration,
    PartitionGroup,
    SyntheticSpec,
    TableTruth,
    benchmark_spec,
    generate,
    load_spec,
    population_metrics,
    truth_table,
)


def _two_groups(n=10_000, seed=0, miscal=None):
    return SyntheticSpec(
        n=n,
        seed=seed,
        groups=[BernoulliGroup(name="a", rate=0.4), PartitionGroup(names=["easy", "hard"], probs=[0.6, 0.4])],
        truth=LogisticTruth(base=0.1, effects={"a": 0.8, "hard": -1.0}),
        miscal=miscal or Miscalibration(kind="logit_shift", shifts={"a": 1.0, "hard": -0.5}),
    )


def test_identity_scores_are_calibrated():
    spec = _two_groups(miscal=Miscalibration(kind="identity"))

    population = population_metrics(spec)

    assert population.asce == 0.0
    assert all(v == 0.0 for v in population.gasce.values())


def test_constant_score_against_known_truth():
    spec = SyntheticSpec(
        n=10,
        truth=LogisticTruth(base=float(logit(0.7))),
        miscal=Miscalibration(kind="logit_scale", scale=0.0),
    )

    population = population_metrics(spec)

    assert population.mse == pytest.approx(0.7 * 0.25 + 0.3 * 0.25, abs=1e-12)
    assert population.asce == pytest.approx(0.04, abs=1e-12)
    assert population.bias["ALL"] == pytest.approx(0.2, abs=1e-12)


def test_generate_is_reproducible():
    first = generate(_two_groups(seed=5))
    second = generate(_two_groups(seed=5))
    other = generate(_two_groups(seed=6))

    np.testing.assert_array_equal(first.dataset.scores, second.dataset.scores)
    np.testing.assert_array_equal(first.dataset.labels, second.dataset.labels)
    np.testing.assert_array_equal(first.dataset.groups.membership, second.dataset.groups.membership)
    assert not np.array_equal(first.dataset.labels, other.dataset.labels)


def test_partition_columns_are_exclusive():
    dataset = generate(_two_groups()).dataset

    assert dataset.groups.names == ("ALL", "a", "easy", "hard")
    np.testing.assert_array_equal(dataset.groups.column("easy") ^ dataset.groups.column("hard"), np.ones(dataset.n, bool))


def test_scores_follow_the_truth_table():
    result = generate(_two_groups(n=2000))
    a = result.dataset.groups.column("a")
    hard = result.dataset.groups.column("hard")

    expected_p = expit(0.1 + 0.8 * a - 1.0 * hard)
    expected_score = expit(logit(expected_p) + 1.0 * a - 0.5 * hard)

    np.testing.assert_allclose(result.p_true, expected_p, rtol=1e-12)
    np.testing.assert_allclose(result.dataset.scores, expected_score, rtol=1e-9)


def test_empty_spec_is_rejected():
    with pytest.raises(EmptyDataset):
        generate(_two_groups(n=0))


def test_table_truth_needs_every_signature():
    spec = SyntheticSpec(
        n=100,
        groups=[BernoulliGroup(name="a", rate=0.5)],
        truth=TableTruth(table={"1": 0.7}),
    )

    with pytest.raises(UnreachableSignature):
        generate(spec)


def test_table_truth():
    spec = SyntheticSpec(
        n=100,
        groups=[BernoulliGroup(name="a", rate=0.5)],
        truth=TableTruth(table={"0": 0.2, "1": 0.7}),
    )

    table = truth_table(spec)

    assert [(e.signature, e.p_true, e.weight) for e in table.entries] == [("0", 0.2, 0.5), ("1", 0.7, 0.5)]


def test_unknown_names_are_rejected():
    with pytest.raises(ValueError):
        SyntheticSpec(n=10, groups=[BernoulliGroup(name="a", rate=0.5)], miscal=Miscalibration(shifts={"b": 1.0}))
    with pytest.raises(ValueError):
        SyntheticSpec(n=10, groups=[BernoulliGroup(name="ALL", rate=0.5)])


def test_group_bias_within_sampling_error():
    spec = _two_groups(n=100_000, seed=1)
    dataset = generate(spec).dataset
    population = population_metrics(spec)

    empirical = metrics.group_bias(dataset)
    for name in ("a", "hard"):
        count = dataset.groups.counts[dataset.groups.index(name)]
        assert abs(empirical[name] - population.bias[name]) <= 4 * 0.6 / np.sqrt(count)


def test_identity_scores_have_small_empirical_asce():
    spec = _two_groups(n=100_000, miscal=Miscalibration(kind="identity"))

    assert metrics.asce(generate(spec).dataset) < 1e-3


def test_population_metrics_on_grid():
    spec = _two_groups()

    raw = population_metrics(spec)
    rounded = population_metrics(spec, m=10)

    assert set(rounded.gasce) == {"ALL", "a", "easy", "hard"}
    assert rounded.violation["ALL"] == pytest.approx(rounded.asce)
    assert raw.asce > 0.0


@pytest.mark.slow
def test_monte_carlo_agrees_with_population_metrics():
    spec = _two_groups(n=1_000_000, seed=2, miscal=Miscalibration(kind="fixed_noise", sigma=0.05, noise_levels=5))
    population = population_metrics(spec)

    dataset = generate(spec).dataset
    squared = (dataset.labels - dataset.scores) ** 2

    assert abs(squared.mean() - population.mse) <= 3 * squared.std() / np.sqrt(dataset.n)


def test_benchmark_spec_matches_config_file(fixtures):
    spec = benchmark_spec()
    with open(fixtures.parent.parent / "configs" / "benchmark.yaml") as f:
        raw = yaml.safe_load(f)
    from_file = SyntheticSpec.model_validate(raw)

    assert spec.group_names == [f"g{i}" for i in range(8)]
    np.testing.assert_allclose(sorted(spec.miscal.shifts.values()), np.linspace(-1.5, 1.5, 8))
    assert from_file.group_names == spec.group_names
    for name in spec.group_names:
        assert from_file.miscal.shifts[name] == pytest.approx(spec.miscal.shifts[name], abs=1e-6)
        assert from_file.truth.effects[name] == pytest.approx(spec.truth.effects[name])


def test_load_spec(fixtures, tmp_path):
    spec = load_spec(fixtures / "synth_small.yaml", seed=9)

    assert spec.seed == 9
    assert spec.group_names == ["a", "easy", "hard"]

    bad = tmp_path / "bad.yaml"
    bad.write_text("n: -1\n")
    with pytest.raises(ConfigError):
        load_spec(bad)
    with pytest.raises(ConfigError):
        load_spec(tmp_path / "missing.yaml")
