import pytest

from fixtures_util import identity_model, onehot_dataset

from lastlayer.data import derive_groups
from lastlayer.errors import AggregationError, EvaluationError, ValidationError
from lastlayer.metrics import ExperimentResult, aggregate, worst_group_accuracy


def result(method="m", noise=0.0, seed=0, wga=0.5, accs=(0.5, 1.0), overall=0.75):
    return ExperimentResult(method=method, noise_level=noise, seed=seed,
                            wga=wga, group_accuracies=accs, overall_accuracy=overall)


class TestWorstGroupAccuracy:
    def test_perfect_classifier(self):
        ds = onehot_dataset([0, 1, 0, 1], [0, 1, 0, 1], 2, domains=[0, 0, 1, 1],
                            clean=[0, 1, 0, 1])
        groups = derive_groups(ds, use_clean=True)
        res = worst_group_accuracy(identity_model(2), ds, groups)
        assert res.wga == 1.0
        assert res.group_accuracies == (1.0, 1.0, 1.0, 1.0)

    def test_one_group_fully_wrong(self):
        # group (class 1, domain 1) completely misclassified
        ds = onehot_dataset([0, 1, 0, 0], [0, 1, 0, 1], 2, domains=[0, 0, 1, 1],
                            clean=[0, 1, 0, 1])
        groups = derive_groups(ds, use_clean=True)
        res = worst_group_accuracy(identity_model(2), ds, groups)
        assert res.wga == 0.0

    def test_hand_counts(self):
        # two groups of two (single domain); group 0 fully correct, group 1
        # half correct
        ds = onehot_dataset([0, 0, 1, 0], [0, 0, 1, 1], 2, domains=[0, 0, 0, 0],
                            clean=[0, 0, 1, 1])
        groups = derive_groups(ds, use_clean=True)
        res = worst_group_accuracy(identity_model(2), ds, groups)
        assert res.group_accuracies == (1.0, 0.5)
        assert res.wga == 0.5
        assert res.overall_accuracy == 0.75

    def test_empty_group_named(self):
        ds = onehot_dataset([0, 1], [0, 1], 2, domains=[0, 1], clean=[0, 1])
        groups = derive_groups(ds, use_clean=True)  # grid cells (0,1) and (1,0) empty
        with pytest.raises(EvaluationError, match=r"class=0, domain=1"):
            worst_group_accuracy(identity_model(2), ds, groups)

    def test_uses_clean_labels(self):
        # observed labels disagree with clean; evaluation must follow clean
        ds = onehot_dataset([0, 1], [1, 0], 2, domains=[0, 0], clean=[0, 1])
        groups = derive_groups(ds, use_clean=True)
        res = worst_group_accuracy(identity_model(2), ds, groups)
        assert res.wga == 1.0

    def test_metadata_passthrough(self):
        ds = onehot_dataset([0, 1], [0, 1], 2, domains=[0, 0], clean=[0, 1])
        groups = derive_groups(ds, use_clean=True)
        res = worst_group_accuracy(identity_model(2), ds, groups,
                                   method="rad", noise_level=0.2, seed=7)
        assert (res.method, res.noise_level, res.seed) == ("rad", 0.2, 7)


class TestExperimentResult:
    def test_wga_must_be_min(self):
        with pytest.raises(ValidationError):
            result(wga=0.9, accs=(0.5, 1.0))

    def test_wga_cannot_exceed_overall(self):
        with pytest.raises(ValidationError):
            result(wga=0.5, accs=(0.5, 0.6), overall=0.4)


class TestAggregate:
    def test_identical_results_zero_std(self):
        rows = aggregate([result(seed=s, wga=0.8, accs=(0.8, 0.9), overall=0.85) for s in range(4)])
        assert len(rows) == 1
        assert rows[0].mean == 0.8 and rows[0].std == 0.0

    def test_hand_arithmetic(self):
        rows = aggregate([
            result(seed=0, wga=0.8, accs=(0.8, 0.9), overall=0.85),
            result(seed=1, wga=0.9, accs=(0.9, 0.95), overall=0.92),
        ])
        assert abs(rows[0].mean - 0.85) < 1e-12
        assert abs(rows[0].std - 0.07071067811865477) < 1e-12

    def test_single_result_reports_zero_std(self):
        rows = aggregate([result()])
        assert rows[0].std == 0.0 and rows[0].count == 1

    def test_permutation_invariance(self):
        rs = [result(seed=s, wga=0.5 + 0.05 * s, accs=(0.5 + 0.05 * s, 0.9), overall=0.9) for s in range(5)]
        a = aggregate(rs)
        b = aggregate(list(reversed(rs)))
        assert a == b

    def test_groups_by_method_and_noise(self):
        rs = [result(method=m, noise=p, wga=0.5, accs=(0.5, 1.0), overall=0.75)
              for m in ("a", "b") for p in (0.0, 0.1)]
        rows = aggregate(rs)
        assert [(r.method, r.noise_level) for r in rows] == [("a", 0.0), ("a", 0.1), ("b", 0.0), ("b", 0.1)]

    def test_empty_raises(self):
        with pytest.raises(AggregationError):
            aggregate([])
