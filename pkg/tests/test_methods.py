import numpy as np
import pytest

from fixtures_util import identity_model, onehot_dataset

from lastlayer.data import EmbeddingDataset, NoiseSpec, apply_noise, derive_groups
from lastlayer.errors import DegenerateSelectionError, ParameterError
from lastlayer.knn import SpreadConfig, build_knn_graph, spread_labels
from lastlayer.linear import LinearModel, predict
from lastlayer.methods import (
    ErrorSet,
    RadConfig,
    SelfConfig,
    build_error_set,
    error_set_composition,
    run_erm,
    run_gds,
    run_guw,
    run_knn_rad,
    run_knn_self,
    run_rad,
    run_record,
    run_self,
    select_self_subset,
)
from lastlayer.metrics import worst_group_accuracy
from lastlayer.synth import SynthConfig, generate


def random_dataset(n=60, d=4, num_classes=2, seed=0, domains=True):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, n).astype(np.int32)
    labels[:num_classes] = np.arange(num_classes)
    feats = rng.standard_normal((n, d)).astype(np.float32)
    feats[:, 0] += 2.0 * labels  # make the task learnable
    return EmbeddingDataset(
        features=feats,
        labels=labels,
        num_classes=num_classes,
        clean_labels=labels.copy(),
        domains=rng.integers(0, 2, n).astype(np.int32) if domains else None,
    )


class TestBaselines:
    def test_rad_with_unit_upweight_equals_erm(self):
        ds = random_dataset(seed=3)
        cfg = RadConfig(c_id=0.05, c_retrain=0.01, upweight=1.0)
        model, _ = run_rad(ds, cfg)
        erm = run_erm(ds, 0.01)
        assert np.array_equal(model.weights, erm.weights)
        assert np.array_equal(model.bias, erm.bias)

    def test_rad_with_empty_error_set_equals_erm(self):
        # widely separated classes: the unpenalized identification model is
        # perfect, the error set is empty, and the refit collapses to ERM
        rng = np.random.default_rng(5)
        labels = np.array([0, 1] * 25, dtype=np.int32)
        feats = rng.standard_normal((50, 3)).astype(np.float32)
        feats[:, 0] += 8.0 * labels
        ds = EmbeddingDataset(features=feats, labels=labels, num_classes=2)
        model, e = run_rad(ds, RadConfig(c_id=0.0, c_retrain=0.01, upweight=25.0))
        assert len(e) == 0
        erm = run_erm(ds, 0.01)
        assert np.array_equal(model.weights, erm.weights)
        assert np.array_equal(model.bias, erm.bias)

    def test_guw_equal_groups_equals_erm(self):
        # 4 equal groups -> every weight is exactly 4.0, a power of two, so the
        # normalized objective and hence the whole trajectory match the
        # uniform fit bit for bit
        rng = np.random.default_rng(7)
        labels = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1] * 4, dtype=np.int32)
        domains = np.array([0] * 10 + [1] * 10 + [0] * 10 + [1] * 10, dtype=np.int32)
        ds = EmbeddingDataset(
            features=rng.standard_normal((40, 3)).astype(np.float32),
            labels=labels,
            num_classes=2,
            domains=domains,
        )
        groups = derive_groups(ds)
        assert len(set(groups.sizes.tolist())) == 1
        guw = run_guw(ds, groups, 0.01)
        erm = run_erm(ds, 0.01)
        assert np.array_equal(guw.weights, erm.weights)
        assert np.array_equal(guw.bias, erm.bias)

    def test_guw_weight_arithmetic(self):
        # sizes {90, 10}: weights 100/90 and 10; per-group totals both equal n
        labels = np.array([0] * 90 + [1] * 10, dtype=np.int32)
        domains = np.array([0] * 90 + [1] * 10, dtype=np.int32)
        ds = EmbeddingDataset(
            features=np.random.default_rng(0).standard_normal((100, 2)).astype(np.float32),
            labels=labels,
            num_classes=2,
            domains=domains,
        )
        groups = derive_groups(ds)
        sizes = groups.sizes[groups.group_ids].astype(np.float64)
        weights = ds.n / sizes
        assert np.allclose(weights[:90], 100.0 / 90.0)
        assert np.allclose(weights[90:], 10.0)
        assert abs(weights[:90].sum() - 100.0) < 1e-9
        assert abs(weights[90:].sum() - 100.0) < 1e-9

    def test_gds_subsamples_to_n_min(self):
        rng = np.random.default_rng(1)
        sizes = [100, 10, 50, 10]
        labels = np.concatenate([[g // 2] * s for g, s in enumerate(sizes)]).astype(np.int32)
        domains = np.concatenate([[g % 2] * s for g, s in enumerate(sizes)]).astype(np.int32)
        ds = EmbeddingDataset(
            features=rng.standard_normal((sum(sizes), 3)).astype(np.float32),
            labels=labels,
            num_classes=2,
            domains=domains,
        )
        groups = derive_groups(ds)
        assert groups.n_min == 10
        # the training subset is internal; assert through determinism and by
        # reproducing the selection
        m1 = run_gds(ds, groups, 0.01, seed=5)
        m2 = run_gds(ds, groups, 0.01, seed=5)
        assert np.array_equal(m1.weights, m2.weights)

    def test_gds_identity_when_already_balanced(self):
        ds = random_dataset(n=40, seed=9)
        groups = derive_groups(ds)
        # force equal groups by construction
        labels = np.array([0, 1] * 20, dtype=np.int32)
        domains = np.array([0] * 20 + [1] * 20, dtype=np.int32)
        ds = EmbeddingDataset(features=ds.features, labels=labels, num_classes=2, domains=domains)
        groups = derive_groups(ds)
        assert groups.n_min == 10
        gds = run_gds(ds, groups, 0.01, seed=0)
        erm = run_erm(ds, 0.01)
        assert np.array_equal(gds.weights, erm.weights)


class TestErrorSet:
    def test_perfect_model_empty(self):
        ds = onehot_dataset([0, 1, 1, 0], [0, 1, 1, 0], 2)
        assert len(build_error_set(identity_model(2), ds)) == 0

    def test_constant_model(self):
        ds = onehot_dataset([0, 1, 0, 1], [0, 1, 1, 0], 2)
        constant = LinearModel(weights=np.zeros((2, 2)), bias=np.array([1.0, 0.0]))
        e = build_error_set(constant, ds)
        assert e.indices.tolist() == [1, 2]  # rows whose label != 0

    def test_hand_fixture(self):
        ds = onehot_dataset([0, 1, 1, 0], [0, 1, 0, 0], 2)
        e = build_error_set(identity_model(2), ds)
        assert e.indices.tolist() == [2]

    def test_partition_with_correct_set(self):
        ds = random_dataset(seed=11)
        model = run_erm(ds, 0.1)
        e = build_error_set(model, ds)
        correct = predict(model, ds.features) == ds.labels
        assert np.array_equal(~correct, e.mask())

    def test_indices_validated(self):
        with pytest.raises(Exception):
            ErrorSet(indices=np.array([5]), n=3)


class TestSelf:
    def test_perfect_base_model_raises(self):
        ds = onehot_dataset([0, 1], [0, 1], 2)
        with pytest.raises(DegenerateSelectionError, match="per-class counts"):
            run_self(ds, identity_model(2), SelfConfig(n_sub=2, finetune_steps=0, learning_rate=0.1))

    def test_balanced_counts_min_class(self):
        # predictions wrong on 7 class-0 rows and 3 class-1 rows
        preds = [1] * 7 + [0] * 3 + [0, 1]
        labels = [0] * 7 + [1] * 3 + [0, 1]
        ds = onehot_dataset(preds, labels, 2)
        e, balanced = select_self_subset(ds, identity_model(2), SelfConfig(n_sub=10, finetune_steps=0, learning_rate=0.1, balance_seed=1))
        assert len(e) == 10
        counts = np.bincount(np.asarray(labels)[balanced], minlength=2)
        assert counts.tolist() == [3, 3]

    def test_missing_class_raises_with_counts(self):
        preds = [1] * 5 + [0, 1]
        labels = [0] * 5 + [0, 1]
        ds = onehot_dataset(preds, labels, 2)
        with pytest.raises(DegenerateSelectionError, match=r"\[5, 0\]"):
            run_self(ds, identity_model(2), SelfConfig(n_sub=5, finetune_steps=0, learning_rate=0.1))

    def test_n_sub_caps_selection_by_loss_with_index_ties(self):
        # all misclassified rows have identical losses -> lowest indices kept
        preds = [1] * 6 + [0, 1]
        labels = [0] * 6 + [0, 1]
        ds = onehot_dataset(preds, labels, 2)
        cfg = SelfConfig(n_sub=3, finetune_steps=0, learning_rate=0.1)
        with pytest.raises(DegenerateSelectionError):
            # kept set holds only class-0 rows -> class 1 missing
            select_self_subset(ds, identity_model(2), cfg)

    def test_n_sub_too_large(self):
        ds = onehot_dataset([0, 1], [1, 0], 2)
        with pytest.raises(ParameterError):
            run_self(ds, identity_model(2), SelfConfig(n_sub=5, finetune_steps=0, learning_rate=0.1))

    def test_finetune_starts_from_base(self):
        preds = [1] * 4 + [0] * 4 + [0, 1]
        labels = [0] * 4 + [1] * 4 + [0, 1]
        ds = onehot_dataset(preds, labels, 2)
        base = identity_model(2)
        model, _ = run_self(ds, base, SelfConfig(n_sub=8, finetune_steps=0, learning_rate=0.1))
        assert np.array_equal(model.weights, base.weights)


class TestKnnVariants:
    def test_zero_rounds_equals_plain_rad(self):
        ds = random_dataset(n=50, seed=13)
        cfg = RadConfig(c_id=0.05, c_retrain=0.01, upweight=10.0)
        spread = SpreadConfig(k=5, rounds=0)
        knn_model, knn_e, cleaned = run_knn_rad(ds, spread, cfg)
        rad_model, rad_e = run_rad(ds, cfg)
        assert np.array_equal(cleaned, ds.labels)
        assert np.array_equal(knn_model.weights, rad_model.weights)
        assert knn_e.indices.tolist() == rad_e.indices.tolist()

    def test_k1_include_self_equals_plain_rad(self):
        ds = random_dataset(n=50, seed=14)
        cfg = RadConfig(c_id=0.05, c_retrain=0.01, upweight=10.0)
        spread = SpreadConfig(k=1, rounds=1, include_self=True)
        knn_model, _, cleaned = run_knn_rad(ds, spread, cfg)
        rad_model, _ = run_rad(ds, cfg)
        assert np.array_equal(cleaned, ds.labels)
        assert np.array_equal(knn_model.weights, rad_model.weights)
        assert np.array_equal(knn_model.bias, rad_model.bias)

    def test_knn_self_zero_rounds_equals_self(self):
        clean = random_dataset(n=50, seed=15)
        base = run_erm(clean, 1e-3)
        noisy, _ = apply_noise(clean, NoiseSpec(0.3, 2))  # errors land in both classes
        cfg = SelfConfig(n_sub=20, finetune_steps=10, learning_rate=0.01, balance_seed=3)
        m1, _, cleaned = run_knn_self(noisy, base, SpreadConfig(k=3, rounds=0), cfg)
        m2, _ = run_self(noisy, base, cfg)
        assert np.array_equal(cleaned, noisy.labels)
        assert np.array_equal(m1.weights, m2.weights)

    def test_pipeline_composition(self):
        # spreading then the two-stage fit must equal the manual composition
        ds = random_dataset(n=60, seed=16)
        noisy, _ = apply_noise(ds, NoiseSpec(0.3, 4))
        cfg = RadConfig(c_id=0.05, c_retrain=0.01, upweight=10.0)
        spread = SpreadConfig(k=5, rounds=2)
        knn_model, knn_e, cleaned = run_knn_rad(noisy, spread, cfg)
        graph = build_knn_graph(noisy.features, 5, include_self=True)
        manual_labels = spread_labels(graph, noisy.labels, 2, spread)
        assert np.array_equal(cleaned, manual_labels)
        manual_model, manual_e = run_rad(noisy.replace(labels=manual_labels), cfg)
        assert np.array_equal(knn_model.weights, manual_model.weights)
        assert knn_e.indices.tolist() == manual_e.indices.tolist()


class TestComposition:
    def test_empty_error_set(self):
        ds = random_dataset(n=20, seed=17)
        groups = derive_groups(ds)
        comp = error_set_composition(ErrorSet(indices=np.array([], dtype=int), n=20), groups, np.zeros(20, bool))
        assert all(v == 0 for v in comp.values())

    def test_counts_partition_error_set(self):
        ds = random_dataset(n=80, seed=18)
        noisy, mask = apply_noise(ds, NoiseSpec(0.2, 1))
        model = run_erm(noisy, 0.1)
        e = build_error_set(model, noisy)
        groups = derive_groups(noisy, use_clean=True)
        comp = error_set_composition(e, groups, mask)
        assert sum(comp.values()) == len(e)

    def test_median_bucketing(self):
        # group sizes 1,1,3,3 -> median 2; rows in size-1 groups are minority
        labels = np.array([0, 1, 0, 0, 0, 1, 1, 1], dtype=np.int32)
        domains = np.array([0, 0, 1, 1, 1, 1, 1, 1], dtype=np.int32)
        ds = EmbeddingDataset(features=np.zeros((8, 1), np.float32), labels=labels,
                              num_classes=2, domains=domains)
        groups = derive_groups(ds)
        assert sorted(groups.sizes.tolist()) == [1, 1, 3, 3]
        e = ErrorSet(indices=np.array([0, 1, 2, 5]), n=8)
        mask = np.array([True, False, False, False, False, True, False, False])
        comp = error_set_composition(e, groups, mask)
        # row 0: noisy minority; row 1: clean minority; row 2: clean majority;
        # row 5: noisy majority
        assert comp == {"clean_minority": 1, "noisy_majority": 1, "clean_majority": 1, "noisy_minority": 1}


@pytest.fixture(scope="module")
def spurious():
    cfg = SynthConfig(d=32, train_size=4000, val_size=4000, test_size=4000,
                      class_sep=2.5, domain_shift=3.0, train_correlation=0.9,
                      val_correlation=0.75, seed=11)
    return generate(cfg)


class TestStatisticalDirections:
    """Directional behavior on the reference spurious geometry (seeded)."""

    def test_guw_beats_erm_at_zero_noise(self, spurious):
        tr, te = spurious["train"], spurious["test"]
        gte = derive_groups(te, use_clean=True)
        gtr = derive_groups(tr, use_clean=True)
        erm_wga = worst_group_accuracy(run_erm(tr, 1e-4), te, gte).wga
        guw_wga = worst_group_accuracy(run_guw(tr, gtr, 1e-4), te, gte).wga
        assert guw_wga > erm_wga

    @staticmethod
    def _retrain_halves(spurious, p, seeds):
        from lastlayer.data import split_validation

        for s in seeds:
            retrain, _ = split_validation(spurious["val"], 0.5, seed=1000 + s)
            if p > 0:
                retrain, _ = apply_noise(retrain, NoiseSpec(p, s))
            yield retrain

    def test_rad_wga_collapses_under_noise(self, spurious):
        te = spurious["test"]
        gte = derive_groups(te, use_clean=True)
        cfg = RadConfig(c_id=0.01, c_retrain=1e-3, upweight=10.0)

        def mean_wga(p):
            vals = []
            for retrain in self._retrain_halves(spurious, p, range(3)):
                model, _ = run_rad(retrain, cfg)
                vals.append(worst_group_accuracy(model, te, gte).wga)
            return float(np.mean(vals))

        assert mean_wga(0.0) - mean_wga(0.3) >= 0.20

    def test_self_wga_drops_under_noise(self, spurious):
        te = spurious["test"]
        gte = derive_groups(te, use_clean=True)
        base = run_erm(spurious["train"], 1e-4)
        cfg = SelfConfig(n_sub=100, finetune_steps=500, learning_rate=1e-3)

        def mean_wga(p):
            vals = []
            for retrain in self._retrain_halves(spurious, p, range(3)):
                model, _ = run_self(retrain, base, cfg)
                vals.append(worst_group_accuracy(model, te, gte).wga)
            return float(np.mean(vals))

        assert mean_wga(0.0) - mean_wga(0.2) >= 0.15

    def test_record_shape(self):
        rec = run_record("rad", RadConfig(c_id=0.1, c_retrain=0.01), seed=3,
                         error_set=ErrorSet(indices=np.array([1, 2]), n=5),
                         composition={"clean_minority": 1, "noisy_majority": 1,
                                      "clean_majority": 0, "noisy_minority": 0},
                         cleaned_accuracy=0.9, model_path=None)
        assert rec["method"] == "rad"
        assert rec["error_set_size"] == 2
        assert rec["config"]["upweight"] == 10.0
        import json

        json.dumps(rec)  # must be JSON-serializable
