import numpy as np
import pytest

from attrscreen.crossfit import (
    TrainConfig,
    TrainingError,
    balanced_weights,
    crossfit_arrays,
    crossfit_predict,
    external_predictions,
    load_sidecar,
    train_baseline,
    weighted_cross_entropy,
)
from attrscreen.infotheo import adjusted_cmi_codes
from attrscreen.synthlab.metrics import auc
from attrscreen.table import AuditTable, SchemaError, assign_folds, ingest_csv, stratified_folds


def _blobs(n=200, margin=2.0, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.uniform(-1, 1, (n, 2))
    X[:, 0] = np.where(y == 1, 1, -1) * (margin / 2 + rng.random(n))
    return X, y


class TestTrainBaseline:
    def test_separable_blobs(self):
        X, y = _blobs()
        model = train_baseline(X, y)
        assert np.mean(model.predict(X) == y) == 1.0

    def test_zero_features_give_weighted_priors(self):
        y = np.array([0] * 30 + [1] * 10)
        model = train_baseline(np.zeros((40, 3)), y)
        probs = model.predict_proba(np.zeros((5, 3)))
        # balanced weights make the weighted prior uniform
        np.testing.assert_allclose(probs, 0.5, atol=1e-3)
        np.testing.assert_array_equal(model.weights, 0.0)

    def test_deterministic(self):
        X, y = _blobs(seed=3)
        m1 = train_baseline(X[:150], y[:150], X[150:], y[150:], TrainConfig(seed=5))
        m2 = train_baseline(X[:150], y[:150], X[150:], y[150:], TrainConfig(seed=5))
        assert m1.weights.tobytes() == m2.weights.tobytes()
        assert m1.bias.tobytes() == m2.bias.tobytes()

    def test_single_class(self):
        with pytest.raises(TrainingError):
            train_baseline(np.zeros((5, 2)), np.zeros(5, dtype=int))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss(self):
        X, y = _blobs()
        with pytest.raises(TrainingError, match="non-finite"):
            train_baseline(X, y, config=TrainConfig(lr=float("inf")))

    def test_absent_class_never_predicted(self):
        X, y = _blobs()
        y = y * 2  # classes 0 and 2; class 1 unseen
        model = train_baseline(X, y, n_classes=3)
        assert not np.any(model.predict(X) == 1)
        np.testing.assert_allclose(model.predict_proba(X)[:, 1], 0.0)
        np.testing.assert_allclose(model.predict_proba(X).sum(axis=1), 1.0)

    def test_early_stopping_returns_best_epoch(self):
        X, y = _blobs(seed=4)
        order = np.random.default_rng(4).permutation(y.size)
        X, y = X[order], y[order]
        model = train_baseline(X[:100], y[:100], X[100:], y[100:], TrainConfig(max_epochs=300, patience=5))
        assert 1 <= model.best_epoch <= model.epochs_run <= 300
        assert np.isfinite(model.val_loss)


class TestClassWeighting:
    def test_weights_are_inverse_frequency(self):
        w = balanced_weights([0, 0, 0, 1], 2)
        np.testing.assert_allclose(w, [1 / 3, 1 / 3, 1 / 3, 1.0])

    def test_weighting_equals_duplication(self):
        rng = np.random.default_rng(0)
        n0, n1, dup = 60, 20, 3
        X = rng.normal(size=(n0 + n1, 4))
        y = np.array([0] * n0 + [1] * n1)
        W = rng.normal(size=(2, 4))
        b = rng.normal(size=2)
        weights = np.where(y == 1, float(dup), 1.0)
        weighted = weighted_cross_entropy(W, b, X, y, weights)
        Xd = np.vstack([X[:n0]] + [X[n0:]] * dup)
        yd = np.array([0] * n0 + [1] * (n1 * dup))
        duplicated = weighted_cross_entropy(W, b, Xd, yd)
        assert abs(weighted - duplicated) / duplicated < 1e-6


def _table(n=90, signal=5.0, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    a = rng.integers(0, 2, n)
    f = signal * a + rng.normal(size=n)
    return AuditTable.from_arrays(y, attributes={"a": a}, features={"f": f, "g": rng.normal(size=n)})


class TestCrossFit:
    def test_protocol_arithmetic(self):
        table = _table(90)
        folds = assign_folds(table, "a", k=3, seed=0)
        res = crossfit_predict(table, "a", folds, TrainConfig(seed=0))
        assert len(res.splits) == 3
        covered = np.concatenate([test for _, _, test in res.splits])
        assert np.array_equal(np.sort(covered), np.arange(90))
        for train, val, test in res.splits:
            assert test.size == 30
            assert train.size + val.size == 60
            assert 5 <= val.size <= 7
            assert np.intersect1d(np.union1d(train, val), test).size == 0
        res.check_out_of_fold()

    def test_probabilities_sum_to_one(self):
        table = _table(150, seed=1)
        res = crossfit_predict(table, "a", assign_folds(table, "a", 3, 1))
        np.testing.assert_allclose(res.scores.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_array_equal(res.ahat, res.scores.argmax(axis=1))

    def test_encoded_attribute_is_recovered(self):
        table = _table(600, signal=20.0, seed=2)
        res = crossfit_predict(table, "a", assign_folds(table, "a", 3, 2), features=["f"])
        assert np.mean(res.ahat == table.codes["a"]) > 0.99

    def test_deterministic(self):
        table = _table(120, seed=3)
        folds = assign_folds(table, "a", 3, 3)
        r1 = crossfit_predict(table, "a", folds, TrainConfig(seed=9))
        r2 = crossfit_predict(table, "a", folds, TrainConfig(seed=9))
        assert r1.scores.tobytes() == r2.scores.tobytes()

    def test_no_signal(self):
        aucs, cmis = [], []
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            n = 600
            y = rng.integers(0, 2, n)
            a = rng.integers(0, 2, n)
            X = rng.normal(size=(n, 4))
            folds = stratified_folds(a * 2 + y, 3, seed=seed)
            res = crossfit_arrays(X, a, folds, TrainConfig(seed=seed), n_classes=2)
            aucs.append(auc(res.scores[:, 1], a))
            cmis.append(adjusted_cmi_codes(a, res.ahat, y).adjusted)
        assert all(0.4 <= v <= 0.6 for v in aucs)
        assert 0.45 <= np.mean(aucs) <= 0.55
        assert abs(np.mean(cmis)) <= 0.02

    def test_absent_class_warns(self):
        rng = np.random.default_rng(4)
        target = np.array([0] * 30 + [1] * 30 + [2] * 2)
        X = rng.normal(size=(62, 2))
        fold_id = np.array([i % 3 for i in range(60)] + [0, 0])
        from attrscreen.table import FoldAssignment
        res = crossfit_arrays(X, target, FoldAssignment(fold_id, 3), n_classes=3)
        assert any("absent" in w for w in res.warnings)
        fold1 = fold_id != 0
        assert np.all(res.scores[~fold1][:, 2] == 0.0)

    def test_needs_features(self):
        table = AuditTable.from_arrays([0, 1, 0, 1], attributes={"a": [0, 1, 1, 0]})
        with pytest.raises(SchemaError):
            crossfit_predict(table, "a", assign_folds(table, "a", 2, 0))

    def test_extra_features_share_models(self):
        table = _table(90, seed=5)
        X = table.features()
        folds = assign_folds(table, "a", 3, 5)
        res = crossfit_arrays(X, table.codes["a"], folds, extra_features=[X])
        np.testing.assert_array_equal(res.extra_scores[0], res.scores)


CSV_WITH_PREDICTIONS = (
    "row_id,y,a,a_hat,p0,p1\n"
    "r1,0,x,x,0.2,0.8\n"
    "r2,1,z,z,0.9,0.1\n"
    "r3,1,x,x,0.3,0.7\n"
    "r4,0,z,x,0.6,0.4\n"
)


class TestExternal:
    @pytest.fixture
    def path(self, tmp_path):
        p = tmp_path / "preds.csv"
        p.write_text(CSV_WITH_PREDICTIONS)
        return p

    def test_hard_column(self, tmp_path):
        p = tmp_path / "same.csv"
        p.write_text("y,a,ahat\n0,x,x\n1,z,z\n1,x,x\n")
        table = ingest_csv(p, {"y": "label", "a": "attribute", "ahat": "prediction:a"})
        res = external_predictions(table, "a", "ahat")
        np.testing.assert_array_equal(res.ahat, table.codes["a"])
        assert res.provenance == "external"

    def test_probability_argmax(self, path):
        schema = {"row_id": "id", "y": "label", "a": "attribute", "p0": "probability:a:x", "p1": "probability:a:z"}
        table = ingest_csv(path, schema)
        res = external_predictions(table, "a")
        # (0.2, 0.8) -> class "z", code 1
        assert res.ahat[0] == 1
        np.testing.assert_array_equal(table.codecs["a"].decode(res.ahat), ["z", "x", "z", "x"])

    def test_unseen_category(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y,a,ahat\n0,x,x\n1,z,w\n")
        table = ingest_csv(p, {"y": "label", "a": "attribute", "ahat": "prediction:a"})
        with pytest.raises(SchemaError):
            external_predictions(table, "a", "ahat")

    def test_sidecar_hard(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text("id,y,a\n7,0,x\n8,1,z\n9,1,x\n")
        table = ingest_csv(data, {"id": "id", "y": "label", "a": "attribute"})
        side = tmp_path / "s.csv"
        side.write_text("row_id,a_pred\n9,z\n7,x\n8,z\n")
        res = load_sidecar(side, table, "a")
        np.testing.assert_array_equal(table.codecs["a"].decode(res.ahat), ["x", "z", "z"])
        assert res.provenance.startswith("sidecar")

    def test_sidecar_probabilities(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text("id,y,a\n7,0,x\n8,1,z\n")
        table = ingest_csv(data, {"id": "id", "y": "label", "a": "attribute"})
        side = tmp_path / "s.csv"
        side.write_text("row_id,a_prob_x,a_prob_z\n7,0.2,0.8\n8,0.6,0.4\n")
        res = load_sidecar(side, table, "a")
        np.testing.assert_array_equal(res.ahat, [1, 0])

    def test_sidecar_missing_rows(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text("id,y,a\n7,0,x\n8,1,z\n")
        table = ingest_csv(data, {"id": "id", "y": "label", "a": "attribute"})
        side = tmp_path / "s.csv"
        side.write_text("row_id,a_pred\n7,x\n")
        with pytest.raises(SchemaError, match="no prediction"):
            load_sidecar(side, table, "a")
