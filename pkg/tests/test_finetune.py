import json
import time

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from ecgkit.finetune import (
    ClassTooSmall,
    DivergedImmediately,
    FineTuneConfig,
    LinearHead,
    ShapeMismatch,
    TrainingReport,
    UnsupportedAtDeskScale,
    adamw_step,
    embed,
    exponential_lr,
    head_loss_and_grad,
    lr_finder,
    predict,
    stratified_split,
    train_head,
)
from ecgkit.metrics import f1_scores
from ecgkit.router import numeric_gradient
from ecgkit.signal import StandardEcg

from conftest import synthetic_ecg


def make_blobs(n=200, dim=16, margin=4.0, seed=0):
    """Two unit-variance gaussian classes whose bulks are ``margin`` sigma
    apart (centers at twice that, so the clouds are linearly separable).

    The dimension stays well below n: with isotropic noise at d >= 64 the
    AdamW coordinate normalization biases the decision direction off the
    class axis no matter the learning rate.
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    half = n // 2
    x = np.vstack([
        rng.normal(size=(half, dim)),
        rng.normal(size=(n - half, dim)) + 2.0 * margin * direction,
    ])
    labels = ["healthy"] * half + ["disease"] * (n - half)
    return x, labels


class TestEmbed:
    def test_deterministic(self):
        ecg, _ = synthetic_ecg(bpm=72.0, noise=0.02, seed=3)
        np.testing.assert_array_equal(embed(ecg), embed(ecg))

    def test_standardized_512(self):
        ecg, _ = synthetic_ecg(bpm=60.0)
        vec = embed(ecg)
        assert vec.shape == (512,)
        assert vec.mean() == pytest.approx(0.0, abs=1e-9)
        assert vec.var() == pytest.approx(1.0, abs=1e-9)

    def test_class_separation(self):
        shape_a = np.linspace(0.3, 1.0, 12)
        shape_b = np.linspace(1.0, 0.3, 12)
        between, within = [], []
        for seed in range(50):
            ecg_a, _ = synthetic_ecg(bpm=60, noise=0.02, seed=seed, beat_shape=shape_a)
            ecg_a2, _ = synthetic_ecg(bpm=60, noise=0.02, seed=seed + 100, beat_shape=shape_a)
            ecg_b, _ = synthetic_ecg(bpm=60, noise=0.02, seed=seed + 200, beat_shape=shape_b)
            va, va2, vb = embed(ecg_a), embed(ecg_a2), embed(ecg_b)
            within.append(np.linalg.norm(va - va2))
            between.append(np.linalg.norm(va - vb))
        assert np.mean(between) > np.mean(within)


class TestStratifiedSplit:
    def test_balanced_80_20(self):
        labels = ["A"] * 50 + ["B"] * 50
        train, val = stratified_split(labels, 0.2, seed=0)
        assert len(train) == 80 and len(val) == 20
        assert sum(labels[i] == "A" for i in val) == 10
        assert set(train) | set(val) == set(range(100))
        assert set(train) & set(val) == set()

    def test_single_sample_class(self):
        with pytest.raises(ClassTooSmall):
            stratified_split(["A", "A", "B"], 0.2, seed=0)

    def test_deterministic(self):
        labels = ["A", "B"] * 20
        assert all(np.array_equal(a, b) for a, b in zip(
            stratified_split(labels, 0.25, seed=7), stratified_split(labels, 0.25, seed=7)))

    def test_proportions_within_one_sample(self):
        labels = ["A"] * 13 + ["B"] * 29 + ["C"] * 8
        train, val = stratified_split(labels, 0.2, seed=1)
        for cls, count in (("A", 13), ("B", 29), ("C", 8)):
            got = sum(labels[i] == cls for i in val)
            assert abs(got - count * 0.2) <= 1.0


class TestAdamW:
    def test_hand_computed_step(self):
        theta, _ = adamw_step(np.array(1.0), np.array(1.0), None, lr=0.1,
                              betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01, t=1)
        assert float(theta) == pytest.approx(0.899, abs=1e-7)

    def test_zero_gradient_keeps_param(self):
        theta, _ = adamw_step(np.array([1.5]), np.array([0.0]), None, lr=0.1,
                              weight_decay=0.0, t=1)
        assert float(theta[0]) == 1.5

    def test_decay_only_shrinks_multiplicatively(self):
        theta, _ = adamw_step(np.array([2.0]), np.array([0.0]), None, lr=0.1,
                              weight_decay=0.05, t=1)
        assert float(theta[0]) == pytest.approx(2.0 * (1 - 0.1 * 0.05))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            adamw_step(np.zeros(3), np.zeros(4), None, lr=0.1)


class TestExponentialLr:
    def test_values(self):
        assert exponential_lr(1e-3, 0.9, 0) == 1e-3
        assert exponential_lr(1e-3, 0.9, 2) == pytest.approx(8.1e-4)
        assert exponential_lr(1e-3, 0.98, 1) == pytest.approx(9.8e-4)


class TestLrFinder:
    def quadratic(self, lam):
        lam = np.asarray(lam)

        def loss_and_grad(params, _batch):
            p = params["p"]
            return float(0.5 * np.dot(lam * p, p)), {"p": lam * p}

        return loss_and_grad

    def test_min_loss_selection_matches_stability_bound(self):
        # Oracle: gradient descent on a quadratic diverges above 2 / lam_max.
        for lam_max in (3.0, 10.0, 30.0, 100.0):
            found = lr_finder(self.quadratic([lam_max, lam_max / 10]),
                              {"p": np.ones(2)}, [None], select="min_loss")
            bound = 2.0 / lam_max
            assert abs(np.log10(found / bound)) <= 1.0

    def test_steepest_selection_stays_on_stable_side(self):
        for lam_max in (3.0, 10.0, 100.0):
            found = lr_finder(self.quadratic([lam_max, lam_max / 10]),
                              {"p": np.ones(2)}, [None])
            assert found < 2.0 / lam_max

    def test_range_contract(self):
        found = lr_finder(self.quadratic([5.0]), {"p": np.ones(1)}, [None])
        assert 1e-6 <= found <= 1.0

    def test_deterministic(self):
        a = lr_finder(self.quadratic([7.0, 1.0]), {"p": np.ones(2)}, [None])
        b = lr_finder(self.quadratic([7.0, 1.0]), {"p": np.ones(2)}, [None])
        assert a == b

    def test_diverged_immediately(self):
        def bad(params, _batch):
            return float("nan"), {"p": np.zeros(1)}
        with pytest.raises(DivergedImmediately):
            lr_finder(bad, {"p": np.zeros(1)}, [None])


class TestHeadGradients:
    def test_analytic_matches_numeric_at_random_points(self):
        rng = np.random.default_rng(0)
        n, d, c = 12, 8, 3
        x = rng.normal(size=(n, d))
        target = rng.integers(0, c, size=n)
        weights_cls = np.array([1.0, 2.0, 0.5])
        for trial in range(5):
            w0 = rng.normal(size=(c, d))
            b0 = rng.normal(size=c)
            _, gw, gb = head_loss_and_grad(w0, b0, x, target, weights_cls, "softmax")

            def f(flat):
                w = flat[: c * d].reshape(c, d)
                b = flat[c * d:]
                loss, _, _ = head_loss_and_grad(w, b, x, target, weights_cls, "softmax")
                return loss

            numeric = numeric_gradient(f, np.concatenate([w0.ravel(), b0]))
            analytic = np.concatenate([gw.ravel(), gb])
            scale = np.maximum(np.abs(numeric), 1e-3)
            assert np.max(np.abs(numeric - analytic) / scale) <= 1e-4

    def test_sigmoid_head_gradients(self):
        rng = np.random.default_rng(1)
        n, d, c = 10, 6, 3
        x = rng.normal(size=(n, d))
        y = (rng.random((n, c)) > 0.5).astype(float)
        weights_cls = np.ones(c)
        w0 = rng.normal(size=(c, d))
        b0 = rng.normal(size=c)
        _, gw, gb = head_loss_and_grad(w0, b0, x, y, weights_cls, "sigmoid")

        def f(flat):
            w = flat[: c * d].reshape(c, d)
            b = flat[c * d:]
            loss, _, _ = head_loss_and_grad(w, b, x, y, weights_cls, "sigmoid")
            return loss

        numeric = numeric_gradient(f, np.concatenate([w0.ravel(), b0]))
        analytic = np.concatenate([gw.ravel(), gb])
        np.testing.assert_allclose(numeric, analytic, atol=1e-5)

    def test_descent_under_small_steps_on_fixed_batch(self):
        x, labels = make_blobs(n=60, dim=16, seed=2)
        target = np.array([0 if lab == "healthy" else 1 for lab in labels])
        w = np.zeros((2, 16))
        b = np.zeros(2)
        weights_cls = np.ones(2)
        losses = []
        for _ in range(100):
            loss, gw, gb = head_loss_and_grad(w, b, x, target, weights_cls, "softmax")
            losses.append(loss)
            w = w - 1e-4 * gw
            b = b - 1e-4 * gb
        assert all(a >= b_ - 1e-12 for a, b_ in zip(losses, losses[1:]))


class TestTrainHead:
    def test_blob_fixture_reaches_f1(self):
        x, labels = make_blobs()
        start = time.monotonic()
        head, report = train_head(x, labels, FineTuneConfig(seed=0))
        elapsed = time.monotonic() - start
        assert elapsed < 60.0
        assert report.eval_f1["weighted"] >= 0.95
        assert len(report.val_loss_per_epoch) <= 50

    def test_logistic_regression_oracle_bounds_feasibility(self):
        x, labels = make_blobs()
        train_idx, val_idx = stratified_split(labels, 0.2, seed=0)
        model = LogisticRegression(max_iter=2000)
        model.fit(x[train_idx], [labels[i] for i in train_idx])
        pred = model.predict(x[val_idx])
        scores = f1_scores([labels[i] for i in val_idx], list(pred), sorted(set(labels)))
        assert scores["weighted"] >= 0.99

    def test_shuffled_labels_give_chance_f1(self):
        x, labels = make_blobs(n=100, dim=64)
        results = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            shuffled = [labels[i] for i in rng.permutation(len(labels))]
            cfg = FineTuneConfig(seed=seed, max_epochs=20)
            _, report = train_head(x, shuffled, cfg)
            results.append(report.eval_f1["weighted"])
        assert abs(np.mean(results) - 0.5) <= 0.15

    def test_best_epoch_is_argmin_val_loss(self):
        x, labels = make_blobs(n=80, dim=32, margin=1.0, seed=5)
        _, report = train_head(x, labels, FineTuneConfig(seed=1, max_epochs=15))
        assert report.best_epoch == int(np.argmin(report.val_loss_per_epoch))

    def test_checkpoint_reproduces_min_val_loss(self):
        from ecgkit.finetune import _class_weights, _encode_labels, _epoch_loss
        x, labels = make_blobs(n=80, dim=32, margin=1.5, seed=6)
        cfg = FineTuneConfig(seed=2, max_epochs=12)
        head, report = train_head(x, labels, cfg)
        classes, target, activation, label_sets = _encode_labels(labels)
        weights_cls = _class_weights(classes, label_sets)
        _, val_idx = stratified_split(labels, cfg.val_fraction, cfg.seed)
        loss = _epoch_loss(head.weights, head.bias, x[val_idx], target[val_idx],
                           weights_cls, activation)
        assert loss == pytest.approx(min(report.val_loss_per_epoch), abs=1e-12)

    def test_deterministic_per_seed(self):
        x, labels = make_blobs(n=60, dim=24, seed=7)
        cfg = FineTuneConfig(seed=3, max_epochs=8)
        head_a, report_a = train_head(x, labels, cfg)
        head_b, report_b = train_head(x, labels, cfg)
        np.testing.assert_array_equal(head_a.weights, head_b.weights)
        assert report_a.to_dict() == report_b.to_dict()

    def test_early_stopping_at_patience_exhaustion(self):
        x, labels = make_blobs(n=60, dim=24, margin=8.0, seed=8)
        cfg = FineTuneConfig(seed=4, patience=3, max_epochs=50, lr=0.05)
        _, report = train_head(x, labels, cfg)
        epochs = len(report.val_loss_per_epoch)
        if epochs < cfg.max_epochs:
            assert epochs - 1 - report.best_epoch == cfg.patience

    def test_report_has_exactly_the_contract_fields(self):
        x, labels = make_blobs(n=40, dim=16, seed=9)
        _, report = train_head(x, labels, FineTuneConfig(seed=5, max_epochs=3))
        doc = json.loads(json.dumps(report.to_dict()))
        assert set(doc) == {
            "n_samples", "label_distribution", "base_model", "train_loss_per_epoch",
            "val_loss_per_epoch", "eval_f1", "best_epoch", "lr_used",
        }
        assert doc["n_samples"] == 40
        assert sum(doc["label_distribution"].values()) == 40

    def test_multilabel_training(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(60, 32))
        x[:30, 0] += 4.0
        x[20:50, 1] += 4.0
        labels = []
        for i in range(60):
            row = set()
            if i < 30:
                row.add("A")
            if 20 <= i < 50:
                row.add("B")
            if not row:
                row.add("C")
            labels.append(row)
        head, report = train_head(x, labels, FineTuneConfig(seed=6, max_epochs=20))
        assert head.activation == "sigmoid"
        assert set(report.label_distribution) == {"A", "B", "C"}

    def test_full_method_unsupported(self):
        x, labels = make_blobs(n=40, dim=16)
        with pytest.raises(UnsupportedAtDeskScale):
            train_head(x, labels, FineTuneConfig(method="full"))

    def test_class_too_small(self):
        x = np.zeros((12, 8))
        labels = ["A"] * 11 + ["B"]
        with pytest.raises(ClassTooSmall):
            train_head(x, labels, FineTuneConfig())


class TestPredict:
    def test_zero_head_uniform(self):
        head = LinearHead(weights=np.zeros((4, 8)), bias=np.zeros(4),
                          class_names=("a", "b", "c", "d"))
        probs = predict(head, np.random.default_rng(11).normal(size=(5, 8)))
        np.testing.assert_allclose(probs, 0.25)

    def test_rows_sum_to_one(self):
        head = LinearHead(weights=np.random.default_rng(12).normal(size=(3, 8)),
                          bias=np.zeros(3), class_names=("a", "b", "c"))
        probs = predict(head, np.random.default_rng(13).normal(size=(7, 8)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_trained_head_classifies_training_blobs(self):
        x, labels = make_blobs()
        head, _ = train_head(x, labels, FineTuneConfig(seed=0))
        probs = predict(head, x)
        pred = [head.class_names[int(i)] for i in probs.argmax(axis=1)]
        accuracy = np.mean([p == t for p, t in zip(pred, labels)])
        assert accuracy >= 0.95

    def test_shape_mismatch(self):
        head = LinearHead(weights=np.zeros((2, 8)), bias=np.zeros(2), class_names=("a", "b"))
        with pytest.raises(ShapeMismatch):
            predict(head, np.zeros((3, 9)))


class TestReportType:
    def test_curve_length_validation(self):
        with pytest.raises(ValueError):
            TrainingReport(n_samples=1, label_distribution={}, base_model="x",
                           train_loss_per_epoch=[1.0], val_loss_per_epoch=[1.0, 0.5],
                           eval_f1={}, best_epoch=0, lr_used=0.1)
