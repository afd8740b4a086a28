import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from motionhmm import classifiers as C
from motionhmm.classifiers import LinearModel

from _fixtures import separable_likelihoods


def finite_difference(fun, w, b, h=1e-6):
    gw = np.empty_like(w)
    for j in range(len(w)):
        e = np.zeros_like(w)
        e[j] = h
        gw[j] = (fun(w + e, b) - fun(w - e, b)) / (2 * h)
    gb = (fun(w, b + h) - fun(w, b - h)) / (2 * h)
    return np.append(gw, gb)


class TestFixedRules:
    def test_max_examples(self):
        np.testing.assert_array_equal(C.max_decision([-5, -1, -9]), [0, 1, 0])
        np.testing.assert_array_equal(C.max_decision([-3]), [1])
        np.testing.assert_array_equal(C.max_decision([-1, -1]), [1, 0])

    def test_max_all_sentinel(self):
        with pytest.raises(ValueError):
            C.max_decision([-np.inf, -np.inf])

    def test_threshold_examples(self):
        np.testing.assert_array_equal(C.threshold_decision([3, -2], [0, 0]), [1, 0])
        np.testing.assert_array_equal(C.threshold_decision([1.5], [1.5]), [1])
        np.testing.assert_array_equal(C.threshold_decision([1e300, 0], [np.inf, np.inf]), [0, 0])

    def test_zero_alias(self):
        dm = C.make_decision_maker("zero")
        np.testing.assert_array_equal(dm.predict([[3, -2], [-1, 0]]), [[1, 0], [0, 1]])


class TestGradients:
    @pytest.mark.parametrize("loss", ["logistic", "squared_hinge"])
    def test_finite_differences(self, loss):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(15, 4))
        y = rng.random(15) < 0.5
        for _ in range(20):
            w, b, c = rng.normal(size=4), rng.normal(), rng.uniform(0.1, 3)
            g = np.append(*C.smooth_gradient(w, b, X, y, c, loss, "l2"))
            fd = finite_difference(lambda w_, b_: C.objective(w_, b_, X, y, c, loss, "l2"), w, b)
            assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_logistic_stable_for_large_margins(self):
        X = np.array([[1e4], [-1e4]])
        y = np.array([1, 0])
        gw, gb = C.smooth_gradient(np.array([1.0]), 0.0, X, y, 1.0, "logistic", "l1")
        assert np.isfinite(gw).all() and np.isfinite(gb)
        assert C.objective(np.array([-1.0]), 0.0, X, y, 1.0) == pytest.approx(2e4 + 0.5, rel=1e-12)


class TestLinearFit:
    @pytest.mark.parametrize("loss", ["logistic", "squared_hinge"])
    def test_strong_l1_gives_zero_weights(self, loss):
        X, Y = separable_likelihoods()
        m = C.fit_linear(X, Y[:, 0], loss, "l1", C=1e-6)
        np.testing.assert_array_equal(m.weights, 0.0)

    def test_separable_1d_l2(self):
        X = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 0, 1, 1, 1])
        for fit in (C.fit_logistic, C.fit_linear_svm):
            m = fit(X, y, penalty="l2", C=1.0)
            np.testing.assert_array_equal(m.predict(X), y)

    @pytest.mark.parametrize("loss", ["logistic", "squared_hinge"])
    def test_matches_generic_optimizer_l2(self, loss):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 3))
        y = (X @ [1.0, -2.0, 0.5] + rng.normal(size=40)) > 0
        m = C.fit_linear(X, y, loss, "l2", C=0.7)

        def f(v):
            return C.objective(v[:3], v[3], X, y, 0.7, loss, "l2")

        def g(v):
            gw, gb = C.smooth_gradient(v[:3], v[3], X, y, 0.7, loss, "l2")
            return np.append(gw, gb)

        ref = minimize(f, np.zeros(4), jac=g, method="BFGS", options={"gtol": 1e-10})
        assert C.objective(m.weights, m.intercept, X, y, 0.7, loss, "l2") == pytest.approx(ref.fun, rel=1e-7)
        np.testing.assert_allclose(np.append(m.weights, m.intercept), ref.x, atol=1e-4)

    @pytest.mark.parametrize("loss", ["logistic", "squared_hinge"])
    def test_l1_optimality_conditions(self, loss):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(60, 5))
        y = (X[:, 0] - X[:, 1] + 0.3 * rng.normal(size=60)) > 0
        m = C.fit_linear(X, y, loss, "l1", C=0.2)
        gw, gb = C.smooth_gradient(m.weights, m.intercept, X, y, 0.2, loss, "l1")
        nz = m.weights != 0
        assert nz.any() and not nz.all()
        np.testing.assert_allclose(gw[nz], -np.sign(m.weights[nz]), atol=1e-3)
        assert np.all(np.abs(gw[~nz]) <= 1 + 1e-3)
        assert abs(gb) <= 1e-3

    def test_history_monotone(self):
        X, Y = separable_likelihoods(seed=3)
        for loss in ("logistic", "squared_hinge"):
            for pen in ("l1", "l2"):
                h = np.array(C.fit_linear(X, Y[:, 1], loss, pen, C=1e-3).history)
                assert np.all(np.diff(h) <= 1e-12 * np.abs(h[1:]))

    def test_single_class_column(self):
        X = np.random.default_rng(0).normal(size=(5, 2))
        pos = C.fit_logistic(X, np.ones(5))
        neg = C.fit_logistic(X, np.zeros(5))
        np.testing.assert_array_equal(pos.weights, 0)
        np.testing.assert_array_equal(pos.predict(X), 1)
        np.testing.assert_array_equal(neg.predict(X), 0)

    def test_predict_linear_examples(self):
        assert C.predict_linear(LinearModel(np.zeros(2), -1.0), [5.0, 9.0]) == 0
        assert C.predict_linear(LinearModel(np.array([1.0]), 0.0), [2.0]) == 1
        assert C.predict_linear(LinearModel(np.array([1.0]), 0.0), [0.0]) == 0

    def test_negative_infinity_entries(self):
        X, Y = separable_likelihoods(seed=4)
        X[0, 0] = -np.inf
        m = C.fit_logistic(X, Y[:, 0], C=1e-3)
        assert np.all(np.isfinite(m.decision_function(X)))

    def test_invalid_c(self):
        with pytest.raises(ValueError):
            C.fit_logistic(np.zeros((2, 1)), [0, 1], C=0.0)


class TestBinaryRelevance:
    @pytest.mark.parametrize("kind", ["logistic", "svm"])
    def test_separable_training_accuracy(self, kind):
        X, Y = separable_likelihoods(seed=5)
        dm = C.make_decision_maker(kind, penalty="l1", C=1e-3).fit(X, Y)
        np.testing.assert_array_equal(dm.predict(X), Y)

    def test_roundtrip(self):
        X, Y = separable_likelihoods(seed=6)
        dm = C.make_decision_maker("logistic", penalty="l2", C=0.01).fit(X, Y)
        back = C.decision_maker_from_dict(json.loads(json.dumps(dm.to_dict())))
        np.testing.assert_array_equal(back.predict(X), dm.predict(X))

    def test_labels_are_independent(self):
        X, Y = separable_likelihoods(seed=7)
        full = C.make_decision_maker("logistic").fit(X, Y)
        single = C.make_decision_maker("logistic").fit(X, Y[:, 2:3])
        np.testing.assert_array_equal(full.models[2].weights, single.models[0].weights)


class TestTrees:
    def test_pure_node_is_leaf(self):
        t = C.fit_tree(np.random.default_rng(0).normal(size=(6, 2)), np.ones((6, 2)))
        assert len(t.feature) == 1 and t.feature[0] == -1

    def test_threshold_data_depth_one(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        Y = np.array([[1, 0], [1, 0], [0, 1], [0, 1]])
        for crit in ("gini", "info_gain"):
            t = C.fit_tree(X, Y, crit)
            assert t.depth == 1
            assert t.threshold[0] == 1.5
            np.testing.assert_array_equal(t.predict(X), Y)

    def test_max_depth_honoured(self):
        X = np.arange(8.0)[:, None]
        Y = (np.arange(8) % 2)[:, None]  # alternating labels need many splits
        t = C.fit_tree(X, Y, max_depth=2)
        assert t.depth <= 2
        assert C.fit_tree(X, Y).depth > 2

    def test_leaf_fraction_rule(self):
        t = C.Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([[0.8, 0.2]]), 0)
        np.testing.assert_array_equal(C.predict_tree(t, [0.0]), [1, 0])
        t = C.Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([[0.5]]), 0)
        np.testing.assert_array_equal(C.predict_tree(t, [0.0]), [1])

    def test_routing_at_threshold_goes_left(self):
        X = np.array([[0.0], [1.0]])
        t = C.fit_tree(X, np.array([[1], [0]]))
        assert C.predict_tree(t, [t.threshold[0]])[0] == 1

    def test_deterministic_structure(self):
        rng = np.random.default_rng(1)
        X, Y = rng.normal(size=(40, 5)), rng.random((40, 3)) < 0.4
        a = C.fit_tree(X, Y, "info_gain", 5, seed=3, feature_subset=2)
        b = C.fit_tree(X, Y, "info_gain", 5, seed=3, feature_subset=2)
        assert a.structure() == b.structure()

    def test_gini_oracle_split(self):
        # brute-force the best threshold under label-averaged Gini impurity
        rng = np.random.default_rng(2)
        X = rng.normal(size=(12, 1))
        Y = (rng.random((12, 2)) < 0.5).astype(float)
        xs = np.sort(X[:, 0])

        def gini(Yp):
            p = Yp.mean(axis=0)
            return (2 * p * (1 - p)).mean()

        best = min(
            (len(Y[X[:, 0] <= t]) * gini(Y[X[:, 0] <= t]) + len(Y[X[:, 0] > t]) * gini(Y[X[:, 0] > t]), t)
            for t in (xs[:-1] + xs[1:]) / 2
        )
        t = C.fit_tree(X, Y, "gini", max_depth=1)
        if t.feature[0] >= 0:
            assert t.threshold[0] == pytest.approx(best[1])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_unlimited_tree_fits_distinct_points(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(15, 2))
        Y = (rng.random((15, 2)) < 0.5).astype(int)
        np.testing.assert_array_equal(C.fit_tree(X, Y).predict(X), Y)


class TestForest:
    def test_separable(self):
        X, Y = separable_likelihoods(seed=8)
        f = C.fit_forest(X, Y, n_trees=10, seed=1)
        assert (f.predict(X) == Y).mean() > 0.95

    def test_agreeing_trees(self):
        leaf = C.Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([[1.0, 0.0]]), 0)
        f = C.Forest((leaf, leaf, leaf), (0, 1, 2))
        np.testing.assert_array_equal(f.predict(np.zeros((2, 1))), [[1, 0], [1, 0]])

    def test_vote_tie_goes_to_one(self):
        pos = C.Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([[1.0]]), 0)
        neg = C.Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([[0.0]]), 0)
        np.testing.assert_array_equal(C.Forest((pos, neg), (0, 1)).predict(np.zeros((1, 1))), [[1]])

    def test_deterministic_and_roundtrip(self):
        X, Y = separable_likelihoods(seed=9)
        a = C.make_decision_maker("forest", n_trees=5, seed=2).fit(X, Y)
        b = C.make_decision_maker("forest", n_trees=5, seed=2).fit(X, Y)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
        back = C.decision_maker_from_dict(json.loads(json.dumps(a.to_dict())))
        np.testing.assert_array_equal(back.predict(X), a.predict(X))

    def test_needs_trees(self):
        with pytest.raises(ValueError):
            C.fit_forest(np.zeros((2, 1)), np.zeros((2, 1)), n_trees=0)
