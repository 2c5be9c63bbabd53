import numpy as np
import pytest

from lpmodrec.classifier import (
    C_GRID,
    EvalReport,
    SvmModel,
    confusion_matrix,
    decision_function,
    evaluate,
    kfold_evaluate,
    load_model,
    predict,
    save_model,
    stratified_folds,
    train_svm,
)
from lpmodrec.errors import (
    ConfigError,
    DegenerateLabels,
    DimensionMismatch,
    FormatError,
    TagMismatch,
    TooFewExamples,
)
from lpmodrec.features import FeatureTag, FeatureVector
from lpmodrec.iq import Modulation


def simplex_data(rng, n_per=30, d=3, spread=0.1):
    corners = 3.0 * np.eye(d)
    X = np.vstack([c + rng.normal(scale=spread, size=(n_per, d)) for c in corners])
    y = np.repeat(["a", "b", "c"][:d], n_per)
    return X, list(y)


def test_symmetric_two_point_boundary():
    # each point is duplicated so every class has the required two examples
    m = train_svm(np.array([[-1.0], [-1.0], [1.0], [1.0]]), ["neg", "neg", "pos", "pos"], C=1.0)
    s = decision_function(m, np.array([[0.0]]))
    assert s[0, 0] == pytest.approx(s[0, 1], abs=1e-6)
    assert predict(m, np.array([[-0.1], [0.1]]))[0] == ["neg", "pos"]
    assert predict(m, np.array([[-1.0], [1.0]]))[0] == ["neg", "pos"]


def test_separable_simplex_training_accuracy(rng):
    X, y = simplex_data(rng)
    m = train_svm(X, y, C=1.0, seed=0)
    assert evaluate(m, X, y).accuracy == 1.0


def test_determinism(rng):
    X, y = simplex_data(rng)
    a, b = train_svm(X, y, seed=3), train_svm(X, y, seed=3)
    assert a.weights.tobytes() == b.weights.tobytes() and a.biases.tobytes() == b.biases.tobytes()


def test_exemplar_deep_inside_class(rng):
    X, y = simplex_data(rng)
    m = train_svm(X, y)
    label, scores = predict(m, np.array([0.0, 6.0, 0.0]))
    assert label == "b" and scores.shape == (3,)


def test_zero_weights_tie_break_first_class():
    m = SvmModel(("x", "y", "z"), np.zeros((3, 2)), np.zeros(3), 1.0, None, np.zeros(2), np.ones(2))
    assert predict(m, np.array([5.0, -3.0]))[0] == "x"


def test_scores_in_class_order(rng):
    X, y = simplex_data(rng)
    m = train_svm(X, y, classes=("c", "a", "b"))
    label, scores = predict(m, np.array([3.0, 0.0, 0.0]))
    assert label == "a" and np.argmax(scores) == 1


def test_standardization_round_trip_equivalence(rng):
    X, y = simplex_data(rng, spread=1.0)
    X = X * np.array([1e3, 1e-3, 1.0]) + np.array([5.0, -2.0, 0.0])
    m = train_svm(X, y)
    W_raw = m.weights / m.scaler_std
    b_raw = m.biases - W_raw @ m.scaler_mean
    Z = rng.normal(size=(200, 3)) * np.array([1e3, 1e-3, 1.0])
    np.testing.assert_array_equal(np.argmax(Z @ W_raw.T + b_raw, axis=1),
                                  np.argmax(decision_function(m, Z), axis=1))


def test_constant_feature_std_floor(rng):
    X, y = simplex_data(rng)
    X = np.hstack([X, np.full((X.shape[0], 1), 4.2)])
    m = train_svm(X, y)
    assert m.scaler_std[-1] == 1.0 and np.all(m.scaler_std > 0)


def test_monotone_training_accuracy_in_C(rng):
    X, y = simplex_data(rng, spread=0.8)
    accs = [evaluate(train_svm(X, y, C=c), X, y).accuracy for c in (0.01, 0.1, 1.0, 10.0)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))


def test_auto_C_picks_from_grid(rng):
    X, y = simplex_data(rng, n_per=40, spread=0.5)
    m = train_svm(X, y, C="auto", seed=1)
    assert m.C in (0.01, 0.1, 1.0, 10.0)
    scores = {float(k): v for k, v in m.provenance["c_scores"].items()}
    best = max(scores.values())
    assert m.C == min(c for c, s in scores.items() if s == best)


def test_errors(rng):
    X, y = simplex_data(rng)
    with pytest.raises(DegenerateLabels):
        train_svm(X, ["a"] * len(y))
    with pytest.raises(DimensionMismatch):
        train_svm(X, y[:-1])
    with pytest.raises(TooFewExamples):
        train_svm(X[:31], y[:31])
    with pytest.raises(ConfigError):
        train_svm(X, y, C="fast")
    with pytest.raises(ConfigError):
        train_svm(X, y, C=0.0)
    m = train_svm(X, y)
    with pytest.raises(DimensionMismatch):
        predict(m, np.zeros((2, 4)))


def test_tag_mismatch(rng):
    X, y = simplex_data(rng)
    fvs = [FeatureVector(x, FeatureTag.HOC) for x in X]
    m = train_svm(fvs, y)
    assert m.feature_tag is FeatureTag.HOC
    with pytest.raises(TagMismatch):
        predict(m, FeatureVector(X[0], FeatureTag.OS))
    label, _ = predict(m, fvs[0])
    assert label == "a"
    labels, scores = predict(m, fvs[:3])
    assert len(labels) == 3 and scores.shape == (3, 3)
    with pytest.raises(TagMismatch):
        train_svm(fvs, y, tag="OS")


def test_confusion_conservation(rng):
    X, y = simplex_data(rng, n_per=20)
    rep = kfold_evaluate(X, y, k=5, seed=0)
    assert rep.total == len(y) and rep.folds == 5
    np.testing.assert_array_equal(rep.confusion.sum(axis=1), [20, 20, 20])
    assert rep.accuracy == 1.0


def test_folds_partition_indices():
    y = ["a"] * 25 + ["b"] * 15
    folds = stratified_folds(y, 5, seed=2)
    allidx = np.concatenate(folds)
    assert sorted(allidx.tolist()) == list(range(40))
    for f in folds:
        assert sum(y[i] == "a" for i in f) == 5


def test_kfold_needs_enough_examples(rng):
    X, y = simplex_data(rng, n_per=4)
    with pytest.raises(TooFewExamples):
        kfold_evaluate(X, y, k=5)
    with pytest.raises(ConfigError):
        kfold_evaluate(X, y, k=1)


def test_shuffled_labels_chance_level():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(1000, 10))
    y = list(rng.permutation(np.repeat(list("abcde"), 200)))
    acc = kfold_evaluate(X, y, k=10, seed=0).accuracy
    assert abs(acc - 0.2) <= 0.05


def test_eval_report():
    cm = confusion_matrix(["a", "a", "b", "b"], ["a", "b", "b", "b"], ("a", "b"))
    rep = EvalReport(("a", "b"), cm)
    assert rep.accuracy == 0.75 and rep.per_class_accuracy == {"a": 0.5, "b": 1.0}


def test_model_round_trip(tmp_path, rng):
    X, y = simplex_data(rng)
    labels = [Modulation.QPSK if v == "a" else Modulation.QAM16 if v == "b" else Modulation.PSK8 for v in y]
    m = train_svm([FeatureVector(x, FeatureTag.FV_HOC) for x in X], labels, C="auto")
    save_model(m, tmp_path / "m.npz")
    r = load_model(tmp_path / "m.npz")
    assert r.classes == tuple(c.value for c in m.classes)
    for a in ("weights", "biases", "scaler_mean", "scaler_std"):
        assert getattr(m, a).tobytes() == getattr(r, a).tobytes()
    assert r.C == m.C and r.feature_tag is FeatureTag.FV_HOC and r.provenance == m.provenance
    np.testing.assert_array_equal(decision_function(m, X), decision_function(r, X))


def test_load_model_rejects_garbage(tmp_path):
    p = tmp_path / "bad.npz"
    np.savez(p, meta=np.array('{"format": "other"}'))
    with pytest.raises(FormatError):
        load_model(p)


def test_standardize_off_keeps_raw_scale():
    rng = np.random.default_rng(8)
    X = np.vstack([rng.normal(0, 1, (20, 2)), rng.normal(3, 1, (20, 2))]) * [1.0, 1000.0]
    y = ["a"] * 20 + ["b"] * 20
    m = train_svm(X, y, standardize=False)
    np.testing.assert_array_equal(m.scaler_mean, 0.0)
    np.testing.assert_array_equal(m.scaler_std, 1.0)
    assert train_svm(X, y, C="auto", standardize=False).C in C_GRID
