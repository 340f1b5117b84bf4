import numpy as np
import pytest
from sklearn.svm import SVC

from invariants import random_pd_gram, random_state
from kernels import KernelState, build_gram
from models import KernelSpec, SvmModel, TrainConfig
from svm import (
    accuracy,
    confusion,
    cross_validate,
    decision,
    dual_objective,
    load_model,
    predict,
    qp_oracle_small,
    save_model,
    train,
)
from validation import NonConvergence, SchemaError, SingleClassDataset, ValidationError

TIGHT = TrainConfig(C=1.0, kkt_tol=1e-10)


def _labels(rng, n):
    y = np.where(rng.random(n) < 0.5, -1, 1)
    y[0], y[1] = 1, -1
    return y


def _clusters(rng, per_class=20):
    a = rng.normal(size=(per_class, 2)) * 0.3
    b = rng.normal(size=(per_class, 2)) * 0.3 + 3.0
    features = np.vstack([a, b])
    y = np.array([-1] * per_class + [1] * per_class)
    return features, y


def test_two_point_problem_has_closed_form_solution():
    K = np.array([[1.0, 0.5], [0.5, 1.0]])
    model = train(K, [1, -1], TrainConfig(C=100.0))
    # alpha = 1/(1 - k) on both points, zero bias
    np.testing.assert_allclose(model.dual_coeffs, [2.0, 2.0], atol=1e-9)
    assert model.bias == pytest.approx(0.0, abs=1e-9)
    assert decision(model, K[0]) == pytest.approx(1.0)
    assert decision(model, K[1]) == pytest.approx(-1.0)
    assert model.converged


def test_two_point_problem_at_the_box_bound():
    K = np.array([[1.0, 0.5], [0.5, 1.0]])
    model = train(K, [1, -1], TrainConfig(C=1.0))
    np.testing.assert_allclose(model.dual_coeffs, [1.0, 1.0])
    assert model.bias == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("C", [0.5, 1.0, 10.0])
def test_smo_matches_reference_solver(rng, C):
    for _ in range(5):
        n = int(rng.integers(4, 16))
        K = random_pd_gram(rng, n)
        y = _labels(rng, n)
        smo = train(K, y, TrainConfig(C=C, kkt_tol=1e-9))
        oracle = qp_oracle_small(K, y, C)
        assert smo.objective == pytest.approx(oracle.objective, abs=1e-6)
        assert dual_objective(smo, K, y) == pytest.approx(smo.objective, abs=1e-9)


def test_solution_is_feasible(rng):
    K = random_pd_gram(rng, 30)
    y = _labels(rng, 30)
    model = train(K, y, TIGHT)
    c = model.dual_coeffs
    assert c.min() >= 0.0 and c.max() <= 1.0
    assert abs(float(c @ y)) < 1e-10


def test_debug_mode_checks_monotone_objective(rng):
    K = random_pd_gram(rng, 20)
    y = _labels(rng, 20)
    debug = train(K, y, TrainConfig(C=1.0, kkt_tol=1e-9, debug=True))
    plain = train(K, y, TrainConfig(C=1.0, kkt_tol=1e-9))
    assert debug.objective == plain.objective


def test_single_class_is_rejected():
    with pytest.raises(SingleClassDataset):
        train(np.eye(3), [1, 1, 1])
    with pytest.raises(ValidationError):
        train(np.eye(3), [1, 0, -1])


def test_non_convergence_warns(rng):
    K = random_pd_gram(rng, 12)
    with pytest.warns(NonConvergence):
        model = train(K, _labels(rng, 12), TrainConfig(max_passes=1))
    assert not model.converged


def test_training_order_does_not_change_predictions(rng):
    n = 25
    K = random_pd_gram(rng, n + 1)
    y = _labels(rng, n)
    K_train, row = K[:n, :n], K[n, :n]
    model = train(K_train, y, TrainConfig(C=1.0, kkt_tol=1e-12))
    perm = rng.permutation(n)
    permuted = train(K_train[np.ix_(perm, perm)], y[perm], TrainConfig(C=1.0, kkt_tol=1e-12))
    assert decision(permuted, row[perm]) == pytest.approx(decision(model, row), abs=1e-6)


def test_duplicated_training_set_gives_same_decisions(rng):
    features, y = _clusters(rng)
    spec = KernelSpec.default_for("classical_rbf").with_width(0.5)
    K = build_gram(features, spec).values
    config = TrainConfig(C=100.0, kkt_tol=1e-10)
    model = train(K, y, config)
    assert model.support_coeffs.max() < config.C

    doubled = np.concatenate([np.arange(y.size), np.arange(y.size)])
    model2 = train(K[np.ix_(doubled, doubled)], y[doubled], config)
    queries = K[:5]
    np.testing.assert_allclose(decision(model2, queries[:, doubled]), decision(model, queries), atol=1e-6)


def test_zero_decision_predicts_positive():
    model = SvmModel(
        support_indices=np.array([0]),
        support_coeffs=np.array([1.0]),
        support_labels=np.array([1]),
        bias=0.0,
        upper_bound=1.0,
        n_train=2,
    )
    assert predict(model, [0.0, 0.3]) == 1
    np.testing.assert_array_equal(predict(model, [[0.0, 0.0], [-0.5, 0.0]]), [1, -1])


def test_flipping_test_labels_flips_accuracy(rng):
    features, y = _clusters(rng)
    spec = KernelSpec.default_for("classical_rbf")
    K = build_gram(features, spec).values
    even, odd = np.arange(0, 40, 2), np.arange(1, 40, 2)
    model = train(K[np.ix_(even, even)], y[even])
    rows = K[np.ix_(odd, even)]
    acc = accuracy(model, rows, y[odd])
    assert acc == pytest.approx(1.0)
    assert accuracy(model, rows, -y[odd]) == pytest.approx(1.0 - acc)
    counts = confusion(model, rows, y[odd])
    assert counts == {"tp": 10, "tn": 10, "fp": 0, "fn": 0}


def test_matches_sklearn_precomputed_svc(rng):
    K = random_pd_gram(rng, 30)
    y = _labels(rng, 30)
    ours = train(K, y, TrainConfig(C=1.0, kkt_tol=1e-10))
    ref = SVC(kernel="precomputed", C=1.0, tol=1e-10).fit(K, y)
    np.testing.assert_allclose(decision(ours, K), ref.decision_function(K), atol=1e-5)


def test_cross_validate_classical(rng):
    features, y = _clusters(rng)
    gram = build_gram(features, KernelSpec.default_for("classical_rbf"))
    config, spec, records = cross_validate(gram, y, folds=4)
    assert len(records) == 4 * 5
    assert config.C in (0.1, 1.0, 10.0, 100.0)
    assert spec.gamma_c in (0.25, 0.5, 1.0, 2.0, 4.0)
    best = max(r["mean_accuracy"] for r in records)
    first_best = next(r for r in records if r["mean_accuracy"] == best)
    assert (config.C, spec.gamma_c) == (first_best["C"], first_best["width"])
    again = cross_validate(gram, y, folds=4, workers=2)
    assert again[2] == records


def test_cross_validate_qlin_has_no_width(rng):
    items = [KernelState(random_state(rng, 4).amplitudes, mixed=False) for _ in range(20)]
    gram = build_gram(items, KernelSpec(method="GSK", map="qlin"))
    y = np.array([1, -1] * 10)
    config, spec, records = cross_validate(gram, y, folds=2, C_grid=[1.0, 10.0])
    assert [r["width"] for r in records] == [None, None]
    assert spec == gram.spec


def test_cross_validate_subset_and_errors(rng):
    features, y = _clusters(rng)
    gram = build_gram(features, KernelSpec.default_for("classical_rbf"))
    subset = np.arange(0, 40, 2)
    _, _, records = cross_validate(gram, y[subset], indices=subset, folds=2, C_grid=[1.0], gamma_grid=[1.0])
    assert len(records) == 1
    with pytest.raises(ValidationError):
        cross_validate(gram, y, folds=1)
    with pytest.raises(ValidationError):
        cross_validate(gram, y, folds=25)


def test_model_persistence(tmp_path, rng):
    K = random_pd_gram(rng, 10)
    y = _labels(rng, 10)
    model = train(K, y, TIGHT, KernelSpec.default_for("GSK"))
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    np.testing.assert_array_equal(loaded.support_indices, model.support_indices)
    assert loaded.bias == model.bias
    assert loaded.spec == model.spec
    np.testing.assert_array_equal(decision(loaded, K), decision(model, K))

    path.write_text('{"bias": 0.0}')
    with pytest.raises(SchemaError):
        load_model(path)
