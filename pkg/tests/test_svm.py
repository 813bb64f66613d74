import math

import numpy as np
import pytest

from core import svm
from core.errors import DimensionMismatchError, GabpNotConvergedError, InvalidLabelError
from core.evaluation import evaluate
from core.kernels import assemble_kernel_rows, default_bias_constant
from core.models import (
    ConvergenceDiagnosis,
    GabpSettings,
    GabpSolution,
    KernelSpec,
    LoadingMode,
    SamplePoint,
    Schedule,
    TrainConfig,
    TrainedModel,
    Variant,
)
from core.numerics import SymmetricMatrix, diagnose_convergence, direct_solve
from dataset_repository import make_two_gaussians, train_test_split

TIGHT = GabpSettings(epsilon=1e-10)


def _two_points():
    return [SamplePoint([1.0, 0.0], 1.0), SamplePoint([0.0, 1.0], -1.0)]


def _gaussian_points(n, seed):
    return list(make_two_gaussians(n, seed=seed).points)


def _rbf_config(n, cost_c=0.01, gabp=TIGHT, **kw):
    return TrainConfig(kernel=KernelSpec.rbf(1.0, default_bias_constant(n)), cost_C=cost_c, gabp=gabp, **kw)


def _loaded_oracle(points, cfg):
    D = svm.apply_diagonal_loading(svm.build_dual_matrix(points, cfg.kernel), cfg)
    return D, direct_solve(D, np.ones(D.order))


# -------------------------
# build_dual_matrix
# -------------------------
def test_dual_matrix_applies_label_signs():
    pts = [SamplePoint([1.0, 0.0], 1.0), SamplePoint([0.5, math.sqrt(0.75)], -1.0)]
    D = svm.build_dual_matrix(pts, KernelSpec.linear())
    np.testing.assert_allclose(D.array, [[1.0, -0.5], [-0.5, 1.0]], atol=1e-15)


def test_dual_matrix_equals_kernel_when_all_labels_positive(rng):
    X = rng.standard_normal((6, 3))
    pts = [SamplePoint(x, 1.0) for x in X]
    spec = KernelSpec.rbf(0.5, 0.1)
    np.testing.assert_array_equal(svm.build_dual_matrix(pts, spec).array, assemble_kernel_rows(spec, X, range(0, 6)))


def test_dual_matrix_matches_brute_force(rng):
    X = rng.standard_normal((3, 4))
    y = np.array([1.0, -1.0, -1.0])
    D = svm.build_dual_matrix([SamplePoint(x, t) for x, t in zip(X, y)], KernelSpec.linear())
    for i in range(3):
        for j in range(3):
            assert D.get(i, j) == pytest.approx(y[i] * y[j] * float(X[i] @ X[j]), abs=1e-12)


def test_dual_matrix_rejects_bad_labels():
    with pytest.raises(InvalidLabelError):
        svm.build_dual_matrix([SamplePoint([1.0], 1.0), SamplePoint([2.0], 0.5)], KernelSpec.linear())
    with pytest.raises(InvalidLabelError):
        svm.build_dual_matrix([SamplePoint([1.0])], KernelSpec.linear())


# -------------------------
# apply_diagonal_loading
# -------------------------
def test_one_over_c_loading_on_identity():
    D = svm.apply_diagonal_loading(SymmetricMatrix(np.eye(3)), TrainConfig(KernelSpec.linear(), cost_C=1.0))
    np.testing.assert_array_equal(D.array, 2.0 * np.eye(3))


def test_enforce_dominance_makes_matrix_dominant():
    D = SymmetricMatrix.from_rows([[1.0, 2.0], [2.0, 1.0]])
    cfg = TrainConfig(KernelSpec.linear(), cost_C=10.0, loading_mode=LoadingMode.ENFORCE_DOMINANCE)
    loaded = svm.apply_diagonal_loading(D, cfg)
    assert np.all(np.diag(loaded.array) >= 2.0 + 1e-6 - 1e-15)
    assert loaded.get(0, 1) == 2.0
    assert diagnose_convergence(loaded).is_diagonally_dominant


def test_enforce_dominance_on_random_dual_matrices(rng):
    for _ in range(10):
        X = rng.standard_normal((25, 3))
        pts = [SamplePoint(x, float(rng.choice([-1.0, 1.0]))) for x in X]
        cfg = TrainConfig(KernelSpec.polynomial(2, 1.0), cost_C=100.0, loading_mode=LoadingMode.ENFORCE_DOMINANCE)
        loaded = svm.apply_diagonal_loading(svm.build_dual_matrix(pts, cfg.kernel), cfg)
        assert diagnose_convergence(loaded).is_diagonally_dominant


def test_enforce_dominance_survives_large_linear_kernels(rng):
    # 特徴量 ~1e4 の線形カーネルでは行和が ~1e10 になり δ=1e-6 は丸めで消える
    for _ in range(20):
        X = rng.uniform(1e4, 2e4, size=(60, 3))
        pts = [SamplePoint(x, float(rng.choice([-1.0, 1.0]))) for x in X]
        cfg = TrainConfig(KernelSpec.linear(), cost_C=1.0, loading_mode=LoadingMode.ENFORCE_DOMINANCE)
        D = svm.build_dual_matrix(pts, cfg.kernel)
        loaded = svm.apply_diagonal_loading(D, cfg)
        d = diagnose_convergence(loaded)
        assert d.is_diagonally_dominant
        assert d.dominance_margin > 0
        off = ~np.eye(60, dtype=bool)
        np.testing.assert_array_equal(loaded.array[off], D.array[off])


def test_one_over_c_shifts_trace_by_n_over_c():
    pts = _gaussian_points(30, seed=4)
    D = svm.build_dual_matrix(pts, KernelSpec.rbf(1.0))
    loaded = svm.apply_diagonal_loading(D, TrainConfig(KernelSpec.rbf(1.0), cost_C=0.25))
    # RBF の対角は厳密に 1、1/C = 4 も厳密なので trace の差も厳密に一致する
    assert np.trace(loaded.array) - np.trace(D.array) == 30 / 0.25
    off = ~np.eye(30, dtype=bool)
    np.testing.assert_array_equal(loaded.array[off], D.array[off])


def test_huge_cost_leaves_matrix_unchanged():
    pts = _gaussian_points(12, seed=5)
    D = svm.build_dual_matrix(pts, KernelSpec.rbf(1.0))
    loaded = svm.apply_diagonal_loading(D, TrainConfig(KernelSpec.rbf(1.0), cost_C=1e12))
    np.testing.assert_allclose(loaded.array, D.array, rtol=0, atol=1e-10)


# -------------------------
# train / predict
# -------------------------
def test_train_two_orthogonal_points():
    cfg = TrainConfig(KernelSpec.linear(), cost_C=1.0)
    model = svm.train(_two_points(), cfg)
    np.testing.assert_allclose(model.weights, [0.5, 0.5], atol=1e-12)
    assert model.solution.converged
    assert model.support_indices == (0, 1)

    D, h = _loaded_oracle(_two_points(), cfg)
    np.testing.assert_array_equal(D.array, 2.0 * np.eye(2))
    np.testing.assert_allclose(model.weights, h, atol=1e-8)


def test_predict_two_point_model():
    model = svm.train(_two_points(), TrainConfig(KernelSpec.linear(), cost_C=1.0))
    report = svm.predict(model, [SamplePoint([1.0, 0.0])])
    assert report.decision_values[0] == pytest.approx(0.5, abs=1e-12)
    assert report.labels == (1,)
    assert report.error_rate is None


def _single_point_model():
    sol = GabpSolution(means=[1.0], precisions=[1.0], iterations_used=1, converged=True, final_delta=0.0)
    return TrainedModel(
        weights=[1.0],
        support_indices=(0,),
        training_features=[[0.3, -0.7]],
        training_labels=[1.0],
        kernel=KernelSpec.rbf(2.0),
        solution=sol,
        diagnosis=ConvergenceDiagnosis(0.0, True, 1.0),
    )


def test_predict_single_training_point():
    report = svm.predict(_single_point_model(), [SamplePoint([0.3, -0.7], 1.0)])
    assert report.decision_values[0] == 1.0
    assert report.labels == (1,)
    assert report.error_rate == 0.0


def test_zero_decision_value_is_labelled_positive():
    sol = GabpSolution(means=[0.5, 0.5], precisions=[2.0, 2.0], iterations_used=1, converged=True, final_delta=0.0)
    model = TrainedModel(
        weights=[0.5, 0.5],
        support_indices=(0, 1),
        training_features=[[1.0, 0.0], [0.0, 1.0]],
        training_labels=[1.0, -1.0],
        kernel=KernelSpec.linear(),
        solution=sol,
        diagnosis=ConvergenceDiagnosis(0.0, True, 2.0),
    )
    report = svm.predict(model, [SamplePoint([1.0, 1.0])])
    assert report.decision_values[0] == 0.0
    assert report.labels == (1,)


def test_predict_rejects_wrong_dimension():
    with pytest.raises(DimensionMismatchError):
        svm.predict(_single_point_model(), [SamplePoint([1.0, 2.0, 3.0])])


def test_train_needs_two_points():
    with pytest.raises(ValueError):
        svm.train([SamplePoint([1.0], 1.0)], TrainConfig(KernelSpec.linear()))


def test_train_matches_direct_solve_of_loaded_system():
    pts = _gaussian_points(60, seed=6)
    cfg = _rbf_config(60)
    model = svm.train(pts, cfg)
    _, h = _loaded_oracle(pts, cfg)
    assert float(np.max(np.abs(model.weights - h))) <= 1e-6 * max(1.0, float(np.max(np.abs(h))))


@pytest.mark.parametrize("schedule_variant", [("synchronous", "broadcast"), ("asynchronous_sweep", "edge")])
def test_train_with_other_gabp_variants(schedule_variant):
    schedule, variant = schedule_variant
    settings = GabpSettings(epsilon=1e-10, schedule=Schedule(schedule), variant=Variant(variant))
    pts = _gaussian_points(40, seed=7)
    cfg = _rbf_config(40, gabp=settings)
    _, h = _loaded_oracle(pts, cfg)
    np.testing.assert_allclose(svm.train(pts, cfg).weights, h, atol=1e-6)


def test_not_converged_training_raises_with_diagnostics():
    pts = _gaussian_points(30, seed=8)
    cfg = _rbf_config(30, gabp=GabpSettings(epsilon=1e-14, max_iters=1))
    with pytest.raises(GabpNotConvergedError) as ei:
        svm.train(pts, cfg)
    assert ei.value.solution is not None
    assert ei.value.solution.iterations_used == 1
    assert ei.value.diagnosis is not None


def test_sv_threshold_zero_keeps_every_nonzero_weight():
    pts = _gaussian_points(20, seed=9)
    model = svm.train(pts, _rbf_config(20, sv_threshold=0.0))
    assert model.support_indices == tuple(int(i) for i in np.flatnonzero(model.weights != 0))
    assert model.sv_threshold == 0.0


def test_default_threshold_is_relative_to_largest_weight():
    model = svm.train(_gaussian_points(20, seed=9), _rbf_config(20))
    assert model.sv_threshold == pytest.approx(1e-5 * float(np.max(np.abs(model.weights))))


def test_support_only_prediction_uses_thresholded_set():
    pts = _gaussian_points(20, seed=10)
    model = svm.train(pts, _rbf_config(20, sv_threshold=1e9))
    assert model.support_indices == ()
    report = svm.predict(model, pts[:3], support_only=True)
    np.testing.assert_array_equal(report.decision_values, np.zeros(3))
    assert report.labels == (1, 1, 1)


def test_flipping_labels_negates_decision_values():
    pts = _gaussian_points(40, seed=11)
    flipped = [SamplePoint(p.features, -p.label) for p in pts]
    cfg = _rbf_config(40)
    np.testing.assert_array_equal(
        svm.build_dual_matrix(pts, cfg.kernel).array, svm.build_dual_matrix(flipped, cfg.kernel).array
    )
    queries = _gaussian_points(15, seed=12)
    a = svm.predict(svm.train(pts, cfg), queries).decision_values
    b = svm.predict(svm.train(flipped, cfg), queries).decision_values
    np.testing.assert_allclose(b, -a, rtol=0, atol=1e-12)


def test_permuting_training_points_permutes_weights(rng):
    pts = _gaussian_points(40, seed=13)
    perm = rng.permutation(40)
    cfg = _rbf_config(40)
    model = svm.train(pts, cfg)
    permuted = svm.train([pts[i] for i in perm], cfg)
    np.testing.assert_allclose(permuted.weights, model.weights[perm], rtol=0, atol=1e-8)
    queries = _gaussian_points(10, seed=14)
    np.testing.assert_allclose(
        svm.predict(permuted, queries).decision_values,
        svm.predict(model, queries).decision_values,
        rtol=0,
        atol=1e-8,
    )


def test_synthetic_two_gaussians_error_rate():
    data = make_two_gaussians(300, seed=3)
    train_set, test_set = train_test_split(data, 1.0 / 3.0, seed=3)
    assert (len(train_set), len(test_set)) == (200, 100)
    model = svm.train(train_set.points, _rbf_config(len(train_set), gabp=GabpSettings()))
    assert evaluate(model, test_set).error_rate <= 0.05


# -------------------------
# Kernel ridge regression
# -------------------------
def test_krr_single_point():
    alpha = svm.krr_closed_form([SamplePoint([0.0], 1.0)], 1.0, KernelSpec.rbf(1.0))
    np.testing.assert_allclose(alpha, [1.0], atol=1e-12)


def test_krr_large_lambda_tends_to_twice_targets(rng):
    X = rng.standard_normal((8, 2))
    t = rng.uniform(-1.0, 1.0, 8)
    pts = [SamplePoint(x, v) for x, v in zip(X, t)]
    spec = KernelSpec.linear()
    K = assemble_kernel_rows(spec, X, range(0, 8))
    lam = 1e6 * float(np.max(np.abs(K).sum(axis=1)))
    alpha = svm.krr_closed_form(pts, lam, spec)
    np.testing.assert_allclose(alpha, 2.0 * t, rtol=0.01, atol=1e-12)


def test_krr_residual(rng):
    X = rng.standard_normal((10, 3))
    t = rng.uniform(-2.0, 2.0, 10)
    spec = KernelSpec.linear()
    lam = 0.5
    alpha = svm.krr_closed_form([SamplePoint(x, v) for x, v in zip(X, t)], lam, spec)
    K = assemble_kernel_rows(spec, X, range(0, 10))
    np.testing.assert_allclose((K + lam * np.eye(10)) @ (alpha / (2.0 * lam)), t, atol=1e-8)


def test_krr_rejects_nonpositive_lambda():
    with pytest.raises(ValueError):
        svm.krr_closed_form([SamplePoint([0.0], 1.0)], 0.0, KernelSpec.linear())


def test_krr_gabp_fit_matches_closed_form(rng):
    X = rng.uniform(0.0, 10.0, (15, 2))
    t = rng.uniform(-1.0, 1.0, 15)
    pts = [SamplePoint(x, v) for x, v in zip(X, t)]
    # bias 0.5 keeps every |K_ij| >= 0.25 so the messages stay bounded
    spec = KernelSpec.rbf(1.0, 0.5)
    closed = svm.krr_fit(pts, 10.0, spec)
    iterative = svm.krr_fit(pts, 10.0, spec, GabpSettings(epsilon=1e-12))
    assert closed.solution is None
    assert iterative.solution is not None and iterative.solution.converged
    np.testing.assert_allclose(iterative.alpha, closed.alpha, atol=1e-8)
    queries = rng.uniform(0.0, 10.0, (5, 2))
    np.testing.assert_allclose(svm.krr_predict(iterative, queries), svm.krr_predict(closed, queries), atol=1e-8)

