import numpy as np
import pytest

from core.errors import DimensionMismatchError
from core.evaluation import evaluate
from core.models import ConvergenceDiagnosis, Dataset, GabpSolution, KernelSpec, SamplePoint, TrainedModel


def _sign_of_first_feature_model():
    # linear kernel, one training point at e_1 with h = 1: decision value = x_1
    sol = GabpSolution(means=[1.0], precisions=[1.0], iterations_used=3, converged=True, final_delta=1e-9)
    return TrainedModel(
        weights=[1.0],
        support_indices=(0,),
        training_features=[[1.0, 0.0]],
        training_labels=[1.0],
        kernel=KernelSpec.linear(),
        solution=sol,
        diagnosis=ConvergenceDiagnosis(0.0, True, 1.0),
    )


def _points(xs, labels):
    return Dataset(tuple(SamplePoint([x, 0.5], y) for x, y in zip(xs, labels)), 2)


def test_perfect_model_has_zero_error():
    run = evaluate(_sign_of_first_feature_model(), _points([1.0, -2.0, 0.5, -0.1], [1, -1, 1, -1]))
    assert run.error_rate == 0.0
    assert run.n_misclassified == 0
    assert run.converged
    assert run.iterations_used == 3


def test_two_wrong_out_of_eight():
    xs = [1.0, 2.0, 3.0, 4.0, -1.0, -2.0, -3.0, -4.0]
    labels = [1, 1, 1, -1, -1, -1, -1, 1]
    run = evaluate(_sign_of_first_feature_model(), _points(xs, labels))
    assert run.error_rate == 0.25
    assert (run.n_test, run.n_misclassified) == (8, 2)


def test_evaluation_is_permutation_invariant(rng):
    xs = rng.standard_normal(30)
    labels = rng.choice([-1.0, 1.0], 30)
    perm = rng.permutation(30)
    model = _sign_of_first_feature_model()
    a = evaluate(model, _points(xs, labels))
    b = evaluate(model, _points(xs[perm], labels[perm]))
    assert a.error_rate == b.error_rate


def test_report_echoes_config_and_diagnostics():
    run = evaluate(_sign_of_first_feature_model(), _points([1.0], [1]), {"seed": 7}, wall_time_seconds=0.5)
    d = run.to_dict()
    assert d["config"]["seed"] == 7
    assert d["config"]["diagnosis"] == {"spectral_radius_estimate": 0.0, "is_diagonally_dominant": True, "dominance_margin": 1.0}
    assert d["config"]["n_support"] == 1
    assert d["wall_time_seconds"] == 0.5


def test_empty_test_set_has_no_error_rate():
    run = evaluate(_sign_of_first_feature_model(), Dataset((), 2))
    assert run.error_rate is None
    assert run.n_test == 0


def test_dimension_mismatch():
    ds = Dataset((SamplePoint([1.0, 2.0, 3.0], 1.0),), 3)
    with pytest.raises(DimensionMismatchError):
        evaluate(_sign_of_first_feature_model(), ds)


def test_unlabelled_test_points_are_rejected():
    with pytest.raises(ValueError):
        evaluate(_sign_of_first_feature_model(), Dataset((SamplePoint([1.0, 0.0]),), 2))
    assert np.isfinite(evaluate(_sign_of_first_feature_model(), _points([2.0], [1])).error_rate)
