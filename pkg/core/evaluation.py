# core/evaluation.py
from __future__ import annotations

import logging
from typing import Any, Dict, Optional

import numpy as np

from .errors import DimensionMismatchError
from .models import Dataset, RunReport, TrainedModel, points_to_arrays
from .svm import decision_values

logger = logging.getLogger("gabp_svm.core.evaluation")


def evaluate(
    model: TrainedModel,
    test: Dataset,
    config_echo: Optional[Dict[str, Any]] = None,
    wall_time_seconds: float = 0.0,
    support_only: bool = False,
) -> RunReport:
    """
    error_rate = 誤分類数 / テスト点数。空のテストセットなら error_rate は None。
    """
    if len(test) and test.feature_dim != model.feature_dim:
        raise DimensionMismatchError(
            f"test feature_dim {test.feature_dim} != model feature_dim {model.feature_dim}"
        )
    error_rate: Optional[float] = None
    wrong = 0
    if len(test):
        X, y = points_to_arrays(test.points, require_labels=True)
        dv = decision_values(model, X, support_only=support_only)
        predicted = np.where(dv >= 0, 1.0, -1.0)
        wrong = int(np.count_nonzero(predicted != y))
        error_rate = wrong / len(test)

    echo = dict(config_echo or {})
    echo.setdefault("diagnosis", model.diagnosis.to_dict())
    echo.setdefault("final_delta", float(model.solution.final_delta))
    echo.setdefault("n_support", len(model.support_indices))

    logger.info("evaluate: n_test=%d misclassified=%d error_rate=%s", len(test), wrong, error_rate)
    return RunReport(
        error_rate=error_rate,
        iterations_used=int(model.solution.iterations_used),
        converged=bool(model.solution.converged),
        wall_time_seconds=float(wall_time_seconds),
        config=echo,
        n_test=len(test),
        n_misclassified=wrong,
    )
