# core/svm.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

import config

from . import gabp
from .errors import DimensionMismatchError, GabpNotConvergedError, InvalidLabelError
from .kernels import assemble_kernel_rows, kernel_block
from .models import (
    ConvergenceDiagnosis,
    GabpSettings,
    GabpSolution,
    KernelSpec,
    LoadingMode,
    PredictionReport,
    SamplePoint,
    TrainConfig,
    TrainedModel,
    Vector,
    points_to_arrays,
)
from .numerics import SymmetricMatrix, diagnose_convergence, direct_solve, dominance_margins, offdiagonal_abs_sums

logger = logging.getLogger("gabp_svm.core.svm")


def labelled_arrays(points: Sequence[SamplePoint], min_points: int = 1) -> tuple[np.ndarray, np.ndarray]:
    pts = list(points)
    if len(pts) < min_points:
        raise ValueError(f"need at least {min_points} labelled points, got {len(pts)}")
    X, y = points_to_arrays(pts)
    if y is None:
        raise InvalidLabelError("every training point needs a label in {-1, +1}")
    bad = np.flatnonzero((y != 1.0) & (y != -1.0))
    if bad.size:
        raise InvalidLabelError(f"label of point {int(bad[0])} is {y[bad[0]]!r}, expected -1 or +1")
    return X, y


# -------------------------
# Dual matrix + loading (row-block form so workers can build their own rows)
# -------------------------
def dual_rows(X: np.ndarray, y: np.ndarray, kernel: KernelSpec, row_range: range) -> np.ndarray:
    """D_ij = y_i y_j K(x_i, x_j) の行ブロック"""
    K = assemble_kernel_rows(kernel, X, row_range)
    return (y[row_range.start:row_range.stop, None] * K) * y[None, :]


def load_rows(rows: np.ndarray, start: int, cost_C: float, mode: LoadingMode) -> np.ndarray:
    """
    行ブロック rows（全体の行 start..）の対角に重みを足す。非対角は触らない。
    - ONE_OVER_C:        D'_ii = D_ii + 1/C
    - ENFORCE_DOMINANCE: D'_ii = D_ii + max(1/C, Σ_{j≠i}|D_ij| − D_ii + δ)
      足した結果が丸めで Σ_{j≠i}|D_ij| 以下に落ちた行は、その和の 1 ulp 上まで引き上げる。
    """
    out = np.array(rows, dtype=np.float64)
    idx = np.arange(out.shape[0])
    cols = start + idx
    inv_c = 1.0 / cost_C
    if mode == LoadingMode.ENFORCE_DOMINANCE:
        diag = out[idx, cols]
        off = offdiagonal_abs_sums(out, start)
        loaded = diag + np.maximum(inv_c, off - diag + config.DOMINANCE_DELTA)
        out[idx, cols] = np.maximum(loaded, np.nextafter(off, np.inf))
    else:
        out[idx, cols] = out[idx, cols] + inv_c
    return out


def build_dual_matrix(points: Sequence[SamplePoint], kernel: KernelSpec) -> SymmetricMatrix:
    X, y = labelled_arrays(points)
    return SymmetricMatrix(dual_rows(X, y, kernel, range(0, X.shape[0])))


def apply_diagonal_loading(D: SymmetricMatrix, train_config: TrainConfig) -> SymmetricMatrix:
    loaded = load_rows(D.array, 0, train_config.cost_C, train_config.loading_mode)
    if train_config.loading_mode == LoadingMode.ENFORCE_DOMINANCE:
        margin = float(dominance_margins(loaded, 0).min())
        logger.debug("enforce_dominance: min margin after loading=%.3e", margin)
    return SymmetricMatrix(loaded)


# -------------------------
# Train / predict
# -------------------------
def support_threshold(weights: np.ndarray, sv_threshold: Optional[float]) -> float:
    if sv_threshold is not None:
        return float(sv_threshold)
    if weights.size == 0:
        return 0.0
    return config.SV_THRESHOLD_RELATIVE * float(np.max(np.abs(weights)))


def finish_training(
    X: np.ndarray,
    y: np.ndarray,
    train_config: TrainConfig,
    solution: GabpSolution,
    diagnosis: ConvergenceDiagnosis,
) -> TrainedModel:
    """solve 後の共通処理（単一プロセス / 分散の両方から呼ぶ）"""
    if not solution.converged:
        raise GabpNotConvergedError(
            f"GaBP did not converge in {solution.iterations_used} iterations "
            f"(final delta {solution.final_delta:.3e}, epsilon {train_config.gabp.epsilon:g}; "
            f"dominant={diagnosis.is_diagonally_dominant}, rho~{diagnosis.spectral_radius_estimate:.4g})",
            solution=solution,
            diagnosis=diagnosis,
        )
    h = np.asarray(solution.means, dtype=np.float64)
    threshold = support_threshold(h, train_config.sv_threshold)
    support = np.flatnonzero(np.abs(h) > threshold)
    logger.info(
        "train: n=%d support=%d threshold=%.3e iterations=%d",
        h.size, support.size, threshold, solution.iterations_used,
    )
    return TrainedModel(
        weights=h,
        support_indices=tuple(int(i) for i in support),
        training_features=X,
        training_labels=y,
        kernel=train_config.kernel,
        solution=solution,
        diagnosis=diagnosis,
        cost_C=train_config.cost_C,
        loading_mode=train_config.loading_mode,
        sv_threshold=threshold,
    )


def train(points: Sequence[SamplePoint], train_config: TrainConfig, on_sweep: Optional[gabp.SweepHook] = None) -> TrainedModel:
    """
    (D + loading)·h = 1 を GaBP で解く。box 制約 / Σ h_i y_i = 0 は課さない。
    """
    X, y = labelled_arrays(points, min_points=2)
    D = SymmetricMatrix(dual_rows(X, y, train_config.kernel, range(0, X.shape[0])))
    loaded = apply_diagonal_loading(D, train_config)
    diagnosis = diagnose_convergence(loaded, config.DEFAULT_POWER_ITERS)
    if not diagnosis.is_diagonally_dominant:
        logger.warning(
            "train: loaded dual matrix is not diagonally dominant (margin=%.3e); GaBP may not converge",
            diagnosis.dominance_margin,
        )
    problem = gabp.GabpProblem.from_settings(loaded, np.ones(X.shape[0]), train_config.gabp)
    solution = gabp.solve(problem, on_sweep)
    return finish_training(X, y, train_config, solution, diagnosis)


def decision_values(model: TrainedModel, queries: np.ndarray, support_only: bool = False) -> np.ndarray:
    Q = np.asarray(queries, dtype=np.float64)
    if Q.ndim != 2 or (Q.shape[0] and Q.shape[1] != model.feature_dim):
        raise DimensionMismatchError(
            f"query feature dimension {Q.shape[-1] if Q.ndim else '?'} != training dimension {model.feature_dim}"
        )
    if Q.shape[0] == 0:
        return np.zeros(0)
    idx = np.array(model.support_indices, dtype=np.intp) if support_only else np.arange(model.n_train)
    coef = model.weights[idx] * model.training_labels[idx]
    K = kernel_block(model.kernel, Q, model.training_features[idx])
    return K @ coef


def predict(model: TrainedModel, queries: Sequence[SamplePoint], support_only: bool = False) -> PredictionReport:
    """sign(Σ h_i y_i K(x_i, x))。bias b は kernel の λ² オフセットに含まれている。"""
    pts = list(queries)
    Q, truth = points_to_arrays(pts) if pts else (np.zeros((0, model.feature_dim)), None)
    dv = decision_values(model, Q, support_only=support_only)
    labels = np.where(dv >= 0, 1, -1)
    error_rate = None
    if truth is not None and truth.size:
        error_rate = float(np.mean(labels != truth))
    return PredictionReport(
        decision_values=dv,
        labels=tuple(int(v) for v in labels),
        error_rate=error_rate,
    )


# -------------------------
# Kernel ridge regression
# -------------------------
@dataclass(frozen=True)
class KrrModel:
    alpha: Vector
    lambda_: float
    training_features: np.ndarray
    kernel: KernelSpec
    solution: Optional[GabpSolution] = None


def _regularized_kernel(points: Sequence[SamplePoint], lambda_: float, kernel: KernelSpec) -> tuple[np.ndarray, np.ndarray, SymmetricMatrix]:
    if not (lambda_ > 0):
        raise ValueError(f"lambda must be > 0, got {lambda_}")
    X, t = points_to_arrays(list(points), require_labels=True)
    K = assemble_kernel_rows(kernel, X, range(0, X.shape[0]))
    idx = np.arange(X.shape[0])
    K[idx, idx] += lambda_
    return X, t, SymmetricMatrix(K)


def krr_closed_form(points: Sequence[SamplePoint], lambda_: float, kernel: KernelSpec) -> Vector:
    """α = 2λ (K + λI)^{-1} y"""
    _, t, KI = _regularized_kernel(points, lambda_, kernel)
    return 2.0 * lambda_ * direct_solve(KI, t)


def krr_fit(
    points: Sequence[SamplePoint],
    lambda_: float,
    kernel: KernelSpec,
    settings: Optional[GabpSettings] = None,
) -> KrrModel:
    """
    settings を渡すと (K + λI)c = y を GaBP で解く（回帰モード）。None なら closed form。
    """
    X, t, KI = _regularized_kernel(points, lambda_, kernel)
    if settings is None:
        return KrrModel(alpha=2.0 * lambda_ * direct_solve(KI, t), lambda_=lambda_, training_features=X, kernel=kernel)

    solution = gabp.solve(gabp.GabpProblem.from_settings(KI, t, settings))
    if not solution.converged:
        raise GabpNotConvergedError(
            f"KRR GaBP solve did not converge in {solution.iterations_used} iterations",
            solution=solution,
            diagnosis=diagnose_convergence(KI, config.DEFAULT_POWER_ITERS),
        )
    return KrrModel(
        alpha=2.0 * lambda_ * np.asarray(solution.means),
        lambda_=lambda_,
        training_features=X,
        kernel=kernel,
        solution=solution,
    )


def krr_predict(model: KrrModel, queries: Any) -> Vector:
    """f(x) = y^T (K + λI)^{-1} k(x) = Σ_i (α_i / 2λ) K(x_i, x)"""
    Q = queries
    if not isinstance(Q, np.ndarray):
        Q = points_to_arrays(list(Q))[0]
    K = kernel_block(model.kernel, Q, model.training_features)
    return K @ (np.asarray(model.alpha) / (2.0 * model.lambda_))
