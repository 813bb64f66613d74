# core/numerics.py
from __future__ import annotations

import logging
from typing import Any, Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionMismatchError, NotPositiveDefiniteError, NotSymmetricError
from .models import ConvergenceDiagnosis, Vector, readonly

logger = logging.getLogger("gabp_svm.core.numerics")


def as_vector(values: Any, name: str = "vector") -> Vector:
    return readonly(values, ndim=1, name=name)


class SymmetricMatrix:
    """
    密な n×n 対称行列（row-major, packed triangle にはしない）。
    worker には行ブロック単位で渡すので、rows(start, stop) はコピーを返す。
    """

    __slots__ = ("_a",)

    def __init__(self, entries: Any) -> None:
        a = readonly(entries, ndim=2, name="matrix")
        n, m = a.shape
        if n != m or n < 1:
            raise DimensionMismatchError(f"matrix must be square with order >= 1, got shape {a.shape}")
        if not np.array_equal(a, a.T):
            i, j = np.argwhere(a != a.T)[0]
            raise NotSymmetricError(f"entries[{i}][{j}]={a[i, j]!r} != entries[{j}][{i}]={a[j, i]!r}")
        self._a = a

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "SymmetricMatrix":
        return cls(np.array(rows, dtype=np.float64))

    @property
    def order(self) -> int:
        return int(self._a.shape[0])

    @property
    def array(self) -> np.ndarray:
        # read-only view
        return self._a

    def get(self, i: int, j: int) -> float:
        return float(self._a[i, j])

    def diagonal(self) -> Vector:
        return self._a.diagonal().copy()

    def rows(self, start: int, stop: int) -> np.ndarray:
        if not (0 <= start <= stop <= self.order):
            raise IndexError(f"row range [{start}, {stop}) outside [0, {self.order})")
        return np.array(self._a[start:stop], dtype=np.float64)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SymmetricMatrix):
            return NotImplemented
        return np.array_equal(self._a, other._a)

    def __hash__(self) -> int:
        return hash(self._a.tobytes())

    def __repr__(self) -> str:
        return f"SymmetricMatrix(order={self.order})"


def _check_system(W: SymmetricMatrix, b: Any) -> Vector:
    bv = as_vector(b, name="b")
    if bv.shape[0] != W.order:
        raise DimensionMismatchError(f"dim(b)={bv.shape[0]} != order(W)={W.order}")
    return bv


def _cholesky(W: SymmetricMatrix) -> tuple[np.ndarray, bool]:
    try:
        return scipy.linalg.cho_factor(W.array, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"matrix of order {W.order} is not positive definite: {e}") from e


def direct_solve(W: SymmetricMatrix, b: Any) -> Vector:
    """Cholesky で W x = b を解く（GaBP の検証用 oracle）。"""
    bv = _check_system(W, b)
    factor = _cholesky(W)
    x = scipy.linalg.cho_solve(factor, bv, check_finite=False)
    return np.asarray(x, dtype=np.float64)


def marginal_precisions_oracle(W: SymmetricMatrix) -> Vector:
    """entry i = 1 / (W^{-1})_{ii}"""
    factor = _cholesky(W)
    inv = scipy.linalg.cho_solve(factor, np.eye(W.order), check_finite=False)
    return 1.0 / np.diag(inv)


def residual_inf(W: SymmetricMatrix, b: Any, x: Any) -> float:
    bv = _check_system(W, b)
    xv = as_vector(x, name="x")
    if xv.shape[0] != W.order:
        raise DimensionMismatchError(f"dim(x)={xv.shape[0]} != order(W)={W.order}")
    return float(np.max(np.abs(W.array @ xv - bv)))


# -------------------------
# Convergence diagnostics
# -------------------------
def offdiagonal_abs_sums(rows: np.ndarray, start: int) -> Vector:
    """
    行ブロック rows（全体の行 start.. に対応）の Σ_{j≠i} |W_ij|。
    j = 0, 1, ... の順に逐次加算する（対角は 0 として足す）。
    pairwise 和ではないので、素直な行ごとの再計算と丸めまで一致する。
    """
    rows = np.asarray(rows, dtype=np.float64)
    d = rows.shape[0]
    if d == 0 or rows.shape[1] == 0:
        return np.zeros(d)
    idx = np.arange(d)
    masked = np.abs(rows)
    masked[idx, start + idx] = 0.0
    return np.cumsum(masked, axis=1)[:, -1]


def dominance_margins(rows: np.ndarray, start: int) -> Vector:
    """
    行ブロック rows について |W_ii| - Σ_{j≠i} |W_ij| を返す。
    worker が自分の行だけで計算できるように行ブロック単位にしている。
    """
    rows = np.asarray(rows, dtype=np.float64)
    idx = np.arange(rows.shape[0])
    diag = np.abs(rows[idx, start + idx])
    return diag - offdiagonal_abs_sums(rows, start)


def abs_iteration_rows(rows: np.ndarray, start: int) -> np.ndarray:
    """|I - W| の行ブロック。"""
    m = -np.asarray(rows, dtype=np.float64)
    idx = np.arange(m.shape[0])
    m[idx, start + idx] += 1.0
    return np.abs(m)


def power_iteration(matvec, n: int, power_iters: int) -> float:
    """
    非負行列向け power iteration。初期ベクトルは all-ones、毎ステップ正規化。
    ゼロ行列に当たったら 0 を返す。
    """
    if power_iters < 1:
        raise ValueError(f"power_iters must be >= 1, got {power_iters}")
    x = np.ones(n) / np.sqrt(n)
    estimate = 0.0
    for _ in range(int(power_iters)):
        y = matvec(x)
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0
        estimate = norm
        x = y / norm
    return estimate


def diagnose_convergence(W: SymmetricMatrix, power_iters: int = 100) -> ConvergenceDiagnosis:
    margins = dominance_margins(W.array, 0)
    margin = float(margins.min())
    M = abs_iteration_rows(W.array, 0)
    rho = power_iteration(lambda v: M @ v, W.order, power_iters)
    diag = ConvergenceDiagnosis(
        spectral_radius_estimate=rho,
        is_diagonally_dominant=margin > 0,
        dominance_margin=margin,
    )
    logger.debug("diagnose_convergence: order=%d rho=%.6g margin=%.6g", W.order, rho, margin)
    return diag
