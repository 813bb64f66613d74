# core/kernels.py
from __future__ import annotations

import logging
from typing import Any, Sequence

import numpy as np

from .errors import DimensionMismatchError
from .models import KernelFamily, KernelSpec, SamplePoint, points_to_arrays

logger = logging.getLogger("gabp_svm.core.kernels")

# 3-d 中間配列 (rows × n × m) の要素数上限。これを超えないよう行をチャンクに分ける。
_CHUNK_ELEMENTS = 1 << 22


def _pair_values(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """
    A (r×m) と B (n×m) の全ペアのカーネル値 (r×n)。

    各要素は「座標ごとの積/差の二乗を最後の軸で sum」で計算する。
    a·b と b·a は同じ順序の同じ和になるので、組み立てた行列は厳密に対称になる
    （BLAS の gemm は行/列で丸めが変わり得るので使わない）。
    """
    if spec.family == KernelFamily.RBF:
        sq = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1)
        base = np.exp(-spec.rbf_gamma * sq)
    else:
        dot = (A[:, None, :] * B[None, :, :]).sum(axis=-1)
        if spec.family == KernelFamily.POLYNOMIAL:
            base = (dot + spec.poly_coef0) ** int(spec.poly_degree)
        else:
            base = dot
    return base + spec.bias_constant ** 2


def kernel_block(spec: KernelSpec, A: Any, B: Any) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise DimensionMismatchError(f"kernel_block expects 2-d arrays, got {A.shape} and {B.shape}")
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatchError(f"feature dimensions differ: {A.shape[1]} vs {B.shape[1]}")

    r, n, m = A.shape[0], B.shape[0], max(A.shape[1], 1)
    out = np.empty((r, n), dtype=np.float64)
    step = max(1, _CHUNK_ELEMENTS // max(1, n * m))
    for s in range(0, r, step):
        out[s:s + step] = _pair_values(spec, A[s:s + step], B)
    return out


def kernel_eval(spec: KernelSpec, a: Any, b: Any) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionMismatchError(f"kernel_eval: dim(a)={a.shape} != dim(b)={b.shape}")
    return float(_pair_values(spec, a[None, :], b[None, :])[0, 0])


def assemble_kernel_rows(spec: KernelSpec, all_points: Sequence[SamplePoint] | np.ndarray, row_range: range) -> np.ndarray:
    """
    B[i][j] = K(x_{start+i}, x_j), j は全 n 点。worker は自分の担当行だけを作る。
    """
    X = all_points if isinstance(all_points, np.ndarray) else points_to_arrays(all_points)[0]
    n = X.shape[0]
    start, stop = row_range.start, row_range.stop
    if row_range.step != 1 or not (0 <= start <= stop <= n):
        raise IndexError(f"row range {row_range} outside [0, {n})")
    logger.debug("assemble_kernel_rows: family=%s rows=[%d,%d) n=%d", spec.family.value, start, stop, n)
    return kernel_block(spec, X[start:stop], X)


def default_bias_constant(n_train: int) -> float:
    """λ = 1/N（オフセットとしては 1/N²）。"""
    if n_train < 1:
        raise ValueError(f"n_train must be >= 1, got {n_train}")
    return 1.0 / n_train
