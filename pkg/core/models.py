# core/models.py
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
import numpy.typing as npt

import config

from .errors import DimensionMismatchError, NonFiniteValueError

Vector = npt.NDArray[np.float64]


def readonly(values: Any, *, ndim: int | None = None, name: str = "values") -> np.ndarray:
    """
    float64 の読み取り専用コピーを返す。NaN/Inf は構築時に拒否する。
    """
    arr = np.array(values, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatchError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError(f"{name}: NaN/Inf entries are not accepted")
    arr.setflags(write=False)
    return arr


# =========================
# Enums (flag spelling is in config.py)
# =========================
class KernelFamily(Enum):
    LINEAR = "linear"
    RBF = "rbf"
    POLYNOMIAL = "polynomial"


class Schedule(Enum):
    SYNCHRONOUS = "synchronous"
    ASYNCHRONOUS_SWEEP = "asynchronous_sweep"


class Variant(Enum):
    EDGE = "edge"              # per-edge messages
    BROADCAST = "broadcast"    # aggregated sums + subtraction


class LoadingMode(Enum):
    ONE_OVER_C = "one_over_c"
    ENFORCE_DOMINANCE = "enforce_dominance"


# =========================
# numerics
# =========================
@dataclass(frozen=True)
class ConvergenceDiagnosis:
    spectral_radius_estimate: float
    is_diagonally_dominant: bool
    dominance_margin: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# =========================
# kernels
# =========================
@dataclass(frozen=True)
class KernelSpec:
    """
    用語メモ
    - bias_constant: パターン末尾に足す定数座標 λ。全 family で λ² の加算オフセットとして効く。
    - 選択した family のパラメータだけがセットされていること（他は None）。
    """
    family: KernelFamily
    rbf_gamma: Optional[float] = None
    poly_degree: Optional[int] = None
    poly_coef0: Optional[float] = None
    bias_constant: float = 0.0

    def __post_init__(self) -> None:
        if not isinstance(self.family, KernelFamily):
            raise ValueError(f"unknown kernel family: {self.family!r}")
        if not (math.isfinite(self.bias_constant) and self.bias_constant >= 0):
            raise ValueError(f"bias_constant must be finite and >= 0, got {self.bias_constant}")

        rbf_set = self.rbf_gamma is not None
        poly_set = self.poly_degree is not None or self.poly_coef0 is not None

        if self.family == KernelFamily.RBF:
            if not rbf_set or poly_set:
                raise ValueError("rbf kernel takes rbf_gamma only")
            if not (math.isfinite(self.rbf_gamma) and self.rbf_gamma > 0):
                raise ValueError(f"rbf_gamma must be > 0, got {self.rbf_gamma}")
        elif self.family == KernelFamily.POLYNOMIAL:
            if rbf_set or self.poly_degree is None or self.poly_coef0 is None:
                raise ValueError("polynomial kernel takes poly_degree and poly_coef0 only")
            if int(self.poly_degree) != self.poly_degree or self.poly_degree < 1:
                raise ValueError(f"poly_degree must be a positive integer, got {self.poly_degree}")
            if not math.isfinite(self.poly_coef0):
                raise ValueError("poly_coef0 must be finite")
        else:
            if rbf_set or poly_set:
                raise ValueError("linear kernel takes no family parameters")

    @classmethod
    def linear(cls, bias_constant: float = 0.0) -> "KernelSpec":
        return cls(KernelFamily.LINEAR, bias_constant=bias_constant)

    @classmethod
    def rbf(cls, gamma: float, bias_constant: float = 0.0) -> "KernelSpec":
        return cls(KernelFamily.RBF, rbf_gamma=float(gamma), bias_constant=bias_constant)

    @classmethod
    def polynomial(cls, degree: int, coef0: float, bias_constant: float = 0.0) -> "KernelSpec":
        return cls(KernelFamily.POLYNOMIAL, poly_degree=int(degree), poly_coef0=float(coef0), bias_constant=bias_constant)

    def with_bias(self, bias_constant: float) -> "KernelSpec":
        return KernelSpec(
            family=self.family,
            rbf_gamma=self.rbf_gamma,
            poly_degree=self.poly_degree,
            poly_coef0=self.poly_coef0,
            bias_constant=float(bias_constant),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family.value,
            "rbf_gamma": self.rbf_gamma,
            "poly_degree": self.poly_degree,
            "poly_coef0": self.poly_coef0,
            "bias_constant": self.bias_constant,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "KernelSpec":
        return cls(
            family=KernelFamily(str(d.get("family"))),
            rbf_gamma=None if d.get("rbf_gamma") is None else float(d["rbf_gamma"]),
            poly_degree=None if d.get("poly_degree") is None else int(d["poly_degree"]),
            poly_coef0=None if d.get("poly_coef0") is None else float(d["poly_coef0"]),
            bias_constant=float(d.get("bias_constant", 0.0) or 0.0),
        )


@dataclass(frozen=True)
class SamplePoint:
    features: Vector
    label: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", readonly(self.features, ndim=1, name="features"))
        if self.label is not None:
            object.__setattr__(self, "label", float(self.label))

    @property
    def dim(self) -> int:
        return int(self.features.shape[0])


def points_to_arrays(points: "Tuple[SamplePoint, ...] | list[SamplePoint]", require_labels: bool = False) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """
    SamplePoint 列 -> (X: n×m, y: n or None)。次元が揃っていなければ DimensionMismatch。
    """
    pts = list(points)
    if not pts:
        return np.zeros((0, 0)), (np.zeros(0) if require_labels else None)
    dims = {p.dim for p in pts}
    if len(dims) != 1:
        raise DimensionMismatchError(f"sample points have mixed feature dimensions: {sorted(dims)}")
    X = np.vstack([p.features for p in pts]) if pts[0].dim > 0 else np.zeros((len(pts), 0))
    labels = [p.label for p in pts]
    if any(lab is None for lab in labels):
        if require_labels:
            raise ValueError("every sample point needs a label here")
        return X, None
    return X, np.array(labels, dtype=np.float64)


# =========================
# gabp
# =========================
@dataclass(frozen=True)
class GabpSettings:
    epsilon: float = config.DEFAULT_EPSILON
    max_iters: int = config.DEFAULT_MAX_ITERS
    schedule: Schedule = Schedule.SYNCHRONOUS
    variant: Variant = Variant.EDGE

    def __post_init__(self) -> None:
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "max_iters": self.max_iters,
            "schedule": self.schedule.value,
            "variant": self.variant.value,
        }


@dataclass(frozen=True)
class GabpSolution:
    means: Vector
    precisions: Vector
    iterations_used: int
    converged: bool
    final_delta: float

    def __post_init__(self) -> None:
        for name in ("means", "precisions"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def summary(self) -> Dict[str, Any]:
        return {
            "iterations_used": int(self.iterations_used),
            "converged": bool(self.converged),
            "final_delta": float(self.final_delta),
        }


# =========================
# svm-krr
# =========================
@dataclass(frozen=True)
class TrainConfig:
    kernel: KernelSpec
    cost_C: float = config.DEFAULT_COST_C
    gabp: GabpSettings = field(default_factory=GabpSettings)
    loading_mode: LoadingMode = LoadingMode.ONE_OVER_C
    # None -> 1e-5 * max|h|（相対しきい値）
    sv_threshold: Optional[float] = None

    def __post_init__(self) -> None:
        if not (self.cost_C > 0):
            raise ValueError(f"cost_C must be > 0, got {self.cost_C}")
        if self.sv_threshold is not None and not (self.sv_threshold >= 0):
            raise ValueError(f"sv_threshold must be >= 0, got {self.sv_threshold}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kernel": self.kernel.to_dict(),
            "cost_C": self.cost_C,
            "gabp": self.gabp.to_dict(),
            "loading_mode": self.loading_mode.value,
            "sv_threshold": self.sv_threshold,
        }


@dataclass(frozen=True)
class TrainedModel:
    """
    sign(Σ h_i y_i K(x_i, x)) の予測に必要なもの一式。構築後は immutable（配列も read-only）。
    """
    weights: Vector
    support_indices: Tuple[int, ...]
    training_features: np.ndarray
    training_labels: Vector
    kernel: KernelSpec
    solution: GabpSolution
    diagnosis: ConvergenceDiagnosis
    cost_C: float = 1.0
    loading_mode: LoadingMode = LoadingMode.ONE_OVER_C
    sv_threshold: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", readonly(self.weights, ndim=1, name="weights"))
        object.__setattr__(self, "training_features", readonly(self.training_features, ndim=2, name="training_features"))
        object.__setattr__(self, "training_labels", readonly(self.training_labels, ndim=1, name="training_labels"))
        object.__setattr__(self, "support_indices", tuple(int(i) for i in self.support_indices))
        n = self.weights.shape[0]
        if self.training_features.shape[0] != n or self.training_labels.shape[0] != n:
            raise DimensionMismatchError(
                f"weights ({n}) / features ({self.training_features.shape[0]}) / labels "
                f"({self.training_labels.shape[0]}) disagree"
            )

    @property
    def n_train(self) -> int:
        return int(self.weights.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.training_features.shape[1])

    @property
    def training_points(self) -> Tuple[SamplePoint, ...]:
        return tuple(SamplePoint(x, y) for x, y in zip(self.training_features, self.training_labels))


@dataclass(frozen=True)
class PredictionReport:
    decision_values: Vector
    labels: Tuple[int, ...]
    error_rate: Optional[float] = None


# =========================
# data-cli
# =========================
@dataclass(frozen=True)
class Dataset:
    points: Tuple[SamplePoint, ...]
    feature_dim: int
    source: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        for i, p in enumerate(self.points):
            if p.dim != self.feature_dim:
                raise DimensionMismatchError(
                    f"point {i} has dimension {p.dim}, dataset feature_dim is {self.feature_dim}"
                )

    def __len__(self) -> int:
        return len(self.points)

    @property
    def labels(self) -> Tuple[Optional[float], ...]:
        return tuple(p.label for p in self.points)


@dataclass(frozen=True)
class RunReport:
    error_rate: Optional[float]
    iterations_used: int
    converged: bool
    wall_time_seconds: float
    config: Dict[str, Any] = field(default_factory=dict)
    n_test: int = 0
    n_misclassified: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
