# config.py
from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

"""
gabp-svm 設定

用語メモ（注釈）
- epsilon: 1 sweep でのメッセージ (P と μ) の最大絶対変化量がこれ以下なら収束
- loading: 双対行列 D の対角に足す重み（one_over_c = 1/C、enforce_dominance = 対角優位になるまで）
- bias constant λ: パターン末尾に足す定数座標。カーネルには λ² のオフセットとして効く（auto = 1/N）
- workers: 行分割ランタイムの worker 数。環境変数 GABP_WORKERS が既定、--workers が優先
"""

BASE_DIR = Path(__file__).resolve().parent
DATA_DIR = (BASE_DIR / "data").resolve()

# =========================
# Environment
# =========================
ENV_LOG_LEVEL = "GABP_LOG_LEVEL"
ENV_WORKERS = "GABP_WORKERS"

# =========================
# GaBP
# =========================
DEFAULT_EPSILON = 1e-6
DEFAULT_MAX_ITERS = 1000
DEFAULT_POWER_ITERS = 100

# =========================
# SVM / kernels
# =========================
DEFAULT_COST_C = 1.0
DEFAULT_RBF_GAMMA = 1.0
DEFAULT_POLY_DEGREE = 3
DEFAULT_POLY_COEF0 = 1.0
DOMINANCE_DELTA = 1e-6
SV_THRESHOLD_RELATIVE = 1e-5

# =========================
# Data
# =========================
DEFAULT_TEST_FRACTION = 0.2
DEFAULT_SEED = 0

MODEL_SCHEMA_VERSION = 1

# =========================
# Flag spellings
# =========================
KERNEL_FLAGS = {
    "linear": "linear",
    "rbf": "rbf",
    "poly": "polynomial",
    "polynomial": "polynomial",
}

LOADING_FLAGS = {
    "one-over-c": "one_over_c",
    "enforce-dominance": "enforce_dominance",
}

SCHEDULE_FLAGS = {
    "sync": "synchronous",
    "async": "asynchronous_sweep",
}

VARIANT_FLAGS = {
    "edge": "edge",
    "broadcast": "broadcast",
}

# =========================
# UCI datasets the classifier was benchmarked on
# name -> (dimension, train, test or None, reference error %)
# =========================
DATASET_CATALOG: dict[str, tuple[int, int, Optional[int], float]] = {
    "isolet":     (617, 6238, 1559, 7.06),
    "letter":     (16, 20000, None, 2.06),
    "mushroom":   (117, 8124, None, 0.04),
    "nursery":    (25, 12960, None, 4.16),
    "pageblocks": (10, 5473, None, 3.86),
    "pendigits":  (16, 7494, 3498, 1.66),
    "spambase":   (57, 4601, None, 16.3),
}

# 受け入れ確認で使う許容誤差（%）。train/test の分け方が不明なので広めに取る
REPRODUCTION_TOLERANCE = {
    "pageblocks": 6.0,
    "spambase": 22.0,
}


def _flag(table: dict[str, str], value: str, what: str) -> str:
    key = str(value or "").strip().lower()
    if key not in table:
        raise ValueError(f"unknown {what}: {value!r} (choose from {', '.join(sorted(table))})")
    return table[key]


def kernel_family_name(flag: str) -> str:
    return _flag(KERNEL_FLAGS, flag, "kernel")


def loading_mode_name(flag: str) -> str:
    return _flag(LOADING_FLAGS, flag, "loading mode")


def schedule_name(flag: str) -> str:
    return _flag(SCHEDULE_FLAGS, flag, "schedule")


def variant_name(flag: str) -> str:
    return _flag(VARIANT_FLAGS, flag, "variant")


def default_workers() -> Optional[int]:
    raw = os.getenv(ENV_WORKERS, "").strip()
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_WORKERS} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{ENV_WORKERS} must be a positive integer, got {raw!r}")
    return value


def catalog_reference(name: str) -> Optional[tuple[int, int, Optional[int], float]]:
    return DATASET_CATALOG.get(str(name or "").strip().lower().replace(" ", "").replace("_", ""))
