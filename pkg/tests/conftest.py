from __future__ import annotations

import numpy as np
import pytest

from core.numerics import SymmetricMatrix


def dominant_spd(rng: np.random.Generator, n: int, ratio: float = 4.0, density: float = 1.0) -> SymmetricMatrix:
    """
    対角優位な対称正定値行列。非対角は ±[0.1, 1]、対角 = ratio·(行の |非対角| 和) + 1。
    density < 1 なら非対角の一部を 0 に（edge を間引く）。
    """
    mag = rng.uniform(0.1, 1.0, (n, n))
    sign = rng.choice([-1.0, 1.0], (n, n))
    M = mag * sign
    if density < 1.0:
        M = np.where(rng.uniform(size=(n, n)) < density, M, 0.0)
    M = np.triu(M, 1)
    M = M + M.T
    np.fill_diagonal(M, ratio * np.abs(M).sum(axis=1) + 1.0)
    return SymmetricMatrix(M)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240501)


@pytest.fixture
def two_by_two() -> tuple[SymmetricMatrix, np.ndarray]:
    return SymmetricMatrix.from_rows([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0])


@pytest.fixture
def chain3() -> tuple[SymmetricMatrix, np.ndarray]:
    return SymmetricMatrix.from_rows([[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]]), np.ones(3)
