from __future__ import annotations

import sys

import numpy as np

from core import distributed, gabp
from core.models import GabpSettings, KernelSpec, TrainConfig, Variant
from core.numerics import SymmetricMatrix, direct_solve
from core.svm import predict, train
from dataset_repository import make_two_gaussians, train_test_split


def _fail(msg: str) -> int:
    print(msg, file=sys.stderr)
    return 1


def main() -> int:
    # tree: exact after two rounds
    W = SymmetricMatrix.from_rows([[2.0, 1.0], [1.0, 2.0]])
    sol = gabp.solve(gabp.GabpProblem(W, [3.0, 3.0], epsilon=1e-12))
    if not sol.converged:
        return _fail(f"2x2 system did not converge: {sol.summary()}")
    if np.max(np.abs(sol.means - 1.0)) > 1e-10 or np.max(np.abs(sol.precisions - 1.5)) > 1e-10:
        return _fail(f"2x2 system: means={sol.means} precisions={sol.precisions}")

    # distributed p=1 vs broadcast, p=3 vs direct solve
    rng = np.random.default_rng(7)
    M = rng.uniform(-1.0, 1.0, (12, 12))
    M = (M + M.T) / 2.0
    np.fill_diagonal(M, 0.0)
    np.fill_diagonal(M, np.abs(M).sum(axis=1) * 1.5 + 1.0)
    W = SymmetricMatrix(M)
    b = rng.uniform(-1.0, 1.0, 12)
    problem = gabp.GabpProblem(W, b, epsilon=1e-10, variant=Variant.BROADCAST)
    single = gabp.run_broadcast(problem)
    one = distributed.solve_distributed(problem, 1)
    if not np.array_equal(single.means, one.means):
        return _fail("p=1 distributed run differs from run_broadcast")
    three = distributed.solve_distributed(problem, 3)
    err = float(np.max(np.abs(three.means - direct_solve(W, b))))
    if err > 1e-6:
        return _fail(f"p=3 distributed run off by {err:.3e}")

    # SVM on separated synthetic data
    data = make_two_gaussians(120, dim=2, separation=6.0, seed=1)
    tr, te = train_test_split(data, 0.25, seed=1)
    cfg = TrainConfig(kernel=KernelSpec.rbf(1.0, 1.0 / len(tr)), cost_C=0.01, gabp=GabpSettings(epsilon=1e-8))
    model = train(tr.points, cfg)
    report = predict(model, te.points)
    if report.error_rate is None or report.error_rate > 0.05:
        return _fail(f"synthetic error rate too high: {report.error_rate}")

    print(
        "OK: gabp tree exact; distributed p=1 bitwise equal, p=3 err="
        f"{err:.2e}; svm error={report.error_rate:.3f} iterations={model.solution.iterations_used}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
