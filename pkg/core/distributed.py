# core/distributed.py
from __future__ import annotations

import abc
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

import config

from .errors import DimensionMismatchError, InvalidPartitionError, ZeroPivotError
from .gabp import GabpProblem, message_delta, node_fixes
from .models import (
    ConvergenceDiagnosis,
    GabpSettings,
    GabpSolution,
    SamplePoint,
    Schedule,
    TrainConfig,
    TrainedModel,
    Vector,
)
from .numerics import SymmetricMatrix, abs_iteration_rows, as_vector, dominance_margins, power_iteration
from .svm import dual_rows, finish_training, labelled_arrays, load_rows
from .telemetry import IterationRecord

logger = logging.getLogger("gabp_svm.core.distributed")

RoundHook = Callable[[IterationRecord], None]

# Responsibility boundary (must keep):
# - Worker: owns a contiguous row range; materializes only those rows; keeps the messages it sends
#   (out_*) and a local mirror of the messages it receives (in_*).
# - All cross-worker data goes through allreduce_sum (2n aggregates) or the control max-reduction.


# =========================
# Partition / reduction
# =========================
@dataclass(frozen=True)
class WorkerPartition:
    n: int
    p: int
    ranges: tuple[range, ...]

    def __post_init__(self) -> None:
        if len(self.ranges) != self.p:
            raise InvalidPartitionError(f"{len(self.ranges)} ranges for {self.p} workers")
        expected = 0
        for r in self.ranges:
            if r.step != 1 or r.start != expected or r.stop <= r.start:
                raise InvalidPartitionError(f"ranges must be sorted, contiguous and non-empty: {self.ranges}")
            expected = r.stop
        if expected != self.n:
            raise InvalidPartitionError(f"ranges cover [0, {expected}) but n={self.n}")
        if max(self.sizes) - min(self.sizes) > 1:
            raise InvalidPartitionError(f"unbalanced partition sizes: {self.sizes}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.ranges)

    def owner_of(self, i: int) -> int:
        for rank, r in enumerate(self.ranges):
            if i in r:
                return rank
        raise IndexError(f"row {i} outside [0, {self.n})")


def make_partition(n: int, p: int) -> WorkerPartition:
    """先頭 n mod p 個の worker が ceil(n/p) 行、残りが floor(n/p) 行。"""
    if n < 1:
        raise InvalidPartitionError(f"n must be >= 1, got {n}")
    if p < 1 or p > n:
        raise InvalidPartitionError(f"worker count must satisfy 1 <= p <= n, got p={p}, n={n}")
    base, extra = divmod(n, p)
    ranges = []
    start = 0
    for rank in range(p):
        size = base + (1 if rank < extra else 0)
        ranges.append(range(start, start + size))
        start += size
    return WorkerPartition(n=n, p=p, ranges=tuple(ranges))


@dataclass(frozen=True)
class ReduceContract:
    vector_length: int
    reduction: str = "sum"
    order: str = "ascending_rank"

    def check(self, contribution: np.ndarray) -> None:
        if contribution.shape != (self.vector_length,):
            raise DimensionMismatchError(
                f"contribution has shape {contribution.shape}, contract expects ({self.vector_length},)"
            )


def allreduce_sum(contributions: Sequence[Any]) -> Vector:
    """
    要素ごとの和。worker rank の昇順で足すので浮動小数の結果は毎回同じ。
    """
    vecs = [np.asarray(c, dtype=np.float64) for c in contributions]
    if not vecs:
        raise ValueError("allreduce_sum needs at least one contribution")
    if vecs[0].ndim != 1:
        raise DimensionMismatchError(f"contributions must be 1-d, got shape {vecs[0].shape}")
    contract = ReduceContract(vector_length=int(vecs[0].shape[0]))
    for v in vecs:
        contract.check(v)
    out = vecs[0].copy()
    for v in vecs[1:]:
        out += v
    out.setflags(write=False)
    return out


def allreduce_max(values: Sequence[float]) -> float:
    """収束判定用の制御 reduction（2n の集約スカラーには数えない）。NaN はそのまま伝搬する。"""
    if not values:
        raise ValueError("allreduce_max needs at least one value")
    return float(np.max(np.asarray(values, dtype=np.float64)))


@dataclass(frozen=True)
class FootprintEstimate:
    rows_per_worker: int
    block_bytes: int


def memory_footprint(n: int, p: int) -> FootprintEstimate:
    make_partition(n, p)
    rows = -(-n // p)
    return FootprintEstimate(rows_per_worker=rows, block_bytes=rows * n * 8)


# =========================
# Row sources
# =========================
class RowSource(abc.ABC):
    """
    worker に行ブロック (A rows, b rows) を渡す。どの範囲が要求されたかは access_log に残る。
    """

    def __init__(self) -> None:
        self.access_log: list[range] = []
        self._lock = threading.Lock()

    @property
    @abc.abstractmethod
    def order(self) -> int:
        ...

    @abc.abstractmethod
    def _materialize(self, row_range: range) -> tuple[np.ndarray, np.ndarray]:
        ...

    def rows(self, row_range: range) -> tuple[np.ndarray, np.ndarray]:
        with self._lock:
            self.access_log.append(row_range)
        return self._materialize(row_range)


class MatrixRowSource(RowSource):
    def __init__(self, W: SymmetricMatrix, b: Any) -> None:
        super().__init__()
        self.W = W
        self.b = as_vector(b, name="b")
        if self.b.shape[0] != W.order:
            raise DimensionMismatchError(f"dim(b)={self.b.shape[0]} != order(W)={W.order}")

    @property
    def order(self) -> int:
        return self.W.order

    def _materialize(self, row_range: range) -> tuple[np.ndarray, np.ndarray]:
        return self.W.rows(row_range.start, row_range.stop), np.array(self.b[row_range.start:row_range.stop])


class DualKernelRowSource(RowSource):
    """
    各 worker が自分の担当点の kernel 行を計算し、D_ij = y_i y_j K に直して対角を重み付けする。
    右辺は 1。
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, train_config: TrainConfig) -> None:
        super().__init__()
        self.X = X
        self.y = y
        self.train_config = train_config

    @property
    def order(self) -> int:
        return int(self.X.shape[0])

    def _materialize(self, row_range: range) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.train_config
        block = load_rows(dual_rows(self.X, self.y, cfg.kernel, row_range), row_range.start, cfg.cost_C, cfg.loading_mode)
        return block, np.ones(len(row_range))


# =========================
# Worker
# =========================
class Worker:
    def __init__(self, rank: int, row_range: range, source: RowSource) -> None:
        self.rank = rank
        self.row_range = row_range
        block, b_block = source.rows(row_range)
        self.A = np.asarray(block, dtype=np.float64)
        d, n = self.A.shape
        self.n = n
        idx = np.arange(d)
        cols = row_range.start + idx

        diag = self.A[idx, cols]
        zero = np.flatnonzero(diag == 0)
        if zero.size:
            i = int(cols[zero[0]])
            raise ZeroPivotError(i, i, what="diagonal entry W_ii")

        self.edges = self.A != 0
        self.edges[idx, cols] = False
        self.neg_a2 = -(self.A * self.A)
        self.fix_precision, fix_mean = node_fixes(diag, b_block)
        self.fix_information = self.fix_precision * fix_mean

        self.out_p = np.zeros((d, n))
        self.out_m = np.zeros((d, n))
        self.in_p = np.zeros((d, n))
        self.in_m = np.zeros((d, n))

    def contribution(self) -> np.ndarray:
        """担当ノードが送ったメッセージの列和 (+ 担当ノードの fix)。長さ 2n。"""
        s, e = self.row_range.start, self.row_range.stop
        agg_p = self.out_p.sum(axis=0)
        agg_h = (self.out_p * self.out_m).sum(axis=0)
        agg_p[s:e] += self.fix_precision
        agg_h[s:e] += self.fix_information
        return np.concatenate([agg_p, agg_h])

    def step(self, reduced: np.ndarray) -> float:
        n = self.n
        s, e = self.row_range.start, self.row_range.stop
        agg_p, agg_h = reduced[:n], reduced[n:]

        cavity_out_p = agg_p[s:e, None] - self.in_p
        cavity_out_h = agg_h[s:e, None] - self.in_p * self.in_m
        bad = self.edges & (cavity_out_p == 0)
        if bad.any():
            r, j = np.argwhere(bad)[0]
            raise ZeroPivotError(s + int(r), int(j))
        # 受信側: P_ji は P̃_j − P_ij から自分で作り直す（送信元 worker と同じ式）
        cavity_in_p = agg_p[None, :] - self.out_p
        cavity_in_h = agg_h[None, :] - self.out_p * self.out_m

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            new_out_p = np.divide(self.neg_a2, cavity_out_p, out=np.zeros_like(cavity_out_p), where=self.edges)
            new_out_m = np.divide(cavity_out_h, self.A, out=np.zeros_like(cavity_out_h), where=self.edges)
            new_in_p = np.divide(self.neg_a2, cavity_in_p, out=np.zeros_like(cavity_in_p), where=self.edges)
            new_in_m = np.divide(cavity_in_h, self.A, out=np.zeros_like(cavity_in_h), where=self.edges)

        delta = message_delta(new_out_p, self.out_p, new_out_m, self.out_m)
        self.out_p, self.out_m = new_out_p, new_out_m
        self.in_p, self.in_m = new_in_p, new_in_m
        return delta

    def local_margin(self) -> float:
        return float(dominance_margins(self.A, self.row_range.start).min())

    def abs_matvec(self, x: np.ndarray) -> np.ndarray:
        """|I − W| x の担当行を長さ n にゼロ埋めして返す"""
        out = np.zeros(self.n)
        out[self.row_range.start:self.row_range.stop] = abs_iteration_rows(self.A, self.row_range.start) @ x
        return out

    def means(self, reduced: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        s, e = self.row_range.start, self.row_range.stop
        agg_p, agg_h = reduced[s:e], reduced[n + s:n + e]
        zero = np.flatnonzero(agg_p == 0)
        if zero.size:
            raise ZeroPivotError(s + int(zero[0]), s + int(zero[0]), what="marginal precision")
        with np.errstate(invalid="ignore", over="ignore"):
            return agg_h / agg_p, np.array(agg_p)


# =========================
# Barrier-based communicator (threaded mode)
# =========================
class Communicator:
    """
    全 worker が 1 回ずつ寄与 -> barrier -> rank 0 が昇順で和を取る -> barrier -> 全員が同じ結果を読む
    """

    def __init__(self, p: int) -> None:
        self.p = p
        self._barrier = threading.Barrier(p)
        self._slots: list[Any] = [None] * p
        self._result: Any = None
        self.reduced_scalars = 0

    def allreduce_sum(self, rank: int, vec: np.ndarray) -> np.ndarray:
        self._slots[rank] = vec
        self._barrier.wait()
        if rank == 0:
            self._result = allreduce_sum(self._slots)
            self.reduced_scalars = int(self._result.shape[0])
        self._barrier.wait()
        return self._result

    def allreduce_max(self, rank: int, value: float) -> float:
        self._slots[rank] = value
        self._barrier.wait()
        if rank == 0:
            self._result = allreduce_max(self._slots)
        self._barrier.wait()
        return self._result

    def abort(self) -> None:
        self._barrier.abort()


# =========================
# Drivers
# =========================
@dataclass
class _Outcome:
    iterations: int
    delta: float
    converged: bool
    final: np.ndarray


def _record(it: int, delta: float, scalars: int, p: int, on_round: Optional[RoundHook]) -> None:
    logger.debug("round=%d delta=%.3e reduced_scalars=%d workers=%d", it, delta, scalars, p)
    if on_round is not None:
        on_round(IterationRecord(iteration=it, delta=delta, scalars_communicated=scalars, workers=p))


def _run_serial(workers: list[Worker], settings: GabpSettings, on_round: Optional[RoundHook]) -> _Outcome:
    p = len(workers)
    it, delta, converged = 0, math.inf, False
    for it in range(1, settings.max_iters + 1):
        reduced = allreduce_sum([w.contribution() for w in workers])
        delta = allreduce_max([w.step(reduced) for w in workers])
        _record(it, delta, int(reduced.shape[0]), p, on_round)
        if not math.isfinite(delta):
            break
        if delta <= settings.epsilon:
            converged = True
            break
    final = allreduce_sum([w.contribution() for w in workers])
    return _Outcome(it, delta, converged, final)


def _worker_loop(w: Worker, comm: Communicator, settings: GabpSettings, on_round: Optional[RoundHook]) -> _Outcome:
    it, delta, converged = 0, math.inf, False
    try:
        for it in range(1, settings.max_iters + 1):
            reduced = comm.allreduce_sum(w.rank, w.contribution())
            local = w.step(reduced)
            delta = comm.allreduce_max(w.rank, local)
            if w.rank == 0:
                _record(it, delta, comm.reduced_scalars, comm.p, on_round)
            if not math.isfinite(delta):
                break
            if delta <= settings.epsilon:
                converged = True
                break
        final = comm.allreduce_sum(w.rank, w.contribution())
    except threading.BrokenBarrierError:
        raise
    except BaseException:
        comm.abort()
        raise
    return _Outcome(it, delta, converged, final)


def _run_threaded(workers: list[Worker], settings: GabpSettings, on_round: Optional[RoundHook]) -> _Outcome:
    comm = Communicator(len(workers))
    with ThreadPoolExecutor(max_workers=len(workers), thread_name_prefix="gabp-worker") as pool:
        futures = [pool.submit(_worker_loop, w, comm, settings, on_round) for w in workers]
        outcomes: list[Optional[_Outcome]] = []
        errors: list[BaseException] = []
        for f in futures:
            try:
                outcomes.append(f.result())
            except threading.BrokenBarrierError as e:
                errors.append(e)
            except BaseException as e:  # noqa: BLE001 - 元の例外を優先して投げ直す
                errors.insert(0, e)
    if errors:
        raise errors[0]
    first = outcomes[0]
    for o in outcomes[1:]:
        if o is None or not np.array_equal(o.final, first.final):
            raise RuntimeError("workers observed different reduced aggregates")
    return first


def _diagnose(workers: list[Worker], n: int, power_iters: int) -> ConvergenceDiagnosis:
    margin = min(w.local_margin() for w in workers)
    rho = power_iteration(lambda x: allreduce_sum([w.abs_matvec(x) for w in workers]), n, power_iters)
    return ConvergenceDiagnosis(
        spectral_radius_estimate=rho,
        is_diagonally_dominant=margin > 0,
        dominance_margin=margin,
    )


def _start_workers(source: RowSource, workers: int) -> tuple[WorkerPartition, list[Worker]]:
    partition = make_partition(source.order, workers)
    return partition, [Worker(rank, r, source) for rank, r in enumerate(partition.ranges)]


def _execute(
    partition: WorkerPartition,
    pool: list[Worker],
    settings: GabpSettings,
    threaded: bool,
    on_round: Optional[RoundHook],
) -> GabpSolution:
    if settings.schedule != Schedule.SYNCHRONOUS:
        raise ValueError("the distributed runtime runs synchronous rounds only")

    logger.info("run_distributed: n=%d workers=%d sizes=%s threaded=%s", partition.n, partition.p, partition.sizes, threaded)
    if threaded and partition.p > 1:
        outcome = _run_threaded(pool, settings, on_round)
    else:
        outcome = _run_serial(pool, settings, on_round)

    parts = [w.means(outcome.final) for w in pool]
    means = np.concatenate([m for m, _ in parts])
    precisions = np.concatenate([pr for _, pr in parts])
    if outcome.converged:
        logger.info("run_distributed: converged iterations=%d delta=%.3e", outcome.iterations, outcome.delta)
    else:
        logger.warning("run_distributed: not converged iterations=%d delta=%.3e", outcome.iterations, outcome.delta)
    return GabpSolution(
        means=means,
        precisions=precisions,
        iterations_used=outcome.iterations,
        converged=outcome.converged,
        final_delta=outcome.delta,
    )


def run_distributed(
    source: RowSource,
    settings: GabpSettings,
    workers: int,
    *,
    threaded: bool = True,
    on_round: Optional[RoundHook] = None,
) -> GabpSolution:
    """
    broadcast GaBP を行分割で実行する。1 round あたりの通信は 2n 個の集約スカラー
    （P̃_i と P̃_i μ̃_i）の allreduce と、収束判定用の max 1 個だけ。
    """
    partition, pool = _start_workers(source, workers)
    return _execute(partition, pool, settings, threaded, on_round)


def solve_distributed(
    problem: GabpProblem,
    workers: int,
    *,
    threaded: bool = True,
    on_round: Optional[RoundHook] = None,
) -> GabpSolution:
    return run_distributed(MatrixRowSource(problem.W, problem.b), problem.settings, workers, threaded=threaded, on_round=on_round)


def train_distributed(
    points: Sequence[SamplePoint],
    train_config: TrainConfig,
    workers: int,
    *,
    threaded: bool = True,
    on_round: Optional[RoundHook] = None,
    source: Optional[DualKernelRowSource] = None,
) -> TrainedModel:
    X, y = labelled_arrays(points, min_points=2)
    source = source or DualKernelRowSource(X, y, train_config)
    partition, pool = _start_workers(source, workers)
    diagnosis = _diagnose(pool, partition.n, config.DEFAULT_POWER_ITERS)
    if not diagnosis.is_diagonally_dominant:
        logger.warning(
            "train_distributed: loaded dual matrix is not diagonally dominant (margin=%.3e)",
            diagnosis.dominance_margin,
        )
    solution = _execute(partition, pool, train_config.gabp, threaded, on_round)
    return finish_training(X, y, train_config, solution, diagnosis)
