# core/gabp.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

import config

from .errors import DimensionMismatchError, ZeroPivotError
from .models import GabpSettings, GabpSolution, Schedule, Variant, Vector
from .numerics import SymmetricMatrix, as_vector, residual_inf

logger = logging.getLogger("gabp_svm.core.gabp")

SweepHook = Callable[["GabpState"], None]


@dataclass(frozen=True)
class GabpProblem:
    W: SymmetricMatrix
    b: Vector
    epsilon: float = config.DEFAULT_EPSILON
    max_iters: int = config.DEFAULT_MAX_ITERS
    schedule: Schedule = Schedule.SYNCHRONOUS
    variant: Variant = Variant.EDGE

    def __post_init__(self) -> None:
        object.__setattr__(self, "b", as_vector(self.b, name="b"))
        if self.b.shape[0] != self.W.order:
            raise DimensionMismatchError(f"dim(b)={self.b.shape[0]} != order(W)={self.W.order}")
        zero_diag = np.flatnonzero(self.W.array.diagonal() == 0)
        if zero_diag.size:
            raise ZeroPivotError(int(zero_diag[0]), int(zero_diag[0]), what="diagonal entry W_ii")
        # epsilon / max_iters の検証は settings 側に寄せる
        self.settings

    @classmethod
    def from_settings(cls, W: SymmetricMatrix, b: Any, settings: GabpSettings) -> "GabpProblem":
        return cls(
            W=W,
            b=b,
            epsilon=settings.epsilon,
            max_iters=settings.max_iters,
            schedule=settings.schedule,
            variant=settings.variant,
        )

    @property
    def settings(self) -> GabpSettings:
        return GabpSettings(
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            schedule=self.schedule,
            variant=self.variant,
        )


def node_fixes(diagonal: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    scalar fixes: P_ii = A_ii, μ_ii = b_i / A_ii。
    集約和で使う P_ii·μ_ii もここで作る（分散 runtime と同じ式にするため共有）。
    """
    fix_precision = np.asarray(diagonal, dtype=np.float64).copy()
    fix_mean = np.asarray(b, dtype=np.float64) / fix_precision
    return fix_precision, fix_mean


def cavity_messages(
    a: np.ndarray,
    cavity_precision: np.ndarray,
    cavity_information: np.ndarray,
    sender: int,
    targets: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """
    P_ij = -A_ij² / P_{i\\j},  μ_ij = (P_ii μ_ii + Σ_{k∈N(i)\\j} P_ki μ_ki) / A_ij
    cavity_precision == 0 は ZeroPivot。
    """
    zero = np.flatnonzero(cavity_precision == 0)
    if zero.size:
        raise ZeroPivotError(sender, int(targets[zero[0]]))
    return -(a * a) / cavity_precision, cavity_information / a


def message_delta(new_p: np.ndarray, old_p: np.ndarray, new_m: np.ndarray, old_m: np.ndarray) -> float:
    """メッセージ変化量の max。どこかに NaN があれば NaN を返す（発散判定に届かせる）。"""
    with np.errstate(invalid="ignore", over="ignore"):
        return float(np.max([
            np.max(np.abs(new_p - old_p), initial=0.0),
            np.max(np.abs(new_m - old_m), initial=0.0),
        ]))


@dataclass
class GabpState:
    """
    メッセージは n×n 配列で持つ: precisions[i, j] = P_ij（i→j）, means[i, j] = μ_ij。
    edge でない位置は常に 0。
    """
    A: np.ndarray
    edges: np.ndarray
    fix_precision: np.ndarray
    fix_mean: np.ndarray
    precisions: np.ndarray
    means: np.ndarray
    iteration: int = 0
    last_delta: float = math.inf
    scalars_communicated: int = 0
    fix_information: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.fix_information = self.fix_precision * self.fix_mean

    @classmethod
    def initial(cls, problem: GabpProblem) -> "GabpState":
        A = problem.W.array
        n = problem.W.order
        edges = A != 0
        np.fill_diagonal(edges, False)
        fix_precision, fix_mean = node_fixes(A.diagonal(), problem.b)
        return cls(
            A=A,
            edges=edges,
            fix_precision=fix_precision,
            fix_mean=fix_mean,
            precisions=np.zeros((n, n)),
            means=np.zeros((n, n)),
        )

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    @property
    def edge_count(self) -> int:
        """有向 edge 数（= メッセージ数）"""
        return int(self.edges.sum())

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.edges[:, i])

    def aggregates(self) -> tuple[np.ndarray, np.ndarray]:
        """
        P̃_i = P_ii + Σ_k P_ki,  P̃_i μ̃_i = P_ii μ_ii + Σ_k P_ki μ_ki
        （分散 runtime の列和 + fix と同じ演算順）
        """
        agg_precision = self.precisions.sum(axis=0) + self.fix_precision
        agg_information = (self.precisions * self.means).sum(axis=0) + self.fix_information
        return agg_precision, agg_information

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        agg_precision, agg_information = self.aggregates()
        zero = np.flatnonzero(agg_precision == 0)
        if zero.size:
            raise ZeroPivotError(int(zero[0]), int(zero[0]), what="marginal precision")
        with np.errstate(invalid="ignore", over="ignore"):
            return agg_information / agg_precision, agg_precision


# -------------------------
# Single message
# -------------------------
def edge_message(state: GabpState, i: int, j: int) -> tuple[float, float]:
    if not state.edges[i, j]:
        raise ValueError(f"({i}, {j}) is not an edge (A_ij == 0 or i == j)")
    others = state.neighbors(i)
    others = others[others != j]
    incoming_p = state.precisions[others, i]
    cavity_p = state.fix_precision[i] + float(np.sum(incoming_p))
    cavity_h = state.fix_information[i] + float(np.sum(incoming_p * state.means[others, i]))
    p, m = cavity_messages(
        np.array([state.A[i, j]]),
        np.array([cavity_p]),
        np.array([cavity_h]),
        i,
        np.array([j]),
    )
    return float(p[0]), float(m[0])


# -------------------------
# Per-node outgoing messages
# -------------------------
def _node_cavities_edge(state: GabpState, i: int, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # 各 target j ごとに「j 以外の入力」を素直に足す（引き算はしない）
    incoming_p = state.precisions[:, i]
    incoming_h = incoming_p * state.means[:, i]
    keep = np.ones((targets.size, state.n), dtype=bool)
    keep[np.arange(targets.size), targets] = False
    cavity_p = np.where(keep, incoming_p, 0.0).sum(axis=1) + state.fix_precision[i]
    cavity_h = np.where(keep, incoming_h, 0.0).sum(axis=1) + state.fix_information[i]
    return cavity_p, cavity_h


def _node_cavities_broadcast(state: GabpState, i: int, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    incoming_p = state.precisions[:, i]
    incoming_h = incoming_p * state.means[:, i]
    agg_p = incoming_p.sum() + state.fix_precision[i]
    agg_h = incoming_h.sum() + state.fix_information[i]
    return agg_p - incoming_p[targets], agg_h - incoming_h[targets]


_NODE_CAVITIES = {
    Variant.EDGE: _node_cavities_edge,
    Variant.BROADCAST: _node_cavities_broadcast,
}


# -------------------------
# Sweeps
# -------------------------
def _sweep_sync_edge(state: GabpState) -> float:
    new_p = np.zeros_like(state.precisions)
    new_m = np.zeros_like(state.means)
    for i in range(state.n):
        targets = np.flatnonzero(state.edges[i])
        if targets.size == 0:
            continue
        cavity_p, cavity_h = _node_cavities_edge(state, i, targets)
        new_p[i, targets], new_m[i, targets] = cavity_messages(state.A[i, targets], cavity_p, cavity_h, i, targets)
    return _commit(state, new_p, new_m)


def _sweep_sync_broadcast(state: GabpState) -> float:
    edges = state.edges
    agg_p, agg_h = state.aggregates()
    cavity_p = agg_p[:, None] - state.precisions.T
    cavity_h = agg_h[:, None] - (state.precisions * state.means).T
    bad = edges & (cavity_p == 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ZeroPivotError(int(i), int(j))
    A = state.A
    new_p = np.divide(-(A * A), cavity_p, out=np.zeros_like(cavity_p), where=edges)
    new_m = np.divide(cavity_h, A, out=np.zeros_like(cavity_h), where=edges)
    return _commit(state, new_p, new_m)


def _commit(state: GabpState, new_p: np.ndarray, new_m: np.ndarray) -> float:
    delta = message_delta(new_p, state.precisions, new_m, state.means)
    state.precisions = new_p
    state.means = new_m
    return delta


def _sweep_async(state: GabpState, variant: Variant) -> float:
    """
    node 0..n-1 の順に、その時点で最新の入力メッセージから送信メッセージを作って即上書き。
    """
    cavities = _NODE_CAVITIES[variant]
    delta = 0.0
    for i in range(state.n):
        targets = np.flatnonzero(state.edges[i])
        if targets.size == 0:
            continue
        cavity_p, cavity_h = cavities(state, i, targets)
        p, m = cavity_messages(state.A[i, targets], cavity_p, cavity_h, i, targets)
        step = message_delta(p, state.precisions[i, targets], m, state.means[i, targets])
        delta = float(np.max([delta, step]))
        state.precisions[i, targets] = p
        state.means[i, targets] = m
    return delta


def _scalars_per_sweep(state: GabpState, variant: Variant) -> int:
    if variant == Variant.BROADCAST:
        return 2 * state.n
    return 2 * state.edge_count


def _run(problem: GabpProblem, sweep: Callable[[GabpState], float], variant: Variant, label: str, on_sweep: Optional[SweepHook]) -> GabpSolution:
    state = GabpState.initial(problem)
    scalars = _scalars_per_sweep(state, variant)
    converged = False

    for it in range(1, problem.max_iters + 1):
        delta = sweep(state)
        state.iteration = it
        state.last_delta = delta
        state.scalars_communicated = scalars
        logger.debug("%s: iter=%d delta=%.3e", label, it, delta)
        if on_sweep is not None:
            on_sweep(state)
        if not math.isfinite(delta):
            logger.warning("%s: messages diverged at iteration %d (non-finite delta)", label, it)
            break
        if delta <= problem.epsilon:
            converged = True
            break

    means, precisions = state.marginals()
    if converged:
        logger.info("%s: converged n=%d iterations=%d delta=%.3e", label, state.n, state.iteration, state.last_delta)
    else:
        logger.warning(
            "%s: not converged n=%d iterations=%d delta=%.3e (epsilon=%g)",
            label, state.n, state.iteration, state.last_delta, problem.epsilon,
        )
    return GabpSolution(
        means=means,
        precisions=precisions,
        iterations_used=state.iteration,
        converged=converged,
        final_delta=state.last_delta,
    )


# -------------------------
# Public
# -------------------------
def run_sync(problem: GabpProblem, on_sweep: Optional[SweepHook] = None) -> GabpSolution:
    """edge メッセージの flooding（全 edge を前ラウンドの値から更新）。"""
    return _run(problem, _sweep_sync_edge, Variant.EDGE, "run_sync", on_sweep)


def run_broadcast(problem: GabpProblem, on_sweep: Optional[SweepHook] = None) -> GabpSolution:
    """集約和 (P̃_i, μ̃_i) を配り、引き算で P_{i\\j} を復元する。"""
    return _run(problem, _sweep_sync_broadcast, Variant.BROADCAST, "run_broadcast", on_sweep)


def run_async(problem: GabpProblem, on_sweep: Optional[SweepHook] = None) -> GabpSolution:
    variant = problem.variant
    return _run(problem, lambda s: _sweep_async(s, variant), variant, f"run_async[{variant.value}]", on_sweep)


def solve(problem: GabpProblem, on_sweep: Optional[SweepHook] = None) -> GabpSolution:
    if problem.schedule == Schedule.ASYNCHRONOUS_SWEEP:
        return run_async(problem, on_sweep)
    if problem.variant == Variant.BROADCAST:
        return run_broadcast(problem, on_sweep)
    return run_sync(problem, on_sweep)


def residual(W: SymmetricMatrix, b: Any, x: Any) -> float:
    """‖W·x − b‖∞"""
    return residual_inf(W, b, x)
