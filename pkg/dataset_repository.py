from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

import config
from core.errors import DimensionMismatchError, InvalidLabelError, NonMonotonicIndexError, ParseError, RaggedRowsError
from core.models import Dataset, SamplePoint

logger = logging.getLogger("gabp_svm.dataset_repository")


# =========================
# Labels
# =========================
def _label_token(raw: str) -> str:
    """'+1' / '1' / '1.0' を同じクラス名に寄せる（数値として読めるものだけ）"""
    s = (raw or "").strip()
    try:
        v = float(s)
    except ValueError:
        return s
    if math.isfinite(v) and v == int(v):
        return str(int(v))
    return repr(v)


def one_vs_rest_labels(raw_labels: Sequence[str], positive_class: Optional[str]) -> List[float]:
    """
    ラベル写像
    - positive_class 指定あり: 一致 -> +1、それ以外 -> -1（one-vs-rest）
    - 指定なし: 値が {+1, -1} / {1, 0} の二値だけ受け付ける（0 -> -1）
    """
    tokens = [_label_token(r) for r in raw_labels]
    if positive_class is not None:
        pos = _label_token(positive_class)
        return [1.0 if t == pos else -1.0 for t in tokens]

    out: List[float] = []
    for i, t in enumerate(tokens):
        if t == "1":
            out.append(1.0)
        elif t in ("-1", "0"):
            out.append(-1.0)
        else:
            raise InvalidLabelError(
                f"label {raw_labels[i]!r} (point {i}) is not binary; pass a positive class for one-vs-rest mapping"
            )
    return out


# =========================
# libsvm
# =========================
def _parse_libsvm_line(line: str, lineno: int) -> Tuple[str, List[Tuple[int, float]]]:
    parts = line.split()
    label = parts[0]
    try:
        v = float(label)
    except ValueError:
        raise ParseError(f"invalid label {label!r}", line=lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"invalid label {label!r}", line=lineno)

    entries: List[Tuple[int, float]] = []
    last = 0
    for col, tok in enumerate(parts[1:], start=2):
        idx_s, sep, val_s = tok.partition(":")
        if not sep:
            raise ParseError(f"expected <index>:<value>, got {tok!r}", line=lineno, column=col)
        try:
            idx = int(idx_s)
            val = float(val_s)
        except ValueError:
            raise ParseError(f"malformed feature {tok!r}", line=lineno, column=col) from None
        if idx < 1:
            raise ParseError(f"feature index must be >= 1, got {idx}", line=lineno, column=col)
        if not math.isfinite(val):
            raise ParseError(f"non-finite feature value {val_s!r}", line=lineno, column=col)
        if idx <= last:
            raise NonMonotonicIndexError(
                f"feature index {idx} after {last}; indices must be strictly increasing",
                line=lineno,
                column=col,
            )
        last = idx
        entries.append((idx, val))
    return label, entries


def parse_libsvm(
    stream: TextIO,
    positive_class: Optional[str] = None,
    feature_dim: Optional[int] = None,
    source: str = "libsvm",
) -> Dataset:
    """
    "<label> <index>:<value> ..." を 1 行 1 点で読む。index は 1 始まりで狭義単調増加。
    次元は最大 index（feature_dim を渡すとそれに揃える。超えたら ParseError）。
    空行と '#' 始まりの行は読み飛ばす。
    """
    raw_labels: List[str] = []
    rows: List[List[Tuple[int, float]]] = []
    linenos: List[int] = []
    for lineno, line in enumerate(stream, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        label, entries = _parse_libsvm_line(body, lineno)
        raw_labels.append(label)
        rows.append(entries)
        linenos.append(lineno)

    max_index = max((e[-1][0] for e in rows if e), default=0)
    dim = max_index if feature_dim is None else int(feature_dim)
    if max_index > dim:
        bad = next(ln for ln, e in zip(linenos, rows) if e and e[-1][0] > dim)
        raise ParseError(f"feature index {max_index} exceeds declared dimension {dim}", line=bad)

    labels = one_vs_rest_labels(raw_labels, positive_class)
    points = []
    for entries, lab in zip(rows, labels):
        x = np.zeros(dim)
        for idx, val in entries:
            x[idx - 1] = val
        points.append(SamplePoint(x, lab))
    logger.info("parse_libsvm: %d points, feature_dim=%d (%s)", len(points), dim, source)
    return Dataset(points=tuple(points), feature_dim=dim, source=source)


def serialize_libsvm(dataset: Dataset) -> str:
    """ゼロ成分は省略。値は repr で書くので parse_libsvm で同じ点に戻る。"""
    lines = []
    for p in dataset.points:
        label = "+1" if p.label is None or p.label > 0 else "-1"
        feats = " ".join(f"{i + 1}:{float(v)!r}" for i, v in enumerate(p.features) if v != 0.0)
        lines.append(f"{label} {feats}".rstrip())
    return "".join(line + "\n" for line in lines)


# =========================
# CSV
# =========================
def parse_csv(
    stream: TextIO,
    label_column: int,
    positive_label: str,
    delimiter: str = ",",
    has_header: bool = False,
    source: str = "csv",
) -> Dataset:
    """
    label_column の値が positive_label と一致すれば +1、それ以外 -1。残りの列を順に特徴量にする。
    label_column は負の index（末尾から）も受け付ける。
    """
    reader = csv.reader(stream, delimiter=delimiter)
    width: Optional[int] = None
    points: List[SamplePoint] = []
    first = True
    for row in reader:
        rowno = reader.line_num
        if first and has_header:
            first = False
            continue
        first = False
        if not row or all(not c.strip() for c in row):
            continue
        if width is None:
            width = len(row)
            if width < 1:
                raise ParseError("empty row", line=rowno)
            if not (-width <= label_column < width):
                raise ParseError(f"label column {label_column} outside row of {width} cells", line=rowno)
        elif len(row) != width:
            raise RaggedRowsError(f"row has {len(row)} cells, expected {width}", line=rowno)

        lc = label_column % width
        feats: List[float] = []
        for col, cell in enumerate(row):
            if col == lc:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric feature cell {cell!r}", line=rowno, column=col + 1) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite feature cell {cell!r}", line=rowno, column=col + 1)
            feats.append(v)
        label = 1.0 if _label_token(row[lc]) == _label_token(str(positive_label)) else -1.0
        points.append(SamplePoint(np.array(feats), label))

    dim = (width - 1) if width is not None else 0
    logger.info("parse_csv: %d points, feature_dim=%d (%s)", len(points), dim, source)
    return Dataset(points=tuple(points), feature_dim=dim, source=source)


def load_dataset(
    path: str | Path,
    fmt: str = "libsvm",
    *,
    positive_class: Optional[str] = None,
    label_column: int = -1,
    feature_dim: Optional[int] = None,
) -> Dataset:
    p = Path(path)
    with open(p, "r", encoding="utf-8", newline="") as f:
        if fmt == "libsvm":
            return parse_libsvm(f, positive_class=positive_class, feature_dim=feature_dim, source=str(p))
        if fmt == "csv":
            if positive_class is None:
                raise ValueError("csv datasets need a positive class (--positive-class)")
            return parse_csv(f, label_column=label_column, positive_label=positive_class, source=str(p))
    raise ValueError(f"unknown dataset format: {fmt!r}")


def rows_to_dataset(rows: Iterable[Sequence[Any]], label_column: int, positive_label: str, source: str = "rows") -> Dataset:
    """openpyxl の iter_rows(values_only=True) などセル列から Dataset を作る（空セルは 0）"""
    points: List[SamplePoint] = []
    width: Optional[int] = None
    for rowno, row in enumerate(rows, start=1):
        cells = list(row)
        if all(c is None or str(c).strip() == "" for c in cells):
            continue
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise RaggedRowsError(f"row has {len(cells)} cells, expected {width}", line=rowno)
        lc = label_column % width
        feats = []
        for col, cell in enumerate(cells):
            if col == lc:
                continue
            try:
                feats.append(0.0 if cell is None or str(cell).strip() == "" else float(cell))
            except (TypeError, ValueError):
                raise ParseError(f"non-numeric feature cell {cell!r}", line=rowno, column=col + 1) from None
        label = 1.0 if _label_token(str(cells[lc])) == _label_token(str(positive_label)) else -1.0
        points.append(SamplePoint(np.array(feats), label))
    return Dataset(points=tuple(points), feature_dim=(width - 1) if width else 0, source=source)


# =========================
# Splits / scaling / synthetic
# =========================
def train_test_split(dataset: Dataset, test_fraction: float = config.DEFAULT_TEST_FRACTION, seed: int = config.DEFAULT_SEED) -> Tuple[Dataset, Dataset]:
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test fraction must be in (0, 1), got {test_fraction}")
    n = len(dataset)
    if n < 2:
        raise ValueError(f"need at least 2 points to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = min(max(1, int(round(n * test_fraction))), n - 1)
    test_idx = sorted(int(i) for i in perm[:n_test])
    train_idx = sorted(int(i) for i in perm[n_test:])
    pts = dataset.points
    train = Dataset(tuple(pts[i] for i in train_idx), dataset.feature_dim, f"{dataset.source}[train seed={seed}]")
    test = Dataset(tuple(pts[i] for i in test_idx), dataset.feature_dim, f"{dataset.source}[test seed={seed}]")
    logger.info("train_test_split: train=%d test=%d fraction=%g seed=%d", len(train), len(test), test_fraction, seed)
    return train, test


@dataclass(frozen=True)
class MinMaxScaler:
    """特徴量ごとに [0, 1] へ。学習側で fit した min/max をテスト側にもそのまま使う。"""
    minimum: np.ndarray
    span: np.ndarray

    @classmethod
    def fit(cls, dataset: Dataset) -> "MinMaxScaler":
        if len(dataset) == 0:
            raise ValueError("cannot fit a scaler on an empty dataset")
        X = np.vstack([p.features for p in dataset.points]) if dataset.feature_dim else np.zeros((len(dataset), 0))
        lo = X.min(axis=0)
        span = X.max(axis=0) - lo
        span[span == 0] = 1.0  # 定数列はそのまま 0 に落とす
        return cls(minimum=lo, span=span)

    def transform(self, dataset: Dataset) -> Dataset:
        if dataset.feature_dim != self.minimum.shape[0]:
            raise DimensionMismatchError(
                f"dataset feature_dim {dataset.feature_dim} != scaler dimension {self.minimum.shape[0]}"
            )
        pts = tuple(SamplePoint((p.features - self.minimum) / self.span, p.label) for p in dataset.points)
        return Dataset(pts, dataset.feature_dim, f"{dataset.source}[minmax]")

    def to_dict(self) -> dict:
        return {"minimum": [float(v) for v in self.minimum], "span": [float(v) for v in self.span]}


def make_two_gaussians(n: int, dim: int = 2, separation: float = 6.0, seed: int = config.DEFAULT_SEED) -> Dataset:
    """
    平均 ±(separation/2)·e_1、共分散 I の 2 クラス（各クラスほぼ半数）。
    separation は σ 単位なので 6.0 なら ±3σ。
    """
    if n < 2 or dim < 1:
        raise ValueError(f"need n >= 2 and dim >= 1, got n={n}, dim={dim}")
    rng = np.random.default_rng(seed)
    labels = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = rng.standard_normal((n, dim))
    X[:, 0] += labels * (separation / 2.0)
    points = tuple(SamplePoint(x, y) for x, y in zip(X, labels))
    return Dataset(points, dim, f"two_gaussians(n={n}, dim={dim}, separation={separation:g}, seed={seed})")
