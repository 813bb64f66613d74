# controller.py
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, TextIO, Tuple

import numpy as np

import config
import dataset_repository as datasets
from core import distributed, gabp
from core.errors import GabpNotConvergedError, ParseError, UsageError
from core.evaluation import evaluate
from core.kernels import default_bias_constant
from core.models import (
    Dataset,
    GabpSettings,
    GabpSolution,
    KernelFamily,
    KernelSpec,
    LoadingMode,
    Schedule,
    TrainConfig,
    TrainedModel,
    Variant,
)
from core.numerics import SymmetricMatrix, residual_inf
from core.svm import predict, train
from core.telemetry import IterationRecord, RunTelemetry
from json_model_repository import JsonModelRepository

logger = logging.getLogger("gabp_svm.controller")

# Responsibility boundary (must keep):
# - main.py: argv parsing, logging setup, printing the report, exit codes.
# - Controller: option merging, file I/O through the repositories, calls into core.
# - core/*: no argv, no printing, no files (except telemetry sinks handed in from here).

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2


# -------------------------
# Options (flag > config file > environment > default)
# -------------------------
def _positive_int(v: Any) -> int:
    iv = int(v)
    if iv < 1 or iv != float(v):
        raise ValueError(f"expected a positive integer, got {v!r}")
    return iv


def _bias(v: Any) -> str | float:
    if str(v).strip().lower() == "auto":
        return "auto"
    f = float(v)
    if not (f >= 0 and np.isfinite(f)):
        raise ValueError(f"bias must be 'auto' or a finite real >= 0, got {v!r}")
    return f


def _workers_list(v: Any) -> Tuple[int, ...]:
    items = v if isinstance(v, (list, tuple)) else str(v).split(",")
    out = tuple(_positive_int(x) for x in items if str(x).strip())
    if not out:
        raise ValueError("workers list is empty")
    return out


def _flag_of(table: Dict[str, str]) -> Callable[[Any], str]:
    def conv(v: Any) -> str:
        key = str(v).strip().lower()
        if key not in table:
            raise ValueError(f"{v!r} is not one of {', '.join(sorted(table))}")
        return key
    return conv


def _boolean(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


# key -> (converter, default)
OPTION_SPECS: Dict[str, Tuple[Callable[[Any], Any], Any]] = {
    "kernel": (_flag_of(config.KERNEL_FLAGS), "rbf"),
    "gamma": (float, config.DEFAULT_RBF_GAMMA),
    "degree": (_positive_int, config.DEFAULT_POLY_DEGREE),
    "coef0": (float, config.DEFAULT_POLY_COEF0),
    "bias": (_bias, "auto"),
    "cost_c": (float, config.DEFAULT_COST_C),
    "loading": (_flag_of(config.LOADING_FLAGS), "one-over-c"),
    "epsilon": (float, config.DEFAULT_EPSILON),
    "max_iters": (_positive_int, config.DEFAULT_MAX_ITERS),
    "schedule": (_flag_of(config.SCHEDULE_FLAGS), "sync"),
    "variant": (_flag_of(config.VARIANT_FLAGS), "edge"),
    "workers": (_positive_int, None),
    "sv_threshold": (float, None),
    "seed": (int, config.DEFAULT_SEED),
    "positive_class": (str, None),
    "scale": (_boolean, False),
    "format": (_flag_of({"libsvm": "libsvm", "csv": "csv"}), "libsvm"),
    "label_column": (int, -1),
    "test_fraction": (float, None),
    "test": (str, None),
    "model": (str, None),
    "model_out": (str, None),
    "labels_out": (str, None),
    "support_only": (_boolean, False),
    "workers_list": (_workers_list, (1, 2, 4)),
    "synthetic": (_positive_int, None),
    "telemetry": (str, None),
}


def read_config_file(path: str | Path) -> Dict[str, Any]:
    p = Path(path)
    try:
        root = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {p}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {p} is not valid JSON: {e}") from e
    if not isinstance(root, dict):
        raise UsageError(f"config file {p} must hold a JSON object")
    unknown = sorted(k for k in root if k.replace("-", "_") not in OPTION_SPECS)
    if unknown:
        raise UsageError(f"config file {p}: unknown keys {unknown}")
    return {k.replace("-", "_"): v for k, v in root.items()}


def merge_options(flags: Dict[str, Any], file_values: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    flags は argparse の値（未指定は None）。返り値は全キーが埋まった effective options。
    """
    file_values = file_values or {}
    out: Dict[str, Any] = {}
    for key, (conv, default) in OPTION_SPECS.items():
        raw = flags.get(key)
        origin = "flag"
        if raw is None and key in file_values:
            raw, origin = file_values[key], "config file"
        if raw is None and key == "workers":
            try:
                env = config.default_workers()
            except ValueError as e:
                raise UsageError(str(e)) from None
            raw, origin = env, f"${config.ENV_WORKERS}"
        if raw is None:
            out[key] = default
            continue
        try:
            out[key] = conv(raw)
        except (TypeError, ValueError) as e:
            raise UsageError(f"invalid {key.replace('_', '-')} from {origin}: {e}") from None
    return out


def options_echo(opts: Dict[str, Any]) -> Dict[str, Any]:
    """report に載せる JSON 化済みの effective options"""
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(opts.items())}


def gabp_settings(opts: Dict[str, Any]) -> GabpSettings:
    try:
        return GabpSettings(
            epsilon=opts["epsilon"],
            max_iters=opts["max_iters"],
            schedule=Schedule(config.schedule_name(opts["schedule"])),
            variant=Variant(config.variant_name(opts["variant"])),
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def train_config(opts: Dict[str, Any], n_train: int) -> TrainConfig:
    bias = default_bias_constant(n_train) if opts["bias"] == "auto" else float(opts["bias"])
    family = KernelFamily(config.kernel_family_name(opts["kernel"]))
    try:
        if family == KernelFamily.RBF:
            kernel = KernelSpec.rbf(opts["gamma"], bias)
        elif family == KernelFamily.POLYNOMIAL:
            kernel = KernelSpec.polynomial(opts["degree"], opts["coef0"], bias)
        else:
            kernel = KernelSpec.linear(bias)
        return TrainConfig(
            kernel=kernel,
            cost_C=opts["cost_c"],
            gabp=gabp_settings(opts),
            loading_mode=LoadingMode(config.loading_mode_name(opts["loading"])),
            sv_threshold=opts["sv_threshold"],
        )
    except UsageError:
        raise
    except ValueError as e:
        raise UsageError(str(e)) from None


# -------------------------
# Matrix file for `solve`
# -------------------------
def parse_matrix_file(stream: TextIO) -> Tuple[SymmetricMatrix, np.ndarray]:
    """
    1 行目 n、続く n 行に n 個の実数（W の行）、最後の 1 行に n 個の実数（b）。
    空行は読み飛ばす。
    """
    lines = [(no, ln.split()) for no, ln in enumerate(stream, start=1) if ln.strip()]
    if not lines:
        raise ParseError("empty matrix file", line=1)
    no, first = lines[0]
    try:
        n = int(first[0])
    except ValueError:
        raise ParseError(f"first line must hold the order n, got {first[0]!r}", line=no) from None
    if n < 1 or len(first) != 1:
        raise ParseError("first line must hold a single positive integer n", line=no)
    if len(lines) != n + 2:
        raise ParseError(f"expected {n} matrix rows and one vector line after n={n}, got {len(lines) - 1} lines", line=lines[-1][0])

    def _reals(no: int, toks: List[str]) -> List[float]:
        if len(toks) != n:
            raise ParseError(f"expected {n} values, got {len(toks)}", line=no)
        vals = []
        for col, t in enumerate(toks, start=1):
            try:
                vals.append(float(t))
            except ValueError:
                raise ParseError(f"not a real number: {t!r}", line=no, column=col) from None
        return vals

    rows = [_reals(no, toks) for no, toks in lines[1:n + 1]]
    b = _reals(*lines[n + 1])
    return SymmetricMatrix.from_rows(rows), np.array(b)


# -------------------------
# Controller
# -------------------------
@dataclass
class CommandResult:
    report: Dict[str, Any]
    exit_code: int = EXIT_OK
    records: List[IterationRecord] = field(default_factory=list)


class CommandController:
    """
    CLI サブコマンド（solve / train / predict / bench）の実体。

    やらないこと:
    - argv の解釈（= main.py）
    - 数値計算そのもの（= core/*）
    """

    def __init__(self, opts: Dict[str, Any]) -> None:
        self.opts = opts
        tpath = opts.get("telemetry")
        self.telemetry = RunTelemetry(
            Path(tpath) if tpath else None,
            context={"variant": opts.get("variant"), "schedule": opts.get("schedule")},
        )

    # ---- helpers ----
    def _base_report(self, command: str) -> Dict[str, Any]:
        return {"command": command, "config": options_echo(self.opts)}

    def _load_dataset(self, path: str | Path, feature_dim: Optional[int] = None) -> Dataset:
        return datasets.load_dataset(
            path,
            self.opts["format"],
            positive_class=self.opts["positive_class"],
            label_column=self.opts["label_column"],
            feature_dim=feature_dim,
        )

    def _training_data(self, path: Optional[str]) -> Tuple[Dataset, Optional[Dataset]]:
        if self.opts["synthetic"] is not None:
            data = datasets.make_two_gaussians(self.opts["synthetic"], seed=self.opts["seed"])
        elif path:
            data = self._load_dataset(path)
        else:
            raise UsageError("train/bench need a DATASET path or --synthetic N")

        test: Optional[Dataset] = None
        if self.opts["test"]:
            test = self._load_dataset(self.opts["test"], feature_dim=data.feature_dim)
        elif self.opts["test_fraction"] is not None:
            try:
                data, test = datasets.train_test_split(data, self.opts["test_fraction"], self.opts["seed"])
            except ValueError as e:
                raise UsageError(str(e)) from None
        return data, test

    def _on_round(self, record: IterationRecord) -> None:
        self.telemetry.on_iteration(record)

    def _train(self, data: Dataset, cfg: TrainConfig, workers: Optional[int]) -> TrainedModel:
        if workers is None:
            return train(data.points, cfg, on_sweep=self.telemetry.on_sweep)
        if cfg.gabp.schedule != Schedule.SYNCHRONOUS:
            raise UsageError("--workers runs synchronous rounds only; drop --schedule async")
        return distributed.train_distributed(data.points, cfg, workers, on_round=self._on_round)

    # ---- solve ----
    def solve(self, matrix_path: str) -> CommandResult:
        with open(matrix_path, "r", encoding="utf-8") as f:
            W, b = parse_matrix_file(f)
        settings = gabp_settings(self.opts)
        problem = gabp.GabpProblem.from_settings(W, b, settings)
        workers = self.opts["workers"]
        if workers is None:
            solution = gabp.solve(problem, self.telemetry.on_sweep)
        else:
            if settings.schedule != Schedule.SYNCHRONOUS:
                raise UsageError("--workers runs synchronous rounds only; drop --schedule async")
            solution = distributed.solve_distributed(problem, workers, on_round=self._on_round)
        self.telemetry.on_finished(solution.summary())

        report = self._base_report("solve")
        report.update(solution.summary())
        report["means"] = [float(v) for v in solution.means]
        report["precisions"] = [float(v) for v in solution.precisions]
        report["residual"] = residual_inf(W, b, solution.means) if np.all(np.isfinite(solution.means)) else None
        return CommandResult(report, EXIT_OK if solution.converged else EXIT_NOT_CONVERGED, self.telemetry.records)

    # ---- train ----
    def train(self, dataset_path: Optional[str]) -> CommandResult:
        data, test = self._training_data(dataset_path)
        provenance: Dict[str, Any] = {"train_source": data.source, "scaled": bool(self.opts["scale"])}
        if self.opts["scale"]:
            scaler = datasets.MinMaxScaler.fit(data)
            data = scaler.transform(data)
            test = scaler.transform(test) if test is not None else None
            provenance["scaler"] = scaler.to_dict()
            logger.info("train: min-max scaling fitted on %d training points", len(data))

        cfg = train_config(self.opts, len(data))
        started = time.perf_counter()
        model = self._train(data, cfg, self.opts["workers"])
        elapsed = time.perf_counter() - started
        self.telemetry.on_finished(model.solution.summary())

        if self.opts["model_out"]:
            JsonModelRepository(self.opts["model_out"]).save(model, provenance)

        echo = {**options_echo(self.opts), "train_config": cfg.to_dict(), "provenance": provenance}
        evaluated_on = test if test is not None else data
        run = evaluate(model, evaluated_on, echo, elapsed)
        report = self._base_report("train")
        report["report"] = run.to_dict()
        report["evaluated_on"] = "test" if test is not None else "train"
        report["n_train"] = model.n_train
        report["n_support"] = len(model.support_indices)
        return CommandResult(report, EXIT_OK, self.telemetry.records)

    # ---- predict ----
    def predict(self, dataset_path: str) -> CommandResult:
        if not self.opts["model"]:
            raise UsageError("predict needs --model PATH")
        repo = JsonModelRepository(self.opts["model"])
        model = repo.load()
        provenance = repo.load_provenance()
        data = self._load_dataset(dataset_path, feature_dim=model.feature_dim)
        scaler_d = provenance.get("scaler")
        if scaler_d:
            scaler = datasets.MinMaxScaler(np.array(scaler_d["minimum"], dtype=np.float64), np.array(scaler_d["span"], dtype=np.float64))
            data = scaler.transform(data)

        started = time.perf_counter()
        pred = predict(model, data.points, support_only=self.opts["support_only"])
        elapsed = time.perf_counter() - started
        run = evaluate(model, data, {**options_echo(self.opts), "provenance": provenance}, elapsed, support_only=self.opts["support_only"])

        if self.opts["labels_out"]:
            out = Path(self.opts["labels_out"])
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text("".join(f"{lab:+d}\n" for lab in pred.labels), encoding="utf-8")

        report = self._base_report("predict")
        report["labels"] = list(pred.labels)
        report["report"] = run.to_dict()
        return CommandResult(report, EXIT_OK)

    # ---- bench ----
    def bench(self, dataset_path: Optional[str]) -> CommandResult:
        data, _ = self._training_data(dataset_path)
        cfg = train_config(self.opts, len(data))
        if cfg.gabp.schedule != Schedule.SYNCHRONOUS:
            raise UsageError("bench runs the distributed runtime, which is synchronous only")

        runs: List[Dict[str, Any]] = []
        baseline: Optional[TrainedModel] = None
        baseline_p = 0
        equivalent = True
        exit_code = EXIT_OK
        for p in self.opts["workers_list"]:
            if p > len(data):
                logger.warning("bench: skipping p=%d (only %d points)", p, len(data))
                continue
            started = time.perf_counter()
            try:
                model = distributed.train_distributed(data.points, cfg, p, on_round=self._on_round)
            except GabpNotConvergedError as e:
                sol: Optional[GabpSolution] = e.solution
                runs.append({"workers": p, "converged": False, "iterations_used": sol.iterations_used if sol else None})
                exit_code = EXIT_NOT_CONVERGED
                continue
            elapsed = time.perf_counter() - started
            entry: Dict[str, Any] = {
                "workers": p,
                "wall_time_seconds": elapsed,
                "iterations_used": model.solution.iterations_used,
                "converged": model.solution.converged,
                "rows_per_worker": distributed.memory_footprint(len(data), p).rows_per_worker,
            }
            if baseline is None:
                baseline, baseline_p = model, p
                entry["max_abs_diff"] = 0.0
            else:
                diff = float(np.max(np.abs(model.weights - baseline.weights)))
                entry["max_abs_diff"] = diff
                if diff > 1e-8:
                    equivalent = False
                    logger.warning("bench: p=%d deviates from p=%d by %.3e", p, baseline_p, diff)
            runs.append(entry)

        report = self._base_report("bench")
        report["n"] = len(data)
        report["runs"] = runs
        report["equivalent"] = equivalent
        return CommandResult(report, exit_code, self.telemetry.records)


def run_command(command: str, target: Optional[str], flags: Dict[str, Any], config_path: Optional[str] = None) -> CommandResult:
    file_values = read_config_file(config_path) if config_path else None
    opts = merge_options(flags, file_values)
    ctl = CommandController(opts)
    if command == "solve":
        if not target:
            raise UsageError("solve needs a MATRIX file")
        return ctl.solve(target)
    if command == "train":
        return ctl.train(target)
    if command == "predict":
        if not target:
            raise UsageError("predict needs a DATASET file")
        return ctl.predict(target)
    if command == "bench":
        return ctl.bench(target)
    raise UsageError(f"unknown command: {command!r}")
