from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

import config
from core.errors import ModelFormatError
from core.models import (
    ConvergenceDiagnosis,
    GabpSolution,
    KernelSpec,
    LoadingMode,
    TrainedModel,
)
from core.telemetry import iso_now

logger = logging.getLogger("gabp_svm.json_model_repository")


def model_to_record(model: TrainedModel, provenance: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    float は Python の repr（最短往復表現）で JSON に落ちるので save -> load で値は変わらない。
    """
    sol = model.solution
    record: Dict[str, Any] = {
        "meta": {
            "schema_version": config.MODEL_SCHEMA_VERSION,
            "created_at": iso_now(),
        },
        "model": {
            "kernel": model.kernel.to_dict(),
            "cost_C": float(model.cost_C),
            "loading_mode": model.loading_mode.value,
            "sv_threshold": float(model.sv_threshold),
            "weights": [float(v) for v in model.weights],
            "support_indices": list(model.support_indices),
            "training_features": [[float(v) for v in row] for row in model.training_features],
            "training_labels": [float(v) for v in model.training_labels],
            "solution": {
                "precisions": [float(v) for v in sol.precisions],
                **sol.summary(),
            },
            "diagnosis": model.diagnosis.to_dict(),
        },
    }
    if provenance:
        record["provenance"] = dict(provenance)
    return record


def _require(d: Dict[str, Any], key: str, kind: type | tuple[type, ...]) -> Any:
    if key not in d:
        raise ModelFormatError(f"model record: missing '{key}'")
    v = d[key]
    if not isinstance(v, kind):
        raise ModelFormatError(f"model record: '{key}' has type {type(v).__name__}")
    return v


def record_to_model(root: Any) -> TrainedModel:
    if not isinstance(root, dict):
        raise ModelFormatError("model file must be an object with keys: meta, model")

    meta = root.get("meta")
    if not isinstance(meta, dict):
        raise ModelFormatError("model file: 'meta' must be a dict")
    # schema_version 無しは旧形式として 1 扱い
    try:
        schema_version = int(meta.get("schema_version", 1) or 1)
    except (TypeError, ValueError):
        raise ModelFormatError(f"model file: invalid schema_version {meta.get('schema_version')!r}") from None
    if schema_version != config.MODEL_SCHEMA_VERSION:
        raise ModelFormatError(
            f"model file: unsupported schema_version={schema_version} "
            f"(this build reads {config.MODEL_SCHEMA_VERSION}); retrain to regenerate the model"
        )

    m = root.get("model")
    if not isinstance(m, dict):
        raise ModelFormatError("model file: 'model' must be a dict")

    try:
        sol_d = _require(m, "solution", dict)
        diag_d = _require(m, "diagnosis", dict)
        weights = np.array(_require(m, "weights", list), dtype=np.float64)
        features = _require(m, "training_features", list)
        X = np.array(features, dtype=np.float64) if features else np.zeros((0, 0))
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, 0)
        solution = GabpSolution(
            means=weights,
            precisions=np.array(_require(sol_d, "precisions", list), dtype=np.float64),
            iterations_used=int(_require(sol_d, "iterations_used", int)),
            converged=bool(_require(sol_d, "converged", bool)),
            final_delta=float(_require(sol_d, "final_delta", (int, float))),
        )
        diagnosis = ConvergenceDiagnosis(
            spectral_radius_estimate=float(_require(diag_d, "spectral_radius_estimate", (int, float))),
            is_diagonally_dominant=bool(_require(diag_d, "is_diagonally_dominant", bool)),
            dominance_margin=float(_require(diag_d, "dominance_margin", (int, float))),
        )
        return TrainedModel(
            weights=weights,
            support_indices=tuple(int(i) for i in _require(m, "support_indices", list)),
            training_features=X,
            training_labels=np.array(_require(m, "training_labels", list), dtype=np.float64),
            kernel=KernelSpec.from_dict(_require(m, "kernel", dict)),
            solution=solution,
            diagnosis=diagnosis,
            cost_C=float(_require(m, "cost_C", (int, float))),
            loading_mode=LoadingMode(str(_require(m, "loading_mode", str))),
            sv_threshold=float(_require(m, "sv_threshold", (int, float))),
        )
    except ModelFormatError:
        raise
    except (TypeError, ValueError, KeyError) as e:
        raise ModelFormatError(f"model file: malformed model record: {e}") from e


class JsonModelRepository:
    """
    学習済みモデルの保存 / 読込（JSON 1 ファイル）。

    形式:
      {"meta": {"schema_version": 1, "created_at": ...},
       "model": {kernel, cost_C, loading_mode, sv_threshold, weights, support_indices,
                 training_features, training_labels, solution, diagnosis}}
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)

    def save(self, model: TrainedModel, provenance: Optional[Dict[str, Any]] = None) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(model_to_record(model, provenance), ensure_ascii=False, indent=2)
        self.path.write_text(text + "\n", encoding="utf-8")
        logger.info("saved model n_train=%d to %s", model.n_train, self.path)
        return self.path

    def _read(self) -> Any:
        if not self.path.exists():
            raise FileNotFoundError(f"model file not found: {self.path}")
        try:
            return json.loads(self.path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ModelFormatError(f"{self.path}: not valid JSON: {e}") from e

    def load(self) -> TrainedModel:
        model = record_to_model(self._read())
        logger.info("loaded model n_train=%d from %s", model.n_train, self.path)
        return model

    def load_provenance(self) -> Dict[str, Any]:
        """学習時の前処理など（scaler の min/span、データの出所）。無ければ空 dict。"""
        root = self._read()
        prov = root.get("provenance") if isinstance(root, dict) else None
        if prov is None:
            return {}
        if not isinstance(prov, dict):
            raise ModelFormatError("model file: 'provenance' must be a dict")
        return prov
