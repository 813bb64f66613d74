# core/telemetry.py
from __future__ import annotations

import json
import uuid
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

SCHEMA_VERSION = 1


def iso_now() -> str:
    return datetime.now(timezone.utc).astimezone().isoformat(timespec="seconds")


def new_session_id() -> str:
    return uuid.uuid4().hex


@dataclass(frozen=True)
class IterationRecord:
    """
    1 iteration（sync なら 1 round、async なら 1 sweep）ぶんの構造化レコード。
    scalars_communicated: edge 版は 2·(有向 edge 数)、broadcast / 分散版は 2n。
    """
    iteration: int
    delta: float
    scalars_communicated: int
    workers: int = 1

    @classmethod
    def from_state(cls, state: Any, workers: int = 1) -> "IterationRecord":
        return cls(
            iteration=int(state.iteration),
            delta=float(state.last_delta),
            scalars_communicated=int(state.scalars_communicated),
            workers=workers,
        )


@dataclass(frozen=True)
class Event:
    schema_version: int
    ts: str
    event_type: str
    session_id: str
    payload: Dict[str, Any]


class JsonlEventSink:
    """
    1行1JSON（JSONL）で追記。
    """
    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, event: Event) -> None:
        line = json.dumps(asdict(event), ensure_ascii=False, separators=(",", ":"))
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(line + "\n")


class RunTelemetry:
    """
    engine / runtime の callback に渡す薄いラッパー。sink が無ければメモリに貯めるだけ。
    """
    def __init__(self, path: Optional[Path] = None, context: Optional[Dict[str, Any]] = None) -> None:
        self.session_id = new_session_id()
        self.sink = JsonlEventSink(path) if path is not None else None
        self.context = dict(context or {})
        self.records: list[IterationRecord] = []

    def _emit(self, event_type: str, payload: Dict[str, Any]) -> None:
        if self.sink is None:
            return
        self.sink.append(
            Event(
                schema_version=SCHEMA_VERSION,
                ts=iso_now(),
                event_type=event_type,
                session_id=self.session_id,
                payload={**self.context, **payload},
            )
        )

    def on_iteration(self, record: IterationRecord) -> None:
        self.records.append(record)
        self._emit("iteration", asdict(record))

    def on_sweep(self, state: Any) -> None:
        # gabp.SweepHook 互換
        self.on_iteration(IterationRecord.from_state(state))

    def on_finished(self, summary: Dict[str, Any]) -> None:
        self._emit("run_finished", summary)
