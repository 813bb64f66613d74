from __future__ import annotations

import argparse
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

import openpyxl

import config
from dataset_repository import rows_to_dataset, serialize_libsvm

"""
build 時だけ使う変換: .xlsx（1 行 1 点、1 列がラベル）-> libsvm テキスト + provenance JSON。
実行時（main.py / controller.py）は openpyxl に依存しない。

  python -m tools.build_libsvm_from_xlsx data/pageblocks.xlsx --label-column -1 --positive-class 1
"""


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8")


def convert(
    excel_path: Path,
    out_path: Path,
    label_column: int,
    positive_class: str,
    sheet_name: Optional[str] = None,
    header_rows: int = 0,
) -> int:
    if not excel_path.exists():
        raise FileNotFoundError(f"Excel not found: {excel_path}")

    wb = openpyxl.load_workbook(excel_path, data_only=True, read_only=True)
    try:
        ws = wb[sheet_name] if sheet_name else wb.worksheets[0]
        rows = ws.iter_rows(min_row=1 + header_rows, values_only=True)
        dataset = rows_to_dataset(rows, label_column, positive_class, source=f"{excel_path}:{ws.title}")
        title = ws.title
    finally:
        wb.close()

    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(serialize_libsvm(dataset), encoding="utf-8")

    positives = sum(1 for p in dataset.points if p.label == 1.0)
    now = datetime.now(timezone.utc).astimezone()
    _write_json(
        out_path.with_suffix(out_path.suffix + ".json"),
        {
            "meta": {
                "schema_version": 1,
                "generated_at": now.isoformat(timespec="seconds"),
                "source": str(excel_path),
                "sheet": title,
            },
            "points": len(dataset),
            "feature_dim": dataset.feature_dim,
            "positive_class": positive_class,
            "positives": positives,
            "negatives": len(dataset) - positives,
        },
    )
    print(f"[OK] wrote: {out_path}  points={len(dataset)} dim={dataset.feature_dim} positives={positives}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(description="convert an .xlsx sheet into a libsvm dataset")
    ap.add_argument("excel", type=Path)
    ap.add_argument("--out", type=Path, default=None, help=f"default: {config.DATA_DIR}/<name>.libsvm")
    ap.add_argument("--sheet", default=None)
    ap.add_argument("--label-column", type=int, default=-1)
    ap.add_argument("--positive-class", required=True)
    ap.add_argument("--header-rows", type=int, default=0)
    args = ap.parse_args(argv)

    out = args.out or (config.DATA_DIR / f"{args.excel.stem}.libsvm")
    return convert(args.excel, out, args.label_column, args.positive_class, args.sheet, args.header_rows)


if __name__ == "__main__":
    raise SystemExit(main())
