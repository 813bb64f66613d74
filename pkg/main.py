import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, TextIO

import config
from controller import EXIT_NOT_CONVERGED, EXIT_USAGE, CommandResult, run_command
from core.errors import GabpNotConvergedError, UsageError

logger = logging.getLogger("gabp_svm.main")

COMMANDS = ("solve", "train", "predict", "bench")


def _init_logging_from_env() -> None:
    level_name = os.getenv(config.ENV_LOG_LEVEL, "INFO").upper()
    level = getattr(logging, level_name, logging.INFO)
    kwargs = {
        "level": level,
        "format": "%(asctime)s %(levelname)s [%(name)s] %(message)s",
        # stdout は report 専用
        "stream": sys.stderr,
    }
    try:
        logging.basicConfig(force=True, **kwargs)
    except Exception:
        # ログ初期化失敗でコマンド本体を妨げない
        pass


class _ArgumentParser(argparse.ArgumentParser):
    """argparse の SystemExit(2) を UsageError（exit 1）に寄せる"""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{message}\n\n{self.format_usage()}")


def _add_options(p: argparse.ArgumentParser) -> None:
    # 既定値は controller.OPTION_SPECS 側（ここは全部 None = 未指定）
    g = p.add_argument_group("kernel / SVM")
    g.add_argument("--kernel", choices=sorted(config.KERNEL_FLAGS))
    g.add_argument("--gamma")
    g.add_argument("--degree")
    g.add_argument("--coef0")
    g.add_argument("--bias", help="auto (= 1/N) or a real constant")
    g.add_argument("--cost-c", dest="cost_c")
    g.add_argument("--loading", choices=sorted(config.LOADING_FLAGS))
    g.add_argument("--sv-threshold", dest="sv_threshold")

    g = p.add_argument_group("GaBP")
    g.add_argument("--epsilon")
    g.add_argument("--max-iters", dest="max_iters")
    g.add_argument("--schedule", choices=sorted(config.SCHEDULE_FLAGS))
    g.add_argument("--variant", choices=sorted(config.VARIANT_FLAGS))
    g.add_argument("--workers", help=f"row-partitioned workers (default ${config.ENV_WORKERS})")
    g.add_argument("--workers-list", dest="workers_list", help="bench: comma separated worker counts")

    g = p.add_argument_group("data")
    g.add_argument("--format", choices=("libsvm", "csv"))
    g.add_argument("--label-column", dest="label_column")
    g.add_argument("--positive-class", dest="positive_class")
    g.add_argument("--scale", action="store_const", const=True, help="min-max scale features to [0, 1]")
    g.add_argument("--seed")
    g.add_argument("--test-fraction", dest="test_fraction")
    g.add_argument("--test", help="held-out dataset file")
    g.add_argument("--synthetic", help="use N synthetic two-Gaussian points instead of a file")

    g = p.add_argument_group("I/O")
    g.add_argument("--model", help="model file to read (predict)")
    g.add_argument("--model-out", dest="model_out")
    g.add_argument("--labels-out", dest="labels_out")
    g.add_argument("--support-only", dest="support_only", action="store_const", const=True)
    g.add_argument("--telemetry", help="append JSONL iteration events to this file")
    g.add_argument("--config", dest="config_path", help="JSON file with option defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="gabp-svm", description="GaBP linear solver and SVM/KRR classifier")
    sub = parser.add_subparsers(dest="command", parser_class=_ArgumentParser)

    p = sub.add_parser("solve", help="solve W x = b from a matrix file")
    p.add_argument("target", metavar="MATRIX")
    _add_options(p)

    p = sub.add_parser("train", help="train an SVM on a dataset")
    p.add_argument("target", metavar="DATASET", nargs="?")
    _add_options(p)

    p = sub.add_parser("predict", help="label a dataset with a saved model")
    p.add_argument("target", metavar="DATASET")
    _add_options(p)

    p = sub.add_parser("bench", help="train over several worker counts and compare")
    p.add_argument("target", metavar="DATASET", nargs="?")
    _add_options(p)
    return parser


def _emit(doc: Dict[str, Any], out: TextIO) -> None:
    out.write(json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n")


def cli_main(argv: Optional[Sequence[str]] = None, out: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args_list: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parser.parse_args(args_list)
        if ns.command not in COMMANDS:
            raise UsageError(f"missing subcommand (choose from {', '.join(COMMANDS)})\n\n{parser.format_help()}")
        flags = {k: v for k, v in vars(ns).items() if k not in ("command", "target", "config_path")}
        result: CommandResult = run_command(ns.command, ns.target, flags, ns.config_path)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except GabpNotConvergedError as e:
        doc: Dict[str, Any] = {"command": args_list[0] if args_list else "", "converged": False, "error": str(e)}
        if e.solution is not None:
            doc.update(e.solution.summary())
        if e.diagnosis is not None:
            doc["diagnosis"] = e.diagnosis.to_dict()
        _emit(doc, out)
        logger.error("%s", e)
        return EXIT_NOT_CONVERGED
    except (ValueError, ArithmeticError, OSError) as e:
        # ParseError / ModelFormatError / DimensionMismatch / ZeroPivot / ファイル無し
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE

    _emit(result.report, out)
    return result.exit_code


def main() -> None:
    _init_logging_from_env()
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
