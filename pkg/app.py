"""XAIBench: evaluate attribution methods on synthetic ensemble data."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import cast

from dotenv import load_dotenv

from entities import PipelineConfig
from entities.config import METRICS
from report import render_ranking_table
from src import __version__, pipeline
from src.errors import ArtifactError, ConfigError, StageOrderError, XaiBenchError

EXIT_CODES: dict[type[XaiBenchError], int] = {
    ConfigError: 2,
    StageOrderError: 3,
    ArtifactError: 4,
}

# LogRecord attributes that are not user-supplied `extra` fields.
_RESERVED = set(vars(logging.makeLogRecord({}))) | {"message", "asctime"}


class KeyValueFormatter(logging.Formatter):
    """`ts=... level=... logger=... msg="..."` followed by any extra fields."""

    def format(self, record: logging.LogRecord) -> str:
        ts = datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(
            timespec="milliseconds"
        )
        parts = [
            f"ts={ts}",
            f"level={record.levelname}",
            f"logger={record.name}",
            f"msg={json.dumps(record.getMessage())}",
        ]
        for key, value in record.__dict__.items():
            if key in _RESERVED or key.startswith("_"):
                continue
            text = str(value)
            parts.append(f"{key}={json.dumps(text) if ' ' in text else text}")
        if record.exc_info:
            parts.append(f"exc={json.dumps(self.formatException(record.exc_info))}")
        return " ".join(parts)


def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(KeyValueFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


def _csv(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _ = common.add_argument("--config", type=Path, help="JSON config file")
    _ = common.add_argument(
        "--seed", type=int, help="master seed; re-derives all stage seeds"
    )
    _ = common.add_argument(
        "--workers",
        type=int,
        default=int(os.getenv("XAIBENCH_WORKERS", "1")),
        help="parallel evaluation workers (default: $XAIBENCH_WORKERS or 1)",
    )
    _ = common.add_argument(
        "--out", type=Path, help="output directory (default: $XAIBENCH_OUT or out)"
    )
    _ = common.add_argument(
        "--arch", choices=["mlp", "cnn"], help="classifier architecture"
    )
    _ = common.add_argument("--methods", type=_csv, help="comma-separated method ids")
    _ = common.add_argument(
        "--metrics",
        type=_csv,
        help=f"comma-separated metric ids ({','.join(METRICS)})",
    )
    _ = common.add_argument(
        "--progress", action="store_true", help="show progress bars"
    )

    parser = argparse.ArgumentParser(
        prog="xaibench",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _ = parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "generate the synthetic dataset"),
        ("train", "train the classifier"),
        ("explain", "explain selected test samples with every method"),
        ("evaluate", "score the explanations with every metric"),
        ("rank", "normalize, aggregate and rank per property"),
        ("report", "write the spyder chart and ranking table"),
        ("run-all", "run every stage in order"),
    ):
        _ = sub.add_parser(name, parents=[common], help=help_text)
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    """File values first, then command-line overrides."""
    raw: dict[str, object] = {}
    config_path = cast("Path | None", args.config)
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("--config", str(exc)) from exc
        if not isinstance(loaded, dict):
            raise ConfigError("--config", "expected a JSON object")
        raw = cast("dict[str, object]", loaded)
    if "paths" not in raw:
        raw = {**raw, "paths": {"out": os.getenv("XAIBENCH_OUT", "out")}}
    config = PipelineConfig.from_dict(raw)

    if args.seed is not None:
        config = config.with_seed(cast("int", args.seed))
    if args.arch is not None:
        config = replace(config, model=replace(config.model, arch=args.arch))
    if args.methods is not None:
        config = replace(config, methods=cast("tuple[str, ...]", args.methods))
    if args.metrics is not None:
        config = replace(config, metric_ids=cast("tuple[str, ...]", args.metrics))
    if args.out is not None:
        config = replace(config, paths=replace(config.paths, out=str(args.out)))
    config = config.aligned()
    config.validate()
    return config


def main(argv: list[str] | None = None) -> int:
    """Command-line entrypoint; returns the process exit code."""
    _ = load_dotenv()
    setup_logging(os.getenv("XAIBENCH_LOG_LEVEL", "INFO"))
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        ctx = pipeline.RunContext(
            config=config,
            workers=max(1, cast("int", args.workers)),
            progress=cast("bool", args.progress) or sys.stderr.isatty(),
        )
        command = cast("str", args.command)
        if command == "run-all":
            pipeline.run_all(ctx)
        elif command == "rank":
            reports = pipeline.rank(ctx)
            print(render_ranking_table(reports, config.ranking.properties), end="")
        else:
            _ = pipeline.STAGES[command](ctx)
        if command in ("report", "run-all"):
            ranking = ctx.paths.report / "ranking.txt"
            print(ranking.read_text(encoding="utf-8"), end="")
    except XaiBenchError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        codes = (code for cls, code in EXIT_CODES.items() if isinstance(exc, cls))
        return next(codes, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
