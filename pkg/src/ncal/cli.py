"""Command-line entry point: ``ncal {score,select,simulate,collapse,longtail}``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .acquisition import score_candidates, select_top_k
from .collapse import collapse_report
from .errors import NcalError
from .io import (dumps_json, make_report, read_feature_dump, read_index, read_prediction_log,
                 read_report, report_result, write_index, write_records, write_report)
from .loop import STRATEGIES, ProtocolConfig, longtail_counts, make_longtail, run_experiment, summarize
from .pool import PoolState

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="ascii")
    else:
        sys.stdout.write(text)


def _pool_from_labels(ids, labels, num_classes: int) -> PoolState:
    labeled = {int(s): int(y) for s, y in zip(ids, labels) if y >= 0}
    unlabeled = [int(s) for s, y in zip(ids, labels) if y < 0]
    return PoolState.initial(num_classes, labeled, unlabeled)


def cmd_score(args) -> int:
    fm, labels = read_feature_dump(args.features)
    preds = read_prediction_log(args.predictions)
    if args.labeled:
        lab_ids, lab_y = read_index(args.labeled)
        known = dict(zip(lab_ids.tolist(), lab_y.tolist()))
        labels = np.array([known.get(int(s), -1) for s in fm.sample_ids])
    num_classes = args.num_classes or int(max(labels.max(), preds.labels.max())) + 1
    pool = _pool_from_labels(fm.sample_ids, labels, num_classes)
    result = score_candidates(fm, pool, preds, threads=args.threads)
    if args.k:
        result = result.with_selection(args.k)
    config = {"features": str(args.features), "predictions": str(args.predictions),
              "labeled": str(args.labeled) if args.labeled else None,
              "num_classes": num_classes, "k": args.k}
    report = make_report(result, config)
    if args.out:
        write_report(args.out, report)
    else:
        sys.stdout.write(dumps_json(report))
    return 0


def cmd_select(args) -> int:
    if not args.k:
        raise UsageError("select requires --k")
    result = report_result(read_report(args.report))
    ids = select_top_k(result, args.k)
    _emit("".join(f"{i}\n" for i in ids), args.out)
    return 0


def cmd_simulate(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        raw["seeds"] = [args.seed]
    if args.strategy and args.strategy != "all":
        raw["strategy"] = args.strategy
    config = ProtocolConfig.from_dict(raw)
    strategies = list(STRATEGIES) if args.strategy == "all" else [config.strategy]
    results = run_experiment(config, strategies, threads=args.threads)
    if args.out:
        write_records(args.out, results)
    summary = {"config": config.to_dict(), "strategies": summarize(results)}
    sys.stdout.write(dumps_json(summary))
    return 0


def cmd_collapse(args) -> int:
    fm, labels = read_feature_dump(args.features)
    num_classes = int(labels.max()) + 1
    pool = _pool_from_labels(fm.sample_ids, labels, num_classes)
    predictions = None
    if args.predictions:
        predictions = read_prediction_log(args.predictions).final()
    report = collapse_report(fm, pool, predictions)
    _emit(dumps_json(report.to_dict()), args.out)
    return 0


def cmd_longtail(args) -> int:
    if args.beta is None:
        raise UsageError("longtail requires --beta")
    if args.index:
        ids, labels = read_index(args.index)
        seed = args.seed or 0
        counts, rows = make_longtail(labels, args.beta, seed, args.n_max)
        if args.out:
            write_index(args.out, ids[rows], labels[rows])
        sys.stdout.write(dumps_json({"counts": counts, "total": int(sum(counts))}))
        return 0
    if args.n_max is None or args.num_classes is None:
        raise UsageError("longtail needs --index, or --n-max with --num-classes")
    counts = longtail_counts(args.n_max, args.num_classes, args.beta)
    _emit(dumps_json({"counts": counts, "total": int(sum(counts))}), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path)
    common.add_argument("--seed", type=int)
    common.add_argument("--strategy", choices=[*STRATEGIES, "all"])
    common.add_argument("--k", type=int)
    common.add_argument("--out", type=Path)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ncal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("score", parents=[common], help="score unlabeled candidates")
    p.add_argument("--features", type=Path, required=True, help="feature dump (.ncf)")
    p.add_argument("--predictions", type=Path, required=True, help="checkpoint prediction log")
    p.add_argument("--labeled", type=Path, help="sample_id,label file (default: dump index)")
    p.add_argument("--num-classes", type=int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", parents=[common], help="top-k ids from a selection report")
    p.add_argument("--report", type=Path, required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", parents=[common], help="run the active-learning protocol")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("collapse", parents=[common], help="neural-collapse diagnostics")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--predictions", type=Path)
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("longtail", parents=[common], help="exponentially decayed class counts")
    p.add_argument("--index", type=Path, help="sample_id,label pool index to subsample")
    p.add_argument("--beta", type=float)
    p.add_argument("--n-max", type=int)
    p.add_argument("--num-classes", type=int)
    p.set_defaults(func=cmd_longtail)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("ncal: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"ncal {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NcalError, OSError, json.JSONDecodeError) as e:
        print(f"ncal {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
