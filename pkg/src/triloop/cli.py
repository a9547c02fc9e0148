"""Command-line evaluation driver.

    triloop run   --config run.cfg --scans dir/ --poses poses.txt --out results/
    triloop sweep --records results/records.csv --gt results/gt.csv --out pr.csv

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (
    ConfigError,
    EmptyInput,
    MalformedRecord,
    NoGroundTruth,
    TriloopError,
    UnsupportedFormat,
)
from .evaluation import pr_sweep, read_gt_csv, read_records_csv, run_sequence, write_pr_csv
from .pipeline import PipelineConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triloop",
        description="Triangle-descriptor place recognition over LiDAR keyframes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="replay a scan sequence and detect loops")
    run.add_argument("--config", help="key=value parameter file (defaults used if omitted)")
    run.add_argument("--scans", required=True, help="directory of .bin or .pcd scans")
    run.add_argument("--poses", required=True, help="pose file, one line per scan")
    run.add_argument("--out", required=True, help="output directory for CSV/JSON results")
    run.add_argument(
        "--downsample-leaf",
        type=float,
        default=None,
        help="override pre-extraction downsample leaf (0 disables)",
    )

    sweep = sub.add_parser("sweep", help="re-sweep acceptance thresholds on saved records")
    sweep.add_argument("--records", required=True, help="records.csv from a run")
    sweep.add_argument("--gt", required=True, help="gt.csv from a run")
    sweep.add_argument("--out", required=True, help="output PR csv path")
    sweep.add_argument(
        "--grid",
        default="0.1:0.9:0.1",
        help="sigma_pc grid as start:stop:step (inclusive)",
    )
    return parser


def _parse_grid(spec: str) -> list[float]:
    try:
        start, stop, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise ConfigError(f"bad grid spec {spec!r}, expected start:stop:step") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"bad grid spec {spec!r}")
    grid = []
    value = start
    while value <= stop + 1e-12:
        grid.append(round(value, 6))
        value += step
    return grid


def _cmd_run(args) -> int:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.downsample_leaf is not None:
        cfg.downsample_leaf = args.downsample_leaf
    result = run_sequence(cfg, args.scans, args.poses, out_dir=args.out)
    s = result.summary
    print(
        f"{s['n_keyframes']} keyframes, {s['n_detections']} loop detections "
        f"(tp={s['tp']} fp={s['fp']} fn={s['fn']} at sigma_pc={cfg.sigma_pc})"
    )
    print(f"results written to {args.out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    records = read_records_csv(args.records)
    gt = read_gt_csv(args.gt)
    rows = pr_sweep(records, gt, grid=_parse_grid(args.grid))
    write_pr_csv(args.out, rows)
    print(f"{len(rows)} thresholds written to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_sweep(args)
    except (ConfigError, NoGroundTruth) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, MalformedRecord, UnsupportedFormat, EmptyInput) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TriloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
