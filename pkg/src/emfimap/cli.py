"""Command line entry point: ``emfimap <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from .campaign import (LOG_DIR_ENV, ConfigError, PersistenceError, TrialLog, class_totals,
                       load_config, maps_from_records, plan_trials, read_log, reclassify,
                       replay_campaign, run_campaign)
from .susceptibility import export_heatmap_csv, export_pgm, export_scatter_csv
from .targets import ground_truth_grid

DEFAULT_OUT = "emfimap-runs"


def _out_dir(args) -> str:
    return args.out or os.environ.get(LOG_DIR_ENV) or DEFAULT_OUT


def _artifact_name(config, key, suffix) -> str:
    pi, layer = key
    stem = f"{config.campaign_id}_{config.parameter_points[pi].digest()}"
    if config.heights is not None:
        stem += f"_z{config.layer_grids[layer].z:g}"
    return f"{stem}.{suffix}"


def _write_maps(config, maps, records, out_dir, formats, scale=None):
    written = []
    for key, smap in sorted(maps.items()):
        if "csv" in formats:
            path = os.path.join(out_dir, _artifact_name(config, key, "heatmap.csv"))
            with open(path, "w", encoding="ascii", newline="") as fh:
                fh.write(export_heatmap_csv(smap))
            written.append(path)
        if "scatter" in formats:
            rows = [r for r in records if (r.param_index, _layer_of(config, r)) == key]
            path = os.path.join(out_dir, _artifact_name(config, key, "scatter.csv"))
            with open(path, "w", encoding="ascii", newline="") as fh:
                fh.write(export_scatter_csv(rows))
            written.append(path)
        if "pgm" in formats:
            peak = max((c.error_count for c in smap.cells.values()), default=0)
            path = os.path.join(out_dir, _artifact_name(config, key, "pgm"))
            with open(path, "wb") as fh:
                fh.write(export_pgm(smap, scale or max(peak, 1)))
            written.append(path)
    return written


def _layer_of(config, record) -> int:
    for layer, g in enumerate(config.layer_grids):
        if abs(g.z - record.coordinate.z) <= 1e-9:
            return layer
    return 0


def cmd_plan(args) -> int:
    config = load_config(args.config, args.seed)
    plan = plan_trials(config)
    coords = sum(g.size for g in config.layer_grids)
    print(f"campaign {config.campaign_id} (config {config.config_hash()}, seed {config.seed})")
    print(f"target: {config.target.kind}")
    print(f"stage 0: {coords} coordinates x {config.sweep.size} parameter points x "
          f"{config.sweep.trials_per_point} trials = {len(plan)} trials")
    ref = config.refinement
    if ref.levels:
        print(f"stages 1..{ref.levels}: refine regions with fault rate >= {ref.threshold} "
              f"by factor {ref.factor} (data dependent)")
    else:
        print("refinement disabled")
    if args.list:
        for t in plan:
            c = t.coordinate
            print(f"{t.stage} {t.coordinate_index} ({c.x:g},{c.y:g},{c.z:g}) "
                  f"p{t.param_index} t{t.trial_index} seed={t.trial_seed:#018x}")
    return 0


def _run(args, config) -> int:
    out_dir = _out_dir(args)
    try:
        result = run_campaign(config, out_dir=out_dir, workers=args.workers)
    except PersistenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    written = _write_maps(config, result.maps, result.records, out_dir, ("csv", "pgm", "scatter"))
    print(f"log: {result.log_path}")
    for path in written:
        print(f"map: {path}")
    print("per-class totals: " + ", ".join(f"{k}={v}" for k, v in result.summary.items()))
    return 0


def cmd_run(args) -> int:
    return _run(args, load_config(args.config, args.seed))


def cmd_sweep(args) -> int:
    config = load_config(args.config, args.seed)
    config = replace(config, refinement=replace(config.refinement, enabled=False))
    rc = _run(args, config)
    if rc:
        return rc
    log = read_log(os.path.join(_out_dir(args), f"{config.campaign_id}.log.jsonl"))
    print("param  voltage  width_ns  polarity  offset_ns  trials  faults  rate")
    points = config.parameter_points
    for pi, p in enumerate(points):
        rs = [r for r in log.records if r.param_index == pi]
        faults = sum(r.classification.faulted for r in rs)
        rate = faults / len(rs) if rs else 0.0
        print(f"{pi:5d}  {p.voltage:7g}  {p.width_ns:8g}  {p.polarity.value:8s}  "
              f"{p.timing_offset_ns:9g}  {len(rs):6d}  {faults:6d}  {rate:.4f}")
    return 0


def cmd_classify(args) -> int:
    loaded = read_log(args.log)
    config = loaded.config
    changed = 0
    out_records = []
    for r, raw in zip(loaded.records, loaded.raw):
        obs, err = reclassify(r, loaded.nominal, config.target.kind)
        changed += (obs != r.classification) or (err != r.error_count)
        r.classification, r.error_count = obs, err
        r.extra = {k: v for k, v in raw.items() if k not in r._KNOWN}
        out_records.append(r)
    if args.out:
        tlog = TrialLog(loaded.header, args.out)
        for r in out_records:
            tlog.append(r)
        tlog.close()
        print(f"wrote {args.out}")
    print(f"re-classified {len(out_records)} trials, {changed} changed")
    print("per-class totals: " + ", ".join(f"{k}={v}"
                                             for k, v in class_totals(out_records).items()))
    return 0


def cmd_map(args) -> int:
    loaded = read_log(args.log)
    config = loaded.config
    maps = maps_from_records(config, loaded.records)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.log))
    os.makedirs(out_dir, exist_ok=True)
    for path in _write_maps(config, maps, loaded.records, out_dir, (args.format,), args.scale):
        print(path)
    return 0


def cmd_replay(args) -> int:
    report = replay_campaign(read_log(args.log))
    for ln in report.lines():
        print(ln)
    return 0 if report.ok else 1


def cmd_ground_truth(args) -> int:
    config = load_config(args.config, args.seed)
    backend = config.make_backend()
    p = config.parameter_points[args.param_index]
    for layer, grid in enumerate(config.layer_grids):
        rows = ground_truth_grid(config.target.susceptibility, grid, p, backend.timed)
        ox, oy = grid.origin
        print(f"# origin_x={ox!r},origin_y={oy!r},pitch={grid.pitch!r},"
              f"nx={grid.nx},ny={grid.ny},z={grid.z!r},param_index={args.param_index}")
        for row in rows:
            print(",".join(repr(v) for v in row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emfimap",
                                     description="Spatial EMFI mapping campaigns")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config")
        p.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                       help="override the config seed")
        p.set_defaults(func=fn)
        return p

    p = with_config("plan", cmd_plan, "print the staged trial plan")
    p.add_argument("--list", action="store_true", help="print every planned trial")
    for name, fn, help_ in (("run", cmd_run, "run a campaign, write log and maps"),
                            ("sweep", cmd_sweep, "coarse parameter sweep without refinement")):
        p = with_config(name, fn, help_)
        p.add_argument("--out", default=None, help=f"output directory (env {LOG_DIR_ENV})")
        p.add_argument("--workers", type=int, default=1)
    p = with_config("ground-truth", cmd_ground_truth, "dump simulator probability grid as CSV")
    p.add_argument("--param-index", type=int, default=0)

    p = sub.add_parser("classify", help="re-classify raw sessions in a trial log")
    p.add_argument("log")
    p.add_argument("--out", default=None, help="write a re-classified log here")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("map", help="export maps from a trial log")
    p.add_argument("log")
    p.add_argument("--format", choices=("csv", "pgm", "scatter"), default="csv")
    p.add_argument("--out", default=None)
    p.add_argument("--scale", type=int, default=None, help="PGM count mapped to white")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("replay", help="verify a trial log; exit 1 on any disagreement")
    p.add_argument("log")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
