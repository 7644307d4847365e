"""Command-line interface: ``mktcluster <subcommand> [--config run.json] ...``.

Every subcommand reads the same JSON config as ``run``; flags given on the
command line override the matching config keys.
"""
import argparse
import glob
import json
import logging
import os
import sys

from .clustering import drop_isolated_scores, read_scores, write_scores
from .graph import (BipartiteSnapshot, build_snapshot, coverage_split,
                    ingest_trades, read_turnover)
from .grouptests import write_verdicts
from .instability import read_reports, write_reports
from .panel import (describe_panel, export_panel, read_fundamentals,
                    read_market, read_prices, read_volumes, write_panel)
from .pipeline import (EXIT_OK, EXIT_STAGE, EXIT_USAGE, ConfigError, RunConfig,
                       compare_groups, instability_reports, make_windows,
                       run_pipeline, solve_and_score, var_table, window_scores)
from .synth import write_scenario

logger = logging.getLogger("mktcluster")

# flag -> RunConfig field
_OVERRIDES = {
    "trades": "trades", "prices": "prices", "turnover": "turnover",
    "market": "market", "fundamentals": "fundamentals", "volumes": "volumes",
    "months": "months", "capacity": "capacity", "window_length": "window_length",
    "hill_fraction": "hill_fraction", "coverage_threshold": "coverage_threshold",
    "var_level": "var_level", "var_window_months": "var_window_months",
    "var_method": "var_method", "isolated_policy": "isolated_policy",
    "output": "output", "seed": "seed", "workers": "workers",
}


def _common(p):
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--trades")
    p.add_argument("--prices")
    p.add_argument("--turnover", help="external yearly turnover CSV")
    p.add_argument("--market", help="month,MKTF,VIX CSV")
    p.add_argument("--fundamentals", help="security_id,month,MCAP,PB3,DY,LEV3 CSV")
    p.add_argument("--volumes", help="security_id,date,euro_volume CSV")
    p.add_argument("--months", nargs=2, metavar=("FIRST", "LAST"))
    p.add_argument("--capacity", choices=("principal", "agent", "all"))
    p.add_argument("--window-length", choices=("annual", "2-month"))
    p.add_argument("--hill-fraction", type=float)
    p.add_argument("--coverage-threshold", type=float)
    p.add_argument("--var-level", type=float)
    p.add_argument("--var-window-months", type=int)
    p.add_argument("--var-method", choices=("order", "linear", "bootstrap"))
    p.add_argument("--isolated-policy", choices=("drop", "flag"))
    p.add_argument("--tol", type=float, help="null-model tolerance")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-o", "--output", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mktcluster",
        description="Market clustering scores and price-instability tests.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="trades CSV -> monthly snapshots")
    _common(p)

    p = sub.add_parser("score", help="snapshots -> null models and scores")
    _common(p)
    p.add_argument("--snapshots", help="directory of snapshot JSON files "
                   "(default: build from --trades)")

    p = sub.add_parser("instability", help="prices -> per-window measures")
    _common(p)
    p.add_argument("--scores", help="scores CSV restricting the securities")

    p = sub.add_parser("compare", help="tercile group tests")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--instability", required=True)

    p = sub.add_parser("panel", help="export the monthly panel")
    _common(p)
    p.add_argument("--scores", required=True)

    p = sub.add_parser("synth", help="write a synthetic scenario")
    p.add_argument("--spec", help="scenario JSON (default: market_panel)")
    p.add_argument("--kind", default="market_panel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("run", help="full pipeline")
    _common(p)
    return parser


def load_config(args):
    """RunConfig from ``--config`` with command-line overrides applied."""
    config = RunConfig.from_json(args.config) if args.config else RunConfig()
    if not args.config:
        config.base_dir = os.getcwd()
    for flag, name in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            if isinstance(value, str) and name not in ("capacity", "window_length",
                                                       "var_method", "isolated_policy"):
                value = os.path.abspath(value)
            setattr(config, name, list(value) if name == "months" else value)
    solver = dict(config.solver)
    if getattr(args, "tol", None) is not None:
        solver["tolerance"] = args.tol
    if getattr(args, "max_iter", None) is not None:
        solver["max_iterations"] = args.max_iter
    config.solver = solver
    return config


def _need(config, *names):
    for n in names:
        if not getattr(config, n):
            raise ConfigError(f"--{n.replace('_', '-')} is required")
        if n not in ("months",) and not os.path.isfile(config.resolve(getattr(config, n))):
            raise ConfigError(f"{n} file not found: {getattr(config, n)}")


def _outdir(config):
    out = config.resolve(config.output)
    os.makedirs(out, exist_ok=True)
    return out


def _snapshots_from_trades(config):
    trades, rejected = ingest_trades(config.resolve(config.trades), config.capacity)
    months = set(config.month_list()) if config.months else None
    by_month = {}
    for t in trades:
        if months is None or t.month in months:
            by_month.setdefault(t.month, []).append(t)
    return [build_snapshot(v, m) for m, v in sorted(by_month.items())], rejected


def cmd_ingest(config, args):
    _need(config, "trades")
    out = _outdir(config)
    snaps, rejected = _snapshots_from_trades(config)
    os.makedirs(os.path.join(out, "snapshots"), exist_ok=True)
    for s in snaps:
        with open(os.path.join(out, "snapshots", f"{s.month}.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(s.to_json() + "\n")
    print(f"{len(snaps)} snapshots, {len(rejected)} rejected rows")
    for e in rejected[:20]:
        print(f"  line {e.line}: {e.message}", file=sys.stderr)


def cmd_score(config, args):
    if args.snapshots:
        snaps = []
        for p in sorted(glob.glob(os.path.join(args.snapshots, "*.json"))):
            with open(p, encoding="utf-8") as fh:
                snaps.append(BipartiteSnapshot.from_dict(json.load(fh)))
        if not snaps:
            raise ConfigError(f"no snapshot JSON files in {args.snapshots}")
    else:
        _need(config, "trades")
        snaps, _ = _snapshots_from_trades(config)
    out = _outdir(config)
    solved = solve_and_score(snaps, config.solver_config(), config.workers)
    os.makedirs(os.path.join(out, "models"), exist_ok=True)
    for snap, (model, _) in zip(snaps, solved):
        with open(os.path.join(out, "models", f"{snap.month}.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n")
    scores = [s for _, sc in solved for s in sc]
    write_scores(drop_isolated_scores(scores, "flag"), os.path.join(out, "scores.csv"))
    print(f"scored {len(scores)} security-months in {len(snaps)} snapshots")


def _windows_and_scores(config, scores_path):
    scores = drop_isolated_scores(read_scores(scores_path), config.isolated_policy)
    months = config.month_list() if config.months else sorted(
        {s.month for s in scores if s.month})
    if not months:
        raise ConfigError("no months given and none found in the scores")
    windows = make_windows(months, config.window_length)
    return months, windows, scores, window_scores(scores, windows)


def cmd_instability(config, args):
    _need(config, "prices")
    returns = read_prices(config.resolve(config.prices))
    if args.scores:
        months, windows, _, scored = _windows_and_scores(config, args.scores)
    else:
        months = config.month_list()
        windows = make_windows(months, config.window_length)
        scored = {label: dict.fromkeys(returns, 0.0) for label, _ in windows}
    vt = var_table(returns, months, config.var_level, config.var_window_months,
                   config.var_method, config.seed)
    reports = instability_reports(returns, windows, scored, vt, config.hill_fraction,
                                  config.outlier_config(), config.workers)
    out = _outdir(config)
    write_reports(reports, os.path.join(out, "instability.csv"))
    print(f"{len(reports)} security-window reports")


def cmd_compare(config, args):
    _, windows, _, scored = _windows_and_scores(config, args.scores)
    reports = read_reports(args.instability)
    out = _outdir(config)
    splits = {"": None}
    if config.turnover:
        _need(config, "trades", "turnover")
        trades, _ = ingest_trades(config.resolve(config.trades), config.capacity)
        split = coverage_split(trades, read_turnover(config.resolve(config.turnover)),
                               config.coverage_threshold)
        years = {label: int(ms[0][:4]) for label, ms in windows}
        splits["_covered"] = {lb: split.covered_securities(y) for lb, y in years.items()}
        splits["_control"] = {lb: split.control_securities(y) for lb, y in years.items()}
    for suffix, allowed in splits.items():
        verdicts, _, skipped = compare_groups(reports, scored, config.critical(), allowed)
        write_verdicts(verdicts, os.path.join(out, f"verdicts{suffix}.csv"))
        for label, msg in skipped:
            print(f"verdicts{suffix} {label}: skipped ({msg})", file=sys.stderr)
    print(f"verdicts written to {out}")


def cmd_panel(config, args):
    _need(config, "prices")
    months, _, scores, _ = _windows_and_scores(config, args.scores)
    returns = read_prices(config.resolve(config.prices))
    vt = var_table(returns, months, config.var_level, config.var_window_months,
                   config.var_method, config.seed)
    panel = export_panel(
        scores, vt, returns,
        read_market(config.resolve(config.market)) if config.market else None,
        read_fundamentals(config.resolve(config.fundamentals)) if config.fundamentals else None,
        read_volumes(config.resolve(config.volumes)) if config.volumes else None)
    out = _outdir(config)
    write_panel(panel, os.path.join(out, "panel.csv"))
    if len(panel):
        describe_panel(panel).to_csv(os.path.join(out, "panel_describe.csv"),
                                     index=False, float_format="%.17g",
                                     lineterminator="\n")
    print(f"{len(panel)} panel rows")


def cmd_synth(args):
    if args.spec:
        spec = args.spec
    else:
        spec = {"kind": args.kind, "seed": args.seed}
    for p in write_scenario(spec, args.output):
        print(p)


def cmd_run(config, args):
    result = run_pipeline(config)
    for n in result.notes:
        print(f"note: {n}", file=sys.stderr)
    if result.exit_code == EXIT_OK:
        print(f"run complete: {result.output}")
    else:
        where = f" in stage {result.stage}" if result.stage else ""
        print(f"error{where}: {result.error}", file=sys.stderr)
    return result.exit_code


_COMMANDS = {"ingest": cmd_ingest, "score": cmd_score,
             "instability": cmd_instability, "compare": cmd_compare,
             "panel": cmd_panel, "run": cmd_run}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            cmd_synth(args)
            return EXIT_OK
        config = load_config(args)
        code = _COMMANDS[args.command](config, args)
        return EXIT_OK if code is None else code
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report and map to exit 1
        logger.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
