"""End-to-end run: trades -> snapshots -> null models -> scores -> measures
-> group tests -> panel, with a hashed manifest.

Every stage writes flat CSV/JSON files into one run directory. Outputs are a
pure function of the inputs and the config, so reruns are byte-identical.
"""
import hashlib
import json
import logging
import math
import os
import platform
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .clustering import (OK, clustering_scores, drop_isolated_scores,
                         write_scores)
from .graph import (build_snapshot, coverage_split, ingest_trades,
                    read_turnover)
from .grouptests import (CriticalValues, assign_terciles, cdf_curves,
                         verdict_table, write_cdf, write_verdicts)
from .instability import (MEASURES, InstabilityReport, OutlierTestConfig,
                          month_bounds, rolling_var, series_measures,
                          var_dynamics, write_reports)
from .nullmodel import SolverConfig, solve_null_model
from .panel import (describe_panel, export_panel, read_fundamentals,
                    read_market, read_prices, read_volumes, write_panel)
from .synth.generators import make_rng
from .synth.scenario import month_range, shift_month

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_STAGE, EXIT_USAGE = 0, 1, 2
STAGES = ("ingest", "snapshots", "models", "scores", "instability", "compare",
          "panel")
LOCK_NAME = ".lock"
_INPUTS = ("trades", "prices", "turnover", "market", "fundamentals", "volumes")


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


@dataclass
class RunConfig:
    """Pipeline configuration.

    Relative input and output paths resolve against ``base_dir`` (the
    directory of the config file when loaded from disk). ``window_length``
    is ``"annual"`` or ``"2-month"``. ``critical_values`` overrides the
    defaults for the window length key by key.
    """

    trades: str = ""
    prices: str = ""
    turnover: str | None = None
    market: str | None = None
    fundamentals: str | None = None
    volumes: str | None = None
    months: list = field(default_factory=list)
    capacity: str = "principal"
    window_length: str = "annual"
    solver: dict = field(default_factory=dict)
    outliers: dict = field(default_factory=dict)
    hill_fraction: float = 0.05
    critical_values: dict = field(default_factory=dict)
    coverage_threshold: float = 0.10
    var_level: float = 0.05
    var_window_months: int = 12
    var_method: str = "order"
    isolated_policy: str = "drop"
    output: str = "run"
    seed: int = 0
    workers: int = 1
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def from_dict(cls, data, base_dir="."):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kw = dict(data)
        kw.setdefault("base_dir", base_dir)
        return cls(**kw)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))

    def resolve(self, path):
        if path is None:
            return None
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def echo(self):
        out = asdict(self)
        out.pop("base_dir")
        return out

    # typed views -----------------------------------------------------

    def month_list(self):
        if len(self.months) != 2:
            raise ConfigError("months must be [first, last]")
        try:
            out = month_range(*self.months)
        except (ValueError, AttributeError) as exc:
            raise ConfigError(f"bad month range {self.months}: {exc}") from exc
        if not out:
            raise ConfigError(f"empty month range {self.months}")
        return out

    def solver_config(self):
        kw = {"tol": "tolerance", "max_iter": "max_iterations"}
        try:
            return SolverConfig(**{kw.get(k, k): v for k, v in self.solver.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad solver config: {exc}") from exc

    def outlier_config(self):
        try:
            return OutlierTestConfig(**self.outliers)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad outlier config: {exc}") from exc

    def critical(self):
        try:
            base = CriticalValues.for_window(self.window_length)
            return CriticalValues(**{**asdict(base), **self.critical_values})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad critical values: {exc}") from exc

    def validate(self):
        """Raise ConfigError unless the config can start a run."""
        self.month_list()
        self.solver_config()
        self.outlier_config()
        self.critical()
        if self.capacity not in ("principal", "agent", "all"):
            raise ConfigError(f"bad capacity {self.capacity!r}")
        if self.isolated_policy not in ("drop", "flag"):
            raise ConfigError(f"bad isolated_policy {self.isolated_policy!r}")
        if self.var_method not in ("order", "linear", "bootstrap"):
            raise ConfigError(f"bad var_method {self.var_method!r}")
        if not 0 < self.hill_fraction < 1 or not 0 < self.var_level < 0.5:
            raise ConfigError("hill_fraction and var_level must be fractions")
        if not 0 < self.coverage_threshold < 1:
            raise ConfigError("coverage_threshold must lie in (0, 1)")
        if self.var_window_months < 1 or self.workers < 1:
            raise ConfigError("var_window_months and workers must be >= 1")
        for name in ("trades", "prices"):
            if not getattr(self, name):
                raise ConfigError(f"missing required input {name!r}")
        for name in _INPUTS:
            path = self.resolve(getattr(self, name))
            if path is not None and not os.path.isfile(path):
                raise ConfigError(f"{name} file not found: {path}")


# windows -------------------------------------------------------------

def make_windows(months, window_length="annual"):
    """``[(label, [months...])]`` for the analysis windows.

    Annual windows are calendar years (clipped to the month range) labelled
    ``YYYY``. Two-month windows pair consecutive months from the start and
    are labelled by their first month; a trailing unpaired month is dropped.
    """
    if window_length == "annual":
        by_year = defaultdict(list)
        for m in months:
            by_year[m[:4]].append(m)
        return sorted(by_year.items())
    if window_length == "2-month":
        return [(months[i], months[i:i + 2]) for i in range(0, len(months) - 1, 2)]
    raise ConfigError(f"unknown window length {window_length!r}")


def window_scores(scores, windows):
    """Mean monthly score per security and window.

    Only status ``ok`` scores other than -1 contribute. Returns
    ``{label: {security_id: mean}}``.
    """
    month_to_window = {m: label for label, ms in windows for m in ms}
    acc = defaultdict(lambda: defaultdict(list))
    for s in scores:
        label = month_to_window.get(s.month)
        if label is None or s.status != OK or s.score == -1.0:
            continue
        acc[label][s.security_id].append(s.score)
    return {label: {sid: float(np.mean(v)) for sid, v in sorted(acc[label].items())}
            for label, _ in windows if label in acc}


# stages ---------------------------------------------------------------

def _pmap(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def solve_and_score(snapshots, solver=None, workers=1):
    """Null model and scores per snapshot, in input order."""
    def one(snap):
        model = solve_null_model(snap, solver)
        return model, clustering_scores(snap, model)
    return _pmap(one, snapshots, workers)


def var_table(returns, months, level=0.05, window_months=12, method="order",
              seed=0):
    """``(security_id, month) -> (var_chg, var_dev, vluck_chg)``.

    An entry exists when the rolling window ending at that month holds
    enough observations. ``var_dev`` compares against the cross-sectional
    median of all securities with a window that month.
    """
    ids = sorted(returns)
    grid = [shift_month(months[0], -1)] + list(months)
    windows = {}
    for i, sid in enumerate(ids):
        for j, m in enumerate(grid):
            rs = make_rng(seed, 4, i, j) if method == "bootstrap" else None
            windows[(sid, m)] = rolling_var(returns[sid], m, level, window_months,
                                            method, rs)
    out = {}
    for j, m in enumerate(months):
        prev = grid[j]
        cs = [windows[(sid, m)].var for sid in ids if windows[(sid, m)] is not None]
        for sid in ids:
            cur = windows[(sid, m)]
            if cur is None:
                continue
            out[(sid, m)] = var_dynamics(cur, windows[(sid, prev)], cs)
    return out


def instability_reports(returns, windows, scored, vtable, hill_fraction=0.05,
                        outlier_config=None, workers=1):
    """One InstabilityReport per scored (security, window).

    Distribution measures use the daily returns inside the window; VaR
    fields are those of the window's last month.
    """
    jobs = []
    for label, ms in windows:
        start, _ = month_bounds(ms[0])
        _, end = month_bounds(ms[-1])
        for sid in sorted(scored.get(label, {})):
            if sid in returns:
                jobs.append((label, ms[-1], sid, start, end))

    def one(job):
        label, last, sid, start, end = job
        _, r = returns[sid].between(start, end)
        m = series_measures(r, hill_fraction, outlier_config)
        chg, dev, lchg = vtable.get((sid, last), (math.nan,) * 3)
        return InstabilityReport(sid, label, var_chg=chg, var_dev=dev,
                                 vluck_chg=lchg, **m)
    return _pmap(one, jobs, workers)


def compare_groups(reports, scored, critical=None, securities=None):
    """Tercile split and verdicts per window.

    ``securities`` optionally maps a window label to the ids allowed in
    that window (coverage split). Windows with fewer than 9 eligible
    securities are skipped and reported in the returned ``skipped`` list.
    """
    by_window = defaultdict(dict)
    for r in reports:
        by_window[r.window][r.security_id] = r
    verdicts, assignments, skipped = [], {}, []
    for label in sorted(scored):
        sc = scored[label]
        if securities is not None:
            allowed = set(securities.get(label, ()))
            sc = {k: v for k, v in sc.items() if k in allowed}
        try:
            a = assign_terciles(sc, label)
        except ValueError as exc:
            skipped.append((label, str(exc)))
            continue
        assignments[label] = a
        verdicts.extend(verdict_table(by_window[label], a, critical))
    return verdicts, assignments, skipped


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import pandas
    import scipy
    import sklearn

    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__,
            "pandas": pandas.__version__, "mktcluster": __version__}


@dataclass
class RunResult:
    exit_code: int
    output: str
    stage: str | None = None
    error: str | None = None
    notes: list = field(default_factory=list)


def run_pipeline(config):
    """Execute every stage and write the run directory.

    Returns a :class:`RunResult`; ``exit_code`` is 0 on success, 1 when a
    stage failed (outputs written so far are kept and the manifest records
    the failing stage) and 2 for configuration errors, in which case nothing
    is written.
    """
    try:
        if isinstance(config, dict):
            config = RunConfig.from_dict(config)
        config.validate()
    except ConfigError as exc:
        return RunResult(EXIT_USAGE, "", None, str(exc))
    out = config.resolve(config.output)
    os.makedirs(out, exist_ok=True)
    lock = os.path.join(out, LOCK_NAME)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        return RunResult(EXIT_USAGE, out, None, f"run directory locked: {lock}")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return _run_locked(config, out)
    finally:
        os.remove(lock)


def _run_locked(config, out):
    written = []
    notes = []
    stage = None

    def path(*parts):
        p = os.path.join(out, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        written.append(p)
        return p

    def put_json(obj, *parts):
        with open(path(*parts), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")

    months = config.month_list()
    windows = make_windows(months, config.window_length)
    critical = config.critical()
    try:
        stage = "ingest"
        trades, rejected = ingest_trades(config.resolve(config.trades), config.capacity)
        put_json({"n_records": len(trades), "n_rejected": len(rejected),
                  "rejected": [{"line": e.line, "message": e.message}
                               for e in rejected[:100]]}, "ingest.json")

        stage = "snapshots"
        wanted = set(months)
        by_month = defaultdict(list)
        for t in trades:
            if t.month in wanted:
                by_month[t.month].append(t)
        snapshots = []
        for m in months:
            if not by_month[m]:
                notes.append(f"no trades in {m}")
                continue
            snap = build_snapshot(by_month[m], m)
            snapshots.append(snap)
            with open(path("snapshots", f"{m}.json"), "w", encoding="utf-8") as fh:
                fh.write(snap.to_json() + "\n")
        if not snapshots:
            raise ValueError("no trades inside the month range")

        stage = "models"
        solved = solve_and_score(snapshots, config.solver_config(), config.workers)
        for snap, (model, _) in zip(snapshots, solved):
            put_json(model.to_dict(), "models", f"{snap.month}.json")

        stage = "scores"
        all_scores = [s for _, sc in solved for s in sc]
        write_scores(drop_isolated_scores(all_scores, "flag"), path("scores.csv"))
        kept = drop_isolated_scores(all_scores, config.isolated_policy)
        scored = window_scores(kept, windows)

        stage = "instability"
        returns = read_prices(config.resolve(config.prices))
        vtable = var_table(returns, months, config.var_level,
                           config.var_window_months, config.var_method, config.seed)
        reports = instability_reports(returns, windows, scored, vtable,
                                      config.hill_fraction, config.outlier_config(),
                                      config.workers)
        write_reports(reports, path("instability.csv"))

        stage = "compare"
        splits = {"": None}
        if config.turnover:
            split = coverage_split(trades, read_turnover(config.resolve(config.turnover)),
                                   config.coverage_threshold)
            year_of = {label: int(ms[0][:4]) for label, ms in windows}
            splits["_covered"] = {lb: split.covered_securities(y) for lb, y in year_of.items()}
            splits["_control"] = {lb: split.control_securities(y) for lb, y in year_of.items()}
            put_json({"covered": sorted(map(list, split.covered)),
                      "control": sorted(map(list, split.control)),
                      "excluded": sorted([k[0], k[1], v] for k, v in split.excluded.items())},
                     "coverage.json")
        by_key = defaultdict(dict)
        for r in reports:
            by_key[r.window][r.security_id] = r
        for suffix, allowed in splits.items():
            verdicts, assignments, skipped = compare_groups(reports, scored, critical,
                                                            allowed)
            write_verdicts(verdicts, path(f"verdicts{suffix}.csv"))
            notes.extend(f"verdicts{suffix} {lb}: {msg}" for lb, msg in skipped)
            put_json({lb: {"low": list(a.low), "high": list(a.high),
                           "boundaries": list(a.boundaries)}
                      for lb, a in assignments.items()}, f"groups{suffix}.json")
            if suffix:
                continue
            for label, a in assignments.items():
                rep = by_key[label]
                for measure in MEASURES:
                    lo = [getattr(rep[s], measure) for s in a.low if s in rep]
                    hi = [getattr(rep[s], measure) for s in a.high if s in rep]
                    try:
                        curves = cdf_curves(lo, hi)
                    except ValueError:
                        continue
                    write_cdf(curves, path("cdf", f"{measure}_{label}.csv"))

        stage = "panel"
        panel = export_panel(
            kept, vtable, returns,
            read_market(config.resolve(config.market)) if config.market else None,
            read_fundamentals(config.resolve(config.fundamentals))
            if config.fundamentals else None,
            read_volumes(config.resolve(config.volumes)) if config.volumes else None)
        write_panel(panel, path("panel.csv"))
        if len(panel):
            describe_panel(panel).to_csv(path("panel_describe.csv"), index=False,
                                         float_format="%.17g", lineterminator="\n")
        else:
            notes.append("panel is empty")
        stage = None
    except Exception as exc:  # noqa: BLE001 - any stage error ends the run
        logger.error("stage %s failed: %s", stage, exc)
        _write_manifest(config, out, written, notes, "failed", stage, repr(exc))
        return RunResult(EXIT_STAGE, out, stage, repr(exc), notes)
    _write_manifest(config, out, written, notes, "ok", None, None)
    return RunResult(EXIT_OK, out, None, None, notes)


def _write_manifest(config, out, written, notes, status, stage, error):
    inputs = {}
    for name in _INPUTS:
        p = getattr(config, name)
        if p:
            full = config.resolve(p)
            inputs[name] = {"path": p, "sha256": _sha256(full),
                            "bytes": os.path.getsize(full)}
    outputs = {}
    for p in sorted(set(written)):
        if os.path.exists(p):
            rel = os.path.relpath(p, out).replace(os.sep, "/")
            outputs[rel] = {"sha256": _sha256(p), "bytes": os.path.getsize(p)}
    manifest = {"status": status, "failed_stage": stage, "error": error,
                "stages": list(STAGES), "config": config.echo(), "inputs": inputs,
                "outputs": outputs, "notes": notes, "versions": _versions()}
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def verify_manifest(out):
    """Return the list of problems found when re-hashing a run directory."""
    with open(os.path.join(out, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    problems = []
    for rel, meta in manifest["outputs"].items():
        p = os.path.join(out, rel)
        if not os.path.exists(p):
            problems.append(f"missing {rel}")
        elif _sha256(p) != meta["sha256"]:
            problems.append(f"hash mismatch {rel}")
    for root, _, files in os.walk(out):
        for f in files:
            rel = os.path.relpath(os.path.join(root, f), out).replace(os.sep, "/")
            if rel not in manifest["outputs"] and rel not in ("manifest.json", LOCK_NAME):
                problems.append(f"unlisted {rel}")
    return problems
