"""Trade ingestion and monthly binary firm x security networks."""
import csv
import datetime as dt
import io
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation

import numpy as np

from ._validation import check_adjacency, check_fraction

logger = logging.getLogger(__name__)

TRADE_COLUMNS = ("firm_id", "security_id", "date", "side", "units", "price",
                 "capacity")
TURNOVER_COLUMNS = ("security_id", "year", "total_turnover")
MAX_MALFORMED_FRACTION = 0.10
# below this many rows one bad line already exceeds the fraction
MIN_ROWS_FOR_ABORT = 20

_SIDES = {"B": "buy", "S": "sell"}
_CAPACITIES = {"P": "principal", "A": "agent"}


class IngestError(ValueError):
    """Source rejected as a whole (bad header or too many malformed rows)."""


@dataclass(frozen=True, slots=True)
class TradeRecord:
    firm_id: str
    security_id: str
    date: dt.date
    side: str
    units: Decimal
    price: Decimal
    capacity: str

    @property
    def month(self):
        return f"{self.date.year:04d}-{self.date.month:02d}"

    @property
    def turnover(self):
        return self.units * self.price

    def to_row(self):
        side = "B" if self.side == "buy" else "S"
        cap = "P" if self.capacity == "principal" else "A"
        return [self.firm_id, self.security_id, self.date.isoformat(), side,
                str(self.units), str(self.price), cap]


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


def _parse_trade(row):
    firm, sec = row["firm_id"].strip(), row["security_id"].strip()
    if not firm or not sec:
        raise ValueError("empty firm_id or security_id")
    date = dt.date.fromisoformat(row["date"].strip())
    side = _SIDES.get(row["side"].strip().upper())
    if side is None:
        raise ValueError(f"side must be B or S, got {row['side']!r}")
    cap = _CAPACITIES.get(row["capacity"].strip().upper())
    if cap is None:
        raise ValueError(f"capacity must be P or A, got {row['capacity']!r}")
    try:
        units = Decimal(row["units"].strip())
        price = Decimal(row["price"].strip())
    except InvalidOperation:
        raise ValueError("units/price not numeric") from None
    if not (units.is_finite() and price.is_finite()):
        raise ValueError("units/price not finite")
    if units < 0 or price < 0:
        raise ValueError("negative units or price")
    return TradeRecord(firm, sec, date, side, units, price, cap)


def ingest_trades(source, capacity="principal"):
    """Read a trades CSV.

    Parameters
    ----------
    source : path or text file object
        CSV with header ``firm_id,security_id,date,side,units,price,capacity``.
    capacity : {"principal", "agent", "all"}
        Which trades to keep. The default keeps principal trades only.

    Returns
    -------
    records : list of TradeRecord
    rejected : list of RowError
        One entry per malformed row, with its 1-based line number.

    Raises
    ------
    IngestError
        Missing header columns, every data row malformed, or more than 10%
        of the rows malformed in a source of at least 20 rows.
    """
    if capacity not in ("principal", "agent", "all"):
        raise ValueError(f"unknown capacity filter {capacity!r}")
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return ingest_trades(fh, capacity)

    reader = csv.DictReader(source)
    header = reader.fieldnames or []
    missing = [c for c in TRADE_COLUMNS if c not in header]
    if missing:
        raise IngestError(f"trades header is missing columns {missing}")

    records, rejected, n_rows = [], [], 0
    for row in reader:
        n_rows += 1
        try:
            if None in row or any(row[c] is None for c in TRADE_COLUMNS):
                raise ValueError("wrong number of fields")
            rec = _parse_trade(row)
        except (ValueError, TypeError) as exc:
            rejected.append(RowError(reader.line_num, str(exc)))
            continue
        if capacity == "all" or rec.capacity == capacity:
            records.append(rec)

    for err in rejected[:20]:
        logger.warning("trades line %d rejected: %s", err.line, err.message)
    too_many = (n_rows >= MIN_ROWS_FOR_ABORT
                and len(rejected) > MAX_MALFORMED_FRACTION * n_rows)
    if n_rows and (too_many or len(rejected) == n_rows):
        raise IngestError(
            f"{len(rejected)} of {n_rows} rows malformed "
            f"(> {MAX_MALFORMED_FRACTION:.0%}); first: line "
            f"{rejected[0].line}: {rejected[0].message}")
    return records, rejected


def write_trades(records, dest):
    """Write records in the trades CSV format (inverse of ingest_trades)."""
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_trades(records, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(TRADE_COLUMNS)
    for rec in records:
        w.writerow(rec.to_row())


@dataclass(frozen=True, eq=False)
class BipartiteSnapshot:
    """One month of trading as a binary securities x firms matrix.

    Rows are securities and columns firms, so ``adjacency[s, f] = 1`` iff
    firm ``f`` traded security ``s``. Zero-degree nodes never appear.
    """

    month: str | None
    firms: tuple
    securities: tuple
    adjacency: np.ndarray
    firm_degrees: np.ndarray = field(init=False)
    security_degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        A = check_adjacency(self.adjacency, allow_empty=True)
        if A.shape != (len(self.securities), len(self.firms)):
            raise ValueError(
                f"adjacency shape {A.shape} does not match "
                f"{len(self.securities)} securities x {len(self.firms)} firms")
        A = A.copy()
        A.setflags(write=False)
        d_f = A.sum(axis=0, dtype=np.int64)
        d_s = A.sum(axis=1, dtype=np.int64)
        if (d_f == 0).any() or (d_s == 0).any():
            raise ValueError("snapshot contains zero-degree nodes; "
                             "use BipartiteSnapshot.from_adjacency")
        d_f.setflags(write=False)
        d_s.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "firm_degrees", d_f)
        object.__setattr__(self, "security_degrees", d_s)

    @classmethod
    def from_adjacency(cls, A, firms=None, securities=None, month=None):
        """Build a snapshot, dropping firms and securities without links."""
        A = check_adjacency(A, allow_empty=True)
        n_s, n_f = A.shape
        firms = tuple(firms) if firms is not None else tuple(f"f{i}" for i in range(n_f))
        securities = (tuple(securities) if securities is not None
                      else tuple(f"s{i}" for i in range(n_s)))
        keep_s = A.sum(axis=1) > 0
        keep_f = A.sum(axis=0) > 0
        A = A[keep_s][:, keep_f]
        return cls(month,
                   tuple(f for f, k in zip(firms, keep_f) if k),
                   tuple(s for s, k in zip(securities, keep_s) if k),
                   A)

    @property
    def n_firms(self):
        return len(self.firms)

    @property
    def n_securities(self):
        return len(self.securities)

    @property
    def n_edges(self):
        return int(self.adjacency.sum())

    def edges(self):
        """(security_index, firm_index) pairs in row-major order."""
        return [(int(s), int(f)) for s, f in zip(*np.nonzero(self.adjacency))]

    def to_dict(self):
        return {
            "month": self.month,
            "firms": list(self.firms),
            "securities": list(self.securities),
            "edges": [list(e) for e in self.edges()],
            "firm_degrees": self.firm_degrees.tolist(),
            "security_degrees": self.security_degrees.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        A = np.zeros((len(data["securities"]), len(data["firms"])), dtype=np.int8)
        for s, f in data["edges"]:
            A[s, f] = 1
        return cls(data.get("month"), tuple(data["firms"]),
                   tuple(data["securities"]), A)


def months_in(trades):
    return sorted({t.month for t in trades})


def build_snapshot(trades, month):
    """Binary network of who traded what during ``month`` ("YYYY-MM").

    Buys and sells both create links; repeated trades are collapsed. Firms
    and securities are ordered lexicographically by id, which makes the
    result independent of the order of ``trades``.
    """
    pairs = {(t.security_id, t.firm_id) for t in trades if t.month == month}
    firms = tuple(sorted({f for _, f in pairs}))
    securities = tuple(sorted({s for s, _ in pairs}))
    f_idx = {f: i for i, f in enumerate(firms)}
    s_idx = {s: i for i, s in enumerate(securities)}
    A = np.zeros((len(securities), len(firms)), dtype=np.int8)
    for s, f in pairs:
        A[s_idx[s], f_idx[f]] = 1
    return BipartiteSnapshot(month, firms, securities, A)


def read_turnover(source):
    """Read the external turnover CSV into ``{(security_id, year): total}``."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_turnover(fh)
    reader = csv.DictReader(source)
    missing = [c for c in TURNOVER_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise IngestError(f"turnover header is missing columns {missing}")
    totals = {}
    for row in reader:
        key = (row["security_id"].strip(), int(row["year"]))
        if key in totals:
            raise IngestError(f"duplicate turnover row for {key}")
        totals[key] = Decimal(row["total_turnover"].strip())
    return totals


@dataclass(frozen=True)
class CoverageRow:
    security_id: str
    year: int
    covered_turnover: Decimal
    total_turnover: Decimal | None

    @property
    def coverage_ratio(self):
        if self.total_turnover is None or self.total_turnover <= 0:
            return None
        return float(self.covered_turnover / self.total_turnover)


@dataclass(frozen=True)
class CoverageSplit:
    """Partition of (security, year) keys by turnover coverage.

    ``excluded`` maps keys to the reason they were left out: ``"missing"``
    (no external total) or ``"inconsistent"`` (covered exceeds total).
    """

    covered: frozenset
    control: frozenset
    excluded: dict
    table: tuple

    def control_securities(self, year):
        return sorted(s for s, y in self.control if y == year)

    def covered_securities(self, year):
        return sorted(s for s, y in self.covered if y == year)


def coverage_table(trades, external_turnover):
    covered = defaultdict(Decimal)
    for t in trades:
        covered[(t.security_id, t.date.year)] += t.turnover
    return tuple(
        CoverageRow(s, y, covered[(s, y)], external_turnover.get((s, y)))
        for s, y in sorted(covered))


def coverage_split(trades, external_turnover, threshold=0.10):
    """Split securities per year into covered vs. control groups.

    A (security, year) is *control* when the turnover present in ``trades``
    is strictly below ``threshold`` times the external yearly total.
    """
    threshold = check_fraction(threshold, "threshold")
    covered, control, excluded = set(), set(), {}
    table = coverage_table(trades, external_turnover)
    for row in table:
        key = (row.security_id, row.year)
        total = row.total_turnover
        if total is None or total <= 0:
            excluded[key] = "missing"
        elif row.covered_turnover > total:
            excluded[key] = "inconsistent"
        elif row.covered_turnover < Decimal(str(threshold)) * total:
            control.add(key)
        else:
            covered.add(key)
    if excluded:
        logger.info("coverage split excluded %d security-years", len(excluded))
    return CoverageSplit(frozenset(covered), frozenset(control), excluded, table)


def trades_from_string(text, capacity="principal"):
    """Convenience wrapper used by tests and the CLI for in-memory CSV."""
    return ingest_trades(io.StringIO(text), capacity)
