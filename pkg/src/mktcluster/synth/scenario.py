"""End-to-end synthetic market: trades, prices, turnover and covariates.

A ``market_panel`` scenario plants firm blocks that repeatedly trade their
own securities, mixes in securities traded at random, and optionally gives
the clustered securities fatter-tailed returns. Securities are split into a
*covered* set (most turnover visible in the trades) and a *control* set
(under 10% visible) whose returns never depend on clustering.
"""
import csv
import datetime as dt
import io
import json
import os
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from ..graph import TradeRecord, write_trades
from .generators import GeneratorSpec, generate, make_rng
from .prices import ReturnGroup, business_days, generate_price_panel

MARKET_DEFAULTS = {
    "n_firms": 30,
    "n_covered": 60,
    "n_control": 60,
    "months": ["2010-01", "2010-12"],
    "n_blocks": 3,
    "firms_per_block": 4,
    "p_in": 0.9,
    "p_noise": 0.02,
    "p_random": 0.15,
    "tail_df": 3.0,
    "vol": 0.02,
    "effect": True,
    "control_effect": False,
    "price_lead_months": 13,
    "agent_noise": 0.02,
}


def month_range(first, last):
    y0, m0 = map(int, first.split("-"))
    y1, m1 = map(int, last.split("-"))
    out = []
    for i in range(y0 * 12 + m0 - 1, y1 * 12 + m1):
        out.append(f"{i // 12:04d}-{i % 12 + 1:02d}")
    return out


def shift_month(month, k):
    y, m = map(int, month.split("-"))
    i = y * 12 + m - 1 + k
    return f"{i // 12:04d}-{i % 12 + 1:02d}"


def _month_days(month):
    start = np.datetime64(month, "M")
    return business_days(start.astype("datetime64[D]"),
                         (start + 1).astype("datetime64[D]") - 1)


@dataclass
class MarketScenario:
    trades: list
    prices_csv: str
    turnover: dict
    market_csv: str
    fundamentals_csv: str
    volumes_csv: str
    truth: dict = field(default_factory=dict)
    months: list = field(default_factory=list)


def _adjacency_month(rng, p, covered, control, block_of, block_firms):
    secs = covered + control
    n_f = p["n_firms"]
    A = np.zeros((len(secs), n_f), dtype=np.int8)
    for i, sid in enumerate(secs):
        b = block_of.get(sid)
        if b is None:
            A[i] = rng.random(n_f) < p["p_random"]
        else:
            probs = np.full(n_f, p["p_noise"])
            probs[block_firms[b]] = p["p_in"]
            A[i] = rng.random(n_f) < probs
        if not A[i].any():
            A[i, rng.integers(n_f)] = 1
    return A


def market_scenario(params=None, seed=0):
    """Build a :class:`MarketScenario` in memory."""
    p = dict(MARKET_DEFAULTS)
    unknown = set(params or {}) - set(p) - {"kind", "seed"}
    if unknown:
        raise ValueError(f"unknown market_panel params {sorted(unknown)}")
    p.update({k: v for k, v in (params or {}).items() if k not in ("kind", "seed")})
    rng = make_rng(seed, 0)
    months = month_range(*p["months"])
    firms = [f"F{i:03d}" for i in range(p["n_firms"])]
    covered = [f"C{i:03d}" for i in range(p["n_covered"])]
    control = [f"K{i:03d}" for i in range(p["n_control"])]

    nb, fpb = p["n_blocks"], p["firms_per_block"]
    if 2 * nb * fpb > p["n_firms"]:
        raise ValueError("not enough firms for the requested blocks")
    perm = rng.permutation(p["n_firms"])
    block_of, block_firms = {}, {}
    for group, offset in ((covered, 0), (control, nb)):
        n_clustered = len(group) // 3
        for j, sid in enumerate(group[:n_clustered]):
            block_of[sid] = offset + j % nb
    for b in range(2 * nb):
        block_firms[b] = perm[b * fpb:(b + 1) * fpb]

    base_price = {s: float(np.round(rng.uniform(5, 100), 2)) for s in covered + control}
    secs = covered + control
    trades = []
    for month in months:
        A = _adjacency_month(rng, p, covered, control, block_of, block_firms)
        days = _month_days(month)
        for i, f in zip(*np.nonzero(A)):
            for _ in range(1 + rng.poisson(1.0)):
                day = days[rng.integers(days.size)].astype(dt.date)
                price = Decimal(str(round(base_price[secs[i]] * rng.uniform(0.95, 1.05), 2)))
                trades.append(TradeRecord(firms[f], secs[i], day,
                                          "buy" if rng.random() < 0.5 else "sell",
                                          Decimal(int(rng.integers(1, 500))),
                                          price, "principal"))
        noise = (rng.random(A.shape) < p["agent_noise"]) & (A == 0)
        for i, f in zip(*np.nonzero(noise)):
            day = days[rng.integers(days.size)].astype(dt.date)
            trades.append(TradeRecord(firms[f], secs[i], day, "buy",
                                      Decimal(int(rng.integers(1, 500))),
                                      Decimal(str(base_price[secs[i]])), "agent"))
    trades.sort(key=lambda t: (t.date, t.security_id, t.firm_id))

    covered_to = {}
    for t in trades:
        if t.capacity == "principal":
            key = (t.security_id, t.date.year)
            covered_to[key] = covered_to.get(key, Decimal(0)) + t.turnover
    turnover = {}
    for (sid, year), amount in sorted(covered_to.items()):
        ratio = rng.uniform(0.2, 0.9) if sid in covered else rng.uniform(0.01, 0.08)
        turnover[(sid, year)] = (amount / Decimal(str(round(ratio, 4)))).quantize(Decimal("0.01"))

    fat = [s for s in covered if s in block_of] if p["effect"] else []
    if p["control_effect"]:
        fat += [s for s in control if s in block_of]
    thin = [s for s in secs if s not in fat]
    groups = [ReturnGroup("fat", tuple(fat), "t", p["vol"], p["tail_df"]),
              ReturnGroup("normal", tuple(thin), "normal", p["vol"])]
    price_start = np.datetime64(shift_month(months[0], -p["price_lead_months"]), "D")
    price_end = (np.datetime64(months[-1], "M") + 1).astype("datetime64[D]") - 1
    prices_csv, tail_truth = generate_price_panel(groups, price_start, price_end,
                                                  make_rng(seed, 2).integers(2**63))

    market = io.StringIO()
    w = csv.writer(market, lineterminator="\n")
    w.writerow(["month", "MKTF", "VIX"])
    all_months = month_range(shift_month(months[0], -p["price_lead_months"]), months[-1])
    for m in all_months:
        w.writerow([m, repr(round(float(rng.normal(0.5, 4.0)), 4)),
                    repr(round(float(rng.uniform(12, 40)), 2))])
    fund = io.StringIO()
    w = csv.writer(fund, lineterminator="\n")
    w.writerow(["security_id", "month", "MCAP", "PB3", "DY", "LEV3"])
    for sid in secs:
        cap = rng.uniform(50, 5000)
        for m in months:
            dy = "" if rng.random() < 0.2 else repr(round(float(rng.uniform(0, 6)), 3))
            w.writerow([sid, m, repr(round(float(cap * rng.uniform(0.9, 1.1)), 2)),
                        repr(round(float(rng.uniform(0.5, 4)), 3)), dy,
                        repr(round(float(rng.uniform(0, 0.8)), 3))])
    vol = io.StringIO()
    w = csv.writer(vol, lineterminator="\n")
    w.writerow(["security_id", "date", "euro_volume"])
    vdays = business_days(price_start, price_end)
    for sid in secs:
        level = rng.uniform(1e4, 1e6)
        for d in vdays:
            w.writerow([sid, str(d), repr(round(float(level * rng.lognormal(0, 0.5)), 2))])

    truth = {"clustered": sorted(block_of), "fat_tailed": sorted(fat),
             "covered": covered, "control": control, "tail_group": tail_truth}
    return MarketScenario(trades, prices_csv, turnover, market.getvalue(),
                          fund.getvalue(), vol.getvalue(), truth, months)


def trades_for_snapshot(snapshot, month="2010-01", seed=0):
    """One principal trade per link, dated inside ``month``."""
    rng = make_rng(seed, 3)
    days = _month_days(month)
    out = []
    for s, f in snapshot.edges():
        day = days[rng.integers(days.size)].astype(dt.date)
        out.append(TradeRecord(snapshot.firms[f], snapshot.securities[s], day,
                               "buy" if rng.random() < 0.5 else "sell",
                               Decimal(int(rng.integers(1, 100))),
                               Decimal("10.00"), "principal"))
    return out


def write_scenario(spec, out_dir):
    """Materialise a scenario spec (dict or JSON path) into ``out_dir``.

    ``market_panel`` writes every input file of the pipeline plus a
    ``config.json`` that runs it. Graph kinds write the generated snapshot,
    its trades and the ground-truth labels.
    """
    if not isinstance(spec, dict):
        with open(spec, encoding="utf-8") as fh:
            spec = json.load(fh)
    os.makedirs(out_dir, exist_ok=True)
    kind = spec.get("kind", "market_panel")
    seed = int(spec.get("seed", 0))
    written = []

    def put(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)

    if kind == "market_panel":
        sc = market_scenario(spec, seed)
        buf = io.StringIO()
        write_trades(sc.trades, buf)
        put("trades.csv", buf.getvalue())
        put("prices.csv", sc.prices_csv)
        put("market.csv", sc.market_csv)
        put("fundamentals.csv", sc.fundamentals_csv)
        put("volumes.csv", sc.volumes_csv)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["security_id", "year", "total_turnover"])
        for (sid, year), total in sorted(sc.turnover.items()):
            w.writerow([sid, year, str(total)])
        put("turnover.csv", buf.getvalue())
        put("truth.json", json.dumps(sc.truth, indent=1, sort_keys=True) + "\n")
        config = {
            "trades": "trades.csv", "prices": "prices.csv",
            "turnover": "turnover.csv", "market": "market.csv",
            "fundamentals": "fundamentals.csv", "volumes": "volumes.csv",
            "months": [sc.months[0], sc.months[-1]],
            "output": "run", "seed": seed,
        }
        put("config.json", json.dumps(config, indent=1, sort_keys=True) + "\n")
        return written

    gspec = GeneratorSpec(kind, params=spec.get("params", {}), seed=seed)
    reference = None
    if kind == "random_degree_matched":
        ref = spec.get("reference") or {"kind": "planted_blocks"}
        reference = generate(GeneratorSpec(ref["kind"], params=ref.get("params", {}),
                                           seed=int(ref.get("seed", seed)))).snapshot
    g = generate(gspec, reference)
    month = spec.get("month", "2010-01")
    buf = io.StringIO()
    write_trades(trades_for_snapshot(g.snapshot, month, seed), buf)
    put("trades.csv", buf.getvalue())
    put("snapshot.json", g.snapshot.to_json() + "\n")
    put("truth.json", json.dumps(g.labels, sort_keys=True) + "\n")
    return written
