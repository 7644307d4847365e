"""Synthetic daily price panels."""
import csv
import io
from dataclasses import dataclass

import numpy as np

from .generators import make_rng

PRICE_COLUMNS = ("security_id", "date", "close")


@dataclass(frozen=True)
class ReturnGroup:
    """Return distribution shared by a group of securities.

    ``dist`` is ``"normal"`` or ``"t"`` (Student-t with ``df`` degrees of
    freedom, rescaled to standard deviation ``vol``).
    """

    name: str
    securities: tuple
    dist: str = "normal"
    vol: float = 0.02
    df: float = 3.0

    def draw(self, rng, n):
        if self.vol == 0:
            return np.zeros(n)
        if self.dist == "normal":
            return self.vol * rng.standard_normal(n)
        if self.dist == "t":
            if self.df <= 2:
                raise ValueError("t returns need df > 2 for a finite variance")
            scale = np.sqrt((self.df - 2) / self.df)
            return self.vol * scale * rng.standard_t(self.df, n)
        raise ValueError(f"unknown return distribution {self.dist!r}")


def business_days(start, end):
    days = np.arange(np.datetime64(start, "D"), np.datetime64(end, "D") + 1)
    return days[np.is_busday(days)]


def generate_price_panel(groups, start, end, seed, start_price=100.0):
    """Simulate closes for every security in ``groups``.

    Returns ``(csv_text, truth)`` where ``truth`` maps security id to group
    name. Each security draws from its own stream keyed by its position, so
    adding a group does not perturb the others.
    """
    days = business_days(start, end)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PRICE_COLUMNS)
    truth = {}
    idx = 0
    for g in groups:
        for sid in g.securities:
            if sid in truth:
                raise ValueError(f"security {sid!r} in two groups")
            truth[sid] = g.name
            rng = make_rng(seed, 1, idx)
            idx += 1
            r = g.draw(rng, days.size - 1)
            close = start_price * np.exp(np.concatenate([[0.0], np.cumsum(r)]))
            for d, c in zip(days, close):
                w.writerow([sid, str(d), repr(float(c))])
    return buf.getvalue(), truth
