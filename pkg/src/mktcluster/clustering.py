"""Market clustering score per security.

For a security ``s`` the motif count ``M_s`` sums, over unordered firm pairs
that both trade ``s``, the number of *other* securities the pair also trades
jointly. Its expectation under the null model replaces each link by its
probability. The score is ``m_s = M_s / <M_s> - 1``.

Both sums are evaluated through the firm co-trade table, so the cost is
O(n_F^2 n_S) once instead of per security.
"""
import csv
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_adjacency, check_link_prob
from .nullmodel import SolverConfig, solve_null_model

logger = logging.getLogger(__name__)

DEGENERATE_EPS = 1e-12
SCORE_COLUMNS = ("month", "security_id", "observed", "expected", "score",
                 "status")

OK = "ok"
DEGENERATE = "degenerate_no_expectation"
ISOLATED = "isolated"


@dataclass(frozen=True)
class ClusteringScore:
    security_id: str
    month: str | None
    observed: int
    expected: float
    score: float
    status: str

    def to_row(self):
        score = "" if self.status != OK else repr(float(self.score))
        return [self.month or "", self.security_id, str(self.observed),
                repr(float(self.expected)), score, self.status]


def cotrade_table(A):
    """Firm-pair co-trade counts ``c[f, f'] = #{s: a_sf = a_sf' = 1}``.

    Works for probability matrices too, where it gives
    ``q[f, f'] = sum_s p_sf p_sf'``.
    """
    A = np.asarray(A, dtype=np.float64)
    return A.T @ A


def _pair_motif(A, C):
    # sum_{f<f'} a_sf a_sf' (C_ff' - a_sf a_sf') for every row s at once
    quad = np.einsum("sf,fg,sg->s", A, C, A)
    diag = (A * A) @ np.diag(C)
    pairs = 0.5 * (quad - diag)
    sq = A * A
    same = 0.5 * (sq.sum(axis=1) ** 2 - (sq * sq).sum(axis=1))
    return pairs - same


def observed_clustering(adjacency):
    """Observed motif count ``M_s`` for every security (integer array)."""
    A = check_adjacency(getattr(adjacency, "adjacency", adjacency)).astype(np.int64)
    C = A.T @ A
    quad = np.einsum("sf,fg,sg->s", A, C, A)
    diag = A @ np.diag(C)
    deg = A.sum(axis=1)
    # each co-trading pair of s also shares s itself, which is not counted
    return (quad - diag) // 2 - deg * (deg - 1) // 2


def expected_clustering(model):
    """Null expectation ``<M_s>`` for every security.

    ``model`` is a :class:`NullModel` or a raw link-probability matrix.
    """
    P = check_link_prob(getattr(model, "link_prob", model))
    M = _pair_motif(P, cotrade_table(P))
    return np.maximum(M, 0.0)


def clustering_scores(snapshot, model, eps=DEGENERATE_EPS):
    """Per-security :class:`ClusteringScore` list for one snapshot."""
    P = getattr(model, "link_prob", model)
    if P.shape != snapshot.adjacency.shape:
        raise ValueError(
            f"model shape {P.shape} does not match snapshot "
            f"{snapshot.adjacency.shape}")
    observed = observed_clustering(snapshot)
    expected = expected_clustering(P)
    out = []
    for sid, obs, exp in zip(snapshot.securities, observed, expected):
        if exp <= eps:
            out.append(ClusteringScore(sid, snapshot.month, int(obs), float(exp),
                                       float("nan"), DEGENERATE))
        else:
            score = -1.0 if obs == 0 else obs / exp - 1.0
            out.append(ClusteringScore(sid, snapshot.month, int(obs), float(exp),
                                       float(score), OK))
    return out


def drop_isolated_scores(scores, policy="drop"):
    """Remove scores equal to -1 (traders share nothing else).

    ``policy="flag"`` keeps every row but relabels the -1 rows with status
    ``"isolated"`` instead.
    """
    if policy == "drop":
        return [s for s in scores if not (s.status == OK and s.score == -1.0)]
    if policy == "flag":
        return [ClusteringScore(s.security_id, s.month, s.observed, s.expected,
                                s.score, ISOLATED)
                if s.status == OK and s.score == -1.0 else s for s in scores]
    raise ValueError(f"unknown policy {policy!r}")


def write_scores(scores, dest):
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_scores(scores, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for s in scores:
        w.writerow(s.to_row())


def read_scores(source):
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_scores(fh)
    out = []
    for row in csv.DictReader(source):
        score = float(row["score"]) if row["score"] else float("nan")
        out.append(ClusteringScore(row["security_id"], row["month"] or None,
                                   int(row["observed"]), float(row["expected"]),
                                   score, row["status"]))
    return out


class MarketClustering(TransformerMixin, BaseEstimator):
    """Fit the null model to a snapshot and score its securities.

    ``fit`` solves the maximum-entropy ensemble for the degree sequences of
    ``X`` (securities x firms). ``transform`` scores any adjacency of the
    same shape against that fitted expectation and returns an
    ``(n_securities, 1)`` array; degenerate securities get NaN.

    Parameters
    ----------
    tol, max_iter, damping : solver settings, see :class:`SolverConfig`.
    eps : float
        Expectations at or below this are treated as undefined.

    Attributes
    ----------
    model_ : NullModel
    expected_ : ndarray of shape (n_securities,)
    observed_ : ndarray of shape (n_securities,)
        Motif counts of the training matrix.
    scores_ : ndarray of shape (n_securities,)
    """

    def __init__(self, tol=1e-10, max_iter=100_000, damping=1.0,
                 eps=DEGENERATE_EPS):
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping
        self.eps = eps

    def fit(self, X, y=None):
        A = check_adjacency(getattr(X, "adjacency", X))
        self.model_ = solve_null_model(
            A, SolverConfig(self.tol, self.max_iter, self.damping))
        self.expected_ = expected_clustering(self.model_)
        self.observed_ = observed_clustering(A)
        self.scores_ = self._score(self.observed_)
        self.n_features_in_ = A.shape[1]
        return self

    def _score(self, observed):
        with np.errstate(divide="ignore", invalid="ignore"):
            m = observed / self.expected_ - 1.0
        m[observed == 0] = -1.0
        m[self.expected_ <= self.eps] = np.nan
        return m

    def transform(self, X):
        check_is_fitted(self, "model_")
        A = check_adjacency(getattr(X, "adjacency", X))
        if A.shape != self.model_.shape:
            raise ValueError(f"X has shape {A.shape}, fitted on {self.model_.shape}")
        return self._score(observed_clustering(A))[:, None]

    def get_feature_names_out(self, input_features=None):
        return np.array(["market_clustering"], dtype=object)
