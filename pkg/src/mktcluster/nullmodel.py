"""Maximum-entropy bipartite null model constrained on expected degrees.

The grand-canonical ensemble over binary firm x security matrices that
maximises Shannon entropy subject to ``<d_f> = d_f`` and ``<d_s> = d_s``
factorises into independent links with

    p_sf = x_f x_s / (1 + x_f x_s)

where ``x_f`` and ``x_s`` are the hidden variables. They are found here by a
damped fixed-point iteration on the degree equations.

Some links take the same value in every matrix with the observed degrees
(a firm trading every security is the simplest case). Their hidden
variables diverge, so such links are pinned to 0 or 1 first and the free
links, which fall into independent blocks, are solved block by block.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_adjacency

logger = logging.getLogger(__name__)

_MIN_DAMPING = 1.0 / 1024


class ConvergenceError(RuntimeError):
    """The fixed-point iteration did not reach the requested tolerance.

    Attributes
    ----------
    residual : float
        Best max-norm degree residual seen.
    model : NullModel
        The model built from the best iterate, for callers willing to accept
        a looser tolerance.
    """

    def __init__(self, message, residual, model):
        super().__init__(message)
        self.residual = residual
        self.model = model


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-10
    max_iterations: int = 100_000
    damping: float = 1.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class NullModel:
    """Solved hidden variables and link probabilities for one snapshot.

    ``link_prob`` is indexed (security, firm), like the adjacency matrix.
    Hidden variables are ``inf`` for nodes with all links pinned to 1 and
    NaN for other nodes without free links. Each block of free links has
    its own scale gauge.
    """

    x_firm: np.ndarray
    x_security: np.ndarray
    link_prob: np.ndarray
    residual: float
    iterations: int
    forced_ones: frozenset = field(default_factory=frozenset)
    forced_zeros: frozenset = field(default_factory=frozenset)

    @property
    def beta_firm(self):
        with np.errstate(divide="ignore"):
            return -np.log(self.x_firm)

    @property
    def beta_security(self):
        with np.errstate(divide="ignore"):
            return -np.log(self.x_security)

    @property
    def shape(self):
        return self.link_prob.shape

    def to_dict(self, include_link_prob=False):
        def finite_or_none(values):
            return [float(v) if np.isfinite(v) else None for v in values]

        out = {
            "n_securities": int(self.link_prob.shape[0]),
            "n_firms": int(self.link_prob.shape[1]),
            "x_firm": finite_or_none(self.x_firm),
            "x_security": finite_or_none(self.x_security),
            "forced_ones": sorted([int(s), int(f)] for s, f in self.forced_ones),
            "forced_zeros": sorted([int(s), int(f)] for s, f in self.forced_zeros),
            "residual": float(self.residual),
            "iterations": int(self.iterations),
        }
        if include_link_prob:
            out["link_prob"] = self.link_prob.tolist()
        return out

    def to_json(self, include_link_prob=False):
        return json.dumps(self.to_dict(include_link_prob), sort_keys=True)


def expected_degrees(model):
    """Expected (firm, security) degrees: column and row sums of ``link_prob``."""
    P = model.link_prob
    return P.sum(axis=0), P.sum(axis=1)


def _pin_forced(A):
    """Find links whose value is the same in every matrix with these degrees.

    ``A`` itself is one realisation. In its residual digraph (row -> column
    where a link could be added, column -> row where one could be removed)
    a link can change only along an alternating cycle, so it is free iff its
    row and column share a strongly connected component.

    Returns a float matrix with 0/1 at forced cells and NaN at free cells,
    and a list of ``(rows, cols)`` index arrays, one per block of free cells.
    """
    n_s, n_f = A.shape
    add_s, add_f = np.nonzero(A == 0)
    rem_s, rem_f = np.nonzero(A == 1)
    src = np.concatenate([add_s, n_s + rem_f])
    dst = np.concatenate([n_s + add_f, rem_s])
    graph = csr_matrix((np.ones(src.size), (src, dst)), shape=(n_s + n_f,) * 2)
    _, labels = connected_components(graph, directed=True, connection="strong")
    lab_s, lab_f = labels[:n_s], labels[n_s:]
    free = lab_s[:, None] == lab_f[None, :]
    pinned = np.where(free, np.nan, A.astype(float))
    blocks = []
    for c in np.unique(lab_s):
        rows = np.flatnonzero(lab_s == c)
        cols = np.flatnonzero(lab_f == c)
        if rows.size and cols.size:
            blocks.append((rows, cols))
    return pinned, blocks


def _fixed_point(k_f, k_s, config, x_f, x_s):
    """Damped block fixed point on the reduced, strictly interior system."""
    lam = config.damping
    best = (np.inf, x_f, x_s, 0)
    prev = np.inf
    for it in range(1, config.max_iterations + 1):
        denom = x_s[:, None] / (1.0 + x_f[None, :] * x_s[:, None])
        new_f = k_f / denom.sum(axis=0)
        x_f = new_f if lam == 1.0 else x_f ** (1 - lam) * new_f ** lam
        denom = x_f[None, :] / (1.0 + x_f[None, :] * x_s[:, None])
        new_s = k_s / denom.sum(axis=1)
        x_s = new_s if lam == 1.0 else x_s ** (1 - lam) * new_s ** lam

        xx = np.outer(x_s, x_f)
        P = xx / (1.0 + xx)
        res = max(np.abs(P.sum(axis=0) - k_f).max(),
                  np.abs(P.sum(axis=1) - k_s).max())
        if res < best[0]:
            best = (res, x_f, x_s, it)
        if res <= config.tolerance:
            return x_f, x_s, res, it, True
        if not np.isfinite(res):
            break
        if res > prev and lam > _MIN_DAMPING:
            lam /= 2
            logger.debug("residual rose at iteration %d, damping -> %g", it, lam)
        prev = res
    res, x_f, x_s, it = best
    return x_f, x_s, res, it, False


def solve_null_model(adjacency, config=None, random_state=None):
    """Solve the degree-constrained maximum-entropy ensemble.

    Parameters
    ----------
    adjacency : array-like of shape (n_securities, n_firms)
        Binary matrix; a ``BipartiteSnapshot`` is accepted as well.
    config : SolverConfig, optional
    random_state : int or None
        When given, the starting point is randomly perturbed (including a
        random gauge ``x_f -> c x_f, x_s -> x_s / c``). The returned
        probabilities do not depend on it beyond solver tolerance.

    Raises
    ------
    ValueError
        Empty snapshot or zero-degree nodes.
    ConvergenceError
        Tolerance not reached within ``config.max_iterations``.
    """
    config = config or SolverConfig()
    A = check_adjacency(getattr(adjacency, "adjacency", adjacency))
    d_s = A.sum(axis=1)
    d_f = A.sum(axis=0)
    if (d_s == 0).any() or (d_f == 0).any():
        raise ValueError("snapshot contains zero-degree nodes")
    n_s, n_f = A.shape

    pinned, blocks = _pin_forced(A)
    link_prob = np.nan_to_num(pinned, nan=0.0)
    # nodes without free links: inf when every link is 1, undefined otherwise
    x_s = np.where(d_s == n_f, np.inf, np.nan)
    x_f = np.where(d_f == n_s, np.inf, np.nan)
    rng = np.random.default_rng(random_state) if random_state is not None else None
    iterations, converged = 0, True
    for rows, cols in blocks:
        k_s = d_s[rows] - np.nansum(pinned[rows], axis=1)
        k_f = d_f[cols] - np.nansum(pinned[:, cols], axis=0)
        total = k_f.sum()
        xf0 = k_f / np.sqrt(total)
        xs0 = k_s / np.sqrt(total)
        if rng is not None:
            c = np.exp(rng.uniform(-2, 2))
            xf0 = c * xf0 * np.exp(rng.uniform(-0.5, 0.5, xf0.size))
            xs0 = xs0 / c * np.exp(rng.uniform(-0.5, 0.5, xs0.size))
        xf_b, xs_b, _, it, ok = _fixed_point(
            k_f.astype(float), k_s.astype(float), config, xf0, xs0)
        iterations = max(iterations, it)
        converged &= ok
        xx = np.outer(xs_b, xf_b)
        link_prob[np.ix_(rows, cols)] = xx / (1.0 + xx)
        x_f[cols] = xf_b
        x_s[rows] = xs_b

    ones = frozenset(zip(*np.nonzero(pinned == 1.0)))
    zeros = frozenset(zip(*np.nonzero(pinned == 0.0)))
    exp_f, exp_s = link_prob.sum(axis=0), link_prob.sum(axis=1)
    residual = float(max(np.abs(exp_f - d_f).max(), np.abs(exp_s - d_s).max()))
    model = NullModel(x_firm=x_f, x_security=x_s, link_prob=link_prob,
                      residual=residual, iterations=iterations,
                      forced_ones=ones, forced_zeros=zeros)
    if not converged:
        raise ConvergenceError(
            f"no convergence after {iterations} iterations "
            f"(best residual {residual:.3e} > {config.tolerance:.1e})",
            residual, model)
    return model


class BipartiteMaxEntropy(BaseEstimator):
    """Estimator wrapper around :func:`solve_null_model`.

    Parameters
    ----------
    tol : float
        Max-norm tolerance on degree residuals.
    max_iter : int
    damping : float
        Initial damping; halved automatically when the residual grows.
    random_state : int or None
        Optional perturbation of the starting point.

    Attributes
    ----------
    model_ : NullModel
    link_prob_ : ndarray of shape (n_securities, n_firms)
    x_firm_, x_security_ : ndarray
    residual_ : float
    n_iter_ : int
    """

    def __init__(self, tol=1e-10, max_iter=100_000, damping=1.0,
                 random_state=None):
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping
        self.random_state = random_state

    def fit(self, X, y=None):
        config = SolverConfig(self.tol, self.max_iter, self.damping)
        self.model_ = solve_null_model(X, config, self.random_state)
        self.link_prob_ = self.model_.link_prob
        self.x_firm_ = self.model_.x_firm
        self.x_security_ = self.model_.x_security
        self.residual_ = self.model_.residual
        self.n_iter_ = self.model_.iterations
        return self

    def predict_proba(self, X=None):
        """Link probabilities of the fitted ensemble (``X`` is ignored)."""
        check_is_fitted(self, "model_")
        return self.link_prob_

    def expected_degrees(self):
        check_is_fitted(self, "model_")
        return expected_degrees(self.model_)
