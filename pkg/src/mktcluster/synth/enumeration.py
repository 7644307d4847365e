"""Brute-force oracles over the full configuration space.

Nothing here uses the product form of the link probabilities. The
maximum-entropy distribution is found by minimising the Lagrangian dual

    g(beta) = log sum_X exp(-beta . D(X)) + beta . d_obs

over explicitly enumerated configurations ``X`` (``D(X)`` stacks the firm
and security degrees of ``X``), with a Newton iteration whose Hessian is the
covariance of ``D`` under the current distribution.

Cells that no fractional matrix with the observed margins can move off 0
or 1 are found by linear programming first; the enumeration is restricted
to configurations agreeing with them, which is where every feasible
distribution puts its mass.
"""
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import linprog

from .._validation import check_adjacency

MAX_CELLS = 16


@dataclass(frozen=True, eq=False)
class EnsembleEnumeration:
    """Exact maximum-entropy ensemble over all configurations with P > 0.

    ``configurations`` has shape (K, n_S, n_F); configurations outside it
    have probability zero.
    """

    configurations: np.ndarray
    hamiltonian: np.ndarray
    partition_function: float
    probabilities: np.ndarray
    entropy: float
    beta_firm: np.ndarray
    beta_security: np.ndarray
    constraint_residual: float

    @property
    def marginals(self):
        return np.tensordot(self.probabilities, self.configurations, axes=1)

    def expectation(self, fn):
        """``sum_X P(X) fn(X)`` for a function of one configuration."""
        vals = np.array([fn(X) for X in self.configurations], dtype=float)
        return np.tensordot(self.probabilities, vals, axes=1)


def forced_cells(d_s, d_f):
    """Cells fixed at 0 or 1 in every fractional matrix with these margins.

    Returns a float (n_S, n_F) array with 0/1 for forced cells, NaN else.
    """
    d_s = np.asarray(d_s, float)
    d_f = np.asarray(d_f, float)
    n_s, n_f = d_s.size, d_f.size
    n = n_s * n_f
    A_eq = np.zeros((n_s + n_f, n))
    for s in range(n_s):
        A_eq[s, s * n_f:(s + 1) * n_f] = 1
    for f in range(n_f):
        A_eq[n_s + f, f::n_f] = 1
    b_eq = np.concatenate([d_s, d_f])
    out = np.full(n, np.nan)
    for i in range(n):
        c = np.zeros(n)
        c[i] = 1.0
        lo = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, 1), method="highs")
        hi = linprog(-c, A_eq=A_eq, b_eq=b_eq, bounds=(0, 1), method="highs")
        if lo.status != 0 or hi.status != 0:
            raise ValueError("degree margins are infeasible")
        vmin, vmax = lo.fun, -hi.fun
        if vmax - vmin < 1e-9:
            out[i] = round(vmin)
    return out.reshape(n_s, n_f)


def enumerate_ensemble(adjacency, tol=1e-13, max_newton=200):
    """Exact maximum-entropy ensemble for a tiny snapshot (n_F n_S <= 16)."""
    A = check_adjacency(getattr(adjacency, "adjacency", adjacency))
    n_s, n_f = A.shape
    if n_s * n_f > MAX_CELLS:
        raise ValueError(f"{n_s}x{n_f} exceeds the {MAX_CELLS}-cell enumeration cap")
    d_s = A.sum(axis=1).astype(float)
    d_f = A.sum(axis=0).astype(float)
    d_obs = np.concatenate([d_f, d_s])

    fixed = forced_cells(d_s, d_f)
    free = np.flatnonzero(np.isnan(fixed.ravel()))
    base = np.nan_to_num(fixed, nan=0.0).ravel()
    m = free.size
    bits = ((np.arange(2 ** m)[:, None] >> np.arange(m)) & 1).astype(np.int8)
    flat = np.tile(base.astype(np.int8), (2 ** m, 1))
    flat[:, free] = bits
    configs = flat.reshape(-1, n_s, n_f)
    D = np.concatenate([configs.sum(axis=1), configs.sum(axis=2)], axis=1).astype(float)

    beta = np.zeros(n_f + n_s)
    for _ in range(max_newton):
        H = D @ beta
        w = np.exp(-(H - H.min()))
        P = w / w.sum()
        mean = P @ D
        grad = d_obs - mean
        if np.abs(grad).max() <= tol:
            break
        centred = D - mean
        cov = centred.T @ (centred * P[:, None])
        step = np.linalg.lstsq(cov, grad, rcond=None)[0]
        # Newton on g: beta <- beta - H^{-1} grad, and grad g = d_obs - E[D]
        g0 = np.log(w.sum()) - H.min() + beta @ d_obs
        t = 1.0
        while t > 1e-8:
            trial = beta - t * step
            Ht = D @ trial
            gt = np.log(np.exp(-(Ht - Ht.min())).sum()) - Ht.min() + trial @ d_obs
            if gt <= g0 + 1e-15 * max(1.0, abs(g0)):
                break
            t /= 2
        beta = beta - t * step

    H = D @ beta
    shift = H.min()
    w = np.exp(-(H - shift))
    Z_scaled = w.sum()
    P = w / Z_scaled
    residual = float(np.abs(P @ D - d_obs).max())
    nz = P > 0
    entropy = float(-(P[nz] * np.log(P[nz])).sum())
    return EnsembleEnumeration(
        configurations=configs, hamiltonian=H,
        partition_function=float(Z_scaled * np.exp(-shift)),
        probabilities=P, entropy=entropy,
        beta_firm=beta[:n_f], beta_security=beta[n_f:],
        constraint_residual=residual)


def literal_observed_motifs(A):
    """Motif count of every security by the literal quadruple sum."""
    A = np.asarray(A)
    n_s, n_f = A.shape
    out = np.zeros(n_s, dtype=np.int64)
    for s in range(n_s):
        total = 0
        for f, g in combinations(range(n_f), 2):
            inner = 0
            for t in range(n_s):
                if t != s:
                    inner += int(A[t, f]) * int(A[t, g])
            total += int(A[s, f]) * int(A[s, g]) * inner
        out[s] = total
    return out


def literal_expected_motifs(P):
    """Null expectation of every motif count by the literal quadruple sum."""
    P = np.asarray(P, dtype=float)
    n_s, n_f = P.shape
    out = np.zeros(n_s)
    for s in range(n_s):
        total = 0.0
        for f, g in combinations(range(n_f), 2):
            inner = 0.0
            for t in range(n_s):
                if t != s:
                    inner += P[t, f] * P[t, g]
            total += P[s, f] * P[s, g] * inner
        out[s] = total
    return out


def ensemble_expected_motifs(ens):
    """``<M_s>`` as a probability-weighted sum over enumerated configurations."""
    X = ens.configurations.astype(np.int64)
    n_f = X.shape[2]
    counts = np.zeros(X.shape[:2], dtype=np.int64)
    for f, g in combinations(range(n_f), 2):
        co = X[:, :, f] * X[:, :, g]
        counts += co * (co.sum(axis=1, keepdims=True) - co)
    return ens.probabilities @ counts
