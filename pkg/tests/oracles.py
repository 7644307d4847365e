"""Independent reference implementations used only by the tests.

Nothing here imports the routines it checks; each oracle reaches the same
quantity by a different route (permutation, brute force, generic optimiser).
"""
import itertools

import numpy as np


# group tests -----------------------------------------------------------

def ks_statistic(a, b):
    a = np.sort(np.asarray(a, float))
    b = np.sort(np.asarray(b, float))
    x = np.concatenate([a, b])
    fa = np.searchsorted(a, x, side="right") / a.size
    fb = np.searchsorted(b, x, side="right") / b.size
    return np.abs(fa - fb).max()


def _label_draws(n_a, n, draws, rng, batch):
    done = 0
    while done < draws:
        m = min(batch, draws - done)
        keys = rng.random((m, n))
        yield np.argsort(keys, axis=1)[:, :n_a]
        done += m


def ks_permutation_pvalue(a, b, draws=100_000, seed=0, batch=2000):
    """Two-sided permutation p-value of the KS statistic."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    pooled = np.concatenate([a, b])
    order = np.argsort(pooled, kind="stable")
    xs = pooled[order]
    # evaluate CDFs at the last index of each tie group
    ends = np.flatnonzero(np.r_[xs[1:] != xs[:-1], True])
    rank_of = np.empty_like(order)
    rank_of[order] = np.arange(order.size)
    d_obs = ks_statistic(a, b)
    rng = np.random.default_rng(seed)
    hits = 0
    n, n_a = pooled.size, a.size
    for idx in _label_draws(n_a, n, draws, rng, batch):
        ind = np.zeros((idx.shape[0], n))
        np.put_along_axis(ind, rank_of[idx], 1.0, axis=1)
        ca = np.cumsum(ind, axis=1)[:, ends]
        cb = (ends + 1) - ca
        d = np.abs(ca / n_a - cb / (n - n_a)).max(axis=1)
        hits += int((d >= d_obs - 1e-12).sum())
    return hits / draws


def midranks(x):
    x = np.asarray(x, float)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    xs = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def mww_permutation_pvalue(a, b, draws=100_000, seed=0, batch=5000):
    """Two-sided permutation p-value of the rank-sum statistic."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    r = midranks(np.concatenate([a, b]))
    n_a = a.size
    mu = n_a * (r.size + 1) / 2
    obs = abs(r[:n_a].sum() - mu)
    rng = np.random.default_rng(seed)
    hits = 0
    for idx in _label_draws(n_a, r.size, draws, rng, batch):
        hits += int((np.abs(r[idx].sum(axis=1) - mu) >= obs - 1e-9).sum())
    return hits / draws


def sort_terciles(scores):
    """Reference L/H split: sort (score, id) pairs, take floor(N/3) each end."""
    ranked = [sid for _, sid in sorted((v, k) for k, v in scores.items())]
    k = len(ranked) // 3
    return set(ranked[:k]), set(ranked[len(ranked) - k:])


# networks ---------------------------------------------------------------

def realize(d_s, d_f):
    """A binary matrix with the given margins, or None (greedy Gale-Ryser)."""
    A = np.zeros((len(d_s), len(d_f)), dtype=np.int8)
    rest = np.array(d_f)
    for s in np.argsort(-np.asarray(d_s), kind="stable"):
        cols = np.argsort(-rest, kind="stable")[:d_s[s]]
        if d_s[s] and rest[cols].min() <= 0:
            return None
        A[s, cols] = 1
        rest[cols] -= 1
    return A if (rest == 0).all() else None


def degree_classes(max_cells=16):
    """One realisation per realisable pair of sorted degree sequences."""
    out = []
    for n_s in range(1, max_cells + 1):
        for n_f in range(1, max_cells // n_s + 1):
            for d_s in itertools.combinations_with_replacement(range(1, n_f + 1), n_s):
                for d_f in itertools.combinations_with_replacement(range(1, n_s + 1), n_f):
                    if sum(d_s) != sum(d_f):
                        continue
                    A = realize(list(d_s), list(d_f))
                    if A is not None:
                        out.append(A)
    return out


def all_matrices_with_degrees(A):
    """Every binary matrix sharing the margins of ``A`` (brute force)."""
    n_s, n_f = A.shape
    d_s, d_f = A.sum(axis=1), A.sum(axis=0)
    out = []
    for bits in itertools.product((0, 1), repeat=n_s * n_f):
        X = np.array(bits, dtype=np.int8).reshape(n_s, n_f)
        if (X.sum(axis=1) == d_s).all() and (X.sum(axis=0) == d_f).all():
            out.append(X)
    return out


def maxent_product_convex(A):
    """Maximise the summed binary entropy of independent links subject to
    expected degrees, as a generic exponential-cone programme."""
    import cvxpy as cp

    A = np.asarray(A, float)
    P = cp.Variable(A.shape)
    problem = cp.Problem(cp.Maximize(cp.sum(cp.entr(P) + cp.entr(1 - P))),
                         [cp.sum(P, axis=1) == A.sum(axis=1),
                          cp.sum(P, axis=0) == A.sum(axis=0), P >= 0, P <= 1])
    problem.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12,
                  tol_feas=1e-12)
    return P.value


# panel -------------------------------------------------------------------

def two_pass_shares(rows):
    """Between/within shares from plain Python lists of (entity, value)."""
    vals = [v for _, v in rows]
    n = len(vals)
    grand = sum(vals) / n
    total = sum((v - grand) ** 2 for v in vals) / (n - 1)
    groups = {}
    for e, v in rows:
        groups.setdefault(e, []).append(v)
    means = {e: sum(v) / len(v) for e, v in groups.items()}
    mm = list(means.values())
    mbar = sum(mm) / len(mm)
    between = sum((m - mbar) ** 2 for m in mm) / (len(mm) - 1)
    dev = [v - means[e] + grand for e, v in rows]
    dbar = sum(dev) / n
    within = sum((d - dbar) ** 2 for d in dev) / (n - 1)
    return between / total, within / total


def chi2_permutation_pvalue(a, b, min_expected=5.0, draws=100_000, seed=0,
                            batch=5000):
    """Permutation p-value of the binned homogeneity statistic.

    Bins are merged once from the pooled counts (the merge only depends on
    column totals, so it is fixed under relabelling): the rightmost bin
    whose smaller-row expected count is below ``min_expected`` joins its
    left neighbour, or the right one for the first bin.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    pooled = np.concatenate([a, b])
    values = sorted(set(pooled.tolist()))
    n_a, n = a.size, pooled.size
    small = min(n_a, n - n_a)
    groups = [[v] for v in values]
    while len(groups) > 1:
        totals = [sum(int((pooled == v).sum()) for v in g) for g in groups]
        bad = [j for j, t in enumerate(totals) if small * t / n < min_expected]
        if not bad:
            break
        j = bad[-1]
        k = j - 1 if j > 0 else 1
        groups[k] = groups[k] + groups[j]
        del groups[j]
    if len(groups) < 2:
        return 1.0
    code = np.empty(n, dtype=int)
    for g_i, g in enumerate(groups):
        code[np.isin(pooled, g)] = g_i
    col = np.bincount(code, minlength=len(groups)).astype(float)
    exp_a = n_a * col / n
    exp_b = (n - n_a) * col / n

    def stat(count_a):
        count_b = col - count_a
        return (((count_a - exp_a) ** 2 / exp_a).sum(axis=-1)
                + ((count_b - exp_b) ** 2 / exp_b).sum(axis=-1))

    obs = stat(np.bincount(code[:n_a], minlength=len(groups)).astype(float))
    rng = np.random.default_rng(seed)
    hits = 0
    for idx in _label_draws(n_a, n, draws, rng, batch):
        onehot = np.zeros((idx.shape[0], len(groups)))
        np.add.at(onehot, (np.repeat(np.arange(idx.shape[0]), n_a), code[idx].ravel()), 1)
        hits += int((stat(onehot) >= obs - 1e-9).sum())
    return hits / draws
