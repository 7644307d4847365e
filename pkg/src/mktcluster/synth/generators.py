"""Synthetic trading networks with known structure.

Every generator draws from a Philox stream derived from one 64-bit seed, so
results are reproducible and independent streams can be split off by key.
"""
from dataclasses import dataclass, field

import numpy as np

from ..graph import BipartiteSnapshot

KINDS = ("random_degree_matched", "planted_blocks", "bridge_security",
         "partial_cluster")


def make_rng(seed, *key):
    """Philox generator for ``seed`` and an integer spawn key."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters for :func:`generate`.

    ``params`` holds kind-specific settings (see each ``_gen_*`` helper);
    unknown keys raise.
    """

    kind: str
    n_firms: int = 0
    n_securities: int = 0
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Generated:
    snapshot: BipartiteSnapshot
    labels: dict


def _snapshot(A, month=None):
    n_s, n_f = A.shape
    return BipartiteSnapshot.from_adjacency(
        A, firms=[f"F{i:03d}" for i in range(n_f)],
        securities=[f"S{i:03d}" for i in range(n_s)], month=month)


def edge_swap(A, n_swaps, rng):
    """Degree-preserving randomisation by checkerboard swaps.

    Each attempt picks two links (s1, f1), (s2, f2); if (s1, f2) and
    (s2, f1) are both absent the pair is rewired. Rejected attempts leave
    the matrix unchanged, which makes the chain aperiodic.
    """
    A = np.array(A, dtype=np.int8, copy=True)
    s_idx, f_idx = np.nonzero(A)
    edges = np.column_stack([s_idx, f_idx])
    m = len(edges)
    if m < 2:
        return A
    picks = rng.integers(0, m, size=(n_swaps, 2))
    for i, j in picks:
        if i == j:
            continue
        s1, f1 = edges[i]
        s2, f2 = edges[j]
        if s1 == s2 or f1 == f2 or A[s1, f2] or A[s2, f1]:
            continue
        A[s1, f1] = A[s2, f2] = 0
        A[s1, f2] = A[s2, f1] = 1
        edges[i] = (s1, f2)
        edges[j] = (s2, f1)
    return A


def degree_matched(A, rng, swaps_per_edge=20):
    A = np.asarray(A)
    return edge_swap(A, swaps_per_edge * int(A.sum()) + 100, rng)


def _gen_planted_blocks(spec, rng):
    p = dict(spec.params)
    n_blocks = p.pop("n_blocks", 3)
    fpb = p.pop("firms_per_block", 3)
    spb = p.pop("securities_per_block", 3)
    p_in = p.pop("p_in", 1.0)
    p_out = p.pop("p_out", 0.0)
    if p:
        raise ValueError(f"unknown planted_blocks params {sorted(p)}")
    n_f, n_s = n_blocks * fpb, n_blocks * spb
    block_f = np.repeat(np.arange(n_blocks), fpb)
    block_s = np.repeat(np.arange(n_blocks), spb)
    same = block_s[:, None] == block_f[None, :]
    for _ in range(1000):
        probs = np.where(same, p_in, p_out)
        A = (rng.random((n_s, n_f)) < probs).astype(np.int8)
        if A.sum(axis=0).all() and A.sum(axis=1).all():
            break
    else:
        raise ValueError("planted_blocks could not avoid isolated nodes")
    return A, {"security_block": block_s.tolist(), "firm_block": block_f.tolist()}


def _gen_bridge(spec, rng):
    """Two equal complete firm clusters plus one security traded across both.

    The bridge security is traded by ``bridge_firms_per_side`` firms from
    each cluster, so its traders are not mutually clustered.
    """
    p = dict(spec.params)
    lo, hi = p.pop("firms_per_cluster", (3, 5))
    slo, shi = p.pop("securities_per_cluster", (2, 5))
    per_side = p.pop("bridge_firms_per_side", 2)
    if p:
        raise ValueError(f"unknown bridge_security params {sorted(p)}")
    # both clusters share one size draw, as in the symmetric two-cluster
    # picture; very unequal clusters can rank the small side below the bridge
    fl = fr = int(rng.integers(lo, hi + 1))
    sl = sr = int(rng.integers(slo, shi + 1))
    if per_side > min(fl, fr):
        raise ValueError("bridge_firms_per_side exceeds cluster size")
    n_f, n_s = fl + fr, sl + sr + 1
    A = np.zeros((n_s, n_f), dtype=np.int8)
    A[:sl, :fl] = 1
    A[sl:sl + sr, fl:] = 1
    bridge = n_s - 1
    A[bridge, rng.choice(fl, per_side, replace=False)] = 1
    A[bridge, fl + rng.choice(fr, per_side, replace=False)] = 1
    cluster = [0] * sl + [1] * sr + [-1]
    return A, {"security_cluster": cluster, "bridge": bridge}


def _gen_partial(spec, rng):
    """Core firms that almost fully co-trade, with graded outside involvement.

    Every security has exactly three traders. ``involvement`` counts how
    many of them are core firms (3, 2 or 1); the non-core traders are fresh
    firms, so shared trading happens only inside the core.
    """
    p = dict(spec.params)
    n_full = p.pop("n_full", None)
    n_one = p.pop("n_one", None)
    if p:
        raise ValueError(f"unknown partial_cluster params {sorted(p)}")
    n_full = int(n_full if n_full is not None else rng.integers(2, 5))
    n_one = int(n_one if n_one is not None else rng.integers(1, 4))
    rows, involvement = [], []
    n_f = 3
    for _ in range(n_full):
        rows.append([0, 1, 2])
        involvement.append(3)
    for pair in ((0, 1), (0, 2), (1, 2)):
        rows.append([*pair, n_f])
        involvement.append(2)
        n_f += 1
    for i in range(n_one):
        rows.append([i % 3, n_f, n_f + 1])
        involvement.append(1)
        n_f += 2
    A = np.zeros((len(rows), n_f), dtype=np.int8)
    for s, fs in enumerate(rows):
        A[s, fs] = 1
    return A, {"involvement": involvement}


def generate(spec, reference=None):
    """Generate a snapshot plus ground-truth labels.

    For ``random_degree_matched`` pass the snapshot (or adjacency) to rewire
    as ``reference``; its firm and security degrees are preserved exactly.
    Other kinds shuffle node order with the seed so that labels, not
    positions, carry the structure.
    """
    rng = make_rng(spec.seed)
    if spec.kind == "random_degree_matched":
        if reference is None:
            raise ValueError("random_degree_matched needs a reference snapshot")
        A0 = np.asarray(getattr(reference, "adjacency", reference))
        n_swaps = spec.params.get("swaps_per_edge", 20)
        A = degree_matched(A0, rng, n_swaps)
        month = getattr(reference, "month", None)
        if isinstance(reference, BipartiteSnapshot):
            snap = BipartiteSnapshot(month, reference.firms, reference.securities, A)
        else:
            snap = _snapshot(A)
        return Generated(snap, {})

    builder = {"planted_blocks": _gen_planted_blocks,
               "bridge_security": _gen_bridge,
               "partial_cluster": _gen_partial}[spec.kind]
    A, labels = builder(spec, rng)
    perm_s = rng.permutation(A.shape[0])
    perm_f = rng.permutation(A.shape[1])
    A = A[perm_s][:, perm_f]
    # relabel per-security ground truth to the shuffled order
    inv = np.argsort(perm_s)
    out = {}
    for k, v in labels.items():
        if k == "bridge":
            out[k] = int(inv[v])
        elif k == "firm_block":
            out[k] = [v[i] for i in perm_f]
        else:
            out[k] = [v[i] for i in perm_s]
    return Generated(_snapshot(A), out)


def sample_null(model, draws, seed, drop_isolated=True):
    """Monte-Carlo motif counts under independent Bernoulli(p_sf) links.

    Parameters
    ----------
    model : NullModel or ndarray
        Link probabilities (securities x firms).
    draws : int
        Number of accepted samples.
    drop_isolated : bool
        Redraw samples containing a zero-degree node. Disable to sample
        the unconditioned ensemble, whose mean equals the analytic
        expectation exactly.

    Returns
    -------
    mean, stderr : ndarray of shape (n_securities,)
    samples : ndarray of shape (draws, n_securities)
    """
    P = np.asarray(getattr(model, "link_prob", model), dtype=float)
    rng = make_rng(seed)
    out = np.empty((draws, P.shape[0]), dtype=np.int64)
    batch = max(1, min(draws, 2048))
    filled = 0
    attempts = 0
    while filled < draws:
        attempts += batch
        if attempts > 1000 * draws + 10_000:
            raise RuntimeError("too many rejected null samples")
        X = (rng.random((batch, *P.shape)) < P).astype(np.int64)
        if drop_isolated:
            ok = X.sum(axis=1).all(axis=1) & X.sum(axis=2).all(axis=1)
            X = X[ok]
        C = np.einsum("bsf,bsg->bfg", X, X)
        quad = np.einsum("bsf,bfg,bsg->bs", X, C, X)
        diag = np.einsum("bsf,bff->bs", X, C)
        deg = X.sum(axis=2)
        M = (quad - diag) // 2 - deg * (deg - 1) // 2
        take = min(len(M), draws - filled)
        out[filled:filled + take] = M[:take]
        filled += take
    mean = out.mean(axis=0)
    stderr = out.std(axis=0, ddof=1) / np.sqrt(draws) if draws > 1 else np.zeros_like(mean)
    return mean, stderr, out

