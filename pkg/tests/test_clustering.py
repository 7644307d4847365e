import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mktcluster.clustering import (DEGENERATE, ISOLATED, OK, ClusteringScore,
                                   MarketClustering, clustering_scores,
                                   cotrade_table, drop_isolated_scores,
                                   expected_clustering, observed_clustering,
                                   read_scores, write_scores)
from mktcluster.graph import BipartiteSnapshot
from mktcluster.nullmodel import NullModel, solve_null_model
from mktcluster.synth import (GeneratorSpec, ensemble_expected_motifs,
                              enumerate_ensemble, generate,
                              literal_expected_motifs, literal_observed_motifs,
                              sample_null)


def no_isolated(A):
    return A.sum(axis=0).all() and A.sum(axis=1).all()


graphs = arrays(np.int8, st.tuples(st.integers(1, 8), st.integers(1, 8)),
                elements=st.integers(0, 1))
probs = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
               elements=st.floats(0, 1))


def fake_model(P):
    P = np.asarray(P, float)
    return NullModel(np.ones(P.shape[1]), np.ones(P.shape[0]), P, 0.0, 0)


def score(sid, value, status=OK):
    return ClusteringScore(sid, "2010-01", 0, 1.0, value, status)


# motif counts ----------------------------------------------------------

def test_single_trader_has_no_pairs():
    A = np.array([[1, 0], [1, 1]])
    assert observed_clustering(A)[0] == 0


def test_traders_sharing_nothing_else_score_minus_one():
    # s0 is traded by f0 and f1, which share no other security
    A = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1]])
    snap = BipartiteSnapshot.from_adjacency(A)
    m = solve_null_model(snap)
    scores = clustering_scores(snap, m)
    assert observed_clustering(A).tolist() == [0, 0, 0]
    assert all(s.status == OK and s.score == -1.0 for s in scores)


def test_complete_three_by_three():
    A = np.ones((3, 3), dtype=int)
    assert observed_clustering(A).tolist() == [6, 6, 6]
    assert literal_observed_motifs(A).tolist() == [6, 6, 6]


def test_zero_row_has_zero_expectation():
    P = np.array([[0.0, 0.0, 0.0], [0.5, 0.2, 0.9], [0.3, 0.3, 0.3]])
    assert expected_clustering(P)[0] == 0.0


def test_uniform_half_expectation():
    np.testing.assert_allclose(expected_clustering(np.full((3, 3), 0.5)), 0.375,
                               rtol=0, atol=1e-15)


def test_three_by_four_against_enumeration():
    A = np.array([[1, 1, 0, 1], [0, 1, 1, 1], [1, 0, 1, 0]])
    m = solve_null_model(A)
    ens = enumerate_ensemble(A)
    np.testing.assert_allclose(expected_clustering(m), ensemble_expected_motifs(ens),
                               atol=1e-10)


def test_cotrade_table_bounds():
    A = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1], [1, 0, 0]])
    C = cotrade_table(A)
    d = A.sum(axis=0)
    assert (C == C.T).all()
    assert (C <= np.minimum.outer(d, d)).all()
    P = solve_null_model(A).link_prob
    Q = cotrade_table(P)
    dp = P.sum(axis=0)
    assert (Q <= np.minimum.outer(dp, dp) + 1e-12).all()


# scores ------------------------------------------------------------------

def test_score_arithmetic():
    # uniform p on the complete 3x3 gives <M_s> = 6 p^4; p^4 = 1/2 makes it 3
    snap = BipartiteSnapshot.from_adjacency(np.ones((3, 3), dtype=int), month="2010-01")
    out = clustering_scores(snap, fake_model(np.full((3, 3), 0.5 ** 0.25)))
    assert out[0].observed == 6
    assert out[0].expected == pytest.approx(3.0, abs=1e-14)
    assert out[0].score == pytest.approx(1.0, abs=1e-14)


def test_observed_zero_against_positive_expectation():
    A = np.array([[1, 0, 0], [0, 1, 1], [0, 1, 1]])
    snap = BipartiteSnapshot.from_adjacency(A)
    out = clustering_scores(snap, fake_model(np.full((3, 3), 0.5)))
    assert out[0].observed == 0 and out[0].expected == pytest.approx(0.375)
    assert out[0].score == -1.0


def test_degenerate_expectation_is_flagged():
    A = np.array([[1, 1], [1, 1]])
    P = np.array([[1e-8, 1e-8], [1.0, 1.0]])
    out = clustering_scores(BipartiteSnapshot.from_adjacency(A), fake_model(P))
    assert out[0].status == DEGENERATE and np.isnan(out[0].score)


def test_dimension_mismatch_is_fatal():
    snap = BipartiteSnapshot.from_adjacency(np.ones((2, 3), dtype=int))
    with pytest.raises(ValueError, match="shape"):
        clustering_scores(snap, fake_model(np.full((3, 2), 0.5)))


def test_scores_csv_round_trip():
    snap = BipartiteSnapshot.from_adjacency(np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]]),
                                            month="2010-04")
    scores = clustering_scores(snap, solve_null_model(snap))
    buf = io.StringIO()
    write_scores(scores, buf)
    back = read_scores(io.StringIO(buf.getvalue()))
    assert back == scores


# isolated ---------------------------------------------------------------

def test_drop_all_minus_one():
    assert drop_isolated_scores([score(f"s{i}", -1.0) for i in range(4)]) == []


def test_drop_three_of_ten():
    scores = [score(f"s{i}", -1.0 if i in (1, 4, 7) else 0.1 * i) for i in range(10)]
    kept = drop_isolated_scores(scores)
    assert len(kept) == 7
    flagged = drop_isolated_scores(scores, "flag")
    assert len(flagged) == 10
    assert sum(s.status == ISOLATED for s in flagged) == 3
    with pytest.raises(ValueError):
        drop_isolated_scores(scores, "keep")


def test_dropped_set_matches_construction():
    # two disjoint complete 2x2 blocks keep their scores; three extra
    # securities are each traded by a pair from different blocks
    A = np.zeros((7, 4), dtype=int)
    A[0:2, 0:2] = 1
    A[2:4, 2:4] = 1
    A[4, [0, 2]] = 1
    A[5, [1, 3]] = 1
    A[6, [0, 3]] = 1
    snap = BipartiteSnapshot.from_adjacency(A)
    scores = clustering_scores(snap, solve_null_model(snap))
    kept = drop_isolated_scores(scores)
    removed = {s.security_id for s in scores} - {s.security_id for s in kept}
    assert removed == {snap.securities[i] for i in (4, 5, 6)}


# bridge ------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_bridge_scores_below_cluster_scores(seed):
    g = generate(GeneratorSpec("bridge_security", seed=seed))
    snap = g.snapshot
    scores = clustering_scores(snap, solve_null_model(snap))
    b = g.labels["bridge"]
    inside = [s.score for i, s in enumerate(scores) if i != b]
    assert scores[b].score < min(inside)


# properties ---------------------------------------------------------------

@settings(max_examples=150, deadline=None)
@given(graphs)
def test_regrouped_observed_equals_literal(A):
    assert np.array_equal(observed_clustering(A), literal_observed_motifs(A))


@settings(max_examples=150, deadline=None)
@given(probs)
def test_regrouped_expected_equals_literal(P):
    np.testing.assert_allclose(expected_clustering(P), literal_expected_motifs(P),
                               rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(graphs.filter(no_isolated), st.randoms(use_true_random=False))
def test_label_invariance(A, rnd):
    ps = list(range(A.shape[0]))
    pf = list(range(A.shape[1]))
    rnd.shuffle(ps)
    rnd.shuffle(pf)
    base = MarketClustering().fit(A).scores_
    other = MarketClustering().fit(A[ps][:, pf]).scores_
    np.testing.assert_allclose(other, base[ps], atol=1e-9, equal_nan=True)


@pytest.mark.parametrize("seed", [0, 1])
def test_null_consistency(seed):
    rng = np.random.default_rng(seed)
    while True:
        A = (rng.random((8, 6)) < 0.5).astype(int)
        if no_isolated(A):
            break
    m = solve_null_model(A)
    mean, stderr, _ = sample_null(m, 20_000, seed, drop_isolated=False)
    expect = expected_clustering(m)
    assert (np.abs(mean - expect) <= 4 * stderr + 1e-12).all()


# estimator -----------------------------------------------------------------

def test_estimator_matches_function_api():
    A = np.array([[1, 1, 0, 1], [1, 1, 1, 0], [0, 1, 1, 1], [1, 0, 1, 1]])
    snap = BipartiteSnapshot.from_adjacency(A)
    est = MarketClustering().fit(snap)
    direct = [s.score for s in clustering_scores(snap, solve_null_model(snap))]
    np.testing.assert_allclose(est.scores_, direct, atol=1e-12)
    np.testing.assert_allclose(est.transform(A)[:, 0], direct, atol=1e-12)
    assert est.get_feature_names_out().tolist() == ["market_clustering"]
    with pytest.raises(ValueError):
        est.transform(A[:3])
