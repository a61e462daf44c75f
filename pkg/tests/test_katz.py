import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from multiacct.errors import ConfigError, DataError
from multiacct.graphcore import ActivityRecord, build_bipartite
from multiacct.katz import (
    KatzFeature,
    SimilarityMatrix,
    katz_matrix,
    katz_pair_feature,
    percentile_threshold,
    predict_unsupervised,
    resolve_beta,
    spectral_norm,
)


def graph(*pairs):
    return build_bipartite([ActivityRecord(a, p) for a, p in pairs])


def random_bipartite(rng, n_acc, n_pages, density):
    pairs = [(f"a{i}", f"p{j}") for i in range(n_acc) for j in range(n_pages)
             if rng.random() < density]
    if not pairs:
        pairs = [("a0", "p0")]
    return graph(*pairs)


def dense_oracle(g, beta):
    m = g.adjacency().toarray()
    return np.linalg.inv(np.eye(m.shape[0]) - beta * m) - np.eye(m.shape[0])


def test_spectral_norm_identity():
    assert spectral_norm(sp.identity(3, format="csr")) == pytest.approx(1.0)


def test_spectral_norm_single_edge():
    assert spectral_norm(sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(1.0)


def test_spectral_norm_zero():
    assert spectral_norm(sp.csr_matrix((4, 4))) == 0.0


def test_spectral_norm_matches_eigensolver():
    rng = np.random.default_rng(0)
    a = np.triu((rng.random((20, 20)) < 0.3).astype(float), 1)
    a = a + a.T
    expect = np.max(np.abs(np.linalg.eigvalsh(a)))
    assert spectral_norm(sp.csr_matrix(a)) == pytest.approx(expect, abs=1e-6)


def test_beta_zero_gives_zero():
    s = katz_matrix(graph(("a", "p"), ("b", "p")), beta=0)
    assert not s.values.any()


def test_beta_out_of_range():
    with pytest.raises(ConfigError):
        resolve_beta(2.0, 0.6)
    with pytest.raises(ConfigError):
        resolve_beta(2.0, -0.1)
    with pytest.raises(ConfigError):
        resolve_beta(0.0, "auto")


def test_path_graph_matches_dense_solve():
    g = graph(("a", "p"), ("b", "p"))
    for method in ("series", "solve"):
        s = katz_matrix(g, beta=0.1, tol=1e-14, method=method)
        np.testing.assert_allclose(s.values, dense_oracle(g, 0.1), atol=1e-9)


def test_series_matches_solve_on_random_graphs():
    rng = np.random.default_rng(1)
    for _ in range(5):
        g = random_bipartite(rng, 15, 10, 0.2)
        beta = 0.9 / spectral_norm(g.adjacency())
        a = katz_matrix(g, beta=beta, tol=1e-11, method="series")
        b = katz_matrix(g, beta=beta, method="solve")
        assert a.converged
        np.testing.assert_allclose(a.values, b.values, atol=1e-7)


def test_account_block_shortcut():
    rng = np.random.default_rng(2)
    g = random_bipartite(rng, 12, 8, 0.3)
    full = katz_matrix(g, beta="auto")
    acc = katz_matrix(g, beta="auto", accounts_only=True)
    np.testing.assert_allclose(acc.values, full.account_block(), atol=1e-9)
    ser = katz_matrix(g, beta="auto", accounts_only=True, method="series", tol=1e-12)
    np.testing.assert_allclose(ser.values, acc.values, atol=1e-8)


def test_bipartite_parity():
    # two components: accounts in different components never link
    g = graph(("a1", "p1"), ("a2", "p1"), ("a3", "p2"), ("a4", "p2"))
    s = katz_matrix(g, beta=0.3)
    blk = s.account_block()
    i, j = s.index("a1"), s.index("a3")
    assert blk[i, j] == 0.0
    assert blk[s.index("a1"), s.index("a2")] > 0
    # odd powers only: an account-page entry of the series uses odd lengths
    m = g.adjacency().toarray()
    odd = sum(0.3 ** k * np.linalg.matrix_power(m, k) for k in range(1, 40, 2))
    k = g.n_accounts
    np.testing.assert_allclose(s.values[:k, k:], odd[:k, k:], atol=1e-12)


def test_series_nonconvergence_warns():
    g = graph(("a", "p"), ("b", "p"), ("b", "q"))
    with pytest.warns(RuntimeWarning):
        s = katz_matrix(g, beta="auto", tol=1e-14, max_terms=3, method="series")
    assert not s.converged
    assert s.n_terms == 3


def test_save_load_roundtrip(tmp_path):
    s = katz_matrix(graph(("a", "p"), ("b", "p"), ("c", "q"), ("b", "q")), beta="auto")
    s.save(tmp_path / "s.bin")
    t = SimilarityMatrix.load(tmp_path / "s.bin")
    assert t.nodes == s.nodes and t.n_accounts == s.n_accounts
    np.testing.assert_array_equal(t.values, s.values)


def test_truncated_file(tmp_path):
    s = katz_matrix(graph(("a", "p"), ("b", "p")), beta="auto")
    s.save(tmp_path / "s.bin")
    raw = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "s.bin").write_bytes(raw[:-8])
    with pytest.raises(DataError):
        SimilarityMatrix.load(tmp_path / "s.bin")


def _sim(vals):
    n = 4
    m = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    m[iu] = vals
    m += m.T
    return SimilarityMatrix(m, tuple("abcd"), n, 0.1, 1e-8)


def test_percentile_constant():
    assert percentile_threshold(_sim([2.0] * 6), 37) == 2.0


def test_percentile_interpolates():
    # pair entries {0, 0, 1, 2, 3, 4}: the median interpolates to 1.5
    four = SimilarityMatrix(np.array([[0, 1, 2, 3], [1, 0, 4, 0], [2, 4, 0, 0], [3, 0, 0, 0.]]),
                            tuple("abcd"), 4, 0.1, 1e-8)
    assert percentile_threshold(four, 50) == pytest.approx(1.5)
    assert percentile_threshold(four, 100) == 4.0


def test_alpha_zero_predicts_above_min():
    s = _sim([0, 1, 2, 3, 4, 5])
    pred = predict_unsupervised(s, 0)
    assert pred.labels.sum() == 5


def test_disconnected_communities_predicted_zero():
    g = graph(("a1", "p1"), ("a2", "p1"), ("a3", "p1"), ("b1", "q1"), ("b2", "q1"))
    s = katz_matrix(g, beta="auto")
    pred = predict_unsupervised(s, 10)
    acc = s.accounts
    for (i, j), y, v in zip(zip(pred.left, pred.right), pred.labels, pred.scores):
        if acc[i][0] != acc[j][0]:
            assert v == 0 and y == 0


def test_pair_feature_argmax_and_zero():
    g = graph(("a1", "p1"), ("a2", "p1"), ("a2", "p2"), ("a3", "p2"), ("a4", "p9"),
              ("a5", "p9"))
    s = katz_matrix(g, beta="auto")
    blk = s.account_block()
    n = s.n_accounts
    vals = [(blk[i, j], i, j) for i in range(n) for j in range(i + 1, n)]
    top = max(vals)
    acc = s.accounts
    eps = 1e-6
    assert katz_pair_feature(s, acc[top[1]], acc[top[2]], eps) == pytest.approx(eps)
    assert katz_pair_feature(s, "a1", "a4", eps) == pytest.approx(top[0] + eps)
    with pytest.raises(KeyError):
        katz_pair_feature(s, "a1", "nobody")
    feat = KatzFeature(s, eps)
    x = feat(np.array([top[1]]), np.array([top[2]]))
    assert x.shape == (1, 1) and x[0, 0] == pytest.approx(eps)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_katz_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    g = random_bipartite(rng, 8, 6, 0.35)
    s = katz_matrix(g, beta="auto")
    np.testing.assert_allclose(s.values, s.values.T, atol=1e-12)
    assert (s.values >= 0).all()
