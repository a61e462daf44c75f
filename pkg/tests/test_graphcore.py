import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiacct.errors import ConfigError, DataError
from multiacct.graphcore import (
    ActivityRecord,
    BipartiteGraph,
    aggregate,
    build_bipartite,
    clean_graph,
    degree_threshold,
    filter_low_degree,
    parse_activities,
    project_accounts,
    read_activities,
    write_activities,
)


def recs(*pairs):
    return [ActivityRecord(a, p) for a, p in pairs]


def random_graph(rng, n_acc=50, n_pages=10, density=0.25):
    pairs = [(f"a{i:02d}", f"p{j:02d}") for i in range(n_acc) for j in range(n_pages)
             if rng.random() < density]
    return build_bipartite(recs(*pairs)), pairs


# ---- ingestion -------------------------------------------------------------

def test_duplicate_rows_aggregate():
    parsed = parse_activities("account_id,page_id\na1,p1\na1,p1\na2,p1\n")
    assert len(parsed) == 2
    w = {(r.account_id, r.page_id): r.weight for r in parsed.records}
    assert w == {("a1", "p1"): 2, ("a2", "p1"): 1}


def test_empty_account_rejected():
    parsed = parse_activities("account_id,page_id\n,p1\na2,p1\n")
    assert parsed.rejected == 1
    assert [r.account_id for r in parsed.records] == ["a2"]


def test_missing_column_is_config_error():
    with pytest.raises(ConfigError):
        parse_activities("account,page_id\na1,p1\n")


def test_empty_input_gives_empty_list():
    assert len(parse_activities("")) == 0
    assert len(parse_activities("account_id,page_id\n")) == 0


def test_bad_weight_rejected():
    parsed = parse_activities("account_id,page_id,weight\na1,p1,0\na1,p2,2.5\na1,p3,3\n")
    assert parsed.rejected == 2
    assert parsed.records == [ActivityRecord("a1", "p3", 3)]


def test_jsonl_parsing():
    text = '{"account_id": "a1", "page_id": "p1"}\nnot json\n{"account_id": "a2", "page_id": "p1", "weight": 2}\n'
    parsed = parse_activities(text, fmt="jsonl")
    assert parsed.rejected == 1
    assert {(r.account_id, r.weight) for r in parsed.records} == {("a1", 1), ("a2", 2)}


def test_conflicting_user_is_data_error():
    with pytest.raises(DataError):
        aggregate([ActivityRecord("a1", "p1", 1, "u1"), ActivityRecord("a1", "p2", 1, "u2")])


def test_fixture_shape(tmp_path):
    # 188 accounts, 262 distinct activities
    rng = np.random.default_rng(3)
    rows = [(f"acct{i:03d}", f"page{rng.integers(40):02d}") for i in range(188)]
    seen = set(rows)
    while len(rows) < 262:
        r = (f"acct{rng.integers(188):03d}", f"page{rng.integers(40):02d}")
        if r not in seen:
            seen.add(r)
            rows.append(r)
    path = tmp_path / "fixture.csv"
    write_activities(recs(*rows), path)
    parsed = read_activities(path)
    assert len(parsed) == 262
    assert len({r.account_id for r in parsed.records}) == 188


def test_write_read_roundtrip(tmp_path):
    records = [ActivityRecord("a1", "p1", 3, "u1"), ActivityRecord("a2", "p1", 1, "u1")]
    path = tmp_path / "log.csv"
    write_activities(records, path, with_user=True)
    assert read_activities(path).records == records


# ---- bipartite graph -------------------------------------------------------

def test_empty_graph():
    g = build_bipartite([])
    assert g.n_nodes == 0 and g.n_edges == 0


def test_small_graph():
    g = build_bipartite(recs(("a1", "p1"), ("a1", "p2"), ("a2", "p1")))
    assert (g.n_accounts, g.n_pages, g.n_edges) == (2, 2, 3)


def test_token_in_both_namespaces():
    with pytest.raises(DataError, match="x"):
        build_bipartite(recs(("x", "p1"), ("a1", "x")))


def test_no_account_account_edges():
    rng = np.random.default_rng(0)
    g, _ = random_graph(rng)
    adj = g.adjacency().toarray()
    k = g.n_accounts
    assert not adj[:k, :k].any()
    assert not adj[k:, k:].any()
    np.testing.assert_array_equal(adj, adj.T)


def test_edgelist_roundtrip(tmp_path):
    g = build_bipartite([ActivityRecord("a1", "p1", 2), ActivityRecord("a2", "p1", 1)])
    path = tmp_path / "g.txt"
    g.save(path)
    h = BipartiteGraph.load(path)
    assert h.nodes == g.nodes
    assert (h.biadjacency(True) != g.biadjacency(True)).nnz == 0


# ---- projection and cleaning -----------------------------------------------

def test_projection_common_pages():
    gp = project_accounts(build_bipartite(recs(("a1", "p1"), ("a1", "p2"),
                                               ("a2", "p1"), ("a2", "p2"))))
    assert gp.weight("a1", "a2") == 2


def test_projection_disjoint():
    gp = project_accounts(build_bipartite(recs(("a1", "p1"), ("a2", "p2"))))
    assert gp.weight("a1", "a2") == 0


def test_projection_matches_set_intersection():
    rng = np.random.default_rng(1)
    g, pairs = random_graph(rng)
    pages = {}
    for a, p in pairs:
        pages.setdefault(a, set()).add(p)
    gp = project_accounts(g)
    for u, v in itertools.combinations(g.accounts, 2):
        assert gp.weight(u, v) == len(pages[u] & pages[v])


def test_degree_threshold_values():
    assert degree_threshold(1000) == pytest.approx(3.0)
    assert degree_threshold(10) == pytest.approx(1.0)


def test_filter_is_strict():
    # a0 meets 3 others, a4 meets 4 others; with |V| = 1000 (threshold 3) a4 stays
    pairs = [("a0", "p0"), ("a1", "p0"), ("a2", "p0"), ("a3", "p0"),
             ("a4", "p1"), ("a5", "p1"), ("a6", "p1"), ("a7", "p1"), ("a8", "p1")]
    gp = project_accounts(build_bipartite(recs(*pairs)))
    kept = filter_low_degree(gp, 1000)
    assert "a0" not in kept
    assert "a4" in kept


def test_isolated_accounts_removed():
    g = build_bipartite(recs(("a1", "p1"), ("a2", "p1"), ("a3", "p1"), ("a4", "p2")))
    gp = project_accounts(g)
    assert "a4" not in filter_low_degree(gp, 10)


def test_clean_matches_oracle():
    rng = np.random.default_rng(2)
    g, pairs = random_graph(rng, n_acc=80, n_pages=30, density=0.05)
    res = clean_graph(g)
    thr = math.log10(g.n_nodes)
    pages = {}
    for a, p in pairs:
        pages.setdefault(a, set()).add(p)
    deg = {u: sum(1 for v in g.accounts if v != u and pages[u] & pages[v]) for u in g.accounts}
    expect = sorted(a for a in g.accounts if deg[a] > thr)
    assert sorted(res.graph.accounts) == expect
    assert sorted(res.removed) == sorted(set(g.accounts) - set(expect))


def test_clean_empty_graph():
    res = clean_graph(build_bipartite([]))
    assert res.graph.n_nodes == 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 6)), max_size=60))
def test_projection_symmetric_nonnegative(edges):
    g = build_bipartite(recs(*[(f"a{a}", f"p{p}") for a, p in edges]))
    gp = project_accounts(g)
    m = gp.adj.toarray()
    np.testing.assert_array_equal(m, m.T)
    assert (m >= 0).all()
    assert not np.diag(m).any()
