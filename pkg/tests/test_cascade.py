import itertools
import json
import os

import numpy as np
import pytest

from ebgcn import cascade
from ebgcn.cascade import (
    CascadeError,
    Claim,
    ClaimValidationError,
    Dataset,
    TweetNode,
    build_graph,
    claim_problem,
    load_claims,
    truncate_claim,
    write_claims,
)
from ebgcn.datagen import GenConfig, generate

from conftest import chain, random_tree


def test_single_node_graph_has_empty_adjacency():
    c = Claim("s", "NR", (TweetNode("s:0"),), ())
    g = build_graph(c, np.ones((1, 3)))
    np.testing.assert_array_equal(g.a_td, np.zeros((1, 1)))
    np.testing.assert_array_equal(g.a_bu, np.zeros((1, 1)))


def test_chain_adjacency_and_transpose():
    g = build_graph(chain(3), np.zeros((3, 2)))
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 2] = 1
    np.testing.assert_array_equal(g.a_td, expected)
    np.testing.assert_array_equal(g.a_bu, expected.T)
    assert not g.a_td.flags.writeable


def test_duplicate_edge_is_structural_error():
    nodes = tuple(TweetNode(f"u{k}", "", float(k)) for k in range(4))
    c = Claim("star", "F", nodes, ((0, 1), (0, 2), (0, 3), (0, 1)))
    with pytest.raises(CascadeError, match="duplicate edge"):
        build_graph(c, np.zeros((4, 2)))


def test_feature_row_mismatch():
    with pytest.raises(CascadeError, match="expected 3 rows"):
        build_graph(chain(3), np.zeros((4, 2)))


def _brute_force_valid(n, edges):
    # a claim is valid iff following edges from node 0 reaches every node and never revisits a path node
    if len(set(edges)) != len(edges) or any(p == c for p, c in edges):
        return False
    adj = {u: [c for p, c in edges if p == u] for u in range(n)}
    seen = set()

    def dfs(u, path):
        if u in path:
            return False
        seen.add(u)
        return all(dfs(v, path | {u}) for v in adj[u])

    return dfs(0, frozenset()) and len(seen) == n


def test_invariant_checker_against_enumeration():
    # every multiset of up to 3 edges over 3 nodes
    pairs = [(p, c) for p in range(3) for c in range(3)]
    for k in range(0, 4):
        for edges in itertools.product(pairs, repeat=k):
            c = Claim("x", "NR", tuple(TweetNode(f"u{i}", "", float(i)) for i in range(3)), tuple(edges))
            assert (claim_problem(c) is None) == _brute_force_valid(3, list(edges)), edges


def test_dag_with_shared_child_is_valid():
    nodes = tuple(TweetNode(f"u{k}", "", float(k)) for k in range(3))
    assert claim_problem(Claim("d", "T", nodes, ((0, 1), (0, 2), (1, 2)))) is None


def test_source_time_must_be_zero():
    c = Claim("x", "NR", (TweetNode("a", "", 1.0),), ())
    assert "source" in claim_problem(c)


def test_round_trip_single_claim(tmp_path):
    ds = Dataset((chain(3, cid="one"),))
    write_claims(ds, tmp_path / "d.jsonl")
    back = load_claims(tmp_path / "d.jsonl")
    assert back == ds
    assert back.claims[0].n == 3 and len(back.claims[0].edges) == 2


def test_round_trip_100_synthetic_claims(tmp_path):
    ds = generate(GenConfig(claims_per_class=25, dim=4, seed=11, num_events=3)).dataset
    assert len(ds) == 100
    write_claims(ds, tmp_path / "d.jsonl")
    back = load_claims(tmp_path / "d.jsonl")
    assert back == ds
    for a, b in zip(ds.claims, back.claims):
        assert [nd.t for nd in a.nodes] == [nd.t for nd in b.nodes]


def test_empty_file_is_structural_error(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(CascadeError):
        load_claims(tmp_path / "e.jsonl")


def test_out_of_range_edge_names_claim(tmp_path):
    rec = cascade.claim_to_record(chain(3, cid="bad-claim"))
    rec["edges"].append([0, 9])
    (tmp_path / "b.jsonl").write_text(json.dumps(rec) + "\n")
    with pytest.raises(ClaimValidationError) as info:
        load_claims(tmp_path / "b.jsonl")
    assert info.value.claim_id == "bad-claim"
    assert "bad-claim" in str(info.value)


def test_lenient_mode_skips_invalid(tmp_path, caplog):
    good = cascade.claim_to_record(chain(2, cid="good"))
    bad = cascade.claim_to_record(chain(3, cid="bad"))
    bad["edges"] = [[0, 1]]
    (tmp_path / "m.jsonl").write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    ds = load_claims(tmp_path / "m.jsonl", strict=False)
    assert [c.id for c in ds.claims] == ["good"]
    assert "bad" in caplog.text


def test_unwritable_path_raises(tmp_path):
    target = tmp_path / "no_such_dir" / "d.jsonl"
    with pytest.raises(OSError):
        write_claims(Dataset((chain(2),)), target)


def test_label_aliases(tmp_path):
    rec = cascade.claim_to_record(chain(2))
    rec["label"] = "non-rumor"
    (tmp_path / "a.jsonl").write_text(json.dumps(rec) + "\n")
    assert load_claims(tmp_path / "a.jsonl").claims[0].label == "NR"
    rec["label"] = "maybe"
    (tmp_path / "a.jsonl").write_text(json.dumps(rec) + "\n")
    with pytest.raises(CascadeError, match="unknown label"):
        load_claims(tmp_path / "a.jsonl")


def test_truncate_deadline_zero_keeps_source():
    t = truncate_claim(chain(5), deadline_minutes=0)
    assert t.n == 1 and t.edges == ()


def test_truncate_max_tweets_at_least_n_is_identity():
    c = chain(5)
    assert truncate_claim(c, max_tweets=5) is c
    assert truncate_claim(c, max_tweets=50) == c


def _filter_oracle(claim, deadline):
    keep = [i for i, nd in enumerate(claim.nodes) if nd.t <= deadline]
    edges = [(p, c) for p, c in claim.edges if p in keep and c in keep]
    return len(keep), len(edges)


def test_truncate_chain_deadline_25():
    c = chain(5, gap=10.0)
    t = truncate_claim(c, deadline_minutes=25)
    assert (t.n, len(t.edges)) == (3, 2) == _filter_oracle(c, 25)
    assert t.validate() is t


def test_truncate_requires_one_policy():
    with pytest.raises(ValueError):
        truncate_claim(chain(3))
    with pytest.raises(ValueError):
        truncate_claim(chain(3), deadline_minutes=1, max_tweets=2)


def test_truncate_drops_orphaned_nodes():
    # node 2 is early but hangs below node 1, which is late
    nodes = (TweetNode("a", "", 0.0), TweetNode("b", "", 50.0), TweetNode("c", "", 5.0))
    c = Claim("o", "NR", nodes, ((0, 1), (1, 2)))
    t = truncate_claim(c, deadline_minutes=10)
    assert t.n == 1


def test_truncation_is_monotone_and_valid(rng):
    for k in range(30):
        c = random_tree(rng, int(rng.integers(2, 15)), cid=f"r{k}")
        prev = 0
        for m in range(1, c.n + 1):
            t = truncate_claim(c, max_tweets=m)
            assert claim_problem(t) is None
            assert prev <= t.n <= m
            prev = t.n
        assert prev == c.n


MA_TREE = """['ROOT', 'ROOT', '0.0']->['100', '500', '0.0']
['100', '500', '0.0']->['200', '501', '1.5']
['100', '500', '0.0']->['300', '502', '3.0']
  ['200', '501',  '1.5'] -> ['400', '503', '2.0']
['100', '500', '0.0']->['200', '501', '1.5']
"""


def test_parse_ma_tree(tmp_path):
    f = tmp_path / "500.txt"
    f.write_text(MA_TREE)
    report = cascade.ConversionReport()
    c = cascade.parse_tree_file(f, "500", "F", report)
    assert c.n == 4
    assert [nd.uid for nd in c.nodes] == ["100:500", "200:501", "400:503", "300:502"]
    assert [nd.t for nd in c.nodes] == [0.0, 1.5, 2.0, 3.0]
    assert set(c.edges) == {(0, 1), (0, 3), (1, 2)}
    assert report.dropped_edges == [("500", "duplicate")]
    assert claim_problem(c) is None


def test_parse_tree_line_rejects_garbage():
    with pytest.raises(ValueError):
        cascade.parse_tree_line("['a', 'b']->['c', 'd', 'e']")
    with pytest.raises(ValueError):
        cascade.parse_tree_line("a -> b")


def test_convert_and_reload(tmp_path):
    trees = tmp_path / "tree"
    trees.mkdir()
    (trees / "500.txt").write_text(MA_TREE)
    (trees / "600.txt").write_text("['ROOT', 'ROOT', '0.0']->['7', '600', '0.0']\n['7', '600', '0.0']->['8', '601', 'x']\n")
    (tmp_path / "label.txt").write_text("false:500\nnon-rumor:600\n")
    rep = cascade.convert_ma_trees(trees, tmp_path / "out.jsonl")
    assert rep.claims == 2 and rep.imputed_times == ["600"]
    ds = load_claims(tmp_path / "out.jsonl")
    assert [c.label for c in ds.claims] == ["F", "NR"]
    direct = load_claims(trees, format="ma-tree", labels_path=tmp_path / "label.txt")
    assert direct == ds


def test_write_is_deterministic(tmp_path):
    ds = generate(GenConfig(claims_per_class=3, dim=3, seed=5)).dataset
    write_claims(ds, tmp_path / "a.jsonl")
    write_claims(load_claims(tmp_path / "a.jsonl"), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
