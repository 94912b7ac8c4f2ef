import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kelp.errors import ConfigError, DataError
from kelp.kg import KnowledgeGraph, Triple, export_tables, load_kg

from oracles import hop_distance_matrix, oracle_multi_hop


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoad:
    def test_duplicate_triples_stored_once(self, tmp_path):
        kg = load_kg(write(tmp_path, "t.tsv", "a\tR\tb\na\tR\tb\n"))
        assert kg.n_entities == 2
        assert kg.n_relations == 1
        assert len(kg.triples) == 1

    def test_arity_error_reports_line(self, tmp_path):
        with pytest.raises(DataError, match=":1:"):
            load_kg(write(tmp_path, "t.tsv", "a\tR\n"))

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataError, match="empty knowledge graph"):
            load_kg(write(tmp_path, "t.tsv", ""))

    def test_star_adjacency(self, tmp_path):
        lines = "".join(f"c\tR\tl{i}\n" for i in range(5))
        kg = load_kg(write(tmp_path, "t.tsv", lines))
        c = kg.entity_id("c")
        assert len(kg.out_adj[c]) == 5
        for i in range(5):
            assert len(kg.in_adj[kg.entity_id(f"l{i}")]) == 1

    def test_adjacency_reconstructs_triples(self, tiny_kg):
        seen = [t for adj in tiny_kg.out_adj for t in adj]
        assert sorted(seen, key=lambda t: (t.head, t.relation, t.tail)) == sorted(
            tiny_kg.triples, key=lambda t: (t.head, t.relation, t.tail)
        )
        seen_in = [t for adj in tiny_kg.in_adj for t in adj]
        assert len(seen_in) == len(tiny_kg.triples)

    def test_description_only_entity_registered(self, tmp_path):
        t = write(tmp_path, "t.tsv", "a\tR\tb\n")
        d = write(tmp_path, "d.tsv", "ghost\tcapital of france\n")
        kg = load_kg(t, d)
        assert kg.entity_description(kg.entity_id("ghost")) == ("capital", "of", "france")

    def test_name_id_roundtrip(self, tiny_kg):
        for eid, name in enumerate(tiny_kg.entity_names):
            assert tiny_kg.entity_id(name) == eid
            assert tiny_kg.entity_name(eid) == name

    def test_export_tables(self, tiny_kg, tmp_path):
        e, r = str(tmp_path / "e.tsv"), str(tmp_path / "r.tsv")
        export_tables(tiny_kg, e, r)
        rows = [line.split("\t") for line in open(e).read().splitlines()]
        assert rows[0] == ["paris", "0"]
        assert len(rows) == tiny_kg.n_entities


class TestMultiHop:
    def test_isolated_entity(self, tmp_path):
        t = write(tmp_path, "t.tsv", "a\tR\tb\n")
        d = write(tmp_path, "d.tsv", "lone\tsome text\n")
        kg = load_kg(t, d)
        for r_hop in (1, 2, 5):
            assert kg.multi_hop_count(kg.entity_id("lone"), r_hop) == 0

    def test_path_graph_strict_bound(self):
        kg = KnowledgeGraph.from_triples([("a", "R", "b"), ("b", "R", "c"), ("c", "R", "d")])
        a = kg.entity_id("a")
        assert kg.multi_hop_count(a, 3) == 2  # b at hop 1, c at hop 2
        assert kg.multi_hop_count(a, 2) == 1  # strict bound keeps only b

    def test_unknown_entity(self, tiny_kg):
        with pytest.raises(DataError, match="unknown entity"):
            tiny_kg.multi_hop_count(999, 2)

    @settings(max_examples=50, deadline=None)
    @given(st.data())
    def test_matches_floyd_warshall_oracle(self, data):
        n = data.draw(st.integers(2, 30))
        n_edges = data.draw(st.integers(1, 60))
        edges = data.draw(
            st.lists(
                st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
                min_size=n_edges,
                max_size=n_edges,
            )
        )
        kg = KnowledgeGraph.from_triples(
            [(f"n{u}", "R", f"n{v}") for u, v in edges] + [(f"n{i}", "S", f"n{i}") for i in range(n)]
        )
        id_edges = [(kg.entity_id(f"n{u}"), kg.entity_id(f"n{v}")) for u, v in edges]
        dist = hop_distance_matrix(kg.n_entities, id_edges)
        for e in range(kg.n_entities):
            for r_hop in (1, 2, 3, 4):
                assert kg.multi_hop_count(e, r_hop) == oracle_multi_hop(dist, e, r_hop)

    @settings(max_examples=30, deadline=None)
    @given(st.data())
    def test_monotone_in_r_hop(self, data):
        edges = data.draw(
            st.lists(st.tuples(st.integers(0, 14), st.integers(0, 14)), min_size=1, max_size=40)
        )
        kg = KnowledgeGraph.from_triples([(f"n{u}", "R", f"n{v}") for u, v in edges])
        for e in range(kg.n_entities):
            counts = [kg.multi_hop_count(e, r) for r in range(1, 6)]
            assert counts == sorted(counts)


class TestConnectivity:
    def test_lower_clamp(self, tmp_path):
        t = write(tmp_path, "t.tsv", "a\tR\tb\n")
        d = write(tmp_path, "d.tsv", "lone\tx\n")
        kg = load_kg(t, d)
        assert kg.knowledge_connectivity(kg.entity_id("lone"), 2, 1, 30) == 1

    def test_upper_clamp_on_dense_star(self):
        kg = KnowledgeGraph.from_triples([("c", "R", f"l{i}") for i in range(50)])
        assert kg.knowledge_connectivity(kg.entity_id("c"), 2, 1, 30) == 30

    def test_identity_inside_range(self):
        kg = KnowledgeGraph.from_triples([("c", "R", f"l{i}") for i in range(7)])
        assert kg.knowledge_connectivity(kg.entity_id("c"), 2, 1, 30) == 7

    def test_bad_range(self, tiny_kg):
        with pytest.raises(ConfigError):
            tiny_kg.knowledge_connectivity(0, 2, 5, 4)

    @settings(max_examples=30, deadline=None)
    @given(
        st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=30),
        st.integers(1, 4),
        st.integers(0, 5),
        st.integers(5, 40),
    )
    def test_always_within_bounds(self, edges, r_hop, r_min, r_max):
        kg = KnowledgeGraph.from_triples([(f"n{u}", "R", f"n{v}") for u, v in edges])
        for e in range(kg.n_entities):
            kc = kg.knowledge_connectivity(e, r_hop, r_min, r_max)
            assert r_min <= kc <= r_max


class TestSampleNegatives:
    def test_only_participant_is_ground_truth(self):
        kg = KnowledgeGraph.from_triples([("a", "R", "a"), ("b", "S", "c")])
        a = kg.entity_id("a")
        assert kg.sample_negatives(kg.relation_id("R"), a, 20, role="tail") == []

    def test_pool_smaller_than_n(self):
        kg = KnowledgeGraph.from_triples([(f"h{i}", "R", f"t{i}") for i in range(5)])
        gt = kg.entity_id("t0")
        negs = kg.sample_negatives(kg.relation_id("R"), gt, 20, role="tail")
        assert len(negs) == 4
        assert len(set(negs)) == 4
        assert gt not in negs

    def test_degree_ranking(self):
        # hub participates in many triples, so it must rank first
        triples = [("hub", "R", "x"), ("a", "R", "x"), ("b", "R", "x")]
        triples += [("hub", "S", f"y{i}") for i in range(5)]
        kg = KnowledgeGraph.from_triples(triples)
        negs = kg.sample_negatives(kg.relation_id("R"), kg.entity_id("x"), 3, role="head")
        assert negs[0] == kg.entity_id("hub")

    def test_deterministic_across_seeds(self, tiny_kg):
        rid = tiny_kg.relation_id("borders")
        gt = tiny_kg.entity_id("spain")
        a = tiny_kg.sample_negatives(rid, gt, 20, seed=1, role="tail")
        b = tiny_kg.sample_negatives(rid, gt, 20, seed=999, role="tail")
        assert a == b

    def test_role_selects_side(self):
        kg = KnowledgeGraph.from_triples([("h1", "R", "t1"), ("h2", "R", "t2")])
        heads = kg.sample_negatives(kg.relation_id("R"), kg.entity_id("h1"), 20, role="head")
        assert heads == [kg.entity_id("h2")]
        tails = kg.sample_negatives(kg.relation_id("R"), kg.entity_id("t1"), 20, role="tail")
        assert tails == [kg.entity_id("t2")]


class TestDescriptions:
    def test_retrieval(self, tiny_kg):
        assert tiny_kg.entity_description(tiny_kg.entity_id("paris")) == ("a", "large", "city")

    def test_absent(self, tiny_kg):
        assert tiny_kg.entity_description(tiny_kg.entity_id("spain")) is None

    def test_unknown_entity(self, tiny_kg):
        with pytest.raises(DataError):
            tiny_kg.entity_description(-1)


class TestTriplesOf:
    def test_roles(self, tiny_kg):
        france = tiny_kg.entity_id("france")
        records = tiny_kg.triples_of(france)
        roles = {(t.head, t.relation, t.tail): role for t, role in records}
        assert len(records) == 3  # head of borders, tail of capital-of and city-in
        assert sum(1 for r in roles.values() if r == "head") == 1

    def test_self_loop_single_record(self):
        kg = KnowledgeGraph.from_triples([("a", "R", "a")])
        records = kg.triples_of(kg.entity_id("a"))
        assert len(records) == 1
        assert records[0][1] == "head"
