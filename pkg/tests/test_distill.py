import numpy as np
import pytest

from kgrerank.distill import (
    EntityLexicon,
    MetaGraph,
    PrunedGraph,
    build_meta_graph,
    discover_paths,
    meta_graph_stats,
    prune_graph,
    read_meta_graphs,
    recognize_entities,
    select_key_sentence,
    write_meta_graphs,
)
from kgrerank.embeddings import WordEmbeddingTable, triplet_reliability
from kgrerank.errors import ConfigurationError
from kgrerank.kg import KnowledgeGraph
from kgrerank.text import tokenize

from helpers import (
    as_pruned,
    embeddings_with_tail_scores,
    enumerate_paths_dfs,
    random_embeddings,
    random_graph,
)


def one_hot_table(words):
    eye = np.eye(len(words))
    return WordEmbeddingTable(
        vectors={w: eye[i].copy() for i, w in enumerate(words)}, dim=len(words)
    )


class TestPruneGraph:
    def test_keeps_top_two_by_reliability(self):
        # head 0 with tails 1, 2, 3 scored 3.0, 1.0, 2.5
        g = KnowledgeGraph.from_triplets(
            ["a", "b", "c", "d"], ["r"], [(0, 0, 1), (0, 0, 2), (0, 0, 3)]
        )
        emb = embeddings_with_tail_scores({1: 3.0, 2: 1.0, 3: 2.5}, 4, 1)
        pruned = prune_graph(g, emb, pi=2)
        assert pruned.neighbors(0) == [(0, 1), (0, 3)]

    def test_underfull_head_keeps_all(self):
        g = KnowledgeGraph.from_triplets(["a", "b"], ["r"], [(0, 0, 1)])
        emb = embeddings_with_tail_scores({1: 1.0}, 2, 1)
        pruned = prune_graph(g, emb, pi=5)
        assert pruned.neighbors(0) == [(0, 1)]

    def test_tie_breaks_by_relation_id(self):
        g = KnowledgeGraph.from_triplets(
            ["a", "b"], ["r0", "r1"], [(0, 1, 1), (0, 0, 1)]
        )
        emb = embeddings_with_tail_scores({1: 2.0}, 2, 2)
        pruned = prune_graph(g, emb, pi=1)
        assert pruned.neighbors(0) == [(0, 1)]

    def test_pi_zero_rejected(self):
        g = KnowledgeGraph.from_triplets(["a", "b"], ["r"], [(0, 0, 1)])
        emb = embeddings_with_tail_scores({1: 1.0}, 2, 1)
        with pytest.raises(ConfigurationError):
            prune_graph(g, emb, pi=0)

    def brute_force_prune(self, g, emb, pi):
        kept = {}
        for h in range(g.num_entities):
            edges = [(r, t) for hh, r, t in g.triplets if hh == h]
            ranked = sorted(
                edges, key=lambda e: (-triplet_reliability(emb, h, e[0], e[1]), e[0], e[1])
            )
            kept[h] = sorted(ranked[:pi])
        return kept

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            g = random_graph(rng, 10, 4, int(rng.integers(5, 40)))
            emb = random_embeddings(rng, g)
            pi = int(rng.integers(1, 5))
            pruned = prune_graph(g, emb, pi)
            oracle = self.brute_force_prune(g, emb, pi)
            for h in range(g.num_entities):
                assert sorted(pruned.neighbors(h)) == oracle[h]

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        g = random_graph(rng, 8, 3, 20)
        emb = random_embeddings(rng, g)
        pruned = prune_graph(g, emb, pi=2)
        pruned.save(tmp_path / "pruned.json")
        loaded = PrunedGraph.load(tmp_path / "pruned.json")
        assert loaded.adjacency == pruned.adjacency
        assert loaded.pi == pruned.pi
        assert loaded.entities == pruned.entities


class TestSelectKeySentence:
    def test_argmax(self):
        tbl = one_hot_table(["q", "a", "b"])
        tbl.vectors["a"] = np.array([0.1, 0, 0])
        tbl.vectors["b"] = np.array([0.9, 0, 0])
        tbl.vectors["q"] = np.array([1.0, 0, 0])
        sentences = [["a"], ["b"], ["a", "a"]]
        idx, score = select_key_sentence(tbl, ["q"], sentences)
        assert idx == 1
        assert score == pytest.approx(0.9)

    def test_tie_keeps_first(self):
        tbl = one_hot_table(["q"])
        tbl.vectors["q"] = np.array([1.0])
        idx, _ = select_key_sentence(tbl, ["q"], [["q"], ["q"]])
        assert idx == 0

    def test_all_undefined_falls_back(self):
        tbl = one_hot_table(["q"])
        idx, score = select_key_sentence(tbl, ["q"], [["zz"], ["yy"]])
        assert idx == 0
        assert score is None

    def test_undefined_sentences_skipped(self):
        tbl = one_hot_table(["q"])
        idx, score = select_key_sentence(tbl, ["q"], [["zz"], ["q"]])
        assert idx == 1
        assert score is not None


class TestRecognizeEntities:
    def test_longest_match_beats_subsequence(self):
        lex = EntityLexicon.from_entities(["liver", "liver_enzyme", "cause"])
        tokens = tokenize("what causes low liver enzymes")
        matches = recognize_entities(tokens, lex)
        ids = [eid for eid, _ in matches]
        assert lex.phrases[("liver", "enzyme")] in ids
        assert lex.phrases[("liver",)] not in ids
        # "causes" resolves to "cause" through the plural fallback
        assert lex.phrases[("cause",)] in ids

    def test_empty_lexicon(self):
        lex = EntityLexicon.from_entities([])
        assert recognize_entities(["a", "b"], lex) == []

    def test_repeated_mentions(self):
        lex = EntityLexicon.from_entities(["a_b"])
        matches = recognize_entities(["a", "b", "a", "b"], lex)
        assert [span for _, span in matches] == [(0, 2), (2, 4)]

    def test_spans_strictly_increasing_and_disjoint(self):
        rng = np.random.default_rng(23)
        lex = EntityLexicon.from_entities(["a", "a_b", "b_c_d", "d"])
        alphabet = ["a", "b", "c", "d", "e"]
        for _ in range(100):
            tokens = [alphabet[i] for i in rng.integers(len(alphabet), size=12)]
            matches = recognize_entities(tokens, lex)
            prev_end = -1
            for _, (start, end) in matches:
                assert start >= prev_end
                assert start < end
                prev_end = end


class TestDiscoverPaths:
    def test_chain(self):
        g = KnowledgeGraph.from_triplets(
            ["a", "b", "c"], ["r"], [(0, 0, 1), (1, 0, 2)]
        )
        paths, truncated = discover_paths(as_pruned(g), [0], [2], k=2)
        assert paths == [[0, 0, 1, 0, 2]]
        assert not truncated

    def test_no_zero_hop_paths(self):
        # source equals target: only cycles count, and the 3-cycle needs 3 hops
        g = KnowledgeGraph.from_triplets(
            ["a", "b", "c"], ["r"], [(0, 0, 1), (1, 0, 2), (2, 0, 0)]
        )
        paths_k2, _ = discover_paths(as_pruned(g), [0], [0], k=2)
        assert paths_k2 == []
        paths_k3, _ = discover_paths(as_pruned(g), [0], [0], k=3)
        assert paths_k3 == [[0, 0, 1, 0, 2, 0, 0]]

    def test_paths_stop_at_first_target(self):
        # a -> b -> c with both b and c targets: only the one-hop path to b
        g = KnowledgeGraph.from_triplets(
            ["a", "b", "c"], ["r"], [(0, 0, 1), (1, 0, 2)]
        )
        paths, _ = discover_paths(as_pruned(g), [0], [1, 2], k=3)
        assert paths == [[0, 0, 1]]

    def test_matches_dfs_oracle_on_random_graphs(self):
        rng = np.random.default_rng(31)
        for _ in range(60):
            g = random_graph(rng, 12, 3, int(rng.integers(6, 30)))
            pg = as_pruned(g)
            sources = list(rng.choice(12, size=3, replace=False))
            targets = list(rng.choice(12, size=3, replace=False))
            k = int(rng.integers(1, 4))
            paths, truncated = discover_paths(pg, sources, targets, k)
            assert not truncated
            assert {tuple(p) for p in paths} == enumerate_paths_dfs(pg, sources, targets, k)

    def test_frontier_cap_sets_flag(self):
        # dense bipartite fan-out blows past a frontier of 2
        triplets = [(0, 0, t) for t in range(1, 6)] + [
            (h, 0, t) for h in range(1, 6) for t in range(6, 11)
        ]
        g = KnowledgeGraph.from_triplets(
            [f"e{i}" for i in range(12)], ["r"], triplets
        )
        paths, truncated = discover_paths(as_pruned(g), [0], [11], k=3, max_frontier=2)
        assert truncated

    def test_growing_pi_never_removes_paths(self):
        rng = np.random.default_rng(37)
        for _ in range(20):
            g = random_graph(rng, 10, 3, 30)
            emb = random_embeddings(rng, g)
            sources = list(rng.choice(10, size=2, replace=False))
            targets = list(rng.choice(10, size=2, replace=False))
            previous: set[tuple[int, ...]] = set()
            for pi in (1, 2, 5, 30):
                pruned = prune_graph(g, emb, pi)
                paths, _ = discover_paths(pruned, sources, targets, k=2)
                current = {tuple(p) for p in paths}
                assert previous <= current
                previous = current


class TestBuildMetaGraph:
    def setup_world(self):
        g = KnowledgeGraph.from_triplets(
            ["anemia", "iron", "fatigue"],
            ["causes"],
            [(0, 0, 1), (1, 0, 2)],
        )
        lex = EntityLexicon.from_graph(g)
        words = ["anemia", "iron", "fatigue", "what", "helps", "with", "story",
                 "about", "nothing", "filler"]
        tbl = one_hot_table(words)
        return g, lex, tbl

    def test_chain_path_found(self):
        g, lex, tbl = self.setup_world()
        mg = build_meta_graph(
            "what helps anemia", "story about nothing. fatigue helps.",
            as_pruned(g), lex, tbl, k=2,
        )
        assert mg.key_sentence_index == 1
        assert mg.paths == [[0, 0, 1, 0, 2]]
        assert mg.nodes == [0, 1, 2]
        assert mg.edges == [(0, 0, 1), (1, 0, 2)]
        assert not mg.is_empty
        mg.validate()

    def test_no_sentence_entities_gives_empty_graph(self):
        g, lex, tbl = self.setup_world()
        mg = build_meta_graph(
            "what helps anemia", "story about nothing. filler helps.",
            as_pruned(g), lex, tbl, k=2,
        )
        assert mg.is_empty
        assert mg.query_entities == [0]
        assert mg.sentence_entities == []

    def test_key_sentence_span_indexes_passage_tokens(self):
        g, lex, tbl = self.setup_world()
        passage = "story about nothing. fatigue helps."
        mg = build_meta_graph("what helps anemia", passage, as_pruned(g), lex, tbl, k=2)
        start, end = mg.key_sentence_span
        assert tokenize(passage)[start:end] == ["fatigue", "helps"]

    def test_jsonl_round_trip_byte_exact(self, tmp_path):
        g, lex, tbl = self.setup_world()
        mg1 = build_meta_graph(
            "what helps anemia", "story about nothing. fatigue helps.",
            as_pruned(g), lex, tbl, k=2,
        )
        mg2 = build_meta_graph(
            "what helps iron", "filler. nothing here.", as_pruned(g), lex, tbl, k=1,
        )
        path_a, path_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_meta_graphs(path_a, [("q0#p0", mg1), ("q1#p1", mg2)])
        loaded = read_meta_graphs(path_a)
        write_meta_graphs(path_b, [("q0#p0", loaded["q0#p0"]), ("q1#p1", loaded["q1#p1"])])
        assert path_a.read_bytes() == path_b.read_bytes()
        assert loaded["q0#p0"].paths == mg1.paths
        assert loaded["q0#p0"].key_sentence_span == mg1.key_sentence_span


class TestMetaGraphStats:
    def test_hand_example(self):
        # one meta-graph with 2 edges of reliability 1.0 and 3.0
        emb = embeddings_with_tail_scores({1: 1.0, 2: 3.0}, 3, 1)
        mg = MetaGraph(
            query_entities=[0], sentence_entities=[1, 2],
            nodes=[0, 1, 2], edges=[(0, 0, 1), (0, 0, 2)],
            paths=[[0, 0, 1], [0, 0, 2]],
            key_sentence_index=0, key_sentence_span=(0, 1),
        )
        stats = meta_graph_stats([mg], emb)
        assert stats == {"avg_edge_count": 2.0, "avg_edge_score": 2.0}

    def test_single_empty_graph(self):
        emb = embeddings_with_tail_scores({}, 1, 1)
        mg = MetaGraph(
            query_entities=[], sentence_entities=[], nodes=[], edges=[], paths=[],
            key_sentence_index=0, key_sentence_span=(0, 0),
        )
        stats = meta_graph_stats([mg], emb)
        assert stats["avg_edge_count"] == 0.0
        assert stats["avg_edge_score"] is None

    def test_empty_list_rejected(self):
        emb = embeddings_with_tail_scores({}, 1, 1)
        with pytest.raises(ConfigurationError):
            meta_graph_stats([], emb)

    def test_empty_graphs_dilute_count_not_score(self):
        emb = embeddings_with_tail_scores({1: 2.0}, 2, 1)
        full = MetaGraph(
            query_entities=[0], sentence_entities=[1], nodes=[0, 1],
            edges=[(0, 0, 1)], paths=[[0, 0, 1]],
            key_sentence_index=0, key_sentence_span=(0, 1),
        )
        empty = MetaGraph(
            query_entities=[], sentence_entities=[], nodes=[], edges=[], paths=[],
            key_sentence_index=0, key_sentence_span=(0, 0),
        )
        stats = meta_graph_stats([full, empty], emb)
        assert stats["avg_edge_count"] == 0.5
        assert stats["avg_edge_score"] == 2.0
