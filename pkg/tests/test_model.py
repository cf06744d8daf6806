import numpy as np
import pytest

import kgrerank.autodiff as ad
from kgrerank.autodiff import ParamStore, Tensor, grad_check
from kgrerank.distill import MetaGraph, _collect_path_union
from kgrerank.embeddings import KgEmbeddings
from kgrerank.errors import ConfigurationError, InputError
from kgrerank.model import (
    KnowledgeReranker,
    RerankerConfig,
    Vocab,
    _GraphContext,
    align_entities,
    init_params,
    injector_layer,
    load_checkpoint,
    multi_head_attention,
    propagate_meta_graph,
    save_checkpoint,
    tokenize_pair,
    transformer_layer,
)

TINY = dict(hidden_dim=8, ffn_dim=16, entity_dim=4, n_heads=2, max_len=24)


def tiny_cfg(mode="full", n=1, m=1, k=2):
    return RerankerConfig(
        n_encoder_layers=n, n_injector_layers=m, gmn_rounds=k, mode=mode, **TINY
    )


def make_mg(paths, q_ents, s_ents, q_spans, s_spans, key_span=(0, 3)):
    nodes, edges = _collect_path_union(paths)
    return MetaGraph(
        query_entities=q_ents,
        sentence_entities=s_ents,
        nodes=nodes,
        edges=edges,
        paths=paths,
        key_sentence_index=0,
        key_sentence_span=key_span,
        query_entity_spans=q_spans,
        sentence_entity_spans=s_spans,
    )


EMPTY_MG = MetaGraph(
    query_entities=[], sentence_entities=[], nodes=[], edges=[], paths=[],
    key_sentence_index=0, key_sentence_span=(0, 0),
)


@pytest.fixture
def world():
    rng = np.random.default_rng(0)
    vocab = Vocab.build(["alpha beta gamma delta epsilon zeta eta theta"])
    emb = KgEmbeddings(
        entity_vecs=rng.normal(size=(6, 4)), relation_vecs=rng.normal(size=(3, 4)), dim=4
    )
    pair_cfg = tiny_cfg()
    pair = tokenize_pair("alpha beta", "gamma delta. epsilon zeta.", vocab, pair_cfg.max_len)
    mg = make_mg(
        paths=[[0, 0, 1, 1, 2], [0, 2, 3, 0, 2], [4, 1, 2]],
        q_ents=[0, 4], s_ents=[2],
        q_spans=[(0, 0, 1), (4, 1, 2)], s_spans=[(2, 0, 1)],
        key_span=(0, 2),
    )
    return rng, vocab, emb, pair, mg


class TestTokenizePair:
    def test_layout(self):
        vocab = Vocab.build(["a b"])
        pair = tokenize_pair("a", "b", vocab, max_len=8)
        a, b = vocab.encode("a"), vocab.encode("b")
        cls_id, sep = vocab.encode("[CLS]"), vocab.encode("[SEP]")
        assert pair.token_ids == [cls_id, a, sep, b, sep]
        assert pair.segment_ids == [0, 0, 0, 1, 1]
        assert pair.positions == [0, 1, 2, 3, 4]
        assert pair.attention_mask == [1, 1, 1, 1, 1]

    def test_passage_truncated_first(self):
        vocab = Vocab.build(["q1 q2 p1 p2 p3 p4"])
        pair = tokenize_pair("q1 q2", "p1 p2 p3 p4", vocab, max_len=7)
        assert pair.q_tokens == ["q1", "q2"]
        assert pair.p_tokens == ["p1", "p2"]
        assert len(pair) == 7

    def test_unseen_word_maps_to_unk(self):
        vocab = Vocab.build(["a"])
        pair = tokenize_pair("zzz", "a", vocab, max_len=8)
        assert pair.token_ids[1] == vocab.encode("[UNK]")

    def test_empty_query_rejected(self):
        vocab = Vocab.build(["a"])
        with pytest.raises(InputError):
            tokenize_pair("...", "a", vocab, max_len=8)


class TestTransformerLayer:
    def test_zeroed_weights_reduce_to_double_layernorm(self):
        rng = np.random.default_rng(1)
        cfg = tiny_cfg(m=0, mode="vanilla")
        params = init_params(cfg, 10, rng)
        for name in ("enc.0.attn.wo", "enc.0.attn.bo", "enc.0.ffn.w2.w", "enc.0.ffn.w2.b"):
            params[name].data[:] = 0.0
        x = Tensor(rng.normal(size=(5, cfg.hidden_dim)))
        out = transformer_layer(params, "enc.0", x, cfg.n_heads)
        ones = Tensor(np.ones((1, cfg.hidden_dim)))
        zeros = Tensor(np.zeros((1, cfg.hidden_dim)))
        want = ad.layer_norm(ad.layer_norm(x, ones, zeros), ones, zeros)
        assert np.array_equal(out.data, want.data)

    def test_attention_rows_sum_to_one_per_head(self):
        rng = np.random.default_rng(2)
        cfg = tiny_cfg(m=0, mode="vanilla")
        params = init_params(cfg, 10, rng)
        x = Tensor(rng.normal(size=(6, cfg.hidden_dim)))
        capture: list = []
        transformer_layer(params, "enc.0", x, cfg.n_heads, capture)
        assert len(capture) == cfg.n_heads
        for att in capture:
            assert att.shape == (6, 6)
            assert np.abs(att.sum(axis=1) - 1.0).max() <= 1e-9

    def test_single_token_attention_is_value_projection(self):
        rng = np.random.default_rng(3)
        cfg = tiny_cfg(m=0, mode="vanilla")
        params = init_params(cfg, 10, rng)
        params["enc.0.attn.wo"].data[:] = np.eye(cfg.hidden_dim)
        params["enc.0.attn.bo"].data[:] = 0.0
        x = Tensor(rng.normal(size=(1, cfg.hidden_dim)))
        out = multi_head_attention(params, "enc.0.attn", x, cfg.n_heads)
        want = x.data @ params["enc.0.attn.wv"].data + params["enc.0.attn.bv"].data
        assert np.allclose(out.data, want, atol=1e-12)


class TestAlignEntities:
    def test_first_token_rule(self):
        vocab = Vocab.build(["liver enzyme low test passage words"])
        pair = tokenize_pair("liver enzyme low", "test passage words", vocab, 16)
        mg = make_mg(
            paths=[[0, 0, 1]], q_ents=[0], s_ents=[1],
            q_spans=[(0, 0, 2)], s_spans=[(1, 0, 1)], key_span=(0, 3),
        )
        alignment = align_entities(pair, mg)
        # entity 0 covers "liver enzyme": first token "liver" is pair index 1
        assert alignment.aligned[0] == 1

    def test_no_targets_empty_alignment(self):
        vocab = Vocab.build(["a b"])
        pair = tokenize_pair("a", "b", vocab, 8)
        alignment = align_entities(pair, EMPTY_MG)
        assert alignment.aligned == {}
        assert alignment.intermediate == []

    def test_truncated_phrase_demoted_to_intermediate(self):
        vocab = Vocab.build(["q w1 w2 w3 target"])
        # max_len 5 keeps only one passage token; "target" at span (1, 2) is cut
        pair = tokenize_pair("q", "w1 target", vocab, max_len=5)
        assert pair.p_tokens == ["w1"]
        mg = make_mg(
            paths=[[0, 0, 1]], q_ents=[0], s_ents=[1],
            q_spans=[(0, 0, 1)], s_spans=[(1, 1, 2)], key_span=(0, 2),
        )
        alignment = align_entities(pair, mg)
        assert 1 in alignment.intermediate
        assert alignment.aligned == {0: 1}

    def test_sentence_entity_position_offsets(self):
        vocab = Vocab.build(["q s1 s2 key ent"])
        pair = tokenize_pair("q", "s1 s2. key ent.", vocab, 16)
        mg = make_mg(
            paths=[[0, 0, 1]], q_ents=[0], s_ents=[1],
            q_spans=[(0, 0, 1)], s_spans=[(1, 1, 2)], key_span=(2, 4),
        )
        alignment = align_entities(pair, mg)
        # passage tokens start at len(q)+2 = 3; entity at passage index 3
        assert alignment.aligned[1] == 3 + 3


class TestGraphPropagation:
    def run_gmn(self, e0_rows, paths, rounds=1, capture=None, seed=4):
        rng = np.random.default_rng(seed)
        mg = make_mg(paths, q_ents=[paths[0][0]], s_ents=[p[-1] for p in paths],
                     q_spans=[], s_spans=[])
        from kgrerank.model import EntityAlignment
        ctx = _GraphContext(mg, EntityAlignment())
        params = ParamStore()
        d = e0_rows.shape[1]
        for gate in ("alpha", "beta", "gamma"):
            params.add(f"g.{gate}.w", rng.normal(size=(2 * d, 1)))
            params.add(f"g.{gate}.b", np.zeros((1, 1)))
        # per-edge relation rows, identical for edges sharing a relation id
        rel_table = rng.normal(size=(3, d))
        rel = Tensor(rel_table[[r for _, r, _ in ctx.edges]])
        out = propagate_meta_graph(
            Tensor(e0_rows), ctx, rel, params, "g", rounds, capture=capture
        )
        return ctx, out

    def test_single_neighbor_weight_is_one(self):
        capture: list = []
        rng = np.random.default_rng(5)
        e0 = rng.normal(size=(2, 4))
        self.run_gmn(e0, [[0, 0, 1]], capture=capture)
        for weights in capture:
            assert weights.shape == (1, 1)
            assert weights[0, 0] == 1.0

    def test_zero_state_stays_zero(self):
        e0 = np.zeros((3, 4))
        _, out = self.run_gmn(e0, [[0, 0, 1, 1, 2]], rounds=3)
        assert np.array_equal(out.data, np.zeros((3, 4)))

    def test_identical_neighbors_split_weight_evenly(self):
        rng = np.random.default_rng(6)
        row = rng.normal(size=4)
        # node 0 sees nodes 1 and 2 through the same relation; 1 and 2
        # carry identical vectors, so both attention logits are equal
        e0 = np.vstack([rng.normal(size=4), row, row])
        capture: list = []
        self.run_gmn(e0, [[0, 0, 1], [0, 0, 2]], capture=capture)
        weights = capture[0]
        assert weights.shape == (1, 2)
        assert weights[0] == pytest.approx([0.5, 0.5])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        e0 = rng.normal(size=(4, 4))
        capture: list = []
        self.run_gmn(e0, [[0, 0, 1, 1, 2], [0, 2, 3, 0, 2]], rounds=2, capture=capture)
        assert capture
        for weights in capture:
            assert abs(weights.sum() - 1.0) <= 1e-9


class TestInjectorLayer:
    def test_empty_meta_graph_is_exactly_transformer_layer(self, world):
        rng, vocab, emb, pair, _ = world
        cfg = tiny_cfg()
        params = init_params(cfg, len(vocab), rng)
        x = Tensor(rng.normal(size=(7, cfg.hidden_dim)))
        got, state = injector_layer(params, "inj.0", x, None, None, None, cfg)
        want = transformer_layer(params, "inj.0", x, cfg.n_heads)
        assert state is None
        assert np.array_equal(got.data, want.data)

    def test_zero_entity_projection_matches_plain_ffn_path(self, world):
        rng, vocab, emb, pair, mg = world
        cfg = tiny_cfg()
        params = init_params(cfg, len(vocab), rng)
        params["inj.0.ent_in.w"].data[:] = 0.0
        params["inj.0.ent_in.b"].data[:] = 0.0
        alignment = align_entities(pair, mg)
        ctx = _GraphContext(mg, alignment)
        state = Tensor(emb.entity_vecs[ctx.nodes])
        rel = Tensor(emb.relation_vecs[[r for _, r, _ in ctx.edges]])
        x = Tensor(rng.normal(size=(len(pair), cfg.hidden_dim)))
        with_zero_inject, _ = injector_layer(params, "inj.0", x, state, ctx, rel, cfg)
        plain, _ = injector_layer(params, "inj.0", x, None, None, None, cfg)
        assert np.array_equal(with_zero_inject.data, plain.data)

    def test_one_aligned_entity_changes_only_its_token_column(self, world):
        rng, vocab, emb, pair, mg = world
        cfg = tiny_cfg()
        params = init_params(cfg, len(vocab), rng)
        alignment = align_entities(pair, mg)
        ctx = _GraphContext(mg, alignment)
        state = Tensor(emb.entity_vecs[ctx.nodes])
        rel = Tensor(emb.relation_vecs[[r for _, r, _ in ctx.edges]])
        x = Tensor(rng.normal(size=(len(pair), cfg.hidden_dim)))
        with_mg, _ = injector_layer(params, "inj.0", x, state, ctx, rel, cfg)
        without, _ = injector_layer(params, "inj.0", x, None, None, None, cfg)
        aligned_tokens = sorted(alignment.aligned.values())
        differs = ~np.isclose(with_mg.data, without.data, atol=1e-14).all(axis=1)
        # layer norm mixes within a row, so whole rows at aligned tokens
        # change and every other row stays identical
        assert set(np.nonzero(differs)[0]) == set(aligned_tokens)


class TestScore:
    def test_vanilla_ignores_meta_graph(self, world):
        rng, vocab, emb, pair, mg = world
        cfg = tiny_cfg(mode="vanilla", n=2, m=0)
        params = init_params(cfg, len(vocab), rng)
        scorer = KnowledgeReranker(cfg, params, None, vocab)
        assert scorer.score_value(pair, mg) == scorer.score_value(pair, None)
        assert scorer.score_value(pair, mg) == scorer.score_value(pair, EMPTY_MG)

    def test_deterministic(self, world):
        rng, vocab, emb, pair, mg = world
        cfg = tiny_cfg(n=1, m=2)
        params = init_params(cfg, len(vocab), rng)
        scorer = KnowledgeReranker(cfg, params, emb, vocab)
        assert scorer.score_value(pair, mg) == scorer.score_value(pair, mg)

    def vanilla_params_from_full(self, fparams, n_enc):
        vparams = ParamStore()
        for name, t in fparams.items():
            if name.startswith("inj."):
                parts = name.split(".")
                j, rest = int(parts[1]), ".".join(parts[2:])
                if rest.startswith(("ent_in", "ent_out", "gmn")):
                    continue
                vparams.add(f"enc.{n_enc + j}.{rest}", t.data.copy())
            elif name.startswith("rel_proj"):
                continue
            else:
                vparams.add(name, t.data.copy())
        return vparams

    def test_full_with_empty_graph_equals_vanilla_bit_exact(self, world):
        rng, vocab, emb, pair, _ = world
        n, m = 1, 2
        full_cfg = tiny_cfg(n=n, m=m)
        van_cfg = tiny_cfg(mode="vanilla", n=n + m, m=0)
        fparams = init_params(full_cfg, len(vocab), rng)
        for name in fparams.names():
            if name.startswith(("inj.0.ent", "inj.1.ent", "rel_proj")) or ".gmn." in name:
                fparams[name].data[:] = 0.0
        vparams = self.vanilla_params_from_full(fparams, n)
        s_full = KnowledgeReranker(full_cfg, fparams, emb, vocab).score_value(pair, EMPTY_MG)
        s_van = KnowledgeReranker(van_cfg, vparams, None, vocab).score_value(pair, None)
        assert s_full == s_van

    def test_no_propagation_independent_of_rounds(self, world):
        rng, vocab, emb, pair, mg = world
        params = init_params(tiny_cfg(mode="no_propagation", k=1), len(vocab),
                             np.random.default_rng(8))
        scores = []
        for k in (1, 2, 5):
            cfg = tiny_cfg(mode="no_propagation", k=k)
            scores.append(KnowledgeReranker(cfg, params, emb, vocab).score_value(pair, mg))
        assert scores[0] == scores[1] == scores[2]

    def test_node_order_permutation_leaves_score_unchanged(self, world):
        rng, vocab, emb, pair, mg = world
        cfg = tiny_cfg(n=1, m=2)
        params = init_params(cfg, len(vocab), rng)
        scorer = KnowledgeReranker(cfg, params, emb, vocab)
        base = scorer.score_value(pair, mg)
        shuffled = MetaGraph(
            query_entities=list(reversed(mg.query_entities)),
            sentence_entities=mg.sentence_entities,
            nodes=list(reversed(mg.nodes)),
            edges=list(reversed(mg.edges)),
            paths=list(reversed(mg.paths)),
            key_sentence_index=mg.key_sentence_index,
            key_sentence_span=mg.key_sentence_span,
            query_entity_spans=mg.query_entity_spans,
            sentence_entity_spans=mg.sentence_entity_spans,
        )
        assert scorer.score_value(pair, shuffled) == base

    def test_no_interaction_uses_entity_stream(self, world):
        rng, vocab, emb, pair, mg = world
        cfg = tiny_cfg(mode="no_interaction")
        params = init_params(cfg, len(vocab), rng)
        scorer = KnowledgeReranker(cfg, params, emb, vocab)
        with_mg = scorer.score_value(pair, mg)
        without = scorer.score_value(pair, EMPTY_MG)
        assert with_mg != without

    def test_full_mode_grad_check_tiny_config(self, world):
        rng, vocab, emb, pair, mg = world
        cfg = tiny_cfg(n=1, m=1, k=2)
        params = init_params(cfg, len(vocab), rng)
        scorer = KnowledgeReranker(cfg, params, emb, vocab)
        report = grad_check(lambda: scorer.score(pair, mg), params, eps=1e-5, tol=1e-4)
        assert report.passed, f"max rel error {report.max_rel_error} at {report.worst_param}"

    def test_no_interaction_grad_check_reaches_gmn_params(self, world):
        rng, vocab, emb, pair, mg = world
        cfg = tiny_cfg(mode="no_interaction", n=1, m=1, k=2)
        params = init_params(cfg, len(vocab), rng)
        scorer = KnowledgeReranker(cfg, params, emb, vocab)
        report = grad_check(lambda: scorer.score(pair, mg), params, eps=1e-5, tol=1e-4)
        assert report.passed
        params.zero_grads()
        scorer.score(pair, mg).backward()
        assert np.abs(params["inj.0.gmn.alpha.w"].grad).max() > 0

    def test_checkpoint_round_trip(self, world, tmp_path):
        rng, vocab, emb, pair, mg = world
        cfg = tiny_cfg()
        params = init_params(cfg, len(vocab), rng)
        save_checkpoint(tmp_path / "ckpt", params, cfg, vocab)
        params2, cfg2, vocab2 = load_checkpoint(tmp_path / "ckpt")
        assert cfg2 == cfg
        assert vocab2.id_to_word == vocab.id_to_word
        s1 = KnowledgeReranker(cfg, params, emb, vocab).score_value(pair, mg)
        s2 = KnowledgeReranker(cfg2, params2, emb, vocab2).score_value(pair, mg)
        assert s1 == s2


class TestConfig:
    def test_vanilla_requires_zero_injectors(self):
        with pytest.raises(ConfigurationError):
            RerankerConfig(mode="vanilla", n_injector_layers=1).validate()

    def test_heads_must_divide_hidden(self):
        with pytest.raises(ConfigurationError):
            RerankerConfig(hidden_dim=10, n_heads=4).validate()

    def test_unknown_mode(self):
        with pytest.raises(ConfigurationError):
            RerankerConfig(mode="wat").validate()

    def test_json_round_trip(self):
        cfg = tiny_cfg(n=2, m=1)
        assert RerankerConfig.from_json(cfg.to_json()) == cfg
