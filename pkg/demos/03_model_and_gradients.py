"""Score a pair with the knowledge-injecting cross-encoder and verify
its gradients against finite differences.

Also demonstrates the architectural reductions: with an empty
meta-graph and zeroed injector-only weights, the full model collapses
bit-exactly onto a vanilla cross-encoder of the same depth.

    python demos/03_model_and_gradients.py
"""

import numpy as np

from kgrerank import (
    KnowledgeReranker,
    ParamStore,
    RerankerConfig,
    Vocab,
    grad_check,
    init_params,
    tokenize_pair,
)
from kgrerank.distill import MetaGraph
from kgrerank.embeddings import KgEmbeddings


def main():
    rng = np.random.default_rng(0)
    cfg = RerankerConfig(
        n_encoder_layers=1, n_injector_layers=2, gmn_rounds=2,
        hidden_dim=16, ffn_dim=32, entity_dim=8, n_heads=2, max_len=32,
        mode="full",
    )
    vocab = Vocab.build(["which remedy helps srcent0 trouble",
                         "dstent0 remedy eases trouble"])
    pair = tokenize_pair(
        "which remedy helps srcent0 trouble",
        "filler sentence first. dstent0 remedy eases trouble.",
        vocab, cfg.max_len,
    )
    # one bridge edge srcent0 -> dstent0; spans mark where each entity
    # surfaces in the query and in the key sentence
    mg = MetaGraph(
        query_entities=[0], sentence_entities=[1],
        nodes=[0, 1], edges=[(0, 0, 1)], paths=[[0, 0, 1]],
        key_sentence_index=1, key_sentence_span=(3, 7),
        query_entity_spans=[(0, 3, 4)], sentence_entity_spans=[(1, 0, 1)],
    )
    emb = KgEmbeddings(
        entity_vecs=rng.normal(size=(2, cfg.entity_dim)),
        relation_vecs=rng.normal(size=(1, cfg.entity_dim)),
        dim=cfg.entity_dim,
    )
    params = init_params(cfg, len(vocab), rng)
    scorer = KnowledgeReranker(cfg, params, emb, vocab)

    empty = MetaGraph(query_entities=[], sentence_entities=[], nodes=[],
                      edges=[], paths=[], key_sentence_index=0,
                      key_sentence_span=(0, 0))
    print(f"score with meta-graph:    {scorer.score_value(pair, mg):+.6f}")
    print(f"score with empty graph:   {scorer.score_value(pair, empty):+.6f}")

    print("\nRunning the finite-difference gradient check over every "
          f"parameter ({params.n_elements()} elements)...")
    report = grad_check(lambda: scorer.score(pair, mg), params, eps=1e-5, tol=1e-4)
    print(f"max relative error: {report.max_rel_error:.2e} "
          f"(tolerance {report.tol:.0e}) -> "
          f"{'PASS' if report.passed else 'FAIL'}")

    # reduction: zero the injector-only weights, rename injector blocks
    # to encoder blocks, and compare against vanilla
    for name in params.names():
        if ".ent_in." in name or ".ent_out." in name or ".gmn." in name \
                or name.startswith("rel_proj"):
            params[name].data[:] = 0.0
    vanilla_cfg = RerankerConfig(
        n_encoder_layers=3, n_injector_layers=0, gmn_rounds=1,
        hidden_dim=16, ffn_dim=32, entity_dim=8, n_heads=2, max_len=32,
        mode="vanilla",
    )
    vparams = ParamStore()
    for name, tensor in params.items():
        if name.startswith("inj."):
            parts = name.split(".")
            j, rest = int(parts[1]), ".".join(parts[2:])
            if rest.startswith(("ent_in", "ent_out", "gmn")):
                continue
            vparams.add(f"enc.{1 + j}.{rest}", tensor.data.copy())
        elif not name.startswith("rel_proj"):
            vparams.add(name, tensor.data.copy())
    s_full = scorer.score_value(pair, empty)
    s_vanilla = KnowledgeReranker(vanilla_cfg, vparams, None, vocab).score_value(pair, None)
    print(f"\nfull mode, empty graph, zero injector weights: {s_full:+.10f}")
    print(f"vanilla mode, same shared weights:             {s_vanilla:+.10f}")
    print("bit-exact match:", s_full == s_vanilla)


if __name__ == "__main__":
    main()
