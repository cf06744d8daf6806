"""Regenerate the bundled toy fixture under fixtures/toy/.

The fixture is a 20-query bridge corpus small enough for the full
pipeline to run in seconds; tests and the README quickstart both use
it. Deterministic, so re-running produces identical files.
"""

import json
from pathlib import Path

from kgrerank.synth import make_bridge_corpus, write_corpus

CONFIG = {
    "paths": {
        "triples": "triples.tsv",
        "word_vectors": "vectors.txt",
        "collection": "collection.tsv",
        "queries": "queries.tsv",
        "qrels": "qrels.txt",
        "candidates": "candidates.trec",
        "workdir": "work",
    },
    "transe": {"dim": 8, "epochs": 30, "learning_rate": 0.05, "seed": 0},
    "distill": {"pi": 10, "k": 2},
    "model": {
        "n_encoder_layers": 1,
        "n_injector_layers": 2,
        "gmn_rounds": 1,
        "hidden_dim": 16,
        "ffn_dim": 32,
        "entity_dim": 8,
        "n_heads": 2,
        "max_len": 32,
        "mode": "full",
    },
    "train": {
        "lr_encoder": 0.002,
        "lr_injector": 0.002,
        "epochs": 3,
        "seed": 0,
        "n_neg": 2,
    },
    "eval": {"mrr_k": 10, "map_ks": [10, 30]},
}


def main():
    out = Path(__file__).resolve().parent.parent / "fixtures" / "toy"
    corpus = make_bridge_corpus(n_queries=20, n_candidates=5, n_noise_triples=80, seed=0)
    write_corpus(corpus, out)
    (out / "config.json").write_text(
        json.dumps(CONFIG, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote fixture to {out}")


if __name__ == "__main__":
    main()
