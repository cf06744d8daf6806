"""Synthetic desk-scale corpora with a planted entity-bridge signal.

Every query mentions a source entity; its one relevant passage mentions
the bridged target entity, connected in the synthetic knowledge graph
by a single edge. Negative candidates reuse the same sentence templates
with donor target entities that have no path from the query's source
entity, so surface text alone cannot separate positives from negatives
without memorizing the per-query source-target mapping, while the
meta-graph exposes it directly.

Word vectors are one-hot over the corpus vocabulary, which makes
key-sentence selection a transparent shared-word count: the
entity-bearing sentence shares three query words, the filler sentence
one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import WordEmbeddingTable
from .text import tokenize
from .trec import RunFile, write_qrels, write_run, write_tsv_texts

NOISE_RELATIONS = ("relatedto", "partof", "causes")


@dataclass
class SyntheticCorpus:
    queries: dict[str, str]
    collection: dict[str, str]
    qrels: dict[str, dict[str, int]]
    candidates: RunFile
    triples: list[tuple[str, str, str]]
    word_table: WordEmbeddingTable


def make_bridge_corpus(
    n_queries: int = 20,
    n_candidates: int = 20,
    n_topics: int = 5,
    n_noise_triples: int = 80,
    seed: int = 0,
) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    queries: dict[str, str] = {}
    collection: dict[str, str] = {}
    qrels: dict[str, dict[str, int]] = {}
    run = RunFile(tag="synthetic-retrieval")

    def passage_text(target: str, topic: int) -> str:
        return (
            f"many people discuss topic{topic} often. "
            f"{target} remedy eases trouble topic{topic}."
        )

    for i in range(n_queries):
        qid = f"q{i}"
        topic = i % n_topics
        queries[qid] = f"which remedy helps srcent{i} trouble topic{topic}"
        pids: list[str] = []
        pos_pid = f"p{i}pos"
        collection[pos_pid] = passage_text(f"dstent{i}", topic)
        pids.append(pos_pid)
        qrels[qid] = {pos_pid: 1}
        for j in range(n_candidates - 1):
            donor = int(rng.integers(n_queries))
            while donor == i:
                donor = int(rng.integers(n_queries))
            neg_pid = f"p{i}neg{j}"
            collection[neg_pid] = passage_text(f"dstent{donor}", topic)
            pids.append(neg_pid)
        order = rng.permutation(len(pids))
        for rank, idx in enumerate(order, start=1):
            run.rows.append((qid, pids[int(idx)], rank, 1.0 / rank))

    triples = [(f"srcent{i}", "linksto", f"dstent{i}") for i in range(n_queries)]
    noise: set[tuple[str, str, str]] = set()
    while len(noise) < n_noise_triples:
        a, b = rng.integers(max(n_noise_triples, 4) * 2, size=2)
        rel = NOISE_RELATIONS[int(rng.integers(len(NOISE_RELATIONS)))]
        noise.add((f"noise{int(a)}", rel, f"noise{int(b)}"))
    triples.extend(sorted(noise))

    words = sorted(
        {tok for text in list(queries.values()) + list(collection.values())
         for tok in tokenize(text)}
    )
    eye = np.eye(len(words))
    table = WordEmbeddingTable(
        vectors={w: eye[i].copy() for i, w in enumerate(words)}, dim=len(words)
    )
    return SyntheticCorpus(
        queries=queries,
        collection=collection,
        qrels=qrels,
        candidates=run,
        triples=triples,
        word_table=table,
    )


def write_corpus(corpus: SyntheticCorpus, directory) -> dict[str, Path]:
    """Write every pipeline input file; returns the path of each piece."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "queries": d / "queries.tsv",
        "collection": d / "collection.tsv",
        "qrels": d / "qrels.txt",
        "candidates": d / "candidates.trec",
        "triples": d / "triples.tsv",
        "word_vectors": d / "vectors.txt",
    }
    write_tsv_texts(paths["queries"], corpus.queries)
    write_tsv_texts(paths["collection"], corpus.collection)
    write_qrels(paths["qrels"], corpus.qrels)
    write_run(paths["candidates"], corpus.candidates)
    with open(paths["triples"], "w", encoding="utf-8") as fh:
        for h, r, t in corpus.triples:
            fh.write(f"{h}\t{r}\t{t}\n")
    with open(paths["word_vectors"], "w", encoding="utf-8") as fh:
        for word in sorted(corpus.word_table.vectors):
            vec = corpus.word_table.vectors[word]
            fh.write(word + " " + " ".join(f"{x:.1f}" for x in vec) + "\n")
    return paths
