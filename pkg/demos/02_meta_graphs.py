"""Build a meta-graph for one query-passage pair, step by step.

Shows key-sentence selection, longest-match entity recognition
(including the plural fallback and sub-phrase suppression), and
breadth-first path discovery between the two entity sets.

    python demos/02_meta_graphs.py
"""

import numpy as np

from kgrerank import (
    EntityLexicon,
    KnowledgeGraph,
    WordEmbeddingTable,
    build_meta_graph,
    meta_graph_stats,
    recognize_entities,
    select_key_sentence,
)
from kgrerank.distill import PrunedGraph
from kgrerank.embeddings import KgEmbeddings
from kgrerank.text import split_sentences, tokenize

QUERY = "what causes low liver enzymes"
PASSAGE = (
    "Routine bloodwork measures many things. "
    "Hepatitis inflammation damages the liver enzyme supply. "
    "Most people recover fully."
)


def one_hot_table(words):
    eye = np.eye(len(words))
    return WordEmbeddingTable(
        vectors={w: eye[i].copy() for i, w in enumerate(words)}, dim=len(words)
    )


def main():
    graph = KnowledgeGraph.from_triplets(
        ["cause", "hepatitis", "inflammation", "liver", "liver_enzyme"],
        ["causes", "atlocation"],
        [
            (0, 0, 2),  # cause -> inflammation
            (2, 0, 1),  # inflammation -> hepatitis
            (1, 1, 4),  # hepatitis -> liver_enzyme
            (3, 1, 4),  # liver -> liver_enzyme
        ],
    )
    pruned = PrunedGraph(
        source=graph, adjacency=[list(a) for a in graph.adjacency], pi=10
    )
    lexicon = EntityLexicon.from_graph(graph)

    words = sorted(set(tokenize(QUERY) + tokenize(PASSAGE)))
    table = one_hot_table(words)

    q_tokens = tokenize(QUERY)
    sentences = split_sentences(PASSAGE)
    idx, score = select_key_sentence(table, q_tokens, sentences)
    print("Sentences:")
    for i, sent in enumerate(sentences):
        marker = " <-- key sentence" if i == idx else ""
        print(f"  [{i}] {' '.join(sent)}{marker}")
    print(f"Key-sentence score (shared-word dot product): {score:.4f}")

    print("\nEntity recognition on the query:")
    for eid, (a, b) in recognize_entities(q_tokens, lexicon):
        print(f"  tokens[{a}:{b}] = {' '.join(q_tokens[a:b])!r} -> entity "
              f"{graph.entities[eid]!r}")
    print("note: 'liver enzymes' resolves to liver_enzyme (longest match plus"
          " plural fallback); the shorter 'liver' inside it is suppressed")

    mg = build_meta_graph(QUERY, PASSAGE, pruned, lexicon, table, k=2)
    print(f"\nMeta-graph: {len(mg.nodes)} nodes, {len(mg.edges)} edges, "
          f"{len(mg.paths)} paths")
    for path in mg.paths:
        pretty = graph.entities[path[0]]
        for i in range(1, len(path), 2):
            pretty += f" --{graph.relations[path[i]]}--> {graph.entities[path[i + 1]]}"
        print("  " + pretty)

    emb = KgEmbeddings(
        entity_vecs=np.random.default_rng(0).normal(size=(5, 8)),
        relation_vecs=np.random.default_rng(1).normal(size=(2, 8)),
        dim=8,
    )
    print("\nCorpus-level stats format:", meta_graph_stats([mg], emb))


if __name__ == "__main__":
    main()
