"""Shared fixtures: crafted embeddings and random graph generators."""

from __future__ import annotations

import numpy as np

from kgrerank.distill import PrunedGraph
from kgrerank.embeddings import KgEmbeddings
from kgrerank.kg import KnowledgeGraph


def embeddings_with_tail_scores(tail_scores: dict[int, float], n_entities: int,
                                n_relations: int, head: int = 0) -> KgEmbeddings:
    """Embeddings whose reliability for (head, r, t) equals tail_scores[t].

    Relation vectors are zero, the head vector is a unit basis vector,
    and each tail vector is score * that basis vector, so the
    three-dot-product reliability collapses to head . tail = score.
    """
    dim = 2
    ent = np.zeros((n_entities, dim))
    ent[head, 0] = 1.0
    for tail, score in tail_scores.items():
        ent[tail, 0] = score
    rel = np.zeros((n_relations, dim))
    return KgEmbeddings(entity_vecs=ent, relation_vecs=rel, dim=dim)


def random_graph(rng: np.random.Generator, n_entities: int, n_relations: int,
                 n_edges: int) -> KnowledgeGraph:
    entities = [f"e{i}" for i in range(n_entities)]
    relations = [f"r{i}" for i in range(n_relations)]
    seen: set[tuple[int, int, int]] = set()
    while len(seen) < n_edges:
        h = int(rng.integers(n_entities))
        r = int(rng.integers(n_relations))
        t = int(rng.integers(n_entities))
        seen.add((h, r, t))
    return KnowledgeGraph.from_triplets(entities, relations, sorted(seen))


def random_embeddings(rng: np.random.Generator, g: KnowledgeGraph, dim: int = 4) -> KgEmbeddings:
    return KgEmbeddings(
        entity_vecs=rng.normal(size=(g.num_entities, dim)),
        relation_vecs=rng.normal(size=(g.num_relations, dim)),
        dim=dim,
    )


def as_pruned(g: KnowledgeGraph, pi: int = 10**9) -> PrunedGraph:
    """Wrap a graph as an (untruncated) pruned graph for path searches."""
    return PrunedGraph(source=g, adjacency=[list(a) for a in g.adjacency], pi=pi)


def enumerate_paths_dfs(pg: PrunedGraph, sources, targets, k: int) -> set[tuple[int, ...]]:
    """Independent oracle: exhaustive depth-first path enumeration.

    Emits every path of 1..k edges from a source to a target where only
    the final entity is a target (matching the search's termination
    rule); non-simple paths included.
    """
    target_set = set(targets)
    out: set[tuple[int, ...]] = set()

    def extend(path: list[int], hops: int) -> None:
        for r, t in pg.neighbors(path[-1]):
            if t in target_set:
                out.add(tuple(path + [r, t]))
            elif hops + 1 < k:
                extend(path + [r, t], hops + 1)

    for source in sorted(set(sources)):
        extend([source], 0)
    return out
