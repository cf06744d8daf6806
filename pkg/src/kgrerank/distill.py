"""Graph distillation: global pruning and per-pair meta-graph construction.

A meta-graph bridges a query and one passage: recognize entities in the
query and in the passage's key sentence, then collect every path of at
most ``k`` hops from a query entity to a key-sentence entity over the
pruned global graph. Paths stop at the first key-sentence entity they
reach and are never extended past it; a query entity that is also a
key-sentence entity therefore yields no zero-hop path, only cycles back
to a target count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .embeddings import (
    KgEmbeddings,
    WordEmbeddingTable,
    query_sentence_relevance,
    triplet_reliability,
)
from .errors import ConfigurationError, GraphLookupError, InvariantViolation
from .kg import KnowledgeGraph
from .text import phrase_tokens, split_sentences, tokenize

DEFAULT_MAX_FRONTIER = 10_000


@dataclass
class PrunedGraph:
    """Knowledge graph with adjacency truncated to the top-pi edges per head.

    Kept edges are the pi highest-reliability outgoing edges of each
    head; ties break by (relation id, tail id) ascending. Edges with
    non-positive reliability rank below all positive ones.
    """

    source: KnowledgeGraph
    adjacency: list[list[tuple[int, int]]] = field(repr=False)
    pi: int = 0

    @property
    def num_entities(self) -> int:
        return self.source.num_entities

    @property
    def num_relations(self) -> int:
        return self.source.num_relations

    @property
    def entities(self) -> list[str]:
        return self.source.entities

    @property
    def relations(self) -> list[str]:
        return self.source.relations

    def neighbors(self, e: int) -> list[tuple[int, int]]:
        if not 0 <= e < self.num_entities:
            raise GraphLookupError(f"entity id {e} outside [0, {self.num_entities})")
        return self.adjacency[e]

    def triplets(self) -> list[tuple[int, int, int]]:
        return [(h, r, t) for h, edges in enumerate(self.adjacency) for r, t in edges]

    def save(self, path) -> None:
        doc = {
            "version": 1,
            "pi": self.pi,
            "entities": self.entities,
            "relations": self.relations,
            "adjacency": self.adjacency,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "PrunedGraph":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        adjacency = [[(r, t) for r, t in edges] for edges in doc["adjacency"]]
        source = KnowledgeGraph.from_triplets(
            doc["entities"],
            doc["relations"],
            [(h, r, t) for h, edges in enumerate(adjacency) for r, t in edges],
        )
        return cls(source=source, adjacency=adjacency, pi=doc["pi"])


def prune_graph(g: KnowledgeGraph, emb: KgEmbeddings, pi: int) -> PrunedGraph:
    """Keep the pi most reliable outgoing edges of every head entity.

    Ranking is by descending reliability. Reliability order equals
    ascending reciprocal-distance order wherever reliability is
    positive, and stays total when it is not, which is why the ranking
    uses reliability directly instead of dividing.
    """
    if pi <= 0:
        raise ConfigurationError(f"pi must be positive, got {pi}")
    emb.check_matches(g)
    adjacency: list[list[tuple[int, int]]] = []
    for h, edges in enumerate(g.adjacency):
        if len(edges) <= pi:
            adjacency.append(list(edges))
            continue
        scored = [
            (-triplet_reliability(emb, h, r, t), r, t) for r, t in edges
        ]
        scored.sort()
        adjacency.append([(r, t) for _, r, t in scored[:pi]])
    return PrunedGraph(source=g, adjacency=adjacency, pi=pi)


class EntityLexicon:
    """Phrase table over normalized entity surface forms.

    Maps token tuples to entity ids. Lookup tries exact phrases first
    and falls back to stripping one trailing 's' from the final token,
    so a plural mention still resolves to its singular lexicon entry.
    """

    def __init__(self, phrases: dict[tuple[str, ...], int]):
        self.phrases = phrases
        self.max_phrase_length = max((len(p) for p in phrases), default=0)

    @classmethod
    def from_graph(cls, g: KnowledgeGraph | PrunedGraph) -> "EntityLexicon":
        return cls.from_entities(g.entities)

    @classmethod
    def from_entities(cls, entities: list[str]) -> "EntityLexicon":
        phrases: dict[tuple[str, ...], int] = {}
        for eid, surface in enumerate(entities):
            phrases[phrase_tokens(surface)] = eid
        return cls(phrases)

    def lookup(self, candidate: tuple[str, ...]) -> int | None:
        eid = self.phrases.get(candidate)
        if eid is not None:
            return eid
        last = candidate[-1]
        if len(last) > 1 and last.endswith("s"):
            return self.phrases.get(candidate[:-1] + (last[:-1],))
        return None


def recognize_entities(
    tokens: list[str], lex: EntityLexicon
) -> list[tuple[int, tuple[int, int]]]:
    """Longest-match left-to-right scan; returns (entity id, token span).

    At each position the longest matching phrase wins and the scan
    advances past it, so matches never overlap and shorter phrases that
    are sub-sequences of a recognized one are omitted. Repeated
    mentions produce repeated matches.
    """
    matches: list[tuple[int, tuple[int, int]]] = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = False
        for length in range(min(lex.max_phrase_length, n - i), 0, -1):
            eid = lex.lookup(tuple(tokens[i : i + length]))
            if eid is not None:
                matches.append((eid, (i, i + length)))
                i += length
                matched = True
                break
        if not matched:
            i += 1
    return matches


def select_key_sentence(
    tbl: WordEmbeddingTable, q_tokens: list[str], sentences: list[list[str]]
) -> tuple[int, float | None]:
    """Index and score of the sentence most relevant to the query.

    Sentences with undefined relevance (all tokens out of vocabulary)
    are skipped; ties keep the first index. When every sentence is
    undefined the fallback is (0, None).
    """
    if not sentences:
        raise ConfigurationError("select_key_sentence needs at least one sentence")
    best_idx: int | None = None
    best_score = 0.0
    for idx, sent in enumerate(sentences):
        score = query_sentence_relevance(tbl, q_tokens, sent)
        if score is None:
            continue
        if best_idx is None or score > best_score:
            best_idx, best_score = idx, score
    if best_idx is None:
        return 0, None
    return best_idx, best_score


@dataclass
class MetaGraph:
    """Paths between query entities and key-sentence entities of one pair.

    ``paths`` are alternating id sequences [e0, r1, e1, ..., rn, en]
    with e0 a query entity, en a key-sentence entity, and 1..k edges.
    ``nodes`` and ``edges`` are exactly the union over paths. Spans for
    query and sentence entities index into the query token list and the
    key-sentence token list respectively; the key-sentence span indexes
    into the passage token list.
    """

    query_entities: list[int]
    sentence_entities: list[int]
    nodes: list[int]
    edges: list[tuple[int, int, int]]
    paths: list[list[int]]
    key_sentence_index: int
    key_sentence_span: tuple[int, int]
    query_entity_spans: list[tuple[int, int, int]] = field(default_factory=list)
    sentence_entity_spans: list[tuple[int, int, int]] = field(default_factory=list)
    truncated: bool = False

    @property
    def is_empty(self) -> bool:
        return not self.paths

    def validate(self) -> None:
        """Check the structural invariants; raises on any violation."""
        q_set, s_set = set(self.query_entities), set(self.sentence_entities)
        nodes_from_paths: set[int] = set()
        edges_from_paths: set[tuple[int, int, int]] = set()
        for path in self.paths:
            if len(path) < 3 or len(path) % 2 == 0:
                raise InvariantViolation(f"malformed path {path}")
            if path[0] not in q_set:
                raise InvariantViolation(f"path {path} does not start in query entities")
            if path[-1] not in s_set:
                raise InvariantViolation(f"path {path} does not end in sentence entities")
            for j in range(0, len(path) - 2, 2):
                h, r, t = path[j], path[j + 1], path[j + 2]
                nodes_from_paths.update((h, t))
                edges_from_paths.add((h, r, t))
        if nodes_from_paths != set(self.nodes):
            raise InvariantViolation("nodes are not the union over paths")
        if edges_from_paths != set(self.edges):
            raise InvariantViolation("edges are not the union over paths")

    def to_record(self, pair_id: str) -> dict:
        return {
            "pair_id": pair_id,
            "key_sentence": self.key_sentence_index,
            "key_sentence_span": list(self.key_sentence_span),
            "query_entities": self.query_entities,
            "sentence_entities": self.sentence_entities,
            "query_entity_spans": [list(s) for s in self.query_entity_spans],
            "sentence_entity_spans": [list(s) for s in self.sentence_entity_spans],
            "paths": self.paths,
            "truncated": self.truncated,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "MetaGraph":
        paths = [list(p) for p in rec["paths"]]
        nodes, edges = _collect_path_union(paths)
        return cls(
            query_entities=list(rec["query_entities"]),
            sentence_entities=list(rec["sentence_entities"]),
            nodes=nodes,
            edges=edges,
            paths=paths,
            key_sentence_index=rec["key_sentence"],
            key_sentence_span=tuple(rec["key_sentence_span"]),
            query_entity_spans=[tuple(s) for s in rec.get("query_entity_spans", [])],
            sentence_entity_spans=[tuple(s) for s in rec.get("sentence_entity_spans", [])],
            truncated=rec["truncated"],
        )


def _collect_path_union(
    paths: list[list[int]],
) -> tuple[list[int], list[tuple[int, int, int]]]:
    nodes: set[int] = set()
    edges: set[tuple[int, int, int]] = set()
    for path in paths:
        for j in range(0, len(path) - 2, 2):
            h, r, t = path[j], path[j + 1], path[j + 2]
            nodes.update((h, t))
            edges.add((h, r, t))
    return sorted(nodes), sorted(edges)


def build_meta_graph(
    q: str,
    p: str,
    pg: PrunedGraph,
    lex: EntityLexicon,
    tbl: WordEmbeddingTable,
    k: int,
    max_frontier: int = DEFAULT_MAX_FRONTIER,
) -> MetaGraph:
    """Construct the meta-graph for one query-passage pair.

    Key-sentence selection, entity recognition on the query and the key
    sentence, then breadth-first path discovery over the pruned graph:
    the frontier holds partial paths; a path whose new tail is a
    key-sentence entity is kept and terminated, any other tail extends
    into the next hop. The frontier is capped at ``max_frontier``
    partial paths; hitting the cap sets the truncation flag.

    Empty query or key-sentence entity sets produce an empty, valid
    meta-graph.
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    q_tokens = tokenize(q)
    sentences = split_sentences(p)
    if sentences:
        key_idx, _ = select_key_sentence(tbl, q_tokens, sentences)
    else:
        key_idx = 0
    offsets = [0]
    for sent in sentences:
        offsets.append(offsets[-1] + len(sent))
    key_sent = sentences[key_idx] if sentences else []
    key_span = (offsets[key_idx], offsets[key_idx + 1]) if sentences else (0, 0)

    q_matches = recognize_entities(q_tokens, lex)
    s_matches = recognize_entities(key_sent, lex)
    query_entities = _unique_ids(q_matches)
    sentence_entities = _unique_ids(s_matches)

    paths, truncated = discover_paths(
        pg, query_entities, sentence_entities, k, max_frontier
    )
    nodes, edges = _collect_path_union(paths)
    mg = MetaGraph(
        query_entities=query_entities,
        sentence_entities=sentence_entities,
        nodes=nodes,
        edges=edges,
        paths=paths,
        key_sentence_index=key_idx,
        key_sentence_span=key_span,
        query_entity_spans=[(eid, a, b) for eid, (a, b) in q_matches],
        sentence_entity_spans=[(eid, a, b) for eid, (a, b) in s_matches],
        truncated=truncated,
    )
    mg.validate()
    return mg


def discover_paths(
    pg: PrunedGraph,
    sources: list[int],
    targets: list[int],
    k: int,
    max_frontier: int = DEFAULT_MAX_FRONTIER,
) -> tuple[list[list[int]], bool]:
    """Breadth-first enumeration of source-to-target paths within k hops.

    The frontier holds partial paths seeded with every source entity.
    Each hop extends every partial path along all outgoing edges: an
    edge landing on a target entity emits a finished path, anything
    else joins the next frontier. Finished paths are never extended,
    so targets only ever terminate a path. Returns (paths, truncated);
    truncated is set when the partial-path cap dropped extensions.
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    paths: list[list[int]] = []
    truncated = False
    target_set = set(targets)
    if not sources or not target_set:
        return paths, truncated
    frontier: list[list[int]] = [[e] for e in sorted(set(sources))]
    for _ in range(k):
        next_hop: list[list[int]] = []
        for path in frontier:
            head = path[-1]
            for r, t in pg.neighbors(head):
                if t in target_set:
                    paths.append(path + [r, t])
                elif len(next_hop) < max_frontier:
                    next_hop.append(path + [r, t])
                else:
                    truncated = True
        if not next_hop:
            break
        frontier = next_hop
    return paths, truncated


def _unique_ids(matches: list[tuple[int, tuple[int, int]]]) -> list[int]:
    seen: set[int] = set()
    out: list[int] = []
    for eid, _ in matches:
        if eid not in seen:
            seen.add(eid)
            out.append(eid)
    return out


def meta_graph_stats(
    mgs: list[MetaGraph], emb: KgEmbeddings
) -> dict[str, float | None]:
    """Average edge count per meta-graph and average edge reliability.

    Empty meta-graphs contribute zero edges to the count average and
    nothing to the score average; with no edges anywhere the score is
    None.
    """
    if not mgs:
        raise ConfigurationError("meta_graph_stats needs at least one meta-graph")
    edge_counts = [len(mg.edges) for mg in mgs]
    scores = [
        triplet_reliability(emb, h, r, t) for mg in mgs for h, r, t in mg.edges
    ]
    return {
        "avg_edge_count": sum(edge_counts) / len(mgs),
        "avg_edge_score": (sum(scores) / len(scores)) if scores else None,
    }


def write_meta_graphs(path, records: list[tuple[str, MetaGraph]]) -> None:
    """One JSON object per line, keyed by pair id; key order is fixed."""
    with open(path, "w", encoding="utf-8") as fh:
        for pair_id, mg in records:
            fh.write(json.dumps(mg.to_record(pair_id), sort_keys=True))
            fh.write("\n")


def read_meta_graphs(path) -> dict[str, MetaGraph]:
    out: dict[str, MetaGraph] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out[rec["pair_id"]] = MetaGraph.from_record(rec)
    return out
