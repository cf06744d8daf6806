"""Knowledge graph store: loading, normalization, indexing, adjacency.

Triple files are TSV ``head<TAB>relation<TAB>tail``. Entities and
relations get dense integer ids assigned in first-occurrence order after
a lexicographic sort of the normalized triples, which makes ids stable
across runs and across reorderings of the input file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    ConfigurationError,
    GraphLookupError,
    MappingError,
    ParseError,
)
from .text import normalize_phrase

GRAPH_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RelationMergeMap:
    """Maps raw relation names onto a smaller merged relation set.

    Keys and values are normalized (lowercase, punctuation stripped).
    In strict mode a raw relation absent from the map is an error; in
    lenient mode it passes through under its normalized name.
    """

    mapping: dict[str, str]
    strict: bool = True

    @classmethod
    def from_json(cls, path: str | Path, strict: bool = True) -> "RelationMergeMap":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        mapping = {
            normalize_phrase(k): normalize_phrase(v) for k, v in raw.items()
        }
        return cls(mapping=mapping, strict=strict)

    @classmethod
    def identity(cls) -> "RelationMergeMap":
        """Keep every relation under its normalized name."""
        return cls(mapping={}, strict=False)

    @property
    def merged_names(self) -> set[str]:
        return set(self.mapping.values())

    def apply(self, raw_relation: str) -> str:
        name = normalize_phrase(raw_relation)
        if name in self.mapping:
            return self.mapping[name]
        if self.strict:
            raise MappingError(f"raw relation {raw_relation!r} not in merge map")
        return name


def default_merge_map() -> RelationMergeMap:
    """The shipped 17-type merge map for ConceptNet-style relation names.

    The grouping (e.g. folding locatednear into atlocation, synonym and
    similarto into relatedto) is editable config, not ground truth: see
    data/relation_merge_default.json.
    """
    path = Path(__file__).parent / "data" / "relation_merge_default.json"
    merge = RelationMergeMap.from_json(path, strict=False)
    if len(merge.merged_names) != 17:
        raise ConfigurationError(
            f"default merge map must produce 17 merged relations, "
            f"got {len(merge.merged_names)}"
        )
    return merge


@dataclass
class KnowledgeGraph:
    """Directed multi-relational graph with dense integer ids.

    ``adjacency[h]`` lists outgoing ``(relation_id, tail_id)`` edges of
    head entity ``h``, sorted ascending for determinism. Instances are
    immutable after construction by convention and safe to share across
    workers.
    """

    entities: list[str]
    relations: list[str]
    triplets: list[tuple[int, int, int]]
    adjacency: list[list[tuple[int, int]]] = field(repr=False)

    @classmethod
    def from_triplets(
        cls,
        entities: list[str],
        relations: list[str],
        triplets: list[tuple[int, int, int]],
    ) -> "KnowledgeGraph":
        n_e, n_r = len(entities), len(relations)
        seen: set[tuple[int, int, int]] = set()
        kept: list[tuple[int, int, int]] = []
        for h, r, t in triplets:
            if not (0 <= h < n_e and 0 <= t < n_e and 0 <= r < n_r):
                raise GraphLookupError(f"triplet {(h, r, t)} outside vocabularies")
            if (h, r, t) not in seen:
                seen.add((h, r, t))
                kept.append((h, r, t))
        adjacency: list[list[tuple[int, int]]] = [[] for _ in range(n_e)]
        for h, r, t in kept:
            adjacency[h].append((r, t))
        for lst in adjacency:
            lst.sort()
        return cls(entities, relations, kept, adjacency)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def entity_id(self, surface: str) -> int:
        index = getattr(self, "_entity_index", None)
        if index is None:
            index = {e: i for i, e in enumerate(self.entities)}
            self._entity_index = index
        if surface not in index:
            raise GraphLookupError(f"unknown entity {surface!r}")
        return index[surface]

    def to_json(self) -> str:
        doc = {
            "version": GRAPH_FORMAT_VERSION,
            "entities": self.entities,
            "relations": self.relations,
            "triplets": [list(t) for t in self.triplets],
        }
        return json.dumps(doc, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json_str(cls, text: str) -> "KnowledgeGraph":
        doc = json.loads(text)
        if doc.get("version") != GRAPH_FORMAT_VERSION:
            raise ConfigurationError(
                f"unsupported graph format version {doc.get('version')!r}"
            )
        return cls.from_triplets(
            doc["entities"],
            doc["relations"],
            [tuple(t) for t in doc["triplets"]],
        )

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeGraph":
        return cls.from_json_str(Path(path).read_text(encoding="utf-8"))


def load_triples(
    path: str | Path, merge: RelationMergeMap | None = None
) -> KnowledgeGraph:
    """Load a TSV triple file into a normalized, deduplicated graph.

    Lines must have exactly three non-empty tab-separated fields;
    anything else raises ParseError with the offending line number.
    Relations go through ``merge``; entities through normalize_phrase.
    """
    if merge is None:
        merge = RelationMergeMap.identity()
    rows: list[tuple[str, str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(
                    path, line_no, f"expected 3 tab-separated columns, got {len(fields)}"
                )
            head_raw, rel_raw, tail_raw = (f.strip() for f in fields)
            if not head_raw or not rel_raw or not tail_raw:
                raise ParseError(path, line_no, "empty field")
            head = normalize_phrase(head_raw)
            tail = normalize_phrase(tail_raw)
            rel = merge.apply(rel_raw)
            if not head or not tail or not rel:
                raise ParseError(path, line_no, "field normalizes to nothing")
            rows.append((head, rel, tail))

    rows.sort()
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    triplets: list[tuple[int, int, int]] = []
    for head, rel, tail in rows:
        h = entity_ids.setdefault(head, len(entity_ids))
        t = entity_ids.setdefault(tail, len(entity_ids))
        r = relation_ids.setdefault(rel, len(relation_ids))
        triplets.append((h, r, t))
    return KnowledgeGraph.from_triplets(
        list(entity_ids), list(relation_ids), triplets
    )


def neighbors(g: KnowledgeGraph, e: int) -> list[tuple[int, int]]:
    """Full outgoing adjacency of entity ``e``, sorted; [] if isolated."""
    if not 0 <= e < g.num_entities:
        raise GraphLookupError(f"entity id {e} outside [0, {g.num_entities})")
    return list(g.adjacency[e])


def graph_stats(g: KnowledgeGraph) -> dict[str, int]:
    return {
        "entities": g.num_entities,
        "relations": g.num_relations,
        "triplets": len(g.triplets),
        "max_out_degree": max((len(a) for a in g.adjacency), default=0),
    }
