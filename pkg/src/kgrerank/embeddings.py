"""Translation-based graph embeddings and word-vector relevance scoring.

TransE training uses the canonical recipe: margin ranking loss
``max(0, margin + ||h + r - t|| - ||h' + r - t'||)`` with L2 distance,
uniform corruption of head or tail, SGD, and entity rows projected back
onto the unit ball after each update. Edge reliability for pruning is a
separate score: the sum of the three pairwise dot products among the
head, relation, and tail vectors; its reciprocal is the edge distance.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    GraphLookupError,
    NonPositiveReliabilityError,
    ParseError,
)
from .kg import KnowledgeGraph

EMBEDDING_FORMAT_VERSION = 1


@dataclass
class KgEmbeddings:
    """Dense vectors for every entity and relation of a graph.

    Vocab hashes identify the graph the embeddings were trained on so
    downstream stages can reject mismatched artifacts.
    """

    entity_vecs: np.ndarray  # |E| x dim, float64
    relation_vecs: np.ndarray  # |R| x dim, float64
    dim: int
    entity_hash: str | None = None
    relation_hash: str | None = None

    def __post_init__(self):
        if self.entity_vecs.shape[1] != self.dim or self.relation_vecs.shape[1] != self.dim:
            raise ConfigurationError("embedding matrices do not match dim")
        if not (np.isfinite(self.entity_vecs).all() and np.isfinite(self.relation_vecs).all()):
            raise ConfigurationError("embeddings contain non-finite values")

    def check_matches(self, g: "KnowledgeGraph") -> None:
        if self.entity_vecs.shape[0] != g.num_entities or self.relation_vecs.shape[0] != g.num_relations:
            raise ConfigurationError("embeddings do not match graph vocabularies")
        if self.entity_hash is not None and self.entity_hash != vocab_hash(g.entities):
            raise ConfigurationError("embedding entity vocabulary hash does not match graph")
        if self.relation_hash is not None and self.relation_hash != vocab_hash(g.relations):
            raise ConfigurationError("embedding relation vocabulary hash does not match graph")

    def entity(self, e: int) -> np.ndarray:
        if not 0 <= e < self.entity_vecs.shape[0]:
            raise GraphLookupError(f"entity id {e} outside embedding table")
        return self.entity_vecs[e]

    def relation(self, r: int) -> np.ndarray:
        if not 0 <= r < self.relation_vecs.shape[0]:
            raise GraphLookupError(f"relation id {r} outside embedding table")
        return self.relation_vecs[r]

    def save(self, path) -> None:
        meta = {
            "version": EMBEDDING_FORMAT_VERSION,
            "dim": self.dim,
            "entity_rows": int(self.entity_vecs.shape[0]),
            "relation_rows": int(self.relation_vecs.shape[0]),
            "entity_hash": self.entity_hash,
            "relation_hash": self.relation_hash,
        }
        np.savez(
            path,
            entity=self.entity_vecs,
            relation=self.relation_vecs,
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        )

    @classmethod
    def load(cls, path) -> "KgEmbeddings":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta["version"] != EMBEDDING_FORMAT_VERSION:
                raise ConfigurationError(
                    f"unsupported embedding format version {meta['version']!r}"
                )
            return cls(
                entity_vecs=data["entity"].astype(np.float64),
                relation_vecs=data["relation"].astype(np.float64),
                dim=meta["dim"],
                entity_hash=meta.get("entity_hash"),
                relation_hash=meta.get("relation_hash"),
            )


def vocab_hash(names: list[str]) -> str:
    return hashlib.sha256("\n".join(names).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TransEConfig:
    dim: int = 32
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 100
    negatives_per_positive: int = 1
    seed: int = 0

    def validate(self) -> None:
        if min(self.dim, self.epochs, self.negatives_per_positive) <= 0:
            raise ConfigurationError("dim, epochs, negatives must be positive")
        if self.margin <= 0 or self.learning_rate <= 0:
            raise ConfigurationError("margin and learning rate must be positive")


def train_transe(
    g: KnowledgeGraph,
    cfg: TransEConfig = TransEConfig(),
    *,
    loss_history: list[float] | None = None,
) -> KgEmbeddings:
    """Train translation embeddings on the graph.

    Deterministic for a fixed seed: single-threaded SGD, fixed shuffle
    and corruption draws from one generator. If ``loss_history`` is
    given, the mean margin loss of each epoch is appended to it.
    """
    cfg.validate()
    if not g.triplets:
        raise ConfigurationError("cannot train embeddings on an empty graph")
    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / np.sqrt(cfg.dim)
    ent = rng.uniform(-bound, bound, size=(g.num_entities, cfg.dim))
    rel = rng.uniform(-bound, bound, size=(g.num_relations, cfg.dim))
    rel /= np.maximum(np.linalg.norm(rel, axis=1, keepdims=True), 1e-12)
    _project_unit_ball(ent)

    triplets = np.array(g.triplets, dtype=np.int64)
    n = len(triplets)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        count = 0
        for idx in order:
            h, r, t = (int(v) for v in triplets[idx])
            for _ in range(cfg.negatives_per_positive):
                h_neg, t_neg = h, t
                if rng.random() < 0.5:
                    h_neg = int(rng.integers(g.num_entities))
                else:
                    t_neg = int(rng.integers(g.num_entities))
                total += _margin_step(
                    ent, rel, h, r, t, h_neg, t_neg, cfg.margin, cfg.learning_rate
                )
                count += 1
        if loss_history is not None:
            loss_history.append(total / count)
    return KgEmbeddings(
        entity_vecs=ent,
        relation_vecs=rel,
        dim=cfg.dim,
        entity_hash=vocab_hash(g.entities),
        relation_hash=vocab_hash(g.relations),
    )


def _project_unit_ball(mat: np.ndarray) -> None:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    np.divide(mat, norms, out=mat, where=norms > 1.0)


def _margin_step(ent, rel, h, r, t, h_neg, t_neg, margin, lr) -> float:
    """One SGD update on max(0, margin + d_pos - d_neg); returns the loss."""
    pos_diff = ent[h] + rel[r] - ent[t]
    neg_diff = ent[h_neg] + rel[r] - ent[t_neg]
    d_pos = np.linalg.norm(pos_diff)
    d_neg = np.linalg.norm(neg_diff)
    loss = margin + d_pos - d_neg
    if loss <= 0.0:
        return 0.0
    g_pos = pos_diff / d_pos if d_pos > 0 else np.zeros_like(pos_diff)
    g_neg = neg_diff / d_neg if d_neg > 0 else np.zeros_like(neg_diff)
    # Accumulate per-row gradients before applying, in case ids repeat
    # (e.g. h == t_neg), so the update is a true SGD step.
    grads: dict[int, np.ndarray] = {}

    def add(idx: int, val: np.ndarray) -> None:
        grads[idx] = grads.get(idx, 0) + val

    add(h, g_pos)
    add(t, -g_pos)
    add(h_neg, -g_neg)
    add(t_neg, g_neg)
    for idx, grad in grads.items():
        ent[idx] -= lr * grad
        norm = np.linalg.norm(ent[idx])
        if norm > 1.0:
            ent[idx] /= norm
    rel[r] -= lr * (g_pos - g_neg)
    return float(loss)


def triplet_reliability(emb: KgEmbeddings, h: int, r: int, t: int) -> float:
    """Sum of pairwise dot products among head, relation, and tail vectors.

    Symmetric in head and tail by construction.
    """
    eh, er, et = emb.entity(h), emb.relation(r), emb.entity(t)
    return float(eh @ er + eh @ et + er @ et)


def triplet_distance(emb: KgEmbeddings, h: int, r: int, t: int) -> float:
    """Reciprocal reliability; undefined when reliability is <= 0."""
    rel_score = triplet_reliability(emb, h, r, t)
    if rel_score <= 0.0:
        raise NonPositiveReliabilityError(
            f"reliability {rel_score} for ({h},{r},{t}) has no reciprocal distance"
        )
    return 1.0 / rel_score


@dataclass
class WordEmbeddingTable:
    """word -> vector map with a consistent dimension; OOV words are dropped."""

    vectors: dict[str, np.ndarray]
    dim: int

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def mean_vector(self, tokens: list[str]) -> np.ndarray | None:
        """Mean over in-vocabulary tokens; None when every token is OOV."""
        rows = [self.vectors[w] for w in tokens if w in self.vectors]
        if not rows:
            return None
        return np.mean(rows, axis=0)


def load_word_vectors(path) -> WordEmbeddingTable:
    """Parse a textual vector file: ``word v1 v2 ... vd`` per line.

    A first line of exactly two integer columns is treated as a
    word2vec-style count/dim header and skipped. Dimension mismatches
    raise ParseError with the line number; duplicate words keep the
    last occurrence and emit a warning.
    """
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if line_no == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # header
                except ValueError:
                    pass
            if len(parts) < 2:
                raise ParseError(path, line_no, "expected a word and at least one value")
            word = parts[0].lower()
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(path, line_no, f"bad vector value: {exc}") from exc
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ParseError(
                    path, line_no, f"dimension {len(vec)} != established {dim}"
                )
            if word in vectors:
                warnings.warn(
                    f"duplicate word {word!r} at line {line_no}; last occurrence wins",
                    stacklevel=2,
                )
            vectors[word] = vec
    if dim is None:
        raise ParseError(path, 1, "no vectors in file")
    return WordEmbeddingTable(vectors=vectors, dim=dim)


def query_sentence_relevance(
    tbl: WordEmbeddingTable, q_tokens: list[str], s_tokens: list[str]
) -> float | None:
    """Dot product of the mean word vectors of query and sentence.

    OOV tokens are dropped from each mean. Returns None when either
    side has no in-vocabulary token: an unscorable sentence must never
    beat a scored one, so callers treat None as minus infinity.
    """
    q_mean = tbl.mean_vector(q_tokens)
    s_mean = tbl.mean_vector(s_tokens)
    if q_mean is None or s_mean is None:
        return None
    return float(q_mean @ s_mean)
