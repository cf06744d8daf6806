"""Knowledge-enhanced cross-encoder for query-passage relevance.

The network stacks N plain transformer layers and M knowledge-injector
layers. An injector layer fuses projected entity vectors into token
features at aligned positions, then refreshes the entity vectors by
attentive message passing over the meta-graph so that the next layer
injects propagated knowledge. Ablation modes cut the propagation
(entities stay at their translation embeddings), the interaction (text
and graph run as separate streams joined only at the score head), or
the whole injector (vanilla cross-encoder).

All reductions over graph structure run in entity-id order, so scores
do not depend on how meta-graph node or edge lists happen to be
ordered.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .distill import MetaGraph
from .embeddings import KgEmbeddings
from .errors import ConfigurationError, InputError, InvariantViolation
from .text import tokenize

MODES = ("full", "no_propagation", "no_interaction", "vanilla")

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)


class Vocab:
    """Word-level vocabulary with reserved special tokens."""

    def __init__(self, words: list[str]):
        self.id_to_word = list(SPECIALS) + [w for w in words if w not in SPECIALS]
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}

    def __len__(self) -> int:
        return len(self.id_to_word)

    def encode(self, token: str) -> int:
        return self.word_to_id.get(token, self.word_to_id[UNK])

    @classmethod
    def build(cls, texts: list[str]) -> "Vocab":
        seen: dict[str, None] = {}
        for text in texts:
            for tok in tokenize(text):
                seen.setdefault(tok)
        return cls(sorted(seen))

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps({"words": self.id_to_word[len(SPECIALS):]}), encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "Vocab":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(doc["words"])


@dataclass(frozen=True)
class RerankerConfig:
    """Architecture settings; encoder depth is n_encoder + n_injector."""

    n_encoder_layers: int = 3
    n_injector_layers: int = 2
    gmn_rounds: int = 2
    hidden_dim: int = 64
    ffn_dim: int = 128
    entity_dim: int = 32
    n_heads: int = 4
    max_len: int = 128
    mode: str = "full"

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected {MODES}")
        dims = (self.hidden_dim, self.ffn_dim, self.entity_dim, self.n_heads, self.max_len)
        if min(dims) <= 0 or self.n_encoder_layers < 0 or self.n_injector_layers < 0:
            raise ConfigurationError("dimensions and depths must be positive")
        if self.hidden_dim % self.n_heads != 0:
            raise ConfigurationError(
                f"hidden_dim {self.hidden_dim} not divisible by {self.n_heads} heads"
            )
        if self.mode == "vanilla":
            if self.n_injector_layers != 0:
                raise ConfigurationError("vanilla mode requires n_injector_layers == 0")
        elif self.n_injector_layers > 0 and self.mode != "no_propagation":
            if self.gmn_rounds < 1:
                raise ConfigurationError("gmn_rounds must be >= 1 when propagation is on")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RerankerConfig":
        cfg = cls(**json.loads(text))
        cfg.validate()
        return cfg


@dataclass
class TokenizedPair:
    """[CLS] query [SEP] passage [SEP] with segment and position ids."""

    token_ids: list[int]
    segment_ids: list[int]
    positions: list[int]
    attention_mask: list[int]
    q_tokens: list[str]
    p_tokens: list[str]

    def __len__(self) -> int:
        return len(self.token_ids)

    def validate(self, vocab: Vocab, max_len: int) -> None:
        cls_id, sep_id = vocab.encode(CLS), vocab.encode(SEP)
        if len(self.token_ids) > max_len:
            raise InvariantViolation("pair exceeds maximum length")
        if self.token_ids[0] != cls_id or self.token_ids.count(cls_id) != 1:
            raise InvariantViolation("pair must have exactly one leading CLS")
        if self.token_ids.count(sep_id) != 2:
            raise InvariantViolation("pair must have exactly two SEP tokens")


def tokenize_pair(q: str, p: str, vocab: Vocab, max_len: int = 128) -> TokenizedPair:
    """Frame a query-passage pair for the encoder.

    The passage side is truncated first; the query is only cut when it
    cannot fit on its own. Unknown words map to the UNK id.
    """
    q_toks = tokenize(q)
    if not q_toks:
        raise InputError(f"query {q!r} has no tokens")
    p_toks = tokenize(p)
    budget = max_len - 3
    if budget < 1:
        raise ConfigurationError(f"max_len {max_len} leaves no room for tokens")
    q_keep = q_toks[:budget]
    p_keep = p_toks[: budget - len(q_keep)]
    ids = (
        [vocab.encode(CLS)]
        + [vocab.encode(t) for t in q_keep]
        + [vocab.encode(SEP)]
        + [vocab.encode(t) for t in p_keep]
        + [vocab.encode(SEP)]
    )
    segments = [0] * (len(q_keep) + 2) + [1] * (len(p_keep) + 1)
    pair = TokenizedPair(
        token_ids=ids,
        segment_ids=segments,
        positions=list(range(len(ids))),
        attention_mask=[1] * len(ids),
        q_tokens=q_keep,
        p_tokens=p_keep,
    )
    pair.validate(vocab, max_len)
    return pair


@dataclass
class EntityAlignment:
    """Token position of each target entity that survives tokenization.

    ``aligned`` maps entity id to the pair-token index of the first
    token of its phrase: query entities inside the query segment,
    key-sentence entities inside the key-sentence span of the passage
    segment. Meta-graph nodes without a surviving surface position are
    ``intermediate`` and keep their running entity vector instead of a
    token slice.
    """

    aligned: dict[int, int] = field(default_factory=dict)
    intermediate: list[int] = field(default_factory=list)


def _first_spans(spans: list[tuple[int, int, int]]) -> dict[int, tuple[int, int]]:
    first: dict[int, tuple[int, int]] = {}
    for eid, a, b in spans:
        first.setdefault(eid, (a, b))
    return first


def align_entities(pair: TokenizedPair, mg: MetaGraph) -> EntityAlignment:
    """Map meta-graph target entities to first-token positions in the pair."""
    q_first = _first_spans(mg.query_entity_spans)
    s_first = _first_spans(mg.sentence_entity_spans)
    q_kept = len(pair.q_tokens)
    p_kept = len(pair.p_tokens)
    ks_start = mg.key_sentence_span[0]
    out = EntityAlignment()
    for eid in sorted(set(mg.nodes)):
        span = q_first.get(eid)
        if span is not None and span[1] <= q_kept:
            out.aligned[eid] = 1 + span[0]
            continue
        span = s_first.get(eid)
        if span is not None and ks_start + span[1] <= p_kept:
            out.aligned[eid] = q_kept + 2 + ks_start + span[0]
            continue
        out.intermediate.append(eid)
    used = list(out.aligned.values())
    if len(set(used)) != len(used) or any(i >= len(pair) for i in used):
        raise InvariantViolation("entity alignment produced bad token indices")
    return out


def init_params(
    cfg: RerankerConfig, vocab_size: int, rng: np.random.Generator, scale: float = 0.02
) -> ParamStore:
    """Create all trainable matrices for the configuration.

    Injector-layer names start with "inj." and the shared relation
    projection is "rel_proj."; the trainer keys its two learning-rate
    groups off those prefixes.
    """
    cfg.validate()
    params = ParamStore()
    d_h, d_f, d_e = cfg.hidden_dim, cfg.ffn_dim, cfg.entity_dim

    def dense(name: str, rows: int, cols: int) -> None:
        params.add(f"{name}.w", rng.normal(0.0, scale, size=(rows, cols)))
        params.add(f"{name}.b", np.zeros((1, cols)))

    def norm(name: str) -> None:
        params.add(f"{name}.g", np.ones((1, d_h)))
        params.add(f"{name}.b", np.zeros((1, d_h)))

    def block(prefix: str) -> None:
        for proj in ("wq", "wk", "wv", "wo"):
            params.add(f"{prefix}.attn.{proj}", rng.normal(0.0, scale, size=(d_h, d_h)))
        for bias in ("bq", "bk", "bv", "bo"):
            params.add(f"{prefix}.attn.{bias}", np.zeros((1, d_h)))
        norm(f"{prefix}.ln1")
        dense(f"{prefix}.ffn.w1", d_h, d_f)
        dense(f"{prefix}.ffn.w2", d_f, d_h)
        norm(f"{prefix}.ln2")

    params.add("embed.tok", rng.normal(0.0, scale, size=(vocab_size, d_h)))
    params.add("embed.pos", rng.normal(0.0, scale, size=(cfg.max_len, d_h)))
    params.add("embed.seg", rng.normal(0.0, scale, size=(2, d_h)))
    for i in range(cfg.n_encoder_layers):
        block(f"enc.{i}")
    for j in range(cfg.n_injector_layers):
        block(f"inj.{j}")
        dense(f"inj.{j}.ent_in", d_e, d_f)
        dense(f"inj.{j}.ent_out", d_f, d_e)
        for gate in ("alpha", "beta", "gamma"):
            dense(f"inj.{j}.gmn.{gate}", 2 * d_e, 1)
    if cfg.n_injector_layers > 0:
        dense("rel_proj", d_e, d_e)
    if cfg.mode == "no_interaction":
        dense("head_cat", d_h + d_e, 1)
    else:
        dense("head", d_h, 1)
    return params


def _dense(params: ParamStore, name: str, x: Tensor) -> Tensor:
    return ad.linear(x, params[f"{name}.w"], params[f"{name}.b"])


def multi_head_attention(
    params: ParamStore, prefix: str, x: Tensor, n_heads: int,
    capture: list | None = None,
) -> Tensor:
    d = x.shape[1]
    if d % n_heads != 0:
        raise ConfigurationError(f"width {d} not divisible by {n_heads} heads")
    dk = d // n_heads
    q = ad.linear(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = ad.linear(x, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v = ad.linear(x, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    heads = []
    for h in range(n_heads):
        qs = ad.slice_cols(q, h * dk, (h + 1) * dk)
        ks = ad.slice_cols(k, h * dk, (h + 1) * dk)
        vs = ad.slice_cols(v, h * dk, (h + 1) * dk)
        logits = ad.scale(ad.matmul(qs, ad.transpose(ks)), 1.0 / math.sqrt(dk))
        att = ad.softmax_rows(logits)
        if capture is not None:
            capture.append(att.data.copy())
        heads.append(ad.matmul(att, vs))
    merged = ad.hstack(heads)
    return ad.linear(merged, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def transformer_layer(
    params: ParamStore, prefix: str, x: Tensor, n_heads: int,
    capture: list | None = None,
) -> Tensor:
    """Self-attention and FFN, each with residual and layer norm."""
    attn = multi_head_attention(params, f"{prefix}.attn", x, n_heads, capture)
    h1 = ad.layer_norm(ad.add(x, attn), params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    inner = ad.gelu(_dense(params, f"{prefix}.ffn.w1", h1))
    ffn = _dense(params, f"{prefix}.ffn.w2", inner)
    return ad.layer_norm(ad.add(h1, ffn), params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])


class _GraphContext:
    """Canonicalized meta-graph structure shared by all injector layers.

    Node order is ascending entity id; neighbor lists treat edges as
    undirected, are flattened into contiguous per-node segments, and
    are sorted so that aggregation order never depends on how the
    meta-graph stored its nodes or edges.
    """

    def __init__(self, mg: MetaGraph, alignment: EntityAlignment):
        self.nodes: list[int] = sorted(set(mg.nodes))
        self.node_pos = {e: i for i, e in enumerate(self.nodes)}
        self.edges: list[tuple[int, int, int]] = sorted(set(mg.edges))
        self.alignment = alignment
        per_node: list[list[tuple[int, int, int]]] = [[] for _ in self.nodes]
        for j, (h, r, t) in enumerate(self.edges):
            hi, ti = self.node_pos[h], self.node_pos[t]
            per_node[hi].append((ti, r, j))
            if hi != ti:
                per_node[ti].append((hi, r, j))
        self.head_rows: list[int] = []
        self.nbr_rows: list[int] = []
        self.edge_rows: list[int] = []
        self.segments: list[tuple[int, int]] = []
        at = 0
        for i, entries in enumerate(per_node):
            entries.sort()
            for ti, _, j in entries:
                self.head_rows.append(i)
                self.nbr_rows.append(ti)
                self.edge_rows.append(j)
            self.segments.append((at, at + len(entries)))
            at += len(entries)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def propagate_meta_graph(
    e0: Tensor,
    ctx: _GraphContext,
    rel_vecs: Tensor,
    params: ParamStore,
    prefix: str,
    rounds: int,
    capture: list | None = None,
) -> Tensor:
    """Attentive neighbor aggregation over the meta-graph.

    Each round updates every entity as its previous vector plus the
    attention-weighted sum of its neighbors' previous vectors. Logits
    gate three pairwise concatenations (head-neighbor, head-relation,
    relation-neighbor) through learned affine maps and a sigmoid;
    relation vectors stay fixed across rounds.
    """
    if e0.shape[0] != ctx.n_nodes:
        raise InvariantViolation("entity state rows do not match meta-graph nodes")
    state = e0
    for _ in range(rounds):
        heads = ad.take_rows(state, ctx.head_rows)
        nbrs = ad.take_rows(state, ctx.nbr_rows)
        rels = ad.take_rows(rel_vecs, ctx.edge_rows)
        logits = ad.sigmoid(
            ad.add(
                ad.add(
                    _dense(params, f"{prefix}.alpha", ad.hstack([heads, nbrs])),
                    _dense(params, f"{prefix}.beta", ad.hstack([heads, rels])),
                ),
                _dense(params, f"{prefix}.gamma", ad.hstack([rels, nbrs])),
            )
        )
        new_rows = []
        for i, (s, e) in enumerate(ctx.segments):
            own = ad.take_rows(state, [i])
            if s == e:
                new_rows.append(own)
                continue
            weights = ad.softmax_rows(ad.transpose(ad.slice_rows(logits, s, e)))
            if capture is not None:
                capture.append(weights.data.copy())
            agg = ad.matmul(weights, ad.slice_rows(nbrs, s, e))
            new_rows.append(ad.add(own, agg))
        state = ad.vstack(new_rows)
    return state


def injector_layer(
    params: ParamStore,
    prefix: str,
    x: Tensor,
    entity_state: Tensor | None,
    ctx: _GraphContext | None,
    rel_vecs: Tensor | None,
    cfg: RerankerConfig,
    capture: list | None = None,
) -> tuple[Tensor, Tensor | None]:
    """One knowledge-injection layer: fuse entities into tokens, refresh entities.

    With an empty meta-graph the layer is exactly a transformer layer
    and the entity state stays None. In no_interaction mode the token
    and entity streams are computed from their own inputs only.
    """
    attn = multi_head_attention(params, f"{prefix}.attn", x, cfg.n_heads, capture)
    h1 = ad.layer_norm(ad.add(x, attn), params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    text_term = _dense(params, f"{prefix}.ffn.w1", h1)

    inject = (
        ctx is not None
        and ctx.n_nodes > 0
        and cfg.mode in ("full", "no_propagation")
    )
    if inject:
        aligned_rows = [
            ctx.node_pos[eid] for eid in ctx.alignment.aligned if eid in ctx.node_pos
        ]
        aligned_tokens = [
            ctx.alignment.aligned[ctx.nodes[row]] for row in aligned_rows
        ]
    if inject and aligned_rows:
        ent_proj = _dense(params, f"{prefix}.ent_in", entity_state)
        scattered = ad.scatter_rows(
            ad.take_rows(ent_proj, aligned_rows), aligned_tokens, x.shape[0]
        )
        fused = ad.gelu(ad.add(text_term, scattered))
    else:
        fused = ad.gelu(text_term)
    out_tokens = ad.layer_norm(
        ad.add(h1, _dense(params, f"{prefix}.ffn.w2", fused)),
        params[f"{prefix}.ln2.g"],
        params[f"{prefix}.ln2.b"],
    )

    if ctx is None or ctx.n_nodes == 0:
        return out_tokens, None
    if cfg.mode == "no_propagation":
        return out_tokens, entity_state

    if cfg.mode == "no_interaction":
        ent_fused = ad.gelu(_dense(params, f"{prefix}.ent_in", entity_state))
        gmn_in = _dense(params, f"{prefix}.ent_out", ent_fused)
    else:
        token_slice_src = _dense(params, f"{prefix}.ent_out", fused)
        rows = []
        for i, eid in enumerate(ctx.nodes):
            tok = ctx.alignment.aligned.get(eid)
            if tok is None:
                rows.append(ad.take_rows(entity_state, [i]))
            else:
                rows.append(ad.take_rows(token_slice_src, [tok]))
        gmn_in = ad.vstack(rows)
    next_state = propagate_meta_graph(
        gmn_in, ctx, rel_vecs, params, f"{prefix}.gmn", cfg.gmn_rounds, capture=capture
    )
    return out_tokens, next_state


class KnowledgeReranker:
    """Scorer binding a configuration, parameters, and graph embeddings."""

    def __init__(
        self,
        cfg: RerankerConfig,
        params: ParamStore,
        kg_emb: KgEmbeddings | None,
        vocab: Vocab | None = None,
    ):
        cfg.validate()
        if cfg.n_injector_layers > 0 and kg_emb is None:
            raise ConfigurationError("injector layers need knowledge-graph embeddings")
        if kg_emb is not None and kg_emb.dim != cfg.entity_dim and cfg.n_injector_layers > 0:
            raise ConfigurationError(
                f"entity_dim {cfg.entity_dim} != embedding dim {kg_emb.dim}"
            )
        self.cfg = cfg
        self.params = params
        self.kg_emb = kg_emb
        self.vocab = vocab

    def score(self, pair: TokenizedPair, mg: MetaGraph | None,
              capture: list | None = None) -> Tensor:
        """Relevance logit for one pair as a 1x1 tensor in the graph."""
        cfg, params = self.cfg, self.params
        tok = ad.take_rows(params["embed.tok"], pair.token_ids)
        pos = ad.take_rows(params["embed.pos"], pair.positions)
        seg = ad.take_rows(params["embed.seg"], pair.segment_ids)
        state = ad.add(ad.add(tok, pos), seg)
        for i in range(cfg.n_encoder_layers):
            state = transformer_layer(params, f"enc.{i}", state, cfg.n_heads, capture)

        entity_state: Tensor | None = None
        ctx: _GraphContext | None = None
        rel_vecs: Tensor | None = None
        if cfg.n_injector_layers > 0 and cfg.mode != "vanilla":
            if mg is None:
                raise InputError("injector model needs a meta-graph (possibly empty)")
            alignment = align_entities(pair, mg)
            ctx = _GraphContext(mg, alignment)
            if ctx.n_nodes > 0:
                entity_state = ad.constant(self.kg_emb.entity_vecs[ctx.nodes])
                rel_base = self.kg_emb.relation_vecs[[r for _, r, _ in ctx.edges]]
                rel_vecs = _dense(params, "rel_proj", ad.constant(rel_base))
            for j in range(cfg.n_injector_layers):
                state, entity_state = injector_layer(
                    params, f"inj.{j}", state, entity_state, ctx, rel_vecs, cfg, capture
                )

        cls_vec = ad.slice_rows(state, 0, 1)
        if cfg.mode == "no_interaction":
            if entity_state is not None:
                pooled = ad.mean_rows(entity_state)
            else:
                pooled = ad.constant(np.zeros((1, cfg.entity_dim)))
            return _dense(params, "head_cat", ad.hstack([cls_vec, pooled]))
        return _dense(params, "head", cls_vec)

    def score_value(self, pair: TokenizedPair, mg: MetaGraph | None) -> float:
        return self.score(pair, mg).item()


def score(
    pair: TokenizedPair,
    mg: MetaGraph | None,
    params: ParamStore,
    cfg: RerankerConfig,
    kg_emb: KgEmbeddings | None = None,
) -> float:
    """Functional form of KnowledgeReranker.score for one-off calls."""
    return KnowledgeReranker(cfg, params, kg_emb).score_value(pair, mg)


def save_checkpoint(directory, params: ParamStore, cfg: RerankerConfig, vocab: Vocab) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    params.save(d / "params.npz")
    (d / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    vocab.save(d / "vocab.json")


def load_checkpoint(directory) -> tuple[ParamStore, RerankerConfig, Vocab]:
    d = Path(directory)
    params = ParamStore.load(d / "params.npz")
    cfg = RerankerConfig.from_json((d / "config.json").read_text(encoding="utf-8"))
    vocab = Vocab.load(d / "vocab.json")
    return params, cfg, vocab
