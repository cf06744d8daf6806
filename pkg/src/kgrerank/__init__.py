"""Knowledge-graph enhanced passage re-ranking toolkit.

Pipeline stages: load and normalize a noisy knowledge graph, train
translation embeddings, prune the graph to its most reliable edges,
build per-query-passage meta-graphs bridging query entities to
key-sentence entities, and score candidates with a cross-encoder whose
injector layers fuse propagated entity knowledge into token features.
"""

from .autodiff import ParamStore, Tensor, grad_check
from .distill import (
    EntityLexicon,
    MetaGraph,
    PrunedGraph,
    build_meta_graph,
    meta_graph_stats,
    prune_graph,
    recognize_entities,
    select_key_sentence,
)
from .embeddings import (
    KgEmbeddings,
    TransEConfig,
    WordEmbeddingTable,
    load_word_vectors,
    query_sentence_relevance,
    train_transe,
    triplet_distance,
    triplet_reliability,
)
from .kg import (
    KnowledgeGraph,
    RelationMergeMap,
    default_merge_map,
    graph_stats,
    load_triples,
    neighbors,
)
from .metrics import map_at_k, mrr_at_k
from .model import (
    EntityAlignment,
    KnowledgeReranker,
    RerankerConfig,
    TokenizedPair,
    Vocab,
    align_entities,
    init_params,
    tokenize_pair,
)
from .train import (
    Adam,
    MetaGraphStore,
    OptimizerConfig,
    TrainBatch,
    finetune_loss,
    rerank,
    sample_batch,
    train,
)
from .trec import RerankExample, RunFile, read_qrels, read_run, write_run

__version__ = "0.1.0"
