"""Fine-tuning with listwise cross-entropy over hard negatives, and
ranking inference.

Each training step takes one query slot: one positive passage and
``n_neg`` sampled negatives, scored jointly through a softmax
cross-entropy against the positive. Two Adam parameter groups run at
different learning rates: injector parameters (names starting with
"inj." or "rel_proj.") and everything else.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .distill import MetaGraph
from .embeddings import KgEmbeddings
from .errors import (
    ConfigurationError,
    InputError,
    InvariantViolation,
    TrainingDivergedError,
)
from .model import KnowledgeReranker, RerankerConfig, Vocab, init_params, tokenize_pair
from .trec import RerankExample, RunFile

INJECTOR_PREFIXES = ("inj.", "rel_proj.")


def pair_key(query_id: str, passage_id: str) -> str:
    return f"{query_id}#{passage_id}"


@dataclass
class TrainBatch:
    """One positive and n_neg negatives for a single query slot."""

    query_id: str
    positive: str
    negatives: list[str]
    with_replacement: bool = False


def sample_batch(ex: RerankExample, n_neg: int, seed: int) -> TrainBatch | None:
    """Draw a training slot for one query; None when the query is unusable.

    Negatives are label-0 candidates. When fewer than ``n_neg`` exist
    the draw falls back to sampling with replacement and flags it.
    """
    if n_neg < 1:
        raise ConfigurationError(f"n_neg must be >= 1, got {n_neg}")
    positives = ex.positives()
    negatives = ex.negatives()
    if not positives or not negatives:
        return None
    rng = np.random.default_rng(seed)
    positive = positives[int(rng.integers(len(positives)))]
    if len(negatives) >= n_neg:
        picked = rng.choice(len(negatives), size=n_neg, replace=False)
        return TrainBatch(ex.query_id, positive, [negatives[int(i)] for i in picked])
    picked = rng.integers(len(negatives), size=n_neg)
    return TrainBatch(
        ex.query_id, positive, [negatives[int(i)] for i in picked], with_replacement=True
    )


def finetune_loss(pos_score: float, neg_scores: list[float]) -> float:
    """-log softmax probability of the positive among all scores."""
    if not neg_scores:
        raise ConfigurationError("finetune_loss needs at least one negative score")
    scores = np.array([pos_score] + list(neg_scores), dtype=np.float64)
    m = scores.max()
    lse = m + math.log(np.exp(scores - m).sum())
    return float(lse - pos_score)


@dataclass(frozen=True)
class OptimizerConfig:
    lr_encoder: float = 1e-5
    lr_injector: float = 1e-4
    epochs: int = 1
    seed: int = 0
    n_neg: int = 19
    max_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam over a ParamStore with a per-name learning rate."""

    def __init__(self, params: ParamStore, cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def lr_for(self, name: str) -> float:
        if name.startswith(INJECTOR_PREFIXES):
            return self.cfg.lr_injector
        return self.cfg.lr_encoder

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        bias1 = 1.0 - cfg.beta1**self.t
        bias2 = 1.0 - cfg.beta2**self.t
        for name, tensor in self.params.items():
            g = tensor.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
            tensor.data -= self.lr_for(name) * update


class MetaGraphStore:
    """Keyed lookup of per-pair meta-graphs with a strict missing check."""

    def __init__(self, graphs: dict[str, MetaGraph]):
        self.graphs = graphs

    def get(self, query_id: str, passage_id: str) -> MetaGraph:
        key = pair_key(query_id, passage_id)
        if key not in self.graphs:
            raise InputError(f"no meta-graph for pair {key}")
        return self.graphs[key]


def train(
    cfg: RerankerConfig,
    examples: list[RerankExample],
    meta_graphs: MetaGraphStore,
    kg_emb: KgEmbeddings | None,
    vocab: Vocab,
    opt: OptimizerConfig = OptimizerConfig(),
    params: ParamStore | None = None,
    loss_history: list[float] | None = None,
    log_path=None,
) -> ParamStore:
    """Fine-tune from random initialization; deterministic given the seed.

    Emits one JSON line per epoch to ``log_path`` with the mean loss.
    Aborts with diagnostics when the loss goes non-finite.
    """
    if not examples:
        raise ConfigurationError("no training examples")
    cfg.validate()
    rng = np.random.default_rng(opt.seed)
    if params is None:
        params = init_params(cfg, len(vocab), rng)
    scorer = KnowledgeReranker(cfg, params, kg_emb, vocab)
    optimizer = Adam(params, opt)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    step = 0
    try:
        for epoch in range(opt.epochs):
            order = rng.permutation(len(examples))
            losses: list[float] = []
            for idx in order:
                if opt.max_steps is not None and step >= opt.max_steps:
                    break
                ex = examples[int(idx)]
                batch = sample_batch(ex, opt.n_neg, seed=int(rng.integers(2**31)))
                if batch is None:
                    continue
                loss = _train_step(scorer, ex, batch, meta_graphs, optimizer)
                step += 1
                if not math.isfinite(loss):
                    raise TrainingDivergedError(
                        f"loss {loss} at step {step}, query {ex.query_id}, "
                        f"epoch {epoch}; lowering learning rates usually helps"
                    )
                losses.append(loss)
            mean_loss = float(np.mean(losses)) if losses else float("nan")
            if loss_history is not None and losses:
                loss_history.append(mean_loss)
            if log_fh:
                log_fh.write(
                    json.dumps(
                        {
                            "epoch": epoch,
                            "mean_loss": mean_loss,
                            "steps": step,
                            "lr_encoder": opt.lr_encoder,
                            "lr_injector": opt.lr_injector,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
            if opt.max_steps is not None and step >= opt.max_steps:
                break
    finally:
        if log_fh:
            log_fh.close()
    return params


def _train_step(
    scorer: KnowledgeReranker,
    ex: RerankExample,
    batch: TrainBatch,
    meta_graphs: MetaGraphStore,
    optimizer: Adam,
) -> float:
    cfg = scorer.cfg
    vocab = _vocab_of(scorer)

    def score_pid(pid: str):
        pair = tokenize_pair(ex.query_text, ex.text_of(pid), vocab, cfg.max_len)
        mg = meta_graphs.get(ex.query_id, pid)
        return scorer.score(pair, mg)

    try:
        pos = score_pid(batch.positive)
        negs = [score_pid(pid) for pid in batch.negatives]
        stacked = ad.vstack([pos] + negs)
        loss = ad.sub(ad.logsumexp_column(stacked), pos)
        scorer.params.zero_grads()
        loss.backward()
    except InvariantViolation as exc:
        raise TrainingDivergedError(
            f"non-finite values while scoring query {ex.query_id} "
            f"(step {optimizer.t + 1}): {exc}; lowering learning rates usually helps"
        ) from exc
    optimizer.step()
    return loss.item()


def _vocab_of(scorer: KnowledgeReranker) -> Vocab:
    vocab = getattr(scorer, "vocab", None)
    if vocab is None:
        raise ConfigurationError("scorer has no vocabulary attached")
    return vocab


def rerank(
    scorer: KnowledgeReranker,
    examples: list[RerankExample],
    meta_graphs: MetaGraphStore,
    tag: str = "kgrerank",
) -> RunFile:
    """Score every candidate pair and rank per query.

    Ordering is score descending with ties broken by passage id
    ascending; every candidate receives a rank.
    """
    vocab = _vocab_of(scorer)
    run = RunFile(tag=tag)
    for ex in examples:
        scored: list[tuple[float, str]] = []
        for pid, text, _ in ex.candidates:
            pair = tokenize_pair(ex.query_text, text, vocab, scorer.cfg.max_len)
            mg = meta_graphs.get(ex.query_id, pid)
            scored.append((scorer.score_value(pair, mg), pid))
        scored.sort(key=lambda item: (-item[0], item[1]))
        for rank, (score_val, pid) in enumerate(scored, start=1):
            run.rows.append((ex.query_id, pid, rank, score_val))
    return run
