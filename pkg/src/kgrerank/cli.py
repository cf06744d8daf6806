"""Pipeline command surface.

Stages consume one another's artifacts from the configured workdir:

    kg build       triples -> graph.json
    kg transe      graph.json -> embeddings.npz
    distill prune  graph.json + embeddings.npz -> pruned.json
    distill build  pruned.json + queries/collection/candidates -> metagraphs.jsonl
    train          metagraphs.jsonl + embeddings.npz -> checkpoint/
    rerank         checkpoint/ -> run.trec
    eval           run.trec + qrels -> metrics.json
    stats          metagraphs.jsonl + embeddings.npz -> stats.json

Every command is idempotent: it records a content hash of its inputs
in a stamp file and becomes a no-op while nothing changed. Exit codes:
0 success, 1 validation error, 2 data error, 3 internal invariant
violation.
"""

from __future__ import annotations

import functools
import hashlib
import json
import sys
from pathlib import Path

import click

from . import distill as distill_mod
from . import kg as kg_mod
from . import metrics as metrics_mod
from . import trec
from .train import MetaGraphStore, pair_key
from .train import rerank as rerank_pairs
from .train import train as train_model
from .config import PipelineConfig, load_config
from .embeddings import KgEmbeddings, load_word_vectors, train_transe
from .errors import (
    ConfigurationError,
    DataError,
    InvariantViolation,
    KgRerankError,
)
from .model import (
    KnowledgeReranker,
    Vocab,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

ARTIFACTS = {
    "graph.json": "kg build",
    "embeddings.npz": "kg transe",
    "pruned.json": "distill prune",
    "metagraphs.jsonl": "distill build",
    "checkpoint": "train",
    "run.trec": "rerank",
}


class Workdir:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = Path(cfg.paths.workdir)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "stamps").mkdir(exist_ok=True)

    def path(self, name: str) -> Path:
        return self.root / name

    def require(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            producer = ARTIFACTS.get(name, "<unknown>")
            raise DataError(
                f"missing artifact {name!r} in {self.root}; run `kgrerank {producer}` first"
            )
        return p

    def stamp_path(self, command: str) -> Path:
        return self.root / "stamps" / (command.replace(" ", "_") + ".json")

    def up_to_date(self, command: str, fingerprint: dict, outputs: list[str]) -> bool:
        stamp = self.stamp_path(command)
        if not stamp.exists():
            return False
        if not all(self.path(o).exists() for o in outputs):
            return False
        try:
            recorded = json.loads(stamp.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return False
        return recorded == fingerprint

    def write_stamp(self, command: str, fingerprint: dict) -> None:
        self.stamp_path(command).write_text(
            json.dumps(fingerprint, sort_keys=True), encoding="utf-8"
        )


def _file_hash(path) -> str:
    digest = hashlib.sha256()
    p = Path(path)
    if p.is_dir():
        for child in sorted(p.rglob("*")):
            if child.is_file():
                digest.update(child.name.encode())
                digest.update(child.read_bytes())
    else:
        digest.update(p.read_bytes())
    return digest.hexdigest()


def _fingerprint(cfg_json: str, files: list) -> dict:
    return {
        "config": hashlib.sha256(cfg_json.encode()).hexdigest(),
        "inputs": {str(f): _file_hash(f) for f in files},
    }


def handles_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigurationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except DataError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except InvariantViolation as exc:
            click.echo(f"internal invariant violation: {exc}", err=True)
            sys.exit(3)
        except KgRerankError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


pass_config = click.make_pass_decorator(PipelineConfig)


@click.group()
@click.option(
    "--config", "-c", "config_path", required=True, type=click.Path(), help="pipeline config JSON"
)
@click.pass_context
def main(ctx, config_path):
    """Knowledge-graph enhanced passage re-ranking pipeline."""
    try:
        ctx.obj = load_config(config_path)
    except ConfigurationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@main.group()
def kg():
    """Knowledge graph preparation."""


@kg.command("build")
@pass_config
@handles_errors
def kg_build(cfg: PipelineConfig):
    """Load, normalize, and index the triple file."""
    cfg.require_paths("triples")
    work = Workdir(cfg)
    merge_path = cfg.paths.relation_merge
    files = [cfg.paths.triples] + ([merge_path] if merge_path else [])
    fp = _fingerprint(cfg.section_json("paths"), files)
    if work.up_to_date("kg build", fp, ["graph.json"]):
        click.echo("kg build: up to date")
        return
    if merge_path:
        merge = kg_mod.RelationMergeMap.from_json(merge_path, strict=False)
    else:
        merge = kg_mod.default_merge_map()
    graph = kg_mod.load_triples(cfg.paths.triples, merge)
    graph.save(work.path("graph.json"))
    work.write_stamp("kg build", fp)
    click.echo(json.dumps(kg_mod.graph_stats(graph), sort_keys=True))


@kg.command("transe")
@pass_config
@handles_errors
def kg_transe(cfg: PipelineConfig):
    """Train translation embeddings on the built graph."""
    work = Workdir(cfg)
    graph_path = work.require("graph.json")
    fp = _fingerprint(cfg.section_json("transe"), [graph_path])
    if work.up_to_date("kg transe", fp, ["embeddings.npz"]):
        click.echo("kg transe: up to date")
        return
    graph = kg_mod.KnowledgeGraph.load(graph_path)
    losses: list[float] = []
    emb = train_transe(graph, cfg.transe, loss_history=losses)
    emb.save(work.path("embeddings.npz"))
    work.write_stamp("kg transe", fp)
    click.echo(
        json.dumps(
            {"first_epoch_loss": losses[0], "final_epoch_loss": losses[-1]},
            sort_keys=True,
        )
    )


@main.group()
def distill():
    """Graph pruning and meta-graph construction."""


@distill.command("prune")
@click.option("--pi", type=int, default=None, help="edges kept per head entity")
@pass_config
@handles_errors
def distill_prune(cfg: PipelineConfig, pi):
    """Keep the top-pi most reliable outgoing edges per entity."""
    work = Workdir(cfg)
    graph_path = work.require("graph.json")
    emb_path = work.require("embeddings.npz")
    pi = pi if pi is not None else cfg.distill.pi
    fp = _fingerprint(cfg.section_json("distill") + f"|pi={pi}", [graph_path, emb_path])
    if work.up_to_date("distill prune", fp, ["pruned.json"]):
        click.echo("distill prune: up to date")
        return
    graph = kg_mod.KnowledgeGraph.load(graph_path)
    emb = KgEmbeddings.load(emb_path)
    pruned = distill_mod.prune_graph(graph, emb, pi)
    pruned.save(work.path("pruned.json"))
    work.write_stamp("distill prune", fp)
    kept = sum(len(a) for a in pruned.adjacency)
    click.echo(json.dumps({"kept_edges": kept, "pi": pi}, sort_keys=True))


@distill.command("build")
@click.option("--k", type=int, default=None, help="maximum path hops")
@click.option("--max-frontier", type=int, default=None, help="partial-path cap")
@pass_config
@handles_errors
def distill_build(cfg: PipelineConfig, k, max_frontier):
    """Construct one meta-graph per candidate query-passage pair."""
    cfg.require_paths("queries", "collection", "candidates", "word_vectors")
    work = Workdir(cfg)
    pruned_path = work.require("pruned.json")
    k = k if k is not None else cfg.distill.k
    max_frontier = max_frontier if max_frontier is not None else cfg.distill.max_frontier
    fp = _fingerprint(
        cfg.section_json("distill") + f"|k={k}|mf={max_frontier}",
        [
            pruned_path,
            cfg.paths.queries,
            cfg.paths.collection,
            cfg.paths.candidates,
            cfg.paths.word_vectors,
        ],
    )
    if work.up_to_date("distill build", fp, ["metagraphs.jsonl"]):
        click.echo("distill build: up to date")
        return
    pruned = distill_mod.PrunedGraph.load(pruned_path)
    lexicon = distill_mod.EntityLexicon.from_graph(pruned)
    table = load_word_vectors(cfg.paths.word_vectors)
    queries = trec.read_tsv_texts(cfg.paths.queries)
    collection = trec.read_tsv_texts(cfg.paths.collection)
    candidates = trec.read_run(cfg.paths.candidates)
    examples = trec.load_examples(queries, collection, candidates)
    records = []
    n_empty = 0
    for ex in examples:
        for pid, text, _ in ex.candidates:
            mg = distill_mod.build_meta_graph(
                ex.query_text, text, pruned, lexicon, table, k, max_frontier
            )
            if mg.is_empty:
                n_empty += 1
            records.append((pair_key(ex.query_id, pid), mg))
    distill_mod.write_meta_graphs(work.path("metagraphs.jsonl"), records)
    work.write_stamp("distill build", fp)
    click.echo(
        json.dumps({"pairs": len(records), "empty": n_empty, "k": k}, sort_keys=True)
    )


def _load_examples(cfg: PipelineConfig, with_qrels: bool):
    names = ["queries", "collection", "candidates"] + (["qrels"] if with_qrels else [])
    cfg.require_paths(*names)
    queries = trec.read_tsv_texts(cfg.paths.queries)
    collection = trec.read_tsv_texts(cfg.paths.collection)
    candidates = trec.read_run(cfg.paths.candidates)
    qrels = trec.read_qrels(cfg.paths.qrels) if with_qrels else None
    return trec.load_examples(queries, collection, candidates, qrels), qrels


@main.command("train")
@pass_config
@handles_errors
def train_cmd(cfg: PipelineConfig):
    """Fine-tune the re-ranker on the candidate pools."""
    work = Workdir(cfg)
    mg_path = work.require("metagraphs.jsonl")
    emb_path = work.require("embeddings.npz")
    cfg.require_paths("qrels")
    fp = _fingerprint(
        cfg.section_json("model", "train"),
        [mg_path, emb_path, cfg.paths.queries, cfg.paths.collection,
         cfg.paths.candidates, cfg.paths.qrels],
    )
    if work.up_to_date("train", fp, ["checkpoint"]):
        click.echo("train: up to date")
        return
    examples, _ = _load_examples(cfg, with_qrels=True)
    store = MetaGraphStore(distill_mod.read_meta_graphs(mg_path))
    kg_emb = KgEmbeddings.load(emb_path)
    vocab = Vocab.build(
        [ex.query_text for ex in examples]
        + [text for ex in examples for _, text, _ in ex.candidates]
    )
    (work.root / "logs").mkdir(exist_ok=True)
    losses: list[float] = []
    params = train_model(
        cfg.model,
        examples,
        store,
        kg_emb,
        vocab,
        cfg.train,
        loss_history=losses,
        log_path=work.path("logs/train.jsonl"),
    )
    save_checkpoint(work.path("checkpoint"), params, cfg.model, vocab)
    work.write_stamp("train", fp)
    click.echo(
        json.dumps(
            {"epochs": len(losses), "final_mean_loss": losses[-1] if losses else None},
            sort_keys=True,
        )
    )


@main.command("rerank")
@pass_config
@handles_errors
def rerank_cmd(cfg: PipelineConfig):
    """Score and rank every candidate with the trained model."""
    work = Workdir(cfg)
    ckpt = work.require("checkpoint")
    mg_path = work.require("metagraphs.jsonl")
    emb_path = work.require("embeddings.npz")
    fp = _fingerprint(
        cfg.section_json("model"),
        [ckpt, mg_path, emb_path, cfg.paths.queries, cfg.paths.collection, cfg.paths.candidates],
    )
    if work.up_to_date("rerank", fp, ["run.trec"]):
        click.echo("rerank: up to date")
        return
    examples, _ = _load_examples(cfg, with_qrels=False)
    store = MetaGraphStore(distill_mod.read_meta_graphs(mg_path))
    params, model_cfg, vocab = load_checkpoint(ckpt)
    kg_emb = KgEmbeddings.load(emb_path)
    scorer = KnowledgeReranker(model_cfg, params, kg_emb, vocab)
    run = rerank_pairs(scorer, examples, store)
    trec.write_run(work.path("run.trec"), run)
    work.write_stamp("rerank", fp)
    click.echo(json.dumps({"rows": len(run.rows)}, sort_keys=True))


@main.command("eval")
@pass_config
@handles_errors
def eval_cmd(cfg: PipelineConfig):
    """Report MRR and MAP for the reranked run."""
    work = Workdir(cfg)
    run_path = work.require("run.trec")
    cfg.require_paths("qrels")
    run = trec.read_run(run_path)
    qrels = trec.read_qrels(cfg.paths.qrels)
    report = {f"mrr@{cfg.eval.mrr_k}": metrics_mod.mrr_at_k(run, qrels, cfg.eval.mrr_k)}
    for k in cfg.eval.map_ks:
        report[f"map@{k}"] = metrics_mod.map_at_k(run, qrels, k)
    work.path("metrics.json").write_text(
        json.dumps(report, sort_keys=True, indent=2), encoding="utf-8"
    )
    for name in sorted(report):
        click.echo(f"{name} = {report[name]:.4f}")


@main.command("stats")
@pass_config
@handles_errors
def stats_cmd(cfg: PipelineConfig):
    """Report meta-graph edge counts and edge reliability."""
    work = Workdir(cfg)
    mg_path = work.require("metagraphs.jsonl")
    emb_path = work.require("embeddings.npz")
    graphs = distill_mod.read_meta_graphs(mg_path)
    emb = KgEmbeddings.load(emb_path)
    stats = distill_mod.meta_graph_stats(list(graphs.values()), emb)
    work.path("stats.json").write_text(
        json.dumps(stats, sort_keys=True, indent=2), encoding="utf-8"
    )
    avg_score = stats["avg_edge_score"]
    click.echo(f"avg edge count = {stats['avg_edge_count']:.2f}")
    click.echo(
        "avg edge score = "
        + (f"{avg_score:.2f}" if avg_score is not None else "undefined (no edges)")
    )


if __name__ == "__main__":
    main()
