"""TREC-format data plumbing: queries, qrels, run files, candidates.

Queries and collections are TSV ``id<TAB>text``. Qrels rows are
``qid 0 pid grade`` and run rows ``qid Q0 pid rank score tag``, both
whitespace-delimited. Writers are deterministic so identical inputs
produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParseError


@dataclass
class RunFile:
    """Ranked rows per query: (query id, passage id, rank, score)."""

    rows: list[tuple[str, str, int, float]] = field(default_factory=list)
    tag: str = "kgrerank"

    def by_query(self) -> dict[str, list[tuple[str, int, float]]]:
        out: dict[str, list[tuple[str, int, float]]] = {}
        for qid, pid, rank, score in self.rows:
            out.setdefault(qid, []).append((pid, rank, score))
        for ranking in out.values():
            ranking.sort(key=lambda row: row[1])
        return out

    def validate(self) -> None:
        for qid, ranking in self.by_query().items():
            prev_score = None
            for i, (pid, rank, score) in enumerate(ranking, start=1):
                if rank != i:
                    raise ParseError("<run>", 0, f"query {qid} ranks are not 1..n")
                if prev_score is not None and score > prev_score:
                    raise ParseError("<run>", 0, f"query {qid} scores increase at rank {rank}")
                prev_score = score


def read_tsv_texts(path) -> dict[str, str]:
    """``id<TAB>text`` per line; duplicate ids keep the last occurrence."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise ParseError(path, line_no, "expected id<TAB>text")
            out[parts[0]] = parts[1]
    return out


def write_tsv_texts(path, items: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, text in items.items():
            fh.write(f"{key}\t{text}\n")


def read_qrels(path) -> dict[str, dict[str, int]]:
    """qid -> pid -> graded label."""
    out: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ParseError(path, line_no, f"expected 4 columns, got {len(parts)}")
            qid, _, pid, grade = parts
            try:
                out.setdefault(qid, {})[pid] = int(grade)
            except ValueError as exc:
                raise ParseError(path, line_no, f"bad grade {grade!r}") from exc
    return out


def write_qrels(path, qrels: dict[str, dict[str, int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in qrels:
            for pid, grade in qrels[qid].items():
                fh.write(f"{qid} 0 {pid} {grade}\n")


def read_run(path) -> RunFile:
    run = RunFile()
    tag = run.tag
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ParseError(path, line_no, f"expected 6 columns, got {len(parts)}")
            qid, _, pid, rank, score, tag = parts
            try:
                run.rows.append((qid, pid, int(rank), float(score)))
            except ValueError as exc:
                raise ParseError(path, line_no, f"bad rank/score: {exc}") from exc
    run.tag = tag
    return run


def write_run(path, run: RunFile) -> None:
    """Scores are written with fixed precision for byte-stable output."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, pid, rank, score in run.rows:
            fh.write(f"{qid} Q0 {pid} {rank} {score:.6f} {run.tag}\n")


@dataclass
class RerankExample:
    """One query with its candidate passages and graded labels."""

    query_id: str
    query_text: str
    candidates: list[tuple[str, str, int]]  # (passage id, text, retrieval rank)
    labels: dict[str, int] = field(default_factory=dict)

    def label(self, pid: str) -> int:
        return self.labels.get(pid, 0)

    def positives(self) -> list[str]:
        return [pid for pid, _, _ in self.candidates if self.label(pid) >= 1]

    def negatives(self) -> list[str]:
        return [pid for pid, _, _ in self.candidates if self.label(pid) == 0]

    def text_of(self, pid: str) -> str:
        for cand_pid, text, _ in self.candidates:
            if cand_pid == pid:
                return text
        raise KeyError(pid)


def load_examples(
    queries: dict[str, str],
    collection: dict[str, str],
    candidates: RunFile,
    qrels: dict[str, dict[str, int]] | None = None,
) -> list[RerankExample]:
    """Join queries, passage texts, a candidate run, and labels.

    Candidate ids must be unique per query and resolvable in the
    collection; unjudged candidates get label 0.
    """
    from .errors import InputError

    examples = []
    per_query = candidates.by_query()
    for qid in queries:
        if qid not in per_query:
            continue
        seen: set[str] = set()
        cands: list[tuple[str, str, int]] = []
        for pid, rank, _ in per_query[qid]:
            if pid in seen:
                raise InputError(f"duplicate candidate {pid} for query {qid}")
            seen.add(pid)
            if pid not in collection:
                raise InputError(f"candidate {pid} missing from collection")
            cands.append((pid, collection[pid], rank))
        labels = dict((qrels or {}).get(qid, {}))
        examples.append(
            RerankExample(
                query_id=qid, query_text=queries[qid], candidates=cands, labels=labels
            )
        )
    return examples
