import pytest

from kgrerank.errors import InputError, ParseError
from kgrerank.trec import (
    RunFile,
    load_examples,
    read_qrels,
    read_run,
    read_tsv_texts,
    write_qrels,
    write_run,
    write_tsv_texts,
)


class TestRunIO:
    def sample_run(self):
        run = RunFile(tag="t1")
        run.rows = [
            ("q1", "p2", 1, 0.9), ("q1", "p1", 2, 0.5),
            ("q2", "p3", 1, 0.25),
        ]
        return run

    def test_round_trip_identity(self, tmp_path):
        path = tmp_path / "run.trec"
        run = self.sample_run()
        write_run(path, run)
        loaded = read_run(path)
        assert loaded.rows == run.rows
        assert loaded.tag == "t1"
        write_run(tmp_path / "again.trec", loaded)
        assert (tmp_path / "again.trec").read_bytes() == path.read_bytes()

    def test_four_column_row_rejected(self, tmp_path):
        path = tmp_path / "run.trec"
        path.write_text("q1 Q0 p1 1\n", encoding="utf-8")
        with pytest.raises(ParseError, match=":1:"):
            read_run(path)

    def test_validate_catches_bad_ranks(self):
        run = RunFile()
        run.rows = [("q1", "p1", 2, 0.9)]
        with pytest.raises(ParseError):
            run.validate()

    def test_validate_catches_increasing_scores(self):
        run = RunFile()
        run.rows = [("q1", "p1", 1, 0.1), ("q1", "p2", 2, 0.9)]
        with pytest.raises(ParseError):
            run.validate()


class TestQrelsIO:
    def test_round_trip_and_grades(self, tmp_path):
        path = tmp_path / "qrels.txt"
        qrels = {"q1": {"p1": 2, "p2": 0}, "q2": {"p3": 1}}
        write_qrels(path, qrels)
        assert read_qrels(path) == qrels

    def test_graded_label_preserved(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 p9 2\n", encoding="utf-8")
        assert read_qrels(path)["q1"]["p9"] == 2

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 p9\n", encoding="utf-8")
        with pytest.raises(ParseError, match=":1:"):
            read_qrels(path)


class TestTsvIO:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "queries.tsv"
        items = {"q1": "what causes rain", "q2": "tallest mountain"}
        write_tsv_texts(path, items)
        assert read_tsv_texts(path) == items

    def test_missing_tab(self, tmp_path):
        path = tmp_path / "queries.tsv"
        path.write_text("q1 no tab here\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_tsv_texts(path)

    def test_text_may_contain_tabs(self, tmp_path):
        path = tmp_path / "x.tsv"
        path.write_text("q1\ttext with\tinner tab\n", encoding="utf-8")
        assert read_tsv_texts(path)["q1"] == "text with\tinner tab"


class TestLoadExamples:
    def test_joins_candidates_with_labels(self):
        queries = {"q1": "a query"}
        collection = {"p1": "text one", "p2": "text two"}
        run = RunFile()
        run.rows = [("q1", "p1", 1, 0.9), ("q1", "p2", 2, 0.1)]
        qrels = {"q1": {"p2": 1}}
        examples = load_examples(queries, collection, run, qrels)
        assert len(examples) == 1
        ex = examples[0]
        assert ex.positives() == ["p2"]
        assert ex.negatives() == ["p1"]
        assert ex.text_of("p1") == "text one"

    def test_candidate_missing_from_collection(self):
        run = RunFile()
        run.rows = [("q1", "p1", 1, 0.9)]
        with pytest.raises(InputError, match="p1"):
            load_examples({"q1": "q"}, {}, run)

    def test_duplicate_candidate_rejected(self):
        run = RunFile()
        run.rows = [("q1", "p1", 1, 0.9), ("q1", "p1", 2, 0.5)]
        with pytest.raises(InputError, match="duplicate"):
            load_examples({"q1": "q"}, {"p1": "t"}, run)
