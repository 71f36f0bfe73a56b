import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longdoc.corpus import (
    Document,
    ManifestError,
    NeighborIndex,
    filter_question_pages,
    load_manifest,
    load_neighbors,
    manifest_lines,
    neighbor_topk,
    save_manifest,
)

from conftest import corpus_of, doc_record, make_doc, make_page, page_record, write_manifest_lines


class TestLoadManifest:
    def test_two_docs_load(self, tmp_path):
        records = [doc_record("d1", 3)] + [page_record("d1", i) for i in range(3)]
        records += [doc_record("d2", 5)] + [page_record("d2", i) for i in range(5)]
        path = tmp_path / "m.jsonl"
        write_manifest_lines(path, records)
        corpus = load_manifest(path)
        assert len(corpus.documents) == 2
        assert corpus.page_count == 8

    def test_duplicate_doc_id_rejected(self, tmp_path):
        records = [doc_record("d1", 1), page_record("d1", 0), doc_record("d1", 1)]
        path = tmp_path / "m.jsonl"
        write_manifest_lines(path, records)
        with pytest.raises(ManifestError, match="duplicate doc_id"):
            load_manifest(path)

    def test_page_index_gap_names_document(self, tmp_path):
        records = [doc_record("d1", 2), page_record("d1", 0), page_record("d1", 2)]
        path = tmp_path / "m.jsonl"
        write_manifest_lines(path, records)
        with pytest.raises(ManifestError, match="d1"):
            load_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "nope.jsonl")

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"kind": "doc", "doc_id": "d1", "source_url": "u", "category": "c", "language": "en", "page_count": 1}\nnot json\n')
        with pytest.raises(ManifestError, match="line 2"):
            load_manifest(path)

    def test_page_before_header_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest_lines(path, [page_record("d1", 0)])
        with pytest.raises(ManifestError, match="precedes doc header"):
            load_manifest(path)

    def test_page_count_mismatch(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest_lines(path, [doc_record("d1", 3), page_record("d1", 0)])
        with pytest.raises(ManifestError, match="claims 3 pages"):
            load_manifest(path)

    def test_duplicate_page_id(self, tmp_path):
        bad = page_record("d1", 1, page_id="d1_p000")
        path = tmp_path / "m.jsonl"
        write_manifest_lines(path, [doc_record("d1", 2), page_record("d1", 0), bad])
        with pytest.raises(ManifestError, match="duplicate page_id"):
            load_manifest(path)

    def test_canonical_round_trip_is_byte_identical(self, tmp_path):
        records = [doc_record("d2", 2)] + [page_record("d2", i) for i in range(2)]
        records += [doc_record("d1", 1), page_record("d1", 0)]
        raw = tmp_path / "raw.jsonl"
        write_manifest_lines(raw, records)

        first = tmp_path / "c1.jsonl"
        save_manifest(load_manifest(raw), first)
        second = tmp_path / "c2.jsonl"
        save_manifest(load_manifest(first), second)
        assert first.read_bytes() == second.read_bytes()


class TestFilterQuestionPages:
    def test_word_count_boundary(self):
        doc = Document(
            doc_id="d", source_url="u", category="c", language="en",
            pages=(
                make_page("d", 0, word_count=100),
                make_page("d", 1, word_count=101),
                make_page("d", 2, word_count=500, content_kind="table_of_contents"),
                make_page("d", 3, word_count=500, content_kind="bibliography"),
            ),
        )
        kept = filter_question_pages(corpus_of(doc))
        assert kept == {"d_p001"}

    def test_invariant_under_page_reordering(self):
        doc = make_doc("d", 6)
        base = filter_question_pages(corpus_of(doc))
        shuffled_pages = list(doc.pages)
        random.Random(3).shuffle(shuffled_pages)
        # Reassign contiguous indices so the document stays valid.
        reindexed = tuple(
            make_page("d", i, word_count=p.word_count, content_kind=p.content_kind)
            for i, p in enumerate(shuffled_pages)
        )
        doc2 = Document(doc_id="d", source_url="u", category="c", language="en", pages=reindexed)
        assert filter_question_pages(corpus_of(doc2)) == base


def build_index(n: int = 128, seed: int = 5) -> tuple[NeighborIndex, list[tuple[str, float]]]:
    rng = random.Random(seed)
    pairs = [(f"n{i:03d}", round(rng.uniform(-1, 1), 6)) for i in range(n)]
    shuffled = list(pairs)
    rng.shuffle(shuffled)
    index = NeighborIndex.from_records([("query", shuffled)])
    return index, pairs


class TestNeighborTopk:
    def test_top3_any(self):
        index, pairs = build_index()
        expected = sorted(pairs, key=lambda p: (-p[1], p[0]))[:3]
        got = neighbor_topk(index, "query", 3, "any")
        assert [(n.page_id, n.similarity) for n in got] == expected

    def test_k_clamped_to_available(self):
        index, _ = build_index()
        assert len(neighbor_topk(index, "query", 200, "any")) == 128

    def test_outside_band_ranks_33_to_37(self):
        # Brute-force oracle: independent re-sort of the fixture similarities.
        index, pairs = build_index(seed=11)
        ranked = sorted(pairs, key=lambda p: (-p[1], p[0]))
        expected = ranked[32:37]
        got = neighbor_topk(index, "query", 5, "outside_first_32")
        assert [(n.page_id, n.similarity) for n in got] == expected

    def test_within_band_is_first_32(self):
        index, pairs = build_index(seed=2)
        ranked = sorted(pairs, key=lambda p: (-p[1], p[0]))
        got = neighbor_topk(index, "query", 32, "within_first_32")
        assert [(n.page_id, n.similarity) for n in got] == ranked[:32]

    def test_unknown_page(self):
        index, _ = build_index()
        with pytest.raises(KeyError):
            neighbor_topk(index, "missing", 3)

    def test_negative_k(self):
        index, _ = build_index()
        with pytest.raises(ValueError):
            neighbor_topk(index, "query", -1)

    @given(st.integers(0, 64), st.integers(0, 64))
    @settings(max_examples=40, deadline=None)
    def test_prefix_property(self, k1, k2):
        index, _ = build_index(seed=9)
        k1, k2 = min(k1, k2), max(k1, k2)
        short = neighbor_topk(index, "query", k1, "any")
        long = neighbor_topk(index, "query", k2, "any")
        assert long[: len(short)] == short

    def test_ties_broken_by_ascending_page_id(self):
        index = NeighborIndex.from_records([
            ("q", [("zz", 0.5), ("aa", 0.5), ("mm", 0.9)]),
        ])
        got = [n.page_id for n in neighbor_topk(index, "q", 3)]
        assert got == ["mm", "aa", "zz"]

    def test_self_reference_rejected(self):
        with pytest.raises(ManifestError, match="itself"):
            NeighborIndex.from_records([("q", [("q", 0.3)])])

    def test_similarity_range_enforced(self):
        with pytest.raises(ManifestError, match="similarity"):
            NeighborIndex.from_records([("q", [("x", 1.5)])])

    def test_cap_enforced(self):
        pairs = [(f"n{i}", 0.1) for i in range(129)]
        with pytest.raises(ManifestError, match="cap"):
            NeighborIndex.from_records([("q", pairs)])


def test_neighbor_file_round_trip(tmp_path):
    path = tmp_path / "n.jsonl"
    path.write_text('{"page_id": "p1", "neighbors": [["p2", 0.9], ["p3", 0.4]]}\n')
    index = load_neighbors(path)
    assert [n.page_id for n in index.neighbors("p1")] == ["p2", "p3"]
